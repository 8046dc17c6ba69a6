#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace wpcg {

// Row-major so that a particle (one row) is a contiguous span.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when the dimensions of some input disagree with the problem.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Raised when a particle coordinate becomes NaN or infinite.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// B points in R^d: the empirical measure (1/B) sum_b delta_{X_b}.
// Always non-empty with finite coordinates.
class ParticleEnsemble {
 public:
  explicit ParticleEnsemble(Matrix points);

  // Convenience for d = 1 ensembles.
  static ParticleEnsemble scalar(std::span<const double> values);
  static ParticleEnsemble scalar(std::initializer_list<double> values);

  std::size_t count() const { return static_cast<std::size_t>(points_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(points_.cols()); }
  const Matrix& points() const { return points_; }

  std::span<const double> particle(std::size_t b) const {
    return {points_.data() + b * dim(), dim()};
  }

 private:
  Matrix points_;
};

// True when every entry of `points` is finite.
bool all_finite(const Matrix& points);

struct BlockState {
  std::vector<ParticleEnsemble> blocks;
  std::size_t iteration = 0;

  std::size_t num_blocks() const { return blocks.size(); }
  std::size_t count() const { return blocks.empty() ? 0 : blocks.front().count(); }
};

struct PotentialSpec {
  // V on the concatenated point (x_1, ..., x_m).
  std::function<double(std::span<const double>)> value;
  // Partial gradient with respect to block j at the concatenated point.
  std::function<Vector(std::size_t, std::span<const double>)> block_gradient;
  // Cross-block gradient Lipschitz constant; needed for the default random
  // batch size and the parallel step-size guard.
  std::optional<double> lipschitz_L;
};

// Internal energy density h. `coefficient` scales h (and therefore h').
struct EntropySpec {
  enum class Kind { None, NegSelfEntropy, Power };

  Kind kind = Kind::None;
  int exponent = 0;
  double coefficient = 1.0;

  static EntropySpec none() { return {}; }
  static EntropySpec neg_self_entropy(double coefficient = 1.0) {
    return {Kind::NegSelfEntropy, 0, coefficient};
  }
  static EntropySpec power(int exponent, double coefficient = 1.0);

  bool active() const { return kind != Kind::None && coefficient != 0.0; }
  // h(r) / r for r > 0: the integrand of the plug-in estimate.
  double h_over_density(double density) const;
  // h'(r).
  double derivative(double density) const;
};

struct InteractionSpec {
  using Kernel = std::function<double(std::span<const double>, std::span<const double>)>;
  // Writes the gradient with respect to one argument into `out` (length d_j).
  using Gradient =
      std::function<void(std::span<const double>, std::span<const double>, std::span<double>)>;

  Kernel kernel;
  Gradient grad1;
  Gradient grad2;

  bool active() const { return static_cast<bool>(kernel); }
};

struct Box {
  Vector lower;
  Vector upper;
};

struct ProblemSpec {
  std::string name;
  std::size_t m = 0;
  std::vector<std::size_t> dims;
  PotentialSpec potential;
  std::vector<EntropySpec> entropies;
  std::vector<InteractionSpec> interactions;
  // Optional per-block compact domain; particles are clamped into it after
  // every move when SchemeConfig::project_to_box is set.
  std::optional<std::vector<Box>> domain_box;
  // Set for V(x) = ((1-a)/2)|x|^2 + (a/2)(sum x)^2 with scalar blocks, which
  // admits the closed-form Euclidean proximal step.
  std::optional<double> quadratic_alpha;
  // Closed-form minimizer as a B-particle state, when known.
  std::function<BlockState(std::size_t count, std::uint64_t seed)> analytic_reference;
  // Non-fatal remarks from the factory (e.g. parameters outside the range
  // where convexity is known); runs surface them as warnings.
  std::vector<std::string> notes;

  std::size_t total_dim() const;
  std::size_t offset(std::size_t j) const;
};

struct KdeConfig {
  enum class Rule { Silverman, Fixed };

  Rule rule = Rule::Silverman;
  double fixed_h = 0.0;

  static KdeConfig silverman() { return {}; }
  static KdeConfig fixed(double h) { return {Rule::Fixed, h}; }
};

struct FaConfig {
  std::vector<std::size_t> hidden_widths{64, 64};
  std::size_t inner_iterations = 300;
  double inner_step = 1e-3;
  KdeConfig kde;
  bool reinit_each_step = false;
  // On warm start the output layer is multiplied by this factor, pulling the
  // previous map back toward the identity.
  double warm_start_shrink = 0.5;
};

struct Parallel {};
struct Sequential {};
struct Random {
  // 0 selects default_batch_M(m, L).
  std::size_t batch_M = 0;
};
using Scheme = std::variant<Parallel, Sequential, Random>;

struct SdeSolver {};
struct FaSolver {
  FaConfig fa;
};
struct EuclideanClosedForm {};
using Solver = std::variant<SdeSolver, FaSolver, EuclideanClosedForm>;

struct SchemeConfig {
  Scheme scheme = Parallel{};
  double tau = 0.1;
  std::size_t iterations = 1;
  std::uint64_t seed = 0;
  Solver solver = SdeSolver{};
  // Companion draws per particle in the marginal-gradient estimator.
  std::size_t n_grad = 1;
  bool project_to_box = false;
};

std::string scheme_name(const Scheme& scheme);
std::string solver_name(const Solver& solver);

struct ObjectiveOptions {
  // Independent random index matchings averaged for the potential term.
  std::size_t n_mc = 1;
  std::uint64_t seed = 0;
};

// Monte-Carlo estimate of F at `state`: potential under random index
// matchings, KDE plug-in internal energy, exact double sum for interactions.
double evaluate_objective(const ProblemSpec& problem, const BlockState& state,
                          const KdeConfig& kde, const ObjectiveOptions& options = {});

// Throws ShapeError / Error when the problem is malformed or incompatible
// with the configured solver.
void validate_problem(const ProblemSpec& problem, const SchemeConfig& config);
// Also checks the initial state, including B = 1 for the closed-form solver.
void validate_problem(const ProblemSpec& problem, const SchemeConfig& config,
                      const BlockState& initial);

// Checks state against the problem's block count and dimensions.
void validate_state(const ProblemSpec& problem, const BlockState& state);

// Concatenated point for particle b of every block (index-matched).
std::vector<double> concatenate(const ProblemSpec& problem, const BlockState& state,
                                std::span<const std::size_t> indices);

}  // namespace wpcg
