#pragma once

#include <optional>
#include <span>
#include <vector>

#include "wpcg/core.hpp"
#include "wpcg/rng.hpp"
#include "wpcg/transport_map.hpp"

namespace wpcg {

// Raised by the FA inner loop when the map stops being injective at some
// particle and step halving did not recover.
class NonInjectiveMapError : public Error {
 public:
  using Error::Error;
};

// Companion particles from the other blocks used to estimate the marginal
// potential grad_j int V d rho_{-j}. Each companion block gets a random
// permutation; draw r for particle b uses index perm[(b + r) mod B].
class CompanionPlan {
 public:
  CompanionPlan(const ProblemSpec& problem, const BlockState& context, std::size_t block,
                std::size_t draws, Engine& engine);

  std::size_t block() const { return block_; }
  std::size_t draws() const { return draws_; }

  // Writes the companion coordinates for (b, r) into `point`, leaving the
  // slot of the updated block untouched.
  void fill(std::size_t b, std::size_t r, std::span<double> point) const;

 private:
  const ProblemSpec* problem_;
  const BlockState* context_;
  std::size_t block_;
  std::size_t draws_;
  std::vector<std::vector<std::size_t>> perms_;
};

// Estimated marginal gradient at each row of `positions` (B x d_j); row b is
// paired with companion draws of particle index b.
Matrix marginal_gradients(const ProblemSpec& problem, const CompanionPlan& plan, const Matrix& positions);

// (1/B) sum_b' [grad1 W(x_b, x_b') + grad2 W(x_b', x_b)] for every row of `points`.
Matrix interaction_gradients(const InteractionSpec& interaction, const Matrix& points);

// One Euler-Maruyama step of the mean-field Langevin dynamics for block j.
ParticleEnsemble sde_block_step(const ProblemSpec& problem, const BlockState& state, std::size_t block,
                                double tau, Engine& engine, std::size_t n_grad = 1);

// Empirical FA subproblem for block j: the loss of a transport map on the
// current block ensemble, with companions and KDE densities frozen.
class FaObjective {
 public:
  FaObjective(const ProblemSpec& problem, const BlockState& state, std::size_t block, double tau,
              const FaConfig& config, const CompanionPlan& plan);

  const Matrix& inputs() const { return inputs_; }

  // Loss value; also writes the parameter gradient when `gradient` is given.
  // With need_value = false only the gradient is computed (value returns 0).
  // Throws NonInjectiveMapError when some Jacobian determinant is <= 0.
  double evaluate(const TransportMapModel& model, Vector* gradient, bool need_value = true) const;

 private:
  const ProblemSpec& problem_;
  const CompanionPlan& plan_;
  std::size_t block_;
  double tau_;
  Matrix inputs_;
  EntropySpec entropy_;
  const InteractionSpec& interaction_;
  std::vector<double> log_density_;  // log rho_kde(X_b) for Power entropy
};

struct FaStepResult {
  ParticleEnsemble ensemble;
  TransportMapModel map;
  double inner_loss = 0.0;
  std::size_t halvings = 0;
};

// Fits a residual transport map to the block-j proximal subproblem with a
// fixed budget of Adam steps and returns the pushforward ensemble. `warm`
// is the previous map for this block, if any.
FaStepResult fa_block_step(const ProblemSpec& problem, const BlockState& state, std::size_t block,
                           double tau, const FaConfig& config, Engine& engine,
                           const std::optional<TransportMapModel>& warm = std::nullopt,
                           std::size_t n_grad = 1);

// Closed-form proximal step for the registered quadratic family with point
// masses: x_j <- (x_j / tau - alpha s_{-j}) / (1 + 1 / tau).
ParticleEnsemble euclidean_prox_step(const ProblemSpec& problem, const BlockState& state, std::size_t block,
                                     double tau);

}  // namespace wpcg
