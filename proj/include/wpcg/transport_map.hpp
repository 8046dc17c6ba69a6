#pragma once

#include <span>
#include <vector>

#include "wpcg/core.hpp"
#include "wpcg/rng.hpp"

namespace wpcg {

// Residual map T(x) = x + g((x - shift) / scale), where g is a feedforward
// network with tanh hidden layers and a linear output layer. layer_sizes is
// {d, hidden..., d}; with no hidden layers g is affine.
//
// All weights and biases live in one flat parameter vector so that the
// optimizer can treat them uniformly. Layer l has a column-major weight
// matrix of shape layer_sizes[l+1] x layer_sizes[l] followed by its bias.
class TransportMapModel {
 public:
  using WeightMap = Eigen::Map<Eigen::MatrixXd>;
  using ConstWeightMap = Eigen::Map<const Eigen::MatrixXd>;
  using BiasMap = Eigen::Map<Eigen::VectorXd>;
  using ConstBiasMap = Eigen::Map<const Eigen::VectorXd>;

  // All parameters zero: the identity map.
  explicit TransportMapModel(std::vector<std::size_t> layer_sizes);

  // Xavier-uniform hidden layers and a zero output layer, so the map starts
  // at the identity.
  static TransportMapModel identity_init(std::size_t dim, const std::vector<std::size_t>& hidden_widths,
                                         Engine& engine);

  std::size_t dim() const { return sizes_.front(); }
  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
  std::size_t num_layers() const { return sizes_.size() - 1; }
  std::size_t num_parameters() const { return static_cast<std::size_t>(params_.size()); }

  Vector& parameters() { return params_; }
  const Vector& parameters() const { return params_; }

  WeightMap weight(std::size_t layer);
  ConstWeightMap weight(std::size_t layer) const;
  BiasMap bias(std::size_t layer);
  ConstBiasMap bias(std::size_t layer) const;

  const Vector& input_shift() const { return shift_; }
  double input_scale() const { return scale_; }
  void set_input_normalization(Vector shift, double scale);

  // Multiplies the output layer by `factor` (factor 0 resets to identity).
  void shrink_output(double factor);

 private:
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> weight_offset_;
  std::vector<std::size_t> bias_offset_;
  Vector params_;
  Vector shift_;
  double scale_ = 1.0;
};

Vector map_forward(const TransportMapModel& model, std::span<const double> x);

// Dense Jacobian I + dg/dx at x.
Eigen::MatrixXd map_jacobian(const TransportMapModel& model, std::span<const double> x);

struct LogDet {
  double log_abs_det = 0.0;
  int sign = 1;
};

inline constexpr std::size_t kMaxLogDetDim = 16;

// log|det(I + dg/dx)| by LU with partial pivoting. Requires d <= 16; throws
// when the Jacobian is singular (|det| < 1e-300).
LogDet map_jacobian_logdet(const TransportMapModel& model, std::span<const double> x);

// Intermediate values of a forward pass over B particles, kept for the
// backward pass. Matrices are column-per-particle.
struct MapBatch {
  std::size_t count = 0;
  bool with_jacobian = false;
  Eigen::MatrixXd outputs;                 // d x B, T(X_b)
  std::vector<Eigen::MatrixXd> activations;  // H_0 .. H_K (H_0 normalized input)
  std::vector<Eigen::MatrixXd> slopes;       // tanh' at hidden layers 1..K
  // Jacobian chain over B*d columns (column b*d + c is direction c of particle b).
  std::vector<Eigen::MatrixXd> chain_pre;   // R_l = W_l Q_{l-1}
  std::vector<Eigen::MatrixXd> chain_post;  // Q_0 .. Q_K
  Eigen::MatrixXd jacobians;                // d x (B d), blocks I + dg/dx
};

MapBatch forward_batch(const TransportMapModel& model, const Matrix& points, bool with_jacobian);

// Gradient of a scalar loss with respect to the parameters, given the loss
// gradient with respect to every T(X_b) (d x B) and, when the batch carries
// Jacobians, with respect to every Jacobian block (d x B d, may be empty).
Vector backward_batch(const TransportMapModel& model, const MapBatch& batch,
                      const Eigen::MatrixXd& grad_outputs, const Eigen::MatrixXd& grad_jacobians);

}  // namespace wpcg
