#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "wpcg/core.hpp"

namespace wpcg {

struct LogisticDataset {
  Eigen::MatrixXd features;  // n x p
  Vector labels;             // n entries, each 0 or 1
  double prior_variance = 4.0;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t num_features() const { return static_cast<std::size_t>(features.cols()); }

  // Headered CSV: feature columns followed by one binary label column.
  static LogisticDataset load_csv(const std::string& path, double prior_variance = 4.0);

  // X_i ~ N(0, I_p), y_i ~ Bernoulli(sigmoid(x_i' theta_star)).
  static LogisticDataset synthetic(std::size_t n, const Vector& theta_star, double prior_variance,
                                   std::uint64_t seed);
};

// Throws on an empty dataset or non-binary labels.
void validate_dataset(const LogisticDataset& data);

// Scalar blocks theta_j with the negative log posterior as V and negative
// self-entropy in every block.
ProblemSpec mfvi_problem(const LogisticDataset& data);

// Ground truth used in the synthetic replication.
Vector mfvi_default_theta_star();

enum class SpeciesKernel {
  // W_j = -(Q_j^2 / 4) arctan |x - x'|^2 (shown with the V/W pair of the
  // species experiment; also -K_jj / 2).
  Display,
  // W_j = +(Q_j^2 / 2) arctan |x - x'|^2 (used in the convexity computation).
  Convexity,
};

struct SpeciesSystem {
  static constexpr std::size_t m = 3;
  std::array<double, 3> charges{1.0, -1.0, 0.5};
  std::array<double, 3> stiffness{6.0, 7.0, 3.0};
  std::array<std::array<double, 2>, 3> centers{{{3.0, 0.0}, {-3.0, -3.0}, {3.0, 3.0}}};
  double alpha = 1.0;
  double beta = 1.0;
  bool super_quartic = false;
  SpeciesKernel kernel = SpeciesKernel::Display;
};

ProblemSpec species_problem(const SpeciesSystem& sys);

// alpha r_i - 4 Q_i^2 - |Q_i| sum_{j != i} |Q_j| for each species.
std::array<double, 3> species_convexity_margin(const SpeciesSystem& sys);

// V(x) = ((1 - alpha)/2)|x|^2 + (alpha/2)(sum_j x_j)^2 over m scalar blocks,
// registered for the closed-form Euclidean step.
ProblemSpec quadratic_product_problem(std::size_t m, double alpha);

// V(x) = sum_j (precision_j / 2)|x_j|^2 with negative self-entropy; the
// minimizer is N(0, I / precision_j) in each block.
ProblemSpec gaussian_mfvi_problem(const std::vector<std::size_t>& dims, const std::vector<double>& precisions);

// Independent N(mean, std^2 I) particles for every block.
BlockState sample_initial(const ProblemSpec& problem, std::size_t count, double mean, double std_dev,
                          std::uint64_t seed);

// Every block a copy of `values` (a point per block for scalar blocks); used
// for point-mass starts such as the Euclidean oracle.
BlockState point_state(const std::vector<double>& values);

}  // namespace wpcg
