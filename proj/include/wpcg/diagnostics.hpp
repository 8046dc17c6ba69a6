#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wpcg/core.hpp"
#include "wpcg/ot.hpp"
#include "wpcg/records.hpp"

namespace wpcg {

struct FirstVariationOptions {
  // Companion tuples shared by all particles; terms of V that do not depend
  // on the block then shift every particle equally and drop out of the
  // variance.
  std::size_t companions = 128;
  std::uint64_t seed = 0;
};

// Values of the first variation dF/drho_j at each particle of block j.
Vector first_variation(const ProblemSpec& problem, const BlockState& state, std::size_t block,
                       const KdeConfig& kde, const FirstVariationOptions& options = {});

// Sample variance over particles of the first variation; zero exactly when
// the first variation is constant on the ensemble.
double first_variation_variance(const ProblemSpec& problem, const BlockState& state, std::size_t block,
                                const KdeConfig& kde, const FirstVariationOptions& options = {});

struct FocResidual {
  Matrix field;  // B x d_j, eta at each new particle
  double norm = 0.0;  // sqrt(mean_b |eta_b|^2)
};

// First-order optimality residual of a block proximal step. `before` is the
// state the step was solved against (block j at its old position, the other
// blocks as the solver saw them); `after` is the new block j with particle b
// moved from row b of the old block.
FocResidual foc_residual(const ProblemSpec& problem, const BlockState& before, const ParticleEnsemble& after,
                         std::size_t block, double tau, const KdeConfig& kde,
                         const FirstVariationOptions& options = {});

struct SlopeFit {
  double slope = 0.0;
  double r_squared = 0.0;
};

// Least-squares fit of log(value) against k.
SlopeFit rate_slope(std::span<const double> k, std::span<const double> values);

using RecordField = std::function<double(const RunRecord&)>;
SlopeFit rate_slope(std::span<const RunRecord> records, const RecordField& field);

// Blockwise W2^2 from state to reference. A reference block with a single
// particle is a point mass; otherwise counts must match.
std::vector<double> w2sq_to_reference(const BlockState& state, const BlockState& reference,
                                      const W2Options& options = {});

// Quantile grid for N(0, variance): points sqrt(variance) * Phi^{-1}((i + 1/2) / B).
ParticleEnsemble gaussian_quantile_ensemble(std::size_t count, double variance);

}  // namespace wpcg
