#include "wpcg/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

#include "wpcg/kde.hpp"
#include "wpcg/proximal_steps.hpp"
#include "wpcg/rng.hpp"

namespace wpcg {

namespace {

// Companion indices shared across particles: tuples[r][i] is the particle of
// block i used in tuple r.
std::vector<std::vector<std::size_t>> shared_companions(const ProblemSpec& problem, const BlockState& state,
                                                        std::size_t block, const FirstVariationOptions& options) {
  const std::size_t count = state.count();
  const std::size_t n = std::clamp<std::size_t>(options.companions, 1, count);
  Engine engine(options.seed);
  std::vector<std::vector<std::size_t>> perms(problem.m);
  for (std::size_t i = 0; i < problem.m; ++i) {
    if (i == block) continue;
    perms[i].resize(count);
    std::iota(perms[i].begin(), perms[i].end(), std::size_t{0});
    std::shuffle(perms[i].begin(), perms[i].end(), engine);
  }
  std::vector<std::vector<std::size_t>> tuples(n, std::vector<std::size_t>(problem.m, 0));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < problem.m; ++i) tuples[r][i] = i == block ? 0 : perms[i][r];
  }
  return tuples;
}

void write_companions(const ProblemSpec& problem, const BlockState& state, std::size_t block,
                      const std::vector<std::size_t>& tuple, std::span<double> point) {
  std::size_t offset = 0;
  for (std::size_t i = 0; i < problem.m; ++i) {
    if (i != block) {
      const auto src = state.blocks[i].particle(tuple[i]);
      std::copy(src.begin(), src.end(), point.begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += problem.dims[i];
  }
}

}  // namespace

Vector first_variation(const ProblemSpec& problem, const BlockState& state, std::size_t block,
                       const KdeConfig& kde, const FirstVariationOptions& options) {
  validate_state(problem, state);
  const auto& ensemble = state.blocks[block];
  const std::size_t count = ensemble.count();
  const std::size_t d = ensemble.dim();
  const std::size_t offset = problem.offset(block);
  const auto tuples = shared_companions(problem, state, block, options);

  Vector phi = Vector::Zero(static_cast<Eigen::Index>(count));
  std::vector<double> point(problem.total_dim());
  for (const auto& tuple : tuples) {
    write_companions(problem, state, block, tuple, point);
    for (std::size_t b = 0; b < count; ++b) {
      const auto x = ensemble.particle(b);
      std::copy(x.begin(), x.end(), point.begin() + static_cast<std::ptrdiff_t>(offset));
      phi(static_cast<Eigen::Index>(b)) += problem.potential.value(point);
    }
  }
  phi /= static_cast<double>(tuples.size());

  const auto& entropy = problem.entropies[block];
  if (entropy.active()) {
    const Kde density(ensemble, kde);
    for (std::size_t b = 0; b < count; ++b) {
      double h_prime = 0.0;
      if (entropy.kind == EntropySpec::Kind::NegSelfEntropy) {
        h_prime = entropy.coefficient * (density.log_density(ensemble.particle(b)) + 1.0);
      } else {
        h_prime = entropy.derivative(density.density(ensemble.particle(b)));
      }
      phi(static_cast<Eigen::Index>(b)) += h_prime;
    }
  }

  const auto& inter = problem.interactions[block];
  if (inter.active()) {
    for (std::size_t b = 0; b < count; ++b) {
      double sum = 0.0;
      for (std::size_t c = 0; c < count; ++c) {
        sum += inter.kernel(ensemble.particle(b), ensemble.particle(c)) +
               inter.kernel(ensemble.particle(c), ensemble.particle(b));
      }
      phi(static_cast<Eigen::Index>(b)) += sum / static_cast<double>(count);
    }
  }
  (void)d;
  return phi;
}

double first_variation_variance(const ProblemSpec& problem, const BlockState& state, std::size_t block,
                                const KdeConfig& kde, const FirstVariationOptions& options) {
  const Vector phi = first_variation(problem, state, block, kde, options);
  if (phi.size() < 2) return 0.0;
  const double mean = phi.mean();
  return (phi.array() - mean).square().sum() / static_cast<double>(phi.size() - 1);
}

FocResidual foc_residual(const ProblemSpec& problem, const BlockState& before, const ParticleEnsemble& after,
                         std::size_t block, double tau, const KdeConfig& kde,
                         const FirstVariationOptions& options) {
  validate_state(problem, before);
  const auto& old_block = before.blocks[block];
  if (after.count() != old_block.count() || after.dim() != old_block.dim()) {
    throw Error("foc_residual needs a particle-wise correspondence between old and new ensembles");
  }
  const std::size_t count = after.count();
  const std::size_t offset = problem.offset(block);
  const auto d = static_cast<Eigen::Index>(after.dim());
  const auto tuples = shared_companions(problem, before, block, options);

  Matrix grad = Matrix::Zero(static_cast<Eigen::Index>(count), d);
  std::vector<double> point(problem.total_dim());
  for (const auto& tuple : tuples) {
    write_companions(problem, before, block, tuple, point);
    for (std::size_t b = 0; b < count; ++b) {
      const auto x = after.particle(b);
      std::copy(x.begin(), x.end(), point.begin() + static_cast<std::ptrdiff_t>(offset));
      grad.row(static_cast<Eigen::Index>(b)) += problem.potential.block_gradient(block, point).transpose();
    }
  }
  grad /= static_cast<double>(tuples.size());

  const auto& entropy = problem.entropies[block];
  if (entropy.active()) {
    const Kde density(after, kde);
    for (std::size_t b = 0; b < count; ++b) {
      const auto x = after.particle(b);
      Vector g;
      if (entropy.kind == EntropySpec::Kind::NegSelfEntropy) {
        g = entropy.coefficient * density.score(x);
      } else {
        const double n = entropy.exponent;
        g = entropy.coefficient * n * (n - 1.0) * std::pow(density.density(x), n - 2.0) *
            density.density_gradient(x);
      }
      grad.row(static_cast<Eigen::Index>(b)) += g.transpose();
    }
  }
  grad += interaction_gradients(problem.interactions[block], after.points());

  FocResidual out;
  out.field = (old_block.points() - after.points()) - tau * grad;
  out.norm = std::sqrt(out.field.rowwise().squaredNorm().mean());
  return out;
}

SlopeFit rate_slope(std::span<const double> k, std::span<const double> values) {
  if (k.size() != values.size()) throw ShapeError("rate_slope needs matching k and value sequences");
  if (values.size() < 5) throw Error("rate_slope needs at least 5 points");
  for (double v : values) {
    if (!(v > 0.0)) {
      throw Error("rate_slope needs positive values; for sublinear decay use a polynomial fit of log(value) against log(k)");
    }
  }
  const auto n = static_cast<double>(values.size());
  double mk = 0.0, my = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    mk += k[i];
    my += std::log(values[i]);
  }
  mk /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double dx = k[i] - mk;
    const double dy = std::log(values[i]) - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  SlopeFit fit;
  fit.slope = sxy / sxx;
  const double ss_res = syy - fit.slope * sxy;
  fit.r_squared = syy > 0.0 ? 1.0 - std::max(ss_res, 0.0) / syy : 1.0;
  return fit;
}

SlopeFit rate_slope(std::span<const RunRecord> records, const RecordField& field) {
  std::vector<double> k, values;
  for (const auto& r : records) {
    const double v = field(r);
    if (std::isnan(v)) continue;
    k.push_back(static_cast<double>(r.k));
    values.push_back(v);
  }
  return rate_slope(k, values);
}

std::vector<double> w2sq_to_reference(const BlockState& state, const BlockState& reference,
                                      const W2Options& options) {
  if (state.blocks.size() != reference.blocks.size()) throw ShapeError("reference has a different block count");
  std::vector<double> out;
  out.reserve(state.blocks.size());
  for (std::size_t j = 0; j < state.blocks.size(); ++j) {
    const auto& ref = reference.blocks[j];
    if (ref.count() == 1) {
      out.push_back(w2_squared_to_point(state.blocks[j], ref.particle(0)));
    } else {
      const double w = w2_distance(state.blocks[j], ref, options).distance;
      out.push_back(w * w);
    }
  }
  return out;
}

ParticleEnsemble gaussian_quantile_ensemble(std::size_t count, double variance) {
  if (count < 1) throw Error("quantile ensemble needs at least one point");
  if (!(variance > 0.0)) throw Error("variance must be positive");
  const boost::math::normal_distribution<double> normal(0.0, std::sqrt(variance));
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    values[i] = boost::math::quantile(normal, (static_cast<double>(i) + 0.5) / static_cast<double>(count));
  }
  return ParticleEnsemble::scalar(values);
}

}  // namespace wpcg
