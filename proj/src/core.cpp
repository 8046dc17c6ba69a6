#include "wpcg/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "wpcg/kde.hpp"
#include "wpcg/rng.hpp"

namespace wpcg {

bool all_finite(const Matrix& points) { return points.allFinite(); }

ParticleEnsemble::ParticleEnsemble(Matrix points) : points_(std::move(points)) {
  if (points_.rows() < 1 || points_.cols() < 1) {
    throw ShapeError("particle ensemble must have at least one particle and one dimension");
  }
  if (!points_.allFinite()) throw NonFiniteError("particle ensemble contains non-finite coordinates");
}

ParticleEnsemble ParticleEnsemble::scalar(std::span<const double> values) {
  Matrix points(static_cast<Eigen::Index>(values.size()), 1);
  for (std::size_t b = 0; b < values.size(); ++b) points(static_cast<Eigen::Index>(b), 0) = values[b];
  return ParticleEnsemble(std::move(points));
}

ParticleEnsemble ParticleEnsemble::scalar(std::initializer_list<double> values) {
  return scalar(std::span<const double>(values.begin(), values.size()));
}

EntropySpec EntropySpec::power(int exponent, double coefficient) {
  if (exponent < 2) throw Error("power entropy exponent must be at least 2");
  return {Kind::Power, exponent, coefficient};
}

double EntropySpec::h_over_density(double density) const {
  switch (kind) {
    case Kind::None:
      return 0.0;
    case Kind::NegSelfEntropy:
      return coefficient * std::log(density);
    case Kind::Power:
      return coefficient * std::pow(density, exponent - 1);
  }
  return 0.0;
}

double EntropySpec::derivative(double density) const {
  switch (kind) {
    case Kind::None:
      return 0.0;
    case Kind::NegSelfEntropy:
      return coefficient * (std::log(density) + 1.0);
    case Kind::Power:
      return coefficient * exponent * std::pow(density, exponent - 1);
  }
  return 0.0;
}

std::size_t ProblemSpec::total_dim() const {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{0});
}

std::size_t ProblemSpec::offset(std::size_t j) const {
  return std::accumulate(dims.begin(), dims.begin() + static_cast<std::ptrdiff_t>(j), std::size_t{0});
}

std::string scheme_name(const Scheme& scheme) {
  if (std::holds_alternative<Parallel>(scheme)) return "parallel";
  if (std::holds_alternative<Sequential>(scheme)) return "sequential";
  return "random";
}

std::string solver_name(const Solver& solver) {
  if (std::holds_alternative<SdeSolver>(solver)) return "sde";
  if (std::holds_alternative<FaSolver>(solver)) return "fa";
  return "euclidean";
}

void validate_state(const ProblemSpec& problem, const BlockState& state) {
  if (state.blocks.size() != problem.m) {
    throw ShapeError(fmt::format("state has {} blocks, problem expects {}", state.blocks.size(), problem.m));
  }
  const std::size_t count = state.count();
  for (std::size_t j = 0; j < problem.m; ++j) {
    const auto& block = state.blocks[j];
    if (block.dim() != problem.dims[j]) {
      throw ShapeError(fmt::format("block {} has dimension {}, problem expects {}", j, block.dim(),
                                   problem.dims[j]));
    }
    if (block.count() != count) {
      throw ShapeError("all blocks must share the same particle count");
    }
  }
}

std::vector<double> concatenate(const ProblemSpec& problem, const BlockState& state,
                                std::span<const std::size_t> indices) {
  std::vector<double> point;
  point.reserve(problem.total_dim());
  for (std::size_t j = 0; j < problem.m; ++j) {
    const auto p = state.blocks[j].particle(indices[j]);
    point.insert(point.end(), p.begin(), p.end());
  }
  return point;
}

namespace {

// Row order sorted lexicographically, so that estimates do not depend on the
// order particles are stored in.
std::vector<std::size_t> canonical_order(const ParticleEnsemble& block) {
  std::vector<std::size_t> order(block.count());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto pa = block.particle(a);
    const auto pb = block.particle(b);
    return std::lexicographical_compare(pa.begin(), pa.end(), pb.begin(), pb.end());
  });
  return order;
}

}  // namespace

double evaluate_objective(const ProblemSpec& problem, const BlockState& state, const KdeConfig& kde,
                          const ObjectiveOptions& options) {
  validate_state(problem, state);
  const std::size_t count = state.count();
  const std::size_t n_mc = std::max<std::size_t>(options.n_mc, 1);

  std::vector<std::vector<std::size_t>> canonical;
  canonical.reserve(problem.m);
  for (const auto& block : state.blocks) canonical.push_back(canonical_order(block));

  Engine engine(options.seed);
  double potential = 0.0;
  std::vector<std::vector<std::size_t>> matched(problem.m);
  std::vector<std::size_t> indices(problem.m);
  for (std::size_t r = 0; r < n_mc; ++r) {
    for (std::size_t j = 0; j < problem.m; ++j) {
      matched[j] = canonical[j];
      if (j > 0) std::shuffle(matched[j].begin(), matched[j].end(), engine);
    }
    double sum = 0.0;
    for (std::size_t b = 0; b < count; ++b) {
      for (std::size_t j = 0; j < problem.m; ++j) indices[j] = matched[j][b];
      sum += problem.potential.value(concatenate(problem, state, indices));
    }
    potential += sum / static_cast<double>(count);
  }
  potential /= static_cast<double>(n_mc);

  double internal = 0.0;
  double interaction = 0.0;
  for (std::size_t j = 0; j < problem.m; ++j) {
    const auto& block = state.blocks[j];
    const auto& entropy = problem.entropies[j];
    if (entropy.active()) {
      const Kde density(block, kde);
      double sum = 0.0;
      for (std::size_t b = 0; b < count; ++b) {
        if (entropy.kind == EntropySpec::Kind::NegSelfEntropy) {
          sum += entropy.coefficient * density.log_density(block.particle(b));
        } else {
          sum += entropy.h_over_density(density.density(block.particle(b)));
        }
      }
      internal += sum / static_cast<double>(count);
    }
    const auto& inter = problem.interactions[j];
    if (inter.active()) {
      double sum = 0.0;
      for (std::size_t b = 0; b < count; ++b) {
        for (std::size_t c = 0; c < count; ++c) sum += inter.kernel(block.particle(b), block.particle(c));
      }
      interaction += sum / static_cast<double>(count * count);
    }
  }
  return potential + internal + interaction;
}

void validate_problem(const ProblemSpec& problem, const SchemeConfig& config) {
  if (problem.m < 1) throw ShapeError("problem must have at least one block");
  if (problem.dims.size() != problem.m || problem.entropies.size() != problem.m ||
      problem.interactions.size() != problem.m) {
    throw ShapeError("dims, entropies and interactions must each have m entries");
  }
  for (std::size_t d : problem.dims) {
    if (d < 1) throw ShapeError("block dimensions must be positive");
  }
  if (!problem.potential.value || !problem.potential.block_gradient) {
    throw Error("potential value and block gradient are required");
  }
  if (problem.potential.lipschitz_L && !(*problem.potential.lipschitz_L > 0.0)) {
    throw Error("lipschitz_L must be positive when provided");
  }
  for (const auto& e : problem.entropies) {
    if (e.kind == EntropySpec::Kind::Power && e.exponent < 2) {
      throw Error("power entropy exponent must be at least 2");
    }
  }
  for (const auto& w : problem.interactions) {
    if (w.kernel && (!w.grad1 || !w.grad2)) {
      throw Error("interaction kernel requires both argument gradients");
    }
  }
  if (problem.domain_box) {
    if (problem.domain_box->size() != problem.m) throw ShapeError("domain_box must have m entries");
    for (std::size_t j = 0; j < problem.m; ++j) {
      const auto& box = (*problem.domain_box)[j];
      if (static_cast<std::size_t>(box.lower.size()) != problem.dims[j] ||
          static_cast<std::size_t>(box.upper.size()) != problem.dims[j]) {
        throw ShapeError(fmt::format("domain_box for block {} has the wrong dimension", j));
      }
    }
  }
  if (!(config.tau > 0.0)) throw Error("step size tau must be positive");
  if (config.iterations < 1) throw Error("iteration budget must be positive");

  if (std::holds_alternative<SdeSolver>(config.solver)) {
    for (const auto& e : problem.entropies) {
      if (e.kind == EntropySpec::Kind::Power && e.active()) {
        throw Error("SDE requires negative self-entropy (or no internal energy) in every block");
      }
    }
  }
  if (std::holds_alternative<EuclideanClosedForm>(config.solver)) {
    if (!problem.quadratic_alpha) {
      throw Error("EuclideanClosedForm requires a registered quadratic problem");
    }
    for (std::size_t j = 0; j < problem.m; ++j) {
      if (problem.dims[j] != 1 || problem.entropies[j].active() || problem.interactions[j].active()) {
        throw Error("EuclideanClosedForm requires scalar blocks without entropy or interaction");
      }
    }
  }
  if (const auto* fa = std::get_if<FaSolver>(&config.solver)) {
    if (fa->fa.inner_iterations < 1) throw Error("fa.inner_iterations must be at least 1");
    if (!(fa->fa.inner_step > 0.0)) throw Error("fa.inner_step must be positive");
    for (std::size_t w : fa->fa.hidden_widths) {
      if (w < 1) throw Error("fa.hidden_widths entries must be positive");
    }
  }

  // Probe shapes at a few seeded random points.
  Engine engine(0x5eedULL);
  std::normal_distribution<double> normal;
  std::vector<double> point(problem.total_dim());
  for (int probe = 0; probe < 3; ++probe) {
    for (double& v : point) v = normal(engine);
    const double value = problem.potential.value(point);
    if (std::isnan(value)) throw Error("potential returned NaN at a probe point");
    for (std::size_t j = 0; j < problem.m; ++j) {
      const Vector g = problem.potential.block_gradient(j, point);
      if (static_cast<std::size_t>(g.size()) != problem.dims[j]) {
        throw ShapeError(fmt::format("block_gradient({}) returned length {}, expected {}", j, g.size(),
                                     problem.dims[j]));
      }
    }
  }
}

void validate_problem(const ProblemSpec& problem, const SchemeConfig& config,
                      const BlockState& initial) {
  validate_problem(problem, config);
  validate_state(problem, initial);
  if (std::holds_alternative<EuclideanClosedForm>(config.solver) && initial.count() != 1) {
    throw Error("EuclideanClosedForm requires point masses (B = 1)");
  }
}

}  // namespace wpcg
