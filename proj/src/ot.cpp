#include "wpcg/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "wpcg/rng.hpp"

namespace wpcg {

bool Coupling::is_permutation() const {
  std::vector<bool> seen(assignment.size(), false);
  for (std::size_t j : assignment) {
    if (j >= assignment.size() || seen[j]) return false;
    seen[j] = true;
  }
  return true;
}

std::vector<std::size_t> solve_assignment(const Matrix& cost) {
  if (cost.rows() != cost.cols()) throw ShapeError("assignment cost matrix must be square");
  const auto n = static_cast<std::size_t>(cost.rows());
  if (n == 0) return {};
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // Potentials u (rows), v (columns); way[] stores the alternating path.
  // Index 0 is a virtual column used as the source of each augmentation.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t col0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[col0] = true;
      const std::size_t i0 = match[col0];
      double delta = kInf;
      std::size_t col1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double reduced = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) -
                               u[i0] - v[j];
        if (reduced < minv[j]) {
          minv[j] = reduced;
          way[j] = col0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          col1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }

  std::vector<std::size_t> assignment(n);
  for (std::size_t j = 1; j <= n; ++j) assignment[match[j] - 1] = j - 1;
  return assignment;
}

double w2_1d(const ParticleEnsemble& a, const ParticleEnsemble& b) {
  if (a.dim() != 1 || b.dim() != 1) throw ShapeError("w2_1d requires one-dimensional ensembles");
  if (a.count() != b.count()) throw ShapeError("w2_1d requires equal particle counts");
  std::vector<double> xs(a.points().data(), a.points().data() + a.count());
  std::vector<double> ys(b.points().data(), b.points().data() + b.count());
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) sum += (xs[i] - ys[i]) * (xs[i] - ys[i]);
  return std::sqrt(sum / static_cast<double>(xs.size()));
}

std::pair<double, Coupling> w2_assignment(const ParticleEnsemble& a, const ParticleEnsemble& b,
                                          std::size_t cap) {
  if (a.count() != b.count()) throw ShapeError("w2_assignment requires equal particle counts");
  if (a.dim() != b.dim()) throw ShapeError("w2_assignment requires equal dimensions");
  if (a.count() > cap) {
    throw Error(fmt::format("w2_assignment: {} particles exceeds the cap of {}", a.count(), cap));
  }
  const auto n = static_cast<Eigen::Index>(a.count());
  Matrix cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) cost(i, j) = (a.points().row(i) - b.points().row(j)).squaredNorm();
  }
  Coupling coupling{solve_assignment(cost)};
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) total += cost(i, static_cast<Eigen::Index>(coupling.assignment[static_cast<std::size_t>(i)]));
  return {std::sqrt(std::max(total, 0.0) / static_cast<double>(n)), std::move(coupling)};
}

double product_w2_squared(std::span<const double> per_block) {
  double total = 0.0;
  for (double w : per_block) {
    if (w < 0.0) throw Error("blockwise squared W2 entries must be non-negative");
    total += w;
  }
  return total;
}

namespace {

ParticleEnsemble subsample(const ParticleEnsemble& x, std::size_t cap, Engine& engine) {
  std::uniform_int_distribution<std::size_t> pick(0, x.count() - 1);
  Matrix points(static_cast<Eigen::Index>(cap), static_cast<Eigen::Index>(x.dim()));
  for (std::size_t i = 0; i < cap; ++i) points.row(static_cast<Eigen::Index>(i)) = x.points().row(static_cast<Eigen::Index>(pick(engine)));
  return ParticleEnsemble(std::move(points));
}

}  // namespace

W2Result w2_distance(const ParticleEnsemble& a, const ParticleEnsemble& b, const W2Options& options) {
  if (a.dim() == 1) return {w2_1d(a, b), false};
  if (a.count() <= options.cap) return {w2_assignment(a, b, options.cap).first, false};
  if (a.count() != b.count()) throw ShapeError("w2_distance requires equal particle counts");
  Engine engine(options.subsample_seed);
  const auto sa = subsample(a, options.cap, engine);
  const auto sb = subsample(b, options.cap, engine);
  return {w2_assignment(sa, sb, options.cap).first, true};
}

double w2_squared_to_point(const ParticleEnsemble& a, std::span<const double> point) {
  if (point.size() != a.dim()) throw ShapeError("point dimension does not match ensemble");
  const Eigen::Map<const Eigen::RowVectorXd> p(point.data(), static_cast<Eigen::Index>(point.size()));
  return (a.points().rowwise() - p).rowwise().squaredNorm().mean();
}

}  // namespace wpcg
