#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "wpcg/core.hpp"
#include "wpcg/rng.hpp"

namespace wpcg::test {

// V(x) = (c/2)|x|^2 over m blocks of dimension d each.
inline ProblemSpec isotropic_quadratic(std::size_t m, std::size_t d, double c, EntropySpec entropy) {
  ProblemSpec p;
  p.name = "isotropic";
  p.m = m;
  p.dims.assign(m, d);
  p.potential.value = [c](std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return 0.5 * c * s;
  };
  p.potential.block_gradient = [c, d](std::size_t j, std::span<const double> x) {
    Vector g(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i) g(static_cast<Eigen::Index>(i)) = c * x[j * d + i];
    return g;
  };
  p.potential.lipschitz_L = c;
  p.entropies.assign(m, entropy);
  p.interactions.assign(m, InteractionSpec{});
  return p;
}

// V = 0 on a single block.
inline ProblemSpec zero_problem(std::size_t d, EntropySpec entropy = EntropySpec::none()) {
  ProblemSpec p = isotropic_quadratic(1, d, 0.0, entropy);
  p.potential.lipschitz_L.reset();
  return p;
}

inline BlockState single(ParticleEnsemble e) { return BlockState{{std::move(e)}, 0}; }

inline ParticleEnsemble normal_sample(std::size_t count, std::size_t d, double std_dev, std::uint64_t seed) {
  Engine engine(seed);
  std::normal_distribution<double> n(0.0, std_dev);
  Matrix m(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(engine);
  return ParticleEnsemble(std::move(m));
}

inline double sample_variance(const ParticleEnsemble& e) {
  const auto& x = e.points();
  const double mean = x.mean();
  return (x.array() - mean).square().sum() / static_cast<double>(x.size() - 1);
}

// Central differences of f at x.
inline Vector fd_gradient(const std::function<double(std::span<const double>)>& f, std::vector<double> x,
                          double h = 1e-5) {
  Vector g(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    x[i] = x0;
    g(static_cast<Eigen::Index>(i)) = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace wpcg::test
