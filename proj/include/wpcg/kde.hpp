#pragma once

#include <span>

#include "wpcg/core.hpp"

namespace wpcg {

// Silverman's rule h = s * (4 / ((d + 2) B))^(1 / (d + 4)), with s the mean
// per-coordinate sample standard deviation. Throws when h is not positive.
double silverman_bandwidth(const ParticleEnsemble& points);

double resolve_bandwidth(const ParticleEnsemble& points, const KdeConfig& cfg);

// Gaussian kernel density estimate over a fixed ensemble.
class Kde {
 public:
  Kde(const ParticleEnsemble& points, const KdeConfig& cfg);

  double bandwidth() const { return h_; }

  double density(std::span<const double> query) const;
  // log density via log-sum-exp; finite far into the tails.
  double log_density(std::span<const double> query) const;
  // Gradient of the density.
  Vector density_gradient(std::span<const double> query) const;
  // Gradient of the log density (the score).
  Vector score(std::span<const double> query) const;

 private:
  Matrix points_;
  double h_;
  double log_norm_;  // log of (2 pi h^2)^(-d/2) / B
};

double kde_density(const ParticleEnsemble& points, const KdeConfig& cfg,
                   std::span<const double> query);

}  // namespace wpcg
