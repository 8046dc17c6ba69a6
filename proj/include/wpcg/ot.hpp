#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "wpcg/core.hpp"

namespace wpcg {

inline constexpr std::size_t kDefaultAssignmentCap = 4096;

// Optimal transport plan between two equal-weight, equal-size ensembles:
// row i of the first ensemble is sent to row assignment[i] of the second.
struct Coupling {
  std::vector<std::size_t> assignment;

  bool is_permutation() const;
};

// Minimum-cost perfect matching on a square cost matrix (shortest augmenting
// paths with potentials, O(n^3)). Returns the column assigned to each row.
std::vector<std::size_t> solve_assignment(const Matrix& cost);

// Exact W2 between equal-count 1-D ensembles by monotone rearrangement.
double w2_1d(const ParticleEnsemble& a, const ParticleEnsemble& b);

// Exact W2 and an optimal coupling via the assignment problem on squared
// Euclidean costs. Throws if counts differ or exceed `cap`.
std::pair<double, Coupling> w2_assignment(const ParticleEnsemble& a, const ParticleEnsemble& b,
                                          std::size_t cap = kDefaultAssignmentCap);

// W2^2 between product measures from the blockwise squared distances.
double product_w2_squared(std::span<const double> per_block);

struct W2Options {
  std::size_t cap = kDefaultAssignmentCap;
  std::uint64_t subsample_seed = 0x77325eedULL;
};

struct W2Result {
  double distance = 0.0;
  // True when the ensembles were subsampled to `cap` before matching.
  bool approximate = false;
};

// W2 with the cheapest exact method for the shape, falling back to i.i.d.
// subsampling to the cap for large ensembles.
W2Result w2_distance(const ParticleEnsemble& a, const ParticleEnsemble& b, const W2Options& options = {});

// W2^2 from an ensemble to the point mass at `point`.
double w2_squared_to_point(const ParticleEnsemble& a, std::span<const double> point);

}  // namespace wpcg
