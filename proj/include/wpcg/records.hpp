#pragma once

#include <cstddef>
#include <limits>
#include <vector>

namespace wpcg {

inline constexpr double kNotRecorded = std::numeric_limits<double>::quiet_NaN();

// Diagnostics of one outer iteration. Fields that were not computed for
// this iteration hold NaN.
struct RunRecord {
  std::size_t k = 0;
  double objective = kNotRecorded;
  std::vector<double> w2sq_block;
  double w2sq_total = kNotRecorded;
  std::vector<double> fv_var_block;
  std::vector<double> foc_block;
  double wall_ms = 0.0;
};

}  // namespace wpcg
