#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace wpcg::acceptance {

struct CriterionResult {
  std::string label;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
  double budget_seconds = 0.0;
};

using Criterion = std::function<CriterionResult()>;

// Numbered acceptance criteria 1..11.
CriterionResult criterion(int id);
inline constexpr int kCriterionCount = 11;

// Reduced species run used by the species-smoke suite.
CriterionResult species_smoke();

// Suite names accepted by `wpcg verify`.
std::vector<std::string> suite_names();
// Empty when the suite is unknown.
std::vector<Criterion> suite(const std::string& name);

// Prints one PASS/FAIL line per result; returns true when all pass.
bool report(const std::vector<Criterion>& criteria, std::ostream& out);

}  // namespace wpcg::acceptance
