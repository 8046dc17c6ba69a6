// One PASS/FAIL line per acceptance criterion. Optional arguments select
// criterion numbers; exit status is non-zero when any selected one fails.
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "wpcg/acceptance.hpp"

int main(int argc, char** argv) {
  std::vector<wpcg::acceptance::Criterion> selected;
  for (int i = 1; i < argc; ++i) {
    const int id = std::atoi(argv[i]);
    selected.push_back([id] { return wpcg::acceptance::criterion(id); });
  }
  if (selected.empty()) {
    for (int id = 1; id <= wpcg::acceptance::kCriterionCount; ++id) {
      selected.push_back([id] { return wpcg::acceptance::criterion(id); });
    }
  }
  return wpcg::acceptance::report(selected, std::cout) ? 0 : 1;
}
