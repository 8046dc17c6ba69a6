#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "wpcg/config.hpp"
#include "wpcg/records.hpp"

namespace wpcg {

// Exit codes of the command-line entry points.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 1;
inline constexpr int kExitAborted = 2;

std::string records_header(std::size_t m);
// 17 significant digits for every diagnostic; wall_ms with 3 decimals.
std::string format_record_row(const RunRecord& record);

// Reference state for W2 tracking under the configured policy, or nullopt.
// A long-run reference is cached under config.cache_dir.
std::optional<BlockState> build_reference(const RunConfig& config, const ProblemSpec& problem,
                                          std::size_t count, std::ostream& log);

struct RunOutcome {
  int exit_code = kExitOk;
  std::vector<RunRecord> records;
  std::optional<BlockState> final_state;
  std::vector<std::string> warnings;
  std::string message;
};

// Runs a parsed config, streaming records.csv and writing summary.txt into
// config.output (skipped when output is empty). Config errors are reported
// through exit_code rather than thrown.
RunOutcome execute_run(const RunConfig& config, std::ostream& log);

int cmd_run(const std::string& config_path, std::ostream& out, std::ostream& err);

// One run per value with derived seeds; writes <output>/sweep.csv.
int cmd_sweep(const std::string& config_path, const std::string& parameter, const std::vector<std::string>& values,
              std::ostream& out, std::ostream& err);

}  // namespace wpcg
