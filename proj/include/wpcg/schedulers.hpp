#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "wpcg/core.hpp"
#include "wpcg/ot.hpp"
#include "wpcg/records.hpp"
#include "wpcg/rng.hpp"
#include "wpcg/transport_map.hpp"

namespace wpcg {

// ceil(2 m ln(m L)); throws when m L <= 1.
std::size_t default_batch_M(std::size_t m, double L);

// (m - 1/2) / (L (m - 1)^{3/2}); +infinity for m = 1.
double parallel_step_bound(std::size_t m, double L);

// Warnings about the step size; never throws for a well-formed config.
std::vector<std::string> step_size_guard(const SchemeConfig& config, const ProblemSpec& problem);

struct IterationPlan {
  enum class Kind { Parallel, Sequential, Random };

  Kind kind = Kind::Parallel;
  // Block indices in update order. Parallel and Sequential list 0..m-1.
  std::vector<std::size_t> updates;
  // Parallel: every update reads the iteration snapshot.
  bool against_snapshot() const { return kind == Kind::Parallel; }
};

// Random draws come from `engine` (the scheme stream); other schemes do not
// touch it. batch_M is the resolved M for the random scheme.
IterationPlan plan_iteration(const Scheme& scheme, std::size_t m, std::size_t batch_M, Engine& engine);

// Resolved M: the configured batch or default_batch_M(m, L).
std::size_t resolve_batch_M(const Random& scheme, const ProblemSpec& problem);

struct DiagnosticsConfig {
  // Expensive diagnostics run on iterations k with k % every == 0 and on the
  // last iteration; other records hold NaN there.
  std::size_t every = 1;
  bool objective = true;
  bool first_variation = true;
  bool foc = true;
  bool w2 = true;
  KdeConfig kde;
  std::size_t n_mc = 1;
  std::size_t fv_companions = 128;
  W2Options w2_options;
  // A coordinate with magnitude above this aborts the run as divergent.
  double abort_above = 1e6;
};

// Raised when an iterate becomes non-finite or exceeds the divergence bound.
class RunAborted : public Error {
 public:
  RunAborted(std::size_t iteration, const std::string& what)
      : Error(what), iteration_(iteration) {}
  std::size_t iteration() const { return iteration_; }

 private:
  std::size_t iteration_;
};

// Executes WPCG outer iterations one at a time. The initial state is copied;
// records accumulate in order.
class WpcgRunner {
 public:
  WpcgRunner(ProblemSpec problem, const BlockState& initial, SchemeConfig config,
             std::optional<BlockState> reference = std::nullopt, DiagnosticsConfig diagnostics = {});

  // Runs one outer iteration and appends its record. Throws RunAborted.
  const RunRecord& step();
  bool done() const { return state_.iteration >= config_.iterations; }

  const BlockState& state() const { return state_; }
  const std::vector<RunRecord>& records() const { return records_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const ProblemSpec& problem() const { return problem_; }
  const SchemeConfig& config() const { return config_; }

 private:
  ParticleEnsemble solve_block(const BlockState& context, std::size_t block);
  void finish_move(ParticleEnsemble& moved, std::size_t block, std::size_t k) const;
  void fill_diagnostics(RunRecord& record, const std::vector<std::optional<BlockState>>& contexts);

  ProblemSpec problem_;
  SchemeConfig config_;
  std::optional<BlockState> reference_;
  DiagnosticsConfig diag_;
  BlockState state_;
  std::vector<RunRecord> records_;
  std::vector<std::string> warnings_;
  std::vector<Engine> block_engines_;
  Engine scheme_engine_;
  std::size_t batch_M_ = 0;
  std::vector<std::optional<TransportMapModel>> warm_maps_;
  bool diag_warned_ = false;
};

struct RunResult {
  std::vector<RunRecord> records;
  BlockState final_state;
  std::vector<std::string> warnings;
};

// Validates, then runs all iterations. Throws RunAborted on divergence; use
// WpcgRunner directly to keep the records gathered before an abort.
RunResult run_wpcg(const ProblemSpec& problem, const BlockState& initial, const SchemeConfig& config,
                   const std::optional<BlockState>& reference = std::nullopt,
                   const DiagnosticsConfig& diagnostics = {});

// Worker count for the parallel scheme: WPCG_THREADS if set and positive,
// else hardware concurrency (at least 1).
std::size_t worker_count();

}  // namespace wpcg
