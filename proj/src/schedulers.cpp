#include "wpcg/schedulers.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <thread>

#include <fmt/format.h>

#include "wpcg/diagnostics.hpp"
#include "wpcg/proximal_steps.hpp"

namespace wpcg {

namespace {
constexpr std::size_t kMinParticlesForThreads = 64;
}  // namespace

std::size_t default_batch_M(std::size_t m, double L) {
  const double mL = static_cast<double>(m) * L;
  if (!(mL > 1.0)) {
    throw Error(fmt::format("default batch size needs m*L > 1 (got m*L = {})", mL));
  }
  // The small slack keeps exact integers (e.g. 2 m ln e) from rounding up.
  return static_cast<std::size_t>(std::ceil(2.0 * static_cast<double>(m) * std::log(mL) - 1e-12));
}

double parallel_step_bound(std::size_t m, double L) {
  if (m <= 1) return std::numeric_limits<double>::infinity();
  const double md = static_cast<double>(m);
  return (md - 0.5) / (L * std::pow(md - 1.0, 1.5));
}

std::vector<std::string> step_size_guard(const SchemeConfig& config, const ProblemSpec& problem) {
  std::vector<std::string> warnings;
  if (!std::holds_alternative<Parallel>(config.scheme)) return warnings;
  if (!problem.potential.lipschitz_L) {
    if (problem.m > 1) warnings.push_back("lipschitz_L unknown: parallel step-size bound not checked");
    return warnings;
  }
  const double bound = parallel_step_bound(problem.m, *problem.potential.lipschitz_L);
  if (config.tau >= bound) {
    warnings.push_back(fmt::format(
        "tau = {} is at or above the parallel-scheme bound (m - 1/2) / (L (m - 1)^1.5) = {:.6g}; "
        "the iteration may fail to contract",
        config.tau, bound));
  }
  return warnings;
}

IterationPlan plan_iteration(const Scheme& scheme, std::size_t m, std::size_t batch_M, Engine& engine) {
  IterationPlan plan;
  if (std::holds_alternative<Random>(scheme)) {
    plan.kind = IterationPlan::Kind::Random;
    std::uniform_int_distribution<std::size_t> pick(0, m - 1);
    plan.updates.reserve(batch_M);
    for (std::size_t l = 0; l < batch_M; ++l) plan.updates.push_back(pick(engine));
    return plan;
  }
  plan.kind = std::holds_alternative<Parallel>(scheme) ? IterationPlan::Kind::Parallel
                                                       : IterationPlan::Kind::Sequential;
  plan.updates.resize(m);
  for (std::size_t j = 0; j < m; ++j) plan.updates[j] = j;
  return plan;
}

std::size_t resolve_batch_M(const Random& scheme, const ProblemSpec& problem) {
  if (scheme.batch_M > 0) return scheme.batch_M;
  if (!problem.potential.lipschitz_L) {
    throw Error("random scheme without batch_M needs lipschitz_L for the default batch size");
  }
  return default_batch_M(problem.m, *problem.potential.lipschitz_L);
}

std::size_t worker_count() {
  if (const char* env = std::getenv("WPCG_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

WpcgRunner::WpcgRunner(ProblemSpec problem, const BlockState& initial, SchemeConfig config,
                       std::optional<BlockState> reference, DiagnosticsConfig diagnostics)
    : problem_(std::move(problem)),
      config_(std::move(config)),
      reference_(std::move(reference)),
      diag_(std::move(diagnostics)),
      state_(initial),
      scheme_engine_(make_engine(config_.seed, streams::kScheme)) {
  validate_problem(problem_, config_, initial);
  if (reference_) {
    validate_state(problem_, *reference_);
    if (reference_->count() != 1 && reference_->count() != initial.count()) {
      throw ShapeError("reference needs the run's particle count or a single point per block");
    }
  }
  if (diag_.every == 0) throw Error("diagnostics.every must be at least 1");
  state_.iteration = 0;
  for (std::size_t j = 0; j < problem_.m; ++j) {
    block_engines_.push_back(make_engine(config_.seed, streams::kBlockBase + j));
  }
  warm_maps_.resize(problem_.m);
  if (const auto* random = std::get_if<Random>(&config_.scheme)) batch_M_ = resolve_batch_M(*random, problem_);
  warnings_ = problem_.notes;
  for (auto& w : step_size_guard(config_, problem_)) warnings_.push_back(std::move(w));
}

ParticleEnsemble WpcgRunner::solve_block(const BlockState& context, std::size_t block) {
  Engine& engine = block_engines_[block];
  if (const auto* fa = std::get_if<FaSolver>(&config_.solver)) {
    auto result = fa_block_step(problem_, context, block, config_.tau, fa->fa, engine, warm_maps_[block],
                                config_.n_grad);
    warm_maps_[block] = std::move(result.map);
    return std::move(result.ensemble);
  }
  if (std::holds_alternative<EuclideanClosedForm>(config_.solver)) {
    return euclidean_prox_step(problem_, context, block, config_.tau);
  }
  return sde_block_step(problem_, context, block, config_.tau, engine, config_.n_grad);
}

void WpcgRunner::finish_move(ParticleEnsemble& moved, std::size_t block, std::size_t k) const {
  if (config_.project_to_box && problem_.domain_box) {
    const Box& box = (*problem_.domain_box)[block];
    Matrix clamped = moved.points();
    for (Eigen::Index b = 0; b < clamped.rows(); ++b) {
      clamped.row(b) = clamped.row(b).cwiseMax(box.lower.transpose()).cwiseMin(box.upper.transpose());
    }
    moved = ParticleEnsemble(std::move(clamped));
  }
  const double peak = moved.points().cwiseAbs().maxCoeff();
  if (peak > diag_.abort_above) {
    throw RunAborted(k, fmt::format("divergence at iteration {}: block {} has |x| = {:.6g} > {:.6g}", k, block,
                                    peak, diag_.abort_above));
  }
}

const RunRecord& WpcgRunner::step() {
  if (done()) throw Error("run already finished");
  const auto start = std::chrono::steady_clock::now();
  const std::size_t k = state_.iteration + 1;
  const IterationPlan plan = plan_iteration(config_.scheme, problem_.m, batch_M_, scheme_engine_);
  const bool due = (k % diag_.every == 0) || k == config_.iterations;
  const bool keep_contexts = due && diag_.foc;
  std::vector<std::optional<BlockState>> contexts(problem_.m);

  auto guarded = [&](auto&& fn) {
    try {
      fn();
    } catch (const NonFiniteError& e) {
      throw RunAborted(k, fmt::format("non-finite iterate at iteration {}: {}", k, e.what()));
    }
  };

  if (plan.against_snapshot()) {
    const BlockState snapshot = state_;
    std::vector<std::optional<ParticleEnsemble>> moved(problem_.m);
    std::vector<std::exception_ptr> failures(problem_.m);
    auto work = [&](std::size_t j) {
      try {
        guarded([&] {
          ParticleEnsemble next = solve_block(snapshot, j);
          finish_move(next, j, k);
          moved[j].emplace(std::move(next));
        });
      } catch (...) {
        failures[j] = std::current_exception();
      }
    };
    // Threads only pay off once blocks carry real work.
    const std::size_t workers = state_.count() >= kMinParticlesForThreads ? std::min(worker_count(), problem_.m) : 1;
    if (workers <= 1) {
      for (std::size_t j = 0; j < problem_.m; ++j) work(j);
    } else {
      std::atomic<std::size_t> next_block{0};
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (std::size_t j = next_block++; j < problem_.m; j = next_block++) work(j);
        });
      }
      for (auto& t : pool) t.join();
    }
    for (auto& f : failures) {
      if (f) std::rethrow_exception(f);
    }
    for (std::size_t j = 0; j < problem_.m; ++j) {
      if (keep_contexts) contexts[j] = snapshot;
      state_.blocks[j] = std::move(*moved[j]);
    }
  } else {
    for (const std::size_t j : plan.updates) {
      if (keep_contexts) contexts[j] = state_;
      guarded([&] {
        ParticleEnsemble next = solve_block(state_, j);
        finish_move(next, j, k);
        state_.blocks[j] = std::move(next);
      });
    }
  }
  state_.iteration = k;

  RunRecord record;
  record.k = k;
  record.w2sq_block.assign(problem_.m, kNotRecorded);
  record.fv_var_block.assign(problem_.m, kNotRecorded);
  record.foc_block.assign(problem_.m, kNotRecorded);
  if (due) fill_diagnostics(record, contexts);
  record.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  records_.push_back(std::move(record));
  return records_.back();
}

void WpcgRunner::fill_diagnostics(RunRecord& record, const std::vector<std::optional<BlockState>>& contexts) {
  const std::size_t k = record.k;
  const std::uint64_t diag_seed = derive_seed(derive_seed(config_.seed, streams::kDiagnostics), k);
  auto attempt = [&](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      if (!diag_warned_) {
        warnings_.push_back(fmt::format("diagnostic failed at iteration {} (recorded as NaN): {}", k, e.what()));
        diag_warned_ = true;
      }
    }
  };
  if (diag_.objective) {
    attempt([&] {
      ObjectiveOptions options{diag_.n_mc, derive_seed(derive_seed(config_.seed, streams::kObjective), k)};
      record.objective = evaluate_objective(problem_, state_, diag_.kde, options);
    });
  }
  if (diag_.w2 && reference_) {
    attempt([&] {
      record.w2sq_block = w2sq_to_reference(state_, *reference_, diag_.w2_options);
      record.w2sq_total = product_w2_squared(record.w2sq_block);
    });
  }
  const FirstVariationOptions fv_options{diag_.fv_companions, diag_seed};
  if (diag_.first_variation) {
    for (std::size_t j = 0; j < problem_.m; ++j) {
      attempt([&] { record.fv_var_block[j] = first_variation_variance(problem_, state_, j, diag_.kde, fv_options); });
    }
  }
  if (diag_.foc) {
    for (std::size_t j = 0; j < problem_.m; ++j) {
      if (!contexts[j]) continue;  // block not updated this iteration
      attempt([&] {
        record.foc_block[j] =
            foc_residual(problem_, *contexts[j], state_.blocks[j], j, config_.tau, diag_.kde, fv_options).norm;
      });
    }
  }
}

RunResult run_wpcg(const ProblemSpec& problem, const BlockState& initial, const SchemeConfig& config,
                   const std::optional<BlockState>& reference, const DiagnosticsConfig& diagnostics) {
  WpcgRunner runner(problem, initial, config, reference, diagnostics);
  while (!runner.done()) runner.step();
  return {runner.records(), runner.state(), runner.warnings()};
}

}  // namespace wpcg
