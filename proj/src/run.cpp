#include "wpcg/run.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "wpcg/diagnostics.hpp"
#include "wpcg/rng.hpp"

namespace wpcg {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSweepStreamBase = 2000;

std::string num(double v) { return fmt::format("{:.17g}", v); }

void write_state(const fs::path& path, const BlockState& state) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << "wpcg-state " << state.num_blocks() << ' ' << state.count();
  for (const auto& block : state.blocks) out << ' ' << block.dim();
  out << '\n';
  for (const auto& block : state.blocks) {
    for (std::size_t b = 0; b < block.count(); ++b) {
      const auto p = block.particle(b);
      for (std::size_t c = 0; c < p.size(); ++c) out << (c ? "," : "") << num(p[c]);
      out << '\n';
    }
  }
}

std::optional<BlockState> read_state(const fs::path& path, const ProblemSpec& problem, std::size_t count) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::string tag;
  std::size_t m = 0, b = 0;
  in >> tag >> m >> b;
  if (tag != "wpcg-state" || m != problem.m || b != count) return std::nullopt;
  std::vector<std::size_t> dims(m);
  for (auto& d : dims) in >> d;
  if (dims != problem.dims) return std::nullopt;
  std::string line;
  std::getline(in, line);
  BlockState state;
  for (std::size_t j = 0; j < m; ++j) {
    Matrix pts(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(dims[j]));
    for (std::size_t r = 0; r < b; ++r) {
      if (!std::getline(in, line)) return std::nullopt;
      std::stringstream ss(line);
      std::string cell;
      for (std::size_t c = 0; c < dims[j]; ++c) {
        if (!std::getline(ss, cell, ',')) return std::nullopt;
        pts(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = std::stod(cell);
      }
    }
    state.blocks.emplace_back(std::move(pts));
  }
  return state;
}

std::string describe_slope(const std::vector<RunRecord>& records, const RecordField& field) {
  try {
    const SlopeFit fit = rate_slope(records, field);
    return fmt::format("slope {:.6g} per iteration, R^2 {:.6g}", fit.slope, fit.r_squared);
  } catch (const Error& e) {
    return fmt::format("n/a ({})", e.what());
  }
}

void write_summary(const fs::path& path, const RunConfig& config, const RunOutcome& outcome, std::size_t m) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << "problem: " << config.problem << '\n';
  out << "scheme: " << config.scheme << '\n';
  out << "solver: " << resolved_solver(config) << '\n';
  out << "tau: " << num(config.tau) << '\n';
  out << "particles: " << resolved_particles(config) << '\n';
  out << "seed: " << config.seed << '\n';
  out << "iterations completed: " << outcome.records.size() << " of " << config.iterations << '\n';
  out << "status: " << (outcome.exit_code == kExitOk ? "ok" : outcome.message) << '\n';
  if (outcome.final_state) {
    out << "final state:\n";
    for (std::size_t j = 0; j < outcome.final_state->num_blocks(); ++j) {
      const Matrix& x = outcome.final_state->blocks[j].points();
      const Eigen::RowVectorXd mean = x.colwise().mean();
      const double var =
          x.rows() > 1 ? (x.rowwise() - mean).squaredNorm() / static_cast<double>(x.rows() - 1) : 0.0;
      out << "  block " << j << ": mean [";
      for (Eigen::Index c = 0; c < mean.size(); ++c) out << (c ? ", " : "") << num(mean(c));
      out << "], total variance " << num(var) << '\n';
    }
  }
  out << "rate fits (log value against k):\n";
  out << "  w2sq_total: " << describe_slope(outcome.records, [](const RunRecord& r) { return r.w2sq_total; })
      << '\n';
  for (std::size_t j = 0; j < m; ++j) {
    out << "  fv_var_block_" << j << ": "
        << describe_slope(outcome.records, [j](const RunRecord& r) { return r.fv_var_block[j]; }) << '\n';
  }
  out << "warnings:\n";
  if (outcome.warnings.empty()) out << "  none\n";
  for (const auto& w : outcome.warnings) out << "  " << w << '\n';
}

}  // namespace

std::string records_header(std::size_t m) {
  std::string h = "k,objective,w2sq_total";
  for (std::size_t j = 0; j < m; ++j) h += fmt::format(",w2sq_block_{}", j);
  for (std::size_t j = 0; j < m; ++j) h += fmt::format(",fv_var_block_{}", j);
  for (std::size_t j = 0; j < m; ++j) h += fmt::format(",foc_block_{}", j);
  return h + ",wall_ms";
}

std::string format_record_row(const RunRecord& record) {
  std::string row = fmt::format("{},{},{}", record.k, num(record.objective), num(record.w2sq_total));
  for (double v : record.w2sq_block) row += "," + num(v);
  for (double v : record.fv_var_block) row += "," + num(v);
  for (double v : record.foc_block) row += "," + num(v);
  return row + fmt::format(",{:.3f}", record.wall_ms);
}

std::optional<BlockState> build_reference(const RunConfig& config, const ProblemSpec& problem, std::size_t count,
                                          std::ostream& log) {
  std::string policy = config.reference;
  if (policy == "auto") policy = problem.analytic_reference ? "analytic" : "none";
  if (policy == "none") return std::nullopt;
  if (policy == "analytic") {
    if (!problem.analytic_reference) {
      throw ConfigError(fmt::format("problem '{}' has no analytic reference", config.problem));
    }
    return problem.analytic_reference(count, derive_seed(config.seed, streams::kReference));
  }
  if (policy == "truth") {
    if (config.problem != "mfvi-synthetic") throw ConfigError("reference = truth needs problem = mfvi-synthetic");
    if (config.mfvi_theta_star.size() != problem.m) throw ConfigError("mfvi.theta_star length must equal m");
    return point_state(config.mfvi_theta_star);
  }

  // Long run: same problem, 10x the budget; the SDE path also shrinks tau by
  // 10 (100x the iterations) to cut its step-size bias.
  RunConfig long_run = config;
  const bool sde = resolved_solver(config) == "sde";
  long_run.iterations = config.iterations * (sde ? 100 : 10);
  long_run.tau = sde ? config.tau / 10.0 : config.tau;
  long_run.seed = derive_seed(config.seed, streams::kReference);
  const fs::path cache = fs::path(config.cache_dir) / fmt::format("reference-{:016x}.txt", config_hash(config));
  if (auto cached = read_state(cache, problem, count)) {
    log << "reference: loaded " << cache.string() << '\n';
    return cached;
  }
  log << "reference: long run of " << long_run.iterations << " iterations at tau = " << long_run.tau << '\n';
  DiagnosticsConfig quiet;
  quiet.objective = quiet.first_variation = quiet.foc = quiet.w2 = false;
  quiet.every = long_run.iterations;
  quiet.abort_above = config.diagnostics.abort_above;
  const RunResult result = run_wpcg(problem, build_initial(long_run, problem), build_scheme(long_run),
                                    std::nullopt, quiet);
  std::error_code ec;
  fs::create_directories(config.cache_dir, ec);
  if (!ec) write_state(cache, result.final_state);
  return result.final_state;
}

RunOutcome execute_run(const RunConfig& config, std::ostream& log) {
  RunOutcome outcome;
  std::optional<WpcgRunner> runner;
  std::size_t m = 0;
  try {
    const ProblemSpec problem = build_problem(config);
    m = problem.m;
    const BlockState initial = build_initial(config, problem);
    const auto reference = build_reference(config, problem, initial.count(), log);
    runner.emplace(problem, initial, build_scheme(config), reference, config.diagnostics);
  } catch (const Error& e) {
    outcome.exit_code = kExitConfigError;
    outcome.message = e.what();
    return outcome;
  }

  std::ofstream csv;
  if (!config.output.empty()) {
    std::error_code ec;
    fs::create_directories(config.output, ec);
    csv.open(fs::path(config.output) / "records.csv", std::ios::out | std::ios::trunc | std::ios::binary);
    if (!csv) {
      outcome.exit_code = kExitConfigError;
      outcome.message = fmt::format("cannot write to output directory '{}'", config.output);
      return outcome;
    }
    csv << records_header(m) << '\n';
  }
  try {
    while (!runner->done()) {
      const RunRecord& record = runner->step();
      if (csv) csv << format_record_row(record) << '\n' << std::flush;
    }
  } catch (const RunAborted& e) {
    outcome.exit_code = kExitAborted;
    outcome.message = fmt::format("aborted at iteration {}: {}", e.iteration(), e.what());
  } catch (const Error& e) {
    outcome.exit_code = kExitConfigError;
    outcome.message = e.what();
  }
  outcome.records = runner->records();
  outcome.warnings = runner->warnings();
  if (outcome.exit_code == kExitOk) outcome.final_state = runner->state();
  if (!config.output.empty()) write_summary(fs::path(config.output) / "summary.txt", config, outcome, m);
  return outcome;
}

int cmd_run(const std::string& config_path, std::ostream& out, std::ostream& err) {
  RunConfig config;
  try {
    config = load_config(config_path);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfigError;
  }
  const RunOutcome outcome = execute_run(config, out);
  for (const auto& w : outcome.warnings) err << "warning: " << w << '\n';
  if (outcome.exit_code != kExitOk) {
    err << "error: " << outcome.message << '\n';
    return outcome.exit_code;
  }
  out << "completed " << outcome.records.size() << " iterations; records in "
      << (fs::path(config.output) / "records.csv").string() << '\n';
  return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& parameter, const std::vector<std::string>& values,
              std::ostream& out, std::ostream& err) {
  RunConfig base;
  try {
    base = load_config(config_path);
    if (values.empty()) throw ConfigError("sweep needs at least one value");
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfigError;
  }
  std::string key;
  if (parameter == "tau") {
    key = "tau";
  } else if (parameter == "alpha") {
    if (base.problem == "quadratic") key = "quadratic.alpha";
    else if (base.problem == "species") key = "species.alpha";
  } else if (parameter == "beta") {
    if (base.problem == "species") key = "species.beta";
  } else if (parameter == "inner_iterations") {
    key = "fa.inner_iterations";
  } else {
    err << "error: sweep parameter must be one of tau, alpha, beta, inner_iterations\n";
    return kExitConfigError;
  }
  if (key.empty()) {
    err << fmt::format("error: parameter '{}' does not apply to problem '{}'\n", parameter, base.problem);
    return kExitConfigError;
  }

  const fs::path root = base.output.empty() ? fs::path("wpcg-out") : fs::path(base.output);
  std::error_code ec;
  fs::create_directories(root, ec);
  std::ofstream csv(root / "sweep.csv", std::ios::out | std::ios::trunc | std::ios::binary);
  if (!csv) {
    err << "error: cannot write " << (root / "sweep.csv").string() << '\n';
    return kExitConfigError;
  }
  csv << "value,final_w2sq,slope\n";
  int worst = kExitOk;
  for (std::size_t i = 0; i < values.size(); ++i) {
    RunConfig config = base;
    try {
      apply_setting(config, key, values[i]);
      apply_setting(config, "seed", std::to_string(derive_seed(base.seed, kSweepStreamBase + i)));
    } catch (const Error& e) {
      err << "error: " << e.what() << '\n';
      return kExitConfigError;
    }
    config.output = (root / fmt::format("run_{}", i)).string();
    const RunOutcome outcome = execute_run(config, out);
    if (outcome.exit_code == kExitConfigError) {
      err << "error: " << outcome.message << '\n';
      return kExitConfigError;
    }
    if (outcome.exit_code != kExitOk) err << fmt::format("warning: value {}: {}\n", values[i], outcome.message);
    worst = std::max(worst, outcome.exit_code);
    double final_w2sq = kNotRecorded;
    if (!outcome.records.empty()) final_w2sq = outcome.records.back().w2sq_total;
    double slope = kNotRecorded;
    try {
      slope = rate_slope(outcome.records, [](const RunRecord& r) { return r.w2sq_total; }).slope;
    } catch (const Error&) {
    }
    csv << values[i] << ',' << num(final_w2sq) << ',' << num(slope) << '\n';
    out << fmt::format("{} = {}: final w2sq {}, slope {}\n", parameter, values[i], num(final_w2sq), num(slope));
  }
  return worst;
}

}  // namespace wpcg
