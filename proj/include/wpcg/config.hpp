#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wpcg/core.hpp"
#include "wpcg/problems.hpp"
#include "wpcg/schedulers.hpp"

namespace wpcg {

// Raised for unreadable, malformed or inconsistent run descriptions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Run description. Parsed from flat `key = value` text; `[section]` headers
// prefix the keys below them with `section.`. See README for every key.
struct RunConfig {
  std::string problem = "quadratic";

  std::size_t quadratic_m = 3;
  double quadratic_alpha = 0.5;
  std::vector<double> quadratic_x0;  // empty: x0_j = j + 1

  std::vector<std::size_t> gaussian_dims{1};
  std::vector<double> gaussian_precisions{1.0};

  SpeciesSystem species;

  std::string mfvi_csv;
  std::size_t mfvi_n = 100;
  double mfvi_prior_variance = 4.0;
  std::vector<double> mfvi_theta_star{-1.0, 1.0, 0.3, -0.3};

  std::string scheme = "parallel";
  std::size_t batch_m = 0;
  double tau = 0.1;
  std::size_t iterations = 100;
  std::size_t particles = 0;  // 0: 1 for the closed-form solver, else 1000
  std::uint64_t seed = 0;
  std::string solver = "auto";
  std::size_t n_grad = 1;
  bool project_to_box = false;
  FaConfig fa;
  KdeConfig kde;

  double init_mean = 0.0;
  double init_std = 1.0;

  std::string reference = "auto";
  std::string cache_dir = ".wpcg-cache";

  DiagnosticsConfig diagnostics;
  std::string output = "wpcg-out";

  // Every key that was set explicitly, as written, for hashing and echoing.
  std::map<std::string, std::string> explicit_keys;
};

// Applies one key; throws ConfigError for unknown keys or bad values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::string& path);

// Resolved values of the "auto" settings.
std::string resolved_solver(const RunConfig& config);
std::size_t resolved_particles(const RunConfig& config);

ProblemSpec build_problem(const RunConfig& config);
SchemeConfig build_scheme(const RunConfig& config);
BlockState build_initial(const RunConfig& config, const ProblemSpec& problem);

// 64-bit FNV-1a over the settings that determine the iterates (excludes
// output, reference and diagnostics keys).
std::uint64_t config_hash(const RunConfig& config);

}  // namespace wpcg
