#include "wpcg/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>

#include "wpcg/rng.hpp"

namespace wpcg {

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

double to_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError(fmt::format("{}: '{}' is not a number", key, text));
  }
  return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  int base = 10;
  const char* begin = t.data();
  if (t.size() > 2 && t[0] == '0' && (t[1] == 'x' || t[1] == 'X')) {
    base = 16;
    begin += 2;
  }
  const auto [ptr, ec] = std::from_chars(begin, t.data() + t.size(), v, base);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError(fmt::format("{}: '{}' is not a non-negative integer", key, text));
  }
  return v;
}

std::size_t to_size(const std::string& key, const std::string& text) {
  return static_cast<std::size_t>(to_u64(key, text));
}

std::size_t to_positive(const std::string& key, const std::string& text) {
  const std::size_t v = to_size(key, text);
  if (v == 0) throw ConfigError(fmt::format("{} must be positive", key));
  return v;
}

bool to_bool(const std::string& key, const std::string& text) {
  std::string t = trim(text);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, text));
}

std::vector<std::string> split_list(const std::string& text) {
  std::string t = trim(text);
  if (!t.empty() && t.front() == '[' && t.back() == ']') t = t.substr(1, t.size() - 2);
  std::vector<std::string> out;
  if (trim(t).empty()) return out;
  std::stringstream ss(t);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<double> to_doubles(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(to_double(key, item));
  return out;
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(text)) out.push_back(to_positive(key, item));
  return out;
}

double positive_double(const std::string& key, const std::string& text) {
  const double v = to_double(key, text);
  if (!(v > 0.0)) throw ConfigError(fmt::format("{} must be positive", key));
  return v;
}

std::string one_of(const std::string& key, const std::string& text, std::initializer_list<const char*> allowed) {
  const std::string t = trim(text);
  for (const char* a : allowed) {
    if (t == a) return t;
  }
  std::string list;
  for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
  throw ConfigError(fmt::format("{}: '{}' is not one of {}", key, text, list));
}

KdeConfig to_kde(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "silverman") return KdeConfig::silverman();
  return KdeConfig::fixed(positive_double(key, t));
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"problem",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.problem = one_of(k, v, {"quadratic", "gaussian", "species", "mfvi-synthetic", "mfvi-csv"});
       }},
      {"quadratic.m", [](RunConfig& c, const std::string& k, const std::string& v) { c.quadratic_m = to_positive(k, v); }},
      {"quadratic.alpha",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.quadratic_alpha = to_double(k, v); }},
      {"quadratic.x0", [](RunConfig& c, const std::string& k, const std::string& v) { c.quadratic_x0 = to_doubles(k, v); }},
      {"gaussian.dims", [](RunConfig& c, const std::string& k, const std::string& v) { c.gaussian_dims = to_sizes(k, v); }},
      {"gaussian.precisions",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.gaussian_precisions = to_doubles(k, v); }},
      {"species.alpha",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.species.alpha = positive_double(k, v); }},
      {"species.beta",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.species.beta = to_double(k, v);
         if (c.species.beta < 0.0) throw ConfigError("species.beta must be non-negative");
       }},
      {"species.super_quartic",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.species.super_quartic = to_bool(k, v); }},
      {"species.kernel",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.species.kernel = one_of(k, v, {"display", "convexity"}) == "display" ? SpeciesKernel::Display
                                                                                  : SpeciesKernel::Convexity;
       }},
      {"mfvi.csv", [](RunConfig& c, const std::string&, const std::string& v) { c.mfvi_csv = trim(v); }},
      {"mfvi.n", [](RunConfig& c, const std::string& k, const std::string& v) { c.mfvi_n = to_positive(k, v); }},
      {"mfvi.prior_variance",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.mfvi_prior_variance = positive_double(k, v); }},
      {"mfvi.theta_star",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.mfvi_theta_star = to_doubles(k, v); }},
      {"scheme",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.scheme = one_of(k, v, {"parallel", "sequential", "random"});
       }},
      {"scheme.batch_m", [](RunConfig& c, const std::string& k, const std::string& v) { c.batch_m = to_size(k, v); }},
      {"tau", [](RunConfig& c, const std::string& k, const std::string& v) { c.tau = positive_double(k, v); }},
      {"iterations", [](RunConfig& c, const std::string& k, const std::string& v) { c.iterations = to_positive(k, v); }},
      {"particles", [](RunConfig& c, const std::string& k, const std::string& v) { c.particles = to_size(k, v); }},
      {"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); }},
      {"solver",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.solver = one_of(k, v, {"auto", "sde", "fa", "euclidean"});
       }},
      {"n_grad", [](RunConfig& c, const std::string& k, const std::string& v) { c.n_grad = to_positive(k, v); }},
      {"project_to_box",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.project_to_box = to_bool(k, v); }},
      {"fa.hidden_widths",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.fa.hidden_widths = to_sizes(k, v); }},
      {"fa.inner_iterations",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.fa.inner_iterations = to_positive(k, v); }},
      {"fa.inner_step",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.fa.inner_step = positive_double(k, v); }},
      {"fa.reinit_each_step",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.fa.reinit_each_step = to_bool(k, v); }},
      {"fa.warm_start_shrink",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.fa.warm_start_shrink = to_double(k, v);
         if (c.fa.warm_start_shrink < 0.0 || c.fa.warm_start_shrink > 1.0) {
           throw ConfigError("fa.warm_start_shrink must lie in [0, 1]");
         }
       }},
      {"kde.bandwidth", [](RunConfig& c, const std::string& k, const std::string& v) { c.kde = to_kde(k, v); }},
      {"init.mean", [](RunConfig& c, const std::string& k, const std::string& v) { c.init_mean = to_double(k, v); }},
      {"init.std",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.init_std = to_double(k, v);
         if (c.init_std < 0.0) throw ConfigError("init.std must be non-negative");
       }},
      {"reference",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.reference = one_of(k, v, {"auto", "analytic", "long-run", "truth", "none"});
       }},
      {"reference.cache_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.cache_dir = trim(v); }},
      {"diagnostics.every",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.diagnostics.every = to_positive(k, v); }},
      {"diagnostics.objective",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.diagnostics.objective = to_bool(k, v); }},
      {"diagnostics.first_variation",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.diagnostics.first_variation = to_bool(k, v); }},
      {"diagnostics.foc",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.diagnostics.foc = to_bool(k, v); }},
      {"diagnostics.w2",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.diagnostics.w2 = to_bool(k, v); }},
      {"diagnostics.n_mc",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.diagnostics.n_mc = to_positive(k, v); }},
      {"diagnostics.fv_companions",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.diagnostics.fv_companions = to_positive(k, v); }},
      {"diagnostics.abort_above",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.diagnostics.abort_above = positive_double(k, v); }},
      {"output", [](RunConfig& c, const std::string&, const std::string& v) { c.output = trim(v); }},
  };
  return table;
}

bool affects_iterates(const std::string& key) {
  return key != "output" && key.rfind("reference", 0) != 0 && key.rfind("diagnostics.", 0) != 0;
}

}  // namespace

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError(fmt::format("unknown key '{}'", key));
  it->second(config, key, value);
  if (key == "kde.bandwidth") config.fa.kde = config.kde, config.diagnostics.kde = config.kde;
  config.explicit_keys[key] = trim(value);
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line.erase(comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(fmt::format("{}:{}: malformed section header", origin, number));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected 'key = value'", origin, number));
    }
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!section.empty()) key = section + "." + key;
    if (config.explicit_keys.count(key)) {
      throw ConfigError(fmt::format("{}:{}: key '{}' set twice", origin, number, key));
    }
    try {
      apply_setting(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", origin, number, e.what()));
    }
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config file '{}'", path));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path);
}

std::string resolved_solver(const RunConfig& config) {
  if (config.solver != "auto") return config.solver;
  if (config.problem == "quadratic") return "euclidean";
  if (config.problem == "species" && !config.species.super_quartic && config.species.beta > 0.0) return "fa";
  return "sde";
}

std::size_t resolved_particles(const RunConfig& config) {
  if (config.particles > 0) return config.particles;
  return resolved_solver(config) == "euclidean" ? 1 : 1000;
}

ProblemSpec build_problem(const RunConfig& config) {
  if (config.problem == "quadratic") return quadratic_product_problem(config.quadratic_m, config.quadratic_alpha);
  if (config.problem == "gaussian") return gaussian_mfvi_problem(config.gaussian_dims, config.gaussian_precisions);
  if (config.problem == "species") return species_problem(config.species);
  if (config.problem == "mfvi-csv") {
    if (config.mfvi_csv.empty()) throw ConfigError("problem mfvi-csv needs mfvi.csv = <path>");
    return mfvi_problem(LogisticDataset::load_csv(config.mfvi_csv, config.mfvi_prior_variance));
  }
  if (config.mfvi_theta_star.empty()) throw ConfigError("mfvi.theta_star must not be empty");
  const Eigen::Map<const Vector> theta(config.mfvi_theta_star.data(),
                                       static_cast<Eigen::Index>(config.mfvi_theta_star.size()));
  return mfvi_problem(LogisticDataset::synthetic(config.mfvi_n, theta, config.mfvi_prior_variance,
                                                 derive_seed(config.seed, streams::kData)));
}

SchemeConfig build_scheme(const RunConfig& config) {
  SchemeConfig s;
  if (config.scheme == "parallel") {
    s.scheme = Parallel{};
  } else if (config.scheme == "sequential") {
    s.scheme = Sequential{};
  } else {
    s.scheme = Random{config.batch_m};
  }
  s.tau = config.tau;
  s.iterations = config.iterations;
  s.seed = config.seed;
  s.n_grad = config.n_grad;
  s.project_to_box = config.project_to_box;
  const std::string solver = resolved_solver(config);
  if (solver == "fa") {
    FaConfig fa = config.fa;
    fa.kde = config.kde;
    s.solver = FaSolver{fa};
  } else if (solver == "euclidean") {
    s.solver = EuclideanClosedForm{};
  } else {
    s.solver = SdeSolver{};
  }
  return s;
}

BlockState build_initial(const RunConfig& config, const ProblemSpec& problem) {
  if (config.problem == "quadratic" && resolved_particles(config) == 1) {
    std::vector<double> x0 = config.quadratic_x0;
    if (x0.empty()) {
      for (std::size_t j = 0; j < problem.m; ++j) x0.push_back(static_cast<double>(j + 1));
    }
    if (x0.size() != problem.m) {
      throw ConfigError(fmt::format("quadratic.x0 has {} entries, expected m = {}", x0.size(), problem.m));
    }
    return point_state(x0);
  }
  return sample_initial(problem, resolved_particles(config), config.init_mean, config.init_std,
                        derive_seed(config.seed, streams::kInit));
}

std::uint64_t config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  };
  feed("wpcg-config-v1");
  for (const auto& [key, value] : config.explicit_keys) {
    if (!affects_iterates(key)) continue;
    feed(key);
    feed(value);
  }
  return h;
}

}  // namespace wpcg
