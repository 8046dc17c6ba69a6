#include "wpcg/problems.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "wpcg/diagnostics.hpp"
#include "wpcg/rng.hpp"

namespace wpcg {

namespace {

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& cell, const std::string& path, std::size_t row) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
  if (used == 0 || used != cell.size()) {
    throw Error(fmt::format("{}: row {}: cannot parse '{}' as a number", path, row, cell));
  }
  return v;
}

}  // namespace

LogisticDataset LogisticDataset::load_csv(const std::string& path, double prior_variance) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open dataset '{}'", path));
  std::string line;
  if (!std::getline(in, line)) throw Error(fmt::format("{}: missing header row", path));
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::size_t cols = split_csv_line(line).size();
  if (cols < 2) throw Error(fmt::format("{}: need at least one feature column and a label column", path));

  std::vector<std::vector<double>> rows;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != cols) {
      throw Error(fmt::format("{}: row {} has {} columns, header has {}", path, row, cells.size(), cols));
    }
    std::vector<double> values;
    for (const auto& c : cells) values.push_back(parse_cell(c, path, row));
    rows.push_back(std::move(values));
  }
  LogisticDataset data;
  data.prior_variance = prior_variance;
  data.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols - 1));
  data.labels.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c + 1 < cols; ++c) {
      data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
    }
    data.labels(static_cast<Eigen::Index>(i)) = rows[i][cols - 1];
  }
  validate_dataset(data);
  return data;
}

LogisticDataset LogisticDataset::synthetic(std::size_t n, const Vector& theta_star, double prior_variance,
                                           std::uint64_t seed) {
  if (n < 1 || theta_star.size() < 1) throw Error("synthetic dataset needs n >= 1 and p >= 1");
  Engine engine(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  LogisticDataset data;
  data.prior_variance = prior_variance;
  const Eigen::Index p = theta_star.size();
  data.features.resize(static_cast<Eigen::Index>(n), p);
  data.labels.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    for (Eigen::Index c = 0; c < p; ++c) data.features(i, c) = normal(engine);
    const double prob = sigmoid(data.features.row(i).dot(theta_star));
    data.labels(i) = unif(engine) < prob ? 1.0 : 0.0;
  }
  return data;
}

void validate_dataset(const LogisticDataset& data) {
  if (data.size() < 1 || data.num_features() < 1) throw Error("dataset needs n >= 1 and p >= 1");
  if (static_cast<std::size_t>(data.labels.size()) != data.size()) throw ShapeError("one label per row required");
  for (Eigen::Index i = 0; i < data.labels.size(); ++i) {
    if (data.labels(i) != 0.0 && data.labels(i) != 1.0) {
      throw Error(fmt::format("label in row {} is {}, expected 0 or 1", i + 1, data.labels(i)));
    }
  }
  if (!data.features.allFinite()) throw NonFiniteError("dataset features must be finite");
  if (!(data.prior_variance > 0.0)) throw Error("prior variance must be positive");
}

Vector mfvi_default_theta_star() {
  Vector t(4);
  t << -1.0, 1.0, 0.3, -0.3;
  return t;
}

ProblemSpec mfvi_problem(const LogisticDataset& data) {
  validate_dataset(data);
  const auto x = std::make_shared<const Eigen::MatrixXd>(data.features);
  const auto y = std::make_shared<const Vector>(data.labels);
  const double inv_var = 1.0 / data.prior_variance;
  const std::size_t p = data.num_features();

  ProblemSpec spec;
  spec.name = "mfvi";
  spec.m = p;
  spec.dims.assign(p, 1);
  spec.entropies.assign(p, EntropySpec::neg_self_entropy());
  spec.interactions.assign(p, InteractionSpec{});
  spec.potential.value = [x, y, inv_var](std::span<const double> theta) {
    const Eigen::Map<const Vector> t(theta.data(), static_cast<Eigen::Index>(theta.size()));
    const Vector z = *x * t;
    double v = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) v += softplus(z(i)) - (*y)(i) * z(i);
    return v + 0.5 * inv_var * t.squaredNorm();
  };
  spec.potential.block_gradient = [x, y, inv_var](std::size_t j, std::span<const double> theta) {
    const Eigen::Map<const Vector> t(theta.data(), static_cast<Eigen::Index>(theta.size()));
    const Vector z = *x * t;
    double g = 0.0;
    const auto col = static_cast<Eigen::Index>(j);
    for (Eigen::Index i = 0; i < z.size(); ++i) g += (sigmoid(z(i)) - (*y)(i)) * (*x)(i, col);
    Vector out(1);
    out(0) = g + inv_var * t(col);
    return out;
  };

  // Cross-block Lipschitz bound from sigmoid' <= 1/4.
  double L = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < x->rows(); ++i) {
      const double rest = std::sqrt(std::max(0.0, x->row(i).squaredNorm() - (*x)(i, col) * (*x)(i, col)));
      sum += std::abs((*x)(i, col)) * rest;
    }
    L = std::max(L, 0.25 * sum);
    if (x->col(col).cwiseAbs().maxCoeff() == 0.0) {
      spec.notes.push_back(fmt::format("feature column {} is identically zero", j));
    }
  }
  if (L > 0.0) spec.potential.lipschitz_L = L;
  return spec;
}

ProblemSpec species_problem(const SpeciesSystem& sys) {
  constexpr std::size_t m = SpeciesSystem::m;
  constexpr std::size_t d = 2;
  const SpeciesSystem s = sys;
  if (!(s.alpha > 0.0)) throw Error("species alpha must be positive");
  if (s.beta < 0.0) throw Error("species beta must be non-negative");

  ProblemSpec spec;
  spec.name = "species";
  spec.m = m;
  spec.dims.assign(m, d);
  if (s.alpha < 1.0) {
    spec.notes.push_back(fmt::format("species alpha = {} < 1: convexity of the objective is not guaranteed", s.alpha));
  }

  spec.potential.value = [s](std::span<const double> x) {
    double v = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double dx = x[2 * j] - s.centers[j][0];
      const double dy = x[2 * j + 1] - s.centers[j][1];
      v += 0.5 * s.alpha * s.stiffness[j] * (dx * dx + dy * dy);
      if (s.super_quartic) {
        const double r2 = x[2 * j] * x[2 * j] + x[2 * j + 1] * x[2 * j + 1];
        v += 0.25 * r2 * r2;
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = i + 1; j < m; ++j) {
        const double dx = x[2 * i] - x[2 * j];
        const double dy = x[2 * i + 1] - x[2 * j + 1];
        v -= 0.5 * s.charges[i] * s.charges[j] * std::atan(dx * dx + dy * dy);
      }
    }
    return v;
  };
  spec.potential.block_gradient = [s](std::size_t j, std::span<const double> x) {
    Vector g(2);
    const double xj = x[2 * j];
    const double yj = x[2 * j + 1];
    g(0) = s.alpha * s.stiffness[j] * (xj - s.centers[j][0]);
    g(1) = s.alpha * s.stiffness[j] * (yj - s.centers[j][1]);
    if (s.super_quartic) {
      const double r2 = xj * xj + yj * yj;
      g(0) += r2 * xj;
      g(1) += r2 * yj;
    }
    for (std::size_t i = 0; i < m; ++i) {
      if (i == j) continue;
      const double dx = xj - x[2 * i];
      const double dy = yj - x[2 * i + 1];
      const double r2 = dx * dx + dy * dy;
      const double c = -s.charges[i] * s.charges[j] / (1.0 + r2 * r2);
      g(0) += c * dx;
      g(1) += c * dy;
    }
    return g;
  };
  // |Jacobian of y / (1 + |y|^4)| <= 1, so each pair contributes |Q_i Q_j|.
  double L = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (i != j) sum += std::abs(s.charges[i] * s.charges[j]);
    }
    L = std::max(L, sum);
  }
  spec.potential.lipschitz_L = L;

  for (std::size_t j = 0; j < m; ++j) {
    if (s.super_quartic) {
      spec.entropies.push_back(EntropySpec::neg_self_entropy());
    } else if (s.beta > 0.0) {
      spec.entropies.push_back(EntropySpec::power(2, s.beta));
    } else {
      spec.entropies.push_back(EntropySpec::none());
    }
    const double q2 = s.charges[j] * s.charges[j];
    const double c = s.kernel == SpeciesKernel::Display ? -0.25 * q2 : 0.5 * q2;
    InteractionSpec w;
    w.kernel = [c](std::span<const double> a, std::span<const double> b) {
      const double dx = a[0] - b[0];
      const double dy = a[1] - b[1];
      return c * std::atan(dx * dx + dy * dy);
    };
    w.grad1 = [c](std::span<const double> a, std::span<const double> b, std::span<double> out) {
      const double dx = a[0] - b[0];
      const double dy = a[1] - b[1];
      const double r2 = dx * dx + dy * dy;
      const double f = 2.0 * c / (1.0 + r2 * r2);
      out[0] = f * dx;
      out[1] = f * dy;
    };
    w.grad2 = [c](std::span<const double> a, std::span<const double> b, std::span<double> out) {
      const double dx = a[0] - b[0];
      const double dy = a[1] - b[1];
      const double r2 = dx * dx + dy * dy;
      const double f = -2.0 * c / (1.0 + r2 * r2);
      out[0] = f * dx;
      out[1] = f * dy;
    };
    spec.interactions.push_back(std::move(w));
  }
  return spec;
}

std::array<double, 3> species_convexity_margin(const SpeciesSystem& sys) {
  std::array<double, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) {
    double others = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      if (j != i) others += std::abs(sys.charges[j]);
    }
    const double q = sys.charges[i];
    out[i] = sys.alpha * sys.stiffness[i] - 4.0 * q * q - std::abs(q) * others;
  }
  return out;
}

ProblemSpec quadratic_product_problem(std::size_t m, double alpha) {
  if (m < 1) throw Error("quadratic problem needs m >= 1");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw Error(fmt::format("quadratic alpha must lie in [0, 1), got {}", alpha));
  ProblemSpec spec;
  spec.name = "quadratic";
  spec.m = m;
  spec.dims.assign(m, 1);
  spec.entropies.assign(m, EntropySpec::none());
  spec.interactions.assign(m, InteractionSpec{});
  spec.quadratic_alpha = alpha;
  spec.potential.value = [alpha](std::span<const double> x) {
    double sq = 0.0, sum = 0.0;
    for (double v : x) {
      sq += v * v;
      sum += v;
    }
    return 0.5 * (1.0 - alpha) * sq + 0.5 * alpha * sum * sum;
  };
  spec.potential.block_gradient = [alpha](std::size_t j, std::span<const double> x) {
    double sum = 0.0;
    for (double v : x) sum += v;
    Vector g(1);
    g(0) = (1.0 - alpha) * x[j] + alpha * sum;
    return g;
  };
  const double L = alpha * std::sqrt(static_cast<double>(m) - 1.0);
  if (L > 0.0) spec.potential.lipschitz_L = L;
  spec.analytic_reference = [m](std::size_t count, std::uint64_t) {
    BlockState ref;
    for (std::size_t j = 0; j < m; ++j) ref.blocks.emplace_back(Matrix::Zero(static_cast<Eigen::Index>(count), 1));
    return ref;
  };
  return spec;
}

ProblemSpec gaussian_mfvi_problem(const std::vector<std::size_t>& dims, const std::vector<double>& precisions) {
  if (dims.empty() || dims.size() != precisions.size()) {
    throw ShapeError("gaussian problem needs one precision per block");
  }
  for (double p : precisions) {
    if (!(p > 0.0)) throw Error(fmt::format("precision must be positive, got {}", p));
  }
  for (std::size_t d : dims) {
    if (d < 1) throw ShapeError("block dimensions must be positive");
  }
  ProblemSpec spec;
  spec.name = "gaussian";
  spec.m = dims.size();
  spec.dims = dims;
  spec.entropies.assign(spec.m, EntropySpec::neg_self_entropy());
  spec.interactions.assign(spec.m, InteractionSpec{});
  std::vector<std::size_t> offsets(spec.m, 0);
  for (std::size_t j = 1; j < spec.m; ++j) offsets[j] = offsets[j - 1] + dims[j - 1];
  spec.potential.value = [dims, precisions, offsets](std::span<const double> x) {
    double v = 0.0;
    for (std::size_t j = 0; j < dims.size(); ++j) {
      double sq = 0.0;
      for (std::size_t c = 0; c < dims[j]; ++c) sq += x[offsets[j] + c] * x[offsets[j] + c];
      v += 0.5 * precisions[j] * sq;
    }
    return v;
  };
  spec.potential.block_gradient = [dims, precisions, offsets](std::size_t j, std::span<const double> x) {
    Vector g(static_cast<Eigen::Index>(dims[j]));
    for (std::size_t c = 0; c < dims[j]; ++c) g(static_cast<Eigen::Index>(c)) = precisions[j] * x[offsets[j] + c];
    return g;
  };
  spec.analytic_reference = [dims, precisions](std::size_t count, std::uint64_t seed) {
    BlockState ref;
    Engine engine(seed);
    std::normal_distribution<double> normal;
    for (std::size_t j = 0; j < dims.size(); ++j) {
      const double var = 1.0 / precisions[j];
      if (dims[j] == 1) {
        ref.blocks.push_back(gaussian_quantile_ensemble(count, var));
        continue;
      }
      Matrix pts(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dims[j]));
      for (Eigen::Index b = 0; b < pts.rows(); ++b) {
        for (Eigen::Index c = 0; c < pts.cols(); ++c) pts(b, c) = std::sqrt(var) * normal(engine);
      }
      ref.blocks.emplace_back(std::move(pts));
    }
    return ref;
  };
  return spec;
}

BlockState sample_initial(const ProblemSpec& problem, std::size_t count, double mean, double std_dev,
                          std::uint64_t seed) {
  if (count < 1) throw Error("particle count must be at least 1");
  if (std_dev < 0.0) throw Error("initial standard deviation must be non-negative");
  Engine engine(seed);
  std::normal_distribution<double> normal;
  BlockState state;
  for (std::size_t j = 0; j < problem.m; ++j) {
    Matrix pts(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(problem.dims[j]));
    for (Eigen::Index b = 0; b < pts.rows(); ++b) {
      for (Eigen::Index c = 0; c < pts.cols(); ++c) pts(b, c) = mean + std_dev * normal(engine);
    }
    state.blocks.emplace_back(std::move(pts));
  }
  return state;
}

BlockState point_state(const std::vector<double>& values) {
  BlockState state;
  for (double v : values) state.blocks.push_back(ParticleEnsemble::scalar({v}));
  return state;
}

}  // namespace wpcg
