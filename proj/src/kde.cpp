#include "wpcg/kde.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace wpcg {

double silverman_bandwidth(const ParticleEnsemble& points) {
  const auto count = static_cast<double>(points.count());
  const auto d = static_cast<double>(points.dim());
  double sigma = 0.0;
  if (points.count() > 1) {
    const Matrix& x = points.points();
    const Eigen::RowVectorXd mean = x.colwise().mean();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double ss = (x.col(c).array() - mean(c)).square().sum();
      sigma += std::sqrt(ss / (count - 1.0));
    }
    sigma /= d;
  }
  const double h = sigma * std::pow(4.0 / ((d + 2.0) * count), 1.0 / (d + 4.0));
  if (!(h > 0.0) || !std::isfinite(h)) {
    throw Error("Silverman bandwidth is not positive (degenerate ensemble); use a Fixed bandwidth");
  }
  return h;
}

double resolve_bandwidth(const ParticleEnsemble& points, const KdeConfig& cfg) {
  if (cfg.rule == KdeConfig::Rule::Fixed) {
    if (!(cfg.fixed_h > 0.0)) throw Error("KDE bandwidth must be positive");
    return cfg.fixed_h;
  }
  return silverman_bandwidth(points);
}

Kde::Kde(const ParticleEnsemble& points, const KdeConfig& cfg)
    : points_(points.points()), h_(resolve_bandwidth(points, cfg)) {
  const auto d = static_cast<double>(points_.cols());
  log_norm_ = -0.5 * d * std::log(2.0 * std::numbers::pi * h_ * h_) -
              std::log(static_cast<double>(points_.rows()));
}

namespace {

double squared_distance(const Matrix& points, Eigen::Index b, std::span<const double> q) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < points.cols(); ++c) {
    const double diff = q[static_cast<std::size_t>(c)] - points(b, c);
    s += diff * diff;
  }
  return s;
}

void check_query(const Matrix& points, std::span<const double> q) {
  if (q.size() != static_cast<std::size_t>(points.cols())) {
    throw ShapeError("KDE query dimension does not match ensemble dimension");
  }
}

}  // namespace

double Kde::density(std::span<const double> query) const {
  check_query(points_, query);
  const double inv = 1.0 / (2.0 * h_ * h_);
  double sum = 0.0;
  for (Eigen::Index b = 0; b < points_.rows(); ++b) {
    sum += std::exp(-squared_distance(points_, b, query) * inv);
  }
  return std::exp(log_norm_) * sum;
}

double Kde::log_density(std::span<const double> query) const {
  check_query(points_, query);
  const double inv = 1.0 / (2.0 * h_ * h_);
  std::vector<double> expo(static_cast<std::size_t>(points_.rows()));
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index b = 0; b < points_.rows(); ++b) {
    expo[static_cast<std::size_t>(b)] = -squared_distance(points_, b, query) * inv;
    top = std::max(top, expo[static_cast<std::size_t>(b)]);
  }
  double sum = 0.0;
  for (double e : expo) sum += std::exp(e - top);
  return log_norm_ + top + std::log(sum);
}

Vector Kde::density_gradient(std::span<const double> query) const {
  check_query(points_, query);
  const double inv = 1.0 / (2.0 * h_ * h_);
  const double scale = std::exp(log_norm_) / (h_ * h_);
  Vector grad = Vector::Zero(points_.cols());
  for (Eigen::Index b = 0; b < points_.rows(); ++b) {
    const double w = std::exp(-squared_distance(points_, b, query) * inv);
    for (Eigen::Index c = 0; c < points_.cols(); ++c) {
      grad(c) += w * (points_(b, c) - query[static_cast<std::size_t>(c)]);
    }
  }
  return grad * scale;
}

Vector Kde::score(std::span<const double> query) const {
  check_query(points_, query);
  // Softmax weights over kernels; stable when the query is far from the data.
  const double inv = 1.0 / (2.0 * h_ * h_);
  std::vector<double> expo(static_cast<std::size_t>(points_.rows()));
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index b = 0; b < points_.rows(); ++b) {
    expo[static_cast<std::size_t>(b)] = -squared_distance(points_, b, query) * inv;
    top = std::max(top, expo[static_cast<std::size_t>(b)]);
  }
  Vector num = Vector::Zero(points_.cols());
  double den = 0.0;
  for (Eigen::Index b = 0; b < points_.rows(); ++b) {
    const double w = std::exp(expo[static_cast<std::size_t>(b)] - top);
    den += w;
    for (Eigen::Index c = 0; c < points_.cols(); ++c) {
      num(c) += w * (points_(b, c) - query[static_cast<std::size_t>(c)]);
    }
  }
  return num / (den * h_ * h_);
}

double kde_density(const ParticleEnsemble& points, const KdeConfig& cfg,
                   std::span<const double> query) {
  return Kde(points, cfg).density(query);
}

}  // namespace wpcg
