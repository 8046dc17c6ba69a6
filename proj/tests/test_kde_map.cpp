#include <doctest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "wpcg/kde.hpp"
#include "wpcg/transport_map.hpp"

using namespace wpcg;
using namespace wpcg::test;

TEST_CASE("kde peak of a single kernel") {
  Matrix origin = Matrix::Zero(1, 2);
  const std::vector<double> q{0.0, 0.0};
  CHECK(kde_density(ParticleEnsemble(origin), KdeConfig::fixed(1.0), q) ==
        doctest::Approx(1.0 / (2.0 * std::numbers::pi)).epsilon(1e-14));
}

TEST_CASE("kde far from the support is negligible") {
  const auto pts = ParticleEnsemble::scalar({0.0, 0.5, 1.0});
  const std::vector<double> q{40.0};
  CHECK(kde_density(pts, KdeConfig::fixed(1.0), q) < 1e-12);
  const Kde kde(pts, KdeConfig::fixed(1.0));
  CHECK(std::isfinite(kde.log_density(q)));
  CHECK(kde.log_density(q) == doctest::Approx(-0.5 * 39.0 * 39.0 - 0.5 * std::log(2 * std::numbers::pi) - std::log(3.0)).epsilon(1e-9));
}

TEST_CASE("silverman kde recovers the standard normal density at zero") {
  const auto sample = normal_sample(5000, 1, 1.0, 21);
  const std::vector<double> q{0.0};
  const double expected = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  CHECK(std::abs(kde_density(sample, KdeConfig::silverman(), q) - expected) < 0.1 * expected);
}

TEST_CASE("silverman bandwidth formula and degenerate ensembles") {
  const auto sample = normal_sample(400, 2, 1.0, 22);
  const auto& x = sample.points();
  double s = 0.0;
  for (Eigen::Index c = 0; c < 2; ++c) {
    const double mean = x.col(c).mean();
    s += std::sqrt((x.col(c).array() - mean).square().sum() / (x.rows() - 1));
  }
  s /= 2.0;
  CHECK(silverman_bandwidth(sample) == doctest::Approx(s * std::pow(4.0 / (4.0 * 400.0), 1.0 / 6.0)).epsilon(1e-12));
  CHECK_THROWS(silverman_bandwidth(ParticleEnsemble::scalar({2.0, 2.0, 2.0})));
  CHECK_THROWS(Kde(sample, KdeConfig::fixed(0.0)));
}

TEST_CASE("kde integrates to one") {
  const auto sample = normal_sample(300, 1, 1.5, 23);
  const Kde kde(sample, KdeConfig::silverman());
  const double h = kde.bandwidth();
  const double lo = sample.points().minCoeff() - 6.0 * h;
  const double hi = sample.points().maxCoeff() + 6.0 * h;
  const int n = 20000;
  const double dx = (hi - lo) / n;
  double integral = 0.0;
  for (int i = 0; i <= n; ++i) {
    const std::vector<double> q{lo + i * dx};
    integral += (i == 0 || i == n ? 0.5 : 1.0) * kde.density(q);
  }
  CHECK(std::abs(integral * dx - 1.0) < 0.01);
}

TEST_CASE("kde gradients match finite differences") {
  const auto sample = normal_sample(50, 2, 1.0, 24);
  const Kde kde(sample, KdeConfig::fixed(0.6));
  const std::vector<double> q{0.3, -0.4};
  const Vector fd_density = fd_gradient([&](std::span<const double> x) { return kde.density(x); }, q);
  const Vector fd_log = fd_gradient([&](std::span<const double> x) { return kde.log_density(x); }, q);
  CHECK((kde.density_gradient(q) - fd_density).norm() < 1e-8);
  CHECK((kde.score(q) - fd_log).norm() < 1e-7);
}

namespace {

TransportMapModel random_model(std::size_t d, std::vector<std::size_t> hidden, double scale, Engine& engine) {
  TransportMapModel model = TransportMapModel::identity_init(d, hidden, engine);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (Eigen::Index i = 0; i < model.parameters().size(); ++i) model.parameters()(i) += u(engine);
  return model;
}

Eigen::MatrixXd fd_jacobian(const TransportMapModel& model, std::vector<double> x, double h = 1e-6) {
  const std::size_t d = x.size();
  Eigen::MatrixXd j(d, d);
  for (std::size_t c = 0; c < d; ++c) {
    const double x0 = x[c];
    x[c] = x0 + h;
    const Vector up = map_forward(model, x);
    x[c] = x0 - h;
    const Vector down = map_forward(model, x);
    x[c] = x0;
    j.col(static_cast<Eigen::Index>(c)) = (up - down) / (2.0 * h);
  }
  return j;
}

}  // namespace

TEST_CASE("zero parameters give the identity map") {
  const TransportMapModel model({2, 8, 8, 2});
  const std::vector<double> x{1.5, -0.25};
  const Vector y = map_forward(model, x);
  CHECK(y(0) == 1.5);
  CHECK(y(1) == -0.25);
  const LogDet ld = map_jacobian_logdet(model, x);
  CHECK(ld.log_abs_det == 0.0);
  CHECK(ld.sign == 1);
}

TEST_CASE("identity init is exactly the identity with exactly zero log-det") {
  Engine engine(4);
  const auto model = TransportMapModel::identity_init(3, {16, 16}, engine);
  std::normal_distribution<double> n;
  for (int t = 0; t < 10; ++t) {
    const std::vector<double> x{n(engine), n(engine), n(engine)};
    const Vector y = map_forward(model, x);
    for (int c = 0; c < 3; ++c) CHECK(y(c) == x[static_cast<std::size_t>(c)]);
    CHECK(map_jacobian_logdet(model, x).log_abs_det == 0.0);
  }
}

TEST_CASE("a single linear layer 0.5 x maps to 1.5 x") {
  TransportMapModel model({2, 2});
  model.weight(0) = 0.5 * Eigen::MatrixXd::Identity(2, 2);
  const std::vector<double> x{2.0, -4.0};
  const Vector y = map_forward(model, x);
  CHECK(y(0) == doctest::Approx(3.0));
  CHECK(y(1) == doctest::Approx(-6.0));
  const LogDet ld = map_jacobian_logdet(model, x);
  CHECK(ld.log_abs_det == doctest::Approx(2.0 * std::log(1.5)).epsilon(1e-14));
  CHECK(ld.sign == 1);
}

TEST_CASE("map Jacobian matches finite differences on random models") {
  Engine engine(31);
  std::normal_distribution<double> n;
  for (int t = 0; t < 20; ++t) {
    const auto model = random_model(3, {8, 8}, 0.4, engine);
    const std::vector<double> x{n(engine), n(engine), n(engine)};
    const Eigen::MatrixXd exact = map_jacobian(model, x);
    const Eigen::MatrixXd fd = fd_jacobian(model, x);
    CHECK((exact - fd).norm() <= 1e-4 * exact.norm());
    const LogDet ld = map_jacobian_logdet(model, x);
    const double det = fd.determinant();
    CHECK(ld.sign == (det > 0 ? 1 : -1));
    CHECK(std::abs(ld.log_abs_det - std::log(std::abs(det))) < 1e-3);
  }
}

TEST_CASE("singular Jacobian is an error") {
  TransportMapModel model({2, 2});
  model.weight(0) = -Eigen::MatrixXd::Identity(2, 2);
  const std::vector<double> x{1.0, 1.0};
  CHECK_THROWS(map_jacobian_logdet(model, x));
  CHECK_THROWS(map_forward(model, std::vector<double>{1.0}));
}

TEST_CASE("batch forward agrees with the pointwise evaluation") {
  Engine engine(32);
  const auto model = random_model(2, {6, 5}, 0.5, engine);
  const auto pts = normal_sample(7, 2, 1.0, 3);
  const MapBatch batch = forward_batch(model, pts.points(), true);
  for (std::size_t b = 0; b < 7; ++b) {
    const Vector y = map_forward(model, pts.particle(b));
    CHECK((batch.outputs.col(static_cast<Eigen::Index>(b)) - y).norm() < 1e-13);
    const Eigen::MatrixXd j = map_jacobian(model, pts.particle(b));
    CHECK((batch.jacobians.middleCols(static_cast<Eigen::Index>(2 * b), 2) - j).norm() < 1e-13);
  }
}

TEST_CASE("backward pass matches finite differences of a scalar loss") {
  // loss = sum_b <c_b, T(X_b)> + sum_b log det J_b
  Engine engine(33);
  auto model = random_model(2, {6, 5}, 0.3, engine);
  const auto pts = normal_sample(5, 2, 1.0, 4);
  const Eigen::MatrixXd c = Eigen::MatrixXd::Random(2, 5);
  auto loss = [&](const TransportMapModel& m) {
    double total = 0.0;
    for (std::size_t b = 0; b < 5; ++b) {
      total += c.col(static_cast<Eigen::Index>(b)).dot(map_forward(m, pts.particle(b)));
      total += map_jacobian_logdet(m, pts.particle(b)).log_abs_det;
    }
    return total;
  };
  const MapBatch batch = forward_batch(model, pts.points(), true);
  Eigen::MatrixXd grad_j(2, 10);
  for (Eigen::Index b = 0; b < 5; ++b) {
    grad_j.middleCols(2 * b, 2) = batch.jacobians.middleCols(2 * b, 2).inverse().transpose();
  }
  const Vector analytic = backward_batch(model, batch, c, grad_j);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < model.parameters().size(); ++i) {
    const double p0 = model.parameters()(i);
    model.parameters()(i) = p0 + h;
    const double up = loss(model);
    model.parameters()(i) = p0 - h;
    const double down = loss(model);
    model.parameters()(i) = p0;
    CHECK(analytic(i) == doctest::Approx((up - down) / (2 * h)).epsilon(1e-5).scale(1.0));
  }
}
