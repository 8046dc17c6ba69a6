#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "wpcg/diagnostics.hpp"
#include "wpcg/ot.hpp"
#include "wpcg/problems.hpp"
#include "wpcg/schedulers.hpp"

using namespace wpcg;
using namespace wpcg::test;

namespace {

// Largest relative error between block_gradient and central differences of V
// over `points` random points.
double worst_gradient_error(const ProblemSpec& p, int points, std::uint64_t seed) {
  Engine engine(seed);
  std::normal_distribution<double> n(0.0, 1.5);
  double worst = 0.0;
  for (int t = 0; t < points; ++t) {
    std::vector<double> x(p.total_dim());
    for (double& v : x) v = n(engine);
    const Vector fd = fd_gradient(p.potential.value, x);
    for (std::size_t j = 0; j < p.m; ++j) {
      const Vector g = p.potential.block_gradient(j, x);
      const Vector ref = fd.segment(static_cast<Eigen::Index>(p.offset(j)), static_cast<Eigen::Index>(p.dims[j]));
      worst = std::max(worst, (g - ref).norm() / std::max(1.0, ref.norm()));
    }
  }
  return worst;
}

std::filesystem::path temp_file(const std::string& name, const std::string& body) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << body;
  return path;
}

}  // namespace

TEST_CASE("logistic potential at zero is log 2 for one datum") {
  LogisticDataset data;
  data.features = Eigen::MatrixXd::Ones(1, 1);
  data.labels = Vector::Ones(1);
  const ProblemSpec p = mfvi_problem(data);
  CHECK(p.m == 1);
  CHECK(p.potential.value(std::vector<double>{0.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(p.entropies[0].kind == EntropySpec::Kind::NegSelfEntropy);
}

TEST_CASE("logistic potential stays finite for extreme margins") {
  LogisticDataset data;
  data.features = Eigen::MatrixXd::Constant(1, 1, 1000.0);
  data.labels = Vector::Zero(1);
  const ProblemSpec p = mfvi_problem(data);
  CHECK(std::isfinite(p.potential.value(std::vector<double>{5.0})));
  CHECK(std::isfinite(p.potential.block_gradient(0, std::vector<double>{-5.0})(0)));
}

TEST_CASE("every factory's gradient matches finite differences") {
  CHECK(worst_gradient_error(mfvi_problem(LogisticDataset::synthetic(100, mfvi_default_theta_star(), 4.0, 3)), 20, 1) <
        1e-6);
  CHECK(worst_gradient_error(quadratic_product_problem(4, 0.6), 20, 2) < 1e-6);
  CHECK(worst_gradient_error(gaussian_mfvi_problem({1, 2, 3}, {1.0, 4.0, 0.5}), 20, 3) < 1e-6);
  for (bool quartic : {false, true}) {
    for (auto kernel : {SpeciesKernel::Display, SpeciesKernel::Convexity}) {
      SpeciesSystem sys;
      sys.alpha = 2.0;
      sys.super_quartic = quartic;
      sys.kernel = kernel;
      CHECK(worst_gradient_error(species_problem(sys), 20, 4) < 1e-6);
    }
  }
}

TEST_CASE("interaction kernel gradients match finite differences") {
  SpeciesSystem sys;
  for (auto kernel : {SpeciesKernel::Display, SpeciesKernel::Convexity}) {
    sys.kernel = kernel;
    const ProblemSpec p = species_problem(sys);
    Engine engine(6);
    std::normal_distribution<double> n;
    for (std::size_t j = 0; j < 3; ++j) {
      const auto& w = p.interactions[j];
      REQUIRE(w.active());
      for (int t = 0; t < 20; ++t) {
        const std::vector<double> a{n(engine), n(engine)}, b{n(engine), n(engine)};
        std::vector<double> g1(2), g2(2);
        w.grad1(a, b, g1);
        w.grad2(a, b, g2);
        const Vector fd1 = fd_gradient([&](std::span<const double> x) { return w.kernel(x, b); }, a);
        const Vector fd2 = fd_gradient([&](std::span<const double> x) { return w.kernel(a, x); }, b);
        for (int c = 0; c < 2; ++c) {
          CHECK(g1[static_cast<std::size_t>(c)] == doctest::Approx(fd1(c)).epsilon(1e-6).scale(1.0));
          CHECK(g2[static_cast<std::size_t>(c)] == doctest::Approx(fd2(c)).epsilon(1e-6).scale(1.0));
        }
      }
    }
  }
}

TEST_CASE("logistic potential is convex") {
  const ProblemSpec p = mfvi_problem(LogisticDataset::synthetic(100, mfvi_default_theta_star(), 4.0, 7));
  Engine engine(8);
  std::normal_distribution<double> n(0.0, 2.0);
  const double h = 1e-5;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> x(4);
    for (double& v : x) v = n(engine);
    Eigen::MatrixXd hess(4, 4);
    for (std::size_t c = 0; c < 4; ++c) {
      std::vector<double> up = x, down = x;
      up[c] += h;
      down[c] -= h;
      for (std::size_t r = 0; r < 4; ++r) {
        hess(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            (p.potential.block_gradient(r, up)(0) - p.potential.block_gradient(r, down)(0)) / (2 * h);
      }
    }
    const Eigen::MatrixXd sym = 0.5 * (hess + hess.transpose());
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sym).eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("logistic Lipschitz bound and degenerate columns") {
  LogisticDataset data = LogisticDataset::synthetic(30, mfvi_default_theta_star(), 4.0, 9);
  double expected = 0.0;
  for (Eigen::Index j = 0; j < 4; ++j) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < 30; ++i) {
      Eigen::RowVectorXd rest = data.features.row(i);
      rest(j) = 0.0;
      s += std::abs(data.features(i, j)) * rest.norm();
    }
    expected = std::max(expected, 0.25 * s);
  }
  const ProblemSpec p = mfvi_problem(data);
  REQUIRE(p.potential.lipschitz_L.has_value());
  CHECK(*p.potential.lipschitz_L == doctest::Approx(expected).epsilon(1e-12));
  CHECK(p.notes.empty());

  data.features.col(2).setZero();
  CHECK_FALSE(mfvi_problem(data).notes.empty());
}

TEST_CASE("synthetic datasets are seeded and binary") {
  const auto a = LogisticDataset::synthetic(40, mfvi_default_theta_star(), 4.0, 5);
  const auto b = LogisticDataset::synthetic(40, mfvi_default_theta_star(), 4.0, 5);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
  for (Eigen::Index i = 0; i < 40; ++i) CHECK((a.labels(i) == 0.0 || a.labels(i) == 1.0));
  CHECK(mfvi_default_theta_star().size() == 4);
}

TEST_CASE("dataset csv loading and validation") {
  const auto good = temp_file("wpcg_good.csv", "x1,x2,y\n1.0,2.0,1\n-0.5,0.25,0\n");
  const auto data = LogisticDataset::load_csv(good.string(), 2.0);
  CHECK(data.size() == 2);
  CHECK(data.num_features() == 2);
  CHECK(data.features(1, 1) == 0.25);
  CHECK(data.labels(0) == 1.0);
  CHECK(data.prior_variance == 2.0);

  CHECK_THROWS(LogisticDataset::load_csv(temp_file("wpcg_labels.csv", "x,y\n1.0,2\n").string()));
  CHECK_THROWS(LogisticDataset::load_csv(temp_file("wpcg_ragged.csv", "x1,x2,y\n1.0,1\n").string()));
  CHECK_THROWS(LogisticDataset::load_csv(temp_file("wpcg_empty.csv", "x,y\n").string()));
  CHECK_THROWS(LogisticDataset::load_csv("/nonexistent/wpcg.csv"));
}

TEST_CASE("species potential is stationary at the centers without charges") {
  SpeciesSystem sys;
  sys.beta = 0.0;
  sys.charges = {0.0, 0.0, 0.0};
  const ProblemSpec p = species_problem(sys);
  std::vector<double> x;
  for (const auto& c : sys.centers) x.insert(x.end(), c.begin(), c.end());
  for (std::size_t j = 0; j < 3; ++j) CHECK(p.potential.block_gradient(j, x).norm() == 0.0);
  CHECK(p.entropies[0].kind == EntropySpec::Kind::None);
}

TEST_CASE("species entropy selection") {
  SpeciesSystem sys;
  sys.beta = 2.0;
  ProblemSpec p = species_problem(sys);
  CHECK(p.entropies[1].kind == EntropySpec::Kind::Power);
  CHECK(p.entropies[1].exponent == 2);
  CHECK(p.entropies[1].coefficient == 2.0);
  sys.super_quartic = true;
  p = species_problem(sys);
  CHECK(p.entropies[1].kind == EntropySpec::Kind::NegSelfEntropy);
  CHECK(p.potential.lipschitz_L == doctest::Approx(1.5));
}

TEST_CASE("species convexity margin arithmetic") {
  const auto margin = species_convexity_margin(SpeciesSystem{});
  CHECK(margin[0] == doctest::Approx(0.5));
  CHECK(margin[1] == doctest::Approx(1.5));
  CHECK(margin[2] == doctest::Approx(1.0));
  SpeciesSystem weak;
  weak.alpha = 0.5;
  CHECK_FALSE(species_problem(weak).notes.empty());
  CHECK(species_problem(SpeciesSystem{}).notes.empty());
}

TEST_CASE("arctan kernel gradient has Jacobian norm at most one") {
  // Convexity form with unit charge: grad1 W(x, 0) = x / (1 + |x|^4).
  SpeciesSystem sys;
  sys.kernel = SpeciesKernel::Convexity;
  const ProblemSpec p = species_problem(sys);
  const auto& w = p.interactions[0];
  const std::vector<double> origin{0.0, 0.0};
  auto r = [&](const std::vector<double>& x) {
    std::vector<double> g(2);
    w.grad1(x, origin, g);
    return g;
  };
  const double h = 1e-6;
  double sup = 0.0;
  for (int a = -60; a <= 60; ++a) {
    for (int b = -60; b <= 60; ++b) {
      const std::vector<double> x{a * 0.05, b * 0.05};
      Eigen::Matrix2d jac;
      for (int c = 0; c < 2; ++c) {
        auto up = x, down = x;
        up[static_cast<std::size_t>(c)] += h;
        down[static_cast<std::size_t>(c)] -= h;
        const auto gu = r(up), gd = r(down);
        jac(0, c) = (gu[0] - gd[0]) / (2 * h);
        jac(1, c) = (gu[1] - gd[1]) / (2 * h);
      }
      sup = std::max(sup, Eigen::JacobiSVD<Eigen::Matrix2d>(jac).singularValues()(0));
    }
  }
  CHECK(sup <= 1.0 + 1e-6);
  CHECK(sup > 0.99);  // attained at the origin
}

TEST_CASE("quadratic family") {
  const ProblemSpec p = quadratic_product_problem(3, 0.5);
  REQUIRE(p.potential.lipschitz_L.has_value());
  CHECK(*p.potential.lipschitz_L == doctest::Approx(0.5 * std::sqrt(2.0)).epsilon(1e-15));
  CHECK(p.quadratic_alpha == 0.5);
  const std::vector<double> origin{0.0, 0.0, 0.0};
  CHECK(p.potential.value(origin) == 0.0);
  for (std::size_t j = 0; j < 3; ++j) CHECK(p.potential.block_gradient(j, origin)(0) == 0.0);

  const ProblemSpec decoupled = quadratic_product_problem(2, 0.0);
  CHECK(decoupled.potential.block_gradient(0, std::vector<double>{2.0, 7.0})(0) == 2.0);
  CHECK(decoupled.potential.value(std::vector<double>{2.0, 1.0}) == 2.5);
  CHECK_FALSE(decoupled.potential.lipschitz_L.has_value());

  CHECK_THROWS(quadratic_product_problem(3, 1.0));
  CHECK_THROWS(quadratic_product_problem(3, -0.1));
  const BlockState ref = p.analytic_reference(1, 0);
  for (const auto& b : ref.blocks) CHECK(b.points()(0, 0) == 0.0);
}

TEST_CASE("gaussian references have the stationary variances") {
  const ProblemSpec p = gaussian_mfvi_problem({1, 1}, {1.0, 4.0});
  const BlockState ref = p.analytic_reference(2000, 0);
  CHECK(sample_variance(ref.blocks[0]) == doctest::Approx(1.0).epsilon(0.01));
  CHECK(sample_variance(ref.blocks[1]) == doctest::Approx(0.25).epsilon(0.01));
  CHECK_THROWS(gaussian_mfvi_problem({1}, {0.0}));
  CHECK_THROWS(gaussian_mfvi_problem({1, 1}, {1.0}));
}

TEST_CASE("two-block Gaussian W2 decreases monotonically under the sequential scheme") {
  const std::size_t B = 2000;
  const ProblemSpec p = gaussian_mfvi_problem({1, 1}, {1.0, 4.0});
  const BlockState initial = sample_initial(p, B, 0.0, 3.0, 31);
  const BlockState ref = p.analytic_reference(B, 0);
  // Closed form for centred 1-D Gaussians: W2^2(N(0,a^2), N(0,b^2)) = (a - b)^2.
  const double start = (3.0 - 1.0) * (3.0 - 1.0) + (3.0 - 0.5) * (3.0 - 0.5);
  CHECK(product_w2_squared(w2sq_to_reference(initial, ref)) == doctest::Approx(start).epsilon(0.05));

  SchemeConfig c;
  c.scheme = Sequential{};
  c.tau = 0.01;
  c.iterations = 150;  // stays inside the transient, above the sampling floor
  c.seed = 31;
  DiagnosticsConfig d;
  d.every = 15;
  d.objective = d.first_variation = d.foc = false;
  const RunResult r = run_wpcg(p, initial, c, ref, d);
  double prev = start * 1.05;
  for (const auto& rec : r.records) {
    if (std::isnan(rec.w2sq_total)) continue;
    CHECK(rec.w2sq_total < prev);
    prev = rec.w2sq_total;
  }
  CHECK(prev < 0.1 * start);
}

TEST_CASE("initial sampling and point states") {
  const ProblemSpec p = gaussian_mfvi_problem({2, 1}, {1.0, 1.0});
  const BlockState a = sample_initial(p, 10, 1.0, 2.0, 4);
  const BlockState b = sample_initial(p, 10, 1.0, 2.0, 4);
  CHECK(a.blocks[0].points() == b.blocks[0].points());
  CHECK(a.blocks[0].dim() == 2);
  CHECK(a.blocks[1].count() == 10);
  const BlockState pts = point_state({1.0, 2.0});
  CHECK(pts.num_blocks() == 2);
  CHECK(pts.count() == 1);
  CHECK(pts.blocks[1].points()(0, 0) == 2.0);
}
