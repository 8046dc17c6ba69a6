#include <doctest.h>

#include <cmath>
#include <limits>

#include <boost/math/distributions/binomial.hpp>

#include "helpers.hpp"
#include "wpcg/problems.hpp"
#include "wpcg/proximal_steps.hpp"
#include "wpcg/schedulers.hpp"

using namespace wpcg;
using namespace wpcg::test;

namespace {

SchemeConfig euclidean(Scheme scheme, double tau, std::size_t iterations) {
  SchemeConfig c;
  c.scheme = scheme;
  c.tau = tau;
  c.iterations = iterations;
  c.solver = EuclideanClosedForm{};
  return c;
}

DiagnosticsConfig objective_only() {
  DiagnosticsConfig d;
  d.first_variation = false;
  d.foc = false;
  d.w2 = false;
  return d;
}

Eigen::VectorXd as_vector(const BlockState& s) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(s.num_blocks()));
  for (std::size_t j = 0; j < s.num_blocks(); ++j) v(static_cast<Eigen::Index>(j)) = s.blocks[j].points()(0, 0);
  return v;
}

bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

bool same_records(const std::vector<RunRecord>& a, const std::vector<RunRecord>& b) {
  if (a.size() != b.size()) return false;
  auto same_list = [](const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!same(x[i], y[i])) return false;
    }
    return true;
  };
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].k != b[i].k || !same(a[i].objective, b[i].objective) || !same(a[i].w2sq_total, b[i].w2sq_total) ||
        !same_list(a[i].w2sq_block, b[i].w2sq_block) || !same_list(a[i].fv_var_block, b[i].fv_var_block) ||
        !same_list(a[i].foc_block, b[i].foc_block)) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("default_batch_M examples") {
  CHECK(default_batch_M(3, 2.0) == 11);
  CHECK(default_batch_M(1, std::exp(1.0)) == 2);
  CHECK_THROWS(default_batch_M(2, 0.4));
}

TEST_CASE("step size guard for the parallel scheme") {
  const ProblemSpec p = isotropic_quadratic(3, 1, 1.0, EntropySpec::none());  // L = 1
  SchemeConfig c;
  c.scheme = Parallel{};
  CHECK(parallel_step_bound(3, 1.0) == doctest::Approx(2.5 / std::pow(2.0, 1.5)));
  c.tau = 0.5;
  CHECK(step_size_guard(c, p).empty());
  c.tau = 1.0;
  CHECK_FALSE(step_size_guard(c, p).empty());
  c.scheme = Sequential{};
  CHECK(step_size_guard(c, p).empty());
  c.scheme = Random{};
  CHECK(step_size_guard(c, p).empty());

  const ProblemSpec one = isotropic_quadratic(1, 1, 1.0, EntropySpec::none());
  c.scheme = Parallel{};
  c.tau = 1e6;
  CHECK(std::isinf(parallel_step_bound(1, 1.0)));
  CHECK(step_size_guard(c, one).empty());
}

TEST_CASE("iteration plans") {
  Engine engine(1);
  const auto par = plan_iteration(Parallel{}, 3, 0, engine);
  CHECK(par.against_snapshot());
  CHECK(par.updates == std::vector<std::size_t>{0, 1, 2});
  const auto seq = plan_iteration(Sequential{}, 3, 0, engine);
  CHECK_FALSE(seq.against_snapshot());
  CHECK(seq.updates == std::vector<std::size_t>{0, 1, 2});
  const auto rnd = plan_iteration(Random{}, 3, 11, engine);
  CHECK(rnd.updates.size() == 11);
  for (auto j : rnd.updates) CHECK(j < 3);
}

TEST_CASE("random scheme covering over 200 seeded iterations") {
  const std::size_t m = 3;
  const double L = 2.0;
  const std::size_t M = default_batch_M(m, L);
  Engine engine(derive_seed(2718, streams::kScheme));
  const std::size_t trials = 200;
  std::size_t skipped = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto plan = plan_iteration(Random{}, m, M, engine);
    std::vector<bool> seen(m, false);
    for (auto j : plan.updates) seen[j] = true;
    skipped += std::find(seen.begin(), seen.end(), false) != seen.end();
  }
  const double upper = boost::math::binomial_distribution<>::find_upper_bound_on_p(
      static_cast<double>(trials), static_cast<double>(skipped), 0.01);
  CHECK(upper <= 2.0 / (static_cast<double>(m) * L * L));
}

TEST_CASE("parallel run follows the matrix iteration") {
  const std::size_t m = 3;
  const double alpha = 0.5, tau = 1.0;
  const ProblemSpec p = quadratic_product_problem(m, alpha);
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(m, m);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(m, m);
  const Eigen::MatrixXd a = (eye - alpha * tau * (ones - eye)) / (1.0 + tau);
  for (const auto& x0 : {std::vector<double>{1, 1, 1}, std::vector<double>{0.3, -2.0, 5.0}}) {
    WpcgRunner runner(p, point_state(x0), euclidean(Parallel{}, tau, 50), std::nullopt, objective_only());
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(x0.data(), static_cast<Eigen::Index>(m));
    while (!runner.done()) {
      runner.step();
      x = a * x;
      CHECK((as_vector(runner.state()) - x).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("parallel iterates decay at the spectral radius") {
  const ProblemSpec p = quadratic_product_problem(3, 0.5);
  WpcgRunner runner(p, point_state({0.3, -2.0, 5.0}), euclidean(Parallel{}, 1.0, 100), std::nullopt,
                    objective_only());
  runner.step();  // removes the component along the zero eigenvalue
  double prev = as_vector(runner.state()).norm();
  while (!runner.done()) {
    runner.step();
    const double norm = as_vector(runner.state()).norm();
    CHECK(std::abs(norm / prev - 0.75) <= 1e-9);
    prev = norm;
  }
}

TEST_CASE("sequential run sees the blocks updated earlier in the sweep") {
  const ProblemSpec p = quadratic_product_problem(3, 0.4);
  BlockState manual = point_state({1.0, -1.0, 2.0});
  const RunResult r = run_wpcg(p, manual, euclidean(Sequential{}, 0.8, 5), std::nullopt, objective_only());
  for (int k = 0; k < 5; ++k) {
    for (std::size_t j = 0; j < 3; ++j) manual.blocks[j] = euclidean_prox_step(p, manual, j, 0.8);
  }
  CHECK((as_vector(r.final_state) - as_vector(manual)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sequential and random schemes decrease the objective") {
  const ProblemSpec p = quadratic_product_problem(4, 0.7);
  for (const Scheme& scheme : {Scheme{Sequential{}}, Scheme{Random{}}}) {
    SchemeConfig c = euclidean(scheme, 5.0, 40);  // far above the parallel bound
    c.seed = 3;
    const RunResult r = run_wpcg(p, point_state({1.0, -3.0, 2.0, 0.5}), c, std::nullopt, objective_only());
    double prev = p.potential.value(std::vector<double>{1.0, -3.0, 2.0, 0.5});
    for (const auto& rec : r.records) {
      CHECK(rec.objective <= prev);
      prev = rec.objective;
    }
  }
}

TEST_CASE("records are numbered and the initial state is untouched") {
  const ProblemSpec p = gaussian_mfvi_problem({1, 1}, {1.0, 4.0});
  const BlockState initial = sample_initial(p, 50, 0.0, 3.0, 1);
  const BlockState copy = initial;
  SchemeConfig c;
  c.tau = 0.05;
  c.iterations = 7;
  DiagnosticsConfig d;
  d.every = 3;
  const RunResult r = run_wpcg(p, initial, c, p.analytic_reference(50, 0), d);
  REQUIRE(r.records.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) CHECK(r.records[i].k == i + 1);
  CHECK(std::isnan(r.records[0].objective));
  CHECK(std::isfinite(r.records[2].objective));
  CHECK(std::isfinite(r.records[6].w2sq_total));
  CHECK(std::isfinite(r.records[5].fv_var_block[1]));
  for (std::size_t j = 0; j < 2; ++j) CHECK(initial.blocks[j].points() == copy.blocks[j].points());
  CHECK(r.final_state.iteration == 7);
}

TEST_CASE("sequential and parallel coincide for a single block") {
  const ProblemSpec p = gaussian_mfvi_problem({1}, {2.0});
  const BlockState initial = sample_initial(p, 80, 0.0, 2.0, 5);
  SchemeConfig c;
  c.tau = 0.05;
  c.iterations = 20;
  c.seed = 77;
  c.scheme = Parallel{};
  const RunResult par = run_wpcg(p, initial, c, p.analytic_reference(80, 0));
  c.scheme = Sequential{};
  const RunResult seq = run_wpcg(p, initial, c, p.analytic_reference(80, 0));
  CHECK(par.final_state.blocks[0].points() == seq.final_state.blocks[0].points());
  CHECK(same_records(par.records, seq.records));
}

TEST_CASE("runs are bit-identical for a fixed seed") {
  SUBCASE("sde") {
    const ProblemSpec p = gaussian_mfvi_problem({1, 2}, {1.0, 4.0});
    const BlockState initial = sample_initial(p, 100, 0.0, 2.0, 9);
    SchemeConfig c;
    c.scheme = Random{3};
    c.tau = 0.05;
    c.iterations = 10;
    c.seed = 1234;
    const RunResult a = run_wpcg(p, initial, c, p.analytic_reference(100, 0));
    const RunResult b = run_wpcg(p, initial, c, p.analytic_reference(100, 0));
    CHECK(same_records(a.records, b.records));
    for (std::size_t j = 0; j < 2; ++j) CHECK(a.final_state.blocks[j].points() == b.final_state.blocks[j].points());
    c.seed = 1235;
    const RunResult other = run_wpcg(p, initial, c, p.analytic_reference(100, 0));
    CHECK(other.final_state.blocks[0].points() != a.final_state.blocks[0].points());
  }
  SUBCASE("fa on the parallel scheme") {
    SpeciesSystem sys;
    const ProblemSpec p = species_problem(sys);
    const BlockState initial = sample_initial(p, 70, 0.0, 1.0, 10);  // above the threading threshold
    SchemeConfig c;
    c.scheme = Parallel{};
    c.tau = 0.05;
    c.iterations = 3;
    c.seed = 42;
    FaConfig fa;
    fa.hidden_widths = {8};
    fa.inner_iterations = 20;
    fa.inner_step = 1e-2;
    c.solver = FaSolver{fa};
    const RunResult a = run_wpcg(p, initial, c);
    const RunResult b = run_wpcg(p, initial, c);
    CHECK(same_records(a.records, b.records));
    for (std::size_t j = 0; j < 3; ++j) CHECK(a.final_state.blocks[j].points() == b.final_state.blocks[j].points());
  }
}

TEST_CASE("divergent steps abort with the iteration index") {
  const ProblemSpec p = quadratic_product_problem(3, 0.9);
  WpcgRunner runner(p, point_state({1.0, 2.0, 3.0}), euclidean(Parallel{}, 3.0, 500), std::nullopt,
                    objective_only());
  std::size_t aborted_at = 0;
  try {
    while (!runner.done()) runner.step();
  } catch (const RunAborted& e) {
    aborted_at = e.iteration();
  }
  CHECK(aborted_at > 0);
  CHECK(runner.records().size() == aborted_at - 1);
}

TEST_CASE("non-finite iterates abort the run") {
  ProblemSpec p = isotropic_quadratic(1, 1, 1.0, EntropySpec::none());
  p.potential.block_gradient = [](std::size_t, std::span<const double> x) {
    Vector g(1);
    g(0) = x[0] > 2.0 ? std::numeric_limits<double>::quiet_NaN() : -1.0;
    return g;
  };
  SchemeConfig c;
  c.tau = 1.0;
  c.iterations = 10;
  try {
    run_wpcg(p, single(ParticleEnsemble::scalar({0.5})), c, std::nullopt, objective_only());
    FAIL("expected an abort");
  } catch (const RunAborted& e) {
    CHECK(e.iteration() == 3);  // 0.5 -> 1.5 -> 2.5 -> NaN
  }
}
