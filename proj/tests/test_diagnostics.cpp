#include <doctest.h>

#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "wpcg/diagnostics.hpp"
#include "wpcg/problems.hpp"
#include "wpcg/proximal_steps.hpp"
#include "wpcg/schedulers.hpp"

using namespace wpcg;
using namespace wpcg::test;

TEST_CASE("first-variation variance of a single particle is zero") {
  const ProblemSpec p = quadratic_product_problem(3, 0.5);
  CHECK(first_variation_variance(p, point_state({0.0, 0.0, 0.0}), 1, KdeConfig::fixed(1.0)) == 0.0);
}

TEST_CASE("first-variation variance is small for a flat density") {
  const ProblemSpec p = zero_problem(1, EntropySpec::neg_self_entropy());
  std::vector<double> grid;
  for (int i = 0; i <= 200; ++i) grid.push_back(i / 200.0);
  CHECK(first_variation_variance(p, single(ParticleEnsemble::scalar(grid)), 0, KdeConfig::fixed(1.0)) < 0.05);
}

TEST_CASE("first-variation variance ignores particle order and constant shifts of V") {
  SpeciesSystem sys;
  ProblemSpec p = species_problem(sys);
  const BlockState s = sample_initial(p, 60, 0.0, 1.5, 3);
  const FirstVariationOptions all{60, 5};
  const double base = first_variation_variance(p, s, 1, KdeConfig{}, all);

  BlockState reversed = s;
  reversed.blocks[1] = ParticleEnsemble(s.blocks[1].points().colwise().reverse());
  CHECK(first_variation_variance(p, reversed, 1, KdeConfig{}, all) == doctest::Approx(base).epsilon(1e-10));

  ProblemSpec shifted = p;
  shifted.potential.value = [v = p.potential.value](std::span<const double> x) { return v(x) + 123.0; };
  CHECK(first_variation_variance(shifted, s, 1, KdeConfig{}, all) == doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("first-variation variance decays along a Langevin run") {
  const ProblemSpec p = gaussian_mfvi_problem({1}, {1.0});
  for (std::uint64_t seed : {1, 2, 3}) {
    SchemeConfig c;
    c.tau = 0.01;
    c.iterations = 400;
    c.seed = seed;
    DiagnosticsConfig d;
    d.every = 25;
    d.objective = d.foc = d.w2 = false;
    const RunResult r = run_wpcg(p, sample_initial(p, 1000, 0.0, 3.0, seed), c, std::nullopt, d);
    // Sampled at k = 25, 50, 75, 100 (still in the transient) and at the end.
    const double initial = r.records[24].fv_var_block[0];
    CHECK(r.records[49].fv_var_block[0] < initial);
    CHECK(r.records[74].fv_var_block[0] < r.records[49].fv_var_block[0]);
    CHECK(r.records[99].fv_var_block[0] < r.records[74].fv_var_block[0]);
    CHECK(r.records.back().fv_var_block[0] < initial / 10.0);
  }
}

TEST_CASE("residual of the closed-form step vanishes") {
  const ProblemSpec p = quadratic_product_problem(3, 0.5);
  const BlockState x = point_state({0.4, -1.3, 2.2});
  for (std::size_t j = 0; j < 3; ++j) {
    for (double tau : {0.1, 1.0, 2.0}) {
      const auto moved = euclidean_prox_step(p, x, j, tau);
      CHECK(foc_residual(p, x, moved, j, tau, KdeConfig{}).norm <= 1e-12);
    }
  }
  SchemeConfig c;
  c.solver = EuclideanClosedForm{};
  c.tau = 1.0;
  c.iterations = 10;
  for (const Scheme& s : {Scheme{Parallel{}}, Scheme{Sequential{}}, Scheme{Random{}}}) {
    c.scheme = s;
    const bool every_block = !std::holds_alternative<Random>(s);
    for (const auto& rec : run_wpcg(p, x, c).records) {
      for (double f : rec.foc_block) {
        if (std::isnan(f)) CHECK_FALSE(every_block);  // block not drawn this iteration
        else CHECK(f <= 1e-12);
      }
    }
  }
}

TEST_CASE("residual reduces to the displacement as the step vanishes") {
  const ProblemSpec p = gaussian_mfvi_problem({2}, {1.0});
  const BlockState before = single(normal_sample(40, 2, 1.0, 6));
  const auto after = normal_sample(40, 2, 1.0, 7);
  const FocResidual r = foc_residual(p, before, after, 0, 1e-12, KdeConfig{});
  const Matrix displacement = before.blocks[0].points() - after.points();
  CHECK((r.field - displacement).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(r.norm * r.norm == doctest::Approx(displacement.squaredNorm() / 40.0).epsilon(1e-9));
  CHECK_THROWS(foc_residual(p, before, normal_sample(39, 2, 1.0, 8), 0, 0.1, KdeConfig{}));
}

TEST_CASE("a longer inner solve leaves a smaller residual") {
  const ProblemSpec p = gaussian_mfvi_problem({1}, {1.0});
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const BlockState s = single(normal_sample(200, 1, 3.0, seed));
    double norms[2];
    int i = 0;
    for (std::size_t inner : {1, 1000}) {
      FaConfig fa;
      fa.hidden_widths = {8};
      fa.inner_iterations = inner;
      fa.inner_step = 1e-2;
      Engine engine(seed);
      const auto r = fa_block_step(p, s, 0, 0.5, fa, engine);
      norms[i++] = foc_residual(p, s, r.ensemble, 0, 0.5, KdeConfig{}).norm;
    }
    CHECK(norms[0] > norms[1]);
  }
}

TEST_CASE("rate_slope examples") {
  std::vector<double> k, geometric, constant;
  for (int i = 0; i < 10; ++i) {
    k.push_back(i);
    geometric.push_back(3.0 * std::pow(0.5, i));
    constant.push_back(2.0);
  }
  const SlopeFit g = rate_slope(k, geometric);
  CHECK(g.slope == doctest::Approx(std::log(0.5)).epsilon(1e-12));
  CHECK(g.r_squared == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(rate_slope(k, constant).slope) < 1e-15);

  std::vector<double> scaled = geometric;
  for (double& v : scaled) v *= 1e7;
  CHECK(rate_slope(k, scaled).slope == doctest::Approx(g.slope).epsilon(1e-12));

  std::vector<double> bad = geometric;
  bad[3] = 0.0;
  try {
    rate_slope(k, bad);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("polynomial") != std::string::npos);
  }
  CHECK_THROWS(rate_slope(std::span(k).first(4), std::span(geometric).first(4)));
}

TEST_CASE("rate_slope over records skips unrecorded iterations") {
  std::vector<RunRecord> records;
  for (std::size_t i = 1; i <= 12; ++i) {
    RunRecord r;
    r.k = i;
    r.w2sq_total = i % 2 == 0 ? std::exp(-0.3 * static_cast<double>(i)) : kNotRecorded;
    records.push_back(r);
  }
  const SlopeFit fit = rate_slope(records, [](const RunRecord& r) { return r.w2sq_total; });
  CHECK(fit.slope == doctest::Approx(-0.3).epsilon(1e-12));
}

TEST_CASE("w2 to a reference, including point masses") {
  const BlockState s{{ParticleEnsemble::scalar({1.0, 3.0}), ParticleEnsemble::scalar({0.0, 0.0})}, 0};
  const BlockState point{{ParticleEnsemble::scalar({2.0}), ParticleEnsemble::scalar({1.0})}, 0};
  const auto w = w2sq_to_reference(s, point);
  CHECK(w[0] == doctest::Approx(1.0));
  CHECK(w[1] == doctest::Approx(1.0));
  const BlockState same{{ParticleEnsemble::scalar({3.0, 1.0}), ParticleEnsemble::scalar({0.0, 0.0})}, 0};
  const auto zero = w2sq_to_reference(s, same);
  CHECK(zero[0] == 0.0);
  CHECK(zero[1] == 0.0);
}

TEST_CASE("gaussian quantile ensemble") {
  const auto e = gaussian_quantile_ensemble(1001, 4.0);
  CHECK(e.count() == 1001);
  CHECK(std::abs(e.points().mean()) < 1e-12);
  CHECK(e.points()(500, 0) == doctest::Approx(0.0).scale(1.0));
  CHECK(e.points()(0, 0) == doctest::Approx(-e.points()(1000, 0)).epsilon(1e-12));
  CHECK(sample_variance(e) == doctest::Approx(4.0).epsilon(0.01));
}
