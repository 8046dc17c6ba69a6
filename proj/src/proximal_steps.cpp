#include "wpcg/proximal_steps.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "wpcg/kde.hpp"

namespace wpcg {

CompanionPlan::CompanionPlan(const ProblemSpec& problem, const BlockState& context, std::size_t block,
                             std::size_t draws, Engine& engine)
    : problem_(&problem), context_(&context), block_(block) {
  const std::size_t count = context.count();
  draws_ = std::clamp<std::size_t>(draws, 1, count);
  perms_.resize(problem.m);
  for (std::size_t i = 0; i < problem.m; ++i) {
    if (i == block) continue;
    perms_[i].resize(count);
    std::iota(perms_[i].begin(), perms_[i].end(), std::size_t{0});
    std::shuffle(perms_[i].begin(), perms_[i].end(), engine);
  }
}

void CompanionPlan::fill(std::size_t b, std::size_t r, std::span<double> point) const {
  const std::size_t count = context_->count();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < problem_->m; ++i) {
    const std::size_t d = problem_->dims[i];
    if (i != block_) {
      const auto src = context_->blocks[i].particle(perms_[i][(b + r) % count]);
      std::copy(src.begin(), src.end(), point.begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += d;
  }
}

Matrix marginal_gradients(const ProblemSpec& problem, const CompanionPlan& plan, const Matrix& positions) {
  const std::size_t j = plan.block();
  const auto d = static_cast<Eigen::Index>(problem.dims[j]);
  const std::size_t offset = problem.offset(j);
  Matrix out = Matrix::Zero(positions.rows(), d);
  std::vector<double> point(problem.total_dim());
  for (Eigen::Index b = 0; b < positions.rows(); ++b) {
    std::copy_n(positions.row(b).data(), d, point.begin() + static_cast<std::ptrdiff_t>(offset));
    for (std::size_t r = 0; r < plan.draws(); ++r) {
      plan.fill(static_cast<std::size_t>(b), r, point);
      out.row(b) += problem.potential.block_gradient(j, point).transpose();
    }
  }
  out /= static_cast<double>(plan.draws());
  return out;
}

Matrix interaction_gradients(const InteractionSpec& interaction, const Matrix& points) {
  const Eigen::Index count = points.rows();
  const Eigen::Index d = points.cols();
  Matrix out = Matrix::Zero(count, d);
  if (!interaction.active()) return out;
  std::vector<double> g(static_cast<std::size_t>(d));
  for (Eigen::Index b = 0; b < count; ++b) {
    const std::span<const double> xb(points.row(b).data(), static_cast<std::size_t>(d));
    for (Eigen::Index c = 0; c < count; ++c) {
      const std::span<const double> xc(points.row(c).data(), static_cast<std::size_t>(d));
      interaction.grad1(xb, xc, g);
      for (Eigen::Index k = 0; k < d; ++k) out(b, k) += g[static_cast<std::size_t>(k)];
      interaction.grad2(xc, xb, g);
      for (Eigen::Index k = 0; k < d; ++k) out(b, k) += g[static_cast<std::size_t>(k)];
    }
  }
  out /= static_cast<double>(count);
  return out;
}

ParticleEnsemble sde_block_step(const ProblemSpec& problem, const BlockState& state, std::size_t block,
                                double tau, Engine& engine, std::size_t n_grad) {
  if (!(tau > 0.0)) throw Error("step size tau must be positive");
  const auto& entropy = problem.entropies[block];
  if (entropy.kind == EntropySpec::Kind::Power && entropy.active()) {
    throw Error("SDE requires negative self-entropy (or no internal energy)");
  }
  const Matrix& x = state.blocks[block].points();
  const CompanionPlan plan(problem, state, block, n_grad, engine);
  Matrix drift = marginal_gradients(problem, plan, x);
  drift += interaction_gradients(problem.interactions[block], x);
  Matrix next = x - tau * drift;
  if (entropy.active()) {
    const double scale = std::sqrt(2.0 * tau * entropy.coefficient);
    std::normal_distribution<double> normal;
    for (Eigen::Index b = 0; b < next.rows(); ++b) {
      for (Eigen::Index c = 0; c < next.cols(); ++c) next(b, c) += scale * normal(engine);
    }
  }
  return ParticleEnsemble(std::move(next));
}

FaObjective::FaObjective(const ProblemSpec& problem, const BlockState& state, std::size_t block, double tau,
                         const FaConfig& config, const CompanionPlan& plan)
    : problem_(problem),
      plan_(plan),
      block_(block),
      tau_(tau),
      inputs_(state.blocks[block].points()),
      entropy_(problem.entropies[block]),
      interaction_(problem.interactions[block]) {
  if (!(tau > 0.0)) throw Error("step size tau must be positive");
  if (entropy_.active() && problem.dims[block] > kMaxLogDetDim) {
    throw Error(fmt::format("FA entropy terms support block dimension <= {}", kMaxLogDetDim));
  }
  if (entropy_.kind == EntropySpec::Kind::Power && entropy_.active()) {
    // Bandwidth frozen at the input ensemble for the whole inner loop.
    const Kde kde(state.blocks[block], config.kde);
    log_density_.resize(static_cast<std::size_t>(inputs_.rows()));
    for (Eigen::Index b = 0; b < inputs_.rows(); ++b) {
      log_density_[static_cast<std::size_t>(b)] = kde.log_density(state.blocks[block].particle(static_cast<std::size_t>(b)));
    }
  }
}

double FaObjective::evaluate(const TransportMapModel& model, Vector* gradient, bool need_value) const {
  const Eigen::Index count = inputs_.rows();
  const auto d = static_cast<Eigen::Index>(problem_.dims[block_]);
  const double inv_b = 1.0 / static_cast<double>(count);
  const bool with_entropy = entropy_.active();
  const MapBatch batch = forward_batch(model, inputs_, with_entropy);
  const Eigen::MatrixXd& out = batch.outputs;  // d x B
  if (!out.allFinite()) throw NonFiniteError("transport map produced non-finite positions");

  Eigen::MatrixXd grad_out = Eigen::MatrixXd::Zero(d, count);
  double loss = 0.0;

  // Potential through the companion estimator.
  const std::size_t offset = problem_.offset(block_);
  std::vector<double> point(problem_.total_dim());
  for (Eigen::Index b = 0; b < count; ++b) {
    std::copy_n(out.col(b).data(), d, point.begin() + static_cast<std::ptrdiff_t>(offset));
    for (std::size_t r = 0; r < plan_.draws(); ++r) {
      plan_.fill(static_cast<std::size_t>(b), r, point);
      if (need_value) loss += problem_.potential.value(point) * inv_b / static_cast<double>(plan_.draws());
      if (gradient) {
        grad_out.col(b) += problem_.potential.block_gradient(block_, point) * (inv_b / static_cast<double>(plan_.draws()));
      }
    }
  }

  // Proximity to the current ensemble.
  const Eigen::MatrixXd disp = out - inputs_.transpose();
  if (need_value) loss += disp.squaredNorm() * inv_b / (2.0 * tau_);
  if (gradient) grad_out += disp * (inv_b / tau_);

  // Self-interaction double sum.
  if (interaction_.active()) {
    const Matrix moved = out.transpose();
    if (need_value) {
      double sum = 0.0;
      for (Eigen::Index b = 0; b < count; ++b) {
        const std::span<const double> xb(moved.row(b).data(), static_cast<std::size_t>(d));
        for (Eigen::Index c = 0; c < count; ++c) {
          sum += interaction_.kernel(xb, std::span<const double>(moved.row(c).data(), static_cast<std::size_t>(d)));
        }
      }
      loss += sum * inv_b * inv_b;
    }
    if (gradient) grad_out += interaction_gradients(interaction_, moved).transpose() * inv_b;
  }

  // Internal energy through the Jacobian determinants.
  Eigen::MatrixXd grad_jac;
  if (with_entropy) {
    if (gradient) grad_jac.resize(d, count * d);
    for (Eigen::Index b = 0; b < count; ++b) {
      double sign = 1.0;
      double logdet = 0.0;
      // inverse transpose of the Jacobian block, filled below
      Eigen::Matrix2d small_inv_t;
      Eigen::MatrixXd general_inv_t;
      if (d == 1) {
        const double j = batch.jacobians(0, b);
        sign = j > 0.0 ? 1.0 : -1.0;
        logdet = std::log(std::abs(j));
        small_inv_t(0, 0) = 1.0 / j;
      } else if (d == 2) {
        const auto jac = batch.jacobians.middleCols(b * 2, 2);
        const double det = jac(0, 0) * jac(1, 1) - jac(0, 1) * jac(1, 0);
        sign = det > 0.0 ? 1.0 : -1.0;
        logdet = std::log(std::abs(det));
        small_inv_t << jac(1, 1) / det, -jac(1, 0) / det, -jac(0, 1) / det, jac(0, 0) / det;
      } else {
        const Eigen::MatrixXd jac = batch.jacobians.middleCols(b * d, d);
        const Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
        const Eigen::MatrixXd& packed = lu.matrixLU();
        sign = lu.permutationP().determinant();
        for (Eigen::Index i = 0; i < d; ++i) {
          const double u = packed(i, i);
          if (u <= 0.0) sign = u == 0.0 ? 0.0 : -sign;
          logdet += std::log(std::abs(u));
        }
        if (sign > 0.0 && gradient) general_inv_t = lu.inverse().transpose();
      }
      if (!(sign > 0.0) || !std::isfinite(logdet) || logdet < std::log(1e-300)) {
        throw NonInjectiveMapError(fmt::format("transport map Jacobian determinant is not positive at particle {}", b));
      }
      double coeff = 0.0;  // d loss / d logdet, per particle before the 1/B
      if (entropy_.kind == EntropySpec::Kind::NegSelfEntropy) {
        if (need_value) loss -= entropy_.coefficient * logdet * inv_b;
        coeff = -entropy_.coefficient;
      } else {
        const double n1 = static_cast<double>(entropy_.exponent - 1);
        const double q = std::exp(n1 * (log_density_[static_cast<std::size_t>(b)] - logdet));
        if (need_value) loss += entropy_.coefficient * q * inv_b;
        coeff = -entropy_.coefficient * n1 * q;
      }
      if (gradient) {
        if (d <= 2) {
          grad_jac.middleCols(b * d, d) = (coeff * inv_b) * small_inv_t.topLeftCorner(d, d);
        } else {
          grad_jac.middleCols(b * d, d) = (coeff * inv_b) * general_inv_t;
        }
      }
    }
  }

  if (gradient) *gradient = backward_batch(model, batch, grad_out, grad_jac);
  return loss;
}

namespace {

constexpr int kMaxHalvings = 5;

void normalize_inputs(TransportMapModel& model, const Matrix& x) {
  const Vector mean = x.colwise().mean().transpose();
  double scale = 0.0;
  if (x.rows() > 1) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      scale += std::sqrt((x.col(c).array() - mean(c)).square().mean());
    }
    scale /= static_cast<double>(x.cols());
  }
  model.set_input_normalization(mean, scale > 1e-12 ? scale : 1.0);
}

}  // namespace

FaStepResult fa_block_step(const ProblemSpec& problem, const BlockState& state, std::size_t block, double tau,
                           const FaConfig& config, Engine& engine, const std::optional<TransportMapModel>& warm,
                           std::size_t n_grad) {
  if (!(tau > 0.0)) throw Error("step size tau must be positive");
  if (config.inner_iterations < 1) throw Error("fa.inner_iterations must be at least 1");
  const std::size_t d = problem.dims[block];

  std::vector<std::size_t> sizes{d};
  sizes.insert(sizes.end(), config.hidden_widths.begin(), config.hidden_widths.end());
  sizes.push_back(d);
  const bool reuse = warm && !config.reinit_each_step && warm->layer_sizes() == sizes;
  TransportMapModel model = reuse ? *warm : TransportMapModel::identity_init(d, config.hidden_widths, engine);
  if (reuse) model.shrink_output(config.warm_start_shrink);
  normalize_inputs(model, state.blocks[block].points());

  const CompanionPlan plan(problem, state, block, n_grad, engine);
  const FaObjective objective(problem, state, block, tau, config, plan);

  // Adam with bias correction.
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  const auto n = static_cast<Eigen::Index>(model.num_parameters());
  Vector first = Vector::Zero(n);
  Vector second = Vector::Zero(n);
  Vector grad(n);
  // A warm map is only known to be injective on the previous particles; pull
  // it further toward the identity (which always is) until it is valid here.
  for (int attempt = 0;; ++attempt) {
    try {
      objective.evaluate(model, &grad, false);
      break;
    } catch (const NonInjectiveMapError&) {
      if (attempt >= kMaxHalvings) {
        model.shrink_output(0.0);
      } else {
        model.shrink_output(0.5);
      }
    }
  }

  double step = config.inner_step;
  std::size_t halvings = 0;
  std::size_t t = 0;  // Adam step count since the moments were last reset
  bool reset_once = false;
  for (std::size_t it = 1; it <= config.inner_iterations; ++it) {
    ++t;
    const Vector next_first = kBeta1 * first + (1.0 - kBeta1) * grad;
    const Vector next_second = kBeta2 * second + (1.0 - kBeta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    const Vector direction =
        (next_first / c1).array() / ((next_second / c2).array().sqrt() + kEps);
    int failures = 0;
    bool moved_ok = false;
    while (failures <= kMaxHalvings) {
      TransportMapModel trial = model;
      trial.parameters() -= step * direction;
      Vector trial_grad(n);
      try {
        objective.evaluate(trial, &trial_grad, false);
      } catch (const NonInjectiveMapError&) {
        ++failures;
        step *= 0.5;
        ++halvings;
        continue;
      }
      model = std::move(trial);
      grad = std::move(trial_grad);
      moved_ok = true;
      break;
    }
    if (moved_ok) {
      first = next_first;
      second = next_second;
      reset_once = false;
      continue;
    }
    // Momentum kept pointing at the boundary: drop it and retry from the
    // current (valid) map once before giving up.
    if (reset_once) {
      throw NonInjectiveMapError(fmt::format(
          "transport map for block {} stays non-injective after {} step halvings", block, kMaxHalvings));
    }
    reset_once = true;
    first.setZero();
    second.setZero();
    t = 0;
  }

  const double loss = objective.evaluate(model, nullptr, true);
  const MapBatch batch = forward_batch(model, state.blocks[block].points(), false);
  Matrix moved = batch.outputs.transpose();
  return {ParticleEnsemble(std::move(moved)), std::move(model), loss, halvings};
}

ParticleEnsemble euclidean_prox_step(const ProblemSpec& problem, const BlockState& state, std::size_t block,
                                     double tau) {
  if (!problem.quadratic_alpha) throw Error("euclidean_prox_step requires a registered quadratic problem");
  if (state.count() != 1) throw Error("euclidean_prox_step requires point masses (B = 1)");
  if (!(tau > 0.0)) throw Error("step size tau must be positive");
  const double alpha = *problem.quadratic_alpha;
  double others = 0.0;
  for (std::size_t i = 0; i < problem.m; ++i) {
    if (i != block) others += state.blocks[i].points()(0, 0);
  }
  const double current = state.blocks[block].points()(0, 0);
  const double next = (current / tau - alpha * others) / (1.0 + 1.0 / tau);
  return ParticleEnsemble::scalar({next});
}

}  // namespace wpcg
