#include "wpcg/transport_map.hpp"

#include <cmath>

#include <fmt/format.h>

namespace wpcg {

TransportMapModel::TransportMapModel(std::vector<std::size_t> layer_sizes)
    : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw ShapeError("transport map needs at least input and output sizes");
  if (sizes_.front() != sizes_.back()) {
    throw ShapeError("transport map input and output sizes must both equal the block dimension");
  }
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] == 0 || sizes_[l + 1] == 0) throw ShapeError("layer sizes must be positive");
    weight_offset_.push_back(offset);
    offset += sizes_[l + 1] * sizes_[l];
    bias_offset_.push_back(offset);
    offset += sizes_[l + 1];
  }
  params_ = Vector::Zero(static_cast<Eigen::Index>(offset));
  shift_ = Vector::Zero(static_cast<Eigen::Index>(dim()));
}

TransportMapModel TransportMapModel::identity_init(std::size_t dim,
                                                   const std::vector<std::size_t>& hidden_widths,
                                                   Engine& engine) {
  std::vector<std::size_t> sizes{dim};
  sizes.insert(sizes.end(), hidden_widths.begin(), hidden_widths.end());
  sizes.push_back(dim);
  TransportMapModel model(std::move(sizes));
  for (std::size_t l = 0; l + 1 < model.num_layers(); ++l) {
    const double fan = static_cast<double>(model.sizes_[l] + model.sizes_[l + 1]);
    std::uniform_real_distribution<double> uniform(-std::sqrt(6.0 / fan), std::sqrt(6.0 / fan));
    auto w = model.weight(l);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = uniform(engine);
    }
  }
  return model;
}

TransportMapModel::WeightMap TransportMapModel::weight(std::size_t layer) {
  return {params_.data() + weight_offset_[layer], static_cast<Eigen::Index>(sizes_[layer + 1]),
          static_cast<Eigen::Index>(sizes_[layer])};
}

TransportMapModel::ConstWeightMap TransportMapModel::weight(std::size_t layer) const {
  return {params_.data() + weight_offset_[layer], static_cast<Eigen::Index>(sizes_[layer + 1]),
          static_cast<Eigen::Index>(sizes_[layer])};
}

TransportMapModel::BiasMap TransportMapModel::bias(std::size_t layer) {
  return {params_.data() + bias_offset_[layer], static_cast<Eigen::Index>(sizes_[layer + 1])};
}

TransportMapModel::ConstBiasMap TransportMapModel::bias(std::size_t layer) const {
  return {params_.data() + bias_offset_[layer], static_cast<Eigen::Index>(sizes_[layer + 1])};
}

void TransportMapModel::set_input_normalization(Vector shift, double scale) {
  if (static_cast<std::size_t>(shift.size()) != dim()) throw ShapeError("normalization shift has wrong length");
  if (!(scale > 0.0)) throw Error("normalization scale must be positive");
  shift_ = std::move(shift);
  scale_ = scale;
}

void TransportMapModel::shrink_output(double factor) {
  const std::size_t last = num_layers() - 1;
  weight(last) *= factor;
  bias(last) *= factor;
}

MapBatch forward_batch(const TransportMapModel& model, const Matrix& points, bool with_jacobian) {
  const auto d = static_cast<Eigen::Index>(model.dim());
  if (points.cols() != d) throw ShapeError("points dimension does not match the transport map");
  const Eigen::Index count = points.rows();
  const std::size_t hidden = model.num_layers() - 1;

  MapBatch batch;
  batch.count = static_cast<std::size_t>(count);
  batch.with_jacobian = with_jacobian;
  const Eigen::MatrixXd x = points.transpose();
  batch.activations.reserve(hidden + 1);
  batch.activations.push_back((x.colwise() - model.input_shift()) / model.input_scale());
  for (std::size_t l = 0; l < hidden; ++l) {
    Eigen::MatrixXd z = model.weight(l) * batch.activations.back();
    z.colwise() += model.bias(l);
    Eigen::MatrixXd h = z.array().tanh().matrix();
    batch.slopes.push_back((1.0 - h.array().square()).matrix());
    batch.activations.push_back(std::move(h));
  }
  batch.outputs = model.weight(hidden) * batch.activations.back();
  batch.outputs.colwise() += model.bias(hidden);
  batch.outputs += x;

  if (with_jacobian) {
    Eigen::MatrixXd q0(d, count * d);
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d) / model.input_scale();
    for (Eigen::Index b = 0; b < count; ++b) q0.middleCols(b * d, d) = eye;
    batch.chain_post.push_back(std::move(q0));
    for (std::size_t l = 0; l < hidden; ++l) {
      Eigen::MatrixXd r = model.weight(l) * batch.chain_post.back();
      Eigen::MatrixXd q(r.rows(), r.cols());
      const auto& s = batch.slopes[l];
      for (Eigen::Index b = 0; b < count; ++b) {
        for (Eigen::Index c = 0; c < d; ++c) q.col(b * d + c) = r.col(b * d + c).cwiseProduct(s.col(b));
      }
      batch.chain_pre.push_back(std::move(r));
      batch.chain_post.push_back(std::move(q));
    }
    batch.jacobians = model.weight(hidden) * batch.chain_post.back();
    for (Eigen::Index b = 0; b < count; ++b) {
      batch.jacobians.middleCols(b * d, d) += Eigen::MatrixXd::Identity(d, d);
    }
  }
  return batch;
}

Vector backward_batch(const TransportMapModel& model, const MapBatch& batch,
                      const Eigen::MatrixXd& grad_outputs, const Eigen::MatrixXd& grad_jacobians) {
  const auto d = static_cast<Eigen::Index>(model.dim());
  const auto count = static_cast<Eigen::Index>(batch.count);
  const std::size_t hidden = model.num_layers() - 1;
  const bool jac = batch.with_jacobian && grad_jacobians.size() > 0;
  if (grad_outputs.rows() != d || grad_outputs.cols() != count) {
    throw ShapeError("grad_outputs must be d x B");
  }
  if (jac && (grad_jacobians.rows() != d || grad_jacobians.cols() != count * d)) {
    throw ShapeError("grad_jacobians must be d x (B d)");
  }

  TransportMapModel grad_model(model.layer_sizes());
  grad_model.weight(hidden).noalias() = grad_outputs * batch.activations[hidden].transpose();
  grad_model.bias(hidden) = grad_outputs.rowwise().sum();
  Eigen::MatrixXd grad_h = model.weight(hidden).transpose() * grad_outputs;

  Eigen::MatrixXd grad_q;
  if (jac) {
    grad_model.weight(hidden).noalias() += grad_jacobians * batch.chain_post[hidden].transpose();
    grad_q = model.weight(hidden).transpose() * grad_jacobians;
  }

  for (std::size_t l = hidden; l-- > 0;) {
    const auto& h = batch.activations[l + 1];
    const auto& s = batch.slopes[l];
    Eigen::MatrixXd grad_z = grad_h.cwiseProduct(s);
    if (jac) {
      const auto& r = batch.chain_pre[l];
      Eigen::MatrixXd grad_slope = Eigen::MatrixXd::Zero(s.rows(), count);
      Eigen::MatrixXd grad_r(grad_q.rows(), grad_q.cols());
      for (Eigen::Index b = 0; b < count; ++b) {
        for (Eigen::Index c = 0; c < d; ++c) {
          const Eigen::Index col = b * d + c;
          grad_slope.col(b) += grad_q.col(col).cwiseProduct(r.col(col));
          grad_r.col(col) = grad_q.col(col).cwiseProduct(s.col(b));
        }
      }
      // d tanh'(z) / dz = -2 tanh(z) tanh'(z)
      grad_z.array() -= 2.0 * grad_slope.array() * h.array() * s.array();
      grad_model.weight(l).noalias() += grad_r * batch.chain_post[l].transpose();
      if (l > 0) grad_q = model.weight(l).transpose() * grad_r;
    }
    grad_model.weight(l).noalias() += grad_z * batch.activations[l].transpose();
    grad_model.bias(l) += grad_z.rowwise().sum();
    if (l > 0) grad_h = model.weight(l).transpose() * grad_z;
  }
  return std::move(grad_model.parameters());
}

namespace {

Matrix single_row(const TransportMapModel& model, std::span<const double> x) {
  if (x.size() != model.dim()) {
    throw ShapeError(fmt::format("point has length {}, transport map expects {}", x.size(), model.dim()));
  }
  Matrix row(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t c = 0; c < x.size(); ++c) row(0, static_cast<Eigen::Index>(c)) = x[c];
  return row;
}

}  // namespace

Vector map_forward(const TransportMapModel& model, std::span<const double> x) {
  return forward_batch(model, single_row(model, x), false).outputs.col(0);
}

Eigen::MatrixXd map_jacobian(const TransportMapModel& model, std::span<const double> x) {
  return forward_batch(model, single_row(model, x), true).jacobians;
}

LogDet map_jacobian_logdet(const TransportMapModel& model, std::span<const double> x) {
  if (model.dim() > kMaxLogDetDim) {
    throw Error(fmt::format("log-determinant supports d <= {}", kMaxLogDetDim));
  }
  const Eigen::MatrixXd jac = map_jacobian(model, x);
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
  const Eigen::MatrixXd& packed = lu.matrixLU();
  LogDet out;
  out.sign = static_cast<int>(lu.permutationP().determinant());
  for (Eigen::Index i = 0; i < packed.rows(); ++i) {
    const double u = packed(i, i);
    if (u == 0.0) throw Error("transport map Jacobian is singular");
    if (u < 0.0) out.sign = -out.sign;
    out.log_abs_det += std::log(std::abs(u));
  }
  if (out.log_abs_det < std::log(1e-300)) throw Error("transport map Jacobian is singular");
  return out;
}

}  // namespace wpcg
