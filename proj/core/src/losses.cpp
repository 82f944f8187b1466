#include "fdac/losses.hpp"

#include "fdac/error.hpp"

#include <boost/random/beta_distribution.hpp>

#include <cmath>
#include <string>

namespace fdac {

namespace {

double clamped_log(double p) { return std::log(std::max(p, kLogClamp)); }

void require_unit_rows(const Matrix& m, const char* what) {
  if (!rows_unit_norm(m)) throw InputError(std::string(what) + " rows must be l2-normalized");
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw InputError(std::string(what) + " must be finite");
}

}  // namespace

ScalarLoss source_ce_loss(const Matrix& probabilities, std::span<const int> labels) {
  const Index n = probabilities.rows();
  if (static_cast<Index>(labels.size()) != n) throw InputError("label count does not match batch size");
  if (n == 0) throw InputError("cross-entropy needs a non-empty batch");
  ScalarLoss out{0.0, Matrix::Zero(n, probabilities.cols())};
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= probabilities.cols()) throw InputError("label out of range");
    const double p = probabilities(i, y);
    out.value -= clamped_log(p);
    if (p > kLogClamp) out.grad(i, y) = -1.0 / (p * static_cast<double>(n));
  }
  out.value /= static_cast<double>(n);
  return out;
}

ContrastiveLoss domain_aug_loss(const ContrastiveBatch& batch) {
  const Index n = batch.anchors.rows();
  if (n < 2) throw InputError("domain augmentation loss needs at least two samples (one negative)");
  if (!(batch.temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (batch.positives.empty()) throw InputError("domain augmentation loss needs at least one source");
  require_unit_rows(batch.anchors, "anchor");

  const double inv_tau = 1.0 / batch.temperature;
  const double inv_n = 1.0 / static_cast<double>(n);
  ContrastiveLoss out;
  out.grad_anchors = Matrix::Zero(n, batch.anchors.cols());
  for (const Matrix& source : batch.positives) {
    if (source.rows() != n || source.cols() != batch.anchors.cols()) {
      throw InputError("positive features must match the anchor shape");
    }
    require_unit_rows(source, "positive");
    const Matrix logits = (batch.anchors * source.transpose()) * inv_tau;
    const Vector row_max = logits.rowwise().maxCoeff();
    const Matrix shifted = logits.colwise() - row_max;
    const Vector log_norm = shifted.array().exp().rowwise().sum().log().matrix() + row_max;
    for (Index i = 0; i < n; ++i) out.value += (log_norm(i) - logits(i, i)) * inv_n;

    Matrix coeff = softmax_rows(logits);
    coeff.diagonal().array() -= 1.0;
    coeff *= inv_n;
    out.grad_anchors.noalias() += coeff * source * inv_tau;
    out.grad_positives.push_back(coeff.transpose() * batch.anchors * inv_tau);
  }
  return out;
}

PseudoLabelLoss pseudo_label_loss(const Matrix& probabilities, const PseudoLabelSet& labels) {
  PseudoLabelLoss out{0.0, Matrix::Zero(probabilities.rows(), probabilities.cols()), 0};
  if (labels.empty()) {
    out.empty_warnings = 1;
    return out;
  }
  const double inv = 1.0 / static_cast<double>(labels.entries().size());
  for (const auto& e : labels.entries()) {
    if (e.class_id < 0 || e.class_id >= probabilities.cols()) {
      throw InputError("pseudo label class " + std::to_string(e.class_id) + " out of range");
    }
    if (static_cast<Index>(e.sample_index) >= probabilities.rows()) {
      throw InputError("pseudo label refers to a row outside the batch");
    }
    const auto i = static_cast<Index>(e.sample_index);
    const double p = probabilities(i, e.class_id);
    out.value -= clamped_log(p) * inv;
    if (p > kLogClamp) out.grad(i, e.class_id) = -inv / p;
  }
  return out;
}

SemanticLoss semantic_matching_loss(const SemanticBatch& batch) {
  const Index n = batch.projections.rows();
  const Index m = batch.prototypes.rows();
  if (static_cast<Index>(batch.pseudo_labels.size()) != n) {
    throw InputError("one pseudo label per projection is required");
  }
  if (static_cast<Index>(batch.prototype_labels.size()) != m) {
    throw InputError("one class label per prototype is required");
  }
  if (batch.projections.cols() != batch.prototypes.cols()) {
    throw InputError("projection and prototype widths differ");
  }
  if (!(batch.temperature > 0.0)) throw ConfigError("semantic matching temperature must be positive");
  require_unit_rows(batch.projections, "projection");
  require_unit_rows(batch.prototypes, "prototype");
  for (int y : batch.pseudo_labels) {
    if (y < 0 || (batch.num_classes > 0 && y >= batch.num_classes)) {
      throw InputError("pseudo label " + std::to_string(y) + " out of range");
    }
  }

  SemanticLoss out;
  out.grad_projections = Matrix::Zero(n, batch.projections.cols());
  out.grad_prototypes = Matrix::Zero(m, batch.prototypes.cols());
  const double inv_t = 1.0 / batch.temperature;
  const Matrix logits = (batch.projections * batch.prototypes.transpose()) * inv_t;

  std::vector<Index> matched;
  for (Index i = 0; i < n; ++i) {
    const int y = batch.pseudo_labels[static_cast<std::size_t>(i)];
    for (Index j = 0; j < m; ++j) {
      if (batch.prototype_labels[static_cast<std::size_t>(j)] == y) {
        matched.push_back(i);
        break;
      }
    }
  }
  out.skipped = static_cast<std::size_t>(n) - matched.size();
  if (matched.empty()) throw InputError("no matchable prototypes for any sample in the batch");
  const double inv_n = 1.0 / static_cast<double>(matched.size());

  for (Index i : matched) {
    const int y = batch.pseudo_labels[static_cast<std::size_t>(i)];
    const auto row = logits.row(i);
    const double shift = row.maxCoeff();
    double negative_sum = 0.0;
    std::vector<Index> positives;
    for (Index j = 0; j < m; ++j) {
      if (batch.prototype_labels[static_cast<std::size_t>(j)] == y) {
        positives.push_back(j);
      } else {
        negative_sum += std::exp(row(j) - shift);
      }
    }
    const double weight = inv_n / static_cast<double>(positives.size());
    RowVector grad_logits = RowVector::Zero(m);
    for (Index j : positives) {
      const double pos = std::exp(row(j) - shift);
      const double denom = pos + negative_sum;
      out.value += weight * (std::log(denom) - (row(j) - shift));
      grad_logits(j) += weight * (pos / denom - 1.0);
      for (Index k = 0; k < m; ++k) {
        if (batch.prototype_labels[static_cast<std::size_t>(k)] != y) {
          grad_logits(k) += weight * std::exp(row(k) - shift) / denom;
        }
      }
    }
    grad_logits *= inv_t;
    out.grad_projections.row(i) += grad_logits * batch.prototypes;
    out.grad_prototypes.noalias() += grad_logits.transpose() * batch.projections.row(i);
  }
  return out;
}

void LossWeights::validate() const {
  if (!std::isfinite(lambda1) || !std::isfinite(lambda2) || lambda1 < 0.0 || lambda2 < 0.0) {
    throw ConfigError("loss weights must be finite and non-negative");
  }
}

double total_objective(double l_da, double l_sm, double l_t, const LossWeights& w) {
  w.validate();
  require_finite(l_da, "l_da");
  require_finite(l_sm, "l_sm");
  require_finite(l_t, "l_t");
  return w.lambda1 * l_da + w.lambda2 * l_sm + l_t;
}

MixupSample mixup_with_lambda(const Matrix& x_i, const Matrix& x_j, const Matrix& y_i,
                              const Matrix& y_j, double lambda) {
  if (x_i.rows() != x_j.rows() || x_i.cols() != x_j.cols() || y_i.rows() != y_j.rows() ||
      y_i.cols() != y_j.cols()) {
    throw InputError("mixup operands must share a shape");
  }
  return {lambda, lambda * x_i + (1.0 - lambda) * x_j, lambda * y_i + (1.0 - lambda) * y_j};
}

MixupSample mixup(const Matrix& x_i, const Matrix& x_j, const Matrix& y_i, const Matrix& y_j,
                  double beta, std::mt19937_64& rng) {
  if (!(beta > 0.0)) throw ConfigError("mixup beta must be positive");
  boost::random::beta_distribution<double> dist(beta, beta);
  return mixup_with_lambda(x_i, x_j, y_i, y_j, dist(rng));
}

ScalarLoss mixup_loss(const Matrix& predictions, const Matrix& mixed_targets) {
  if (predictions.rows() != mixed_targets.rows() || predictions.cols() != mixed_targets.cols()) {
    throw InputError("mixup targets must match the predictions");
  }
  const Index n = predictions.rows();
  if (n == 0) throw InputError("mixup loss needs a non-empty batch");
  ScalarLoss out{0.0, Matrix::Zero(n, predictions.cols())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < predictions.cols(); ++c) {
      const double p = predictions(i, c);
      const double y = mixed_targets(i, c);
      out.value -= y * clamped_log(p) * inv_n;
      if (p > kLogClamp) out.grad(i, c) = -y * inv_n / p;
    }
  }
  return out;
}

KlDivergence kl_divergence_rows(const Matrix& p, const Matrix& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols()) throw InputError("KL operands differ in shape");
  const Index n = p.rows();
  if (n == 0) throw InputError("KL divergence needs a non-empty batch");
  KlDivergence out{0.0, Matrix::Zero(n, p.cols()), Matrix::Zero(n, p.cols())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < p.cols(); ++c) {
      const double pv = p(i, c);
      const double qv = q(i, c);
      const double log_ratio = clamped_log(pv) - clamped_log(qv);
      out.value += pv * log_ratio * inv_n;
      out.grad_p(i, c) = (log_ratio + (pv > kLogClamp ? 1.0 : 0.0)) * inv_n;
      if (qv > kLogClamp) out.grad_q(i, c) = -pv / qv * inv_n;
    }
  }
  // Exact zero for identical inputs regardless of rounding in the sum.
  if (p == q) out.value = 0.0;
  return out;
}

OffsetKlLoss random_offset_kl_loss(const Matrix& b_x, const Matrix& b_xr, double alpha,
                                   const ProbabilityHead& head) {
  if (b_x.rows() != b_xr.rows() || b_x.cols() != b_xr.cols()) {
    throw InputError("offset token batches must share a shape");
  }
  if (!std::isfinite(alpha)) throw ConfigError("offset alpha must be finite");
  const Matrix offset = alpha * (b_x - b_xr);  // treated as a constant below
  OffsetKlLoss out;
  out.augmented_tokens = b_x + offset;
  const Matrix p = head.probabilities(b_x);
  const Matrix q = head.probabilities(out.augmented_tokens);
  const KlDivergence kl = kl_divergence_rows(p, q);
  out.value = std::max(kl.value, 0.0);
  out.grad_tokens = head.backward(b_x, kl.grad_p) + head.backward(out.augmented_tokens, kl.grad_q);
  return out;
}

}  // namespace fdac
