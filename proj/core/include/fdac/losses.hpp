#pragma once

#include "fdac/pseudo_label.hpp"
#include "fdac/tensor.hpp"

#include <functional>
#include <random>
#include <span>
#include <vector>

namespace fdac {

// Every loss returns its value together with the gradient w.r.t. each
// differentiable input, so callers can chain into the model backward pass.

struct ScalarLoss {
  double value = 0.0;
  Matrix grad;  // w.r.t. the primary input (probabilities or logits)
};

// Mean cross-entropy of `probabilities` (N x C) against integer labels;
// log arguments are clamped at kLogClamp.
ScalarLoss source_ce_loss(const Matrix& probabilities, std::span<const int> labels);

// anchors: N x m unit rows; positives[k]: N x m unit rows from source k.
struct ContrastiveBatch {
  Matrix anchors;
  std::vector<Matrix> positives;
  double temperature = 0.1;
};

struct ContrastiveLoss {
  double value = 0.0;
  Matrix grad_anchors;
  std::vector<Matrix> grad_positives;
};

// For each anchor i and source k the positive is source-k feature i; the
// softmax denominator runs over source-k features of every sample in the
// batch, the positive included.
ContrastiveLoss domain_aug_loss(const ContrastiveBatch& batch);

struct PseudoLabelLoss {
  double value = 0.0;
  Matrix grad;
  // 1 when the batch had no covered sample and the loss was defined as 0.
  std::size_t empty_warnings = 0;
};

// `labels` indexes rows of `probabilities` (see PseudoLabelSet::restrict_to).
PseudoLabelLoss pseudo_label_loss(const Matrix& probabilities, const PseudoLabelSet& labels);

struct SemanticBatch {
  Matrix projections;             // N x m unit rows
  std::vector<int> pseudo_labels;  // N class ids
  Matrix prototypes;              // M x m unit rows
  std::vector<int> prototype_labels;
  int num_classes = 0;
  double temperature = 1.0;
};

struct SemanticLoss {
  double value = 0.0;
  Matrix grad_projections;
  Matrix grad_prototypes;
  std::size_t skipped = 0;
};

// Positives are the prototypes sharing the sample's pseudo class (across all
// sources); each positive's denominator is itself plus every other-class
// prototype. Averaged over positives, then over matched samples.
SemanticLoss semantic_matching_loss(const SemanticBatch& batch);

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 1.0;

  void validate() const;
};

double total_objective(double l_da, double l_sm, double l_t, const LossWeights& w);

struct MixupSample {
  double lambda = 1.0;
  Matrix inputs;
  Matrix targets;
};

// Draws lambda ~ Beta(beta, beta) and mixes inputs and soft targets.
MixupSample mixup(const Matrix& x_i, const Matrix& x_j, const Matrix& y_i, const Matrix& y_j,
                  double beta, std::mt19937_64& rng);
MixupSample mixup_with_lambda(const Matrix& x_i, const Matrix& x_j, const Matrix& y_i,
                              const Matrix& y_j, double lambda);

// -mean(sum_c target * log(prediction)); gradient w.r.t. the predictions.
ScalarLoss mixup_loss(const Matrix& predictions, const Matrix& mixed_targets);

// A differentiable map from latent tokens to class probabilities (the part of
// a model downstream of the perturbed block). backward() returns the gradient
// w.r.t. `tokens` and may accumulate parameter gradients as a side effect.
class ProbabilityHead {
 public:
  virtual ~ProbabilityHead() = default;
  virtual Matrix probabilities(const Matrix& tokens) const = 0;
  virtual Matrix backward(const Matrix& tokens, const Matrix& grad_probabilities) const = 0;
};

struct OffsetKlLoss {
  double value = 0.0;
  // Gradient w.r.t. b_x; the offset (b_x - b_xr) is a constant, so b_xr
  // receives none.
  Matrix grad_tokens;
  Matrix augmented_tokens;
};

// b~ = b_x + alpha * stopgrad(b_x - b_xr); loss = KL(p(b_x) || p(b~)).
OffsetKlLoss random_offset_kl_loss(const Matrix& b_x, const Matrix& b_xr, double alpha,
                                   const ProbabilityHead& head);

// Mean forward KL between rows with clamped logs; gradients w.r.t. both sides.
struct KlDivergence {
  double value = 0.0;
  Matrix grad_p;
  Matrix grad_q;
};
KlDivergence kl_divergence_rows(const Matrix& p, const Matrix& q);

}  // namespace fdac
