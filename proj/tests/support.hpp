#pragma once

// Shared helpers for the test suites: random instances, finite differences and
// independent brute-force evaluators used as oracles.

#include "fdac/backbone.hpp"
#include "fdac/datasets.hpp"
#include "fdac/losses.hpp"
#include "fdac/tensor.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace fdac::testing {

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

inline Matrix random_unit_rows(Index rows, Index cols, std::mt19937_64& rng) {
  return normalize_rows(random_matrix(rows, cols, rng)).output;
}

// Rows drawn from a Dirichlet(1) distribution, kept away from zero.
inline Matrix random_probabilities(Index rows, Index cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Matrix p(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) p(i, j) = u(rng);
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

// Central finite differences of a scalar function of a matrix.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (Index j = 0; j < x.cols(); ++j) {
    for (Index i = 0; i < x.rows(); ++i) {
      const double keep = probe(i, j);
      probe(i, j) = keep + h;
      const double up = f(probe);
      probe(i, j) = keep - h;
      const double down = f(probe);
      probe(i, j) = keep;
      g(i, j) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||), with both norms tiny counting as agreement.
inline double relative_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max(a.norm(), b.norm());
  if (scale < 1e-12) return 0.0;
  return (a - b).norm() / scale;
}

inline double dot(const Matrix& a, Index i, const Matrix& b, Index j) {
  double s = 0.0;
  for (Index c = 0; c < a.cols(); ++c) s += a(i, c) * b(j, c);
  return s;
}

// Domain-augmentation loss by direct summation:
// (1/N) sum_i sum_k -log(exp(a_i.s_ki/t) / sum_j exp(a_i.s_kj/t)).
inline double oracle_domain_aug(const Matrix& anchors, const std::vector<Matrix>& positives, double tau) {
  const Index n = anchors.rows();
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (const Matrix& s : positives) {
      double denom = 0.0;
      for (Index j = 0; j < n; ++j) denom += std::exp(dot(anchors, i, s, j) / tau);
      total += -std::log(std::exp(dot(anchors, i, s, i) / tau) / denom);
    }
  }
  return total / static_cast<double>(n);
}

struct OracleSemantic {
  double value = 0.0;
  std::size_t skipped = 0;
};

// Semantic matching by direct summation: for each sample with at least one
// same-class prototype, average over those positives p of
// -log(exp(z.p/t) / (exp(z.p/t) + sum_{q: other class} exp(z.q/t))), then
// average over the matched samples.
inline OracleSemantic oracle_semantic(const Matrix& z, const std::vector<int>& labels, const Matrix& protos,
                                      const std::vector<int>& proto_labels, double tau) {
  OracleSemantic out;
  double sum = 0.0;
  std::size_t matched = 0;
  for (Index i = 0; i < z.rows(); ++i) {
    double per_sample = 0.0;
    std::size_t positives = 0;
    for (Index p = 0; p < protos.rows(); ++p) {
      if (proto_labels[static_cast<std::size_t>(p)] != labels[static_cast<std::size_t>(i)]) continue;
      const double pos = std::exp(dot(z, i, protos, p) / tau);
      double neg = 0.0;
      for (Index q = 0; q < protos.rows(); ++q) {
        if (proto_labels[static_cast<std::size_t>(q)] != labels[static_cast<std::size_t>(i)]) {
          neg += std::exp(dot(z, i, protos, q) / tau);
        }
      }
      per_sample += -std::log(pos / (pos + neg));
      ++positives;
    }
    if (positives == 0) {
      ++out.skipped;
      continue;
    }
    sum += per_sample / static_cast<double>(positives);
    ++matched;
  }
  out.value = matched ? sum / static_cast<double>(matched) : std::numeric_limits<double>::quiet_NaN();
  return out;
}

// Mean silhouette coefficient under Euclidean distance.
inline double silhouette(const Matrix& x, const std::vector<int>& labels) {
  const Index n = x.rows();
  int classes = 0;
  for (int y : labels) classes = std::max(classes, y + 1);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    std::vector<double> sum(static_cast<std::size_t>(classes), 0.0);
    std::vector<int> count(static_cast<std::size_t>(classes), 0);
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto c = static_cast<std::size_t>(labels[static_cast<std::size_t>(j)]);
      sum[c] += (x.row(i) - x.row(j)).norm();
      ++count[c];
    }
    const auto own = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
    if (count[own] == 0) continue;
    const double a = sum[own] / count[own];
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sum.size(); ++c) {
      if (c != own && count[c] > 0) b = std::min(b, sum[c] / count[c]);
    }
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

// Softmax over a linear map of the flattened tokens of each sample.
class LinearHead final : public ProbabilityHead {
 public:
  LinearHead(Matrix w, Index seq) : w_(std::move(w)), seq_(seq) {}

  Matrix probabilities(const Matrix& tokens) const override { return softmax_rows(flatten(tokens) * w_); }

  Matrix backward(const Matrix& tokens, const Matrix& grad_probabilities) const override {
    const Matrix p = probabilities(tokens);
    const Matrix g = softmax_rows_backward(p, grad_probabilities) * w_.transpose();
    Matrix out(tokens.rows(), tokens.cols());
    const Index d = tokens.cols();
    for (Index n = 0; n < g.rows(); ++n) {
      for (Index t = 0; t < seq_; ++t) out.row(n * seq_ + t) = g.row(n).segment(t * d, d);
    }
    return out;
  }

 private:
  Matrix flatten(const Matrix& tokens) const {
    const Index n = tokens.rows() / seq_;
    const Index d = tokens.cols();
    Matrix f(n, seq_ * d);
    for (Index i = 0; i < n; ++i) {
      for (Index t = 0; t < seq_; ++t) f.row(i).segment(t * d, d) = tokens.row(i * seq_ + t);
    }
    return f;
  }

  Matrix w_;
  Index seq_;
};

inline BackboneConfig tiny_backbone() {
  BackboneConfig c;
  c.image_side = 8;
  c.patch_side = 4;
  c.channels = 2;
  c.depth = 2;
  c.width = 8;
  c.heads = 2;
  c.mlp_hidden = 12;
  c.num_classes = 3;
  c.projector_dim = 6;
  c.projector_hidden = 5;
  return c;
}

inline ImageGeometry geometry_of(const BackboneConfig& c) { return {c.channels, c.image_side, c.patch_side}; }

}  // namespace fdac::testing
