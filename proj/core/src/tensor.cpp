#include "fdac/tensor.hpp"

#include <cmath>
#include <numbers>

namespace fdac {

RowNormalization normalize_rows(const Matrix& input, Index fallback_basis) {
  RowNormalization result;
  result.norms = input.rowwise().norm();
  result.output.resize(input.rows(), input.cols());
  for (Index i = 0; i < input.rows(); ++i) {
    if (result.norms(i) < kDegenerateNorm) {
      result.output.row(i).setZero();
      result.output(i, fallback_basis % input.cols()) = 1.0;
      ++result.degenerate_rows;
    } else {
      result.output.row(i) = input.row(i) / result.norms(i);
    }
  }
  return result;
}

Matrix normalize_rows_backward(const RowNormalization& forward, const Matrix& grad_output) {
  Matrix grad(grad_output.rows(), grad_output.cols());
  for (Index i = 0; i < grad_output.rows(); ++i) {
    const double norm = forward.norms(i);
    if (norm < kDegenerateNorm) {
      grad.row(i).setZero();
      continue;
    }
    const auto y = forward.output.row(i);
    const double projection = grad_output.row(i).dot(y);
    grad.row(i) = (grad_output.row(i) - projection * y) / norm;
  }
  return grad;
}

Matrix softmax_rows(const Matrix& logits) {
  const Vector row_max = logits.rowwise().maxCoeff();
  Matrix shifted = (logits.colwise() - row_max).array().exp().matrix();
  const Vector sums = shifted.rowwise().sum();
  shifted.array().colwise() /= sums.array();
  return shifted;
}

Matrix softmax_rows_backward(const Matrix& probabilities, const Matrix& grad_probabilities) {
  const Vector inner = (probabilities.array() * grad_probabilities.array()).rowwise().sum();
  return (probabilities.array() * (grad_probabilities.colwise() - inner).array()).matrix();
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return cdf + x * pdf;
}

bool rows_unit_norm(const Matrix& m, double tolerance) {
  for (Index i = 0; i < m.rows(); ++i) {
    if (std::abs(m.row(i).norm() - 1.0) > tolerance) return false;
  }
  return true;
}

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag_a, std::uint64_t tag_b) {
  // splitmix64 finalizer over the combined words.
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(parent) ^ tag_a) ^ (tag_b * 0x2545f4914f6cdd1dULL));
}

}  // namespace fdac
