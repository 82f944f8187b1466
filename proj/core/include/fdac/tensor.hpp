#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>

namespace fdac {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

// Norm below which a row is treated as degenerate and never divided by.
inline constexpr double kDegenerateNorm = 1e-12;

// Floor applied to every probability before taking its logarithm.
inline constexpr double kLogClamp = 1e-12;

// Row-wise l2 normalization with the per-row norms kept for the backward pass.
struct RowNormalization {
  Matrix output;
  Vector norms;
  // Number of rows whose norm fell below kDegenerateNorm.
  std::size_t degenerate_rows = 0;
};

// Degenerate rows are replaced by `fallback_basis` (a unit basis vector index).
RowNormalization normalize_rows(const Matrix& input, Index fallback_basis = 0);

// Gradient w.r.t. the unnormalized input given the gradient w.r.t. the
// normalized output. Degenerate rows receive a zero gradient.
Matrix normalize_rows_backward(const RowNormalization& forward, const Matrix& grad_output);

// Numerically stable row-wise softmax.
Matrix softmax_rows(const Matrix& logits);

// Gradient w.r.t. logits given the softmax output and the gradient w.r.t. it.
Matrix softmax_rows_backward(const Matrix& probabilities, const Matrix& grad_probabilities);

// Exact (erf-based) GELU and its derivative.
double gelu(double x);
double gelu_derivative(double x);

bool rows_unit_norm(const Matrix& m, double tolerance = 1e-6);

// Deterministic child seed derived from a parent seed and a stream of tags.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag_a, std::uint64_t tag_b = 0);

}  // namespace fdac
