#include "support.hpp"

#include "fdac/error.hpp"
#include "fdac/losses.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace fdac;
using namespace fdac::testing;

namespace {

Matrix e(Index dim, Index axis, double sign = 1.0) {
  Matrix m = Matrix::Zero(1, dim);
  m(0, axis) = sign;
  return m;
}

Matrix random_rotation(Index dim, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Matrix> qr(random_matrix(dim, dim, rng));
  return qr.householderQ();
}

}  // namespace

TEST_CASE("source cross-entropy closed forms") {
  Matrix p(2, 10);
  p.setZero();
  p(0, 3) = 1.0;
  p.row(1).setConstant(0.1);
  const std::vector<int> labels = {3, 7};
  const ScalarLoss one_hot = source_ce_loss(p.topRows(1), std::span(labels).first(1));
  CHECK(one_hot.value == doctest::Approx(0.0));
  const ScalarLoss uniform = source_ce_loss(p.bottomRows(1), std::span(labels).subspan(1));
  CHECK(uniform.value == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  CHECK(source_ce_loss(p, labels).value == doctest::Approx(std::log(10.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("source cross-entropy clamps a zero probability") {
  Matrix p(1, 2);
  p << 1.0, 0.0;
  const std::vector<int> labels = {1};
  const ScalarLoss l = source_ce_loss(p, labels);
  CHECK(std::isfinite(l.value));
  CHECK(l.value == doctest::Approx(-std::log(kLogClamp)));
}

TEST_CASE("domain augmentation closed forms") {
  SUBCASE("identical vectors give log N") {
    Matrix a = e(3, 0).replicate(4, 1);
    const ContrastiveLoss l = domain_aug_loss({a, {a}, 1.0});
    CHECK(l.value == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("two samples with opposite source features") {
    Matrix anchors(2, 2), source(2, 2);
    anchors << 1, 0, 0, 1;
    source << 1, 0, -1, 0;
    const ContrastiveLoss l = domain_aug_loss({anchors, {source}, 1.0});
    const double first = -std::log(std::numbers::e / (std::numbers::e + 1.0 / std::numbers::e));
    CHECK(first == doctest::Approx(0.1269).epsilon(1e-3));
    CHECK(l.value == doctest::Approx((first + std::log(2.0)) / 2.0).epsilon(1e-12));
  }
  SUBCASE("large temperature flattens to log N") {
    std::mt19937_64 rng(3);
    const Matrix a = random_unit_rows(5, 4, rng);
    const Matrix s = random_unit_rows(5, 4, rng);
    CHECK(domain_aug_loss({a, {s}, 1e7}).value == doctest::Approx(std::log(5.0)).epsilon(1e-6));
  }
}

TEST_CASE("domain augmentation rejects bad input") {
  std::mt19937_64 rng(1);
  const Matrix one = random_unit_rows(1, 3, rng);
  CHECK_THROWS_AS(domain_aug_loss({one, {one}, 0.1}), InputError);
  const Matrix a = random_unit_rows(3, 3, rng);
  CHECK_THROWS_AS(domain_aug_loss({a * 2.0, {a}, 0.1}), InputError);
  CHECK_THROWS_AS(domain_aug_loss({a, {a * 0.5}, 0.1}), InputError);
  CHECK_THROWS_AS(domain_aug_loss({a, {a}, 0.0}), ConfigError);
}

TEST_CASE("pseudo-label loss") {
  Matrix p(3, 4);
  p.setConstant(0.25);
  SUBCASE("empty set gives zero and a warning") {
    const PseudoLabelLoss l = pseudo_label_loss(p, PseudoLabelSet({}, 0.8, 3));
    CHECK(l.value == 0.0);
    CHECK(l.empty_warnings == 1);
  }
  SUBCASE("one covered uniform sample gives log C") {
    const PseudoLabelLoss l = pseudo_label_loss(p, PseudoLabelSet({{1, 2, 0.9}}, 0.8, 3));
    CHECK(l.value == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(l.grad.row(0).isZero());
    CHECK(l.grad.row(2).isZero());
  }
  SUBCASE("one-hot agreement gives zero") {
    Matrix q = Matrix::Zero(2, 4);
    q(0, 1) = 1.0;
    q(1, 3) = 1.0;
    CHECK(pseudo_label_loss(q, PseudoLabelSet({{0, 1, 1.0}, {1, 3, 1.0}}, 0.8, 2)).value == doctest::Approx(0.0));
  }
  SUBCASE("label out of range") {
    CHECK_THROWS_AS(pseudo_label_loss(p, PseudoLabelSet({{0, 4, 0.9}}, 0.8, 3)), InputError);
  }
}

TEST_CASE("semantic matching closed forms") {
  SUBCASE("two opposite prototypes") {
    Matrix z(1, 3), protos(2, 3);
    z << 0, 1, 0;
    protos << 0, 1, 0, 0, -1, 0;
    const SemanticLoss l = semantic_matching_loss({z, {0}, protos, {0, 1}, 2, 1.0});
    CHECK(l.value == doctest::Approx(-std::log(std::numbers::e / (std::numbers::e + 1.0 / std::numbers::e))).epsilon(1e-12));
  }
  SUBCASE("identical prototypes give log M") {
    std::mt19937_64 rng(5);
    const Matrix z = random_unit_rows(4, 3, rng);
    const Matrix single = e(3, 2).replicate(3, 1);
    CHECK(semantic_matching_loss({z, {0, 1, 2, 0}, single, {0, 1, 2}, 3, 1.0}).value ==
          doctest::Approx(std::log(3.0)).epsilon(1e-12));
    // With two sources each positive competes with itself plus the four
    // other-class prototypes.
    const Matrix doubled = e(3, 2).replicate(6, 1);
    CHECK(semantic_matching_loss({z, {0, 1, 2, 0}, doubled, {0, 1, 2, 0, 1, 2}, 3, 1.0}).value ==
          doctest::Approx(std::log(5.0)).epsilon(1e-12));
  }
  SUBCASE("unmatched samples are skipped and counted") {
    std::mt19937_64 rng(6);
    const Matrix z = random_unit_rows(3, 4, rng);
    const Matrix protos = random_unit_rows(2, 4, rng);
    const SemanticLoss l = semantic_matching_loss({z, {0, 2, 1}, protos, {0, 1}, 3, 1.0});
    CHECK(l.skipped == 1);
    CHECK(l.grad_projections.row(1).isZero());
    CHECK_THROWS_WITH_AS(semantic_matching_loss({z, {2, 2, 2}, protos, {0, 1}, 3, 1.0}),
                         doctest::Contains("no matchable prototypes"), InputError);
  }
}

TEST_CASE("semantic matching with duplicated sources matches the brute-force evaluator") {
  std::mt19937_64 rng(11);
  const Matrix z = random_unit_rows(5, 4, rng);
  const Matrix one = random_unit_rows(3, 4, rng);
  Matrix two(6, 4);
  two << one, one;
  const std::vector<int> labels = {0, 1, 2, 1, 0};
  const SemanticLoss single = semantic_matching_loss({z, labels, one, {0, 1, 2}, 3, 1.0});
  const SemanticLoss doubled = semantic_matching_loss({z, labels, two, {0, 1, 2, 0, 1, 2}, 3, 1.0});
  CHECK(single.value == doctest::Approx(oracle_semantic(z, labels, one, {0, 1, 2}, 1.0).value).epsilon(1e-12));
  CHECK(doubled.value == doctest::Approx(oracle_semantic(z, labels, two, {0, 1, 2, 0, 1, 2}, 1.0).value).epsilon(1e-12));
  CHECK(doubled.value > single.value);
}

TEST_CASE("contrastive losses are rotation invariant and non-negative") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix q = random_rotation(5, rng);
    const Matrix a = random_unit_rows(6, 5, rng);
    const std::vector<Matrix> s = {random_unit_rows(6, 5, rng), random_unit_rows(6, 5, rng)};
    const double base = domain_aug_loss({a, s, 0.1}).value;
    const double rotated = domain_aug_loss({a * q, {s[0] * q, s[1] * q}, 0.1}).value;
    CHECK(base >= 0.0);
    CHECK(std::abs(base - rotated) < 1e-6);

    const Matrix z = random_unit_rows(4, 5, rng);
    const Matrix p = random_unit_rows(6, 5, rng);
    const std::vector<int> labels = {0, 1, 2, 0};
    const std::vector<int> plabels = {0, 1, 2, 0, 1, 2};
    const double sm = semantic_matching_loss({z, labels, p, plabels, 3, 1.0}).value;
    CHECK(sm >= 0.0);
    CHECK(std::abs(sm - semantic_matching_loss({z * q, labels, p * q, plabels, 3, 1.0}).value) < 1e-6);
  }
}

TEST_CASE("total objective") {
  CHECK(total_objective(1, 2, 3, {1.0, 1.0}) == 6.0);
  CHECK(total_objective(1, 1, 1, {0.2, 0.5}) == doctest::Approx(1.7));
  CHECK(total_objective(4.5, 7.25, 3.0, {0.0, 0.0}) == 3.0);
  CHECK_THROWS_AS(total_objective(1, 1, 1, {-1.0, 1.0}), ConfigError);
  CHECK_THROWS_AS(total_objective(NAN, 1, 1, {1.0, 1.0}), InputError);
  // Scaling both weights and l_t by c scales the objective by c.
  const double c = 3.0;
  CHECK(total_objective(0.7, 1.3, c * 0.4, {c * 0.5, c * 2.0}) ==
        doctest::Approx(c * total_objective(0.7, 1.3, 0.4, {0.5, 2.0})));
}

TEST_CASE("mixup") {
  std::mt19937_64 rng(4);
  const Matrix xi = random_matrix(3, 4, rng);
  const Matrix xj = random_matrix(3, 4, rng);
  const Matrix yi = random_probabilities(3, 2, rng);
  const Matrix yj = random_probabilities(3, 2, rng);
  const MixupSample end = mixup_with_lambda(xi, xj, yi, yj, 1.0);
  CHECK(end.inputs == xi);
  CHECK(end.targets == yi);
  const MixupSample mid = mixup_with_lambda(Matrix::Zero(1, 1), Matrix::Constant(1, 1, 2.0), yi.topRows(1),
                                            yj.topRows(1), 0.5);
  CHECK(mid.inputs(0, 0) == 1.0);
  for (int i = 0; i < 50; ++i) {
    const MixupSample s = mixup(xi, xj, yi, yj, 0.2, rng);
    CHECK(s.lambda >= 0.0);
    CHECK(s.lambda <= 1.0);
  }
  CHECK_THROWS_AS(mixup(xi, xj, yi, yj, 0.0, rng), ConfigError);
  std::mt19937_64 a(9), b(9);
  CHECK(mixup(xi, xj, yi, yj, 0.2, a).lambda == mixup(xi, xj, yi, yj, 0.2, b).lambda);
}

TEST_CASE("random-offset KL") {
  std::mt19937_64 rng(8);
  const Index seq = 3, d = 4, n = 5;
  const LinearHead head(random_matrix(seq * d, 3, rng), seq);
  const Matrix bx = random_matrix(n * seq, d, rng);
  const Matrix bxr = random_matrix(n * seq, d, rng);
  SUBCASE("alpha zero gives zero") {
    const OffsetKlLoss l = random_offset_kl_loss(bx, bxr, 0.0, head);
    CHECK(l.augmented_tokens == bx);
    CHECK(l.value == 0.0);
  }
  SUBCASE("self divergence is exactly zero") {
    const Matrix p = random_probabilities(4, 3, rng);
    CHECK(kl_divergence_rows(p, p).value == 0.0);
  }
  SUBCASE("non-negative, and b_xr only enters through the constant offset") {
    const OffsetKlLoss l = random_offset_kl_loss(bx, bxr, 1.0, head);
    CHECK(l.value >= 0.0);
    // Moving b_xr together with b_x keeps the offset fixed, so the gradient in
    // b_x alone (offset frozen) is what the analytic result reports.
    const Matrix offset = bx - bxr;
    const Matrix numeric = numeric_gradient(
        [&](const Matrix& b) { return random_offset_kl_loss(b, b - offset, 1.0, head).value; }, bx);
    CHECK(relative_error(l.grad_tokens, numeric) < 1e-6);
    // Changing b_xr changes the value, never the form of the gradient.
    const Matrix other = random_matrix(n * seq, d, rng);
    const OffsetKlLoss moved = random_offset_kl_loss(bx, other, 1.0, head);
    CHECK(moved.value != l.value);
  }
}

TEST_CASE("loss gradients agree with finite differences") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 5; ++trial) {
    const Index n = 4, k = 2, m = 5;
    const Matrix raw = random_matrix(n, m, rng);
    std::vector<Matrix> sources;
    for (Index s = 0; s < k; ++s) sources.push_back(random_unit_rows(n, m, rng));
    const auto da = [&](const Matrix& x) {
      return domain_aug_loss({normalize_rows(x).output, sources, 0.1}).value;
    };
    const RowNormalization norm = normalize_rows(raw);
    const ContrastiveLoss l = domain_aug_loss({norm.output, sources, 0.1});
    CHECK(relative_error(normalize_rows_backward(norm, l.grad_anchors), numeric_gradient(da, raw)) < 1e-4);

    const Matrix p = random_probabilities(n, 3, rng);
    const std::vector<int> labels = {0, 2, 1, 2};
    const auto ce = [&](const Matrix& q) { return source_ce_loss(q, labels).value; };
    CHECK(relative_error(source_ce_loss(p, labels).grad, numeric_gradient(ce, p)) < 1e-4);
  }
}
