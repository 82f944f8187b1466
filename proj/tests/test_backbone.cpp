#include "support.hpp"

#include "fdac/backbone.hpp"
#include "fdac/error.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace fdac;
using namespace fdac::testing;

namespace {

Matrix random_patches(const BackboneConfig& c, Index batch, std::mt19937_64& rng) {
  return random_matrix(batch * c.num_patches(), c.patch_dim(), rng);
}

void zero_block_branches(const VisionTransformer& model, ModelParams& params) {
  for (int l = 1; l <= model.config().depth; ++l) {
    const std::string b = "blocks." + std::to_string(l) + ".";
    for (const char* name : {"attn.out.weight", "attn.out.bias", "mlp.fc2.weight", "mlp.fc2.bias"}) {
      params.view(b + name).setZero();
    }
  }
}

}  // namespace

TEST_CASE("geometry of the token sequence") {
  BackboneConfig c;
  c.image_side = 224;
  c.patch_side = 16;
  CHECK(c.num_patches() == 196);
  CHECK(c.seq_len() == 197);
}

TEST_CASE("configuration validation") {
  BackboneConfig c = tiny_backbone();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_backbone();
  c.activation = "swish";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_backbone();
  c.image_side = 10;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("parameter layout orders extractor, prototypes, projector") {
  const VisionTransformer model(tiny_backbone());
  const auto& groups = model.layout()->groups();
  ParamKind last = ParamKind::extractor;
  for (const auto& g : groups) {
    CHECK(static_cast<int>(g.kind) >= static_cast<int>(last));
    last = g.kind;
  }
  const ModelParams p = model.initialize(1);
  CHECK(p.prototype_matrix().rows() == 3);
  CHECK(p.prototype_matrix().cols() == 8);
  CHECK(p.extractor().size() + p.prototype_matrix().size() + p.projector().size() == p.values().size());
  CHECK(model.initialize(1) == p);
  CHECK_FALSE(model.initialize(2) == p);
}

TEST_CASE("residual identity with zeroed branch projections") {
  const VisionTransformer model(tiny_backbone());
  ModelParams params = model.initialize(3);
  zero_block_branches(model, params);
  std::mt19937_64 rng(1);
  const TokenBatch b0 = model.embed(params, random_patches(model.config(), 3, rng));
  for (int l = 1; l <= model.config().depth; ++l) {
    CHECK(model.forward_block_tap(params, b0, l).block.tokens.values == b0.values);
  }
}

TEST_CASE("tap at the last layer is the state behind the features") {
  const VisionTransformer model(tiny_backbone());
  const ModelParams params = model.initialize(4);
  std::mt19937_64 rng(2);
  const Matrix patches = random_patches(model.config(), 5, rng);
  const TokenBatch b0 = model.embed(params, patches);
  const BlockTap tap = model.forward_block_tap(params, b0, model.config().depth);
  CHECK(tap.block.layer_index == model.config().depth);
  CHECK(tap.block.tokens.class_tokens() == tap.features);
  const Matrix via_classify = model.classify(params, model.features(params, patches)).probabilities;
  const Matrix manual = softmax_rows(normalize_rows(tap.features).output * params.prototype_matrix().transpose());
  CHECK((via_classify - manual).cwiseAbs().maxCoeff() < 1e-6);
  CHECK_THROWS_AS(model.forward_block_tap(params, b0, 0), ConfigError);
  CHECK_THROWS_AS(model.forward_block_tap(params, b0, 3), ConfigError);
  CHECK_THROWS_AS(model.embed(params, patches.leftCols(5)), InputError);
}

TEST_CASE("blocks are equivariant to patch-token permutations") {
  const VisionTransformer model(tiny_backbone());
  const ModelParams params = model.initialize(5);
  std::mt19937_64 rng(3);
  const Index s = model.config().seq_len();
  const Matrix tokens = random_matrix(s, model.config().width, rng);
  std::vector<Index> perm = {0};
  for (Index t = s - 1; t >= 1; --t) perm.push_back(t);
  Matrix permuted(s, tokens.cols());
  for (Index t = 0; t < s; ++t) permuted.row(t) = tokens.row(perm[static_cast<std::size_t>(t)]);
  const Matrix out = model.run_blocks(params, {1, s, tokens}, 0, 2).values;
  const Matrix out_permuted = model.run_blocks(params, {1, s, permuted}, 0, 2).values;
  for (Index t = 0; t < s; ++t) {
    CHECK((out_permuted.row(t) - out.row(perm[static_cast<std::size_t>(t)])).norm() < 1e-10);
  }
}

TEST_CASE("classifier closed forms") {
  BackboneConfig c = tiny_backbone();
  c.num_classes = 2;
  const VisionTransformer model(c);
  ModelParams params = model.initialize(6);
  auto p = params.view("prototypes");
  p.setZero();
  p(0, 0) = 1.0;
  p(1, 1) = 1.0;
  Matrix f = Matrix::Zero(1, 8);
  f(0, 0) = 3.0;
  const ClassifierOutput out = model.classify(params, f);
  CHECK(out.probabilities(0, 0) == doctest::Approx(std::numbers::e / (std::numbers::e + 1.0)));
  CHECK(out.probabilities(0, 1) == doctest::Approx(1.0 / (std::numbers::e + 1.0)));

  p.setZero();
  std::mt19937_64 rng(1);
  const Matrix probs = model.classify(params, random_matrix(4, 8, rng)).probabilities;
  CHECK((probs.array() - 0.5).abs().maxCoeff() < 1e-15);

  const ClassifierOutput degenerate = model.classify(model.initialize(6), Matrix::Zero(2, 8));
  CHECK(degenerate.degenerate_rows == 2);
  CHECK((degenerate.probabilities.array() - 0.5).abs().maxCoeff() < 1e-15);
}

TEST_CASE("probability rows sum to one and projections are unit") {
  BackboneConfig c = tiny_backbone();
  c.projector_dim = 128;
  const VisionTransformer model(c);
  const ModelParams params = model.initialize(7);
  std::mt19937_64 rng(4);
  const Matrix feats = model.features(params, random_patches(c, 6, rng));
  const Matrix probs = model.classify(params, feats).probabilities;
  for (Index i = 0; i < probs.rows(); ++i) {
    CHECK(std::abs(probs.row(i).sum() - 1.0) < 1e-6);
    CHECK(probs.row(i).minCoeff() > 0.0);
  }
  Matrix twice(2, feats.cols());
  twice << feats.row(0), feats.row(0);
  const ProjectorOutput z = model.project(params, twice);
  CHECK(z.projections().cols() == 128);
  CHECK(rows_unit_norm(z.projections()));
  CHECK(z.projections().row(0) == z.projections().row(1));
}

TEST_CASE("prototype export") {
  BackboneConfig c = tiny_backbone();
  c.width = 4;
  c.heads = 2;
  const VisionTransformer model(c);
  ModelParams params = model.initialize(8);
  auto p = params.view("prototypes");
  p.setZero();
  p(0, 0) = 2.0;
  p(1, 1) = 5.0;
  p(2, 2) = -1.0;
  const ModelParams before = params;
  const PrototypeSet set = model.export_prototypes(params, 4);
  CHECK(set.source_id == 4);
  CHECK(set.vectors.rows() == 3);
  CHECK(set.vectors.cols() == 4);
  CHECK(rows_unit_norm(set.vectors));
  CHECK(set.class_labels == std::vector<int>{0, 1, 2});
  CHECK(params == before);
  CHECK(model.export_prototypes(params, 4).vectors == set.vectors);
  p.row(1).setZero();
  CHECK_THROWS_WITH_AS(model.export_prototypes(params, 0), doctest::Contains("class 1"), InputError);
}

TEST_CASE("backward pass matches finite differences for every parameter group") {
  const BackboneConfig c = tiny_backbone();
  const VisionTransformer model(c);
  std::mt19937_64 rng(9);
  const ModelParams params = model.initialize(10);
  const Matrix patches = random_patches(c, 2, rng);
  const Index rows = 2 * c.seq_len();
  const Matrix w1 = random_matrix(rows, c.width, rng);
  const Matrix w2 = random_matrix(rows, c.width, rng);
  const std::vector<int> labels = {2, 0};

  // Scalar loss touching an intermediate tap, the last block, the classifier
  // and the projector.
  const auto loss = [&](const ModelParams& p) {
    const ForwardTrace t = model.trace(p, patches);
    const Matrix f = t.features();
    const Matrix probs = model.classify(p, f).probabilities;
    double v = (t.outputs[1].array() * w1.array()).sum() + (t.outputs[2].array() * w2.array()).sum();
    for (Index i = 0; i < 2; ++i) v -= std::log(probs(i, labels[static_cast<std::size_t>(i)]));
    v += model.project(p, f).projections().col(0).sum();
    return v;
  };

  ModelParams grad = model.zeros();
  const ForwardTrace t = model.trace(params, patches);
  const Matrix f = t.features();
  const ClassifierOutput cls = model.classify(params, f);
  Matrix gp = Matrix::Zero(2, c.num_classes);
  for (Index i = 0; i < 2; ++i) {
    gp(i, labels[static_cast<std::size_t>(i)]) = -1.0 / cls.probabilities(i, labels[static_cast<std::size_t>(i)]);
  }
  Matrix gf = model.classify_backward(params, cls, gp, grad);
  const ProjectorOutput proj = model.project(params, f);
  Matrix gz = Matrix::Zero(2, c.projector_dim);
  gz.col(0).setOnes();
  gf += model.project_backward(params, proj, gz, grad);
  std::vector<Matrix> layer_grads(3);
  layer_grads[1] = w1;
  layer_grads[2] = w2 + model.feature_grad_to_tokens(gf);
  model.backward(params, t, layer_grads, grad);

  const double h = 1e-5;
  for (const auto& g : model.layout()->groups()) {
    Vector analytic(g.size()), numeric(g.size());
    for (Index k = 0; k < g.size(); ++k) {
      ModelParams up = params, down = params;
      up.values()(g.offset + k) += h;
      down.values()(g.offset + k) -= h;
      numeric(k) = (loss(up) - loss(down)) / (2.0 * h);
      analytic(k) = grad.values()(g.offset + k);
    }
    CAPTURE(g.name);
    CHECK(relative_error(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("backward from an intermediate start returns the token gradient") {
  const BackboneConfig c = tiny_backbone();
  const VisionTransformer model(c);
  std::mt19937_64 rng(12);
  const ModelParams params = model.initialize(13);
  const TokenBatch b1{2, c.seq_len(), random_matrix(2 * c.seq_len(), c.width, rng)};
  const Matrix w = random_matrix(2 * c.seq_len(), c.width, rng);
  const auto loss = [&](const Matrix& tokens) {
    return (model.run_blocks(params, {2, c.seq_len(), tokens}, 1, 2).values.array() * w.array()).sum();
  };
  const ForwardTrace t = model.trace_from(params, b1, 1);
  ModelParams grad = model.zeros();
  std::vector<Matrix> layer_grads(3);
  layer_grads[2] = w;
  const Matrix analytic = model.backward(params, t, layer_grads, grad);
  CHECK(relative_error(analytic, numeric_gradient(loss, b1.values)) < 1e-4);
}

TEST_CASE("relu activation is supported") {
  BackboneConfig c = tiny_backbone();
  c.activation = "relu";
  const VisionTransformer model(c);
  std::mt19937_64 rng(1);
  const Matrix out = model.features(model.initialize(1), random_patches(c, 2, rng));
  CHECK(out.allFinite());
}
