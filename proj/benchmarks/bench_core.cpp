#include "fdac/backbone.hpp"
#include "fdac/datasets.hpp"
#include "fdac/federation.hpp"
#include "fdac/losses.hpp"
#include "fdac/privacy.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace fdac;

namespace {

Matrix gaussian(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

BackboneConfig bench_backbone() {
  BackboneConfig c;
  c.image_side = 16;
  c.patch_side = 4;
  c.depth = 4;
  c.width = 32;
  c.heads = 2;
  c.mlp_hidden = 64;
  c.num_classes = 5;
  return c;
}

void BM_Forward(benchmark::State& state) {
  const VisionTransformer model(bench_backbone());
  const ModelParams params = model.initialize(1);
  const Matrix patches = gaussian(state.range(0) * model.config().num_patches(), model.config().patch_dim(), 2);
  for (auto _ : state) benchmark::DoNotOptimize(model.features(params, patches));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(16)->Arg(64);

void BM_ForwardBackward(benchmark::State& state) {
  const VisionTransformer model(bench_backbone());
  const ModelParams params = model.initialize(1);
  const Index batch = state.range(0);
  const Matrix patches = gaussian(batch * model.config().num_patches(), model.config().patch_dim(), 2);
  const Matrix w = gaussian(batch * model.config().seq_len(), model.config().width, 3);
  for (auto _ : state) {
    const ForwardTrace t = model.trace(params, patches);
    ModelParams grad = model.zeros();
    std::vector<Matrix> layer_grads(static_cast<std::size_t>(model.config().depth) + 1);
    layer_grads.back() = w;
    benchmark::DoNotOptimize(model.backward(params, t, layer_grads, grad));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_ForwardBackward)->Arg(16)->Arg(64);

void BM_DomainAugLoss(benchmark::State& state) {
  const Index n = state.range(0);
  const Matrix a = normalize_rows(gaussian(n, 128, 1)).output;
  std::vector<Matrix> s;
  for (int k = 0; k < 3; ++k) s.push_back(normalize_rows(gaussian(n, 128, 2 + k)).output);
  for (auto _ : state) benchmark::DoNotOptimize(domain_aug_loss({a, s, 0.1}));
}
BENCHMARK(BM_DomainAugLoss)->Arg(64)->Arg(256);

void BM_SemanticMatchingLoss(benchmark::State& state) {
  const Index n = state.range(0);
  const int classes = 5;
  const Matrix z = normalize_rows(gaussian(n, 128, 1)).output;
  const Matrix p = normalize_rows(gaussian(3 * classes, 128, 2)).output;
  std::vector<int> labels(static_cast<std::size_t>(n)), plabels;
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % classes);
  for (int k = 0; k < 3; ++k) {
    for (int c = 0; c < classes; ++c) plabels.push_back(c);
  }
  for (auto _ : state) benchmark::DoNotOptimize(semantic_matching_loss({z, labels, p, plabels, classes, 1.0}));
}
BENCHMARK(BM_SemanticMatchingLoss)->Arg(64)->Arg(256);

void BM_FedAvg(benchmark::State& state) {
  const VisionTransformer model(bench_backbone());
  std::vector<ModelParams> models;
  for (std::uint64_t k = 0; k < 4; ++k) models.push_back(model.initialize(k + 1));
  const std::vector<double> w(4, 0.25);
  for (auto _ : state) benchmark::DoNotOptimize(fedavg(models, w));
  state.SetBytesProcessed(state.iterations() * 4 * models[0].values().size() * static_cast<std::int64_t>(sizeof(double)));
}
BENCHMARK(BM_FedAvg);

void BM_PrivacyScan(benchmark::State& state) {
  DomainSpec spec;
  spec.n_samples = static_cast<std::size_t>(state.range(0));
  const auto data = make_synthetic_domains(7, std::span<const DomainSpec>(&spec, 1));
  FingerprintRegistry registry;
  registry.register_dataset(data.front());
  std::mt19937_64 rng(4);
  std::vector<std::uint8_t> payload(1 << 20);
  for (auto& b : payload) b = static_cast<std::uint8_t>(rng());
  const Message m{0, 1, PayloadKind::params, payload};
  for (auto _ : state) benchmark::DoNotOptimize(privacy_guard(m, registry));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(payload.size()));
}
BENCHMARK(BM_PrivacyScan)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
