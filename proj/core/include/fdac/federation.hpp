#pragma once

#include "fdac/backbone.hpp"
#include "fdac/checkpoint.hpp"
#include "fdac/datasets.hpp"
#include "fdac/error.hpp"
#include "fdac/losses.hpp"
#include "fdac/privacy.hpp"
#include "fdac/pseudo_label.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace fdac {

enum class ClientRole { source, target };

// SGD with momentum; the learning rate at local epoch e is lr / (1 + decay * e).
struct SgdConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double decay = 1.0;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
  Index batch_size = 64;

  double learning_rate_at(int epoch) const { return learning_rate / (1.0 + decay * epoch); }
  void validate() const;
};

struct OptimizerState {
  Vector momentum;
  int epoch = 0;
};

using DatasetHandle = std::variant<std::monostate, LabeledView, UnlabeledView>;

struct ClientState {
  int client_id = 0;
  ClientRole role = ClientRole::source;
  ModelParams params;
  OptimizerState optimizer;
  // Never part of any serialized form.
  DatasetHandle local_data;
  std::uint64_t seed = 0;
  // Target only: labels from the latest refresh.
  std::optional<PseudoLabelSet> pseudo_labels;
};

// Wire form of a client: id, role, epoch, params checkpoint and momentum.
Bytes serialize_client_state(const ClientState& state, const BackboneConfig& config);

ClientState train_source_locally(const VisionTransformer& model, ClientState state, int epochs,
                                 const SgdConfig& sgd);

enum class Augmentation { fdac, mixup, ssrt_offset, none };
enum class BlockStrategy { fixed, transferability, discriminability, random, all };
enum class TokenPooling { class_token, mean_patches };

std::string_view to_string(Augmentation a);
std::string_view to_string(BlockStrategy s);
std::string_view to_string(TokenPooling p);

struct AdaptationConfig {
  LossWeights weights;
  double temperature = 0.1;
  double sm_temperature = 1.0;
  BlockStrategy strategy = BlockStrategy::fixed;
  // Block tapped by the fixed strategy, 1-based; 0 means the last block.
  int layer = 0;
  double threshold = 0.8;
  int refresh_period = 1;
  Augmentation augmentation = Augmentation::fdac;
  double mixup_beta = 0.2;
  double offset_alpha = 1.0;
  TokenPooling pooling = TokenPooling::class_token;

  void validate(int depth) const;
};

// Layers contributing to the augmentation loss for one step, with weights.
struct LayerChoice {
  std::vector<int> layers;
  std::vector<double> weights;
};
LayerChoice choose_layers(BlockStrategy strategy, int fixed_layer, int depth, std::mt19937_64& rng);

struct AdaptationStats {
  double l_da = 0.0;
  double l_sm = 0.0;
  double l_t = 0.0;
  double total = 0.0;
  double coverage = 0.0;
  std::size_t batches = 0;
  std::size_t empty_pseudo_batches = 0;
  std::size_t skipped_semantic_batches = 0;
  std::size_t degenerate_rows = 0;
};

struct AdaptationResult {
  ClientState state;
  AdaptationStats stats;
};

// Source models are read-only; only the target state changes.
AdaptationResult adapt_target(const VisionTransformer& model, ClientState target,
                              std::span<const ModelParams> source_models,
                              std::span<const PrototypeSet> prototypes,
                              const AdaptationConfig& config, int epochs, const SgdConfig& sgd);

// Weighted coordinate-wise average. The reference is the highest-weight model
// r (first on ties); out = m_r + sum_{k != r, in client order} w_k (m_k - m_r),
// clamped to the per-coordinate [min, max] of the inputs.
ModelParams fedavg(std::span<const ModelParams> models, std::span<const double> weights);

struct RoundPlan {
  int local_repetitions = 1;
  int total_rounds = 10;
  // K + 1 weights (sources then target); empty = uniform.
  std::vector<double> aggregation_weights;

  void validate(std::size_t clients) const;
};

struct RoundReport {
  int round = 0;
  double l_da = 0.0;
  double l_sm = 0.0;
  double l_t = 0.0;
  double total_loss = 0.0;
  double target_accuracy = 0.0;
  double pseudo_coverage = 0.0;
  std::uint64_t cumulative_bytes = 0;

  bool operator==(const RoundReport&) const = default;
};

enum class AggregationWeighting { uniform, data_size };

struct FederationConfig {
  BackboneConfig backbone;
  RoundPlan plan;
  SgdConfig source_sgd;
  SgdConfig target_sgd;
  AdaptationConfig adaptation;
  // false = source-only baseline: no target adaptation, sources-only average.
  bool adapt = true;
  std::uint64_t seed = 1;
  bool parallel_sources = false;
  AggregationWeighting weighting = AggregationWeighting::uniform;
  bool early_stop = false;
  int early_stop_window = 5;
  double early_stop_delta = 0.001;
  bool privacy_checks = true;

  void validate(std::size_t num_sources) const;
};

struct FederationData {
  std::vector<std::shared_ptr<const DomainDataset>> sources;
  std::shared_ptr<const DomainDataset> target;
};

struct FederationHooks {
  std::function<void(const Message&)> on_message;
  std::function<void(const RoundReport&)> on_round;
};

struct FederationResult {
  std::vector<RoundReport> reports;
  ModelParams global_model;
  std::optional<PseudoLabelSet> pseudo_labels;
};

// Raised when a client fails mid-round; the round is not reported.
class RoundFailure : public Error {
 public:
  RoundFailure(int round, int client_id, const std::string& what)
      : Error("round " + std::to_string(round) + ", client " + std::to_string(client_id) + ": " + what),
        round_(round),
        client_id_(client_id) {}
  int round() const noexcept { return round_; }
  int client_id() const noexcept { return client_id_; }

 private:
  int round_;
  int client_id_;
};

FederationResult run_federation(const FederationConfig& config, const FederationData& data,
                                const FederationHooks& hooks = {});

// Evaluator-side accuracy (reads ground-truth labels).
double evaluate_accuracy(const VisionTransformer& model, const ModelParams& params,
                         const DomainDataset& dataset, Index batch_size = 256);

}  // namespace fdac
