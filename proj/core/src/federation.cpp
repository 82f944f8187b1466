#include "fdac/federation.hpp"

#include "fdac/error.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <future>
#include <numeric>
#include <optional>
#include <random>

namespace fdac {

namespace {

constexpr int kServerId = -1;

void sgd_step(ModelParams& params, OptimizerState& opt, const Vector& grad, const SgdConfig& sgd,
              double lr) {
  double scale = 1.0;
  if (sgd.clip_norm > 0.0) {
    const double norm = grad.norm();
    if (norm > sgd.clip_norm) scale = sgd.clip_norm / norm;
  }
  if (opt.momentum.size() != grad.size()) opt.momentum = Vector::Zero(grad.size());
  opt.momentum = sgd.momentum * opt.momentum + scale * grad;
  params.values() -= lr * opt.momentum;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

Matrix pool_tokens(const TokenBatch& tokens, TokenPooling pooling) {
  return pooling == TokenPooling::class_token ? tokens.class_tokens() : tokens.mean_patch_tokens();
}

Matrix pool_backward(const Matrix& grad_pooled, Index seq_len, TokenPooling pooling) {
  Matrix g = Matrix::Zero(grad_pooled.rows() * seq_len, grad_pooled.cols());
  for (Index n = 0; n < grad_pooled.rows(); ++n) {
    if (pooling == TokenPooling::class_token) {
      g.row(n * seq_len) = grad_pooled.row(n);
    } else {
      const RowVector share = grad_pooled.row(n) / static_cast<double>(seq_len - 1);
      for (Index t = 1; t < seq_len; ++t) g.row(n * seq_len + t) = share;
    }
  }
  return g;
}

void accumulate(Matrix& slot, const Matrix& value) {
  if (slot.size() == 0) {
    slot = value;
  } else {
    slot += value;
  }
}

// Rows of `tokens` reordered so sample n takes the tokens of sample perm[n].
Matrix permute_samples(const Matrix& rows, Index block, std::span<const std::size_t> perm) {
  Matrix out(rows.rows(), rows.cols());
  for (std::size_t n = 0; n < perm.size(); ++n) {
    out.middleRows(static_cast<Index>(n) * block, block) = rows.middleRows(static_cast<Index>(perm[n]) * block, block);
  }
  return out;
}

// Model tail from block `layer` onward, used as the head of the offset loss.
class TailHead final : public ProbabilityHead {
 public:
  TailHead(const VisionTransformer& model, const ModelParams& params, int layer, Index batch,
           double scale, ModelParams& grad)
      : model_(model), params_(params), layer_(layer), batch_(batch), scale_(scale), grad_(grad) {}

  Matrix probabilities(const Matrix& tokens) const override {
    const TokenBatch tb{batch_, model_.config().seq_len(), tokens};
    const Matrix feats = model_.run_blocks(params_, tb, layer_, model_.config().depth).class_tokens();
    return model_.classify(params_, feats).probabilities;
  }

  Matrix backward(const Matrix& tokens, const Matrix& grad_probabilities) const override {
    const TokenBatch tb{batch_, model_.config().seq_len(), tokens};
    const ForwardTrace trace = model_.trace_from(params_, tb, layer_);
    const ClassifierOutput cls = model_.classify(params_, trace.features());
    const Matrix grad_features = model_.classify_backward(params_, cls, scale_ * grad_probabilities, grad_);
    std::vector<Matrix> layer_grads(static_cast<std::size_t>(model_.config().depth + 1));
    layer_grads.back() = model_.feature_grad_to_tokens(grad_features);
    return model_.backward(params_, trace, layer_grads, grad_);
  }

 private:
  const VisionTransformer& model_;
  const ModelParams& params_;
  int layer_;
  Index batch_;
  double scale_;
  ModelParams& grad_;
};

}  // namespace

void SgdConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(decay >= 0.0)) throw ConfigError("learning-rate decay must be >= 0");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
}

Bytes serialize_client_state(const ClientState& state, const BackboneConfig& config) {
  Bytes out;
  auto put_u32 = [&out](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put_u32(static_cast<std::uint32_t>(state.client_id));
  out.push_back(state.role == ClientRole::source ? 0 : 1);
  put_u32(static_cast<std::uint32_t>(state.optimizer.epoch));
  const Bytes ckpt = serialize_checkpoint(config, state.params);
  put_u32(static_cast<std::uint32_t>(ckpt.size()));
  out.insert(out.end(), ckpt.begin(), ckpt.end());
  put_u32(static_cast<std::uint32_t>(state.optimizer.momentum.size()));
  for (Index i = 0; i < state.optimizer.momentum.size(); ++i) append_float32(out, state.optimizer.momentum(i));
  return out;
}

ClientState train_source_locally(const VisionTransformer& model, ClientState state, int epochs,
                                 const SgdConfig& sgd) {
  if (state.role != ClientRole::source) {
    throw RoleError("client " + std::to_string(state.client_id) + " is not a source client");
  }
  const auto* view = std::get_if<LabeledView>(&state.local_data);
  if (!view) throw RoleError("source client " + std::to_string(state.client_id) + " has no labeled data");
  sgd.validate();
  const int depth = model.config().depth;
  for (int e = 0; e < epochs; ++e) {
    const double lr = sgd.learning_rate_at(state.optimizer.epoch);
    const auto order = shuffled_indices(view->size(), derive_seed(state.seed, 0x5eed, static_cast<std::uint64_t>(state.optimizer.epoch)));
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(sgd.batch_size)) {
      const std::size_t count = std::min(static_cast<std::size_t>(sgd.batch_size), order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, count);
      std::vector<int> labels;
      labels.reserve(count);
      for (auto i : idx) labels.push_back(view->labels()[i]);

      const ForwardTrace trace = model.trace(state.params, view->gather_patches(idx));
      const ClassifierOutput cls = model.classify(state.params, trace.features());
      const ScalarLoss ce = source_ce_loss(cls.probabilities, labels);
      ModelParams grad = model.zeros();
      const Matrix grad_features = model.classify_backward(state.params, cls, ce.grad, grad);
      std::vector<Matrix> layer_grads(static_cast<std::size_t>(depth + 1));
      layer_grads.back() = model.feature_grad_to_tokens(grad_features);
      model.backward(state.params, trace, layer_grads, grad);
      sgd_step(state.params, state.optimizer, grad.values(), sgd, lr);
    }
    ++state.optimizer.epoch;
  }
  return state;
}

std::string_view to_string(Augmentation a) {
  switch (a) {
    case Augmentation::fdac: return "fdac";
    case Augmentation::mixup: return "mixup";
    case Augmentation::ssrt_offset: return "ssrt-offset";
    case Augmentation::none: return "none";
  }
  return "unknown";
}

std::string_view to_string(BlockStrategy s) {
  switch (s) {
    case BlockStrategy::fixed: return "fixed";
    case BlockStrategy::transferability: return "transferability";
    case BlockStrategy::discriminability: return "discriminability";
    case BlockStrategy::random: return "random";
    case BlockStrategy::all: return "all";
  }
  return "unknown";
}

std::string_view to_string(TokenPooling p) {
  return p == TokenPooling::class_token ? "cls" : "mean";
}

void AdaptationConfig::validate(int depth) const {
  weights.validate();
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(sm_temperature > 0.0)) throw ConfigError("semantic matching temperature must be positive");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
  if (refresh_period < 1) throw ConfigError("refresh_period must be >= 1");
  if (!(mixup_beta > 0.0)) throw ConfigError("mixup beta must be positive");
  if (!std::isfinite(offset_alpha)) throw ConfigError("offset alpha must be finite");
  if (layer < 0 || layer > depth) {
    throw ConfigError("layer " + std::to_string(layer) + " outside [1, " + std::to_string(depth) + "]");
  }
  if ((strategy == BlockStrategy::transferability || strategy == BlockStrategy::discriminability) && depth < 2) {
    throw ConfigError("half-split block strategies need at least two blocks");
  }
}

LayerChoice choose_layers(BlockStrategy strategy, int fixed_layer, int depth, std::mt19937_64& rng) {
  const int half = depth / 2;
  auto uniform = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  switch (strategy) {
    case BlockStrategy::fixed:
      return {{fixed_layer == 0 ? depth : fixed_layer}, {1.0}};
    case BlockStrategy::transferability:
      if (half < 1) throw ConfigError("half-split block strategies need at least two blocks");
      return {{uniform(1, half)}, {1.0}};
    case BlockStrategy::discriminability:
      if (half < 1) throw ConfigError("half-split block strategies need at least two blocks");
      return {{uniform(half + 1, depth)}, {1.0}};
    case BlockStrategy::random:
      return {{uniform(1, depth)}, {1.0}};
    case BlockStrategy::all: {
      LayerChoice c;
      for (int l = 1; l <= depth; ++l) {
        c.layers.push_back(l);
        c.weights.push_back(1.0 / depth);
      }
      return c;
    }
  }
  throw ConfigError("unknown block strategy");
}

AdaptationResult adapt_target(const VisionTransformer& model, ClientState target,
                              std::span<const ModelParams> source_models,
                              std::span<const PrototypeSet> prototypes,
                              const AdaptationConfig& config, int epochs, const SgdConfig& sgd) {
  if (target.role != ClientRole::target) {
    throw RoleError("client " + std::to_string(target.client_id) + " is not the target client");
  }
  const auto* view = std::get_if<UnlabeledView>(&target.local_data);
  if (!view) throw RoleError("target client has no unlabeled data view");
  if (source_models.empty()) throw InputError("target adaptation needs at least one source model");
  const auto& bc = model.config();
  config.validate(bc.depth);
  sgd.validate();

  const int depth = bc.depth;
  const Index seq = bc.seq_len();
  const Index tokens_per_sample = bc.num_patches();
  const double lambda1 = config.weights.lambda1;
  const double lambda2 = config.weights.lambda2;
  const bool project_prototypes = bc.feature_dim() != bc.projector_dim;

  Matrix stacked_prototypes;
  std::vector<int> prototype_labels;
  if (lambda2 > 0.0) {
    if (prototypes.empty()) throw InputError("semantic matching needs source prototypes");
    Index rows = 0;
    for (const auto& p : prototypes) rows += p.vectors.rows();
    stacked_prototypes.resize(rows, bc.feature_dim());
    Index at = 0;
    for (const auto& p : prototypes) {
      if (p.vectors.cols() != bc.feature_dim()) throw InputError("prototype width does not match the model");
      stacked_prototypes.middleRows(at, p.vectors.rows()) = p.vectors;
      at += p.vectors.rows();
      prototype_labels.insert(prototype_labels.end(), p.class_labels.begin(), p.class_labels.end());
    }
  }

  AdaptationStats stats;
  for (int e = 0; e < epochs; ++e) {
    const int epoch = target.optimizer.epoch;
    if (!target.pseudo_labels || refresh_schedule(epoch, config.refresh_period)) {
      target.pseudo_labels =
          ensemble_pseudo_labels(model, source_models, view->patches(), config.threshold);
    }
    const PseudoLabelSet& labels = *target.pseudo_labels;
    stats.coverage = labels.coverage();
    const double lr = sgd.learning_rate_at(epoch);
    const auto order = shuffled_indices(view->size(), derive_seed(target.seed, 0x5eed, static_cast<std::uint64_t>(epoch)));
    std::mt19937_64 rng(derive_seed(target.seed, 0xa06, static_cast<std::uint64_t>(epoch)));

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(sgd.batch_size)) {
      const std::size_t count = std::min(static_cast<std::size_t>(sgd.batch_size), order.size() - start);
      if (count < 2) continue;
      const std::span<const std::size_t> idx(order.data() + start, count);
      const auto n = static_cast<Index>(count);
      const Matrix patches = view->gather_patches(idx);
      const PseudoLabelSet local = labels.restrict_to(idx);

      ModelParams grad = model.zeros();
      const ForwardTrace trace = model.trace(target.params, patches);
      const Matrix features = trace.features();
      const ClassifierOutput cls = model.classify(target.params, features);
      stats.degenerate_rows += cls.degenerate_rows;
      std::vector<Matrix> layer_grads(static_cast<std::size_t>(depth + 1));
      Matrix grad_probs = Matrix::Zero(n, bc.num_classes);
      Matrix grad_features = Matrix::Zero(n, bc.feature_dim());

      // Pseudo-label cross-entropy.
      const PseudoLabelLoss lt = pseudo_label_loss(cls.probabilities, local);
      grad_probs += lt.grad;
      stats.empty_pseudo_batches += lt.empty_warnings;

      // Augmentation term (weighted by lambda1).
      double l_aug = 0.0;
      if (lambda1 > 0.0 && config.augmentation != Augmentation::none) {
        const LayerChoice choice = choose_layers(config.strategy, config.layer, depth, rng);
        std::vector<std::size_t> perm(count);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);

        if (config.augmentation == Augmentation::fdac) {
          // positives[l][k]: pooled, normalized block-l features of source k.
          std::vector<std::vector<Matrix>> positives(static_cast<std::size_t>(depth + 1));
          std::vector<int> wanted = choice.layers;
          std::sort(wanted.begin(), wanted.end());
          for (const auto& src : source_models) {
            TokenBatch tokens = model.embed(src, patches);
            int at = 0;
            for (int l : wanted) {
              tokens = model.run_blocks(src, tokens, at, l);
              at = l;
              positives[static_cast<std::size_t>(l)].push_back(normalize_rows(pool_tokens(tokens, config.pooling)).output);
            }
          }
          for (std::size_t c = 0; c < choice.layers.size(); ++c) {
            const int l = choice.layers[c];
            const RowNormalization anchors = normalize_rows(pool_tokens(trace.layer(l), config.pooling));
            const ContrastiveLoss da = domain_aug_loss({anchors.output, positives[static_cast<std::size_t>(l)], config.temperature});
            l_aug += choice.weights[c] * da.value;
            const Matrix g = normalize_rows_backward(anchors, da.grad_anchors * (choice.weights[c] * lambda1));
            accumulate(layer_grads[static_cast<std::size_t>(l)], pool_backward(g, seq, config.pooling));
          }
        } else if (config.augmentation == Augmentation::mixup) {
          const Matrix other_patches = permute_samples(patches, tokens_per_sample, perm);
          const Matrix other_targets = permute_samples(cls.probabilities, 1, perm);
          const MixupSample mixed = mixup(patches, other_patches, cls.probabilities, other_targets,
                                          config.mixup_beta, rng);
          const ForwardTrace mixed_trace = model.trace(target.params, mixed.inputs);
          const ClassifierOutput mixed_cls = model.classify(target.params, mixed_trace.features());
          const ScalarLoss lm = mixup_loss(mixed_cls.probabilities, mixed.targets);
          l_aug = lm.value;
          const Matrix gf = model.classify_backward(target.params, mixed_cls, lambda1 * lm.grad, grad);
          std::vector<Matrix> mixed_grads(static_cast<std::size_t>(depth + 1));
          mixed_grads.back() = model.feature_grad_to_tokens(gf);
          model.backward(target.params, mixed_trace, mixed_grads, grad);
        } else {
          for (std::size_t c = 0; c < choice.layers.size(); ++c) {
            const int l = choice.layers[c];
            const Matrix& b_x = trace.outputs[static_cast<std::size_t>(l)];
            const Matrix b_xr = permute_samples(b_x, seq, perm);
            const TailHead head(model, target.params, l, n, choice.weights[c] * lambda1, grad);
            const OffsetKlLoss lr_loss = random_offset_kl_loss(b_x, b_xr, config.offset_alpha, head);
            l_aug += choice.weights[c] * lr_loss.value;
            accumulate(layer_grads[static_cast<std::size_t>(l)], lr_loss.grad_tokens);
          }
        }
      }

      // Prototype-based semantic matching (weighted by lambda2).
      double l_sm = 0.0;
      if (lambda2 > 0.0) {
        if (local.empty()) {
          ++stats.skipped_semantic_batches;
        } else {
          std::vector<Index> rows;
          std::vector<int> pseudo;
          for (const auto& entry : local.entries()) {
            rows.push_back(static_cast<Index>(entry.sample_index));
            pseudo.push_back(entry.class_id);
          }
          Matrix covered(static_cast<Index>(rows.size()), bc.feature_dim());
          for (std::size_t r = 0; r < rows.size(); ++r) covered.row(static_cast<Index>(r)) = features.row(rows[r]);
          const ProjectorOutput proj = model.project(target.params, covered);
          stats.degenerate_rows += proj.degenerate_rows;
          std::optional<ProjectorOutput> proto_proj;
          if (project_prototypes) proto_proj = model.project(target.params, stacked_prototypes);
          const SemanticLoss sm = semantic_matching_loss(
              {proj.projections(), pseudo, proto_proj ? proto_proj->projections() : stacked_prototypes,
               prototype_labels, bc.num_classes, config.sm_temperature});
          l_sm = sm.value;
          const Matrix gcov = model.project_backward(target.params, proj, lambda2 * sm.grad_projections, grad);
          for (std::size_t r = 0; r < rows.size(); ++r) grad_features.row(rows[r]) += gcov.row(static_cast<Index>(r));
          if (proto_proj) model.project_backward(target.params, *proto_proj, lambda2 * sm.grad_prototypes, grad);
        }
      }

      grad_features += model.classify_backward(target.params, cls, grad_probs, grad);
      accumulate(layer_grads.back(), model.feature_grad_to_tokens(grad_features));
      model.backward(target.params, trace, layer_grads, grad);
      sgd_step(target.params, target.optimizer, grad.values(), sgd, lr);

      stats.l_da += l_aug;
      stats.l_sm += l_sm;
      stats.l_t += lt.value;
      stats.total += total_objective(l_aug, l_sm, lt.value, config.weights);
      ++stats.batches;
    }
    ++target.optimizer.epoch;
  }
  if (stats.batches > 0) {
    const double inv = 1.0 / static_cast<double>(stats.batches);
    stats.l_da *= inv;
    stats.l_sm *= inv;
    stats.l_t *= inv;
    stats.total *= inv;
  }
  return {std::move(target), stats};
}

ModelParams fedavg(std::span<const ModelParams> models, std::span<const double> weights) {
  if (models.empty()) throw AggregationError("nothing to aggregate");
  if (models.size() != weights.size()) throw AggregationError("one weight per model is required");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw AggregationError("aggregation weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw AggregationError("aggregation weights must sum to 1");
  const Index len = models.front().values().size();
  for (std::size_t k = 0; k < models.size(); ++k) {
    if (models[k].values().size() != len) {
      throw AggregationError("client " + std::to_string(k) + " has " +
                             std::to_string(models[k].values().size()) + " parameters, expected " +
                             std::to_string(len));
    }
  }
  const auto ref = static_cast<std::size_t>(std::distance(weights.begin(), std::max_element(weights.begin(), weights.end())));
  ModelParams out = models[ref];
  Vector& acc = out.values();
  const Vector& base = models[ref].values();
  for (std::size_t k = 0; k < models.size(); ++k) {
    if (k == ref || weights[k] == 0.0) continue;
    acc += weights[k] * (models[k].values() - base);
  }
  Vector lo = base;
  Vector hi = base;
  for (const auto& m : models) {
    lo = lo.cwiseMin(m.values());
    hi = hi.cwiseMax(m.values());
  }
  acc = acc.cwiseMax(lo).cwiseMin(hi);
  return out;
}

void RoundPlan::validate(std::size_t clients) const {
  if (local_repetitions < 1) throw ConfigError("local repetitions r must be >= 1");
  if (total_rounds < 0) throw ConfigError("total_rounds must be >= 0");
  if (!aggregation_weights.empty()) {
    if (aggregation_weights.size() != clients) {
      throw ConfigError("expected " + std::to_string(clients) + " aggregation weights");
    }
    double sum = 0.0;
    for (double w : aggregation_weights) {
      if (!(w >= 0.0)) throw ConfigError("aggregation weights must be non-negative");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("aggregation weights must sum to 1");
  }
}

void FederationConfig::validate(std::size_t num_sources) const {
  backbone.validate();
  if (num_sources < 1) throw ConfigError("at least one source domain is required");
  plan.validate(num_sources + 1);
  source_sgd.validate();
  target_sgd.validate();
  adaptation.validate(backbone.depth);
  if (early_stop_window < 1) throw ConfigError("early_stop_window must be >= 1");
}

double evaluate_accuracy(const VisionTransformer& model, const ModelParams& params,
                         const DomainDataset& dataset, Index batch_size) {
  const Index t = model.config().num_patches();
  const auto n = static_cast<Index>(dataset.size());
  if (n == 0) return 0.0;
  std::size_t correct = 0;
  for (Index start = 0; start < n; start += batch_size) {
    const Index count = std::min(batch_size, n - start);
    const Matrix probs = model.predict(params, dataset.patches().middleRows(start * t, count * t));
    for (Index i = 0; i < count; ++i) {
      Index best = 0;
      probs.row(i).maxCoeff(&best);
      if (best == dataset.labels()[static_cast<std::size_t>(start + i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

FederationResult run_federation(const FederationConfig& config, const FederationData& data,
                                const FederationHooks& hooks) {
  const std::size_t k_sources = data.sources.size();
  config.validate(k_sources);
  if (!data.target) throw ConfigError("a target domain is required");
  const VisionTransformer model(config.backbone);
  const int target_id = static_cast<int>(k_sources);
  const int r = config.plan.local_repetitions;

  FingerprintRegistry registry;
  if (config.privacy_checks) {
    for (const auto& s : data.sources) registry.register_dataset(*s);
    registry.register_dataset(*data.target);
  }

  std::vector<double> weights = config.plan.aggregation_weights;
  if (weights.empty()) {
    if (config.weighting == AggregationWeighting::data_size) {
      double total = static_cast<double>(data.target->size());
      for (const auto& s : data.sources) total += static_cast<double>(s->size());
      for (const auto& s : data.sources) weights.push_back(static_cast<double>(s->size()) / total);
      weights.push_back(static_cast<double>(data.target->size()) / total);
    } else {
      weights.assign(k_sources + 1, 1.0 / static_cast<double>(k_sources + 1));
    }
  }
  std::vector<double> source_only_weights(weights.begin(), weights.begin() + static_cast<std::ptrdiff_t>(k_sources));
  {
    double s = std::accumulate(source_only_weights.begin(), source_only_weights.end(), 0.0);
    if (s <= 0.0) {
      source_only_weights.assign(k_sources, 1.0 / static_cast<double>(k_sources));
    } else {
      for (double& w : source_only_weights) w /= s;
    }
  }

  ModelParams global = model.initialize(derive_seed(config.seed, 0x1417));
  std::vector<ClientState> sources;
  for (std::size_t k = 0; k < k_sources; ++k) {
    if (data.sources[k]->num_classes() != config.backbone.num_classes) {
      throw ConfigError("source domain '" + data.sources[k]->name() + "' label space does not match the model");
    }
    ClientState s;
    s.client_id = static_cast<int>(k);
    s.role = ClientRole::source;
    s.params = global;
    s.local_data = LabeledView(data.sources[k]);
    s.seed = derive_seed(config.seed, 0xc11e, k);
    sources.push_back(std::move(s));
  }
  ClientState target;
  target.client_id = target_id;
  target.role = ClientRole::target;
  target.params = global;
  target.local_data = UnlabeledView(data.target);
  target.seed = derive_seed(config.seed, 0xc11e, k_sources);

  FederationResult result;
  std::uint64_t cumulative_bytes = 0;
  auto send = [&](int sender, int receiver, PayloadKind kind, Bytes payload) {
    Message m{sender, receiver, kind, std::move(payload)};
    if (config.privacy_checks) enforce_privacy(m, registry);
    if (hooks.on_message) hooks.on_message(m);
    cumulative_bytes += m.byte_size();
    return m;
  };

  std::deque<double> recent;
  for (int round = 1; round <= config.plan.total_rounds; ++round) {
    // Stage 1: local source training.
    auto train = [&](std::size_t k) {
      try {
        return train_source_locally(model, sources[k], r, config.source_sgd);
      } catch (const std::exception& e) {
        throw RoundFailure(round, static_cast<int>(k), e.what());
      }
    };
    if (config.parallel_sources) {
      std::vector<std::future<ClientState>> jobs;
      for (std::size_t k = 0; k < k_sources; ++k) jobs.push_back(std::async(std::launch::async, train, k));
      for (std::size_t k = 0; k < k_sources; ++k) sources[k] = jobs[k].get();
    } else {
      for (std::size_t k = 0; k < k_sources; ++k) sources[k] = train(k);
    }

    // Sources share parameters and prototypes; the target only sees these
    // messages. Without adaptation the parameters go straight to the server.
    std::vector<ModelParams> received;
    std::vector<PrototypeSet> prototypes;
    for (std::size_t k = 0; k < k_sources; ++k) {
      const int id = static_cast<int>(k);
      const Message params_msg = send(id, config.adapt ? target_id : kServerId, PayloadKind::params,
                                      serialize_checkpoint(config.backbone, sources[k].params));
      received.push_back(deserialize_checkpoint(params_msg.payload).params);
      if (!config.adapt) continue;
      PrototypeSet protos;
      try {
        protos = model.export_prototypes(sources[k].params, id);
      } catch (const std::exception& e) {
        throw RoundFailure(round, id, e.what());
      }
      const Message proto_msg = send(id, target_id, PayloadKind::prototypes, serialize_prototypes(protos));
      prototypes.push_back(deserialize_prototypes(proto_msg.payload));
    }

    // Stage 2: target adaptation.
    AdaptationStats stats;
    if (config.adapt) {
      try {
        AdaptationResult adapted = adapt_target(model, std::move(target), received, prototypes,
                                                config.adaptation, r, config.target_sgd);
        target = std::move(adapted.state);
        stats = adapted.stats;
      } catch (const RoundFailure&) {
        throw;
      } catch (const std::exception& e) {
        throw RoundFailure(round, target_id, e.what());
      }
    }

    // Stage 3: aggregation and broadcast.
    std::vector<ModelParams> to_aggregate = received;
    std::span<const double> agg_weights = source_only_weights;
    if (config.adapt) {
      const Message target_msg =
          send(target_id, kServerId, PayloadKind::params, serialize_checkpoint(config.backbone, target.params));
      to_aggregate.push_back(deserialize_checkpoint(target_msg.payload).params);
      agg_weights = weights;
    }
    const ModelParams aggregated = fedavg(to_aggregate, agg_weights);
    const Bytes global_bytes = serialize_checkpoint(config.backbone, aggregated);
    for (std::size_t k = 0; k <= k_sources; ++k) {
      const Message down = send(kServerId, static_cast<int>(k), PayloadKind::params, global_bytes);
      ModelParams copy = deserialize_checkpoint(down.payload).params;
      // Local optimizers restart from the new global model; the epoch counter
      // driving the learning-rate schedule carries over.
      ClientState& client = k < k_sources ? sources[k] : target;
      client.params = std::move(copy);
      client.optimizer.momentum = Vector();
    }
    global = target.params;

    RoundReport report;
    report.round = round;
    report.l_da = stats.l_da;
    report.l_sm = stats.l_sm;
    report.l_t = stats.l_t;
    report.total_loss = stats.total;
    report.target_accuracy = evaluate_accuracy(model, global, *data.target);
    report.pseudo_coverage = stats.coverage;
    report.cumulative_bytes = cumulative_bytes;
    result.reports.push_back(report);
    if (hooks.on_round) hooks.on_round(report);

    if (config.early_stop) {
      recent.push_back(report.target_accuracy);
      if (static_cast<int>(recent.size()) > config.early_stop_window + 1) recent.pop_front();
      if (static_cast<int>(recent.size()) == config.early_stop_window + 1 &&
          std::abs(recent.back() - recent.front()) < config.early_stop_delta) {
        break;
      }
    }
  }
  result.global_model = std::move(global);
  result.pseudo_labels = target.pseudo_labels;
  return result;
}

}  // namespace fdac
