#include "fdac/backbone.hpp"

#include "fdac/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace fdac {

namespace {

struct LayerNormResult {
  Matrix output;
  Matrix normalized;
  Vector rstd;
};

LayerNormResult layer_norm(const Matrix& x, const Eigen::Map<const Matrix>& gamma,
                           const Eigen::Map<const Matrix>& beta, double eps) {
  LayerNormResult r;
  const Vector mean = x.rowwise().mean();
  r.normalized = x.colwise() - mean;
  const Vector var = r.normalized.array().square().rowwise().mean();
  r.rstd = (var.array() + eps).rsqrt();
  r.normalized.array().colwise() *= r.rstd.array();
  r.output = (r.normalized.array().rowwise() * gamma.row(0).array()).matrix();
  r.output.rowwise() += beta.row(0);
  return r;
}

Matrix layer_norm_backward(const Matrix& grad_out, const Matrix& normalized, const Vector& rstd,
                           const Eigen::Map<const Matrix>& gamma, Eigen::Map<Matrix> grad_gamma,
                           Eigen::Map<Matrix> grad_beta) {
  grad_gamma.row(0) += (grad_out.array() * normalized.array()).colwise().sum().matrix();
  grad_beta.row(0) += grad_out.colwise().sum();
  const Matrix dhat = (grad_out.array().rowwise() * gamma.row(0).array()).matrix();
  const Vector m1 = dhat.rowwise().mean();
  const Vector m2 = (dhat.array() * normalized.array()).rowwise().mean();
  Matrix dx = dhat.colwise() - m1;
  dx.array() -= normalized.array().colwise() * m2.array();
  dx.array().colwise() *= rstd.array();
  return dx;
}

}  // namespace

void BackboneConfig::validate() const {
  if (image_side <= 0 || patch_side <= 0 || channels <= 0) {
    throw ConfigError("image_side, patch_side and channels must be positive");
  }
  if (image_side % patch_side != 0) {
    throw ConfigError("image_side must be a multiple of patch_side");
  }
  if (depth < 1) throw ConfigError("depth must be at least 1");
  if (width < 1 || heads < 1 || width % heads != 0) {
    throw ConfigError("width must be a positive multiple of heads");
  }
  if (mlp_hidden < 1) throw ConfigError("mlp_hidden must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (projector_dim < 1 || projector_hidden < 0) throw ConfigError("invalid projector width");
  if (activation != "gelu" && activation != "relu") {
    throw ConfigError("activation must be gelu or relu, got '" + activation + "'");
  }
  if (!(layer_norm_eps > 0.0)) throw ConfigError("layer_norm_eps must be positive");
  if (!(prototype_init_norm > 0.0) || !std::isfinite(prototype_init_norm)) {
    throw ConfigError("prototype_init_norm must be positive");
  }
}

Index ParamLayout::add(std::string name, Index rows, Index cols, ParamKind kind) {
  groups_.push_back({std::move(name), rows, cols, size_, kind});
  size_ += rows * cols;
  return static_cast<Index>(groups_.size() - 1);
}

Index ParamLayout::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    if (groups_[i].name == name) return static_cast<Index>(i);
  }
  throw InputError("unknown parameter group '" + std::string(name) + "'");
}

const ParamGroup& ParamLayout::group(std::string_view name) const {
  return groups_[static_cast<std::size_t>(index_of(name))];
}

bool ParamLayout::operator==(const ParamLayout& other) const {
  if (groups_.size() != other.groups_.size() || size_ != other.size_) return false;
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    const auto& a = groups_[i];
    const auto& b = other.groups_[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.kind != b.kind) return false;
  }
  return true;
}

ModelParams::ModelParams(std::shared_ptr<const ParamLayout> layout)
    : layout_(std::move(layout)), values_(Vector::Zero(layout_->size())) {}

Eigen::VectorBlock<const Vector> ModelParams::extractor() const {
  return values_.head(layout_->group("prototypes").offset);
}

Eigen::VectorBlock<const Vector> ModelParams::projector() const {
  const auto& p = layout_->group("prototypes");
  return values_.tail(values_.size() - p.offset - p.size());
}

bool ModelParams::operator==(const ModelParams& other) const {
  if (values_.size() != other.values_.size()) return false;
  if (layout_ && other.layout_ && !(*layout_ == *other.layout_)) return false;
  return values_ == other.values_;
}

Matrix TokenBatch::class_tokens() const {
  Matrix out(batch, values.cols());
  for (Index n = 0; n < batch; ++n) out.row(n) = values.row(n * seq_len);
  return out;
}

Matrix TokenBatch::mean_patch_tokens() const {
  Matrix out(batch, values.cols());
  for (Index n = 0; n < batch; ++n) {
    out.row(n) = values.middleRows(n * seq_len + 1, seq_len - 1).colwise().mean();
  }
  return out;
}

Matrix ForwardTrace::features() const {
  return layer(static_cast<int>(outputs.size()) - 1).class_tokens();
}

VisionTransformer::VisionTransformer(BackboneConfig config) : config_(std::move(config)) {
  config_.validate();
  relu_ = config_.activation == "relu";
  const Index d = config_.width;
  auto layout = std::make_shared<ParamLayout>();
  embed_weight_ = layout->add("embed.weight", config_.patch_dim(), d, ParamKind::extractor);
  embed_bias_ = layout->add("embed.bias", 1, d, ParamKind::extractor);
  class_token_ = layout->add("class_token", 1, d, ParamKind::extractor);
  pos_embed_ = layout->add("pos_embed", config_.seq_len(), d, ParamKind::extractor);
  for (int l = 1; l <= config_.depth; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    BlockSlots s{};
    s.norm1_gamma = layout->add(p + "norm1.gamma", 1, d, ParamKind::extractor);
    s.norm1_beta = layout->add(p + "norm1.beta", 1, d, ParamKind::extractor);
    s.qkv_weight = layout->add(p + "attn.qkv.weight", d, 3 * d, ParamKind::extractor);
    s.qkv_bias = layout->add(p + "attn.qkv.bias", 1, 3 * d, ParamKind::extractor);
    s.out_weight = layout->add(p + "attn.out.weight", d, d, ParamKind::extractor);
    s.out_bias = layout->add(p + "attn.out.bias", 1, d, ParamKind::extractor);
    s.norm2_gamma = layout->add(p + "norm2.gamma", 1, d, ParamKind::extractor);
    s.norm2_beta = layout->add(p + "norm2.beta", 1, d, ParamKind::extractor);
    s.fc1_weight = layout->add(p + "mlp.fc1.weight", d, config_.mlp_hidden, ParamKind::extractor);
    s.fc1_bias = layout->add(p + "mlp.fc1.bias", 1, config_.mlp_hidden, ParamKind::extractor);
    s.fc2_weight = layout->add(p + "mlp.fc2.weight", config_.mlp_hidden, d, ParamKind::extractor);
    s.fc2_bias = layout->add(p + "mlp.fc2.bias", 1, d, ParamKind::extractor);
    blocks_.push_back(s);
  }
  prototypes_ = layout->add("prototypes", config_.num_classes, d, ParamKind::prototypes);
  const Index ph = config_.projector_hidden_width();
  proj_fc1_weight_ = layout->add("projector.fc1.weight", d, ph, ParamKind::projector);
  proj_fc1_bias_ = layout->add("projector.fc1.bias", 1, ph, ParamKind::projector);
  proj_fc2_weight_ =
      layout->add("projector.fc2.weight", ph, config_.projector_dim, ParamKind::projector);
  proj_fc2_bias_ = layout->add("projector.fc2.bias", 1, config_.projector_dim, ParamKind::projector);
  layout_ = std::move(layout);
}

ModelParams VisionTransformer::initialize(std::uint64_t seed) const {
  ModelParams params(layout_);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& g : layout_->groups()) {
    auto m = params.view(g);
    const bool is_bias = g.name.ends_with(".bias") || g.name.ends_with(".beta");
    if (g.name.ends_with(".gamma")) {
      m.setOnes();
    } else if (is_bias) {
      m.setZero();
    } else {
      // Embeddings use a small fixed scale; matrices scale with fan-in.
      double scale = 0.02;
      if (g.name.ends_with(".weight")) scale = 1.0 / std::sqrt(static_cast<double>(g.rows));
      if (g.kind == ParamKind::prototypes) {
        scale = config_.prototype_init_norm / std::sqrt(static_cast<double>(g.cols));
      }
      for (Index j = 0; j < m.cols(); ++j) {
        for (Index i = 0; i < m.rows(); ++i) m(i, j) = scale * normal(rng);
      }
    }
  }
  return params;
}

void VisionTransformer::check_layer(int layer, int lowest) const {
  if (layer < lowest || layer > config_.depth) {
    throw ConfigError("layer index " + std::to_string(layer) + " outside [" +
                      std::to_string(lowest) + ", " + std::to_string(config_.depth) + "]");
  }
}

double VisionTransformer::activate(double x) const { return relu_ ? std::max(x, 0.0) : gelu(x); }

double VisionTransformer::activate_derivative(double x) const {
  return relu_ ? (x > 0.0 ? 1.0 : 0.0) : gelu_derivative(x);
}

TokenBatch VisionTransformer::embed(const ModelParams& params, const Matrix& patches) const {
  const Index t = config_.num_patches();
  if (patches.cols() != config_.patch_dim() || patches.rows() % t != 0) {
    throw InputError("patch matrix shape " + std::to_string(patches.rows()) + "x" +
                     std::to_string(patches.cols()) + " does not match the patch geometry");
  }
  const Index batch = patches.rows() / t;
  const Index s = config_.seq_len();
  Matrix projected = patches * params.view(embed_weight_);
  projected.rowwise() += params.view(embed_bias_).row(0);
  const auto cls = params.view(class_token_);
  const auto pos = params.view(pos_embed_);
  TokenBatch out{batch, s, Matrix(batch * s, config_.width)};
  for (Index n = 0; n < batch; ++n) {
    out.values.row(n * s) = cls.row(0) + pos.row(0);
    out.values.middleRows(n * s + 1, t) = projected.middleRows(n * t, t) + pos.bottomRows(t);
  }
  return out;
}

Matrix VisionTransformer::block_forward(const ModelParams& params, int layer, const Matrix& input,
                                        Index batch, BlockCache* cache) const {
  const BlockSlots& s = blocks_[static_cast<std::size_t>(layer - 1)];
  const Index d = config_.width;
  const Index heads = config_.heads;
  const Index dh = d / heads;
  const Index seq = config_.seq_len();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double eps = config_.layer_norm_eps;

  LayerNormResult n1 = layer_norm(input, params.view(s.norm1_gamma), params.view(s.norm1_beta), eps);
  Matrix qkv = n1.output * params.view(s.qkv_weight);
  qkv.rowwise() += params.view(s.qkv_bias).row(0);

  Matrix context(input.rows(), d);
  std::vector<Matrix> attention;
  if (cache) attention.reserve(static_cast<std::size_t>(batch * heads));
  for (Index n = 0; n < batch; ++n) {
    for (Index h = 0; h < heads; ++h) {
      const auto q = qkv.block(n * seq, h * dh, seq, dh);
      const auto k = qkv.block(n * seq, d + h * dh, seq, dh);
      const auto v = qkv.block(n * seq, 2 * d + h * dh, seq, dh);
      Matrix attn = softmax_rows((q * k.transpose()) * scale);
      context.block(n * seq, h * dh, seq, dh).noalias() = attn * v;
      if (cache) attention.push_back(std::move(attn));
    }
  }
  Matrix mid = context * params.view(s.out_weight);
  mid.rowwise() += params.view(s.out_bias).row(0);
  mid += input;

  LayerNormResult n2 = layer_norm(mid, params.view(s.norm2_gamma), params.view(s.norm2_beta), eps);
  Matrix pre = n2.output * params.view(s.fc1_weight);
  pre.rowwise() += params.view(s.fc1_bias).row(0);
  Matrix act = pre.unaryExpr([this](double x) { return activate(x); });
  Matrix out = act * params.view(s.fc2_weight);
  out.rowwise() += params.view(s.fc2_bias).row(0);
  out += mid;

  if (cache) {
    cache->input = input;
    cache->norm1_hat = std::move(n1.normalized);
    cache->norm1_rstd = std::move(n1.rstd);
    cache->qkv = std::move(qkv);
    cache->attention = std::move(attention);
    cache->context = std::move(context);
    cache->residual_mid = std::move(mid);
    cache->norm2_hat = std::move(n2.normalized);
    cache->norm2_rstd = std::move(n2.rstd);
    cache->mlp_pre = std::move(pre);
    cache->mlp_act = std::move(act);
  }
  return out;
}

Matrix VisionTransformer::block_backward(const ModelParams& params, int layer,
                                         const BlockCache& c, const Matrix& grad_output,
                                         Index batch, ModelParams& grad) const {
  const BlockSlots& s = blocks_[static_cast<std::size_t>(layer - 1)];
  const Index d = config_.width;
  const Index heads = config_.heads;
  const Index dh = d / heads;
  const Index seq = config_.seq_len();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // MLP branch.
  Matrix grad_mid = grad_output;
  grad.view(s.fc2_weight).noalias() += c.mlp_act.transpose() * grad_output;
  grad.view(s.fc2_bias).row(0) += grad_output.colwise().sum();
  Matrix grad_pre = grad_output * params.view(s.fc2_weight).transpose();
  for (Index j = 0; j < grad_pre.cols(); ++j) {
    for (Index i = 0; i < grad_pre.rows(); ++i) grad_pre(i, j) *= activate_derivative(c.mlp_pre(i, j));
  }
  // Recover LN2 output from the cached normalized values.
  Matrix n2_out = (c.norm2_hat.array().rowwise() * params.view(s.norm2_gamma).row(0).array()).matrix();
  n2_out.rowwise() += params.view(s.norm2_beta).row(0);
  grad.view(s.fc1_weight).noalias() += n2_out.transpose() * grad_pre;
  grad.view(s.fc1_bias).row(0) += grad_pre.colwise().sum();
  const Matrix grad_n2 = grad_pre * params.view(s.fc1_weight).transpose();
  grad_mid += layer_norm_backward(grad_n2, c.norm2_hat, c.norm2_rstd, params.view(s.norm2_gamma),
                                  grad.view(s.norm2_gamma), grad.view(s.norm2_beta));

  // Attention branch.
  Matrix grad_input = grad_mid;
  grad.view(s.out_weight).noalias() += c.context.transpose() * grad_mid;
  grad.view(s.out_bias).row(0) += grad_mid.colwise().sum();
  const Matrix grad_context = grad_mid * params.view(s.out_weight).transpose();
  Matrix grad_qkv(c.qkv.rows(), 3 * d);
  for (Index n = 0; n < batch; ++n) {
    for (Index h = 0; h < heads; ++h) {
      const Matrix& attn = c.attention[static_cast<std::size_t>(n * heads + h)];
      const auto q = c.qkv.block(n * seq, h * dh, seq, dh);
      const auto k = c.qkv.block(n * seq, d + h * dh, seq, dh);
      const auto v = c.qkv.block(n * seq, 2 * d + h * dh, seq, dh);
      const auto grad_out = grad_context.block(n * seq, h * dh, seq, dh);
      const Matrix grad_attn = grad_out * v.transpose();
      grad_qkv.block(n * seq, 2 * d + h * dh, seq, dh).noalias() = attn.transpose() * grad_out;
      const Matrix grad_scores = softmax_rows_backward(attn, grad_attn) * scale;
      grad_qkv.block(n * seq, h * dh, seq, dh).noalias() = grad_scores * k;
      grad_qkv.block(n * seq, d + h * dh, seq, dh).noalias() = grad_scores.transpose() * q;
    }
  }
  Matrix n1_out = (c.norm1_hat.array().rowwise() * params.view(s.norm1_gamma).row(0).array()).matrix();
  n1_out.rowwise() += params.view(s.norm1_beta).row(0);
  grad.view(s.qkv_weight).noalias() += n1_out.transpose() * grad_qkv;
  grad.view(s.qkv_bias).row(0) += grad_qkv.colwise().sum();
  const Matrix grad_n1 = grad_qkv * params.view(s.qkv_weight).transpose();
  grad_input += layer_norm_backward(grad_n1, c.norm1_hat, c.norm1_rstd, params.view(s.norm1_gamma),
                                    grad.view(s.norm1_gamma), grad.view(s.norm1_beta));
  return grad_input;
}

TokenBatch VisionTransformer::run_blocks(const ModelParams& params, const TokenBatch& tokens,
                                         int first_layer, int last_layer) const {
  check_layer(first_layer, 0);
  check_layer(last_layer, first_layer);
  if (tokens.width() != config_.width || tokens.seq_len != config_.seq_len() ||
      tokens.values.rows() != tokens.batch * tokens.seq_len) {
    throw InputError("token batch shape does not match the backbone configuration");
  }
  TokenBatch current = tokens;
  for (int l = first_layer + 1; l <= last_layer; ++l) {
    current.values = block_forward(params, l, current.values, current.batch, nullptr);
  }
  return current;
}

BlockTap VisionTransformer::forward_block_tap(const ModelParams& params, const TokenBatch& b0,
                                              int layer) const {
  check_layer(layer, 1);
  BlockTap tap;
  tap.block.layer_index = layer;
  tap.block.tokens = run_blocks(params, b0, 0, layer);
  const TokenBatch last = run_blocks(params, tap.block.tokens, layer, config_.depth);
  tap.features = last.class_tokens();
  return tap;
}

Matrix VisionTransformer::features(const ModelParams& params, const Matrix& patches) const {
  return run_blocks(params, embed(params, patches), 0, config_.depth).class_tokens();
}

ForwardTrace VisionTransformer::trace(const ModelParams& params, const Matrix& patches) const {
  ForwardTrace t = trace_from(params, embed(params, patches), 0);
  t.embedded = true;
  t.patches = patches;
  return t;
}

ForwardTrace VisionTransformer::trace_from(const ModelParams& params, const TokenBatch& tokens,
                                           int start_layer) const {
  check_layer(start_layer, 0);
  if (tokens.width() != config_.width || tokens.seq_len != config_.seq_len() ||
      tokens.values.rows() != tokens.batch * tokens.seq_len) {
    throw InputError("token batch shape does not match the backbone configuration");
  }
  ForwardTrace t;
  t.start_layer = start_layer;
  t.batch = tokens.batch;
  t.seq_len = tokens.seq_len;
  t.outputs.resize(static_cast<std::size_t>(config_.depth + 1));
  t.blocks.resize(static_cast<std::size_t>(config_.depth));
  t.outputs[static_cast<std::size_t>(start_layer)] = tokens.values;
  for (int l = start_layer + 1; l <= config_.depth; ++l) {
    t.outputs[static_cast<std::size_t>(l)] =
        block_forward(params, l, t.outputs[static_cast<std::size_t>(l - 1)], t.batch,
                      &t.blocks[static_cast<std::size_t>(l - 1)]);
  }
  return t;
}

Matrix VisionTransformer::feature_grad_to_tokens(const Matrix& grad_features) const {
  const Index s = config_.seq_len();
  Matrix g = Matrix::Zero(grad_features.rows() * s, grad_features.cols());
  for (Index n = 0; n < grad_features.rows(); ++n) g.row(n * s) = grad_features.row(n);
  return g;
}

Matrix VisionTransformer::backward(const ModelParams& params, const ForwardTrace& trace,
                                   const std::vector<Matrix>& layer_grads, ModelParams& grad) const {
  if (layer_grads.size() != static_cast<std::size_t>(config_.depth + 1)) {
    throw InputError("backward expects one gradient slot per layer output");
  }
  const Index rows = trace.batch * trace.seq_len;
  auto slot = [&](int l) -> const Matrix& { return layer_grads[static_cast<std::size_t>(l)]; };
  Matrix g = slot(config_.depth).size() > 0 ? slot(config_.depth) : Matrix::Zero(rows, config_.width);
  for (int l = config_.depth; l > trace.start_layer; --l) {
    g = block_backward(params, l, trace.blocks[static_cast<std::size_t>(l - 1)], g, trace.batch, grad);
    if (slot(l - 1).size() > 0) g += slot(l - 1);
  }
  if (trace.embedded) {
    const Index t = config_.num_patches();
    const Index s = config_.seq_len();
    auto grad_cls = grad.view(class_token_);
    auto grad_pos = grad.view(pos_embed_);
    Matrix grad_projected(trace.batch * t, config_.width);
    for (Index n = 0; n < trace.batch; ++n) {
      grad_cls.row(0) += g.row(n * s);
      grad_pos += g.middleRows(n * s, s);
      grad_projected.middleRows(n * t, t) = g.middleRows(n * s + 1, t);
    }
    grad.view(embed_weight_).noalias() += trace.patches.transpose() * grad_projected;
    grad.view(embed_bias_).row(0) += grad_projected.colwise().sum();
  }
  return g;
}

ClassifierOutput VisionTransformer::classify(const ModelParams& params, const Matrix& features) const {
  if (features.cols() != config_.feature_dim()) {
    throw InputError("feature width does not match the classifier");
  }
  ClassifierOutput out;
  out.normalized = normalize_rows(features);
  out.logits = out.normalized.output * params.view(prototypes_).transpose();
  out.probabilities = softmax_rows(out.logits);
  const double uniform = 1.0 / config_.num_classes;
  for (Index i = 0; i < features.rows(); ++i) {
    if (out.normalized.norms(i) < kDegenerateNorm) {
      out.probabilities.row(i).setConstant(uniform);
      ++out.degenerate_rows;
    }
  }
  return out;
}

Matrix VisionTransformer::classify_backward(const ModelParams& params, const ClassifierOutput& out,
                                            const Matrix& grad_probabilities, ModelParams& grad) const {
  Matrix grad_logits = softmax_rows_backward(out.probabilities, grad_probabilities);
  for (Index i = 0; i < grad_logits.rows(); ++i) {
    if (out.normalized.norms(i) < kDegenerateNorm) grad_logits.row(i).setZero();
  }
  grad.view(prototypes_).noalias() += grad_logits.transpose() * out.normalized.output;
  const Matrix grad_normalized = grad_logits * params.view(prototypes_);
  return normalize_rows_backward(out.normalized, grad_normalized);
}

Matrix VisionTransformer::predict(const ModelParams& params, const Matrix& patches) const {
  return classify(params, features(params, patches)).probabilities;
}

ProjectorOutput VisionTransformer::project(const ModelParams& params, const Matrix& inputs) const {
  if (inputs.cols() != config_.feature_dim()) {
    throw InputError("projector input width does not match the feature width");
  }
  ProjectorOutput out;
  out.input = inputs;
  out.hidden_pre = inputs * params.view(proj_fc1_weight_);
  out.hidden_pre.rowwise() += params.view(proj_fc1_bias_).row(0);
  out.hidden_act = out.hidden_pre.unaryExpr([this](double x) { return activate(x); });
  Matrix raw = out.hidden_act * params.view(proj_fc2_weight_);
  raw.rowwise() += params.view(proj_fc2_bias_).row(0);
  out.normalized = normalize_rows(raw, 0);
  out.degenerate_rows = out.normalized.degenerate_rows;
  return out;
}

Matrix VisionTransformer::project_backward(const ModelParams& params, const ProjectorOutput& out,
                                           const Matrix& grad_projections, ModelParams& grad) const {
  const Matrix grad_raw = normalize_rows_backward(out.normalized, grad_projections);
  grad.view(proj_fc2_weight_).noalias() += out.hidden_act.transpose() * grad_raw;
  grad.view(proj_fc2_bias_).row(0) += grad_raw.colwise().sum();
  Matrix grad_hidden = grad_raw * params.view(proj_fc2_weight_).transpose();
  for (Index j = 0; j < grad_hidden.cols(); ++j) {
    for (Index i = 0; i < grad_hidden.rows(); ++i) {
      grad_hidden(i, j) *= activate_derivative(out.hidden_pre(i, j));
    }
  }
  grad.view(proj_fc1_weight_).noalias() += out.input.transpose() * grad_hidden;
  grad.view(proj_fc1_bias_).row(0) += grad_hidden.colwise().sum();
  return grad_hidden * params.view(proj_fc1_weight_).transpose();
}

PrototypeSet VisionTransformer::export_prototypes(const ModelParams& params, int source_id) const {
  const auto p = params.view(prototypes_);
  PrototypeSet set;
  set.source_id = source_id;
  set.vectors.resize(p.rows(), p.cols());
  for (Index c = 0; c < p.rows(); ++c) {
    const double norm = p.row(c).norm();
    if (!(norm >= kDegenerateNorm) || !std::isfinite(norm)) {
      throw InputError("prototype for class " + std::to_string(c) + " of source " +
                       std::to_string(source_id) + " is zero or non-finite");
    }
    set.vectors.row(c) = p.row(c) / norm;
    set.class_labels.push_back(static_cast<int>(c));
  }
  return set;
}

}  // namespace fdac
