#pragma once

#include "fdac/tensor.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace fdac {

// Architecture of the per-client model: a pre-norm transformer encoder over
// image patches, a cosine prototype classifier and a two-layer projector.
struct BackboneConfig {
  int image_side = 16;
  int patch_side = 4;
  int channels = 3;
  int depth = 4;
  int width = 64;
  int heads = 4;
  int mlp_hidden = 128;
  int num_classes = 5;
  int projector_dim = 128;
  // 0 means "same as the feature width".
  int projector_hidden = 0;
  // "gelu" (erf form) or "relu"; applies to the block MLPs and the projector.
  std::string activation = "gelu";
  // Expected row norm of the prototype matrix at initialization. Features are
  // unit vectors, so this sets the initial logit scale of the classifier.
  double prototype_init_norm = 1.0;
  double layer_norm_eps = 1e-6;

  int patches_per_side() const { return image_side / patch_side; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  int seq_len() const { return num_patches() + 1; }
  int patch_dim() const { return patch_side * patch_side * channels; }
  int feature_dim() const { return width; }
  int projector_hidden_width() const { return projector_hidden > 0 ? projector_hidden : width; }

  // Throws ConfigError on an inconsistent configuration.
  void validate() const;

  bool operator==(const BackboneConfig&) const = default;
};

enum class ParamKind { extractor, prototypes, projector };

struct ParamGroup {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  Index offset = 0;
  ParamKind kind = ParamKind::extractor;

  Index size() const { return rows * cols; }
};

// Ordered table of named parameter groups inside one flat vector. Extractor
// groups come first, then the prototype matrix, then the projector.
class ParamLayout {
 public:
  Index add(std::string name, Index rows, Index cols, ParamKind kind);

  const std::vector<ParamGroup>& groups() const { return groups_; }
  const ParamGroup& group(std::string_view name) const;
  Index index_of(std::string_view name) const;
  Index size() const { return size_; }

  bool operator==(const ParamLayout& other) const;

 private:
  std::vector<ParamGroup> groups_;
  Index size_ = 0;
};

// Full parameter set of one client's model. Copies are deep; the layout is shared.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(std::shared_ptr<const ParamLayout> layout);

  const ParamLayout& layout() const { return *layout_; }
  const std::shared_ptr<const ParamLayout>& shared_layout() const { return layout_; }

  const Vector& values() const { return values_; }
  Vector& values() { return values_; }

  Eigen::Map<const Matrix> view(const ParamGroup& g) const {
    return {values_.data() + g.offset, g.rows, g.cols};
  }
  Eigen::Map<Matrix> view(const ParamGroup& g) { return {values_.data() + g.offset, g.rows, g.cols}; }
  Eigen::Map<const Matrix> view(Index group_index) const { return view(layout_->groups()[group_index]); }
  Eigen::Map<Matrix> view(Index group_index) { return view(layout_->groups()[group_index]); }
  Eigen::Map<const Matrix> view(std::string_view name) const { return view(layout_->group(name)); }
  Eigen::Map<Matrix> view(std::string_view name) { return view(layout_->group(name)); }

  // Contiguous segments of the flat vector.
  Eigen::VectorBlock<const Vector> extractor() const;
  Eigen::Map<const Matrix> prototype_matrix() const { return view("prototypes"); }
  Eigen::VectorBlock<const Vector> projector() const;

  bool operator==(const ModelParams& other) const;

 private:
  std::shared_ptr<const ParamLayout> layout_;
  Vector values_;
};

// A batch of token sequences stacked row-wise: sample n occupies rows
// [n * seq_len, (n + 1) * seq_len); row 0 of each sample is the class token.
struct TokenBatch {
  Index batch = 0;
  Index seq_len = 0;
  Matrix values;

  Index width() const { return values.cols(); }
  Matrix class_tokens() const;
  Matrix mean_patch_tokens() const;
};

struct BlockOutput {
  int layer_index = 0;
  TokenBatch tokens;
};

struct BlockTap {
  BlockOutput block;
  // Final feature F(x): class-token row of the last block output.
  Matrix features;
};

// Cached activations of one transformer block for the backward pass.
struct BlockCache {
  Matrix input;
  Matrix norm1_hat;
  Vector norm1_rstd;
  Matrix qkv;
  std::vector<Matrix> attention;  // batch * heads matrices of seq_len x seq_len
  Matrix context;
  Matrix residual_mid;
  Matrix norm2_hat;
  Vector norm2_rstd;
  Matrix mlp_pre;
  Matrix mlp_act;
};

struct ForwardTrace {
  // Layer whose output is the trace input; 0 with `embedded` means raw patches.
  int start_layer = 0;
  bool embedded = false;
  Matrix patches;
  Index batch = 0;
  Index seq_len = 0;
  // outputs[l] holds B^l for start_layer <= l <= depth.
  std::vector<Matrix> outputs;
  // blocks[l - 1] caches block l.
  std::vector<BlockCache> blocks;

  TokenBatch layer(int l) const { return {batch, seq_len, outputs[static_cast<std::size_t>(l)]}; }
  Matrix features() const;
};

struct ClassifierOutput {
  Matrix logits;
  Matrix probabilities;
  RowNormalization normalized;
  std::size_t degenerate_rows = 0;
};

struct ProjectorOutput {
  Matrix input;
  Matrix hidden_pre;
  Matrix hidden_act;
  RowNormalization normalized;
  std::size_t degenerate_rows = 0;

  const Matrix& projections() const { return normalized.output; }
};

// Unit-norm classifier rows of one source model, shared with the target client.
struct PrototypeSet {
  int source_id = 0;
  Matrix vectors;
  std::vector<int> class_labels;
};

class VisionTransformer {
 public:
  explicit VisionTransformer(BackboneConfig config);

  const BackboneConfig& config() const { return config_; }
  const std::shared_ptr<const ParamLayout>& layout() const { return layout_; }

  ModelParams initialize(std::uint64_t seed) const;
  ModelParams zeros() const { return ModelParams(layout_); }

  // Patch rows (batch * num_patches) x patch_dim -> B^0 with class token and
  // positional embeddings added.
  TokenBatch embed(const ModelParams& params, const Matrix& patches) const;

  // Runs blocks first_layer+1 .. last_layer on `tokens` (= B^first_layer).
  TokenBatch run_blocks(const ModelParams& params, const TokenBatch& tokens, int first_layer,
                        int last_layer) const;

  // B^l for 1 <= l <= depth together with the final feature.
  BlockTap forward_block_tap(const ModelParams& params, const TokenBatch& b0, int layer) const;

  Matrix features(const ModelParams& params, const Matrix& patches) const;

  // Cached forward from raw patches through every block.
  ForwardTrace trace(const ModelParams& params, const Matrix& patches) const;
  // Cached forward from B^start_layer through every block.
  ForwardTrace trace_from(const ModelParams& params, const TokenBatch& tokens, int start_layer) const;

  // Accumulates parameter gradients into `grad`. `layer_grads[l]` is the
  // upstream gradient w.r.t. B^l (empty matrices mean zero) and must have
  // depth + 1 entries. Returns the gradient w.r.t. the trace's input tokens.
  Matrix backward(const ModelParams& params, const ForwardTrace& trace,
                  const std::vector<Matrix>& layer_grads, ModelParams& grad) const;

  ClassifierOutput classify(const ModelParams& params, const Matrix& features) const;
  // Returns the gradient w.r.t. the features.
  Matrix classify_backward(const ModelParams& params, const ClassifierOutput& out,
                           const Matrix& grad_probabilities, ModelParams& grad) const;

  // Convenience: class probabilities straight from patches.
  Matrix predict(const ModelParams& params, const Matrix& patches) const;

  ProjectorOutput project(const ModelParams& params, const Matrix& inputs) const;
  Matrix project_backward(const ModelParams& params, const ProjectorOutput& out,
                          const Matrix& grad_projections, ModelParams& grad) const;

  PrototypeSet export_prototypes(const ModelParams& params, int source_id) const;

  // Gradient w.r.t. B^depth given a gradient w.r.t. the final features.
  Matrix feature_grad_to_tokens(const Matrix& grad_features) const;

 private:
  struct BlockSlots {
    Index norm1_gamma, norm1_beta, qkv_weight, qkv_bias, out_weight, out_bias;
    Index norm2_gamma, norm2_beta, fc1_weight, fc1_bias, fc2_weight, fc2_bias;
  };

  Matrix block_forward(const ModelParams& params, int layer, const Matrix& input, Index batch,
                       BlockCache* cache) const;
  Matrix block_backward(const ModelParams& params, int layer, const BlockCache& cache,
                        const Matrix& grad_output, Index batch, ModelParams& grad) const;
  void check_layer(int layer, int lowest) const;

  double activate(double x) const;
  double activate_derivative(double x) const;

  BackboneConfig config_;
  std::shared_ptr<const ParamLayout> layout_;
  bool relu_ = false;
  Index embed_weight_ = 0, embed_bias_ = 0, class_token_ = 0, pos_embed_ = 0;
  std::vector<BlockSlots> blocks_;
  Index prototypes_ = 0;
  Index proj_fc1_weight_ = 0, proj_fc1_bias_ = 0, proj_fc2_weight_ = 0, proj_fc2_bias_ = 0;
};

}  // namespace fdac
