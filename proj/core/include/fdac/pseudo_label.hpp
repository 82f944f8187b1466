#pragma once

#include "fdac/backbone.hpp"

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

namespace fdac {

struct PseudoLabel {
  std::size_t sample_index = 0;
  int class_id = 0;
  double confidence = 0.0;

  bool operator==(const PseudoLabel&) const = default;
};

// Confidence-filtered class assignments for a set of unlabeled samples.
class PseudoLabelSet {
 public:
  PseudoLabelSet() = default;
  // Throws InputError when an entry violates the threshold or an index repeats.
  PseudoLabelSet(std::vector<PseudoLabel> entries, double threshold, std::size_t total_samples);

  const std::vector<PseudoLabel>& entries() const { return entries_; }
  double threshold() const { return threshold_; }
  std::size_t total_samples() const { return total_samples_; }
  double coverage() const;
  bool empty() const { return entries_.empty(); }

  // Entries whose sample index appears in `batch_indices`, re-indexed to the
  // position inside that batch.
  PseudoLabelSet restrict_to(std::span<const std::size_t> batch_indices) const;

  bool operator==(const PseudoLabelSet&) const = default;

 private:
  std::vector<PseudoLabel> entries_;
  double threshold_ = 0.0;
  std::size_t total_samples_ = 0;
};

// Uniform average of the K source probability matrices (each N x C); a sample
// is labeled with the argmax class (lowest id on ties) when the averaged
// maximum reaches `threshold`.
PseudoLabelSet ensemble_pseudo_labels(std::span<const Matrix> source_probabilities, double threshold);

// Same, running every source model over the target patches in batches.
PseudoLabelSet ensemble_pseudo_labels(const VisionTransformer& model,
                                      std::span<const ModelParams> source_models,
                                      const Matrix& target_patches, double threshold,
                                      Index batch_size = 256);

bool refresh_schedule(int epoch, int period);

// Audit table: header "index,class,confidence" then one row per entry.
void write_pseudo_labels(std::ostream& out, const PseudoLabelSet& labels);
PseudoLabelSet read_pseudo_labels(std::istream& in, double threshold, std::size_t total_samples);

}  // namespace fdac
