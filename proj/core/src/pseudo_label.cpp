#include "fdac/pseudo_label.hpp"

#include "fdac/error.hpp"

#include <algorithm>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>

namespace fdac {

PseudoLabelSet::PseudoLabelSet(std::vector<PseudoLabel> entries, double threshold,
                               std::size_t total_samples)
    : entries_(std::move(entries)), threshold_(threshold), total_samples_(total_samples) {
  if (!(threshold_ >= 0.0 && threshold_ <= 1.0)) {
    throw ConfigError("pseudo-label threshold must lie in [0, 1]");
  }
  std::unordered_set<std::size_t> seen;
  for (const auto& e : entries_) {
    if (e.confidence < threshold_) throw InputError("pseudo label below the confidence threshold");
    if (e.sample_index >= total_samples_) throw InputError("pseudo label index out of range");
    if (!seen.insert(e.sample_index).second) throw InputError("duplicate pseudo label index");
  }
}

double PseudoLabelSet::coverage() const {
  return total_samples_ == 0 ? 0.0
                             : static_cast<double>(entries_.size()) / static_cast<double>(total_samples_);
}

PseudoLabelSet PseudoLabelSet::restrict_to(std::span<const std::size_t> batch_indices) const {
  std::unordered_map<std::size_t, const PseudoLabel*> by_index;
  for (const auto& e : entries_) by_index.emplace(e.sample_index, &e);
  std::vector<PseudoLabel> local;
  for (std::size_t pos = 0; pos < batch_indices.size(); ++pos) {
    const auto it = by_index.find(batch_indices[pos]);
    if (it != by_index.end()) local.push_back({pos, it->second->class_id, it->second->confidence});
  }
  return PseudoLabelSet(std::move(local), threshold_, batch_indices.size());
}

PseudoLabelSet ensemble_pseudo_labels(std::span<const Matrix> source_probabilities, double threshold) {
  if (source_probabilities.empty()) throw InputError("pseudo labeling needs at least one source model");
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("pseudo-label threshold must lie in [0, 1]");
  }
  const Index n = source_probabilities.front().rows();
  const Index c = source_probabilities.front().cols();
  Matrix mean = Matrix::Zero(n, c);
  for (const auto& p : source_probabilities) {
    if (p.rows() != n || p.cols() != c) throw InputError("source label spaces disagree");
    mean += p;
  }
  mean /= static_cast<double>(source_probabilities.size());

  std::vector<PseudoLabel> entries;
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    for (Index j = 1; j < c; ++j) {
      if (mean(i, j) > mean(i, best)) best = j;
    }
    if (mean(i, best) >= threshold) {
      entries.push_back({static_cast<std::size_t>(i), static_cast<int>(best), mean(i, best)});
    }
  }
  return PseudoLabelSet(std::move(entries), threshold, static_cast<std::size_t>(n));
}

PseudoLabelSet ensemble_pseudo_labels(const VisionTransformer& model,
                                      std::span<const ModelParams> source_models,
                                      const Matrix& target_patches, double threshold,
                                      Index batch_size) {
  if (source_models.empty()) throw InputError("pseudo labeling needs at least one source model");
  const Index t = model.config().num_patches();
  const Index n = target_patches.rows() / t;
  std::vector<Matrix> probs;
  for (const auto& params : source_models) {
    Matrix p(n, model.config().num_classes);
    for (Index start = 0; start < n; start += batch_size) {
      const Index count = std::min(batch_size, n - start);
      p.middleRows(start, count) = model.predict(params, target_patches.middleRows(start * t, count * t));
    }
    probs.push_back(std::move(p));
  }
  return ensemble_pseudo_labels(probs, threshold);
}

bool refresh_schedule(int epoch, int period) {
  if (period < 1) throw ConfigError("pseudo-label refresh period must be >= 1");
  return epoch % period == 0;
}

void write_pseudo_labels(std::ostream& out, const PseudoLabelSet& labels) {
  out << "index,class,confidence\n";
  for (const auto& e : labels.entries()) {
    out << e.sample_index << ',' << e.class_id << ',' << std::setprecision(17) << e.confidence << '\n';
  }
}

PseudoLabelSet read_pseudo_labels(std::istream& in, double threshold, std::size_t total_samples) {
  std::string line;
  if (!std::getline(in, line) || line != "index,class,confidence") {
    throw SchemaError("pseudo-label table must start with 'index,class,confidence'");
  }
  std::vector<PseudoLabel> entries;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    PseudoLabel e;
    char c1 = 0, c2 = 0;
    if (!(row >> e.sample_index >> c1 >> e.class_id >> c2 >> e.confidence) || c1 != ',' || c2 != ',') {
      throw SchemaError("malformed pseudo-label row: " + line);
    }
    entries.push_back(e);
  }
  return PseudoLabelSet(std::move(entries), threshold, total_samples);
}

}  // namespace fdac
