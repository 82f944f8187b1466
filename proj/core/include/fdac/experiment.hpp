#pragma once

#include "fdac/federation.hpp"
#include "fdac/metrics.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace fdac {

// [dataset] block. Synthetic domains get rotation r_k, channel gains
// (1 + g_k, 1 - g_k, 1, ...), channel biases (g_k, -g_k, 0, ...) and noise n_k.
struct DatasetBlock {
  std::string kind = "synthetic";  // synthetic | folder
  std::filesystem::path root;      // folder only
  std::vector<std::string> domains = {"rot0", "rot30", "rot60", "rot90"};
  std::string target = "rot90";
  std::size_t samples = 1000;
  int classes = 5;
  std::vector<double> rotations = {0.0, 30.0, 60.0, 90.0};
  std::vector<double> gains = {0.0, 0.1, 0.2, 0.4};
  std::vector<double> noise = {0.1, 0.1, 0.1, 0.1};
  std::uint64_t seed = 7;
  int image_side = 16;
  int patch_side = 4;
  int channels = 3;
};

struct TrainingBlock {
  int rounds = 10;
  int local_repetitions = 1;
  Index batch_size = 64;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double decay = 0.1;
  double clip_norm = 0.0;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  bool parallel_sources = false;
  AggregationWeighting weighting = AggregationWeighting::uniform;
  bool early_stop = false;
  bool privacy_checks = true;
};

struct MethodBlock {
  AdaptationConfig adaptation;
  // Records whether the layer / strategy keys were given explicitly.
  bool layer_set = false;
  bool strategy_set = false;
  bool no_da = false;
  bool no_sm = false;
  bool source_only = false;
};

struct OutputBlock {
  bool save_checkpoint = true;
  bool save_pseudo_labels = true;
};

struct ExperimentConfig {
  DatasetBlock dataset;
  BackboneConfig model{.width = 32, .heads = 2, .mlp_hidden = 64};
  TrainingBlock training;
  MethodBlock method;
  OutputBlock output;

  // Throws ConfigError with the offending "section.key".
  void validate() const;
};

// INI text with sections [dataset] [model] [training] [method] [output]. Keys
// not listed in the README are errors. Missing keys keep their defaults.
ExperimentConfig parse_experiment_config(std::istream& in);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Applies one "section.key=value" override with the same rules as the file.
void apply_override(ExperimentConfig& config, const std::string& assignment);

// Canonical INI form listing every field; parse(to_ini(c)) == c.
std::string to_ini(const ExperimentConfig& config);
// SHA-256 hex digest of to_ini(config).
std::string config_hash(const ExperimentConfig& config);

// "Full", "w/o DA", "w/o SM", "w/o DA, SM" or "source-only".
std::string method_tag(const ExperimentConfig& config);

FederationConfig make_federation_config(const ExperimentConfig& config, std::uint64_t seed);
FederationData make_federation_data(const ExperimentConfig& config);

std::string code_version();

using Logger = std::function<void(const std::string&)>;

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<RoundReport> reports;
  double final_accuracy = 0.0;
};

struct ExperimentResult {
  std::string tag;
  std::vector<SeedRun> runs;
  Summary summary;
};

// Runs every listed seed. Writes into out_dir:
//   config.ini, manifest.json, summary.json,
//   seed_<s>/metrics.csv, seed_<s>/model.fdac, seed_<s>/pseudo_labels.csv
ExperimentResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                const Logger& log = {});
// Re-runs the configuration stored in a manifest.
ExperimentResult rerun_manifest(const std::filesystem::path& manifest, const std::filesystem::path& out_dir,
                                const Logger& log = {});

struct ComparisonRow {
  std::string label;
  Summary summary;
};

// Writes label,mean,std rows.
void write_comparison(const std::filesystem::path& path, const std::vector<ComparisonRow>& rows);

// One experiment per strategy in out_dir/<strategy>/, table in out_dir/blocks.csv.
std::vector<ComparisonRow> block_strategy_sweep(const ExperimentConfig& config,
                                                const std::vector<BlockStrategy>& strategies,
                                                const std::filesystem::path& out_dir, const Logger& log = {});

// Fixed total-epoch budget: r local repetitions run for budget / r rounds.
std::vector<ComparisonRow> rounds_sweep(const ExperimentConfig& config, const std::vector<int>& repetitions,
                                        int epoch_budget, const std::filesystem::path& out_dir,
                                        const Logger& log = {});

// Each lambda over the grid with the other held at 1.
std::vector<ComparisonRow> lambda_sweep(const ExperimentConfig& config, const std::vector<double>& grid,
                                        const std::filesystem::path& out_dir, const Logger& log = {});

std::vector<ComparisonRow> compare_augmentations(const ExperimentConfig& config,
                                                 const std::vector<Augmentation>& augmentations,
                                                 const std::filesystem::path& out_dir, const Logger& log = {});

struct FeatureExport {
  std::size_t rows = 0;
  std::size_t columns = 0;
  std::vector<std::string> warnings;
};

// Rows of normalized target features f_0..f_{d-1}, then true_label and
// pseudo_label (-1 when unlabeled). n samples per class are drawn with a fixed
// generator; classes with fewer samples are exported whole with a warning.
FeatureExport export_features(const VisionTransformer& model, const ModelParams& params,
                              const DomainDataset& target, const PseudoLabelSet* pseudo_labels,
                              std::size_t per_class, const std::filesystem::path& out_path,
                              std::uint64_t sampling_seed = 0);

// Same, reading model.fdac and pseudo_labels.csv from a seed directory written
// by run_experiment, and rebuilding the target domain from its config.
FeatureExport export_run_features(const std::filesystem::path& run_dir, std::size_t per_class,
                                  const std::filesystem::path& out_path);

// Parsers shared with the command line.
BlockStrategy parse_strategy(const std::string& text);
Augmentation parse_augmentation(const std::string& text);

}  // namespace fdac
