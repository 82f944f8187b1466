#include "fdac/error.hpp"
#include "fdac/experiment.hpp"
#include "fdac/plots.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string config;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> overrides;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool required) {
  cmd->add_option("--config", c.config, "experiment INI file")->required(required)->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", c.out_dir, "output directory")->required(required);
  cmd->add_option("--seed", c.seeds, "seed(s), replacing training.seeds")->required(required)->delimiter(',');
  cmd->add_option("--set", c.overrides, "override, e.g. method.lambda1=0.5 (repeatable)");
  cmd->add_flag("-q,--quiet", c.quiet, "only print the final summary");
}

fdac::ExperimentConfig load(const Common& c) {
  fdac::ExperimentConfig config = fdac::load_experiment_config(c.config);
  for (const auto& o : c.overrides) fdac::apply_override(config, o);
  if (!c.seeds.empty()) config.training.seeds = c.seeds;
  config.validate();
  return config;
}

fdac::Logger logger(const Common& c) {
  if (c.quiet) return {};
  return [](const std::string& line) { std::cerr << line << '\n'; };
}

void print_rows(const std::vector<fdac::ComparisonRow>& rows) {
  for (const auto& r : rows) {
    std::printf("%-24s %.4f +- %.4f (n=%zu)\n", r.label.c_str(), r.summary.mean, r.summary.stddev, r.summary.count);
  }
}

template <typename T>
std::vector<T> parse_list(const std::string& text, T (*parse)(const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated domain adaptation simulator"};
  app.require_subcommand(1);

  Common run_opts;
  std::string manifest;
  auto* run = app.add_subcommand("run", "run one experiment over its seeds");
  run->add_option("--config", run_opts.config, "experiment INI file")->check(CLI::ExistingFile);
  run->add_option("--out-dir", run_opts.out_dir, "output directory")->required();
  run->add_option("--seed", run_opts.seeds, "seed(s), replacing training.seeds")->delimiter(',');
  run->add_option("--set", run_opts.overrides, "override, e.g. method.lambda1=0.5 (repeatable)");
  run->add_option("--manifest", manifest, "re-run the configuration recorded in a manifest")
      ->check(CLI::ExistingFile);
  run->add_flag("-q,--quiet", run_opts.quiet, "only print the final summary");

  Common blocks_opts;
  std::string strategies = "transferability,discriminability,random,all";
  auto* blocks = app.add_subcommand("sweep-blocks", "compare block-selection strategies");
  add_common(blocks, blocks_opts, false);
  blocks->add_option("--strategies", strategies, "comma-separated strategies")->capture_default_str();

  Common rounds_opts;
  std::string reps = "1,2,5,10,20";
  int budget = 20;
  auto* rounds = app.add_subcommand("sweep-rounds", "vary local repetitions r at a fixed epoch budget");
  add_common(rounds, rounds_opts, false);
  rounds->add_option("--repetitions", reps, "comma-separated r values")->capture_default_str();
  rounds->add_option("--epoch-budget", budget, "total local epochs per client")->capture_default_str();

  Common lambda_opts;
  std::vector<double> grid = {0.1, 0.5, 1.0, 1.5};
  auto* lambda = app.add_subcommand("sweep-lambda", "sensitivity to lambda1 and lambda2");
  add_common(lambda, lambda_opts, false);
  lambda->add_option("--grid", grid, "values for each lambda")->delimiter(',');

  Common aug_opts;
  std::string augs = "fdac,mixup,ssrt-offset,none";
  auto* aug = app.add_subcommand("compare-aug", "compare augmentation methods");
  add_common(aug, aug_opts, false);
  aug->add_option("--augmentations", augs, "comma-separated augmentations")->capture_default_str();

  std::string run_dir, features_out;
  std::size_t per_class = 50;
  auto* features = app.add_subcommand("export-features", "write normalized target features of a trained run");
  features->add_option("--run-dir", run_dir, "seed directory written by run (contains model.fdac)")
      ->required()
      ->check(CLI::ExistingDirectory);
  features->add_option("--per-class", per_class, "samples per class")->capture_default_str();
  features->add_option("--out", features_out, "output CSV")->required();

  std::vector<std::string> metrics_files;
  std::vector<std::string> tables;
  std::string plot_dir;
  auto* plot = app.add_subcommand("plot", "render SVG figures from metrics files and sweep tables");
  plot->add_option("--metrics", metrics_files, "metrics.csv files (one curve each)")->check(CLI::ExistingFile);
  plot->add_option("--table", tables, "comparison tables from the sweep commands")->check(CLI::ExistingFile);
  plot->add_option("--out-dir", plot_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  const auto need = [](const Common& c) {
    if (c.config.empty()) throw fdac::ConfigError("--config is required");
    if (c.out_dir.empty()) throw fdac::ConfigError("--out-dir is required");
  };

  try {
    if (run->parsed()) {
      if (!manifest.empty()) {
        const auto result = fdac::rerun_manifest(manifest, run_opts.out_dir, logger(run_opts));
        std::printf("%s: %.4f +- %.4f\n", result.tag.c_str(), result.summary.mean, result.summary.stddev);
        return 0;
      }
      need(run_opts);
      if (run_opts.seeds.empty()) throw fdac::ConfigError("--seed is required");
      const auto config = load(run_opts);
      const auto result = fdac::run_experiment(config, run_opts.out_dir, logger(run_opts));
      std::printf("%s: %.4f +- %.4f over %zu seeds\n", result.tag.c_str(), result.summary.mean,
                  result.summary.stddev, result.summary.count);
    } else if (blocks->parsed()) {
      need(blocks_opts);
      const auto list = parse_list<fdac::BlockStrategy>(strategies, fdac::parse_strategy);
      print_rows(fdac::block_strategy_sweep(load(blocks_opts), list, blocks_opts.out_dir, logger(blocks_opts)));
    } else if (rounds->parsed()) {
      need(rounds_opts);
      std::vector<int> values;
      for (const auto& v : parse_list<std::string>(reps, [](const std::string& s) { return s; })) {
        values.push_back(std::stoi(v));
      }
      print_rows(fdac::rounds_sweep(load(rounds_opts), values, budget, rounds_opts.out_dir, logger(rounds_opts)));
    } else if (lambda->parsed()) {
      need(lambda_opts);
      print_rows(fdac::lambda_sweep(load(lambda_opts), grid, lambda_opts.out_dir, logger(lambda_opts)));
    } else if (aug->parsed()) {
      need(aug_opts);
      const auto list = parse_list<fdac::Augmentation>(augs, fdac::parse_augmentation);
      print_rows(fdac::compare_augmentations(load(aug_opts), list, aug_opts.out_dir, logger(aug_opts)));
    } else if (features->parsed()) {
      const auto result = fdac::export_run_features(run_dir, per_class, features_out);
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
      std::printf("wrote %zu rows x %zu columns to %s\n", result.rows, result.columns, features_out.c_str());
    } else if (plot->parsed()) {
      std::vector<std::filesystem::path> paths(metrics_files.begin(), metrics_files.end());
      std::vector<fdac::PlotOutput> outputs;
      outputs.push_back(fdac::emit_accuracy_plot(paths, plot_dir));
      for (const auto& t : tables) outputs.push_back(fdac::emit_table_plot(t, plot_dir));
      for (const auto& o : outputs) {
        for (const auto& w : o.warnings) std::cerr << "warning: " << w << '\n';
        for (const auto& f : o.files) std::printf("wrote %s\n", f.string().c_str());
      }
    }
  } catch (const fdac::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
