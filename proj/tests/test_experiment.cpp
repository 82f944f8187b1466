#include "support.hpp"

#include "fdac/error.hpp"
#include "fdac/experiment.hpp"
#include "fdac/metrics.hpp"
#include "fdac/plots.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace fdac;
using namespace fdac::testing;
namespace fs = std::filesystem;

namespace {

const char* kSmall = R"(# small configuration used by the tests
[dataset]
domains = a,b,c
target = c
samples = 40
classes = 3
rotations = 0,30,90
gains = 0,0.1,0.3
noise = 0.1,0.1,0.1
image_side = 8
patch_side = 4

[model]
depth = 2
width = 8
heads = 2
mlp_hidden = 12
projector_dim = 6

[training]
rounds = 1
local_repetitions = 2
batch_size = 16
learning_rate = 0.05
seeds = 1

[method]
threshold = 0.34
)";

ExperimentConfig small() {
  std::istringstream in(kSmall);
  return parse_experiment_config(in);
}

ExperimentConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_experiment_config(in);
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<RoundReport> run_once(const ExperimentConfig& c) {
  return run_federation(make_federation_config(c, 1), make_federation_data(c)).reports;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("configuration parsing") {
  const ExperimentConfig c = small();
  CHECK(c.dataset.domains == std::vector<std::string>{"a", "b", "c"});
  CHECK(c.model.num_classes == 3);
  CHECK(c.model.image_side == 8);
  CHECK(c.training.seeds == std::vector<std::uint64_t>{1});
  CHECK(c.method.adaptation.threshold == 0.34);
  // Keys left out keep their defaults.
  CHECK(c.method.adaptation.weights.lambda1 == 1.0);
  CHECK(c.method.adaptation.temperature == 0.1);
}

TEST_CASE("configuration errors name the field") {
  CHECK_THROWS_WITH_AS(parse("[method]\nlamda1 = 1\n"), doctest::Contains("method.lamda1"), ConfigError);
  CHECK_THROWS_WITH_AS(parse("[methods]\nlambda1 = 1\n"), doctest::Contains("[methods]"), ConfigError);
  CHECK_THROWS_WITH_AS(parse("[training]\nlearning_rate = fast\n"), doctest::Contains("training.learning_rate"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse("[method]\nstrategy = sideways\n"), doctest::Contains("method.strategy"), ConfigError);
  CHECK_THROWS_WITH_AS(parse("[dataset]\ntarget = nowhere\n"), doctest::Contains("dataset.target"), ConfigError);
  CHECK_THROWS_AS(parse("[method]\nlayer = 2\nstrategy = random\n"), ConfigError);
  CHECK_THROWS_AS(parse("[method]\nlayer = 9\n"), ConfigError);
  CHECK_THROWS_AS(parse("[training]\nseeds =\n"), ConfigError);
  CHECK_NOTHROW(parse("[method]\nlayer = 2\n"));
  CHECK_NOTHROW(parse("[method]\nstrategy = discriminability\n"));
}

TEST_CASE("overrides follow the file rules") {
  ExperimentConfig c = small();
  apply_override(c, "method.lambda1=0.5");
  apply_override(c, " training.seeds = 3,4 ");
  CHECK(c.method.adaptation.weights.lambda1 == 0.5);
  CHECK(c.training.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK_THROWS_AS(apply_override(c, "method.lambda3=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "lambda1=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "method.lambda1"), ConfigError);
}

TEST_CASE("canonical form round trips and hashes") {
  ExperimentConfig c = small();
  apply_override(c, "method.augmentation=mixup");
  apply_override(c, "training.weighting=data_size");
  const std::string text = to_ini(c);
  const ExperimentConfig back = parse(text);
  CHECK(to_ini(back) == text);
  CHECK(config_hash(back) == config_hash(c));
  CHECK(config_hash(c).size() == 64);
  apply_override(c, "method.lambda2=0.25");
  CHECK(config_hash(back) != config_hash(c));
}

TEST_CASE("ablation flags map to tags and weights") {
  ExperimentConfig c = small();
  CHECK(method_tag(c) == "Full");
  c.method.no_da = true;
  CHECK(method_tag(c) == "w/o DA");
  CHECK(make_federation_config(c, 1).adaptation.weights.lambda1 == 0.0);
  c.method.no_sm = true;
  CHECK(method_tag(c) == "w/o DA, SM");
  CHECK(make_federation_config(c, 1).adaptation.weights.lambda2 == 0.0);
  c.method.no_da = false;
  CHECK(method_tag(c) == "w/o SM");
  c.method.source_only = true;
  CHECK(method_tag(c) == "source-only");
  CHECK_FALSE(make_federation_config(c, 1).adapt);
}

TEST_CASE("every method field alters a round report") {
  const ExperimentConfig base = small();
  const auto reference = run_once(base);
  const std::vector<std::pair<std::string, std::vector<std::string>>> cases = {
      {"lambda1", {"method.lambda1=0.3"}},
      {"lambda2", {"method.lambda2=0.3"}},
      {"temperature", {"method.temperature=0.5"}},
      {"sm_temperature", {"method.sm_temperature=0.2"}},
      {"layer", {"method.layer=1"}},
      {"strategy", {"method.strategy=all"}},
      {"threshold", {"method.threshold=0.9"}},
      {"augmentation", {"method.augmentation=none"}},
      {"pooling", {"method.pooling=mean"}},
      {"no_da", {"method.no_da=true"}},
      {"no_sm", {"method.no_sm=true"}},
      {"source_only", {"method.source_only=true"}},
  };
  for (const auto& [name, overrides] : cases) {
    ExperimentConfig c = base;
    for (const auto& o : overrides) apply_override(c, o);
    c.validate();
    CAPTURE(name);
    CHECK(run_once(c) != reference);
  }

  // Labels persist in the target state, so the refresh period shows across rounds.
  ExperimentConfig two_rounds = base;
  apply_override(two_rounds, "training.rounds=2");
  apply_override(two_rounds, "training.local_repetitions=1");
  ExperimentConfig stale = two_rounds;
  apply_override(stale, "method.refresh_period=2");
  CHECK(run_once(stale) != run_once(two_rounds));

  ExperimentConfig mixup = base;
  apply_override(mixup, "method.augmentation=mixup");
  ExperimentConfig mixup_beta = mixup;
  apply_override(mixup_beta, "method.mixup_beta=3");
  CHECK(run_once(mixup_beta) != run_once(mixup));

  ExperimentConfig offset = base;
  apply_override(offset, "method.augmentation=ssrt-offset");
  ExperimentConfig offset_alpha = offset;
  apply_override(offset_alpha, "method.offset_alpha=0.1");
  CHECK(run_once(offset_alpha) != run_once(offset));
}

TEST_CASE("summary statistics") {
  const std::vector<double> v = {0.5, 0.6, 0.7, 0.8, 0.9};
  const Summary s = summarize(v);
  CHECK(s.count == 5);
  CHECK(s.mean == doctest::Approx(0.7));
  CHECK(s.stddev == doctest::Approx(std::sqrt(0.025)));
  const std::vector<double> one = {0.4};
  CHECK(summarize(one).stddev == 0.0);
}

TEST_CASE("metrics files round trip exactly") {
  std::vector<RoundReport> reports(2);
  reports[0] = {1, 0.123456789012345678, 2.5, 1.0 / 3.0, 4.0, 0.61, 0.25, 1000};
  reports[1] = {2, 0.1, 0.2, 0.3, 0.6, 0.7, 0.5, 2000};
  std::stringstream ss;
  write_metrics(ss, reports);
  CHECK(read_metrics(ss) == reports);

  std::stringstream missing("round,l_da,l_sm,l_t,total_loss,pseudo_coverage,cumulative_bytes\n1,0,0,0,0,0,0\n");
  CHECK_THROWS_WITH_AS(read_metrics(missing), doctest::Contains("target_accuracy"), SchemaError);
  std::stringstream malformed(
      "round,l_da,l_sm,l_t,total_loss,target_accuracy,pseudo_coverage,cumulative_bytes\n1,x,0,0,0,0,0,0\n");
  CHECK_THROWS_AS(read_metrics(malformed), SchemaError);
}

TEST_CASE("experiment outputs, manifest re-run and feature export") {
  ExperimentConfig c = small();
  c.training.seeds = {3, 4};
  const fs::path dir = fresh_dir("fdac_experiment_test");
  const ExperimentResult result = run_experiment(c, dir / "run");
  CHECK(result.tag == "Full");
  CHECK(result.summary.count == 2);
  for (const char* f : {"config.ini", "manifest.json", "summary.json", "seed_3/metrics.csv", "seed_3/model.fdac",
                        "seed_3/pseudo_labels.csv", "seed_4/metrics.csv"}) {
    CAPTURE(f);
    CHECK(fs::exists(dir / "run" / f));
  }
  CHECK(read_metrics_file(dir / "run/seed_3/metrics.csv") == result.runs[0].reports);

  const ExperimentResult again = rerun_manifest(dir / "run/manifest.json", dir / "again");
  CHECK(again.summary.mean == result.summary.mean);
  CHECK(slurp(dir / "again/seed_4/metrics.csv") == slurp(dir / "run/seed_4/metrics.csv"));

  const FeatureExport fe = export_run_features(dir / "run/seed_3", 5, dir / "features.csv");
  CHECK(fe.rows == 15);
  CHECK(fe.columns == 8 + 2);
  CHECK(fe.warnings.empty());
  export_run_features(dir / "run/seed_3", 5, dir / "features2.csv");
  CHECK(slurp(dir / "features.csv") == slurp(dir / "features2.csv"));
  std::ifstream in(dir / "features.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "f0,f1,f2,f3,f4,f5,f6,f7,true_label,pseudo_label");

  const FeatureExport short_classes = export_run_features(dir / "run/seed_3", 1000, dir / "all.csv");
  CHECK(short_classes.rows == 40);
  CHECK(short_classes.warnings.size() == 3);
  fs::remove_all(dir);
}

TEST_CASE("sweeps reject inconsistent requests") {
  const ExperimentConfig c = small();
  const fs::path dir = fresh_dir("fdac_sweep_test");
  CHECK_THROWS_AS(rounds_sweep(c, {3}, 20, dir), ConfigError);
  CHECK_THROWS_AS(parse_strategy("sideways"), ConfigError);
  CHECK_THROWS_AS(parse_augmentation("cutmix"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("plots") {
  const fs::path dir = fresh_dir("fdac_plot_test");
  std::vector<fs::path> files;
  for (int k = 0; k < 3; ++k) {
    const fs::path run = dir / ("r" + std::to_string(k));
    fs::create_directories(run);
    std::vector<RoundReport> reports = {{1, 0, 0, 0, 0, 0.2 * k, 0, 10}, {2, 0, 0, 0, 0, 0.3 + 0.1 * k, 0, 20}};
    write_metrics_file(run / "metrics.csv", reports);
    files.push_back(run / "metrics.csv");
  }
  const std::string before = slurp(files[0]);

  const PlotOutput one = emit_accuracy_plot(std::span(files).first(1), dir / "one");
  REQUIRE(one.files.size() == 1);
  CHECK(one.files[0].filename() == "accuracy_vs_round.svg");

  const PlotOutput three = emit_accuracy_plot(files, dir / "three");
  REQUIRE(three.files.size() == 1);
  const std::string svg = slurp(three.files[0]);
  std::size_t curves = 0;
  for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++curves;
  CHECK(curves == 3);
  CHECK(slurp(files[0]) == before);

  const PlotOutput none = emit_accuracy_plot({}, dir / "none");
  CHECK(none.files.empty());
  CHECK(none.warnings.size() == 1);

  std::ofstream(dir / "bad.csv") << "round,l_da\n1,0\n";
  const std::vector<fs::path> bad = {dir / "bad.csv"};
  CHECK_THROWS_AS(emit_accuracy_plot(bad, dir / "bad"), SchemaError);

  write_comparison(dir / "table.csv", {{"a", {5, 0.5, 0.1}}, {"b", {5, 0.7, 0.05}}});
  const PlotOutput bars = emit_table_plot(dir / "table.csv", dir / "bars");
  REQUIRE(bars.files.size() == 1);
  CHECK(slurp(bars.files[0]).find("<rect") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("exported features separate classes after training") {
  ExperimentConfig c = small();
  apply_override(c, "dataset.samples=150");
  apply_override(c, "model.width=16");
  apply_override(c, "training.rounds=8");
  apply_override(c, "training.local_repetitions=1");
  apply_override(c, "training.learning_rate=0.1");
  apply_override(c, "training.decay=0.1");
  apply_override(c, "method.threshold=0.8");
  c.validate();
  const FederationConfig f = make_federation_config(c, 1);
  const FederationData data = make_federation_data(c);
  const VisionTransformer model(f.backbone);
  const fs::path dir = fresh_dir("fdac_silhouette_test");

  const auto silhouette_of = [&](const ModelParams& params, const std::string& name) {
    export_features(model, params, *data.target, nullptr, 30, dir / name);
    std::ifstream in(dir / name);
    std::string line;
    std::getline(in, line);
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::vector<double> values;
      std::string cell;
      while (std::getline(ss, cell, ',')) values.push_back(std::stod(cell));
      labels.push_back(static_cast<int>(values[values.size() - 2]));
      values.resize(values.size() - 2);
      rows.push_back(values);
    }
    Matrix x(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < rows[i].size(); ++j) x(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    }
    return silhouette(x, labels);
  };

  const double untrained = silhouette_of(model.initialize(derive_seed(1, 0x1417)), "untrained.csv");
  const FederationResult trained = run_federation(f, data);
  const double after = silhouette_of(trained.global_model, "trained.csv");
  MESSAGE("silhouette untrained " << untrained << ", trained " << after << ", accuracy "
                                  << trained.reports.back().target_accuracy);
  // The synthetic class templates already cluster under random features, so
  // the untrained score is only required to sit below the trained one.
  CHECK(after > 0.3);
  CHECK(after > untrained);
  fs::remove_all(dir);
}
