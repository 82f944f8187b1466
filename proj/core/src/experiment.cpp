#include "fdac/experiment.hpp"

#include "fdac/checkpoint.hpp"
#include "fdac/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#ifndef FDAC_VERSION
#define FDAC_VERSION "unknown"
#endif
#ifndef FDAC_GIT_COMMIT
#define FDAC_GIT_COMMIT ""
#endif

namespace fdac {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& field, const std::string& expected, const std::string& got) {
  throw ConfigError(field + ": expected " + expected + ", got '" + got + "'");
}

double to_double(const std::string& field, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  bad_value(field, "a number", v);
}

long long to_int(const std::string& field, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used == v.size()) return i;
  } catch (const std::exception&) {
  }
  bad_value(field, "an integer", v);
}

std::uint64_t to_u64(const std::string& field, const std::string& v) {
  const long long i = to_int(field, v);
  if (i < 0) bad_value(field, "a non-negative integer", v);
  return static_cast<std::uint64_t>(i);
}

bool to_bool(const std::string& field, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(field, "true or false", v);
}

std::string fmt(double v) { return format_double(v); }

template <typename T, typename F>
std::string join(const std::vector<T>& values, F&& each) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + each(values[i]);
  return out;
}

std::vector<double> to_doubles(const std::string& field, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(to_double(field, item));
  return out;
}

struct Field {
  const char* section;
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  using S = const std::string;
  static const std::vector<Field> table = {
      {"dataset", "kind", [](C& c, S& f, S& v) {
         if (v != "synthetic" && v != "folder") bad_value(f, "synthetic or folder", v);
         c.dataset.kind = v;
       }, [](const C& c) { return c.dataset.kind; }},
      {"dataset", "root", [](C& c, S&, S& v) { c.dataset.root = v; },
       [](const C& c) { return c.dataset.root.string(); }},
      {"dataset", "domains", [](C& c, S&, S& v) { c.dataset.domains = split_list(v); },
       [](const C& c) { return join(c.dataset.domains, [](const std::string& s) { return s; }); }},
      {"dataset", "target", [](C& c, S&, S& v) { c.dataset.target = v; },
       [](const C& c) { return c.dataset.target; }},
      {"dataset", "samples", [](C& c, S& f, S& v) { c.dataset.samples = to_u64(f, v); },
       [](const C& c) { return std::to_string(c.dataset.samples); }},
      {"dataset", "classes", [](C& c, S& f, S& v) { c.dataset.classes = static_cast<int>(to_int(f, v)); },
       [](const C& c) { return std::to_string(c.dataset.classes); }},
      {"dataset", "rotations", [](C& c, S& f, S& v) { c.dataset.rotations = to_doubles(f, v); },
       [](const C& c) { return join(c.dataset.rotations, fmt); }},
      {"dataset", "gains", [](C& c, S& f, S& v) { c.dataset.gains = to_doubles(f, v); },
       [](const C& c) { return join(c.dataset.gains, fmt); }},
      {"dataset", "noise", [](C& c, S& f, S& v) { c.dataset.noise = to_doubles(f, v); },
       [](const C& c) { return join(c.dataset.noise, fmt); }},
      {"dataset", "seed", [](C& c, S& f, S& v) { c.dataset.seed = to_u64(f, v); },
       [](const C& c) { return std::to_string(c.dataset.seed); }},
      {"dataset", "image_side", [](C& c, S& f, S& v) { c.dataset.image_side = static_cast<int>(to_int(f, v)); },
       [](const C& c) { return std::to_string(c.dataset.image_side); }},
      {"dataset", "patch_side", [](C& c, S& f, S& v) { c.dataset.patch_side = static_cast<int>(to_int(f, v)); },
       [](const C& c) { return std::to_string(c.dataset.patch_side); }},
      {"dataset", "channels", [](C& c, S& f, S& v) { c.dataset.channels = static_cast<int>(to_int(f, v)); },
       [](const C& c) { return std::to_string(c.dataset.channels); }},

      {"model", "depth", [](C& c, S& f, S& v) { c.model.depth = static_cast<int>(to_int(f, v)); },
       [](const C& c) { return std::to_string(c.model.depth); }},
      {"model", "width", [](C& c, S& f, S& v) { c.model.width = static_cast<int>(to_int(f, v)); },
       [](const C& c) { return std::to_string(c.model.width); }},
      {"model", "heads", [](C& c, S& f, S& v) { c.model.heads = static_cast<int>(to_int(f, v)); },
       [](const C& c) { return std::to_string(c.model.heads); }},
      {"model", "mlp_hidden", [](C& c, S& f, S& v) { c.model.mlp_hidden = static_cast<int>(to_int(f, v)); },
       [](const C& c) { return std::to_string(c.model.mlp_hidden); }},
      {"model", "projector_dim", [](C& c, S& f, S& v) { c.model.projector_dim = static_cast<int>(to_int(f, v)); },
       [](const C& c) { return std::to_string(c.model.projector_dim); }},
      {"model", "projector_hidden",
       [](C& c, S& f, S& v) { c.model.projector_hidden = static_cast<int>(to_int(f, v)); },
       [](const C& c) { return std::to_string(c.model.projector_hidden); }},
      {"model", "prototype_init_norm",
       [](C& c, S& f, S& v) { c.model.prototype_init_norm = to_double(f, v); },
       [](const C& c) { return fmt(c.model.prototype_init_norm); }},
      {"model", "activation", [](C& c, S& f, S& v) {
         if (v != "gelu" && v != "relu") bad_value(f, "gelu or relu", v);
         c.model.activation = v;
       }, [](const C& c) { return c.model.activation; }},

      {"training", "rounds", [](C& c, S& f, S& v) { c.training.rounds = static_cast<int>(to_int(f, v)); },
       [](const C& c) { return std::to_string(c.training.rounds); }},
      {"training", "local_repetitions",
       [](C& c, S& f, S& v) { c.training.local_repetitions = static_cast<int>(to_int(f, v)); },
       [](const C& c) { return std::to_string(c.training.local_repetitions); }},
      {"training", "batch_size", [](C& c, S& f, S& v) { c.training.batch_size = to_int(f, v); },
       [](const C& c) { return std::to_string(c.training.batch_size); }},
      {"training", "learning_rate", [](C& c, S& f, S& v) { c.training.learning_rate = to_double(f, v); },
       [](const C& c) { return fmt(c.training.learning_rate); }},
      {"training", "momentum", [](C& c, S& f, S& v) { c.training.momentum = to_double(f, v); },
       [](const C& c) { return fmt(c.training.momentum); }},
      {"training", "decay", [](C& c, S& f, S& v) { c.training.decay = to_double(f, v); },
       [](const C& c) { return fmt(c.training.decay); }},
      {"training", "clip_norm", [](C& c, S& f, S& v) { c.training.clip_norm = to_double(f, v); },
       [](const C& c) { return fmt(c.training.clip_norm); }},
      {"training", "seeds", [](C& c, S& f, S& v) {
         c.training.seeds.clear();
         for (const auto& s : split_list(v)) c.training.seeds.push_back(to_u64(f, s));
       }, [](const C& c) { return join(c.training.seeds, [](std::uint64_t s) { return std::to_string(s); }); }},
      {"training", "parallel_sources", [](C& c, S& f, S& v) { c.training.parallel_sources = to_bool(f, v); },
       [](const C& c) { return std::string(c.training.parallel_sources ? "true" : "false"); }},
      {"training", "weighting", [](C& c, S& f, S& v) {
         if (v == "uniform") {
           c.training.weighting = AggregationWeighting::uniform;
         } else if (v == "data_size") {
           c.training.weighting = AggregationWeighting::data_size;
         } else {
           bad_value(f, "uniform or data_size", v);
         }
       }, [](const C& c) {
         return std::string(c.training.weighting == AggregationWeighting::uniform ? "uniform" : "data_size");
       }},
      {"training", "early_stop", [](C& c, S& f, S& v) { c.training.early_stop = to_bool(f, v); },
       [](const C& c) { return std::string(c.training.early_stop ? "true" : "false"); }},
      {"training", "privacy_checks", [](C& c, S& f, S& v) { c.training.privacy_checks = to_bool(f, v); },
       [](const C& c) { return std::string(c.training.privacy_checks ? "true" : "false"); }},

      {"method", "lambda1", [](C& c, S& f, S& v) { c.method.adaptation.weights.lambda1 = to_double(f, v); },
       [](const C& c) { return fmt(c.method.adaptation.weights.lambda1); }},
      {"method", "lambda2", [](C& c, S& f, S& v) { c.method.adaptation.weights.lambda2 = to_double(f, v); },
       [](const C& c) { return fmt(c.method.adaptation.weights.lambda2); }},
      {"method", "temperature", [](C& c, S& f, S& v) { c.method.adaptation.temperature = to_double(f, v); },
       [](const C& c) { return fmt(c.method.adaptation.temperature); }},
      {"method", "sm_temperature", [](C& c, S& f, S& v) { c.method.adaptation.sm_temperature = to_double(f, v); },
       [](const C& c) { return fmt(c.method.adaptation.sm_temperature); }},
      {"method", "layer", [](C& c, S& f, S& v) {
         c.method.adaptation.layer = static_cast<int>(to_int(f, v));
         c.method.layer_set = true;
       }, [](const C& c) { return c.method.layer_set ? std::to_string(c.method.adaptation.layer) : std::string(); }},
      {"method", "strategy", [](C& c, S& f, S& v) {
         try {
           c.method.adaptation.strategy = parse_strategy(v);
         } catch (const ConfigError&) {
           bad_value(f, "fixed, transferability, discriminability, random or all", v);
         }
         c.method.strategy_set = true;
       }, [](const C& c) {
         return c.method.strategy_set ? std::string(to_string(c.method.adaptation.strategy)) : std::string();
       }},
      {"method", "threshold", [](C& c, S& f, S& v) { c.method.adaptation.threshold = to_double(f, v); },
       [](const C& c) { return fmt(c.method.adaptation.threshold); }},
      {"method", "refresh_period",
       [](C& c, S& f, S& v) { c.method.adaptation.refresh_period = static_cast<int>(to_int(f, v)); },
       [](const C& c) { return std::to_string(c.method.adaptation.refresh_period); }},
      {"method", "augmentation", [](C& c, S& f, S& v) {
         try {
           c.method.adaptation.augmentation = parse_augmentation(v);
         } catch (const ConfigError&) {
           bad_value(f, "fdac, mixup, ssrt-offset or none", v);
         }
       }, [](const C& c) { return std::string(to_string(c.method.adaptation.augmentation)); }},
      {"method", "mixup_beta", [](C& c, S& f, S& v) { c.method.adaptation.mixup_beta = to_double(f, v); },
       [](const C& c) { return fmt(c.method.adaptation.mixup_beta); }},
      {"method", "offset_alpha", [](C& c, S& f, S& v) { c.method.adaptation.offset_alpha = to_double(f, v); },
       [](const C& c) { return fmt(c.method.adaptation.offset_alpha); }},
      {"method", "pooling", [](C& c, S& f, S& v) {
         if (v == "cls") {
           c.method.adaptation.pooling = TokenPooling::class_token;
         } else if (v == "mean") {
           c.method.adaptation.pooling = TokenPooling::mean_patches;
         } else {
           bad_value(f, "cls or mean", v);
         }
       }, [](const C& c) { return std::string(to_string(c.method.adaptation.pooling)); }},
      {"method", "no_da", [](C& c, S& f, S& v) { c.method.no_da = to_bool(f, v); },
       [](const C& c) { return std::string(c.method.no_da ? "true" : "false"); }},
      {"method", "no_sm", [](C& c, S& f, S& v) { c.method.no_sm = to_bool(f, v); },
       [](const C& c) { return std::string(c.method.no_sm ? "true" : "false"); }},
      {"method", "source_only", [](C& c, S& f, S& v) { c.method.source_only = to_bool(f, v); },
       [](const C& c) { return std::string(c.method.source_only ? "true" : "false"); }},

      {"output", "save_checkpoint", [](C& c, S& f, S& v) { c.output.save_checkpoint = to_bool(f, v); },
       [](const C& c) { return std::string(c.output.save_checkpoint ? "true" : "false"); }},
      {"output", "save_pseudo_labels", [](C& c, S& f, S& v) { c.output.save_pseudo_labels = to_bool(f, v); },
       [](const C& c) { return std::string(c.output.save_pseudo_labels ? "true" : "false"); }},
  };
  return table;
}

const Field& find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (section == f.section && key == f.key) return f;
  }
  bool known_section = false;
  for (const auto& f : fields()) known_section = known_section || section == f.section;
  if (!known_section) throw ConfigError("unknown section [" + section + "]");
  throw ConfigError("unknown key '" + section + "." + key + "'");
}

void set_field(ExperimentConfig& c, const std::string& section, const std::string& key, const std::string& value) {
  find_field(section, key).set(c, section + "." + key, trim(value));
  // The model's input geometry and label space follow the dataset block.
  c.model.image_side = c.dataset.image_side;
  c.model.patch_side = c.dataset.patch_side;
  c.model.channels = c.dataset.channels;
  c.model.num_classes = c.dataset.classes;
}

std::string sha256_hex(const std::string& text) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void emit(const Logger& log, const std::string& line) {
  if (log) log(line);
}

ComparisonRow run_variant(const ExperimentConfig& config, const std::string& label, const fs::path& dir,
                          const Logger& log) {
  emit(log, "== " + label);
  const ExperimentResult result = run_experiment(config, dir, log);
  return {label, result.summary};
}

}  // namespace

BlockStrategy parse_strategy(const std::string& text) {
  for (auto s : {BlockStrategy::fixed, BlockStrategy::transferability, BlockStrategy::discriminability,
                 BlockStrategy::random, BlockStrategy::all}) {
    if (text == to_string(s)) return s;
  }
  throw ConfigError("unknown block strategy '" + text + "'");
}

Augmentation parse_augmentation(const std::string& text) {
  for (auto a : {Augmentation::fdac, Augmentation::mixup, Augmentation::ssrt_offset, Augmentation::none}) {
    if (text == to_string(a)) return a;
  }
  throw ConfigError("unknown augmentation '" + text + "'");
}

void ExperimentConfig::validate() const {
  const auto& d = dataset;
  if (d.domains.size() < 2) throw ConfigError("dataset.domains: need at least one source and the target");
  if (std::count(d.domains.begin(), d.domains.end(), d.target) != 1) {
    throw ConfigError("dataset.target: '" + d.target + "' must name exactly one of dataset.domains");
  }
  {
    auto sorted = d.domains;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ConfigError("dataset.domains: names must be unique");
    }
  }
  if (d.kind == "synthetic") {
    const auto n = d.domains.size();
    if (d.rotations.size() != n) throw ConfigError("dataset.rotations: need one value per domain");
    if (d.gains.size() != n) throw ConfigError("dataset.gains: need one value per domain");
    if (d.noise.size() != n) throw ConfigError("dataset.noise: need one value per domain");
    for (double g : d.gains) {
      if (std::abs(g) >= 1.0) throw ConfigError("dataset.gains: values must lie in (-1, 1)");
    }
    for (double s : d.noise) {
      if (s < 0.0) throw ConfigError("dataset.noise: values must be non-negative");
    }
    if (d.samples < 2) throw ConfigError("dataset.samples: need at least two samples per domain");
    if (d.classes < 2) throw ConfigError("dataset.classes: need at least two classes");
  } else if (d.root.empty()) {
    throw ConfigError("dataset.root: required for folder datasets");
  }
  if (d.image_side != model.image_side || d.patch_side != model.patch_side || d.channels != model.channels) {
    throw ConfigError("dataset geometry does not match the model");
  }
  if (d.kind == "synthetic" && d.classes != model.num_classes) {
    throw ConfigError("dataset.classes does not match the model");
  }
  try {
    model.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  if (training.rounds < 0) throw ConfigError("training.rounds: must be >= 0");
  if (training.local_repetitions < 1) throw ConfigError("training.local_repetitions: must be >= 1");
  if (training.seeds.empty()) throw ConfigError("training.seeds: at least one seed is required");
  SgdConfig sgd{training.learning_rate, training.momentum, training.decay, training.clip_norm, training.batch_size};
  try {
    sgd.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("training: ") + e.what());
  }
  if (method.layer_set && method.strategy_set && method.adaptation.strategy != BlockStrategy::fixed) {
    throw ConfigError("method.layer and method.strategy are mutually exclusive");
  }
  if (method.layer_set && method.adaptation.layer < 1) {
    throw ConfigError("method.layer: must lie in [1, " + std::to_string(model.depth) + "]");
  }
  try {
    method.adaptation.validate(model.depth);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("method: ") + e.what());
  }
}

ExperimentConfig parse_experiment_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  ExperimentConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("key '" + section + "' must appear inside a section");
    }
    for (const auto& [key, value] : body) set_field(config, section, key, value.data());
  }
  config.validate();
  return config;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_experiment_config(in);
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  set_field(config, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
            assignment.substr(eq + 1));
}

std::string to_ini(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const std::string value = f.get(config);
    if (value.empty() && (std::string(f.key) == "layer" || std::string(f.key) == "strategy" ||
                          std::string(f.key) == "root")) {
      continue;
    }
    if (section != f.section) {
      section = f.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += std::string(f.key) + " = " + value + "\n";
  }
  return out;
}

std::string config_hash(const ExperimentConfig& config) { return sha256_hex(to_ini(config)); }

std::string method_tag(const ExperimentConfig& config) {
  if (config.method.source_only) return "source-only";
  const bool da = !config.method.no_da && config.method.adaptation.weights.lambda1 > 0.0;
  const bool sm = !config.method.no_sm && config.method.adaptation.weights.lambda2 > 0.0;
  if (da && sm) return "Full";
  if (!da && !sm) return "w/o DA, SM";
  return da ? "w/o SM" : "w/o DA";
}

FederationConfig make_federation_config(const ExperimentConfig& config, std::uint64_t seed) {
  FederationConfig fc;
  fc.backbone = config.model;
  fc.plan.local_repetitions = config.training.local_repetitions;
  fc.plan.total_rounds = config.training.rounds;
  fc.source_sgd = SgdConfig{config.training.learning_rate, config.training.momentum, config.training.decay,
                            config.training.clip_norm, config.training.batch_size};
  fc.target_sgd = fc.source_sgd;
  fc.adaptation = config.method.adaptation;
  if (config.method.no_da) fc.adaptation.weights.lambda1 = 0.0;
  if (config.method.no_sm) fc.adaptation.weights.lambda2 = 0.0;
  fc.adapt = !config.method.source_only;
  fc.seed = seed;
  fc.parallel_sources = config.training.parallel_sources;
  fc.weighting = config.training.weighting;
  fc.early_stop = config.training.early_stop;
  fc.privacy_checks = config.training.privacy_checks;
  return fc;
}

FederationData make_federation_data(const ExperimentConfig& config) {
  const auto& d = config.dataset;
  const ImageGeometry geometry{d.channels, d.image_side, d.patch_side};
  std::vector<DomainDataset> domains;
  if (d.kind == "synthetic") {
    std::vector<DomainSpec> specs;
    for (std::size_t k = 0; k < d.domains.size(); ++k) {
      DomainSpec s;
      s.domain_id = d.domains[k];
      s.n_samples = d.samples;
      s.n_classes = d.classes;
      s.shift.rotation_deg = d.rotations[k];
      s.shift.noise_std = d.noise[k];
      for (int c = 0; c < d.channels; ++c) {
        const double sign = c == 0 ? 1.0 : (c == 1 ? -1.0 : 0.0);
        s.shift.channel_gain.push_back(1.0 + sign * d.gains[k]);
        s.shift.channel_bias.push_back(sign * d.gains[k]);
      }
      s.seed = derive_seed(d.seed, 0xd0, k);
      specs.push_back(std::move(s));
    }
    domains = make_synthetic_domains(d.seed, specs, geometry);
  } else {
    auto set = load_image_folders(d.root, d.domains, geometry);
    if (static_cast<int>(set.class_names.size()) != config.model.num_classes) {
      throw ConfigError("dataset has " + std::to_string(set.class_names.size()) + " classes but model.num_classes is " +
                        std::to_string(config.model.num_classes));
    }
    domains = std::move(set.domains);
  }
  FederationData data;
  for (auto& ds : domains) {
    auto shared = std::make_shared<const DomainDataset>(std::move(ds));
    if (shared->name() == d.target) {
      data.target = shared;
    } else {
      data.sources.push_back(shared);
    }
  }
  return data;
}

std::string code_version() {
  std::string v = FDAC_VERSION;
  const std::string commit = FDAC_GIT_COMMIT;
  if (!commit.empty()) v += "+" + commit;
  return v;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const fs::path& out_dir, const Logger& log) {
  config.validate();
  const FederationData data = make_federation_data(config);
  fs::create_directories(out_dir);
  const std::string ini = to_ini(config);
  write_text(out_dir / "config.ini", ini);

  ExperimentResult result;
  result.tag = method_tag(config);
  std::vector<double> finals;
  json files = json::array();
  for (std::uint64_t seed : config.training.seeds) {
    const FederationConfig fc = make_federation_config(config, seed);
    FederationHooks hooks;
    hooks.on_round = [&](const RoundReport& r) {
      char line[160];
      std::snprintf(line, sizeof line, "[%s] seed %llu round %d  acc %.4f  coverage %.3f  loss %.4f",
                    result.tag.c_str(), static_cast<unsigned long long>(seed), r.round, r.target_accuracy,
                    r.pseudo_coverage, r.total_loss);
      emit(log, line);
    };
    FederationResult fr = run_federation(fc, data, hooks);
    const fs::path seed_dir = out_dir / ("seed_" + std::to_string(seed));
    write_metrics_file(seed_dir / "metrics.csv", fr.reports);
    files.push_back((seed_dir / "metrics.csv").lexically_relative(out_dir).string());
    if (config.output.save_checkpoint) {
      save_checkpoint(seed_dir / "model.fdac", config.model, fr.global_model);
      files.push_back((seed_dir / "model.fdac").lexically_relative(out_dir).string());
    }
    if (config.output.save_pseudo_labels && fr.pseudo_labels) {
      std::ofstream out(seed_dir / "pseudo_labels.csv", std::ios::binary);
      write_pseudo_labels(out, *fr.pseudo_labels);
      files.push_back((seed_dir / "pseudo_labels.csv").lexically_relative(out_dir).string());
    }
    SeedRun run;
    run.seed = seed;
    run.final_accuracy = fr.reports.empty() ? 0.0 : fr.reports.back().target_accuracy;
    run.reports = std::move(fr.reports);
    finals.push_back(run.final_accuracy);
    result.runs.push_back(std::move(run));
  }
  result.summary = summarize(finals);

  json summary = {{"tag", result.tag},
                  {"seeds", config.training.seeds},
                  {"final_accuracy", finals},
                  {"mean", result.summary.mean},
                  {"std", result.summary.stddev},
                  {"count", result.summary.count}};
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  json manifest = {{"config_sha256", sha256_hex(ini)},
                   {"code_version", code_version()},
                   {"config", ini},
                   {"files", files}};
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  char line[160];
  std::snprintf(line, sizeof line, "[%s] final accuracy %.4f +- %.4f over %zu seeds", result.tag.c_str(),
                result.summary.mean, result.summary.stddev, result.summary.count);
  emit(log, line);
  return result;
}

ExperimentResult rerun_manifest(const fs::path& manifest, const fs::path& out_dir, const Logger& log) {
  std::ifstream in(manifest);
  if (!in) throw ConfigError("cannot open manifest " + manifest.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw SchemaError("manifest " + manifest.string() + ": " + e.what());
  }
  if (!m.contains("config") || !m["config"].is_string()) {
    throw SchemaError("manifest " + manifest.string() + " has no config");
  }
  std::istringstream text(m["config"].get<std::string>());
  const ExperimentConfig config = parse_experiment_config(text);
  if (m.contains("config_sha256") && m["config_sha256"] != config_hash(config)) {
    throw SchemaError("manifest config hash does not match its config text");
  }
  return run_experiment(config, out_dir, log);
}

void write_comparison(const fs::path& path, const std::vector<ComparisonRow>& rows) {
  std::string text = "label,mean,std,count\n";
  for (const auto& r : rows) {
    text += r.label + "," + format_double(r.summary.mean) + "," + format_double(r.summary.stddev) + "," +
            std::to_string(r.summary.count) + "\n";
  }
  write_text(path, text);
}

std::vector<ComparisonRow> block_strategy_sweep(const ExperimentConfig& config,
                                                const std::vector<BlockStrategy>& strategies,
                                                const fs::path& out_dir, const Logger& log) {
  std::vector<ComparisonRow> rows;
  for (auto s : strategies) {
    ExperimentConfig c = config;
    c.method.adaptation.strategy = s;
    c.method.strategy_set = true;
    if (s != BlockStrategy::fixed) {
      c.method.layer_set = false;
      c.method.adaptation.layer = 0;
    }
    rows.push_back(run_variant(c, std::string(to_string(s)), out_dir / std::string(to_string(s)), log));
  }
  write_comparison(out_dir / "blocks.csv", rows);
  return rows;
}

std::vector<ComparisonRow> rounds_sweep(const ExperimentConfig& config, const std::vector<int>& repetitions,
                                        int epoch_budget, const fs::path& out_dir, const Logger& log) {
  std::vector<ComparisonRow> rows;
  for (int r : repetitions) {
    if (r < 1 || epoch_budget % r != 0) {
      throw ConfigError("r=" + std::to_string(r) + " does not divide the epoch budget " + std::to_string(epoch_budget));
    }
    ExperimentConfig c = config;
    c.training.local_repetitions = r;
    c.training.rounds = epoch_budget / r;
    rows.push_back(run_variant(c, "r=" + std::to_string(r), out_dir / ("r" + std::to_string(r)), log));
  }
  write_comparison(out_dir / "rounds.csv", rows);
  return rows;
}

std::vector<ComparisonRow> lambda_sweep(const ExperimentConfig& config, const std::vector<double>& grid,
                                        const fs::path& out_dir, const Logger& log) {
  std::vector<ComparisonRow> rows;
  for (int which = 1; which <= 2; ++which) {
    for (double v : grid) {
      ExperimentConfig c = config;
      c.method.adaptation.weights.lambda1 = which == 1 ? v : 1.0;
      c.method.adaptation.weights.lambda2 = which == 2 ? v : 1.0;
      const std::string label = "lambda" + std::to_string(which) + "=" + format_double(v);
      rows.push_back(run_variant(c, label, out_dir / label, log));
    }
  }
  write_comparison(out_dir / "lambda.csv", rows);
  return rows;
}

std::vector<ComparisonRow> compare_augmentations(const ExperimentConfig& config,
                                                 const std::vector<Augmentation>& augmentations,
                                                 const fs::path& out_dir, const Logger& log) {
  std::vector<ComparisonRow> rows;
  for (auto a : augmentations) {
    ExperimentConfig c = config;
    c.method.adaptation.augmentation = a;
    const std::string label(to_string(a));
    rows.push_back(run_variant(c, label, out_dir / label, log));
  }
  write_comparison(out_dir / "augmentations.csv", rows);
  return rows;
}

FeatureExport export_features(const VisionTransformer& model, const ModelParams& params,
                              const DomainDataset& target, const PseudoLabelSet* pseudo_labels,
                              std::size_t per_class, const fs::path& out_path, std::uint64_t sampling_seed) {
  FeatureExport result;
  const int classes = target.num_classes();
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < target.size(); ++i) by_class[static_cast<std::size_t>(target.labels()[i])].push_back(i);
  std::vector<std::size_t> chosen;
  for (int c = 0; c < classes; ++c) {
    auto& pool = by_class[static_cast<std::size_t>(c)];
    std::mt19937_64 rng(derive_seed(sampling_seed, 0xfea7, static_cast<std::uint64_t>(c)));
    std::shuffle(pool.begin(), pool.end(), rng);
    if (pool.size() < per_class) {
      result.warnings.push_back("class " + std::to_string(c) + " has only " + std::to_string(pool.size()) +
                                " samples; exporting all of them");
    }
    const std::size_t take = std::min(per_class, pool.size());
    std::vector<std::size_t> picked(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(picked.begin(), picked.end());
    chosen.insert(chosen.end(), picked.begin(), picked.end());
  }
  std::vector<int> pseudo(target.size(), -1);
  if (pseudo_labels) {
    for (const auto& e : pseudo_labels->entries()) {
      if (e.sample_index < pseudo.size()) pseudo[e.sample_index] = e.class_id;
    }
  }
  const Matrix features = normalize_rows(model.features(params, target.gather_patches(chosen))).output;

  std::string text;
  for (Index j = 0; j < features.cols(); ++j) text += "f" + std::to_string(j) + ",";
  text += "true_label,pseudo_label\n";
  for (std::size_t r = 0; r < chosen.size(); ++r) {
    for (Index j = 0; j < features.cols(); ++j) text += format_double(features(static_cast<Index>(r), j)) + ",";
    text += std::to_string(target.labels()[chosen[r]]) + "," + std::to_string(pseudo[chosen[r]]) + "\n";
  }
  write_text(out_path, text);
  result.rows = chosen.size();
  result.columns = static_cast<std::size_t>(features.cols()) + 2;
  return result;
}

FeatureExport export_run_features(const fs::path& run_dir, std::size_t per_class, const fs::path& out_path) {
  fs::path config_path = run_dir / "config.ini";
  if (!fs::exists(config_path)) config_path = run_dir.parent_path() / "config.ini";
  const ExperimentConfig config = load_experiment_config(config_path);
  const Checkpoint ckpt = load_checkpoint(run_dir / "model.fdac");
  const FederationData data = make_federation_data(config);
  std::optional<PseudoLabelSet> labels;
  if (fs::exists(run_dir / "pseudo_labels.csv")) {
    std::ifstream in(run_dir / "pseudo_labels.csv");
    labels = read_pseudo_labels(in, config.method.adaptation.threshold, data.target->size());
  }
  const VisionTransformer model(ckpt.config);
  return export_features(model, ckpt.params, *data.target, labels ? &*labels : nullptr, per_class, out_path);
}

}  // namespace fdac
