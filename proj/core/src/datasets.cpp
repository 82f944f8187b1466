#include "fdac/datasets.hpp"

#include "fdac/checkpoint.hpp"
#include "fdac/error.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <set>

namespace fdac {

namespace {

struct Blob {
  double u, v, sigma;
  std::vector<double> amplitude;
};

struct Grating {
  double frequency, orientation, phase;
  std::vector<double> amplitude;
};

struct ClassTemplate {
  std::vector<Blob> blobs;
  Grating grating;
};

constexpr int kBlobsPerClass = 3;

std::vector<ClassTemplate> make_templates(std::uint64_t base_seed, int classes, int channels) {
  std::mt19937_64 rng(base_seed);
  std::uniform_real_distribution<double> pos(-0.6, 0.6);
  std::uniform_real_distribution<double> width(0.2, 0.4);
  std::uniform_real_distribution<double> amp(-1.0, 1.0);
  std::uniform_real_distribution<double> freq(1.0, 3.0);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::vector<ClassTemplate> out(static_cast<std::size_t>(classes));
  for (auto& t : out) {
    for (int b = 0; b < kBlobsPerClass; ++b) {
      Blob blob{pos(rng), pos(rng), width(rng), {}};
      for (int c = 0; c < channels; ++c) blob.amplitude.push_back(amp(rng));
      t.blobs.push_back(std::move(blob));
    }
    t.grating = {freq(rng), angle(rng), angle(rng) * 2.0, {}};
    for (int c = 0; c < channels; ++c) t.grating.amplitude.push_back(0.5 * amp(rng));
  }
  return out;
}

double blob_value(const Blob& b, double u, double v, int c, double du, double dv) {
  const double dx = u - (b.u + du);
  const double dy = v - (b.v + dv);
  return b.amplitude[static_cast<std::size_t>(c)] * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
}

}  // namespace

void ImageGeometry::validate() const {
  if (channels < 1 || side < 1 || patch < 1 || side % patch != 0) {
    throw ConfigError("image side must be a positive multiple of the patch side");
  }
}

Matrix patchify(const Matrix& images, const ImageGeometry& g) {
  if (images.cols() != g.pixels()) throw InputError("image width does not match the geometry");
  const Index per_side = g.patches_per_side();
  const Index t = g.num_patches();
  Matrix out(images.rows() * t, g.patch_dim());
  for (Index n = 0; n < images.rows(); ++n) {
    for (Index py = 0; py < per_side; ++py) {
      for (Index px = 0; px < per_side; ++px) {
        const Index row = n * t + py * per_side + px;
        Index col = 0;
        for (Index c = 0; c < g.channels; ++c) {
          for (Index dy = 0; dy < g.patch; ++dy) {
            for (Index dx = 0; dx < g.patch; ++dx) {
              const Index y = py * g.patch + dy;
              const Index x = px * g.patch + dx;
              out(row, col++) = images(n, (c * g.side + y) * g.side + x);
            }
          }
        }
      }
    }
  }
  return out;
}

Matrix unpatchify(const Matrix& patches, const ImageGeometry& g) {
  const Index t = g.num_patches();
  if (patches.cols() != g.patch_dim() || patches.rows() % t != 0) {
    throw InputError("patch matrix does not match the geometry");
  }
  const Index per_side = g.patches_per_side();
  Matrix out(patches.rows() / t, g.pixels());
  for (Index n = 0; n < out.rows(); ++n) {
    for (Index py = 0; py < per_side; ++py) {
      for (Index px = 0; px < per_side; ++px) {
        const Index row = n * t + py * per_side + px;
        Index col = 0;
        for (Index c = 0; c < g.channels; ++c) {
          for (Index dy = 0; dy < g.patch; ++dy) {
            for (Index dx = 0; dx < g.patch; ++dx) {
              out(n, (c * g.side + py * g.patch + dy) * g.side + px * g.patch + dx) = patches(row, col++);
            }
          }
        }
      }
    }
  }
  return out;
}

DomainDataset::DomainDataset(std::string name, ImageGeometry geometry, Matrix images,
                             std::vector<int> labels, int num_classes)
    : name_(std::move(name)),
      geometry_(geometry),
      images_(std::move(images)),
      labels_(std::move(labels)),
      num_classes_(num_classes) {
  geometry_.validate();
  if (images_.rows() != static_cast<Index>(labels_.size())) {
    throw InputError("dataset '" + name_ + "' has mismatched image and label counts");
  }
  for (int y : labels_) {
    if (y < 0 || y >= num_classes_) throw InputError("dataset '" + name_ + "' has a label out of range");
  }
  patches_ = patchify(images_, geometry_);
}

Matrix DomainDataset::gather_patches(std::span<const std::size_t> indices) const {
  const Index t = geometry_.num_patches();
  Matrix out(static_cast<Index>(indices.size()) * t, geometry_.patch_dim());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= size()) throw InputError("sample index out of range");
    out.middleRows(static_cast<Index>(k) * t, t) = patches_.middleRows(static_cast<Index>(indices[k]) * t, t);
  }
  return out;
}

std::vector<std::uint8_t> DomainDataset::sample_bytes(std::size_t index) const {
  Bytes out;
  out.reserve(static_cast<std::size_t>(images_.cols()) * 4);
  for (Index j = 0; j < images_.cols(); ++j) append_float32(out, images_(static_cast<Index>(index), j));
  return out;
}

bool DomainDataset::operator==(const DomainDataset& other) const {
  return name_ == other.name_ && geometry_.channels == other.geometry_.channels &&
         geometry_.side == other.geometry_.side && geometry_.patch == other.geometry_.patch &&
         num_classes_ == other.num_classes_ && labels_ == other.labels_ && images_ == other.images_;
}

std::vector<DomainDataset> make_synthetic_domains(std::uint64_t base_seed,
                                                  std::span<const DomainSpec> specs,
                                                  const ImageGeometry& geometry) {
  geometry.validate();
  if (specs.empty()) throw ConfigError("at least one domain spec is required");
  const int classes = specs.front().n_classes;
  for (const auto& s : specs) {
    if (s.n_classes != classes) {
      throw ConfigError("domain '" + s.domain_id + "' declares " + std::to_string(s.n_classes) +
                        " classes, expected " + std::to_string(classes));
    }
    if (!s.class_proportions.empty() && static_cast<int>(s.class_proportions.size()) != classes) {
      throw ConfigError("domain '" + s.domain_id + "' class-proportion vector has the wrong length");
    }
    const auto& sh = s.shift;
    if ((!sh.channel_gain.empty() && static_cast<int>(sh.channel_gain.size()) != geometry.channels) ||
        (!sh.channel_bias.empty() && static_cast<int>(sh.channel_bias.size()) != geometry.channels)) {
      throw ConfigError("domain '" + s.domain_id + "' channel shift does not match the channel count");
    }
    for (double g : sh.channel_gain) {
      if (g == 0.0) throw ConfigError("channel gain must be non-zero to keep the shift invertible");
    }
    if (sh.noise_std < 0.0) throw ConfigError("noise_std must be non-negative");
  }
  if (classes < 2) throw ConfigError("at least two classes are required");

  const auto templates = make_templates(base_seed, classes, geometry.channels);
  std::vector<DomainDataset> out;
  out.reserve(specs.size());
  for (const auto& spec : specs) {
    std::mt19937_64 rng(spec.seed);
    std::vector<double> weights = spec.class_proportions;
    if (weights.empty()) weights.assign(static_cast<std::size_t>(classes), 1.0);
    std::discrete_distribution<int> pick_class(weights.begin(), weights.end());
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(-0.8, 0.8);

    const double theta = spec.shift.rotation_deg * std::numbers::pi / 180.0;
    const double cos_t = std::cos(theta);
    const double sin_t = std::sin(theta);
    Matrix images(static_cast<Index>(spec.n_samples), geometry.pixels());
    std::vector<int> labels(spec.n_samples);
    for (std::size_t n = 0; n < spec.n_samples; ++n) {
      const int y = pick_class(rng);
      labels[n] = y;
      const auto& tpl = templates[static_cast<std::size_t>(y)];
      // Sample-level nuisance: jittered blob positions, global contrast and a
      // class-independent distractor blob.
      std::vector<std::pair<double, double>> jitter;
      for (int b = 0; b < kBlobsPerClass; ++b) jitter.emplace_back(0.06 * normal(rng), 0.06 * normal(rng));
      const double contrast = 1.0 + 0.15 * normal(rng);
      Blob distractor{uniform(rng), uniform(rng), 0.2, {}};
      for (int c = 0; c < geometry.channels; ++c) distractor.amplitude.push_back(0.5 * normal(rng));

      for (int c = 0; c < geometry.channels; ++c) {
        const double gain = spec.shift.channel_gain.empty() ? 1.0 : spec.shift.channel_gain[static_cast<std::size_t>(c)];
        const double bias = spec.shift.channel_bias.empty() ? 0.0 : spec.shift.channel_bias[static_cast<std::size_t>(c)];
        for (int py = 0; py < geometry.side; ++py) {
          for (int px = 0; px < geometry.side; ++px) {
            const double x = (px + 0.5) / geometry.side * 2.0 - 1.0;
            const double yv = (py + 0.5) / geometry.side * 2.0 - 1.0;
            // Evaluate the pattern in the rotated frame.
            const double u = cos_t * x + sin_t * yv;
            const double v = -sin_t * x + cos_t * yv;
            double value = 0.0;
            for (int b = 0; b < kBlobsPerClass; ++b) {
              value += blob_value(tpl.blobs[static_cast<std::size_t>(b)], u, v, c,
                                  jitter[static_cast<std::size_t>(b)].first,
                                  jitter[static_cast<std::size_t>(b)].second);
            }
            const auto& gr = tpl.grating;
            value += gr.amplitude[static_cast<std::size_t>(c)] *
                     std::sin(gr.frequency * std::numbers::pi *
                                  (u * std::cos(gr.orientation) + v * std::sin(gr.orientation)) +
                              gr.phase);
            value = contrast * value + blob_value(distractor, u, v, c, 0.0, 0.0);
            value = gain * value + bias;
            if (spec.shift.noise_std > 0.0) value += spec.shift.noise_std * normal(rng);
            images(static_cast<Index>(n), (c * geometry.side + py) * geometry.side + px) = value;
          }
        }
      }
    }
    out.emplace_back(spec.domain_id, geometry, std::move(images), std::move(labels), classes);
  }
  return out;
}

ImageFolderSet load_image_folders(const std::filesystem::path& root,
                                  std::span<const std::string> domain_names,
                                  const ImageGeometry& geometry) {
  namespace fs = std::filesystem;
  geometry.validate();
  if (geometry.channels != 1 && geometry.channels != 3) {
    throw ConfigError("image folders support 1 or 3 channels");
  }
  if (domain_names.empty()) throw ConfigError("no domains requested");

  std::vector<std::set<std::string>> class_sets;
  for (const auto& domain : domain_names) {
    const fs::path dir = root / domain;
    if (!fs::is_directory(dir)) throw InputError("domain directory '" + dir.string() + "' not found");
    std::set<std::string> classes;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_directory()) classes.insert(entry.path().filename().string());
    }
    if (classes.empty()) throw InputError("domain directory '" + dir.string() + "' has no class folders");
    class_sets.push_back(std::move(classes));
  }
  std::set<std::string> all;
  for (const auto& s : class_sets) all.insert(s.begin(), s.end());
  std::string asymmetric;
  for (const auto& name : all) {
    for (const auto& s : class_sets) {
      if (!s.contains(name)) {
        asymmetric += (asymmetric.empty() ? "" : ", ") + name;
        break;
      }
    }
  }
  if (!asymmetric.empty()) throw InputError("classes missing from some domains: " + asymmetric);

  ImageFolderSet result;
  result.class_names.assign(all.begin(), all.end());
  for (const auto& domain : domain_names) {
    std::vector<std::pair<fs::path, int>> files;
    for (std::size_t label = 0; label < result.class_names.size(); ++label) {
      const fs::path class_dir = root / domain / result.class_names[label];
      std::vector<fs::path> entries;
      for (const auto& entry : fs::directory_iterator(class_dir)) {
        auto ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (entry.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) {
          entries.push_back(entry.path());
        }
      }
      std::sort(entries.begin(), entries.end());
      for (auto& p : entries) files.emplace_back(std::move(p), static_cast<int>(label));
    }
    if (files.empty()) throw InputError("domain '" + domain + "' contains no images");

    Matrix images(static_cast<Index>(files.size()), geometry.pixels());
    std::vector<int> labels;
    for (std::size_t n = 0; n < files.size(); ++n) {
      cv::Mat img = cv::imread(files[n].first.string(),
                               geometry.channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
      if (img.empty()) throw InputError("cannot decode image '" + files[n].first.string() + "'");
      if (geometry.channels == 3) cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
      cv::resize(img, img, cv::Size(geometry.side, geometry.side), 0, 0, cv::INTER_AREA);
      for (int y = 0; y < geometry.side; ++y) {
        for (int x = 0; x < geometry.side; ++x) {
          for (int c = 0; c < geometry.channels; ++c) {
            const int raw = geometry.channels == 1 ? img.at<std::uint8_t>(y, x) : img.at<cv::Vec3b>(y, x)[c];
            images(static_cast<Index>(n), (c * geometry.side + y) * geometry.side + x) = (raw - 128.0) / 64.0;
          }
        }
      }
      labels.push_back(files[n].second);
    }
    result.domains.emplace_back(domain, geometry, std::move(images), std::move(labels),
                                static_cast<int>(result.class_names.size()));
  }
  return result;
}

void export_image_folders(std::span<const DomainDataset> datasets,
                          std::span<const std::string> class_names,
                          const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  for (const auto& ds : datasets) {
    const auto& g = ds.geometry();
    if (g.channels != 1 && g.channels != 3) throw ConfigError("export supports 1 or 3 channels");
    if (static_cast<int>(class_names.size()) != ds.num_classes()) {
      throw InputError("class name count does not match dataset '" + ds.name() + "'");
    }
    for (const auto& name : class_names) fs::create_directories(root / ds.name() / name);
    for (std::size_t n = 0; n < ds.size(); ++n) {
      cv::Mat img(g.side, g.side, g.channels == 1 ? CV_8UC1 : CV_8UC3);
      for (int y = 0; y < g.side; ++y) {
        for (int x = 0; x < g.side; ++x) {
          for (int c = 0; c < g.channels; ++c) {
            const double v = ds.images()(static_cast<Index>(n), (c * g.side + y) * g.side + x);
            const auto byte = static_cast<std::uint8_t>(std::clamp(std::round(v * 64.0 + 128.0), 0.0, 255.0));
            if (g.channels == 1) {
              img.at<std::uint8_t>(y, x) = byte;
            } else {
              img.at<cv::Vec3b>(y, x)[2 - c] = byte;  // RGB -> BGR
            }
          }
        }
      }
      char file[32];
      std::snprintf(file, sizeof(file), "%06zu.png", n);
      const fs::path out = root / ds.name() / class_names[static_cast<std::size_t>(ds.labels()[n])] / file;
      if (!cv::imwrite(out.string(), img)) throw InputError("cannot write '" + out.string() + "'");
    }
  }
}

}  // namespace fdac
