#pragma once

#include "fdac/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fdac {

struct ImageGeometry {
  int channels = 3;
  int side = 16;
  int patch = 4;

  int patches_per_side() const { return side / patch; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  int patch_dim() const { return patch * patch * channels; }
  int pixels() const { return channels * side * side; }
  void validate() const;
};

// Invertible covariate shift: coordinate rotation, then per-channel affine
// map, then additive Gaussian noise.
struct DomainShift {
  double rotation_deg = 0.0;
  std::vector<double> channel_gain;  // empty = all ones
  std::vector<double> channel_bias;  // empty = all zeros
  double noise_std = 0.0;
};

struct DomainSpec {
  std::string domain_id;
  std::size_t n_samples = 1000;
  int n_classes = 5;
  DomainShift shift;
  std::vector<double> class_proportions;  // empty = uniform
  std::uint64_t seed = 0;
};

// Images of one domain with their ground-truth labels. Rows of images() are
// channel-major pixel vectors; patches() stacks num_patches rows per sample.
class DomainDataset {
 public:
  DomainDataset(std::string name, ImageGeometry geometry, Matrix images, std::vector<int> labels,
                int num_classes);

  const std::string& name() const { return name_; }
  const ImageGeometry& geometry() const { return geometry_; }
  std::size_t size() const { return labels_.size(); }
  int num_classes() const { return num_classes_; }
  const Matrix& images() const { return images_; }
  const Matrix& patches() const { return patches_; }
  const std::vector<int>& labels() const { return labels_; }

  Matrix gather_patches(std::span<const std::size_t> indices) const;
  // Raw sample as little-endian float32 pixels (the privacy fingerprint unit).
  std::vector<std::uint8_t> sample_bytes(std::size_t index) const;

  bool operator==(const DomainDataset& other) const;

 private:
  std::string name_;
  ImageGeometry geometry_;
  Matrix images_;
  Matrix patches_;
  std::vector<int> labels_;
  int num_classes_ = 0;
};

// Training view handed to a labeled source client.
class LabeledView {
 public:
  explicit LabeledView(std::shared_ptr<const DomainDataset> data) : data_(std::move(data)) {}

  std::size_t size() const { return data_->size(); }
  const ImageGeometry& geometry() const { return data_->geometry(); }
  Matrix gather_patches(std::span<const std::size_t> indices) const { return data_->gather_patches(indices); }
  const std::vector<int>& labels() const { return data_->labels(); }
  const DomainDataset& dataset() const { return *data_; }

 private:
  std::shared_ptr<const DomainDataset> data_;
};

// Training view handed to the target client: inputs only, no label accessor.
class UnlabeledView {
 public:
  explicit UnlabeledView(std::shared_ptr<const DomainDataset> data) : data_(std::move(data)) {}

  std::size_t size() const { return data_->size(); }
  const ImageGeometry& geometry() const { return data_->geometry(); }
  Matrix gather_patches(std::span<const std::size_t> indices) const { return data_->gather_patches(indices); }
  const Matrix& patches() const { return data_->patches(); }
  int num_classes() const { return data_->num_classes(); }

 private:
  std::shared_ptr<const DomainDataset> data_;
};

// Image rows -> (N * num_patches) x patch_dim patch rows, raster patch order,
// channel-major inside a patch.
Matrix patchify(const Matrix& images, const ImageGeometry& geometry);
Matrix unpatchify(const Matrix& patches, const ImageGeometry& geometry);

// All specs share the class templates drawn from `base_seed`; each spec's own
// seed drives sample-level variation, label draws and noise.
std::vector<DomainDataset> make_synthetic_domains(std::uint64_t base_seed,
                                                  std::span<const DomainSpec> specs,
                                                  const ImageGeometry& geometry = {});

struct ImageFolderSet {
  std::vector<DomainDataset> domains;
  std::vector<std::string> class_names;  // label id -> directory name
};

// Layout root/<domain>/<class>/*.png|jpg|jpeg; every domain must contain the
// same class directories.
ImageFolderSet load_image_folders(const std::filesystem::path& root,
                                  std::span<const std::string> domain_names,
                                  const ImageGeometry& geometry);

// Writes datasets in the layout above. Pixel values v map to 8-bit as
// clamp(round(v * 64 + 128)).
void export_image_folders(std::span<const DomainDataset> datasets,
                          std::span<const std::string> class_names,
                          const std::filesystem::path& root);

}  // namespace fdac
