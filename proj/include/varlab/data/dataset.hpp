#pragma once

// Procedural stand-in for a labelled image corpus: each class is one pattern
// family (stripes, disc, ring, ...) with random colours and geometry.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "varlab/io/image_io.hpp"
#include "varlab/numerics/tensor.hpp"

namespace varlab {

inline constexpr std::size_t kPatternFamilies = 8;

struct DatasetSpec {
  std::size_t image_size = 32;
  std::size_t num_classes = 8;  // at most kPatternFamilies
  std::size_t samples_per_class = 256;
  std::uint64_t seed = 0;

  std::size_t size() const { return num_classes * samples_per_class; }
  void validate() const;
  bool operator==(const DatasetSpec&) const = default;
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);

// Image i has label i % num_classes, so every prefix is nearly balanced.
struct Dataset {
  DatasetSpec spec;
  std::vector<Image> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
};

// Depends only on (spec, label, index within class).
Image render_sample(const DatasetSpec& spec, int label, std::size_t index);
Dataset generate_dataset(const DatasetSpec& spec);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
// sha256 over the concatenated pixels of each class, in dataset order.
std::vector<std::string> class_checksums(const Dataset& ds);
// {spec, count, class_checksums, checksum}
nlohmann::json dataset_manifest(const Dataset& ds);

// Last test_fraction of every class (rounded down, at least one) is held out.
struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
DatasetSplit split_dataset(const Dataset& ds, double test_fraction = 0.125);

// RGB bytes -> NHWC floats in [-1, 1], and back (clamped, rounded).
Tensor images_to_tensor(const std::vector<Image>& images, std::span<const std::size_t> indices);
Tensor images_to_tensor(const std::vector<Image>& images);
Image tensor_to_image(const Tensor& image);
std::vector<int> gather_labels(const Dataset& ds, std::span<const std::size_t> indices);

// dir/images.bin (raw RGB) + dir/dataset.json (manifest). Loading recomputes
// the checksums and throws DataError on any mismatch.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace varlab
