#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mvcc/config.hpp"
#include "mvcc/tensor.hpp"

namespace mvcc {

struct DatasetConfig {
  std::size_t num_images = 512;
  std::size_t eval_images = 128;
  std::size_t height = 48;
  std::size_t width = 48;
  std::size_t num_classes = 4;
  std::size_t min_shapes = 2;
  std::size_t max_shapes = 5;
  double noise_sigma = 0.08;
  /// Distance of each foreground class color from the background color.
  double color_separation = 0.35;
  /// Strength of the per-image gain/offset applied to all class colors.
  double illumination = 0.25;
  /// Radius of the per-shape chroma offset around its class color.
  double color_jitter = 0.0;
  /// Foreground class k is drawn with probability ∝ k^-class_decay.
  double class_decay = 1.0;
  double labeled_ratio = 1.0 / 8.0;
  std::uint64_t seed = 1;

  /// Throws ConfigError unless H == W ∈ [32, 96], C ∈ [3, 8] and counts are
  /// positive.
  void validate() const;
  static DatasetConfig from_config(const KeyValueConfig& kv);
  std::string to_text() const;
};

struct ManifestEntry {
  std::string id;
  bool labeled = false;
  bool operator==(const ManifestEntry&) const = default;
};

struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<Tensor> images;             // 3×H×W, values k/255
  std::vector<std::vector<int>> labels;   // H·W class indices
  std::vector<ManifestEntry> manifest;
  std::uint64_t seed = 0;

  std::size_t size() const { return images.size(); }
  std::vector<std::size_t> labeled_indices() const;
  std::vector<std::size_t> unlabeled_indices() const;
};

/// Base color of a class, quantized to 8 bits, before per-image illumination.
std::vector<double> class_base_color(std::size_t cls, std::size_t num_classes, double separation);

/// Random shapes (rectangles, ellipses, stripe patches) of long-tailed
/// foreground classes over a background class 0, colored by class with
/// per-image illumination and Gaussian pixel noise, quantized to 8 bits.
/// Every image is labeled in the returned manifest.
Dataset generate_dataset(const DatasetConfig& cfg, std::uint64_t seed);
/// Held-out evaluation images: same cfg, independent seed stream.
Dataset generate_eval_dataset(const DatasetConfig& cfg);

/// Marks floor(ratio · count) ids, drawn uniformly without replacement, as
/// labeled.
std::vector<ManifestEntry> split(const Dataset& dataset, double ratio, std::uint64_t seed);

std::string image_id(std::size_t index);

// Binary PPM (P6) / PGM (P5) and the tab-separated manifest.
void write_ppm(const std::filesystem::path& path, const Tensor& img);
Tensor read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, std::span<const int> labels, std::size_t height, std::size_t width);
std::vector<int> read_pgm(const std::filesystem::path& path, std::size_t& height, std::size_t& width);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> manifest);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// dir/{manifest.txt, images/<id>.ppm, labels/<id>.pgm}
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir, std::size_t num_classes);

struct ConfusionMatrix {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> counts;  // row = ground truth, column = prediction

  explicit ConfusionMatrix(std::size_t c = 0) : num_classes(c), counts(c * c, 0) {}
  static ConfusionMatrix from_counts(std::size_t c, std::vector<std::uint64_t> counts);

  void add(std::span<const int> truth, std::span<const int> pred);
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * num_classes + pred]; }
  std::uint64_t total() const;
};

struct MiouResult {
  double miou = 0.0;
  std::vector<double> iou;     // per class; NaN where excluded
  std::vector<bool> present;   // nonzero denominator
};

/// IoU_c = TP/(TP+FP+FN); classes with a zero denominator are excluded.
MiouResult miou(const ConfusionMatrix& cm);

}  // namespace mvcc
