#pragma once

#include <cstddef>
#include <optional>

#include "mvcc/geometry.hpp"
#include "mvcc/rng.hpp"
#include "mvcc/tensor.hpp"

namespace mvcc {

struct ColorJitterConfig {
  double brightness_min = -0.2;
  double brightness_max = 0.2;
  double contrast_min = 0.8;
  double contrast_max = 1.25;

  static ColorJitterConfig none() { return {0.0, 0.0, 1.0, 1.0}; }
};

/// Random brightness shift and contrast scaling about the image mean, then a
/// clamp to [0, 1]. Returns a constant tensor.
Tensor color_jitter(const Tensor& img, Rng& rng, const ColorJitterConfig& cfg);

/// Pixel rectangle [x0, x1) × [y0, y1).
struct Box {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool empty() const { return x1 <= x0 || y1 <= y0; }
  std::size_t area() const { return empty() ? 0 : (x1 - x0) * (y1 - y0); }
  bool contains(std::size_t y, std::size_t x) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  /// Membership of a continuous canonical position given in pixel units.
  bool contains_continuous(double v, double u) const;
  bool operator==(const Box&) const = default;
};

struct CutMixConfig {
  double area_min = 0.2;
  double area_max = 0.5;
  double aspect_min = 0.5;
  double aspect_max = 2.0;
  /// Probability that a mini-batch item is mixed at all.
  double prob = 1.0;
};

Box sample_cutmix_box(Rng& rng, std::size_t height, std::size_t width, const CutMixConfig& cfg);

struct CutMixRecord {
  Box box;  // canonical frame
  std::size_t donor_index = 0;
};

struct ViewPair {
  Tensor x;
  Tensor x_prime;
  AffineTransform t;
  AffineTransform t_prime;
  /// Canonical pixels observed by both views.
  Mask valid;
  std::optional<CutMixRecord> cutmix;
};

struct AugmentConfig {
  ViewTransformConfig view;
  ColorJitterConfig jitter;
  CutMixConfig cutmix;
  /// Both views share one geometric transform.
  bool same_geometry = false;
};

ViewPair make_view_pair(const Tensor& img, Rng& rng, const AugmentConfig& cfg);

/// Pastes the donor's canonical content into `box` of both views of `pair`:
/// each view is taken to the canonical frame, the donor's matching
/// canonical-aligned view is pasted inside the box, and the view's own
/// geometric transform is re-applied. Only view pixels whose canonical
/// position falls inside the box are resampled; all others keep their
/// original values. `valid` becomes valid ∧ (outside box ∨ donor.valid).
ViewPair view_coherent_cutmix(const ViewPair& pair, const ViewPair& donor, const Box& box, std::size_t donor_index);

/// Ablation: each view receives its own random box in its own frame, pasted
/// straight from the donor's corresponding view. The record carries the
/// first view's box, which a geometry-unaware caller would use for targets.
ViewPair incoherent_cutmix(const ViewPair& pair, const ViewPair& donor, Rng& rng, const CutMixConfig& cfg,
                           std::size_t donor_index);

/// Composites two canonical C×H×W (or H·W×C row) maps: inside box from `donor`,
/// outside from `base`. Layout is given by `rows`.
std::vector<double> mix_in_box(std::span<const double> base, std::span<const double> donor, const Box& box,
                               std::size_t height, std::size_t width, std::size_t channels, bool rows);

/// valid ∧ (outside box ∨ donor_valid)
Mask mix_valid(const Mask& valid, const Mask& donor_valid, const Box& box);

}  // namespace mvcc
