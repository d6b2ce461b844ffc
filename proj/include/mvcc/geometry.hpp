#pragma once

// Affine sampling grids in normalized image coordinates.
//
// Coordinates follow the align-corners=false convention: pixel column j of a
// W-wide image has its center at x = (2j+1)/W - 1, so the image spans
// [-1, 1] on both axes. An AffineTransform maps normalized *output*
// coordinates to normalized *source* coordinates; warping an image by t means
// out(q) = img(t(q)).

#include <array>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mvcc/rng.hpp"
#include "mvcc/tensor.hpp"

namespace mvcc {

class SingularTransformError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Boolean H×W map, row-major.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, bool value) : height(h), width(w), bits(h * w, value ? 1 : 0) {}

  std::size_t size() const { return bits.size(); }
  std::size_t count() const;
  bool operator()(std::size_t y, std::size_t x) const { return bits[y * width + x] != 0; }
  bool operator==(const Mask&) const = default;
};

Mask mask_and(const Mask& a, const Mask& b);

struct AffineTransform {
  // Row-major 2×3: [a b tx; c d ty].
  std::array<double, 6> m{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};

  static AffineTransform identity() { return {}; }
  static AffineTransform scaling(double sx, double sy) { return {{sx, 0.0, 0.0, 0.0, sy, 0.0}}; }
  static AffineTransform translation(double tx, double ty) { return {{1.0, 0.0, tx, 0.0, 1.0, ty}}; }
  static AffineTransform hflip() { return scaling(-1.0, 1.0); }

  double det() const { return m[0] * m[4] - m[1] * m[3]; }
  std::pair<double, double> apply(double x, double y) const {
    return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]};
  }
  bool operator==(const AffineTransform&) const = default;
};

/// compose(a, b) maps p to a(b(p)).
AffineTransform compose(const AffineTransform& a, const AffineTransform& b);
/// Throws SingularTransformError when |det| < 1e-9.
AffineTransform invert(const AffineTransform& t);
double max_abs_diff(const AffineTransform& a, const AffineTransform& b);

struct SampleGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> coords;  // H×W×2, (x, y) per output pixel
  Mask valid;                  // source coordinate inside [-1, 1]²
};

double pixel_center(std::size_t index, std::size_t extent);
/// Inverse of pixel_center on the continuous axis: normalized → pixel units.
double to_pixel(double normalized, std::size_t extent);

SampleGrid make_grid(const AffineTransform& t, std::size_t height, std::size_t width);

struct Warped {
  Tensor values;
  Mask valid;
};

/// Bilinear resampling of a C×H×W tensor at grid coordinates. Samples whose
/// source lies outside [-1, 1]² are zero and flagged invalid; inside, taps
/// beyond the outermost pixel centers are clamped to the edge. Differentiable
/// w.r.t. img; the grid is constant.
Warped grid_sample_bilinear(const Tensor& img, const SampleGrid& grid);

/// Brings a map computed on a view warped by t back to the canonical frame.
Warped align_to_canonical(const Tensor& featmap, const AffineTransform& t);

/// Canonical pixels observed by a view warped by t.
Mask canonical_coverage(const AffineTransform& t, std::size_t height, std::size_t width);

struct ViewTransformConfig {
  double scale_min = 0.9;
  double scale_max = 1.1;
  /// Per-axis translation magnitude bound, normalized units.
  double max_translation = 0.1;
  double flip_prob = 0.5;
};

/// Uniform scale, translation with random sign per axis, optional horizontal
/// flip: src = s·F·q + t.
AffineTransform random_view_transform(Rng& rng, const ViewTransformConfig& cfg);

}  // namespace mvcc
