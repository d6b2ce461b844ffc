#include "mvcc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace mvcc {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

Mask mask_and(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) throw DimensionError("mask_and: mask sizes differ");
  Mask out(a.height, a.width, false);
  for (std::size_t i = 0; i < a.size(); ++i) out.bits[i] = (a.bits[i] && b.bits[i]) ? 1 : 0;
  return out;
}

AffineTransform compose(const AffineTransform& a, const AffineTransform& b) {
  const auto& p = a.m;
  const auto& q = b.m;
  return {{p[0] * q[0] + p[1] * q[3], p[0] * q[1] + p[1] * q[4], p[0] * q[2] + p[1] * q[5] + p[2],
           p[3] * q[0] + p[4] * q[3], p[3] * q[1] + p[4] * q[4], p[3] * q[2] + p[4] * q[5] + p[5]}};
}

AffineTransform invert(const AffineTransform& t) {
  const double d = t.det();
  if (!(std::abs(d) >= 1e-9)) throw SingularTransformError("affine transform is singular (|det| < 1e-9)");
  const auto& m = t.m;
  const double a = m[4] / d, b = -m[1] / d, c = -m[3] / d, e = m[0] / d;
  return {{a, b, -(a * m[2] + b * m[5]), c, e, -(c * m[2] + e * m[5])}};
}

double max_abs_diff(const AffineTransform& a, const AffineTransform& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < 6; ++i) worst = std::max(worst, std::abs(a.m[i] - b.m[i]));
  return worst;
}

double pixel_center(std::size_t index, std::size_t extent) {
  return static_cast<double>(2 * index + 1) / static_cast<double>(extent) - 1.0;
}

double to_pixel(double normalized, std::size_t extent) {
  return ((normalized + 1.0) * static_cast<double>(extent) - 1.0) * 0.5;
}

SampleGrid make_grid(const AffineTransform& t, std::size_t height, std::size_t width) {
  if (height < 2 || width < 2) throw std::invalid_argument("make_grid: grid must be at least 2x2");
  SampleGrid grid;
  grid.height = height;
  grid.width = width;
  grid.coords.resize(height * width * 2);
  grid.valid = Mask(height, width, false);
  for (std::size_t i = 0; i < height; ++i) {
    const double y = pixel_center(i, height);
    for (std::size_t j = 0; j < width; ++j) {
      const auto [sx, sy] = t.apply(pixel_center(j, width), y);
      const std::size_t p = i * width + j;
      grid.coords[2 * p] = sx;
      grid.coords[2 * p + 1] = sy;
      grid.valid.bits[p] = (sx >= -1.0 && sx <= 1.0 && sy >= -1.0 && sy <= 1.0) ? 1 : 0;
    }
  }
  return grid;
}

namespace {

struct Taps {
  std::array<std::size_t, 4> index{};
  std::array<double, 4> weight{};
  std::uint8_t count = 0;
};

// Pixel coordinates within 1e-9 of an integer snap to it, so grids that land
// on pixel centers resample exactly.
double snap(double u) {
  const double r = std::round(u);
  return std::abs(u - r) < 1e-9 ? r : u;
}

Taps bilinear_taps(double sx, double sy, std::size_t h, std::size_t w) {
  Taps taps;
  const double u = std::clamp(snap(to_pixel(sx, w)), 0.0, static_cast<double>(w - 1));
  const double v = std::clamp(snap(to_pixel(sy, h)), 0.0, static_cast<double>(h - 1));
  const auto x0 = static_cast<std::size_t>(std::floor(u));
  const auto y0 = static_cast<std::size_t>(std::floor(v));
  const double fx = u - static_cast<double>(x0);
  const double fy = v - static_cast<double>(y0);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  auto push = [&](std::size_t y, std::size_t x, double wt) {
    if (wt == 0.0) return;
    taps.index[taps.count] = y * w + x;
    taps.weight[taps.count] = wt;
    ++taps.count;
  };
  push(y0, x0, (1.0 - fx) * (1.0 - fy));
  push(y0, x1, fx * (1.0 - fy));
  push(y1, x0, (1.0 - fx) * fy);
  push(y1, x1, fx * fy);
  return taps;
}

}  // namespace

Warped grid_sample_bilinear(const Tensor& img, const SampleGrid& grid) {
  if (img.rank() != 3) throw DimensionError("grid_sample_bilinear: expected C×H×W input, got " + shape_str(img.shape()));
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const std::size_t out_hw = grid.height * grid.width;
  if (grid.coords.size() != out_hw * 2 || grid.valid.size() != out_hw) {
    throw DimensionError("grid_sample_bilinear: malformed grid");
  }
  auto taps = std::make_shared<std::vector<Taps>>(out_hw);
  for (std::size_t p = 0; p < out_hw; ++p) {
    if (grid.valid.bits[p]) (*taps)[p] = bilinear_taps(grid.coords[2 * p], grid.coords[2 * p + 1], h, w);
  }
  std::vector<double> out(c * out_hw, 0.0);
  auto in = img.data();
  for (std::size_t k = 0; k < c; ++k) {
    const double* src = in.data() + k * h * w;
    double* dst = out.data() + k * out_hw;
    for (std::size_t p = 0; p < out_hw; ++p) {
      const Taps& t = (*taps)[p];
      double acc = 0.0;
      for (std::uint8_t i = 0; i < t.count; ++i) acc += t.weight[i] * src[t.index[i]];
      dst[p] = acc;
    }
  }
  Tensor values = make_result("grid_sample_bilinear", {c, grid.height, grid.width}, std::move(out), {img},
                              [taps, c, hw = h * w, out_hw](std::span<const double> g, GradSinks sinks) {
                                for (std::size_t k = 0; k < c; ++k) {
                                  double* dst = sinks[0].data() + k * hw;
                                  const double* go = g.data() + k * out_hw;
                                  for (std::size_t p = 0; p < out_hw; ++p) {
                                    const Taps& t = (*taps)[p];
                                    for (std::uint8_t i = 0; i < t.count; ++i) dst[t.index[i]] += t.weight[i] * go[p];
                                  }
                                }
                              });
  return {std::move(values), grid.valid};
}

Warped align_to_canonical(const Tensor& featmap, const AffineTransform& t) {
  if (featmap.rank() != 3) throw DimensionError("align_to_canonical: expected C×H×W input");
  return grid_sample_bilinear(featmap, make_grid(invert(t), featmap.dim(1), featmap.dim(2)));
}

Mask canonical_coverage(const AffineTransform& t, std::size_t height, std::size_t width) {
  return make_grid(invert(t), height, width).valid;
}

AffineTransform random_view_transform(Rng& rng, const ViewTransformConfig& cfg) {
  if (cfg.scale_min <= 0.0 || cfg.scale_max < cfg.scale_min || cfg.max_translation < 0.0 || cfg.flip_prob < 0.0 ||
      cfg.flip_prob > 1.0) {
    throw std::invalid_argument("random_view_transform: invalid configuration");
  }
  const double s = rng.uniform(cfg.scale_min, cfg.scale_max);
  const double tx = rng.uniform(0.0, cfg.max_translation) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  const double ty = rng.uniform(0.0, cfg.max_translation) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  const double f = rng.bernoulli(cfg.flip_prob) ? -1.0 : 1.0;
  return {{s * f, 0.0, tx, 0.0, s, ty}};
}

}  // namespace mvcc
