#include "mvcc/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mvcc {

namespace {

void require_same_shape(const ViewPair& a, const ViewPair& b) {
  if (a.x.shape() != b.x.shape() || a.x_prime.shape() != b.x_prime.shape() || a.x.shape() != a.x_prime.shape()) {
    throw DimensionError("cutmix: view pairs have different shapes");
  }
}

// Replaces the pixels of `view` whose canonical position (under t) lies in the
// box with the donor's canonical content resampled through t.
Tensor paste_coherent(const Tensor& view, const AffineTransform& t, const Tensor& donor_view,
                      const AffineTransform& donor_t, const Box& box) {
  const std::size_t c = view.dim(0), h = view.dim(1), w = view.dim(2);
  const Tensor donor_canonical = align_to_canonical(donor_view, donor_t).values;
  const SampleGrid grid = make_grid(t, h, w);
  const Tensor donor_in_view = grid_sample_bilinear(donor_canonical, grid).values;
  std::vector<double> out(view.data().begin(), view.data().end());
  auto src = donor_in_view.data();
  for (std::size_t p = 0; p < h * w; ++p) {
    if (!grid.valid.bits[p]) continue;
    const double u = to_pixel(grid.coords[2 * p], w);
    const double v = to_pixel(grid.coords[2 * p + 1], h);
    if (!box.contains_continuous(v, u)) continue;
    for (std::size_t k = 0; k < c; ++k) out[k * h * w + p] = src[k * h * w + p];
  }
  return Tensor::constant(view.shape(), std::move(out));
}

Tensor paste_direct(const Tensor& view, const Tensor& donor_view, const Box& box) {
  const std::size_t c = view.dim(0), h = view.dim(1), w = view.dim(2);
  std::vector<double> out(view.data().begin(), view.data().end());
  auto src = donor_view.data();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = box.y0; y < box.y1; ++y)
      for (std::size_t x = box.x0; x < box.x1; ++x) out[(k * h + y) * w + x] = src[(k * h + y) * w + x];
  return Tensor::constant(view.shape(), std::move(out));
}

}  // namespace

bool Box::contains_continuous(double v, double u) const {
  if (empty()) return false;
  return u >= static_cast<double>(x0) - 0.5 && u < static_cast<double>(x1) - 0.5 &&
         v >= static_cast<double>(y0) - 0.5 && v < static_cast<double>(y1) - 0.5;
}

Tensor color_jitter(const Tensor& img, Rng& rng, const ColorJitterConfig& cfg) {
  const double brightness = rng.uniform(cfg.brightness_min, cfg.brightness_max);
  const double contrast = rng.uniform(cfg.contrast_min, cfg.contrast_max);
  auto in = img.data();
  const double mu = std::accumulate(in.begin(), in.end(), 0.0) / static_cast<double>(in.size());
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = std::clamp(contrast * in[i] + (1.0 - contrast) * mu + brightness, 0.0, 1.0);
  }
  return Tensor::constant(img.shape(), std::move(out));
}

Box sample_cutmix_box(Rng& rng, std::size_t height, std::size_t width, const CutMixConfig& cfg) {
  if (cfg.area_min < 0.0 || cfg.area_max > 1.0 || cfg.area_max < cfg.area_min || cfg.aspect_min <= 0.0 ||
      cfg.aspect_max < cfg.aspect_min) {
    throw std::invalid_argument("sample_cutmix_box: invalid configuration");
  }
  const double frac = rng.uniform(cfg.area_min, cfg.area_max);
  const double aspect = rng.uniform(cfg.aspect_min, cfg.aspect_max);
  if (frac >= 1.0) return {0, 0, width, height};
  const double area = frac * static_cast<double>(height * width);
  const auto bw = std::min(width, static_cast<std::size_t>(std::lround(std::sqrt(area * aspect))));
  const auto bh = std::min(height, static_cast<std::size_t>(std::lround(std::sqrt(area / aspect))));
  if (bw == 0 || bh == 0) return {};
  const std::size_t x0 = rng.below(width - bw + 1);
  const std::size_t y0 = rng.below(height - bh + 1);
  return {x0, y0, x0 + bw, y0 + bh};
}

ViewPair make_view_pair(const Tensor& img, Rng& rng, const AugmentConfig& cfg) {
  if (img.rank() != 3) throw DimensionError("make_view_pair: expected C×H×W image");
  const std::size_t h = img.dim(1), w = img.dim(2);
  ViewPair pair;
  pair.t = random_view_transform(rng, cfg.view);
  pair.t_prime = cfg.same_geometry ? pair.t : random_view_transform(rng, cfg.view);
  pair.x = color_jitter(grid_sample_bilinear(img, make_grid(pair.t, h, w)).values, rng, cfg.jitter);
  pair.x_prime = color_jitter(grid_sample_bilinear(img, make_grid(pair.t_prime, h, w)).values, rng, cfg.jitter);
  pair.valid = mask_and(canonical_coverage(pair.t, h, w), canonical_coverage(pair.t_prime, h, w));
  if (pair.valid.count() == 0) throw std::runtime_error("make_view_pair: views do not overlap");
  return pair;
}

ViewPair view_coherent_cutmix(const ViewPair& pair, const ViewPair& donor, const Box& box, std::size_t donor_index) {
  require_same_shape(pair, donor);
  ViewPair out = pair;
  out.cutmix = CutMixRecord{box, donor_index};
  if (box.empty()) return out;
  if (box.x1 > pair.x.dim(2) || box.y1 > pair.x.dim(1)) throw DimensionError("cutmix box exceeds image bounds");
  out.x = paste_coherent(pair.x, pair.t, donor.x, donor.t, box);
  out.x_prime = paste_coherent(pair.x_prime, pair.t_prime, donor.x_prime, donor.t_prime, box);
  out.valid = mix_valid(pair.valid, donor.valid, box);
  return out;
}

ViewPair incoherent_cutmix(const ViewPair& pair, const ViewPair& donor, Rng& rng, const CutMixConfig& cfg,
                           std::size_t donor_index) {
  require_same_shape(pair, donor);
  if (!rng.bernoulli(cfg.prob)) return pair;
  const std::size_t h = pair.x.dim(1), w = pair.x.dim(2);
  const Box box = sample_cutmix_box(rng, h, w, cfg);
  const Box box_prime = sample_cutmix_box(rng, h, w, cfg);
  ViewPair out = pair;
  out.x = paste_direct(pair.x, donor.x, box);
  out.x_prime = paste_direct(pair.x_prime, donor.x_prime, box_prime);
  out.cutmix = CutMixRecord{box, donor_index};
  out.valid = mix_valid(pair.valid, donor.valid, box);
  return out;
}

std::vector<double> mix_in_box(std::span<const double> base, std::span<const double> donor, const Box& box,
                               std::size_t height, std::size_t width, std::size_t channels, bool rows) {
  if (base.size() != donor.size() || base.size() != height * width * channels) {
    throw DimensionError("mix_in_box: map sizes differ");
  }
  std::vector<double> out(base.begin(), base.end());
  for (std::size_t y = box.y0; y < std::min(box.y1, height); ++y)
    for (std::size_t x = box.x0; x < std::min(box.x1, width); ++x) {
      const std::size_t p = y * width + x;
      for (std::size_t k = 0; k < channels; ++k) {
        const std::size_t i = rows ? p * channels + k : k * height * width + p;
        out[i] = donor[i];
      }
    }
  return out;
}

Mask mix_valid(const Mask& valid, const Mask& donor_valid, const Box& box) {
  if (valid.height != donor_valid.height || valid.width != donor_valid.width) {
    throw DimensionError("mix_valid: mask sizes differ");
  }
  Mask out = valid;
  for (std::size_t y = box.y0; y < std::min(box.y1, valid.height); ++y)
    for (std::size_t x = box.x0; x < std::min(box.x1, valid.width); ++x)
      if (!donor_valid(y, x)) out.bits[y * valid.width + x] = 0;
  return out;
}

}  // namespace mvcc
