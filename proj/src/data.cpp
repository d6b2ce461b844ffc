#include "mvcc/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "mvcc/rng.hpp"

namespace mvcc {

namespace {

constexpr std::uint64_t kEvalStream = 0xE7A1D5E7ULL;

double quantize(double v) { return static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0; }

// Offset in the equal-luminance plane spanned by (1,-1,0)/√2 and (1,1,-2)/√6.
std::array<double, 3> chroma_offset(double cu, double cv) {
  const double u[3] = {1.0 / std::sqrt(2.0), -1.0 / std::sqrt(2.0), 0.0};
  const double v[3] = {1.0 / std::sqrt(6.0), 1.0 / std::sqrt(6.0), -2.0 / std::sqrt(6.0)};
  return {cu * u[0] + cv * v[0], cu * u[1] + cv * v[1], cu * u[2] + cv * v[2]};
}

enum class ShapeKind { kRectangle, kEllipse, kStripes };

struct Shape2D {
  ShapeKind kind;
  int cls;
  double cx, cy, a, b, angle, period;
  double tint_u, tint_v;  // per-instance chroma offset

  bool covers(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * dx + s * dy, v = -s * dx + c * dy;
    switch (kind) {
      case ShapeKind::kRectangle:
        return std::abs(dx) <= a && std::abs(dy) <= b;
      case ShapeKind::kEllipse:
        return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
      case ShapeKind::kStripes:
        return std::abs(u) <= a && std::abs(v) <= b && std::fmod(u + a, period) < 0.5 * period;
    }
    return false;
  }
};

// Foreground classes are drawn with probability ∝ k^-decay so that class
// frequencies are long-tailed on top of the dominant background.
int draw_class(Rng& rng, std::size_t num_classes, double decay) {
  double total = 0.0;
  for (std::size_t k = 1; k < num_classes; ++k) total += std::pow(static_cast<double>(k), -decay);
  double u = rng.uniform() * total;
  for (std::size_t k = 1; k < num_classes; ++k) {
    u -= std::pow(static_cast<double>(k), -decay);
    if (u < 0.0) return static_cast<int>(k);
  }
  return static_cast<int>(num_classes - 1);
}

void generate_one(const DatasetConfig& cfg, Rng rng, std::vector<double>& pixels, std::vector<int>& labels) {
  const std::size_t h = cfg.height, w = cfg.width, hw = h * w;
  const double extent = static_cast<double>(std::min(h, w));
  labels.assign(hw, 0);
  std::vector<int> owner(hw, -1);
  std::vector<Shape2D> shapes;
  const std::size_t count = cfg.min_shapes + rng.below(cfg.max_shapes - cfg.min_shapes + 1);
  for (std::size_t s = 0; s < count; ++s) {
    Shape2D shape{};
    shape.kind = static_cast<ShapeKind>(rng.below(3));
    shape.cls = draw_class(rng, cfg.num_classes, cfg.class_decay);
    shape.cx = rng.uniform(0.0, static_cast<double>(w));
    shape.cy = rng.uniform(0.0, static_cast<double>(h));
    shape.a = extent * rng.uniform(0.08, 0.22);
    shape.b = extent * rng.uniform(0.08, 0.22);
    shape.angle = rng.uniform(0.0, std::numbers::pi);
    shape.period = rng.uniform(4.0, 8.0);
    // Uniform over a disk of radius color_jitter.
    const double r = cfg.color_jitter * std::sqrt(rng.uniform());
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    shape.tint_u = r * std::cos(phi);
    shape.tint_v = r * std::sin(phi);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        if (shape.covers(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) {
          labels[y * w + x] = shape.cls;
          owner[y * w + x] = static_cast<int>(s);
        }
    shapes.push_back(shape);
  }

  const double gain = 1.0 + rng.uniform(-cfg.illumination, cfg.illumination);
  const double offset = 0.5 * rng.uniform(-cfg.illumination, cfg.illumination);
  // Palette entry 0 is the background, entry s + 1 belongs to shape s.
  std::vector<std::vector<double>> palette;
  palette.push_back(class_base_color(0, cfg.num_classes, cfg.color_separation));
  for (const Shape2D& shape : shapes) {
    std::vector<double> color = class_base_color(static_cast<std::size_t>(shape.cls), cfg.num_classes,
                                                 cfg.color_separation);
    const auto tint = chroma_offset(shape.tint_u, shape.tint_v);
    for (std::size_t ch = 0; ch < 3; ++ch) color[ch] += tint[ch];
    palette.push_back(std::move(color));
  }
  for (auto& color : palette)
    for (double& v : color) v = gain * (v - 0.5) + 0.5 + offset;
  pixels.assign(3 * hw, 0.0);
  for (std::size_t p = 0; p < hw; ++p) {
    const auto& color = palette[static_cast<std::size_t>(owner[p] + 1)];
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double noise = cfg.noise_sigma > 0.0 ? cfg.noise_sigma * rng.normal() : 0.0;
      pixels[ch * hw + p] = quantize(color[ch] + noise);
    }
  }
}

void expect_token(std::istream& is, const std::string& what, const std::filesystem::path& path) {
  if (!is) throw std::runtime_error("malformed " + what + " header in " + path.string());
}

// Reads the next whitespace-delimited header token, skipping # comments.
std::string header_token(std::istream& is) {
  std::string tok;
  while (is >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(is, rest);
      continue;
    }
    return tok;
  }
  return {};
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void DatasetConfig::validate() const {
  if (height != width || height < 32 || height > 96) throw ConfigError("dataset: need H == W in [32, 96]");
  if (num_classes < 3 || num_classes > 8) throw ConfigError("dataset: num_classes must be in [3, 8]");
  if (num_images == 0 || eval_images == 0) throw ConfigError("dataset: image counts must be positive");
  if (min_shapes == 0 || max_shapes < min_shapes) throw ConfigError("dataset: invalid shape count range");
  if (noise_sigma < 0.0 || illumination < 0.0 || illumination >= 1.0 || color_separation < 0.0 ||
      color_jitter < 0.0 || class_decay < 0.0) {
    throw ConfigError("dataset: invalid color parameters");
  }
  if (!(labeled_ratio > 0.0 && labeled_ratio <= 1.0)) throw ConfigError("dataset: labeled_ratio must be in (0, 1]");
}

DatasetConfig DatasetConfig::from_config(const KeyValueConfig& kv) {
  DatasetConfig c;
  c.num_images = static_cast<std::size_t>(kv.get_int("num_images", static_cast<long long>(c.num_images)));
  c.eval_images = static_cast<std::size_t>(kv.get_int("eval_images", static_cast<long long>(c.eval_images)));
  c.height = static_cast<std::size_t>(kv.get_int("height", static_cast<long long>(c.height)));
  c.width = static_cast<std::size_t>(kv.get_int("width", static_cast<long long>(c.width)));
  c.num_classes = static_cast<std::size_t>(kv.get_int("num_classes", static_cast<long long>(c.num_classes)));
  c.min_shapes = static_cast<std::size_t>(kv.get_int("min_shapes", static_cast<long long>(c.min_shapes)));
  c.max_shapes = static_cast<std::size_t>(kv.get_int("max_shapes", static_cast<long long>(c.max_shapes)));
  c.noise_sigma = kv.get_double("noise_sigma", c.noise_sigma);
  c.color_separation = kv.get_double("color_separation", c.color_separation);
  c.illumination = kv.get_double("illumination", c.illumination);
  c.color_jitter = kv.get_double("color_jitter", c.color_jitter);
  c.class_decay = kv.get_double("class_decay", c.class_decay);
  c.labeled_ratio = kv.get_double("labeled_ratio", c.labeled_ratio);
  c.seed = static_cast<std::uint64_t>(kv.get_int("data_seed", static_cast<long long>(c.seed)));
  c.validate();
  return c;
}

std::string DatasetConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "num_images = " << num_images << "\neval_images = " << eval_images << "\nheight = " << height
     << "\nwidth = " << width << "\nnum_classes = " << num_classes << "\nmin_shapes = " << min_shapes
     << "\nmax_shapes = " << max_shapes << "\nnoise_sigma = " << noise_sigma
     << "\ncolor_separation = " << color_separation << "\nillumination = " << illumination
     << "\ncolor_jitter = " << color_jitter << "\nclass_decay = " << class_decay
     << "\nlabeled_ratio = " << labeled_ratio << "\ndata_seed = " << seed << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Generation

std::vector<double> class_base_color(std::size_t cls, std::size_t num_classes, double separation) {
  std::vector<double> color(3, 0.5);
  if (cls > 0) {
    // Equal-luminance hues around the background gray.
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(cls - 1) / static_cast<double>(num_classes - 1);
    const auto d = chroma_offset(separation * std::cos(angle), separation * std::sin(angle));
    for (int ch = 0; ch < 3; ++ch) color[ch] += d[ch];
  }
  for (double& c : color) c = quantize(c);
  return color;
}

Dataset generate_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Dataset ds;
  ds.height = cfg.height;
  ds.width = cfg.width;
  ds.num_classes = cfg.num_classes;
  ds.seed = seed;
  const Rng root(seed);
  ds.images.reserve(cfg.num_images);
  for (std::size_t i = 0; i < cfg.num_images; ++i) {
    std::vector<double> pixels;
    std::vector<int> labels;
    generate_one(cfg, root.stream(i), pixels, labels);
    ds.images.push_back(Tensor::constant({3, cfg.height, cfg.width}, std::move(pixels)));
    ds.labels.push_back(std::move(labels));
    ds.manifest.push_back({image_id(i), true});
  }
  return ds;
}

Dataset generate_eval_dataset(const DatasetConfig& cfg) {
  DatasetConfig eval = cfg;
  eval.num_images = cfg.eval_images;
  return generate_dataset(eval, Rng(cfg.seed).stream(kEvalStream).next_u64());
}

std::vector<ManifestEntry> split(const Dataset& dataset, double ratio, std::uint64_t seed) {
  const std::size_t n = dataset.size();
  if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("split: ratio must be in (0, 1]");
  const auto labeled = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  if (labeled < 1) throw std::invalid_argument("split: ratio too small for " + std::to_string(n) + " images");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < labeled; ++i) std::swap(order[i], order[i + rng.below(n - i)]);
  std::vector<ManifestEntry> manifest;
  manifest.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    manifest.push_back({i < dataset.manifest.size() ? dataset.manifest[i].id : image_id(i), false});
  }
  for (std::size_t i = 0; i < labeled; ++i) manifest[order[i]].labeled = true;
  return manifest;
}

std::vector<std::size_t> Dataset::labeled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.size(); ++i)
    if (manifest[i].labeled) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::unlabeled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.size(); ++i)
    if (!manifest[i].labeled) out.push_back(i);
  return out;
}

std::string image_id(std::size_t index) {
  std::string digits = std::to_string(index);
  return "img_" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

// ---------------------------------------------------------------------------
// Files

void write_ppm(const std::filesystem::path& path, const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw DimensionError("write_ppm: expected a 3×H×W image");
  const std::size_t h = img.dim(1), w = img.dim(2), hw = h * w;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<char> bytes(3 * hw);
  auto d = img.data();
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t ch = 0; ch < 3; ++ch)
      bytes[3 * p + ch] = static_cast<char>(std::lround(std::clamp(d[ch * hw + p], 0.0, 1.0) * 255.0));
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  if (header_token(is) != "P6") throw std::runtime_error("not a binary PPM: " + path.string());
  const std::size_t w = std::stoul(header_token(is));
  const std::size_t h = std::stoul(header_token(is));
  const std::string maxval = header_token(is);
  expect_token(is, "PPM", path);
  if (maxval != "255") throw std::runtime_error("PPM must be 8-bit: " + path.string());
  is.get();
  const std::size_t hw = h * w;
  std::vector<unsigned char> bytes(3 * hw);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!is) throw std::runtime_error("truncated PPM: " + path.string());
  std::vector<double> out(3 * hw);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t ch = 0; ch < 3; ++ch) out[ch * hw + p] = static_cast<double>(bytes[3 * p + ch]) / 255.0;
  return Tensor::constant({3, h, w}, std::move(out));
}

void write_pgm(const std::filesystem::path& path, std::span<const int> labels, std::size_t height, std::size_t width) {
  if (labels.size() != height * width) throw DimensionError("write_pgm: label count does not match size");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << width << ' ' << height << "\n255\n";
  std::vector<char> bytes(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 255) throw std::out_of_range("write_pgm: label outside [0, 255]");
    bytes[i] = static_cast<char>(labels[i]);
  }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::vector<int> read_pgm(const std::filesystem::path& path, std::size_t& height, std::size_t& width) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  if (header_token(is) != "P5") throw std::runtime_error("not a binary PGM: " + path.string());
  width = std::stoul(header_token(is));
  height = std::stoul(header_token(is));
  const std::string maxval = header_token(is);
  expect_token(is, "PGM", path);
  if (maxval != "255") throw std::runtime_error("PGM must be 8-bit: " + path.string());
  is.get();
  std::vector<unsigned char> bytes(height * width);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!is) throw std::runtime_error("truncated PGM: " + path.string());
  return {bytes.begin(), bytes.end()};
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> manifest) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (const auto& e : manifest) os << e.id << '\t' << (e.labeled ? "labeled" : "unlabeled") << '\n';
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("malformed manifest line: " + line);
    const std::string flag = line.substr(tab + 1);
    if (flag != "labeled" && flag != "unlabeled") throw std::runtime_error("malformed manifest flag: " + flag);
    out.push_back({line.substr(0, tab), flag == "labeled"});
  }
  return out;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "labels");
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const std::string& id = dataset.manifest[i].id;
    write_ppm(dir / "images" / (id + ".ppm"), dataset.images[i]);
    write_pgm(dir / "labels" / (id + ".pgm"), dataset.labels[i], dataset.height, dataset.width);
  }
  write_manifest(dir / "manifest.txt", dataset.manifest);
}

Dataset load_dataset(const std::filesystem::path& dir, std::size_t num_classes) {
  Dataset ds;
  ds.num_classes = num_classes;
  ds.manifest = read_manifest(dir / "manifest.txt");
  for (const auto& e : ds.manifest) {
    Tensor img = read_ppm(dir / "images" / (e.id + ".ppm"));
    std::size_t h = 0, w = 0;
    std::vector<int> labels = read_pgm(dir / "labels" / (e.id + ".pgm"), h, w);
    if (ds.images.empty()) {
      ds.height = h;
      ds.width = w;
    }
    if (img.dim(1) != h || img.dim(2) != w || h != ds.height || w != ds.width) {
      throw DimensionError("load_dataset: inconsistent image size for " + e.id);
    }
    for (int v : labels) {
      if (v != 255 && (v < 0 || static_cast<std::size_t>(v) >= num_classes)) {
        throw std::out_of_range("load_dataset: label out of range in " + e.id);
      }
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(std::move(labels));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Metrics

ConfusionMatrix ConfusionMatrix::from_counts(std::size_t c, std::vector<std::uint64_t> counts) {
  if (counts.size() != c * c) throw DimensionError("confusion matrix must be C×C");
  ConfusionMatrix cm(c);
  cm.counts = std::move(counts);
  return cm;
}

void ConfusionMatrix::add(std::span<const int> truth, std::span<const int> pred) {
  if (truth.size() != pred.size()) throw DimensionError("ConfusionMatrix::add: size mismatch");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == 255) continue;
    if (truth[i] < 0 || pred[i] < 0 || static_cast<std::size_t>(truth[i]) >= num_classes ||
        static_cast<std::size_t>(pred[i]) >= num_classes) {
      throw std::out_of_range("ConfusionMatrix::add: class index out of range");
    }
    ++counts[static_cast<std::size_t>(truth[i]) * num_classes + static_cast<std::size_t>(pred[i])];
  }
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

MiouResult miou(const ConfusionMatrix& cm) {
  const std::size_t c = cm.num_classes;
  MiouResult r;
  r.iou.assign(c, std::numeric_limits<double>::quiet_NaN());
  r.present.assign(c, false);
  double acc = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const std::uint64_t tp = cm.at(k, k);
    const std::uint64_t denom = row + col - tp;
    if (denom == 0) continue;
    r.present[k] = true;
    r.iou[k] = static_cast<double>(tp) / static_cast<double>(denom);
    acc += r.iou[k];
    ++used;
  }
  if (used == 0) throw std::invalid_argument("miou: every class has a zero denominator");
  r.miou = acc / static_cast<double>(used);
  return r;
}

}  // namespace mvcc
