#include "mvcc/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mvcc {

namespace {

constexpr const char* kCheckpointMagic = "MVCC-CHECKPOINT v1";

std::vector<std::pair<std::string, Shape>> layout(const SegNetConfig& cfg) {
  if (cfg.widths.empty() || cfg.kernel % 2 == 0 || cfg.num_classes < 2 || cfg.in_channels == 0) {
    throw std::invalid_argument("SegNetConfig: invalid architecture");
  }
  std::vector<std::pair<std::string, Shape>> out;
  std::size_t in = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const std::string prefix = "conv" + std::to_string(i + 1);
    out.emplace_back(prefix + ".weight", Shape{cfg.widths[i], in, cfg.kernel, cfg.kernel});
    out.emplace_back(prefix + ".bias", Shape{cfg.widths[i]});
    in = cfg.widths[i];
  }
  out.emplace_back("head.weight", Shape{cfg.num_classes, in, 1, 1});
  out.emplace_back("head.bias", Shape{cfg.num_classes});
  return out;
}

void write_le_double(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  os.write(bytes, 8);
}

double read_le_double(std::istream& is) {
  unsigned char bytes[8];
  is.read(reinterpret_cast<char*>(bytes), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

SegNet SegNet::init(const SegNetConfig& config, std::uint64_t seed) {
  SegNet net;
  net.config = config;
  Rng rng(seed);
  for (auto& [name, shape] : layout(config)) {
    std::vector<double> values(shape_numel(shape), 0.0);
    if (shape.size() == 4) {
      const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
      const double stddev = std::sqrt(2.0 / fan_in);
      for (double& v : values) v = stddev * rng.normal();
    }
    net.params.push_back({name, Tensor::parameter(shape, std::move(values))});
  }
  return net;
}

SegNet SegNet::zeros(const SegNetConfig& config) {
  SegNet net;
  net.config = config;
  for (auto& [name, shape] : layout(config)) net.params.push_back({name, Tensor::zeros(shape, true)});
  return net;
}

SegNet SegNet::frozen_copy() const {
  SegNet out;
  out.config = config;
  for (const auto& p : params) out.params.push_back({p.name, p.value.detach()});
  return out;
}

SegNet SegNet::trainable_copy() const {
  SegNet out;
  out.config = config;
  for (const auto& p : params) {
    out.params.push_back({p.name, Tensor::parameter(p.value.shape(), {p.value.data().begin(), p.value.data().end()})});
  }
  return out;
}

std::vector<Tensor> SegNet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.value);
  return out;
}

bool SegNet::is_feature_extractor(std::size_t param_index) const {
  return params.at(param_index).name.rfind("head.", 0) != 0;
}

Tensor forward(const SegNet& net, const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != net.config.in_channels) {
    throw DimensionError("forward: expected " + std::to_string(net.config.in_channels) + "×H×W input, got " +
                         shape_str(img.shape()));
  }
  // Pixels in [0, 1] are mapped to zero-centered inputs; zero padding then
  // reads as mid gray.
  Tensor x = add_scalar(scale(img, 4.0), -2.0);
  const std::size_t layers = net.config.widths.size();
  for (std::size_t i = 0; i < layers; ++i) {
    x = relu(conv2d_same(x, net.params[2 * i].value, net.params[2 * i + 1].value));
  }
  return conv2d_same(x, net.params[2 * layers].value, net.params[2 * layers + 1].value);
}

EmaTeacher EmaTeacher::from_student(const SegNet& student, double momentum) {
  return {student.frozen_copy(), momentum};
}

void ema_update(EmaTeacher& teacher, const SegNet& student, double m) {
  if (teacher.net.params.size() != student.params.size()) throw DimensionError("ema_update: parameter lists differ");
  for (std::size_t i = 0; i < student.params.size(); ++i) {
    Tensor& t = teacher.net.params[i].value;
    const Tensor& s = student.params[i].value;
    if (t.shape() != s.shape()) throw DimensionError("ema_update: shape mismatch for " + student.params[i].name);
    auto td = t.mutable_data();
    auto sd = s.data();
    for (std::size_t k = 0; k < td.size(); ++k) td[k] = m * td[k] + (1.0 - m) * sd[k];
  }
}

void ema_update(EmaTeacher& teacher, const SegNet& student) { ema_update(teacher, student, teacher.momentum); }

Tensor canonical_probability_rows(const Tensor& logits, const AffineTransform& t) {
  const Warped aligned = align_to_canonical(softmax_channels(logits), t);
  return normalize_rows_sum(pixel_rows(aligned.values));
}

PseudoLabel pseudo_label(const EmaTeacher& teacher, const ViewPair& pair) {
  const Tensor a = canonical_probability_rows(forward(teacher.net, pair.x), pair.t).detach();
  const Tensor b = canonical_probability_rows(forward(teacher.net, pair.x_prime), pair.t_prime).detach();
  if (pair.valid.count() == 0) throw std::invalid_argument("pseudo_label: empty validity mask");
  return {scale(add(a, b), 0.5).detach(), a, b, pair.valid};
}

void save_checkpoint(const SegNet& net, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  os << kCheckpointMagic << '\n';
  os << "arch in_channels=" << net.config.in_channels << " kernel=" << net.config.kernel
     << " classes=" << net.config.num_classes << " widths=";
  for (std::size_t i = 0; i < net.config.widths.size(); ++i) os << (i ? "," : "") << net.config.widths[i];
  os << '\n';
  for (const auto& p : net.params) {
    os << "tensor " << p.name;
    for (std::size_t d : p.value.shape()) os << ' ' << d;
    os << '\n';
  }
  os << "end\n";
  for (const auto& p : net.params)
    for (double v : p.value.data()) write_le_double(os, v);
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

SegNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) throw std::runtime_error("not a checkpoint file: " + path.string());
  if (!std::getline(is, line) || line.rfind("arch ", 0) != 0) throw std::runtime_error("checkpoint: missing arch line");
  SegNetConfig cfg;
  cfg.widths.clear();
  {
    std::istringstream ls(line.substr(5));
    std::string field;
    while (ls >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) throw std::runtime_error("checkpoint: malformed arch field " + field);
      const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
      if (key == "in_channels") {
        cfg.in_channels = std::stoul(value);
      } else if (key == "kernel") {
        cfg.kernel = std::stoul(value);
      } else if (key == "classes") {
        cfg.num_classes = std::stoul(value);
      } else if (key == "widths") {
        std::istringstream ws(value);
        std::string w;
        while (std::getline(ws, w, ',')) cfg.widths.push_back(std::stoul(w));
      } else {
        throw std::runtime_error("checkpoint: unknown arch field " + key);
      }
    }
  }
  const auto expected = layout(cfg);
  std::vector<std::pair<std::string, Shape>> declared;
  while (std::getline(is, line) && line != "end") {
    std::istringstream ls(line);
    std::string tag, name;
    ls >> tag >> name;
    if (tag != "tensor") throw std::runtime_error("checkpoint: unexpected header line: " + line);
    Shape shape;
    std::size_t d;
    while (ls >> d) shape.push_back(d);
    declared.emplace_back(name, shape);
  }
  if (line != "end") throw std::runtime_error("checkpoint: header not terminated");
  if (declared != expected) throw std::runtime_error("checkpoint: tensor list does not match architecture");
  SegNet net;
  net.config = cfg;
  for (auto& [name, shape] : declared) {
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = read_le_double(is);
    net.params.push_back({name, Tensor::parameter(shape, std::move(values))});
  }
  return net;
}

}  // namespace mvcc
