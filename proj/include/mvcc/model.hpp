#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mvcc/augment.hpp"
#include "mvcc/geometry.hpp"
#include "mvcc/rng.hpp"
#include "mvcc/tensor.hpp"

namespace mvcc {

struct SegNetConfig {
  std::size_t in_channels = 3;
  std::vector<std::size_t> widths{12, 12, 12};
  std::size_t num_classes = 4;
  std::size_t kernel = 3;

  bool operator==(const SegNetConfig&) const = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Stack of "same" K×K conv + ReLU layers followed by a 1×1 class head.
/// Output spatial size equals input size.
struct SegNet {
  SegNetConfig config;
  std::vector<NamedTensor> params;  // conv{i}.weight, conv{i}.bias, ..., head.weight, head.bias

  /// He-normal weights, zero biases.
  static SegNet init(const SegNetConfig& config, std::uint64_t seed);
  static SegNet zeros(const SegNetConfig& config);

  /// Detached copy; parameters do not require gradients.
  SegNet frozen_copy() const;
  /// Copy whose parameters are fresh leaves that require gradients.
  SegNet trainable_copy() const;

  std::vector<Tensor> tensors() const;
  /// True for every parameter outside the class head.
  bool is_feature_extractor(std::size_t param_index) const;
};

/// C×H×W logits for a C_in×H×W image.
Tensor forward(const SegNet& net, const Tensor& img);

struct EmaTeacher {
  SegNet net;
  double momentum = 0.99;

  static EmaTeacher from_student(const SegNet& student, double momentum);
};

/// θ̄ ← m·θ̄ + (1-m)·θ, in place.
void ema_update(EmaTeacher& teacher, const SegNet& student, double momentum);
void ema_update(EmaTeacher& teacher, const SegNet& student);

struct PseudoLabel {
  Tensor rows;          // H·W×C constant, averaged teacher probabilities
  Tensor view_rows;     // H·W×C, first view alone (canonical frame)
  Tensor view_rows_prime;
  Mask valid;
};

/// Teacher probabilities of both views, aligned to the canonical frame,
/// renormalized per pixel and averaged. Carries no graph edges.
PseudoLabel pseudo_label(const EmaTeacher& teacher, const ViewPair& pair);

/// Canonical-frame probability rows of a map predicted on a view warped by t:
/// channel softmax, alignment, per-pixel renormalization. Differentiable.
Tensor canonical_probability_rows(const Tensor& logits, const AffineTransform& t);

// Checkpoints: text header (architecture, then one `tensor <name> <dims...>`
// line per parameter, terminated by `end`), followed by the parameters as
// little-endian float64 in declaration order.
void save_checkpoint(const SegNet& net, const std::filesystem::path& path);
SegNet load_checkpoint(const std::filesystem::path& path);

}  // namespace mvcc
