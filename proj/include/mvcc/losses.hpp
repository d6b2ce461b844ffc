#pragma once

// Training objectives. All losses return scalar tensors on the autodiff tape;
// pseudo-label inputs are expected to be constants.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mvcc/tensor.hpp"

namespace mvcc {

inline constexpr int kIgnoreLabel = 255;

/// Mean cross-entropy of N×C logit rows against label-smoothed one-hot
/// targets (1-ε on the true class, ε/(C-1) elsewhere). Rows labelled
/// kIgnoreLabel are skipped; throws if every row is ignored.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> labels, double smoothing);

/// cross_entropy_rows over the pixels of a C×H×W logit map.
Tensor supervised_ce(const Tensor& logits, std::span<const int> labels, double smoothing);

/// Mean over valid rows of ‖p - ŷ‖² + ‖p' - ŷ‖². All inputs are N×C rows;
/// `valid` has N entries. Throws on an empty mask.
Tensor consistency_loss(const Tensor& p, const Tensor& p_prime, const Tensor& pseudo,
                        std::span<const std::uint8_t> valid);

/// F·Fᵀ.
Tensor correlation_matrix(const Tensor& f);

struct CorrelationBatch {
  Tensor f;        // N×D student rows, first view
  Tensor f_prime;  // N×D student rows, second view
  Tensor target;   // N×D constant target rows paired with f
  /// Target paired with f_prime; when absent `target` serves both views.
  std::optional<Tensor> target_prime;
  std::vector<std::size_t> indices;
};

/// (1/N)(‖Ã - Ã_t‖²_F + ‖Ã' - Ã'_t‖²_F) with Ã = rowL2(F·Fᵀ).
Tensor correlation_consistency(const CorrelationBatch& batch);

/// Supervised-contrastive InfoNCE over N rows with class-defined positives
/// (same class, different row) and negatives (different class). Mean over
/// (anchor, positive) pairs. Throws if no positive pair exists.
Tensor info_nce(const Tensor& f, std::span<const int> classes, double tau);

struct LossWeights {
  double unsup = 0.1;
  double cc = 0.1;
};

Tensor total_loss(const Tensor& l_sup, const Tensor& l_unsup, const Tensor& l_cc, const LossWeights& w = {});

}  // namespace mvcc
