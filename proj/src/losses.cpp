#include "mvcc/losses.hpp"

#include <stdexcept>

namespace mvcc {

Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> labels, double smoothing) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy_rows: expected N×C logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw DimensionError("cross_entropy_rows: label count differs from row count");
  if (c < 2) throw DimensionError("cross_entropy_rows: need at least two classes");
  const double on = 1.0 - smoothing;
  const double off = smoothing / static_cast<double>(c - 1);
  std::vector<double> target(n * c, 0.0);
  std::size_t counted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y == kIgnoreLabel) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw std::out_of_range("cross_entropy_rows: label out of range");
    for (std::size_t k = 0; k < c; ++k) target[i * c + k] = static_cast<std::size_t>(y) == k ? on : off;
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("cross_entropy_rows: every pixel is ignored");
  const Tensor t = Tensor::constant({n, c}, std::move(target));
  return scale(sum(mul(t, log_softmax_rows(logits))), -1.0 / static_cast<double>(counted));
}

Tensor supervised_ce(const Tensor& logits, std::span<const int> labels, double smoothing) {
  if (logits.rank() != 3) throw DimensionError("supervised_ce: expected C×H×W logits");
  return cross_entropy_rows(pixel_rows(logits), labels, smoothing);
}

Tensor consistency_loss(const Tensor& p, const Tensor& p_prime, const Tensor& pseudo,
                        std::span<const std::uint8_t> valid) {
  if (p.shape() != p_prime.shape() || p.shape() != pseudo.shape() || p.rank() != 2) {
    throw DimensionError("consistency_loss: maps must share one N×C shape");
  }
  const std::size_t n = p.dim(0), c = p.dim(1);
  if (valid.size() != n) throw DimensionError("consistency_loss: mask size differs from row count");
  std::vector<double> m(n * c, 0.0);
  std::size_t counted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!valid[i]) continue;
    ++counted;
    for (std::size_t k = 0; k < c; ++k) m[i * c + k] = 1.0;
  }
  if (counted == 0) throw std::invalid_argument("consistency_loss: empty validity mask");
  const Tensor mask = Tensor::constant({n, c}, std::move(m));
  const Tensor d = mul(sub(p, pseudo), mask);
  const Tensor d_prime = mul(sub(p_prime, pseudo), mask);
  return scale(add(frobenius_sq(d), frobenius_sq(d_prime)), 1.0 / static_cast<double>(counted));
}

Tensor correlation_matrix(const Tensor& f) {
  if (f.rank() != 2 || f.dim(0) < 2) throw DimensionError("correlation_matrix: expected N×D with N >= 2");
  return matmul(f, transpose(f));
}

Tensor correlation_consistency(const CorrelationBatch& batch) {
  const Tensor& target_prime = batch.target_prime ? *batch.target_prime : batch.target;
  if (batch.f.shape() != batch.f_prime.shape() || batch.f.shape() != batch.target.shape() ||
      batch.f.shape() != target_prime.shape()) {
    throw DimensionError("correlation_consistency: feature and target rows must share one N×D shape");
  }
  const double n = static_cast<double>(batch.f.dim(0));
  auto normalized = [](const Tensor& rows) { return l2_normalize_rows(correlation_matrix(rows)); };
  const Tensor a = normalized(batch.f);
  const Tensor a_prime = normalized(batch.f_prime);
  const Tensor a_t = normalized(batch.target.detach());
  const Tensor a_t_prime = batch.target_prime ? normalized(target_prime.detach()) : a_t;
  return scale(add(frobenius_sq(sub(a, a_t)), frobenius_sq(sub(a_prime, a_t_prime))), 1.0 / n);
}

Tensor info_nce(const Tensor& f, std::span<const int> classes, double tau) {
  if (f.rank() != 2 || f.dim(0) < 2) throw DimensionError("info_nce: expected N×D with N >= 2");
  if (!(tau > 0.0)) throw std::invalid_argument("info_nce: temperature must be positive");
  const std::size_t n = f.dim(0);
  if (classes.size() != n) throw DimensionError("info_nce: class count differs from row count");
  std::vector<double> pos(n * n, 0.0), neg(n * n, 0.0);
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (classes[i] != classes[j]) {
        neg[i * n + j] = 1.0;
      } else if (i != j) {
        pos[i * n + j] = 1.0;
        ++pairs;
      }
    }
  if (pairs == 0) throw std::invalid_argument("info_nce: no positive pair among the sampled rows");
  const Tensor positives = Tensor::constant({n, n}, std::move(pos));
  const Tensor negatives = Tensor::constant({n, n}, std::move(neg));
  const Tensor ones_col = Tensor::filled({n, 1}, 1.0);
  const Tensor ones_row = Tensor::filled({1, n}, 1.0);

  // Pair loss: log(exp(s⁺) + Σ_neg exp(s⁻)) - s⁺, with s = f·fᵀ/τ.
  const Tensor s = scale(correlation_matrix(f), 1.0 / tau);
  const Tensor e = exp(s);
  const Tensor neg_sum = matmul(matmul(mul(e, negatives), ones_col), ones_row);
  const Tensor pair_loss = sub(log(add(e, neg_sum)), s);
  return scale(sum(mul(pair_loss, positives)), 1.0 / static_cast<double>(pairs));
}

Tensor total_loss(const Tensor& l_sup, const Tensor& l_unsup, const Tensor& l_cc, const LossWeights& w) {
  if (l_sup.size() != 1 || l_unsup.size() != 1 || l_cc.size() != 1) {
    throw DimensionError("total_loss: loss terms must be scalars");
  }
  return add(l_sup, add(scale(l_unsup, w.unsup), scale(l_cc, w.cc)));
}

}  // namespace mvcc
