#include "mvcc/sampler.hpp"

#include <stdexcept>

namespace mvcc {

std::vector<int> hard_labels(std::span<const double> rows, std::size_t num_classes) {
  if (num_classes == 0 || rows.size() % num_classes != 0) throw DimensionError("hard_labels: ragged rows");
  const std::size_t n = rows.size() / num_classes;
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < num_classes; ++k)
      if (rows[i * num_classes + k] > rows[i * num_classes + best]) best = k;
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::vector<double> class_distribution(std::span<const int> hard, std::span<const std::uint8_t> eligible,
                                       std::size_t num_classes) {
  if (hard.size() != eligible.size()) throw DimensionError("class_distribution: label and mask sizes differ");
  std::vector<double> counts(num_classes, 0.0);
  double total = 0.0;
  for (std::size_t j = 0; j < hard.size(); ++j) {
    if (!eligible[j]) continue;
    if (hard[j] < 0 || static_cast<std::size_t>(hard[j]) >= num_classes) {
      throw std::out_of_range("class_distribution: class index out of range");
    }
    counts[static_cast<std::size_t>(hard[j])] += 1.0;
    total += 1.0;
  }
  if (total == 0.0) throw std::invalid_argument("class_distribution: no eligible pixels");
  for (double& c : counts) c /= total;
  return counts;
}

std::vector<double> sampling_weights(std::span<const int> hard, std::span<const double> class_probs,
                                     std::span<const std::uint8_t> eligible) {
  if (hard.size() != eligible.size()) throw DimensionError("sampling_weights: label and mask sizes differ");
  std::vector<double> w(hard.size(), 0.0);
  double total = 0.0;
  for (std::size_t j = 0; j < hard.size(); ++j) {
    if (!eligible[j]) continue;
    const double p = class_probs[static_cast<std::size_t>(hard[j])];
    if (p <= 0.0) continue;
    w[j] = 1.0 / p;
    total += w[j];
  }
  if (total == 0.0) throw std::invalid_argument("sampling_weights: no eligible pixels");
  for (double& v : w) v /= total;
  return w;
}

SampleSpec make_sample_spec(std::span<const int> hard, std::span<const std::uint8_t> eligible,
                            std::size_t num_classes, std::size_t n) {
  const auto probs = class_distribution(hard, eligible, num_classes);
  SampleSpec spec;
  spec.n = n;
  spec.weights = sampling_weights(hard, probs, eligible);
  spec.eligible.assign(eligible.begin(), eligible.end());
  return spec;
}

AliasTable::AliasTable(std::span<const double> weights) : prob_(weights.size()), alias_(weights.size()) {
  const std::size_t k = weights.size();
  if (k == 0) throw std::invalid_argument("AliasTable: empty weight vector");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("AliasTable: negative weight");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("AliasTable: weights sum to zero");
  std::vector<double> scaled(k);
  std::vector<std::size_t> small, large;
  for (std::size_t i = 0; i < k; ++i) {
    scaled[i] = weights[i] * static_cast<double>(k) / total;
    (scaled[i] < 1.0 ? small : large).push_back(i);
  }
  while (!small.empty() && !large.empty()) {
    const std::size_t s = small.back();
    small.pop_back();
    const std::size_t l = large.back();
    prob_[s] = scaled[s];
    alias_[s] = l;
    scaled[l] = (scaled[l] + scaled[s]) - 1.0;
    if (scaled[l] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
  // Leftovers are 1 up to rounding.
  for (std::size_t i : large) {
    prob_[i] = 1.0;
    alias_[i] = i;
  }
  for (std::size_t i : small) {
    prob_[i] = weights[i] > 0.0 ? 1.0 : 0.0;
    alias_[i] = i;
  }
  // Rounding can strand a zero-weight column; alias it to a live one.
  for (std::size_t i = 0; i < k; ++i) {
    if (prob_[i] == 0.0 && alias_[i] == i) {
      for (std::size_t j = 0; j < k; ++j)
        if (weights[j] > 0.0) {
          alias_[i] = j;
          break;
        }
    }
  }
}

std::size_t AliasTable::draw(Rng& rng) const {
  const std::size_t column = rng.below(prob_.size());
  return rng.uniform() < prob_[column] ? column : alias_[column];
}

std::vector<std::size_t> sample_pixels(const SampleSpec& spec, Rng& rng) {
  if (spec.weights.empty()) throw std::invalid_argument("sample_pixels: no pixels");
  const AliasTable table(spec.weights);
  std::vector<std::size_t> out(spec.n);
  for (std::size_t& idx : out) idx = table.draw(rng);
  return out;
}

}  // namespace mvcc
