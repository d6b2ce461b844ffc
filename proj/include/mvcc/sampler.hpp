#pragma once

// Category-normalized pixel sampling: each eligible pixel is drawn with
// probability inversely proportional to the frequency of its pseudo class, so
// every class present contributes the same expected number of samples.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mvcc/rng.hpp"
#include "mvcc/tensor.hpp"

namespace mvcc {

/// Argmax per row of an N×C table; ties go to the lowest class index.
std::vector<int> hard_labels(std::span<const double> rows, std::size_t num_classes);

std::vector<double> class_distribution(std::span<const int> hard, std::span<const std::uint8_t> eligible,
                                       std::size_t num_classes);

std::vector<double> sampling_weights(std::span<const int> hard, std::span<const double> class_probs,
                                     std::span<const std::uint8_t> eligible);

struct SampleSpec {
  std::size_t n = 0;
  std::vector<double> weights;
  std::vector<std::uint8_t> eligible;
};

SampleSpec make_sample_spec(std::span<const int> hard, std::span<const std::uint8_t> eligible,
                            std::size_t num_classes, std::size_t n);

/// Walker/Vose alias table: O(K) construction, O(1) per draw.
class AliasTable {
 public:
  explicit AliasTable(std::span<const double> weights);
  std::size_t draw(Rng& rng) const;
  std::size_t size() const { return prob_.size(); }

 private:
  std::vector<double> prob_;
  std::vector<std::size_t> alias_;
};

/// spec.n indices drawn i.i.d. with replacement according to spec.weights.
std::vector<std::size_t> sample_pixels(const SampleSpec& spec, Rng& rng);

}  // namespace mvcc
