#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mvcc/tensor.hpp"

namespace mvcc {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries = 0;
  std::string worst;  // "input i[j]" of the largest relative error
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences, entry by entry, for every input that requires a gradient.
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
/// Inputs are restored after each perturbation.
GradCheckResult check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                                std::vector<Tensor> inputs, double eps = 1e-6, double floor = 1e-3);

}  // namespace mvcc
