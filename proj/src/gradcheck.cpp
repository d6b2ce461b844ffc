#include "mvcc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mvcc {

GradCheckResult check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                                std::vector<Tensor> inputs, double eps, double floor) {
  for (auto& t : inputs) t.zero_grad();
  const Tensor out = fn(inputs);
  if (out.size() != 1) throw DimensionError("check_gradients: function must return a scalar");
  backward(out);
  GradCheckResult r;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor& x = inputs[i];
    if (!x.requires_grad()) continue;
    const std::vector<double> analytic(x.grad()->begin(), x.grad()->end());
    auto data = x.mutable_data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double saved = data[j];
      data[j] = saved + eps;
      const double up = fn(inputs).item();
      data[j] = saved - eps;
      const double down = fn(inputs).item();
      data[j] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double abs_err = std::abs(analytic[j] - numeric);
      const double rel_err = abs_err / std::max({std::abs(analytic[j]), std::abs(numeric), floor});
      r.max_abs_error = std::max(r.max_abs_error, abs_err);
      if (rel_err > r.max_rel_error || r.entries == 0) {
        r.max_rel_error = std::max(r.max_rel_error, rel_err);
        r.worst = "input " + std::to_string(i) + "[" + std::to_string(j) + "]";
      }
      ++r.entries;
    }
  }
  return r;
}

}  // namespace mvcc
