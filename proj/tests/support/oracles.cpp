#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mvcc/geometry.hpp"
#include "mvcc/losses.hpp"
#include "mvcc/model.hpp"

namespace mvcc::testing {

Matrix to_matrix(const Tensor& t) {
  const std::size_t n = t.dim(0), m = t.dim(1);
  Matrix out(n, std::vector<double>(m));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i][j] = t[i * m + j];
  return out;
}

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return requires_grad ? Tensor::parameter(std::move(shape), std::move(v))
                       : Tensor::constant(std::move(shape), std::move(v));
}

std::vector<int> random_classes(std::size_t n, std::size_t c, Rng& rng) {
  std::vector<int> out(n);
  for (int& k : out) k = static_cast<int>(rng.below(c));
  return out;
}

Matrix brute_normalized_correlation(const Matrix& f) {
  const std::size_t n = f.size();
  Matrix a(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t d = 0; d < f[i].size(); ++d) a[i][j] += f[i][d] * f[j][d];
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < n; ++j) norm += a[i][j] * a[i][j];
    norm = std::max(std::sqrt(norm), 1e-12);
    for (std::size_t j = 0; j < n; ++j) a[i][j] /= norm;
  }
  return a;
}

double brute_correlation_consistency(const Matrix& f, const Matrix& f_prime, const Matrix& target,
                                     const Matrix& target_prime) {
  const Matrix a = brute_normalized_correlation(f);
  const Matrix ap = brute_normalized_correlation(f_prime);
  const Matrix at = brute_normalized_correlation(target);
  const Matrix atp = brute_normalized_correlation(target_prime);
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i)
    for (std::size_t j = 0; j < f.size(); ++j) {
      s += (a[i][j] - at[i][j]) * (a[i][j] - at[i][j]);
      s += (ap[i][j] - atp[i][j]) * (ap[i][j] - atp[i][j]);
    }
  return s / static_cast<double>(f.size());
}

double brute_info_nce(const Matrix& f, const std::vector<int>& classes, double tau) {
  const std::size_t n = f.size();
  auto sim = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t d = 0; d < f[i].size(); ++d) s += f[i][d] * f[j][d];
    return s / tau;
  };
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double negatives = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (classes[k] != classes[i]) negatives += std::exp(sim(i, k));
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || classes[j] != classes[i]) continue;
      const double e = std::exp(sim(i, j));
      total += -std::log(e / (e + negatives));
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

Tensor onehot_rows(const std::vector<int>& classes, std::size_t num_classes) {
  std::vector<double> v(classes.size() * num_classes, 0.0);
  for (std::size_t i = 0; i < classes.size(); ++i) v[i * num_classes + static_cast<std::size_t>(classes[i])] = 1.0;
  return Tensor::constant({classes.size(), num_classes}, std::move(v));
}

int noise_sensitivity_wins(std::uint64_t seed, int trials) {
  Rng rng(seed);
  const std::size_t n = 32, d = 4;
  int wins = 0;
  for (int trial = 0; trial < trials; ++trial) {
    // Teacher logits fix the pseudo classes; both student views are noisy
    // copies, so the features carry the class structure as they do in training.
    std::vector<double> z(n * d);
    for (double& v : z) v = 3.0 * rng.normal();
    auto noisy = [&] {
      std::vector<double> v(z);
      for (double& x : v) x += 0.3 * rng.normal();
      return softmax_rows(Tensor::constant({n, d}, std::move(v)));
    };
    const Tensor f = noisy(), fp = noisy();
    std::vector<int> classes(n);
    for (std::size_t i = 0; i < n; ++i)
      classes[i] = static_cast<int>(std::max_element(z.begin() + i * d, z.begin() + (i + 1) * d) - (z.begin() + i * d));
    std::vector<int> flipped = classes;
    const std::size_t i = rng.below(n);
    flipped[i] = static_cast<int>((static_cast<std::size_t>(classes[i]) + 1 + rng.below(d - 1)) % d);
    const double nce = info_nce(f, classes, 0.1).item();
    const double nce_flip = info_nce(f, flipped, 0.1).item();
    const double cc = correlation_consistency({f, fp, onehot_rows(classes, d), std::nullopt, {}}).item();
    const double cc_flip = correlation_consistency({f, fp, onehot_rows(flipped, d), std::nullopt, {}}).item();
    if (std::abs(nce_flip - nce) / nce > std::abs(cc_flip - cc) / cc) ++wins;
  }
  return wins;
}

RoundTripError warp_unwarp_error(const Tensor& img, const AffineTransform& t) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2), hw = h * w;
  const Warped view = grid_sample_bilinear(img, make_grid(t, h, w));
  const Warped back = align_to_canonical(view.values, t);
  std::vector<double> vm(view.valid.bits.begin(), view.valid.bits.end());
  const Warped mask_back = align_to_canonical(Tensor::constant({1, h, w}, std::move(vm)), t);
  RoundTripError r;
  for (std::size_t p = 0; p < hw; ++p) {
    if (!back.valid.bits[p] || mask_back.values[p] < 1.0 - 1e-12) continue;
    ++r.counted;
    for (std::size_t k = 0; k < c; ++k) r.worst = std::max(r.worst, std::abs(back.values[k * hw + p] - img[k * hw + p]));
  }
  return r;
}

Tensor smooth_image(std::size_t h, std::size_t w, double phase) {
  std::vector<double> v(3 * h * w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double u = static_cast<double>(x) / static_cast<double>(w);
        const double t = static_cast<double>(y) / static_cast<double>(h);
        v[(c * h + y) * w + x] = 0.5 + 0.2 * std::sin(2.0 * std::numbers::pi * (0.6 * u + 0.3 * c + phase)) +
                                 0.2 * std::cos(2.0 * std::numbers::pi * (0.4 * t - 0.2 * u + 0.1 * c));
      }
  return Tensor::constant({3, h, w}, std::move(v));
}

namespace {

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

// Contracts a tensor of any shape to a scalar with fixed random weights, so
// every output entry contributes a distinct amount to the checked gradient.
Fn weighted(Rng& rng, const Shape& out_shape, std::function<Tensor(const std::vector<Tensor>&)> op) {
  const Tensor w = random_tensor(out_shape, rng, -1.0, 1.0, false);
  return [w, op](const std::vector<Tensor>& in) {
    const Tensor y = op(in);
    return sum(mul(reshape(y, w.shape()), w));
  };
}

// Values bounded away from zero, so relu has no kink inside the stencil.
Tensor away_from_zero(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
  return Tensor::parameter(std::move(shape), std::move(v));
}

AffineTransform mild_transform(Rng& rng) {
  ViewTransformConfig cfg;
  return random_view_transform(rng, cfg);
}

SegNet net_from(const SegNet& proto, const std::vector<Tensor>& params) {
  SegNet net = proto;
  for (std::size_t i = 0; i < params.size(); ++i) net.params[i].value = params[i];
  return net;
}

void add_primitive_cases(std::vector<GradCase>& cases, Rng& rng, std::size_t k) {
  const std::size_t n = 2 + rng.below(3), m = 2 + rng.below(3), p = 2 + rng.below(3);
  const std::string tag = " #" + std::to_string(k);
  auto push = [&](std::string name, Shape out, std::function<Tensor(const std::vector<Tensor>&)> op,
                  std::vector<Tensor> in) {
    cases.push_back({name + tag, weighted(rng, out, std::move(op)), std::move(in)});
  };

  push("matmul", {n, p}, [](const auto& in) { return matmul(in[0], in[1]); },
       {random_tensor({n, m}, rng), random_tensor({m, p}, rng)});
  push("transpose", {m, n}, [](const auto& in) { return transpose(in[0]); }, {random_tensor({n, m}, rng)});
  push("reshape", {m * n}, [m, n](const auto& in) { return reshape(in[0], {m * n}); },
       {random_tensor({n, m}, rng)});
  push("concat_rows", {n + p, m}, [](const auto& in) { return concat_rows(std::span(in.data(), 2)); },
       {random_tensor({n, m}, rng), random_tensor({p, m}, rng)});
  {
    std::vector<std::size_t> idx(n + 2);
    for (auto& i : idx) i = rng.below(n);  // repeats exercise accumulation
    push("gather_rows", {idx.size(), m}, [idx](const auto& in) { return gather_rows(in[0], idx); },
         {random_tensor({n, m}, rng)});
  }
  push("add", {n, m}, [](const auto& in) { return add(in[0], in[1]); },
       {random_tensor({n, m}, rng), random_tensor({n, m}, rng)});
  push("add_broadcast", {n, m}, [](const auto& in) { return add(in[0], in[1]); },
       {random_tensor({n, m}, rng), random_tensor({1}, rng)});
  push("sub", {n, m}, [](const auto& in) { return sub(in[0], in[1]); },
       {random_tensor({n, m}, rng), random_tensor({n, m}, rng)});
  push("mul", {n, m}, [](const auto& in) { return mul(in[0], in[1]); },
       {random_tensor({n, m}, rng), random_tensor({n, m}, rng)});
  push("div", {n, m}, [](const auto& in) { return div(in[0], in[1]); },
       {random_tensor({n, m}, rng), random_tensor({n, m}, rng, 0.5, 1.5)});
  push("div_broadcast", {n, m}, [](const auto& in) { return div(in[0], in[1]); },
       {random_tensor({n, m}, rng), random_tensor({1}, rng, 0.5, 1.5)});
  {
    const double f = rng.uniform(-2.0, 2.0), c = rng.uniform(-1.0, 1.0);
    push("scale", {n, m}, [f](const auto& in) { return scale(in[0], f); }, {random_tensor({n, m}, rng)});
    push("add_scalar", {n, m}, [c](const auto& in) { return add_scalar(in[0], c); }, {random_tensor({n, m}, rng)});
  }
  push("square", {n, m}, [](const auto& in) { return square(in[0]); }, {random_tensor({n, m}, rng)});
  push("log", {n, m}, [](const auto& in) { return log(in[0]); }, {random_tensor({n, m}, rng, 0.5, 2.0)});
  push("exp", {n, m}, [](const auto& in) { return exp(in[0]); }, {random_tensor({n, m}, rng)});
  push("relu", {n, m}, [](const auto& in) { return relu(in[0]); }, {away_from_zero({n, m}, rng)});
  push("sum", {1}, [](const auto& in) { return sum(in[0]); }, {random_tensor({n, m}, rng)});
  push("mean", {1}, [](const auto& in) { return mean(in[0]); }, {random_tensor({n, m}, rng)});
  push("frobenius_sq", {1}, [](const auto& in) { return frobenius_sq(in[0]); }, {random_tensor({n, m}, rng)});
  push("softmax_rows", {n, m}, [](const auto& in) { return softmax_rows(in[0]); },
       {random_tensor({n, m}, rng, -2.0, 2.0)});
  push("log_softmax_rows", {n, m}, [](const auto& in) { return log_softmax_rows(in[0]); },
       {random_tensor({n, m}, rng, -2.0, 2.0)});
  push("l2_normalize_rows", {n, m}, [](const auto& in) { return l2_normalize_rows(in[0]); },
       {random_tensor({n, m}, rng)});
  push("normalize_rows_sum", {n, m}, [](const auto& in) { return normalize_rows_sum(in[0]); },
       {random_tensor({n, m}, rng, 0.2, 1.5)});
  push("softmax_channels", {m, n, p}, [](const auto& in) { return softmax_channels(in[0]); },
       {random_tensor({m, n, p}, rng, -2.0, 2.0)});
  push("pixel_rows", {n * p, m}, [](const auto& in) { return pixel_rows(in[0]); }, {random_tensor({m, n, p}, rng)});
  {
    const std::size_t cin = 1 + rng.below(2), cout = 1 + rng.below(3), hw = 4 + rng.below(2);
    const std::size_t kk = rng.bernoulli(0.5) ? 3 : 1;
    push("conv2d_same", {cout, hw, hw}, [](const auto& in) { return conv2d_same(in[0], in[1], in[2]); },
         {random_tensor({cin, hw, hw}, rng), random_tensor({cout, cin, kk, kk}, rng), random_tensor({cout}, rng)});
  }
  {
    const std::size_t hw = 5 + rng.below(3);
    const SampleGrid grid = make_grid(mild_transform(rng), hw, hw);
    push("grid_sample_bilinear", {2, hw, hw},
         [grid](const auto& in) { return grid_sample_bilinear(in[0], grid).values; },
         {random_tensor({2, hw, hw}, rng)});
  }
  {
    const std::size_t c = 3 + rng.below(2);
    std::vector<int> labels = random_classes(n + 2, c, rng);
    labels[0] = kIgnoreLabel;
    const double eps = rng.uniform(0.0, 0.2);
    cases.push_back({"cross_entropy_rows" + tag,
                     [labels, eps](const auto& in) { return cross_entropy_rows(in[0], labels, eps); },
                     {random_tensor({n + 2, c}, rng, -2.0, 2.0)}});
  }
  {
    const Tensor pseudo = random_tensor({n + 3, m}, rng, 0.0, 1.0, false);
    std::vector<std::uint8_t> valid(n + 3, 1);
    valid[rng.below(valid.size())] = 0;
    cases.push_back({"consistency_loss" + tag,
                     [pseudo, valid](const auto& in) { return consistency_loss(in[0], in[1], pseudo, valid); },
                     {random_tensor({n + 3, m}, rng, 0.0, 1.0), random_tensor({n + 3, m}, rng, 0.0, 1.0)}});
  }
  {
    const std::size_t rows = 4 + rng.below(4), d = 2 + rng.below(3);
    const Tensor target = random_tensor({rows, d}, rng, 0.0, 1.0, false);
    const bool own_prime = rng.bernoulli(0.5);
    const Tensor target_prime = random_tensor({rows, d}, rng, 0.0, 1.0, false);
    cases.push_back({"correlation_consistency" + tag,
                     [=](const auto& in) {
                       CorrelationBatch b{in[0], in[1], target, std::nullopt, {}};
                       if (own_prime) b.target_prime = target_prime;
                       return correlation_consistency(b);
                     },
                     {random_tensor({rows, d}, rng, 0.0, 1.0), random_tensor({rows, d}, rng, 0.0, 1.0)}});
  }
  {
    const std::size_t rows = 5 + rng.below(4), d = 2 + rng.below(3);
    std::vector<int> classes = random_classes(rows, 3, rng);
    classes[1] = classes[0];
    const double tau = rng.uniform(0.3, 1.0);
    cases.push_back({"info_nce" + tag, [classes, tau](const auto& in) { return info_nce(in[0], classes, tau); },
                     {random_tensor({rows, d}, rng)}});
  }
  {
    const std::size_t c = 3, hw = 5 + rng.below(3);
    const AffineTransform t = mild_transform(rng);
    push("canonical_probability_rows", {hw * hw, c},
         [t](const auto& in) { return canonical_probability_rows(in[0], t); },
         {random_tensor({c, hw, hw}, rng, -2.0, 2.0)});
  }
}

// Segmentation net on a small image, supervised CE on random labels.
GradCase composite_network(Rng& rng) {
  SegNetConfig cfg;
  cfg.widths = {2 + rng.below(2), 2 + rng.below(2)};
  cfg.num_classes = 3;
  const SegNet proto = SegNet::init(cfg, rng.next_u64());
  const std::size_t hw = 5 + rng.below(2);
  const Tensor img = random_tensor({3, hw, hw}, rng, 0.0, 1.0, false);
  const std::vector<int> labels = random_classes(hw * hw, 3, rng);
  return {"composite: segnet + cross entropy",
          [=](const auto& in) { return supervised_ce(forward(net_from(proto, in), img), labels, 0.1); },
          proto.tensors(), 1e-3};
}

// Two warped views through a shared conv layer into the correlation and
// consistency losses.
GradCase composite_views(Rng& rng) {
  const std::size_t hw = 6, c = 3;
  const Tensor img = random_tensor({2, hw, hw}, rng, 0.0, 1.0, false);
  const AffineTransform t = mild_transform(rng), tp = mild_transform(rng);
  const Tensor x = grid_sample_bilinear(img, make_grid(t, hw, hw)).values;
  const Tensor xp = grid_sample_bilinear(img, make_grid(tp, hw, hw)).values;
  const Mask valid = mask_and(canonical_coverage(t, hw, hw), canonical_coverage(tp, hw, hw));
  const Tensor pseudo = softmax_rows(random_tensor({hw * hw, c}, rng, -2.0, 2.0, false));
  std::vector<std::size_t> idx(8);
  for (auto& i : idx) i = rng.below(hw * hw);
  return {"composite: views + correlation consistency",
          [=](const auto& in) {
            const Tensor p = canonical_probability_rows(conv2d_same(x, in[0], in[1]), t);
            const Tensor pp = canonical_probability_rows(conv2d_same(xp, in[0], in[1]), tp);
            const Tensor lu = consistency_loss(p, pp, pseudo, valid.bits);
            const Tensor lcc = correlation_consistency(
                {gather_rows(p, idx), gather_rows(pp, idx), gather_rows(pseudo, idx), std::nullopt, idx});
            return total_loss(sum(mul(p, pp)), lu, lcc, {0.5, 2.0});
          },
          {random_tensor({c, 2, 3, 3}, rng), random_tensor({c}, rng)},
          1e-3};
}

// Random chain of row-wise ops and products ending in InfoNCE.
GradCase composite_chain(Rng& rng) {
  const std::size_t n = 6, d = 3;
  std::vector<int> ops(5);
  for (int& o : ops) o = static_cast<int>(rng.below(6));
  std::vector<int> classes = random_classes(n, 2, rng);
  classes[1] = classes[0];
  return {"composite: random op chain + info_nce",
          [=](const auto& in) {
            Tensor x = in[0];
            for (int o : ops) {
              switch (o) {
                case 0: x = matmul(x, in[1]); break;
                case 1: x = softmax_rows(x); break;
                case 2: x = l2_normalize_rows(x); break;
                case 3: x = add(x, in[2]); break;
                case 4: x = scale(exp(scale(x, 0.5)), 0.5); break;
                default: x = mul(x, in[2]); break;
              }
            }
            return info_nce(x, classes, 0.5);
          },
          {random_tensor({n, d}, rng), random_tensor({d, d}, rng), random_tensor({n, d}, rng)},
          1e-3};
}

}  // namespace

std::vector<GradCase> gradient_cases(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCase> cases;
  for (std::size_t k = 0; k < 4; ++k) add_primitive_cases(cases, rng, k);
  cases.push_back(composite_network(rng));
  cases.push_back(composite_views(rng));
  cases.push_back(composite_chain(rng));
  return cases;
}

std::vector<GradCaseResult> run_gradient_cases(const std::vector<GradCase>& cases) {
  std::vector<GradCaseResult> out;
  for (const auto& c : cases) {
    GradCaseResult r{c.name, check_gradients(c.fn, c.inputs), false};
    r.passed = r.check.entries > 0 && r.check.max_rel_error < c.tolerance;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace mvcc::testing
