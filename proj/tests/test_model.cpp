#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mvcc/gradcheck.hpp"
#include "mvcc/model.hpp"
#include "support/oracles.hpp"

using namespace mvcc;

namespace {

SegNetConfig small_config() {
  SegNetConfig cfg;
  cfg.widths = {4, 4};
  cfg.num_classes = 3;
  return cfg;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("mvcc_test_" + name);
}

}  // namespace

TEST_CASE("forward keeps the spatial size and emits C channels") {
  const SegNet net = SegNet::init({}, 1);
  CHECK(net.params.size() == 8);
  const Tensor y = forward(net, mvcc::testing::smooth_image(9, 7));
  CHECK(y.shape() == Shape{4, 9, 7});
  CHECK_THROWS_AS(forward(net, Tensor::zeros({1, 4, 4})), DimensionError);
}

TEST_CASE("all-zero weights give zero logits and uniform softmax") {
  const SegNet net = SegNet::zeros({});
  const Tensor y = forward(net, mvcc::testing::smooth_image(5, 5));
  for (double v : y.data()) CHECK(v == 0.0);
  const Tensor p = softmax_channels(y);
  for (double v : p.data()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("1×1 image with hand-set weights") {
  SegNetConfig cfg;
  cfg.widths = {1};
  cfg.num_classes = 2;
  SegNet net = SegNet::zeros(cfg);
  // conv0: 3→1 channels, only the center tap matters on a 1×1 image.
  auto w0 = net.params[0].value.mutable_data();
  w0[0 * 9 + 4] = 1.0;
  w0[1 * 9 + 4] = -2.0;
  w0[2 * 9 + 4] = 0.5;
  net.params[1].value.mutable_data()[0] = 0.1;
  auto head = net.params[2].value.mutable_data();
  head[0] = 2.0;
  head[1] = -1.0;
  net.params[3].value.mutable_data()[1] = 0.3;
  // Inputs 0.4, 0.1, 0.6 enter the net as 4x - 2: -0.4, -1.6, 0.4.
  const Tensor img = Tensor::constant({3, 1, 1}, {0.4, 0.1, 0.6});
  const double hidden = std::max(0.0, -0.4 + 3.2 + 0.2 + 0.1);
  const Tensor y = forward(net, img);
  CHECK(y[0] == doctest::Approx(2.0 * hidden).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(-hidden + 0.3).epsilon(1e-12));
}

TEST_CASE("gradient of the mean logit matches finite differences") {
  const SegNet proto = SegNet::init(small_config(), 2);
  const Tensor img = mvcc::testing::smooth_image(6, 6);
  const auto fn = [&](const std::vector<Tensor>& in) {
    SegNet net = proto;
    for (std::size_t i = 0; i < in.size(); ++i) net.params[i].value = in[i];
    return mean(forward(net, img));
  };
  CHECK(check_gradients(fn, proto.tensors()).max_rel_error < 1e-3);
}

TEST_CASE("forward is deterministic for a seed") {
  const Tensor img = mvcc::testing::smooth_image(8, 8);
  const Tensor a = forward(SegNet::init({}, 3), img), b = forward(SegNet::init({}, 3), img);
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
  const Tensor c = forward(SegNet::init({}, 4), img);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i] != c[i];
  CHECK(differs);
}

TEST_CASE("He initialization scale and zero biases") {
  SegNetConfig cfg;
  cfg.widths = {32, 32};
  const SegNet net = SegNet::init(cfg, 5);
  const auto w = net.params[2].value.data();  // 32×32×3×3, fan-in 288
  double sq = 0.0;
  for (double v : w) sq += v * v;
  CHECK(sq / static_cast<double>(w.size()) == doctest::Approx(2.0 / 288.0).epsilon(0.1));
  for (double v : net.params[1].value.data()) CHECK(v == 0.0);
}

TEST_CASE("copies and the feature-extractor split") {
  const SegNet net = SegNet::init(small_config(), 6);
  const SegNet frozen = net.frozen_copy();
  for (const auto& p : frozen.params) CHECK_FALSE(p.value.requires_grad());
  const SegNet trainable = frozen.trainable_copy();
  for (const auto& p : trainable.params) CHECK(p.value.requires_grad());
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    CHECK(net.is_feature_extractor(i) == (net.params[i].name.rfind("head.", 0) != 0));
  }
  CHECK_FALSE(net.is_feature_extractor(net.params.size() - 1));
  CHECK(net.is_feature_extractor(0));
}

TEST_CASE("EMA update arithmetic") {
  SegNet student = SegNet::zeros(small_config());
  for (auto& p : student.params)
    for (double& v : p.value.mutable_data()) v = 1.0;
  EmaTeacher teacher = EmaTeacher::from_student(SegNet::zeros(small_config()), 0.99);
  ema_update(teacher, student);
  for (const auto& p : teacher.net.params)
    for (double v : p.value.data()) CHECK(v == doctest::Approx(0.01).epsilon(1e-12));

  EmaTeacher frozen = EmaTeacher::from_student(SegNet::zeros(small_config()), 1.0);
  ema_update(frozen, student);
  for (double v : frozen.net.params[0].value.data()) CHECK(v == 0.0);
  ema_update(frozen, student, 0.0);
  for (double v : frozen.net.params[0].value.data()) CHECK(v == 1.0);
}

TEST_CASE("EMA converges geometrically to a fixed student") {
  const SegNet student = SegNet::init(small_config(), 7);
  EmaTeacher teacher = EmaTeacher::from_student(SegNet::init(small_config(), 8), 0.9);
  auto distance = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < student.params.size(); ++i)
      for (std::size_t k = 0; k < student.params[i].value.size(); ++k) {
        const double d = teacher.net.params[i].value[k] - student.params[i].value[k];
        s += d * d;
      }
    return std::sqrt(s);
  };
  const double d0 = distance();
  for (int k = 1; k <= 30; ++k) {
    ema_update(teacher, student);
    CHECK(distance() == doctest::Approx(std::pow(0.9, k) * d0).epsilon(1e-9));
  }
}

TEST_CASE("pseudo labels: identity views reproduce the teacher softmax") {
  const SegNet net = SegNet::init(small_config(), 9);
  const EmaTeacher teacher = EmaTeacher::from_student(net, 0.99);
  const Tensor img = mvcc::testing::smooth_image(8, 8);
  ViewPair pair{img, img, AffineTransform::identity(), AffineTransform::identity(), Mask(8, 8, true), std::nullopt};
  const PseudoLabel y = pseudo_label(teacher, pair);
  const Tensor expect = pixel_rows(softmax_channels(forward(net, img)));
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(y.rows[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("pseudo labels carry no graph and rows sum to one") {
  const SegNet net = SegNet::init(small_config(), 10);
  const EmaTeacher teacher = EmaTeacher::from_student(net.trainable_copy(), 0.99);
  Rng rng(11);
  const ViewPair pair = make_view_pair(mvcc::testing::smooth_image(12, 12), rng, {});
  const PseudoLabel y = pseudo_label(teacher, pair);
  CHECK_FALSE(y.rows.requires_grad());
  CHECK(y.rows.is_leaf());
  CHECK(collect_graph(y.rows).size() == 1);
  CHECK(y.valid == pair.valid);
  for (std::size_t p = 0; p < 144; ++p) {
    if (!pair.valid.bits[p]) continue;
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) s += y.rows[p * 3 + k];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("pseudo labels of flip-only views match the unflipped map") {
  // Averaging a map with its own mirror image is flip-invariant when the net
  // is: a conv stack with left-right symmetric kernels.
  SegNet net = SegNet::init(small_config(), 12);
  for (std::size_t i = 0; i < net.params.size(); i += 2) {
    auto w = net.params[i].value.mutable_data();
    const std::size_t k = net.params[i].value.dim(3);
    for (std::size_t base = 0; base < w.size(); base += k)
      for (std::size_t x = 0; x < k / 2; ++x) w[base + k - 1 - x] = w[base + x];
  }
  const EmaTeacher teacher = EmaTeacher::from_student(net, 0.99);
  const Tensor img = mvcc::testing::smooth_image(10, 10);
  const Tensor flipped = grid_sample_bilinear(img, make_grid(AffineTransform::hflip(), 10, 10)).values;
  ViewPair pair{img, flipped, AffineTransform::identity(), AffineTransform::hflip(), Mask(10, 10, true), std::nullopt};
  const PseudoLabel y = pseudo_label(teacher, pair);
  const Tensor expect = pixel_rows(softmax_channels(forward(net, img)));
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(y.rows[i] == doctest::Approx(expect[i]).epsilon(1e-9));
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  const SegNet net = SegNet::init(small_config(), 13);
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(net, path);
  const SegNet back = load_checkpoint(path);
  CHECK(back.config == net.config);
  REQUIRE(back.params.size() == net.params.size());
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    CHECK(back.params[i].name == net.params[i].name);
    for (std::size_t k = 0; k < net.params[i].value.size(); ++k) REQUIRE(back.params[i].value[k] == net.params[i].value[k]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint stores little-endian float64 after the header") {
  SegNetConfig cfg;
  cfg.widths = {1};
  cfg.num_classes = 2;
  SegNet net = SegNet::zeros(cfg);
  net.params[1].value.mutable_data()[0] = 1.0;  // conv0.bias
  const auto path = temp_path("layout.ckpt");
  save_checkpoint(net, path);
  std::ifstream is(path, std::ios::binary);
  const std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const auto body = all.find("end\n") + 4;
  const std::size_t values = 27 + 1 + 2 + 2;
  CHECK(all.size() - body == values * 8);
  // 1.0 is 0x3FF0000000000000; little-endian puts 0xF0 0x3F last.
  const std::size_t at = body + 27 * 8;
  CHECK(static_cast<unsigned char>(all[at + 6]) == 0xF0);
  CHECK(static_cast<unsigned char>(all[at + 7]) == 0x3F);
  std::filesystem::remove(path);
}

TEST_CASE("malformed checkpoints are rejected") {
  const auto path = temp_path("bad.ckpt");
  {
    std::ofstream os(path);
    os << "not a checkpoint\n";
  }
  CHECK_THROWS(load_checkpoint(path));
  std::filesystem::remove(path);
  CHECK_THROWS(load_checkpoint(temp_path("missing.ckpt")));
}
