#include <doctest.h>

#include <map>

#include "mvcc/sampler.hpp"

using namespace mvcc;

namespace {

// 90/10 two-class map with every pixel eligible.
std::vector<int> ninety_ten(std::size_t n) {
  std::vector<int> hard(n, 0);
  for (std::size_t i = 0; i < n / 10; ++i) hard[i * 10 + 3] = 1;
  return hard;
}

}  // namespace

TEST_CASE("hard labels break ties toward the lowest class") {
  const std::vector<double> rows{0.2, 0.5, 0.3, 0.4, 0.4, 0.2, 0.1, 0.1, 0.8};
  CHECK(hard_labels(rows, 3) == std::vector<int>{1, 0, 2});
}

TEST_CASE("class distribution counts eligible pixels only") {
  const std::vector<int> hard{0, 0, 1, 2, 2, 2};
  const std::vector<std::uint8_t> eligible{1, 1, 1, 1, 0, 0};
  const auto p = class_distribution(hard, eligible, 3);
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(0.25));
  CHECK(p[2] == doctest::Approx(0.25));
  const std::vector<std::uint8_t> none(6, 0);
  CHECK_THROWS(class_distribution(hard, none, 3));
}

TEST_CASE("uniform class distribution gives uniform weights") {
  const std::vector<int> hard{0, 1, 2, 0, 1, 2};
  const std::vector<std::uint8_t> eligible(6, 1);
  const auto w = sampling_weights(hard, class_distribution(hard, eligible, 3), eligible);
  for (double v : w) CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("weights are inversely proportional to class frequency") {
  const std::vector<int> hard{0, 0, 0, 1};
  const std::vector<std::uint8_t> eligible(4, 1);
  const auto w = sampling_weights(hard, class_distribution(hard, eligible, 2), eligible);
  CHECK(w[3] / w[0] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("every present class receives equal total mass") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 50 + rng.below(200), c = 2 + rng.below(5);
    std::vector<int> hard(n);
    std::vector<std::uint8_t> eligible(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Skewed classes so some are rare or absent.
      hard[i] = static_cast<int>(std::min<std::size_t>(c - 1, rng.below(c) * rng.below(c) / (c - 1)));
      eligible[i] = rng.bernoulli(0.8) ? 1 : 0;
    }
    eligible[0] = 1;
    const auto spec = make_sample_spec(hard, eligible, c, 16);
    std::map<int, double> mass;
    std::size_t present = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!eligible[i]) {
        REQUIRE(spec.weights[i] == 0.0);
        continue;
      }
      if (mass[hard[i]] == 0.0) ++present;
      mass[hard[i]] += spec.weights[i];
    }
    for (const auto& [cls, m] : mass) CHECK(std::abs(m - 1.0 / static_cast<double>(present)) <= 1e-12);
  }
}

TEST_CASE("single eligible pixel is drawn every time") {
  const std::vector<int> hard{0, 1, 1, 0};
  const std::vector<std::uint8_t> eligible{0, 0, 1, 0};
  Rng rng(2);
  const auto idx = sample_pixels(make_sample_spec(hard, eligible, 2, 4), rng);
  CHECK(idx == std::vector<std::size_t>{2, 2, 2, 2});
}

TEST_CASE("90/10 map: sampled classes are balanced") {
  const auto hard = ninety_ten(1000);
  const std::vector<std::uint8_t> eligible(hard.size(), 1);
  Rng rng(3);
  const auto idx = sample_pixels(make_sample_spec(hard, eligible, 2, 100000), rng);
  REQUIRE(idx.size() == 100000);
  std::size_t rare = 0;
  for (auto i : idx) rare += hard[i] == 1;
  CHECK(static_cast<double>(rare) / 1e5 == doctest::Approx(0.5).epsilon(0.04));
}

TEST_CASE("sampled indices are always eligible") {
  Rng rng(4);
  std::vector<int> hard(300);
  std::vector<std::uint8_t> eligible(300);
  for (std::size_t i = 0; i < 300; ++i) {
    hard[i] = static_cast<int>(rng.below(3));
    eligible[i] = rng.bernoulli(0.3) ? 1 : 0;
  }
  eligible[7] = 1;
  for (auto i : sample_pixels(make_sample_spec(hard, eligible, 3, 5000), rng)) REQUIRE(eligible[i]);
}

TEST_CASE("same seed gives the same indices") {
  const auto hard = ninety_ten(200);
  const std::vector<std::uint8_t> eligible(hard.size(), 1);
  const auto spec = make_sample_spec(hard, eligible, 2, 64);
  Rng a(5), b(5);
  CHECK(sample_pixels(spec, a) == sample_pixels(spec, b));
}

TEST_CASE("alias table reproduces arbitrary weights") {
  const std::vector<double> w{0.1, 0.0, 0.6, 0.3};
  const AliasTable table(w);
  Rng rng(6);
  std::vector<double> counts(4, 0.0);
  for (int i = 0; i < 200000; ++i) counts[table.draw(rng)] += 1.0;
  CHECK(counts[1] == 0.0);
  for (std::size_t k = 0; k < 4; ++k) CHECK(counts[k] / 2e5 == doctest::Approx(w[k]).epsilon(0.03));
  CHECK_THROWS(AliasTable(std::vector<double>{}));
  CHECK_THROWS(AliasTable(std::vector<double>{0.0, 0.0}));
}
