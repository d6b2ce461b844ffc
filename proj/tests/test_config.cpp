#include <doctest.h>

#include "mvcc/config.hpp"

using namespace mvcc;

TEST_CASE("key = value lines with comments") {
  const auto kv = KeyValueConfig::parse("# header\nsteps = 10  # trailing\n\n  name=full \nratio = 1/8\n");
  CHECK(kv.get_int("steps", 0) == 10);
  CHECK(kv.get_string("name", "") == "full");
  CHECK(kv.get_double("ratio", 0.0) == 0.125);
  CHECK(kv.get_double("missing", 2.5) == 2.5);
}

TEST_CASE("lists") {
  const auto kv = KeyValueConfig::parse("v = a, b ,c\nx = 0, 0.15,0.3\n");
  CHECK(kv.get_list("v") == std::vector<std::string>{"a", "b", "c"});
  CHECK(kv.get_double_list("x") == std::vector<double>{0.0, 0.15, 0.3});
  CHECK(kv.get_list("none").empty());
}

TEST_CASE("malformed input is rejected") {
  CHECK_THROWS_AS(KeyValueConfig::parse("steps 10\n"), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::parse("= 3\n"), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::parse("a = 1\na = 2\n"), ConfigError);
  const auto kv = KeyValueConfig::parse("n = 1.5\nd = abc\nr = 1/0\nb = maybe\n");
  CHECK_THROWS_AS(kv.get_int("n", 0), ConfigError);
  CHECK_THROWS_AS(kv.get_double("d", 0.0), ConfigError);
  CHECK_THROWS_AS(kv.get_double("r", 0.0), ConfigError);
  CHECK_THROWS_AS(kv.get_bool("b", false), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::load("/nonexistent/file.cfg"), ConfigError);
}

TEST_CASE("unused keys are reported") {
  const auto kv = KeyValueConfig::parse("steps = 1\nstpes = 2\n");
  kv.get_int("steps", 0);
  CHECK_THROWS_WITH_AS(kv.require_all_used(), doctest::Contains("stpes"), ConfigError);
  kv.get_int("stpes", 0);
  CHECK_NOTHROW(kv.require_all_used());
}
