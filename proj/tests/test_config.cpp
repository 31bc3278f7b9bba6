#include <filesystem>
#include <string>

#include <doctest.h>

#include "config.hpp"

using lmbcli::Config;
using lmbcli::ConfigError;

TEST_CASE("unknown sections and keys are rejected") {
  CHECK_THROWS_AS(Config::parse("[bogus]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[run]\nsed = 1\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[run\nseed = 1\n"), ConfigError);
  CHECK_NOTHROW(Config::parse("[run]\nseed = 1\n"));
}

TEST_CASE("typed getters") {
  Config c = Config::parse("[run]\nseed = 12\nmode = full_gaussian\n[process]\nvariance = 0.25\n"
                           "[optimizer]\nfresh_noise = true\nmax_iterations = -3\n[sweep]\nvalues = 0.1, 0.2,0.4\n");
  CHECK(c.get_uint("run", "seed") == 12);
  CHECK(c.get_string("run", "mode") == "full_gaussian");
  CHECK(c.get_double("process", "variance") == 0.25);
  CHECK(c.get_bool("optimizer", "fresh_noise"));
  CHECK(c.get_double_list("sweep", "values") == std::vector<double>{0.1, 0.2, 0.4});
  CHECK(c.get_double("grid", "t1", 1.0) == 1.0);
  CHECK_THROWS_AS(c.get_uint("optimizer", "max_iterations"), ConfigError);
  CHECK_THROWS_AS(c.get_double("run", "mode"), ConfigError);
  CHECK_THROWS_AS(c.get_bool("run", "mode"), ConfigError);
  CHECK_THROWS_AS(c.get_double("grid", "t0"), ConfigError);
  CHECK_THROWS_AS(c.get_double("grid", "nonsense", 1.0), ConfigError);
}

TEST_CASE("paths resolve against the config directory") {
  Config c = Config::parse("[align]\nreference = ref.csv\ntargets = a.csv, /abs/b.csv\n", "/data/cfg");
  CHECK(c.get_path("align", "reference") == std::filesystem::path("/data/cfg/ref.csv"));
  const auto targets = c.get_path_list("align", "targets");
  REQUIRE(targets.size() == 2);
  CHECK(targets[0] == std::filesystem::path("/data/cfg/a.csv"));
  CHECK(targets[1] == std::filesystem::path("/abs/b.csv"));
}

TEST_CASE("resolved configuration records defaults and overrides and parses back") {
  Config c = Config::parse("[run]\nseed = 3\n[grid]\nsteps = 40\n");
  c.set("run", "seed", "9");
  CHECK(c.get_uint("run", "seed") == 9);
  CHECK(c.get_uint("grid", "steps", 100) == 40);
  CHECK(c.get_double("grid", "t1", 1.0) == 1.0);
  CHECK(c.get_string("run", "mode", "variance_profile") == "variance_profile");
  const std::string ini = c.resolved_ini();
  CHECK(ini == "[run]\nseed = 9\nmode = variance_profile\n\n[grid]\nsteps = 40\nt1 = 1\n");

  Config again = Config::parse(ini);
  CHECK(again.get_uint("run", "seed") == 9);
  CHECK(again.get_uint("grid", "steps") == 40);
  CHECK(again.get_double("grid", "t1") == 1.0);
  CHECK(again.get_string("run", "mode") == "variance_profile");
  CHECK_THROWS_AS(c.set("nowhere", "x", "1"), ConfigError);
}

TEST_CASE("doubles print round-trip exact") {
  for (double d : {0.1, 1.0 / 3.0, 1e-300, 12345.678, -2.5}) CHECK(std::stod(lmbcli::format_double(d)) == d);
}
