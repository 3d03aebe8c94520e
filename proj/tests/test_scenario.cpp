#include <gtest/gtest.h>

#include <filesystem>

#include "rtcleak/scenario.hpp"

using namespace rtcleak;

namespace {

std::string path(const std::string& rel) { return std::string(RTCLEAK_SOURCE_DIR) + "/" + rel; }

std::vector<std::string> violations_of(const std::string& text) {
  try {
    scenario::parse_string(text);
  } catch (const scenario::ScenarioError& e) {
    return e.violations();
  }
  return {};
}

bool any_contains(const std::vector<std::string>& v, const std::string& needle) {
  return std::any_of(v.begin(), v.end(), [&](const std::string& s) { return s.find(needle) != std::string::npos; });
}

}  // namespace

TEST(Scenario, EmptyTextGivesValidDefaults) {
  auto sc = scenario::parse_string("");
  EXPECT_EQ(sc.name, "unnamed");
  EXPECT_TRUE(sc.validate().empty());
  EXPECT_DOUBLE_EQ(sc.call.sched.s, 3.0);
  EXPECT_EQ(sc.linkage.verifier.threshold, 1000u);
}

TEST(Scenario, SectionsCommentsAndTypes) {
  auto sc = scenario::parse_string(
      "name = t1  # trailing comment\n"
      "seed = 99\n"
      "[world]\n defense = relay-all\n timing_jitter = 0.1\n"
      "[classifier]\ntiming_tolerance = 0.3\n"
      "[call]\nusers = 12\ninconspicuous = false\ns = 2.5\n"
      "[verifier]\nlanes = 3\n");
  EXPECT_EQ(sc.name, "t1");
  EXPECT_EQ(sc.seed, 99u);
  EXPECT_EQ(sc.world.signaling.defense, rtcdir::DefenseMode::RelayAll);
  EXPECT_EQ(sc.call.users, 12u);
  EXPECT_FALSE(sc.call.sched.inconspicuous);
  EXPECT_DOUBLE_EQ(sc.call.sched.s, 2.5);
  EXPECT_EQ(sc.linkage.verifier.lanes, 3);
  // World and classifier settings reach every pipeline.
  EXPECT_DOUBLE_EQ(sc.call.sched.classifier.timing_tolerance, 0.3);
  EXPECT_DOUBLE_EQ(sc.linkage.sched.classifier.timing_tolerance, 0.3);
  EXPECT_EQ(sc.mobility.world.signaling.defense, rtcdir::DefenseMode::RelayAll);
}

TEST(Scenario, PipelinesGetDistinctDerivedSeeds) {
  auto sc = scenario::parse_string("seed = 5\n");
  std::set<std::uint64_t> seeds{sc.call.world.seed, sc.mobility.world.seed, sc.linkage.world.seed};
  EXPECT_EQ(seeds.size(), 3u);
  auto again = scenario::parse_string("seed = 5\n");
  EXPECT_EQ(again.call.world.seed, sc.call.world.seed);
  auto other = scenario::parse_string("seed = 6\n");
  EXPECT_NE(other.call.world.seed, sc.call.world.seed);
}

TEST(Scenario, AllErrorsAreCollected) {
  auto v = violations_of(
      "[call]\nuserz = 3\nrounds = many\nrounds = 4\nno equals sign\n[broken\n"
      "[mobility]\nfrac_change_city = 0.1\nfrac_change_as = 0.3\n"
      "[world]\ndefense = sometimes\n");
  EXPECT_TRUE(any_contains(v, "unknown key 'call.userz'"));
  EXPECT_TRUE(any_contains(v, "call.rounds"));
  EXPECT_TRUE(any_contains(v, "duplicate key 'call.rounds'"));
  EXPECT_TRUE(any_contains(v, "expected key = value"));
  EXPECT_TRUE(any_contains(v, "unterminated section header"));
  EXPECT_TRUE(any_contains(v, "nested"));
  EXPECT_TRUE(any_contains(v, "world.defense"));
  EXPECT_GE(v.size(), 7u);
}

TEST(Scenario, RangeViolations) {
  EXPECT_TRUE(any_contains(violations_of("[classifier]\ntiming_tolerance = 0.6\n"), "classifier"));
  EXPECT_TRUE(any_contains(violations_of("[linkage]\nswarms = 3\ncrawl_top_k = 5\n"), "crawl_top_k"));
  EXPECT_TRUE(any_contains(violations_of("[verifier]\nthreshold = 40000\n"), "verifier"));
  EXPECT_TRUE(any_contains(violations_of("[call]\nfrac_public = 0.9\nfrac_natted = 0.9\n"), "sum above 1"));
  EXPECT_TRUE(any_contains(violations_of("[mobility]\nrounds = 2\n"), "at least 4"));
  EXPECT_FALSE(violations_of("[call]\nusers = -3\n").empty());
}

TEST(Scenario, ShippedScenariosLoad) {
  for (const auto& e : std::filesystem::directory_iterator(path("scenarios"))) {
    if (e.path().extension() != ".scn") continue;
    EXPECT_NO_THROW(scenario::load(e.path().string())) << e.path();
  }
  auto smoke = scenario::load(path("scenarios/smoke.scn"));
  EXPECT_EQ(smoke.name, "smoke");
  EXPECT_EQ(smoke.seed, 7u);
  EXPECT_EQ(smoke.linkage.verifier.lanes, 4);
}

TEST(Scenario, InvalidFixtureIsRejected) {
  try {
    scenario::load(path("tests/data/invalid.scn"));
    FAIL() << "accepted";
  } catch (const scenario::ScenarioError& e) {
    EXPECT_GE(e.violations().size(), 3u);
  }
  EXPECT_THROW(scenario::load(path("tests/data/does_not_exist.scn")), scenario::ScenarioError);
}

TEST(Scenario, SmokeRunIsDeterministic) {
  auto sc = scenario::load(path("scenarios/smoke.scn"));
  auto run = [&] {
    pipeline::Report r;
    r.merge(pipeline::report_mobility(pipeline::run_mobility(sc.mobility)), "mobility.");
    r.merge(pipeline::report_linkage(pipeline::run_linkage(sc.linkage), sc.linkage), "linkage.");
    return r.render();
  };
  auto a = run();
  EXPECT_EQ(a, run());
  EXPECT_NE(a.find("check."), std::string::npos);
}
