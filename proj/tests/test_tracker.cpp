#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "rtcleak/pipeline.hpp"
#include "rtcleak/tracker.hpp"
#include "rtcleak/world.hpp"

using namespace rtcleak;
using tracker::Designation;

namespace {

tracker::LocationSample sample(const std::string& user, std::size_t round, std::optional<std::string> city,
                               bool online = true, std::string as = "as", std::string country = "cc") {
  tracker::LocationSample s;
  s.user = user;
  s.round = round;
  s.online = online && city.has_value();
  s.stale = !online && city.has_value();
  if (city) s.tokens = tracker::GeoTokens{*city, as, country};
  return s;
}

}  // namespace

// --- Scheduling --------------------------------------------------------------

TEST(Schedule, TwoClientsFourIds) {
  tracker::SchedulerConfig c;
  c.clients = 2;
  c.s = 3.0;
  auto o = tracker::schedule_offsets(4, c);
  ASSERT_EQ(o.size(), 4u);
  EXPECT_EQ(o[0], (std::pair<std::size_t, double>{0, 0.0}));
  EXPECT_EQ(o[1], (std::pair<std::size_t, double>{1, 0.0}));
  EXPECT_EQ(o[2], (std::pair<std::size_t, double>{0, 3.0}));
  EXPECT_EQ(o[3], (std::pair<std::size_t, double>{1, 3.0}));
}

TEST(Schedule, ConfigErrors) {
  tracker::SchedulerConfig c;
  c.s = 0.0;
  EXPECT_THROW(tracker::schedule_offsets(1, c), std::invalid_argument);
  c = {};
  c.clients = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.validation_every = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Schedule, VolunteerIsSplicedAfterEveryNRegularCalls) {
  tracker::SchedulerConfig c;
  c.validation_every = 3;
  tracker::RoundOptions o;
  o.volunteer = "volunteer.1";
  std::vector<std::string> ids{"a.user", "b.user", "c.user", "d.user", "e.user", "f.user", "g.user"};
  auto plan = tracker::plan_client_calls(ids, c, o);
  ASSERT_EQ(plan.size(), 1u);
  std::vector<bool> v;
  for (const auto& p : plan[0]) v.push_back(p.validation);
  EXPECT_EQ(v, (std::vector<bool>{false, false, false, true, false, false, false, true, false}));
}

// --- Majority vote -----------------------------------------------------------

TEST(Majority, ThreeVotesAgainstOneAssigns) {
  std::vector<std::vector<Designation<int>>> rounds{{{"alice.u", 7}}, {{"alice.u", 7}}, {{"alice.u", 7}},
                                                    {{"bob.user", 7}}};
  auto a = tracker::disambiguate(rounds);
  EXPECT_EQ(a.owner.at(7), "alice.u");
  EXPECT_TRUE(a.tied.empty());
}

TEST(Majority, TieStaysUnassigned) {
  std::vector<std::vector<Designation<int>>> rounds{{{"alice.u", 7}}, {{"bob.user", 7}}};
  auto a = tracker::disambiguate(rounds);
  EXPECT_TRUE(a.owner.empty());
  EXPECT_EQ(a.tied, (std::set<int>{7}));
  EXPECT_THROW(tracker::disambiguate(std::vector<std::vector<Designation<int>>>{}), std::invalid_argument);
}

TEST(MajorityProperty, InvariantUnderRoundPermutation) {
  Rng rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::vector<Designation<int>>> rounds(static_cast<std::size_t>(uniform_int(rng, 1, 6)));
    for (auto& r : rounds) {
      auto n = uniform_int(rng, 0, 12);
      for (std::int64_t i = 0; i < n; ++i)
        r.push_back({"user." + std::to_string(uniform_int(rng, 0, 4)), static_cast<int>(uniform_int(rng, 0, 5))});
    }
    auto base = tracker::disambiguate(rounds);
    for (int p = 0; p < 5; ++p) {
      std::shuffle(rounds.begin(), rounds.end(), rng);
      for (auto& r : rounds) std::shuffle(r.begin(), r.end(), rng);
      auto again = tracker::disambiguate(rounds);
      EXPECT_EQ(again.owner, base.owner);
      EXPECT_EQ(again.tied, base.tied);
    }
    // Owner has strictly the most votes, by a direct count.
    for (const auto& [key, owner] : base.owner) {
      std::map<std::string, int> votes;
      for (const auto& r : rounds)
        for (const auto& d : r)
          if (d.key == key) ++votes[d.user];
      for (const auto& [u, n] : votes)
        if (u != owner) EXPECT_GT(votes[owner], n);
    }
  }
}

// --- Geo ---------------------------------------------------------------------

TEST(Geo, LongestPrefixWins) {
  tracker::GeoTable t;
  t.add(*Prefix::parse("10.0.0.0/8"), {"Wide", "DE", "AS1"});
  t.add(*Prefix::parse("10.1.0.0/16"), {"Narrow", "DE", "AS2"});
  t.add(*Prefix::parse("10.1.2.0/24"), {"Narrowest", "FR", "AS3"});
  EXPECT_EQ(t.lookup(Ipv4::must_parse("10.9.9.9"))->city, "Wide");
  EXPECT_EQ(t.lookup(Ipv4::must_parse("10.1.9.9"))->city, "Narrow");
  EXPECT_EQ(t.lookup(Ipv4::must_parse("10.1.2.3"))->city, "Narrowest");
  EXPECT_EQ(t.lookup(Ipv4::must_parse("11.0.0.1")), nullptr);
  EXPECT_THROW(t.add(*Prefix::parse("10.1.0.0/16"), {"Again", "DE", "AS2"}), std::invalid_argument);
}

TEST(Geo, FixtureRoundTripAndErrors) {
  std::istringstream in("# comment\n10.0.0.0/8\tWide\tDE\tAS1\n10.1.0.0/16\tNarrow\tDE\tAS2\n");
  auto t = tracker::read_geo_table(in);
  EXPECT_EQ(t.size(), 2u);
  std::ostringstream out;
  tracker::write_geo_table(out, t);
  EXPECT_EQ(out.str(), "10.0.0.0/8\tWide\tDE\tAS1\n10.1.0.0/16\tNarrow\tDE\tAS2\n");
  std::istringstream bad("10.0.0.0\tWide\tDE\tAS1\n");
  EXPECT_THROW(tracker::read_geo_table(bad), std::invalid_argument);
}

// --- Anonymizer --------------------------------------------------------------

TEST(Anonymizer, TokensAreSaltedAndStable) {
  tracker::GeoTable t;
  t.add(*Prefix::parse("10.1.0.0/16"), {"Lyon", "FR", "AS10"});
  t.add(*Prefix::parse("10.2.0.0/16"), {"Lyon", "FR", "AS11"});
  auto a1 = tracker::geo_anonymize(Ipv4::must_parse("10.1.0.1"), t, "salt-A");
  auto a1b = tracker::geo_anonymize(Ipv4::must_parse("10.1.0.1"), t, "salt-A");
  auto a2 = tracker::geo_anonymize(Ipv4::must_parse("10.2.0.1"), t, "salt-A");
  auto b1 = tracker::geo_anonymize(Ipv4::must_parse("10.1.0.1"), t, "salt-B");
  EXPECT_EQ(a1, a1b);
  EXPECT_EQ(a1.city_h, a2.city_h);
  EXPECT_EQ(a1.country_h, a2.country_h);
  EXPECT_NE(a1.as_h, a2.as_h);
  std::set<std::string> sa{a1.city_h, a1.as_h, a1.country_h}, sb{b1.city_h, b1.as_h, b1.country_h};
  for (const auto& x : sa) EXPECT_FALSE(sb.count(x));
  EXPECT_EQ(a1.city_h.size(), 32u);
  auto unknown = tracker::geo_anonymize(Ipv4::must_parse("99.0.0.1"), t, "salt-A");
  EXPECT_EQ(unknown.city_h, tracker::kUnknownToken);
  EXPECT_EQ(unknown.as_h, tracker::kUnknownToken);
  EXPECT_EQ(unknown.country_h, tracker::kUnknownToken);
}

// --- Mobility analytics ------------------------------------------------------

TEST(Mobility, DistinctCitiesCountsLocations) {
  std::vector<tracker::LocationSample> s{sample("u.one1", 0, "A"), sample("u.one1", 1, "A"),
                                         sample("u.one1", 2, "B"), sample("u.one1", 3, "A")};
  auto r = tracker::mobility_report(s);
  EXPECT_EQ(r.users.at("u.one1").distinct_cities, 2u);
  EXPECT_DOUBLE_EQ(r.frac_changed_city, 1.0);
}

TEST(Mobility, AvailabilityIsOnlineOverSampledRounds) {
  std::vector<tracker::LocationSample> s;
  for (std::size_t r = 0; r < 14; ++r) s.push_back(sample("u.two2", r, r % 2 ? std::nullopt : std::optional<std::string>("A")));
  auto rep = tracker::mobility_report(s);
  EXPECT_DOUBLE_EQ(rep.users.at("u.two2").availability, 0.5);
  // A stale sample locates the user but is not online presence.
  s.push_back(sample("u.three", 0, "C", false));
  rep = tracker::mobility_report(s);
  EXPECT_DOUBLE_EQ(rep.users.at("u.three").availability, 0.0);
  EXPECT_EQ(rep.users.at("u.three").distinct_cities, 1u);
  EXPECT_EQ(rep.ever_online, 1u);
}

TEST(Mobility, EmpiricalCdfOfTies) {
  auto c = tracker::empirical_cdf({0.5, 0.25, 0.5, 1.0});
  ASSERT_EQ(c.size(), 3u);
  EXPECT_DOUBLE_EQ(c[0].y, 0.25);
  EXPECT_DOUBLE_EQ(c[1].x, 0.5);
  EXPECT_DOUBLE_EQ(c[1].y, 0.75);
  EXPECT_DOUBLE_EQ(c[2].y, 1.0);
}

TEST(MobilityProperty, CurvesAreBoundedAndMonotone) {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<tracker::LocationSample> s;
    auto users = uniform_int(rng, 1, 30), rounds = uniform_int(rng, 1, 10);
    for (std::int64_t u = 0; u < users; ++u)
      for (std::int64_t r = 0; r < rounds; ++r) {
        auto kind = uniform_int(rng, 0, 2);
        std::optional<std::string> city;
        if (kind > 0) city = "c" + std::to_string(uniform_int(rng, 0, 3));
        s.push_back(sample("user." + std::to_string(u), static_cast<std::size_t>(r), city, kind == 1));
      }
    auto rep = tracker::mobility_report(s);
    for (const auto& [u, m] : rep.users) {
      EXPECT_GE(m.availability, 0.0);
      EXPECT_LE(m.availability, 1.0);
      EXPECT_LE(m.distinct_countries, m.distinct_cities);
    }
    for (std::size_t i = 1; i < rep.cumulative_online.size(); ++i)
      EXPECT_GE(rep.cumulative_online[i].y, rep.cumulative_online[i - 1].y);
    for (std::size_t i = 1; i < rep.availability_cdf.size(); ++i) {
      EXPECT_GT(rep.availability_cdf[i].x, rep.availability_cdf[i - 1].x);
      EXPECT_GT(rep.availability_cdf[i].y, rep.availability_cdf[i - 1].y);
    }
    if (!rep.availability_cdf.empty()) EXPECT_DOUBLE_EQ(rep.availability_cdf.back().y, 1.0);
    for (std::size_t i = 1; i < rep.city_counts.size(); ++i)
      EXPECT_LE(rep.city_counts[i].y, rep.city_counts[i - 1].y);
  }
}

// Planted movers, availability and coverage come back exactly at small scale.
TEST(Mobility, PlantedFractionsAreRecovered) {
  pipeline::MobilityConfig c;
  c.world.seed = 5;
  c.users = 200;
  c.sched.clients = 2;
  auto r = pipeline::run_mobility(c);
  EXPECT_EQ(r.changed_city, r.truth.change_city);
  EXPECT_EQ(r.changed_as, r.truth.change_as);
  EXPECT_EQ(r.changed_country, r.truth.change_country);
  EXPECT_EQ(r.high_availability, r.truth.high_availability);
  EXPECT_EQ(r.report.ever_online, r.truth.ever_online);
  EXPECT_DOUBLE_EQ(r.report.cumulative_online.back().y, 0.95);
}

// --- Rounds against the overlay ----------------------------------------------

TEST(Round, ZeroReorderMappingEqualsTruth) {
  world::WorldConfig wc;
  wc.seed = 8;
  wc.signaling.timing_jitter = 0.2;
  world::World w(wc);
  tracker::SchedulerConfig sc;
  sc.clients = 2;
  std::vector<tracker::TrackingClient> clients{w.add_tracking_client("tracker.100"), w.add_tracking_client("tracker.101")};
  std::vector<std::string> ids;
  std::map<Ipv4, std::string> truth;
  Rng rng(8);
  for (int i = 0; i < 60; ++i) {
    std::string id = pipeline::user_id(static_cast<std::size_t>(i));
    w.add_user(id);
    ids.push_back(id);
    if (i % 5 == 4) continue;  // never online
    auto h = chance(rng, 0.5) ? w.add_public_host(static_cast<std::size_t>(i % 9))
                              : w.add_natted_host(w.add_nat(static_cast<std::size_t>(i % 9)));
    w.overlay.login(id, h, 0.0);
    truth[w.net.public_ip(h)] = id;
  }
  std::vector<std::vector<Designation<Ipv4>>> rounds;
  for (int r = 0; r < 3; ++r) {
    auto rr = tracker::run_round(w.overlay, clients, ids, 100.0 + 1000.0 * r, sc);
    EXPECT_EQ(rr.unattributed, 0u);
    std::vector<Designation<Ipv4>> d;
    for (const auto& c : rr.calls) {
      EXPECT_FALSE(c.ambiguous);
      for (const auto& e : c.designated) d.push_back({c.user, e.ip});
    }
    rounds.push_back(std::move(d));
  }
  auto a = tracker::disambiguate(rounds);
  EXPECT_EQ(a.owner, truth);
  EXPECT_TRUE(w.overlay.notifications().empty());
}

TEST(Round, SamplesCarryNoAddresses) {
  world::WorldConfig wc;
  wc.seed = 3;
  world::World w(wc);
  tracker::SchedulerConfig sc;
  std::vector<tracker::TrackingClient> clients{w.add_tracking_client("tracker.100")};
  w.add_user("user.online");
  w.add_user("user.gone00");
  w.overlay.login("user.online", w.add_public_host(0), 0.0);
  tracker::RoundOptions opt;
  opt.volunteer = "user.online";
  sc.validation_every = 1;
  auto rr = tracker::run_round(w.overlay, clients, {"user.online", "user.gone00"}, 10.0, sc, opt);
  EXPECT_EQ(rr.calls.size(), 4u);
  tracker::Anonymizer anon("s");
  auto s = tracker::to_samples(rr, 0, w.geo.table, anon);
  ASSERT_EQ(s.size(), 2u);
  for (const auto& x : s) EXPECT_FALSE(x.ip.has_value());
  EXPECT_TRUE(s[0].online);
  EXPECT_TRUE(s[0].tokens.has_value());
  EXPECT_FALSE(s[1].online);
  EXPECT_FALSE(s[1].tokens.has_value());
  std::vector<tracker::TrackingClient> two{clients[0], clients[0]};
  EXPECT_THROW(tracker::run_round(w.overlay, two, {"user.online"}, 500.0, sc), std::invalid_argument);
}
