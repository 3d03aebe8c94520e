#pragma once

// End-to-end experiments over generated worlds. Each returns typed results
// plus a Report holding only aggregate metrics, check outcomes and numeric
// series; raw addresses and identities stay inside the run.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "rtcleak/btswarm.hpp"
#include "rtcleak/tracker.hpp"
#include "rtcleak/verifier.hpp"
#include "rtcleak/world.hpp"

namespace rtcleak::pipeline {

using netsim::HostId;
using netsim::IpIdModel;
using tracker::XY;

inline std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Report {
  std::vector<std::pair<std::string, std::string>> metrics;
  std::vector<std::pair<std::string, bool>> checks;
  std::map<std::string, std::vector<XY>> series;

  void metric(const std::string& k, double v) { metrics.emplace_back(k, fmt(v)); }
  void metric(const std::string& k, std::size_t v) { metrics.emplace_back(k, std::to_string(v)); }
  void metric(const std::string& k, const std::string& v) { metrics.emplace_back(k, v); }
  void check(const std::string& k, bool ok) { checks.emplace_back(k, ok); }

  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.second; });
  }

  void merge(const Report& o, const std::string& prefix) {
    for (const auto& [k, v] : o.metrics) metrics.emplace_back(prefix + k, v);
    for (const auto& [k, v] : o.checks) checks.emplace_back(prefix + k, v);
    for (const auto& [k, v] : o.series) series[k] = v;
  }

  std::string render() const {
    std::string out;
    for (const auto& [k, v] : metrics) out += k + " = " + v + "\n";
    for (const auto& [k, ok] : checks) out += "check." + k + " = " + (ok ? "pass" : "FAIL") + "\n";
    return out;
  }
};

inline std::size_t count_of(double frac, std::size_t n) {
  return static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
}

inline std::string user_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "user.%06zu", i);
  return buf;
}

// ===========================================================================
// Call study: classifier accuracy, inconspicuousness, defenses, throughput.

enum class CalleeKind { Public, Natted, Dual, OfflineRecent, OfflineLong };

struct CallStudyConfig {
  world::WorldConfig world;
  std::size_t users = 250;
  double frac_public = 0.35;
  double frac_natted = 0.30;
  double frac_dual = 0.10;
  double frac_offline_recent = 0.15;  // remainder logged out for longer than the last-seen horizon
  double frac_blocks_tracker = 0.10;
  double frac_whitelist_only = 0.10;
  int rounds = 4;
  tracker::SchedulerConfig sched;
  double reorder_fraction = 0.0;  // share of calls given a pattern that starts one slot late
  bool volunteer = true;
  std::string salt = "call-study";
};

struct CallStudyResult {
  std::size_t calls = 0;  // regular calls, validation calls excluded
  std::size_t calls_with_pattern = 0;
  std::size_t online_calls = 0;             // calls whose callee had an online session
  std::size_t online_calls_extracted = 0;   // ... and every online session address was designated
  std::size_t designations = 0;
  std::size_t false_designations = 0;  // designated address not among the callee's true addresses
  std::size_t true_designations = 0;
  std::size_t missed = 0;
  std::size_t planted_reorders = 0;
  std::size_t ambiguous_slots = 0;
  std::size_t unattributed = 0;
  std::size_t assigned = 0;
  std::size_t tied = 0;
  std::size_t false_assignments = 0;
  std::size_t notifications = 0;
  std::size_t validation_calls = 0;
  std::size_t validation_ok = 0;
  double sim_seconds = 0.0;
  std::map<std::string, std::set<std::string>> mapping;  // user -> address tokens designated in round 0

  double error_rate_before() const {
    return calls ? static_cast<double>(false_designations) / static_cast<double>(calls) : 0.0;
  }
};

struct CallStudyWorld {
  std::unique_ptr<world::World> w;
  std::vector<tracker::TrackingClient> clients;
  std::vector<std::string> ids;
  std::map<std::string, CalleeKind> kinds;
  std::optional<std::string> volunteer;
  double t0 = 4 * 86400.0;
};

inline CallStudyWorld build_call_study(const CallStudyConfig& cfg) {
  CallStudyWorld cw;
  cw.w = std::make_unique<world::World>(cfg.world);
  auto& w = *cw.w;
  for (int c = 0; c < cfg.sched.clients; ++c) cw.clients.push_back(w.add_tracking_client("tracker." + std::to_string(100 + c)));
  std::set<std::string> tracker_ids;
  for (const auto& c : cw.clients) tracker_ids.insert(c.rtc_id);

  std::size_t n = cfg.users;
  std::vector<CalleeKind> kinds;
  auto push = [&](CalleeKind k, std::size_t count) { kinds.insert(kinds.end(), count, k); };
  push(CalleeKind::Public, count_of(cfg.frac_public, n));
  push(CalleeKind::Natted, count_of(cfg.frac_natted, n));
  push(CalleeKind::Dual, count_of(cfg.frac_dual, n));
  push(CalleeKind::OfflineRecent, count_of(cfg.frac_offline_recent, n));
  if (kinds.size() > n) throw std::invalid_argument("callee fractions sum above 1");
  push(CalleeKind::OfflineLong, n - kinds.size());
  std::shuffle(kinds.begin(), kinds.end(), w.rng());

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), w.rng());
  std::set<std::size_t> blocks(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count_of(cfg.frac_blocks_tracker, n)));
  std::shuffle(order.begin(), order.end(), w.rng());
  std::set<std::size_t> whitelist(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count_of(cfg.frac_whitelist_only, n)));

  auto nloc = w.geo.locations.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::string id = user_id(i);
    auto profile = w.generate_profile(id);
    if (blocks.count(i)) profile.blocked = tracker_ids;
    if (whitelist.count(i)) profile.whitelist_only = true;
    w.overlay.directory().add(profile);
    cw.ids.push_back(id);
    cw.kinds[id] = kinds[i];
    auto loc = static_cast<std::size_t>(uniform_int(w.rng(), 0, static_cast<std::int64_t>(nloc) - 1));
    auto pps = uniform(w.rng(), 1.0, 40.0);
    switch (kinds[i]) {
      case CalleeKind::Public: w.overlay.login(id, w.add_public_host(loc, IpIdModel::SequentialGlobal, pps), 0.0); break;
      case CalleeKind::Natted: w.overlay.login(id, w.add_natted_host(w.add_nat(loc), IpIdModel::SequentialGlobal, pps), 0.0); break;
      case CalleeKind::Dual:
        w.overlay.login(id, w.add_public_host(loc, IpIdModel::SequentialGlobal, pps), 0.0);
        w.overlay.login(id, w.add_natted_host(w.add_nat(loc)), 0.0);
        break;
      case CalleeKind::OfflineRecent: {
        HostId h = chance(w.rng(), 0.5) ? w.add_public_host(loc) : w.add_natted_host(w.add_nat(loc));
        w.overlay.login(id, h, 0.0, cw.t0 - uniform(w.rng(), 2.0, 40.0) * 3600.0);
        break;
      }
      case CalleeKind::OfflineLong: w.overlay.login(id, w.add_public_host(loc), 0.0, 600.0); break;
    }
  }
  if (cfg.volunteer) {
    cw.volunteer = "volunteer.01";
    w.add_user(*cw.volunteer);
    w.overlay.login(*cw.volunteer, w.add_public_host(0), 0.0);
  }
  return cw;
}

inline CallStudyResult run_call_study(const CallStudyConfig& cfg) {
  auto cw = build_call_study(cfg);
  auto& w = *cw.w;
  tracker::Anonymizer anon(cfg.salt);
  tracker::RoundOptions base_opt;
  base_opt.volunteer = cw.volunteer;
  auto plan = tracker::plan_client_calls(cw.ids, cfg.sched, base_opt);

  // Reorder plants: distinct single-address callees whose next slot is a regular call.
  std::vector<std::map<std::string, double>> delays(static_cast<std::size_t>(cfg.rounds));
  std::size_t total_calls = cw.ids.size() * static_cast<std::size_t>(cfg.rounds);
  std::size_t n_plants = count_of(cfg.reorder_fraction, total_calls);
  if (n_plants > 0) {
    std::vector<std::string> eligible;
    for (const auto& list : plan)
      for (std::size_t k = 0; k + 1 < list.size(); ++k)
        if (!list[k].validation && !list[k + 1].validation && cw.kinds[list[k].callee] != CalleeKind::OfflineLong &&
            cw.kinds[list[k].callee] != CalleeKind::Dual)
          eligible.push_back(list[k].callee);
    if (eligible.size() < n_plants) throw std::invalid_argument("not enough eligible calls for reorder plants");
    Rng prng(derive_seed(cfg.world.seed, "reorder"));
    std::shuffle(eligible.begin(), eligible.end(), prng);
    for (std::size_t i = 0; i < n_plants; ++i) {
      auto r = static_cast<std::size_t>(uniform_int(prng, 0, cfg.rounds - 1));
      delays[r][eligible[i]] = uniform(prng, cfg.sched.s + 0.1, cfg.sched.s + 1.5);
    }
  }

  CallStudyResult res;
  res.planted_reorders = n_plants;
  std::vector<std::vector<tracker::Designation<std::string>>> votes;
  std::map<std::string, std::set<std::string>> truth_tokens;
  std::set<std::uint64_t> call_ids;
  std::optional<Ipv4> volunteer_ip;
  if (cw.volunteer) volunteer_ip = w.net.public_ip(w.overlay.online_sessions(*cw.volunteer, cw.t0).front().host);
  double t = cw.t0;
  for (int r = 0; r < cfg.rounds; ++r) {
    tracker::RoundOptions opt = base_opt;
    opt.pattern_delays = delays[static_cast<std::size_t>(r)];
    auto rr = tracker::run_round(w.overlay, cw.clients, cw.ids, t, cfg.sched, opt);
    res.unattributed += rr.unattributed;
    std::vector<tracker::Designation<std::string>> round_votes;
    for (const auto& c : rr.calls) {
      call_ids.insert(c.call_id);
      if (c.validation) {
        ++res.validation_calls;
        res.validation_ok += c.designated.size() == 1 && volunteer_ip && c.designated[0].ip == *volunteer_ip;
        continue;
      }
      ++res.calls;
      res.ambiguous_slots += c.ambiguous;
      std::set<Ipv4> truth, online_truth, got;
      for (const auto& tg : c.truth) {
        truth.insert(tg.callee_ip);
        if (tg.pattern != rtcdir::PatternCase::OfflineRecent) online_truth.insert(tg.callee_ip);
        truth_tokens[c.user].insert(anon.ip_token(tg.callee_ip));
      }
      for (const auto& d : c.designated) {
        got.insert(d.ip);
        round_votes.push_back({c.user, anon.ip_token(d.ip)});
        if (r == 0) res.mapping[c.user].insert(anon.ip_token(d.ip));
      }
      res.calls_with_pattern += !truth.empty();
      res.designations += got.size();
      for (const auto& ip : got) (truth.count(ip) ? res.true_designations : res.false_designations) += 1;
      for (const auto& ip : truth) res.missed += !got.count(ip);
      if (!online_truth.empty()) {
        ++res.online_calls;
        res.online_calls_extracted +=
            std::all_of(online_truth.begin(), online_truth.end(), [&](const Ipv4& ip) { return got.count(ip) > 0; });
      }
    }
    votes.push_back(std::move(round_votes));
    t = std::max(rr.t_end, cw.t0 + (r + 1) * cfg.sched.round_period);
  }
  res.sim_seconds = t - cw.t0;
  auto assignment = tracker::disambiguate(votes);
  res.assigned = assignment.owner.size();
  res.tied = assignment.tied.size();
  for (const auto& [key, user] : assignment.owner) res.false_assignments += !truth_tokens[user].count(key);
  for (const auto& n : w.overlay.notifications()) res.notifications += call_ids.count(n.call_id);
  return res;
}

/// One tracking client calling back to back for `horizon` simulated seconds;
/// returns calls whose slot and pattern tail completed inside the horizon with
/// every callee address correctly designated.
inline std::size_t run_throughput(const CallStudyConfig& base, double horizon = 3600.0) {
  CallStudyConfig cfg = base;
  cfg.sched.clients = 1;
  cfg.volunteer = false;
  cfg.frac_public = 0.5;
  cfg.frac_natted = 0.5;
  cfg.frac_dual = cfg.frac_offline_recent = 0.0;
  auto cw = build_call_study(cfg);
  std::vector<std::string> ids;
  auto slots = static_cast<std::size_t>(horizon / cfg.sched.s);
  for (std::size_t i = 0; i < slots; ++i) ids.push_back(cw.ids[i % cw.ids.size()]);
  auto rr = tracker::run_round(cw.w->overlay, cw.clients, ids, cw.t0, cfg.sched);
  std::size_t ok = 0;
  for (const auto& c : rr.calls) {
    if (c.slot_start + cfg.sched.s + cfg.sched.classifier.pattern_window > cw.t0 + horizon) continue;
    std::set<Ipv4> truth, got;
    for (const auto& tg : c.truth) truth.insert(tg.callee_ip);
    for (const auto& d : c.designated) got.insert(d.ip);
    ok += !truth.empty() && truth == got;
  }
  return ok;
}

inline Report report_call_study(const CallStudyResult& r) {
  Report rep;
  rep.metric("calls", r.calls);
  rep.metric("calls_with_pattern", r.calls_with_pattern);
  rep.metric("designations", r.designations);
  rep.metric("true_designations", r.true_designations);
  rep.metric("false_designations", r.false_designations);
  rep.metric("missed", r.missed);
  rep.metric("error_rate_before", r.error_rate_before());
  rep.metric("planted_reorders", r.planted_reorders);
  rep.metric("assigned_after", r.assigned);
  rep.metric("tied_after", r.tied);
  rep.metric("false_assignments_after", r.false_assignments);
  rep.metric("online_calls", r.online_calls);
  rep.metric("online_calls_extracted", r.online_calls_extracted);
  rep.metric("notifications", r.notifications);
  rep.metric("validation_calls", r.validation_calls);
  rep.metric("validation_ok", r.validation_ok);
  return rep;
}

// ===========================================================================
// Mobility

struct MobilityConfig {
  world::WorldConfig world;
  std::size_t users = 2000;
  double frac_ever_online = 0.95;
  // Of users ever online; nested: a country change implies an AS change implies a city change.
  double frac_change_city = 0.40;
  double frac_change_as = 0.19;
  double frac_change_country = 0.04;
  double frac_high_availability = 0.20;  // online in more than half of the rounds
  double frac_natted = 0.5;
  int rounds = 14;
  double round_period = 86400.0;
  tracker::SchedulerConfig sched;
  std::string salt = "mobility";
};

struct MobilityTruth {
  std::size_t population = 0;
  std::size_t ever_online = 0;
  std::size_t change_city = 0;
  std::size_t change_as = 0;
  std::size_t change_country = 0;
  std::size_t high_availability = 0;
};

struct MobilityResult {
  MobilityTruth truth;
  tracker::MobilityReport report;
  std::size_t changed_city = 0;
  std::size_t changed_as = 0;
  std::size_t changed_country = 0;
  std::size_t high_availability = 0;
  std::size_t stale_samples = 0;
  std::size_t calls = 0;
};

inline MobilityResult run_mobility(const MobilityConfig& cfg) {
  if (cfg.rounds < 4) throw std::invalid_argument("mobility study needs at least 4 rounds");
  if (cfg.world.countries < 2 || cfg.world.as_per_country < 2 || cfg.world.cities_per_as < 2)
    throw std::invalid_argument("mobility geo plan needs 2+ countries, 2+ ASes per country and 2+ cities per AS");
  world::World w(cfg.world);
  std::vector<tracker::TrackingClient> clients;
  for (int c = 0; c < cfg.sched.clients; ++c) clients.push_back(w.add_tracking_client("tracker." + std::to_string(100 + c)));

  MobilityResult res;
  auto& truth = res.truth;
  truth.population = cfg.users;
  truth.ever_online = count_of(cfg.frac_ever_online, cfg.users);
  truth.change_country = count_of(cfg.frac_change_country, truth.ever_online);
  truth.change_as = count_of(cfg.frac_change_as, truth.ever_online);
  truth.change_city = count_of(cfg.frac_change_city, truth.ever_online);
  truth.high_availability = count_of(cfg.frac_high_availability, truth.ever_online);
  if (!(truth.change_country <= truth.change_as && truth.change_as <= truth.change_city && truth.change_city <= truth.ever_online))
    throw std::invalid_argument("mobility fractions must be nested");

  auto& rng = w.rng();
  std::vector<std::size_t> order(cfg.users);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> online_order(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(truth.ever_online));
  std::shuffle(online_order.begin(), online_order.end(), rng);
  std::set<std::size_t> high(online_order.begin(), online_order.begin() + static_cast<std::ptrdiff_t>(truth.high_availability));

  const auto R = static_cast<std::size_t>(cfg.rounds);
  const double round_len = std::ceil(static_cast<double>(cfg.users) / cfg.sched.clients + 2) * cfg.sched.s +
                           cfg.sched.classifier.pattern_window;
  const double t_first = 86400.0;
  std::vector<std::string> ids(cfg.users);
  for (std::size_t i = 0; i < cfg.users; ++i) {
    ids[i] = user_id(i);
    w.add_user(ids[i]);
  }
  auto nloc = static_cast<std::int64_t>(w.geo.locations.size());
  auto pick = [&](const std::vector<std::size_t>& v) { return v[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(v.size()) - 1))]; };
  for (std::size_t rank = 0; rank < truth.ever_online; ++rank) {
    std::size_t u = order[rank];
    bool mover = rank < truth.change_city;
    auto home = static_cast<std::size_t>(uniform_int(rng, 0, nloc - 1));
    std::size_t away = home;
    if (rank < truth.change_country) away = pick(w.geo.other_country(home));
    else if (rank < truth.change_as) away = pick(w.geo.same_country_other_as(home));
    else if (mover) away = pick(w.geo.same_as(home));

    std::size_t half = R / 2;
    std::size_t k = high.count(u) ? static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(half) + 1, static_cast<std::int64_t>(R)))
                                  : static_cast<std::size_t>(uniform_int(rng, mover ? 2 : 1, static_cast<std::int64_t>(half)));
    std::vector<std::size_t> rounds(R);
    std::iota(rounds.begin(), rounds.end(), 0);
    std::shuffle(rounds.begin(), rounds.end(), rng);
    rounds.resize(k);
    std::sort(rounds.begin(), rounds.end());
    std::size_t split = mover ? static_cast<std::size_t>(uniform_int(rng, 1, static_cast<std::int64_t>(k) - 1)) : k;
    bool natted = chance(rng, cfg.frac_natted);
    auto host_at = [&](std::size_t loc) {
      auto pps = uniform(rng, 1.0, 40.0);
      return natted ? w.add_natted_host(w.add_nat(loc), IpIdModel::SequentialGlobal, pps)
                    : w.add_public_host(loc, IpIdModel::SequentialGlobal, pps);
    };
    HostId h_home = host_at(home);
    HostId h_away = mover ? host_at(away) : h_home;
    for (std::size_t j = 0; j < k; ++j) {
      double tr = t_first + static_cast<double>(rounds[j]) * cfg.round_period;
      w.overlay.login(ids[u], j < split ? h_home : h_away, tr - 600.0, tr + round_len + 600.0);
    }
  }

  tracker::Anonymizer anon(cfg.salt);
  std::vector<tracker::LocationSample> samples;
  for (std::size_t r = 0; r < R; ++r) {
    double tr = t_first + static_cast<double>(r) * cfg.round_period;
    auto rr = tracker::run_round(w.overlay, clients, ids, tr, cfg.sched);
    res.calls += rr.calls.size();
    auto s = tracker::to_samples(rr, r, w.geo.table, anon);
    samples.insert(samples.end(), s.begin(), s.end());
  }
  for (const auto& s : samples) res.stale_samples += s.stale;
  res.report = tracker::mobility_report(samples, cfg.users);
  for (const auto& [u, m] : res.report.users) {
    res.changed_city += m.distinct_cities > 1;
    res.changed_as += m.distinct_as > 1;
    res.changed_country += m.distinct_countries > 1;
    res.high_availability += m.availability > 0.5;
  }
  return res;
}

inline Report report_mobility(const MobilityResult& r) {
  Report rep;
  const auto& m = r.report;
  rep.metric("population", m.population);
  rep.metric("located_users", m.located);
  rep.metric("ever_online", m.ever_online);
  rep.metric("calls", r.calls);
  rep.metric("stale_samples", r.stale_samples);
  rep.metric("changed_city", r.changed_city);
  rep.metric("changed_as", r.changed_as);
  rep.metric("changed_country", r.changed_country);
  rep.metric("frac_changed_city", m.frac_changed_city);
  rep.metric("frac_changed_as", m.frac_changed_as);
  rep.metric("frac_changed_country", m.frac_changed_country);
  rep.metric("users_available_over_half", r.high_availability);
  rep.metric("final_cumulative_online", m.cumulative_online.empty() ? 0.0 : m.cumulative_online.back().y);
  const auto& t = r.truth;
  rep.check("mobility.city_fraction_matches_plant", r.changed_city == t.change_city);
  rep.check("mobility.as_fraction_matches_plant", r.changed_as == t.change_as);
  rep.check("mobility.country_fraction_matches_plant", r.changed_country == t.change_country);
  rep.check("mobility.availability_plant", r.high_availability == t.high_availability);
  rep.check("mobility.coverage_matches_plant", m.ever_online == t.ever_online && !m.cumulative_online.empty() &&
                                                   m.cumulative_online.back().y ==
                                                       static_cast<double>(t.ever_online) / static_cast<double>(t.population));
  bool avail_ok = std::all_of(m.users.begin(), m.users.end(),
                              [](const auto& kv) { return kv.second.availability >= 0.0 && kv.second.availability <= 1.0; });
  bool cumulative_ok = std::is_sorted(m.cumulative_online.begin(), m.cumulative_online.end(),
                                      [](const XY& a, const XY& b) { return a.y < b.y; });
  rep.check("mobility.availability_in_unit_interval", avail_ok);
  rep.check("mobility.cumulative_online_nondecreasing", cumulative_ok);
  rep.series["fig3-left-simultaneous"] = m.simultaneous_online;
  rep.series["fig3-left-cumulative"] = m.cumulative_online;
  rep.series["fig3-middle"] = m.availability_cdf;
  rep.series["fig3-right-city"] = m.city_counts;
  rep.series["fig3-right-as"] = m.as_counts;
  rep.series["fig3-right-country"] = m.country_counts;
  return rep;
}

// ===========================================================================
// File-sharing linkage

struct LinkageConfig {
  world::WorldConfig world;
  // Planted verifiable groups (candidates per user in parentheses):
  std::size_t same_host_public = 148;  // (1) RTC and BT on one public host
  std::size_t same_host_nat = 100;     // (1) one host behind a NAT forwarding its BT port
  std::size_t mixed = 150;             // (2) BT on the RTC host and on a second host behind the same NAT
  std::size_t distinct_two = 100;      // (2) two other hosts behind the RTC user's NAT run BT
  std::size_t distinct_one = 17;       // (1) one other host behind the RTC user's NAT runs BT
  std::size_t unverifiable = 60;       // (1) BT behind a NAT that accepts no unsolicited inbound
  std::size_t rtc_only_users = 2700;   // tracked users with no BT at their address
  std::size_t bt_only_peers = 2000;
  std::size_t swarms = 400;
  std::size_t crawl_top_k = 200;
  std::size_t dht_nodes = 500;
  double dht_loss = 0.01;
  int crawls = 24;
  double crawl_period = 3600.0;
  double frac_random_ipid_distinct = 0.4;    // distinct BT hosts with random IP-IDs
  double frac_per_flow_ipid_distinct = 0.2;  // ... with per-flow counters; the rest global counters
  tracker::SchedulerConfig sched;
  verifier::VerifierConfig verifier;
  std::string salt = "linkage";
};

struct LinkageResult {
  std::size_t tracked_users = 0;
  std::size_t sightings = 0;
  std::size_t swarms_crawled = 0;
  std::size_t snapshots = 0;
  std::size_t complete_snapshots = 0;
  std::size_t planted_bt_endpoints = 0;
  std::size_t recovered_bt_endpoints = 0;
  std::size_t candidates = 0;
  std::size_t verifiable = 0;  // ground truth
  std::size_t verifiable_same_host = 0;
  std::size_t verified = 0;
  std::size_t verified_same_host = 0;
  std::size_t not_verified = 0;
  std::size_t unverifiable_verdicts = 0;
  std::size_t matched_users = 0;
  std::size_t users_sharing_ip = 0;  // matched users whose address carries more than one BT port
  double precision = 0.0;
  double recall = 0.0;
  std::vector<std::pair<double, double>> port_cdf;
  std::vector<XY> p90_curve;
};

struct PlantedEndpoint {
  HostId bt_host;
  HostId rtc_host;
  std::string user;  // owner of rtc_host
  bool reachable = false;
};

inline LinkageResult run_linkage(const LinkageConfig& cfg) {
  world::World w(cfg.world);
  auto& rng = w.rng();
  LinkageResult res;
  std::vector<tracker::TrackingClient> clients;
  for (int c = 0; c < cfg.sched.clients; ++c) clients.push_back(w.add_tracking_client("tracker." + std::to_string(100 + c)));
  std::vector<tracker::TrackingClient> lanes;
  for (int c = 0; c < cfg.verifier.lanes; ++c) lanes.push_back(w.add_tracking_client("verifier." + std::to_string(100 + c)));
  HostId hs_host = w.add_handshake_host();

  // Swarms, popularity descending for the first crawl_top_k.
  std::vector<btswarm::ScrapeEntry> scrape;
  for (std::size_t i = 0; i < cfg.swarms; ++i) {
    btswarm::ScrapeEntry e;
    e.infohash = btswarm::Infohash::random(rng);
    e.seeds = uniform_int(rng, 0, 500);
    e.leechers = uniform_int(rng, 0, 500);
    e.downloaded = uniform_int(rng, 0, 10000);
    scrape.push_back(e);
  }
  auto parsed = btswarm::parse_scrape(btswarm::make_scrape(scrape));
  auto top = btswarm::top_k(parsed.entries, cfg.crawl_top_k);
  res.swarms_crawled = top.size();

  btswarm::SwarmRegistry registry;
  std::vector<std::unique_ptr<btswarm::BtApp>> apps;
  const double t_day = 86400.0;
  const double horizon = 40 * 86400.0;
  std::map<Endpoint, PlantedEndpoint> planted;  // ground truth per BT endpoint

  auto add_bt = [&](HostId h, Endpoint ep, std::uint16_t private_port, HostId rtc_host, const std::string& user,
                    bool reachable) {
    std::set<btswarm::Infohash> torrents;
    auto n_torrents = static_cast<std::size_t>(uniform_int(rng, 1, 3));
    while (torrents.size() < std::min(n_torrents, top.size()))
      torrents.insert(top[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(top.size()) - 1))]);
    for (const auto& ih : torrents) registry.add({ep, ih, h, 0.0, horizon});
    apps.push_back(std::make_unique<btswarm::BtApp>(w.net, h, private_port, btswarm::Id160::random(rng),
                                                    [&registry, ep](double t) { return registry.torrents_of(ep, t); }));
    planted[ep] = {h, rtc_host, user, reachable};
  };
  auto nloc = static_cast<std::int64_t>(w.geo.locations.size());
  auto loc = [&] { return static_cast<std::size_t>(uniform_int(rng, 0, nloc - 1)); };
  auto pps = [&] { return uniform(rng, 1.0, 40.0); };
  auto bt_port = [&] { return static_cast<std::uint16_t>(uniform_int(rng, 10000, 19999)); };

  std::vector<std::string> ids;
  std::size_t next_user = 0;
  auto new_user = [&](HostId rtc_host) {
    std::string id = user_id(next_user++);
    w.add_user(id);
    w.overlay.login(id, rtc_host, 0.0);
    ids.push_back(id);
    return id;
  };
  // A distinct-host BT client next to an RTC host whose counter runs at `rtc_pps`.
  auto distinct_model = [&](double rtc_pps) -> std::pair<IpIdModel, double> {
    double u = uniform(rng, 0.0, 1.0);
    if (u < cfg.frac_random_ipid_distinct) return {IpIdModel::Random, 0.0};
    if (u < cfg.frac_random_ipid_distinct + cfg.frac_per_flow_ipid_distinct) return {IpIdModel::SequentialPerFlow, 0.0};
    // Global counters drift apart by at least 5 packets per second.
    double p;
    do p = uniform(rng, 1.0, 60.0);
    while (std::abs(p - rtc_pps) < 5.0);
    return {IpIdModel::SequentialGlobal, p};
  };

  for (std::size_t i = 0; i < cfg.same_host_public; ++i) {
    HostId h = w.add_public_host(loc(), IpIdModel::SequentialGlobal, pps());
    auto u = new_user(h);
    auto port = bt_port();
    add_bt(h, {w.net.public_ip(h), port}, port, h, u, true);
  }
  auto natted_rtc = [&](bool accepts) {
    auto nat = w.add_nat(loc(), accepts);
    double p = pps();
    HostId h = w.add_natted_host(nat, IpIdModel::SequentialGlobal, p);
    return std::make_tuple(nat, h, p);
  };
  // A NAT that refuses unsolicited inbound traffic ignores its forwards.
  auto forward_bt = [&](netsim::NatId nat, HostId bt_host, HostId rtc_host, const std::string& user, bool reachable) {
    std::uint16_t pub = static_cast<std::uint16_t>(6881 + planted.size() % 1000);
    std::uint16_t priv = bt_port();
    w.net.add_port_forward(nat, pub, bt_host, priv, netsim::Proto::TCP);
    add_bt(bt_host, {w.net.public_ip(bt_host), pub}, priv, rtc_host, user, reachable);
  };
  auto other_host = [&](netsim::NatId nat, double rtc_pps) {
    auto [model, p] = distinct_model(rtc_pps);
    return w.add_natted_host(nat, model, p);
  };
  for (std::size_t i = 0; i < cfg.same_host_nat; ++i) {
    auto [nat, h, p] = natted_rtc(true);
    auto u = new_user(h);
    forward_bt(nat, h, h, u, true);
  }
  for (std::size_t i = 0; i < cfg.mixed; ++i) {
    auto [nat, h, p] = natted_rtc(true);
    auto u = new_user(h);
    forward_bt(nat, h, h, u, true);
    forward_bt(nat, other_host(nat, p), h, u, true);
  }
  for (std::size_t i = 0; i < cfg.distinct_two; ++i) {
    auto [nat, h, p] = natted_rtc(true);
    auto u = new_user(h);
    forward_bt(nat, other_host(nat, p), h, u, true);
    forward_bt(nat, other_host(nat, p), h, u, true);
  }
  for (std::size_t i = 0; i < cfg.distinct_one; ++i) {
    auto [nat, h, p] = natted_rtc(true);
    auto u = new_user(h);
    forward_bt(nat, other_host(nat, p), h, u, true);
  }
  for (std::size_t i = 0; i < cfg.unverifiable; ++i) {
    auto [nat, h, p] = natted_rtc(false);
    auto u = new_user(h);
    HostId bt = chance(rng, 0.5) ? h : other_host(nat, p);
    forward_bt(nat, bt, h, u, false);
  }
  for (std::size_t i = 0; i < cfg.rtc_only_users; ++i) {
    HostId h = chance(rng, 0.5) ? w.add_public_host(loc()) : std::get<1>(natted_rtc(false));
    new_user(h);
  }
  // BitTorrent-only peers, some in swarms outside the crawled top list.
  for (std::size_t i = 0; i < cfg.bt_only_peers; ++i) {
    HostId h = w.add_public_host(loc(), IpIdModel::Random);
    Endpoint ep{w.net.public_ip(h), bt_port()};
    double join = uniform(rng, 0.0, 2 * t_day), leave = join + uniform(rng, 3600.0, 3 * t_day);
    const auto& ih = parsed.entries[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(parsed.entries.size()) - 1))].infohash;
    registry.add({ep, ih, h, join, leave});
  }
  res.planted_bt_endpoints = planted.size();

  // Day 1: one tracking round, plus hourly crawls over the same day.
  std::shuffle(ids.begin(), ids.end(), rng);
  res.tracked_users = ids.size();
  const double day_start = t_day;
  auto rr = tracker::run_round(w.overlay, clients, ids, day_start + 600.0, cfg.sched);
  std::vector<btswarm::Sighting> sightings;
  for (const auto& c : rr.calls)
    for (const auto& d : c.designated)
      if (!d.stale) sightings.push_back({c.user, d.ip, c.slot_start});
  res.sightings = sightings.size();

  btswarm::Dht dht(cfg.dht_nodes, derive_seed(cfg.world.seed, "dht"), {cfg.dht_loss, 2});
  std::vector<btswarm::SwarmSnapshot> snapshots;
  for (int k = 0; k < cfg.crawls; ++k) {
    double tc = day_start + k * cfg.crawl_period;
    dht.publish(registry.members_at(tc));
    auto snap = btswarm::crawl(dht, top, tc, derive_seed(cfg.world.seed, static_cast<std::uint64_t>(k)));
    snapshots.insert(snapshots.end(), snap.begin(), snap.end());
  }
  res.snapshots = snapshots.size();
  std::set<Endpoint> seen;
  for (const auto& s : snapshots) {
    res.complete_snapshots += s.complete;
    seen.insert(s.peers.begin(), s.peers.end());
  }
  for (const auto& [ep, p] : planted) res.recovered_bt_endpoints += seen.count(ep);

  auto cands = btswarm::match_ips(sightings, snapshots);
  res.candidates = cands.size();
  res.port_cdf = btswarm::port_count_cdf(cands);
  {
    std::map<std::string, std::set<std::uint16_t>> ports;
    for (const auto& c : cands) ports[c.user].insert(c.port);
    res.matched_users = ports.size();
    for (const auto& [u, s] : ports) res.users_sharing_ip += s.size() > 1;
  }

  btswarm::HandshakeClient hs(w.net, hs_host, btswarm::Id160::random(rng));
  verifier::Verifier ver(w.overlay, lanes, hs, cfg.verifier, cfg.sched.classifier);
  auto results = ver.run(cands, std::max(w.net.now(), day_start + t_day / 2));

  for (std::size_t i = 0; i < cands.size(); ++i) {
    const auto& c = cands[i];
    auto it = planted.find(Endpoint{c.ip, c.port});
    bool verifiable = it != planted.end() && it->second.reachable;
    bool same_host = it != planted.end() && it->second.bt_host == it->second.rtc_host && it->second.user == c.user;
    res.verifiable += verifiable;
    res.verifiable_same_host += verifiable && same_host;
    switch (results[i].verdict) {
      case verifier::Verdict::Verified:
        ++res.verified;
        res.verified_same_host += same_host;
        break;
      case verifier::Verdict::NotVerified: ++res.not_verified; break;
      case verifier::Verdict::Unverifiable: ++res.unverifiable_verdicts; break;
    }
  }
  res.precision = res.verified ? static_cast<double>(res.verified_same_host) / static_cast<double>(res.verified) : 0.0;
  res.recall = res.verifiable_same_host
                   ? static_cast<double>(res.verified_same_host) / static_cast<double>(res.verifiable_same_host)
                   : 0.0;
  res.p90_curve = verifier::p90_curve(results);
  return res;
}

inline Report report_linkage(const LinkageResult& r, const LinkageConfig& cfg) {
  Report rep;
  rep.metric("tracked_users", r.tracked_users);
  rep.metric("sightings", r.sightings);
  rep.metric("swarms_crawled", r.swarms_crawled);
  rep.metric("snapshots", r.snapshots);
  rep.metric("complete_snapshots", r.complete_snapshots);
  rep.metric("planted_bt_endpoints", r.planted_bt_endpoints);
  rep.metric("recovered_bt_endpoints", r.recovered_bt_endpoints);
  rep.metric("candidates", r.candidates);
  rep.metric("matched_users", r.matched_users);
  rep.metric("users_sharing_ip", r.users_sharing_ip);
  rep.metric("verifiable", r.verifiable);
  rep.metric("verifiable_same_host", r.verifiable_same_host);
  rep.metric("verified", r.verified);
  rep.metric("not_verified", r.not_verified);
  rep.metric("unverifiable", r.unverifiable_verdicts);
  rep.metric("precision", r.precision);
  rep.metric("recall", r.recall);
  rep.metric("verified_fraction", r.verifiable ? static_cast<double>(r.verified) / static_cast<double>(r.verifiable) : 0.0);
  std::size_t planted_verifiable = cfg.same_host_public + cfg.same_host_nat + 2 * cfg.mixed + 2 * cfg.distinct_two + cfg.distinct_one;
  rep.check("linkage.crawl_recovers_planted", r.recovered_bt_endpoints == r.planted_bt_endpoints);
  rep.check("linkage.verifiable_matches_plant", r.verifiable == planted_verifiable);
  rep.check("linkage.unverifiable_matches_plant", r.unverifiable_verdicts == cfg.unverifiable);
  rep.check("linkage.precision_is_one", r.verified > 0 && r.precision == 1.0);
  rep.check("linkage.recall_at_least_0.99", r.recall >= 0.99);
  bool cdf_ok = std::is_sorted(r.port_cdf.begin(), r.port_cdf.end(),
                               [](const auto& a, const auto& b) { return a.second < b.second; });
  rep.check("linkage.fig4_cdf_nondecreasing", cdf_ok);
  bool p90_sorted = std::is_sorted(r.p90_curve.begin(), r.p90_curve.end(), [](const XY& a, const XY& b) { return a.y < b.y; });
  rep.check("linkage.fig5_sorted", p90_sorted);
  std::vector<XY> fig4;
  for (const auto& [x, y] : r.port_cdf) fig4.push_back({x, y});
  rep.series["fig4"] = fig4;
  rep.series["fig5"] = r.p90_curve;
  return rep;
}

// ===========================================================================
// Defense evaluation

struct IntervalEquivalence {
  double s_a = 0.0;
  double s_b = 0.0;
  std::size_t users = 0;
  std::size_t mapped_users = 0;
  std::size_t differing_users = 0;
};

/// Same world and callees called once with gap s_a and once with gap s_b.
inline IntervalEquivalence run_interval_equivalence(const CallStudyConfig& base, std::size_t users, double s_a,
                                                    double s_b) {
  CallStudyConfig c = base;
  c.users = users;
  c.rounds = 1;
  c.reorder_fraction = 0.0;
  c.sched.s = s_a;
  auto a = run_call_study(c);
  c.sched.s = s_b;
  auto b = run_call_study(c);
  IntervalEquivalence r{s_a, s_b, users, a.mapping.size(), 0};
  std::set<std::string> keys;
  for (const auto& [u, m] : a.mapping) keys.insert(u);
  for (const auto& [u, m] : b.mapping) keys.insert(u);
  for (const auto& u : keys) {
    auto ia = a.mapping.find(u), ib = b.mapping.find(u);
    bool same = ia != a.mapping.end() && ib != b.mapping.end() && ia->second == ib->second;
    r.differing_users += !same;
  }
  return r;
}

struct DefenseEvalResult {
  CallStudyResult classifier;     // no defense, with reorder plants
  CallStudyResult baseline;       // no defense, inconspicuous, no plants
  CallStudyResult conspicuous;    // no defense, SYNs not suppressed
  CallStudyResult reveal;         // reveal-after-accept
  CallStudyResult relay;          // relay-all
  std::size_t relay_true_hits = 0;
  std::size_t throughput_per_hour = 0;
  IntervalEquivalence interval;
};

inline DefenseEvalResult run_defense_eval(const CallStudyConfig& cfg, std::size_t interval_users = 500,
                                          double interval_s_b = 20.0) {
  DefenseEvalResult r;
  CallStudyConfig c = cfg;
  c.world.signaling.defense = rtcdir::DefenseMode::None;
  c.sched.inconspicuous = true;
  r.classifier = run_call_study(c);
  c.reorder_fraction = 0.0;
  r.baseline = run_call_study(c);
  c.sched.inconspicuous = false;
  r.conspicuous = run_call_study(c);
  c.sched.inconspicuous = true;
  c.world.signaling.defense = rtcdir::DefenseMode::RevealAfterAccept;
  r.reveal = run_call_study(c);
  c.world.signaling.defense = rtcdir::DefenseMode::RelayAll;
  r.relay = run_call_study(c);
  r.relay_true_hits = r.relay.true_designations;
  c.world.signaling.defense = rtcdir::DefenseMode::None;
  r.throughput_per_hour = run_throughput(c);
  r.interval = run_interval_equivalence(c, interval_users, cfg.sched.s, interval_s_b);
  return r;
}

inline Report report_defense_eval(const DefenseEvalResult& r) {
  Report rep;
  rep.merge(report_call_study(r.classifier), "classifier.");
  rep.merge(report_call_study(r.baseline), "none.");
  rep.merge(report_call_study(r.conspicuous), "conspicuous.");
  rep.merge(report_call_study(r.reveal), "reveal_after_accept.");
  rep.merge(report_call_study(r.relay), "relay_all.");
  rep.metric("throughput_calls_per_hour", r.throughput_per_hour);
  rep.metric("interval.users", r.interval.users);
  rep.metric("interval.mapped_users", r.interval.mapped_users);
  rep.metric("interval.differing_users", r.interval.differing_users);
  rep.check("defense.interval_mappings_identical", r.interval.mapped_users > 0 && r.interval.differing_users == 0);
  rep.check("defense.classifier_error_before_at_most_0.003", r.classifier.error_rate_before() <= 0.003);
  rep.check("defense.classifier_false_after_is_zero", r.classifier.false_assignments == 0);
  rep.check("defense.inconspicuous_no_notifications", r.baseline.notifications == 0);
  rep.check("defense.inconspicuous_extracts_all_online",
            r.baseline.online_calls_extracted == r.baseline.online_calls);
  rep.check("defense.conspicuous_baseline_rings", r.conspicuous.notifications > 0);
  rep.check("defense.reveal_after_accept_extracts_nothing", r.reveal.designations == 0);
  rep.check("defense.relay_all_hides_callee", r.relay_true_hits == 0);
  rep.check("defense.throughput_at_least_340", r.throughput_per_hour >= 340);
  return rep;
}

}  // namespace rtcleak::pipeline
