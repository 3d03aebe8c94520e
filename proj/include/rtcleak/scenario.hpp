#pragma once

// Scenario files: `key = value` lines grouped under `[section]` headers,
// `#` starts a comment. Top-level keys precede the first section. Loading
// collects every violation before failing.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rtcleak/pipeline.hpp"

namespace rtcleak::scenario {

class ScenarioError : public std::runtime_error {
 public:
  explicit ScenarioError(std::vector<std::string> violations)
      : std::runtime_error(join(violations)), violations_(std::move(violations)) {}
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out = "invalid scenario:";
    for (const auto& s : v) out += "\n  " + s;
    return out;
  }
  std::vector<std::string> violations_;
};

struct Scenario {
  std::string name = "unnamed";
  std::uint64_t seed = 1;
  world::WorldConfig world;
  sniffer::ClassifierConfig classifier;
  pipeline::CallStudyConfig call;
  std::size_t interval_users = 500;
  double interval_s = 20.0;
  pipeline::MobilityConfig mobility;
  pipeline::LinkageConfig linkage;

  /// Copies seed, world and classifier settings into every pipeline config.
  void propagate() {
    world.seed = seed;
    call.world = world;
    call.world.seed = derive_seed(seed, "call");
    mobility.world = world;
    mobility.world.seed = derive_seed(seed, "mobility");
    linkage.world = world;
    linkage.world.seed = derive_seed(seed, "linkage");
    call.sched.classifier = classifier;
    mobility.sched.classifier = classifier;
    linkage.sched.classifier = classifier;
  }

  /// Range checks that span several keys.
  std::vector<std::string> validate() const {
    std::vector<std::string> out;
    auto guard = [&](const std::string& what, auto&& fn) {
      try {
        fn();
      } catch (const std::exception& e) {
        out.push_back(what + ": " + e.what());
      }
    };
    guard("classifier", [&] { classifier.validate(); });
    guard("call", [&] { call.sched.validate(); });
    guard("mobility", [&] { mobility.sched.validate(); });
    guard("linkage", [&] { linkage.sched.validate(); });
    guard("verifier", [&] { linkage.verifier.validate(); });
    guard("world", [&] { world::make_geo_plan(world.countries, world.as_per_country, world.cities_per_as); });
    double call_frac = call.frac_public + call.frac_natted + call.frac_dual + call.frac_offline_recent;
    if (call_frac > 1.0 + 1e-9) out.push_back("call: callee fractions sum above 1");
    if (call.users == 0) out.push_back("call: users must be positive");
    if (call.rounds < 1) out.push_back("call: rounds must be at least 1");
    const auto& m = mobility;
    if (!(m.frac_change_country <= m.frac_change_as && m.frac_change_as <= m.frac_change_city &&
          m.frac_change_city <= 1.0))
      out.push_back("mobility: change fractions must be nested (country <= as <= city <= 1)");
    if (m.rounds < 4) out.push_back("mobility: rounds must be at least 4");
    if (m.users == 0) out.push_back("mobility: users must be positive");
    if (world.countries < 2 || world.as_per_country < 2 || world.cities_per_as < 2)
      out.push_back("world: mobility needs countries, as_per_country and cities_per_as of at least 2");
    if (linkage.crawl_top_k > linkage.swarms) out.push_back("linkage: crawl_top_k exceeds swarms");
    if (linkage.swarms == 0) out.push_back("linkage: swarms must be positive");
    if (linkage.frac_random_ipid_distinct + linkage.frac_per_flow_ipid_distinct > 1.0 + 1e-9)
      out.push_back("linkage: distinct-host IP-ID fractions sum above 1");
    if (interval_s <= 0.0) out.push_back("call: interval_s must be positive");
    return out;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
bool parse_number(const std::string& v, T& out) {
  if constexpr (std::is_same_v<T, double>) {
    // from_chars for double is missing in older libstdc++.
    std::istringstream is(v);
    is.imbue(std::locale::classic());
    double d;
    if (!(is >> d) || !is.eof()) return false;
    out = d;
    return true;
  } else {
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    return ec == std::errc{} && p == v.data() + v.size();
  }
}

using Setter = std::function<std::string(const std::string&)>;  // returns an error or ""

template <class T>
Setter num(T& field) {
  return [&field](const std::string& v) -> std::string {
    T parsed{};
    if (!parse_number(v, parsed)) return "expected a number, got '" + v + "'";
    field = parsed;
    return {};
  };
}

inline Setter boolean(bool& field) {
  return [&field](const std::string& v) -> std::string {
    if (v == "true" || v == "1" || v == "yes") field = true;
    else if (v == "false" || v == "0" || v == "no") field = false;
    else return "expected a boolean, got '" + v + "'";
    return {};
  };
}

inline Setter text(std::string& field) {
  return [&field](const std::string& v) -> std::string {
    field = v;
    return {};
  };
}

inline Setter defense(rtcdir::DefenseMode& field) {
  return [&field](const std::string& v) -> std::string {
    auto d = rtcdir::parse_defense(v);
    if (!d) return "unknown defense mode '" + v + "'";
    field = *d;
    return {};
  };
}

inline void scheduler_keys(std::map<std::string, Setter>& t, const std::string& sec, tracker::SchedulerConfig& s) {
  t[sec + ".s"] = num(s.s);
  t[sec + ".clients"] = num(s.clients);
  t[sec + ".round_period"] = num(s.round_period);
  t[sec + ".validation_every"] = num(s.validation_every);
  t[sec + ".inconspicuous"] = boolean(s.inconspicuous);
}

inline std::map<std::string, Setter> bindings(Scenario& sc) {
  std::map<std::string, Setter> t;
  t["name"] = text(sc.name);
  t["seed"] = num(sc.seed);

  auto& w = sc.world;
  t["world.supernodes"] = num(w.supernodes);
  t["world.relays"] = num(w.relays);
  t["world.countries"] = num(w.countries);
  t["world.as_per_country"] = num(w.as_per_country);
  t["world.cities_per_as"] = num(w.cities_per_as);
  auto& g = w.signaling;
  t["world.defense"] = defense(g.defense);
  t["world.timing_jitter"] = num(g.timing_jitter);
  t["world.start_delay_min"] = num(g.start_delay_min);
  t["world.start_delay_max"] = num(g.start_delay_max);
  t["world.noise_min_peers"] = num(g.noise_min_peers);
  t["world.noise_max_peers"] = num(g.noise_max_peers);
  t["world.noise_min_packets"] = num(g.noise_min_packets);
  t["world.noise_max_packets"] = num(g.noise_max_packets);
  t["world.noise_span"] = num(g.noise_span);
  t["world.noise_marker_probability"] = num(g.noise_marker_probability);

  auto& k = sc.classifier;
  t["classifier.timing_tolerance"] = num(k.timing_tolerance);
  t["classifier.min_score"] = num(k.min_score);
  t["classifier.pattern_window"] = num(k.pattern_window);
  t["classifier.echo_timeout"] = num(k.echo_timeout);

  auto& c = sc.call;
  t["call.users"] = num(c.users);
  t["call.frac_public"] = num(c.frac_public);
  t["call.frac_natted"] = num(c.frac_natted);
  t["call.frac_dual"] = num(c.frac_dual);
  t["call.frac_offline_recent"] = num(c.frac_offline_recent);
  t["call.frac_blocks_tracker"] = num(c.frac_blocks_tracker);
  t["call.frac_whitelist_only"] = num(c.frac_whitelist_only);
  t["call.rounds"] = num(c.rounds);
  t["call.reorder_fraction"] = num(c.reorder_fraction);
  t["call.volunteer"] = boolean(c.volunteer);
  t["call.salt"] = text(c.salt);
  t["call.interval_users"] = num(sc.interval_users);
  t["call.interval_s"] = num(sc.interval_s);
  scheduler_keys(t, "call", c.sched);

  auto& m = sc.mobility;
  t["mobility.users"] = num(m.users);
  t["mobility.frac_ever_online"] = num(m.frac_ever_online);
  t["mobility.frac_change_city"] = num(m.frac_change_city);
  t["mobility.frac_change_as"] = num(m.frac_change_as);
  t["mobility.frac_change_country"] = num(m.frac_change_country);
  t["mobility.frac_high_availability"] = num(m.frac_high_availability);
  t["mobility.frac_natted"] = num(m.frac_natted);
  t["mobility.rounds"] = num(m.rounds);
  t["mobility.round_period"] = num(m.round_period);
  t["mobility.salt"] = text(m.salt);
  scheduler_keys(t, "mobility", m.sched);

  auto& l = sc.linkage;
  t["linkage.same_host_public"] = num(l.same_host_public);
  t["linkage.same_host_nat"] = num(l.same_host_nat);
  t["linkage.mixed"] = num(l.mixed);
  t["linkage.distinct_two"] = num(l.distinct_two);
  t["linkage.distinct_one"] = num(l.distinct_one);
  t["linkage.unverifiable"] = num(l.unverifiable);
  t["linkage.rtc_only_users"] = num(l.rtc_only_users);
  t["linkage.bt_only_peers"] = num(l.bt_only_peers);
  t["linkage.swarms"] = num(l.swarms);
  t["linkage.crawl_top_k"] = num(l.crawl_top_k);
  t["linkage.dht_nodes"] = num(l.dht_nodes);
  t["linkage.dht_loss"] = num(l.dht_loss);
  t["linkage.crawls"] = num(l.crawls);
  t["linkage.crawl_period"] = num(l.crawl_period);
  t["linkage.frac_random_ipid_distinct"] = num(l.frac_random_ipid_distinct);
  t["linkage.frac_per_flow_ipid_distinct"] = num(l.frac_per_flow_ipid_distinct);
  t["linkage.salt"] = text(l.salt);
  scheduler_keys(t, "linkage", l.sched);

  auto& v = l.verifier;
  t["verifier.threshold"] = num(v.threshold);
  t["verifier.min_rounds"] = num(v.min_rounds);
  t["verifier.round_spacing"] = num(v.round_spacing);
  t["verifier.max_attempts"] = num(v.max_attempts);
  t["verifier.percentile"] = num(v.percentile);
  t["verifier.lanes"] = num(v.lanes);
  return t;
}

}  // namespace detail

/// Parses and validates; throws ScenarioError listing every violation.
inline Scenario parse(std::istream& in) {
  Scenario sc;
  auto table = detail::bindings(sc);
  std::vector<std::string> errors;
  std::map<std::string, int> seen;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto where = "line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') {
        errors.push_back(where + "unterminated section header");
        continue;
      }
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back(where + "expected key = value");
      continue;
    }
    auto key = detail::trim(line.substr(0, eq));
    auto value = detail::trim(line.substr(eq + 1));
    auto full = section.empty() ? key : section + "." + key;
    auto it = table.find(full);
    if (it == table.end()) {
      errors.push_back(where + "unknown key '" + full + "'");
      continue;
    }
    if (auto [prev, fresh] = seen.emplace(full, lineno); !fresh) {
      errors.push_back(where + "duplicate key '" + full + "' (first on line " + std::to_string(prev->second) + ")");
      continue;
    }
    if (auto err = it->second(value); !err.empty()) errors.push_back(where + full + ": " + err);
  }
  sc.propagate();
  auto more = sc.validate();
  errors.insert(errors.end(), more.begin(), more.end());
  if (!errors.empty()) throw ScenarioError(std::move(errors));
  return sc;
}

inline Scenario parse_string(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

inline Scenario load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError({"cannot open " + path});
  return parse(in);
}

}  // namespace rtcleak::scenario
