#pragma once

// Periodic tracking: parallel inconspicuous calling with slot attribution,
// majority-vote disambiguation, geo lookup with salted tokens, and
// availability / mobility analytics.

#include <sodium.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rtcleak/netsim.hpp"
#include "rtcleak/overlay.hpp"
#include "rtcleak/sniffer.hpp"

namespace rtcleak::tracker {

using netsim::HostId;

struct SchedulerConfig {
  double s = 3.0;  // gap between successive call starts of one client
  int clients = 1;
  double round_period = 3600.0;
  int validation_every = 100;
  bool inconspicuous = true;
  sniffer::ClassifierConfig classifier;

  void validate() const {
    if (!(s > 0.0)) throw std::invalid_argument("s must be positive");
    if (clients < 1) throw std::invalid_argument("at least one tracking client is required");
    if (validation_every < 1) throw std::invalid_argument("validation_every must be positive");
    classifier.validate();
  }
};

struct TrackingClient {
  std::string rtc_id;
  HostId host;
};

struct RoundOptions {
  std::optional<std::string> volunteer;  // called every validation_every calls
  // Fault injection: forced pattern delay per callee id.
  std::map<std::string, double> pattern_delays;
};

struct CallObservation {
  std::string user;
  std::size_t client = 0;
  double slot_start = 0.0;
  std::uint64_t call_id = 0;
  bool validation = false;
  bool ambiguous = false;  // more than one pattern began inside this slot
  std::vector<sniffer::ExtractedIp> designated;
  std::vector<rtcdir::PlannedTarget> truth;  // hidden ground truth, never reported
};

struct RoundResult {
  double t_begin = 0.0;
  double t_end = 0.0;
  std::vector<CallObservation> calls;
  std::size_t unattributed = 0;  // matches outside every slot
};

/// Client-local start offsets: IDs are dealt round-robin, call k of a client starts at k*s.
inline std::vector<std::pair<std::size_t, double>> schedule_offsets(std::size_t n_ids, const SchedulerConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::size_t, double>> out(n_ids);
  auto c = static_cast<std::size_t>(cfg.clients);
  for (std::size_t i = 0; i < n_ids; ++i) out[i] = {i % c, static_cast<double>(i / c) * cfg.s};
  return out;
}

struct PlannedCall {
  std::string callee;
  bool validation = false;
};

/// Per-client call lists: ids dealt round-robin, the volunteer spliced in after
/// every validation_every regular calls of a client.
inline std::vector<std::vector<PlannedCall>> plan_client_calls(const std::vector<std::string>& ids,
                                                               const SchedulerConfig& cfg, const RoundOptions& opt = {}) {
  cfg.validate();
  auto c = static_cast<std::size_t>(cfg.clients);
  std::vector<std::vector<PlannedCall>> per_client(c);
  std::vector<std::size_t> regular(c, 0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto& list = per_client[i % c];
    list.push_back({ids[i], false});
    if (opt.volunteer && ++regular[i % c] % static_cast<std::size_t>(cfg.validation_every) == 0)
      list.push_back({*opt.volunteer, true});
  }
  return per_client;
}

/// Places one call per id from the tracking clients starting at t0, runs the
/// network until every pattern has completed, and attributes each classified
/// pattern to the call whose slot [start, start+s) contains its first packet.
inline RoundResult run_round(rtcdir::Overlay& overlay, const std::vector<TrackingClient>& clients,
                             const std::vector<std::string>& ids, double t0, const SchedulerConfig& cfg,
                             const RoundOptions& opt = {}) {
  cfg.validate();
  if (clients.size() != static_cast<std::size_t>(cfg.clients))
    throw std::invalid_argument("client list does not match SchedulerConfig::clients");
  auto& net = overlay.network();
  for (const auto& c : clients)
    if (net.is_natted(c.host)) throw std::invalid_argument("tracking client " + c.rtc_id + " is behind a NAT");
  t0 = std::max(t0, net.now());

  auto per_client = plan_client_calls(ids, cfg, opt);

  RoundResult result;
  result.t_begin = t0;
  double last_slot_end = t0;
  std::vector<netsim::TapId> taps;
  std::vector<std::vector<std::size_t>> slots(clients.size());  // indices into result.calls
  for (std::size_t c = 0; c < clients.size(); ++c) {
    double end = t0 + static_cast<double>(per_client[c].size()) * cfg.s;
    last_slot_end = std::max(last_slot_end, end);
    taps.push_back(net.attach_tap(clients[c].host));
  }
  double horizon = last_slot_end + cfg.classifier.pattern_window;
  for (std::size_t c = 0; c < clients.size(); ++c) {
    if (cfg.inconspicuous) sniffer::apply_syn_filter(net, clients[c].host, {t0, horizon});
    for (std::size_t k = 0; k < per_client[c].size(); ++k) {
      const auto& [callee, validation] = per_client[c][k];
      rtcdir::CallRequest req;
      req.caller = clients[c].rtc_id;
      req.callee = callee;
      req.t_start = t0 + static_cast<double>(k) * cfg.s;
      if (auto it = opt.pattern_delays.find(callee); it != opt.pattern_delays.end() && !validation)
        req.pattern_delay = it->second;
      CallObservation obs;
      obs.user = callee;
      obs.client = c;
      obs.slot_start = req.t_start;
      obs.validation = validation;
      obs.truth = overlay.expected_targets(callee, req.t_start);
      obs.call_id = overlay.place_call(req).call_id;
      slots[c].push_back(result.calls.size());
      result.calls.push_back(std::move(obs));
    }
  }
  net.run_until(horizon);
  result.t_end = horizon;

  for (std::size_t c = 0; c < clients.size(); ++c) {
    net.detach_tap(taps[c]);
    auto trace = net.tap(taps[c]).take();
    auto matches = sniffer::classify_trace(trace, net.public_ip(clients[c].host), cfg.classifier);
    std::map<std::size_t, std::vector<sniffer::PatternMatch>> by_slot;
    for (auto& m : matches) {
      double rel = (m.t_first - t0) / cfg.s;
      if (rel < 0.0) {
        ++result.unattributed;
        continue;
      }
      auto k = static_cast<std::size_t>(std::floor(rel));
      if (k >= slots[c].size()) {
        ++result.unattributed;
        continue;
      }
      by_slot[k].push_back(std::move(m));
    }
    for (auto& [k, ms] : by_slot) {
      auto& obs = result.calls[slots[c][k]];
      obs.ambiguous = ms.size() > 1;
      obs.designated = sniffer::extract_callee_ips(ms);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Majority vote

template <class Key>
struct Designation {
  std::string user;
  Key key;
};

template <class Key>
struct Assignment {
  std::map<Key, std::string> owner;
  std::set<Key> tied;

  std::map<std::string, std::set<Key>> by_user() const {
    std::map<std::string, std::set<Key>> out;
    for (const auto& [k, u] : owner) out[u].insert(k);
    return out;
  }
};

/// Each key goes to the single user designating it most often; ties stay unassigned.
template <class Key>
Assignment<Key> disambiguate(const std::vector<std::vector<Designation<Key>>>& rounds) {
  if (rounds.empty()) throw std::invalid_argument("disambiguate needs at least one round");
  std::map<Key, std::map<std::string, std::size_t>> votes;
  for (const auto& r : rounds)
    for (const auto& d : r) ++votes[d.key][d.user];
  Assignment<Key> out;
  for (const auto& [key, users] : votes) {
    std::size_t best = 0, at_best = 0;
    const std::string* who = nullptr;
    for (const auto& [u, n] : users) {
      if (n > best) {
        best = n;
        at_best = 1;
        who = &u;
      } else if (n == best) {
        ++at_best;
      }
    }
    if (at_best == 1) out.owner.emplace(key, *who);
    else out.tied.insert(key);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Geo lookup

struct GeoRecord {
  std::string city;
  std::string country;
  std::string asn;

  auto operator<=>(const GeoRecord&) const = default;
};

class GeoTable {
 public:
  void add(Prefix prefix, GeoRecord rec) {
    if (prefix.len < 0 || prefix.len > 32) throw std::invalid_argument("prefix length out of range");
    std::uint32_t base = prefix.base.value & Prefix::mask_for(prefix.len);
    if (!by_len_[static_cast<std::size_t>(prefix.len)].emplace(base, std::move(rec)).second)
      throw std::invalid_argument("duplicate geo prefix " + prefix.str());
    rows_.push_back(Prefix{Ipv4{base}, prefix.len});
  }

  /// Longest matching prefix.
  const GeoRecord* lookup(Ipv4 ip) const {
    for (int len = 32; len >= 0; --len) {
      const auto& m = by_len_[static_cast<std::size_t>(len)];
      if (m.empty()) continue;
      auto it = m.find(ip.value & Prefix::mask_for(len));
      if (it != m.end()) return &it->second;
    }
    return nullptr;
  }

  std::size_t size() const { return rows_.size(); }
  const std::vector<Prefix>& prefixes() const { return rows_; }
  const GeoRecord& record(const Prefix& p) const {
    return by_len_[static_cast<std::size_t>(p.len)].at(p.base.value & Prefix::mask_for(p.len));
  }

 private:
  std::array<std::unordered_map<std::uint32_t, GeoRecord>, 33> by_len_;
  std::vector<Prefix> rows_;
};

/// Fixture lines: `prefix<TAB>city<TAB>country<TAB>asn`; '#' starts a comment.
inline GeoTable read_geo_table(std::istream& is) {
  GeoTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    auto prefix = cols.size() == 4 ? Prefix::parse(cols[0]) : std::nullopt;
    if (!prefix) throw std::invalid_argument("geo fixture line " + std::to_string(lineno) + " is malformed");
    t.add(*prefix, GeoRecord{cols[1], cols[2], cols[3]});
  }
  return t;
}

inline void write_geo_table(std::ostream& os, const GeoTable& t) {
  for (const auto& p : t.prefixes()) {
    const auto& r = t.record(p);
    os << p.str() << '\t' << r.city << '\t' << r.country << '\t' << r.asn << '\n';
  }
}

// ---------------------------------------------------------------------------
// Salted tokens: BLAKE2b-128 keyed with BLAKE2b-256(salt).

inline const std::string kUnknownToken(32, '0');

struct GeoTokens {
  std::string city_h;
  std::string as_h;
  std::string country_h;

  auto operator<=>(const GeoTokens&) const = default;
};

class Anonymizer {
 public:
  explicit Anonymizer(std::string_view salt) {
    if (sodium_init() < 0) throw std::runtime_error("libsodium failed to initialise");
    crypto_generichash(key_.data(), key_.size(), reinterpret_cast<const unsigned char*>(salt.data()), salt.size(),
                       nullptr, 0);
  }

  std::string token(std::string_view label) const {
    std::array<unsigned char, 16> out{};
    crypto_generichash(out.data(), out.size(), reinterpret_cast<const unsigned char*>(label.data()), label.size(),
                       key_.data(), key_.size());
    static constexpr char kHex[] = "0123456789abcdef";
    std::string hex;
    hex.reserve(32);
    for (unsigned char b : out) {
      hex.push_back(kHex[b >> 4]);
      hex.push_back(kHex[b & 15]);
    }
    return hex == kUnknownToken ? std::string(31, '0') + "1" : hex;
  }

  GeoTokens geo(Ipv4 ip, const GeoTable& table) const {
    const GeoRecord* r = table.lookup(ip);
    if (!r) return {kUnknownToken, kUnknownToken, kUnknownToken};
    return {token("city\x1f" + r->country + "\x1f" + r->city), token("as\x1f" + r->asn),
            token("country\x1f" + r->country)};
  }

  std::string ip_token(Ipv4 ip) const { return token("ip\x1f" + ip.str()); }

 private:
  std::array<unsigned char, 32> key_{};
};

inline GeoTokens geo_anonymize(Ipv4 ip, const GeoTable& table, std::string_view salt) {
  return Anonymizer(salt).geo(ip, table);
}

// ---------------------------------------------------------------------------
// Samples and analytics

struct LocationSample {
  std::string user;
  std::size_t round = 0;
  double t = 0.0;
  std::optional<Ipv4> ip;  // cleared once tokens are derived
  std::optional<GeoTokens> tokens;
  bool online = false;
  bool stale = false;
};

/// One sample per designated address, or one offline sample when nothing matched.
/// Validation calls are excluded; raw addresses are dropped.
inline std::vector<LocationSample> to_samples(const RoundResult& r, std::size_t round, const GeoTable& geo,
                                              const Anonymizer& anon) {
  std::vector<LocationSample> out;
  for (const auto& c : r.calls) {
    if (c.validation) continue;
    if (c.designated.empty()) {
      out.push_back(LocationSample{c.user, round, c.slot_start, std::nullopt, std::nullopt, false, false});
      continue;
    }
    for (const auto& d : c.designated) {
      LocationSample s{c.user, round, c.slot_start, d.ip, std::nullopt, !d.stale, d.stale};
      s.tokens = anon.geo(*s.ip, geo);
      s.ip.reset();
      out.push_back(std::move(s));
    }
  }
  return out;
}

struct UserMobility {
  std::size_t distinct_cities = 0;
  std::size_t distinct_as = 0;
  std::size_t distinct_countries = 0;
  std::size_t rounds = 0;
  std::size_t online_rounds = 0;
  double availability = 0.0;
};

struct XY {
  double x = 0.0;
  double y = 0.0;
};

struct MobilityReport {
  std::map<std::string, UserMobility> users;
  std::size_t population = 0;  // users ever sampled
  std::size_t located = 0;     // users with at least one located sample
  std::size_t ever_online = 0;
  double frac_changed_city = 0.0;  // over located users
  double frac_changed_as = 0.0;
  double frac_changed_country = 0.0;
  std::vector<XY> simultaneous_online;  // round -> users online
  std::vector<XY> cumulative_online;    // round -> fraction of population seen online so far
  std::vector<XY> availability_cdf;
  std::vector<XY> city_counts;  // rank -> distinct cities, decreasing
  std::vector<XY> as_counts;
  std::vector<XY> country_counts;
};

inline std::vector<XY> empirical_cdf(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::vector<XY> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i + 1 < v.size() && v[i + 1] == v[i]) continue;
    out.push_back({v[i], static_cast<double>(i + 1) / static_cast<double>(v.size())});
  }
  return out;
}

/// Stale samples count as locations but never as online presence.
/// `population` overrides the denominator of the cumulative-online curve.
inline MobilityReport mobility_report(const std::vector<LocationSample>& samples,
                                      std::optional<std::size_t> population = std::nullopt) {
  struct Acc {
    std::set<std::string> city, as, country;
    std::set<std::size_t> rounds, online;
  };
  std::map<std::string, Acc> acc;
  std::map<std::size_t, std::set<std::string>> online_by_round;
  std::size_t max_round = 0;
  for (const auto& s : samples) {
    auto& a = acc[s.user];
    a.rounds.insert(s.round);
    max_round = std::max(max_round, s.round);
    if (s.online) {
      a.online.insert(s.round);
      online_by_round[s.round].insert(s.user);
    }
    if (s.tokens && s.tokens->city_h != kUnknownToken) {
      a.city.insert(s.tokens->city_h);
      a.as.insert(s.tokens->as_h);
      a.country.insert(s.tokens->country_h);
    }
  }
  MobilityReport rep;
  rep.population = population.value_or(acc.size());
  std::size_t changed_city = 0, changed_as = 0, changed_country = 0;
  std::vector<double> avail;
  std::vector<double> cities, ases, countries;
  for (const auto& [u, a] : acc) {
    UserMobility m;
    m.distinct_cities = a.city.size();
    m.distinct_as = a.as.size();
    m.distinct_countries = a.country.size();
    m.rounds = a.rounds.size();
    m.online_rounds = a.online.size();
    m.availability = static_cast<double>(m.online_rounds) / static_cast<double>(m.rounds);
    avail.push_back(m.availability);
    if (m.online_rounds > 0) ++rep.ever_online;
    if (m.distinct_cities > 0) {
      ++rep.located;
      changed_city += m.distinct_cities > 1;
      changed_as += m.distinct_as > 1;
      changed_country += m.distinct_countries > 1;
      cities.push_back(static_cast<double>(m.distinct_cities));
      ases.push_back(static_cast<double>(m.distinct_as));
      countries.push_back(static_cast<double>(m.distinct_countries));
    }
    rep.users.emplace(u, m);
  }
  if (rep.located > 0) {
    double n = static_cast<double>(rep.located);
    rep.frac_changed_city = static_cast<double>(changed_city) / n;
    rep.frac_changed_as = static_cast<double>(changed_as) / n;
    rep.frac_changed_country = static_cast<double>(changed_country) / n;
  }
  std::set<std::string> seen;
  if (!samples.empty()) {
    for (std::size_t r = 0; r <= max_round; ++r) {
      auto it = online_by_round.find(r);
      std::size_t now = it == online_by_round.end() ? 0 : it->second.size();
      if (it != online_by_round.end()) seen.insert(it->second.begin(), it->second.end());
      rep.simultaneous_online.push_back({static_cast<double>(r), static_cast<double>(now)});
      double denom = rep.population ? static_cast<double>(rep.population) : 1.0;
      rep.cumulative_online.push_back({static_cast<double>(r), static_cast<double>(seen.size()) / denom});
    }
  }
  rep.availability_cdf = empirical_cdf(avail);
  auto ranked = [](std::vector<double> v) {
    std::sort(v.begin(), v.end(), std::greater<>());
    std::vector<XY> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back({static_cast<double>(i + 1), v[i]});
    return out;
  };
  rep.city_counts = ranked(cities);
  rep.as_counts = ranked(ases);
  rep.country_counts = ranked(countries);
  return rep;
}

inline void write_series(std::ostream& os, const std::vector<XY>& series) {
  char buf[64];
  for (const auto& p : series) {
    std::snprintf(buf, sizeof buf, "%.6g,%.6g\n", p.x, p.y);
    os << buf;
  }
}

}  // namespace rtcleak::tracker
