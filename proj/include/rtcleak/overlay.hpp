#pragma once

// RTC overlay call signaling on top of netsim.
//
// A call emits, per callee session, one of three observable patterns:
//   (i)   callee online with a public address: caller sends a TCP SYN with
//         retransmissions after 3 s and a further 1 s, and three 59/58-byte UDP
//         datagrams spaced 2 s and 4 s apart; the callee answers.
//   (ii)  callee online behind a NAT: callee opens with a 28-byte UDP datagram,
//         the caller echoes 28 bytes, both exchange varying sizes, and about 10 s
//         after first contact the callee sends 3-byte datagrams.
//   (iii) callee offline but seen within 72 h: the caller-side half of (i)
//         toward the last-seen public address, with no answer.
// Supernode chatter is emitted alongside every call.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "rtcleak/netsim.hpp"
#include "rtcleak/rng.hpp"
#include "rtcleak/rtcdir.hpp"

namespace rtcleak::rtcdir {

using netsim::HostId;
using netsim::Network;
using netsim::Proto;
using netsim::SimPacket;

inline constexpr double kLastSeenHorizon = 72.0 * 3600.0;  // 259200 s

enum class DefenseMode { None, RevealAfterAccept, RelayAll };

inline const char* to_string(DefenseMode d) {
  switch (d) {
    case DefenseMode::None: return "none";
    case DefenseMode::RevealAfterAccept: return "reveal-after-accept";
    case DefenseMode::RelayAll: return "relay-all";
  }
  return "?";
}

inline std::optional<DefenseMode> parse_defense(std::string_view s) {
  if (s == "none") return DefenseMode::None;
  if (s == "reveal-after-accept") return DefenseMode::RevealAfterAccept;
  if (s == "relay-all") return DefenseMode::RelayAll;
  return std::nullopt;
}

enum class PatternCase { PublicOnline, NattedOnline, OfflineRecent };

struct Session {
  HostId host;
  double login_t = 0.0;
  std::optional<double> logout_t;

  bool online_at(double t) const { return login_t <= t && (!logout_t || t < *logout_t); }
};

struct PresenceState {
  std::vector<Session> sessions;
};

struct LastSeen {
  double t = 0.0;
  HostId host;
};

struct CallRequest {
  std::string caller;
  std::string callee;
  double t_start = 0.0;
  std::optional<DefenseMode> defense;  // overrides the overlay default
  // Fault injection: force the delay between t_start and the first pattern packet.
  std::optional<double> pattern_delay;
};

enum class NotificationKind { Ring, Popup };

struct NotificationEvent {
  std::string callee;
  HostId host;
  double t = 0.0;
  NotificationKind kind = NotificationKind::Ring;
  std::uint64_t call_id = 0;
};

/// Where a call's pattern toward one callee session lands.
struct PlannedTarget {
  PatternCase pattern = PatternCase::PublicOnline;
  HostId session_host;  // callee's host (last-seen host for OfflineRecent)
  Ipv4 callee_ip;       // public address of the callee side
  Ipv4 observed_ip;     // address the caller actually exchanges packets with
  bool relayed = false;
};

struct CallPlan {
  std::uint64_t call_id = 0;
  HostId caller_host;
  Ipv4 caller_ip;
  DefenseMode defense = DefenseMode::None;
  double t_start = 0.0;
  double pattern_start = 0.0;
  std::vector<PlannedTarget> targets;
  std::vector<Ipv4> noise_ips;
};

struct SignalingConfig {
  std::uint16_t rtc_port = 33033;
  DefenseMode defense = DefenseMode::None;
  // Each nominal gap g is emitted as g * (1 + U(-timing_jitter, +timing_jitter)).
  double timing_jitter = 0.0;
  double start_delay_min = 0.2;
  double start_delay_max = 2.0;
  int noise_min_peers = 10;
  int noise_max_peers = 15;
  int noise_min_packets = 5;
  int noise_max_packets = 20;
  double noise_span = 15.0;
  double noise_marker_probability = 0.08;  // outbound 58/59-byte noise
  double last_seen_refresh = 60.0;
  double processing_delay = 0.005;
  std::vector<HostId> supernodes;
  std::vector<HostId> relays;
};

class RtcError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Overlay {
 public:
  Overlay(Network& net, Directory directory, SignalingConfig cfg, std::uint64_t seed)
      : net_(net), dir_(std::move(directory)), cfg_(std::move(cfg)), seed_(seed) {
    for (auto h : cfg_.relays) relay_hosts_.insert(h.value);
    for (auto h : cfg_.relays) bind_app(h);
    if (cfg_.supernodes.size() < static_cast<std::size_t>(cfg_.noise_min_peers))
      throw std::invalid_argument("supernode pool smaller than noise_min_peers");
  }

  Overlay(const Overlay&) = delete;
  Overlay& operator=(const Overlay&) = delete;

  const Directory& directory() const { return dir_; }
  Directory& directory() { return dir_; }
  const SignalingConfig& config() const { return cfg_; }
  SignalingConfig& config() { return cfg_; }
  Network& network() { return net_; }

  void login(const std::string& rtc_id, HostId host, double login_t, std::optional<double> logout_t = std::nullopt) {
    dir_.at(rtc_id);
    if (logout_t && *logout_t < login_t) throw std::invalid_argument("logout before login");
    presence_[rtc_id].sessions.push_back(Session{host, login_t, logout_t});
    host_sessions_[host.value].push_back(Session{host, login_t, logout_t});
    bind_app(host);
  }

  const PresenceState* presence(const std::string& rtc_id) const {
    auto it = presence_.find(rtc_id);
    return it == presence_.end() ? nullptr : &it->second;
  }

  std::vector<Session> online_sessions(const std::string& rtc_id, double t) const {
    std::vector<Session> out;
    if (auto* p = presence(rtc_id))
      for (const auto& s : p->sessions)
        if (s.online_at(t)) out.push_back(s);
    return out;
  }

  /// Most recent presence refresh at or before t (logout, or the periodic refresh while online).
  std::optional<LastSeen> last_seen(const std::string& rtc_id, double t) const {
    auto* p = presence(rtc_id);
    if (!p) return std::nullopt;
    std::optional<LastSeen> best;
    for (const auto& s : p->sessions) {
      if (s.login_t > t) continue;
      double seen;
      if (s.online_at(t)) {
        seen = s.login_t + std::floor((t - s.login_t) / cfg_.last_seen_refresh) * cfg_.last_seen_refresh;
      } else {
        seen = *s.logout_t;
      }
      if (!best || seen > best->t) best = LastSeen{seen, s.host};
    }
    return best;
  }

  bool host_active(HostId h, double t) const {
    if (relay_hosts_.count(h.value)) return true;
    auto it = host_sessions_.find(h.value);
    if (it == host_sessions_.end()) return false;
    return std::any_of(it->second.begin(), it->second.end(), [t](const Session& s) { return s.online_at(t); });
  }

  /// The pattern cases a call placed at t would produce, one per session (ground truth).
  std::vector<PlannedTarget> expected_targets(const std::string& callee, double t) const {
    std::vector<PlannedTarget> out;
    auto online = online_sessions(callee, t);
    for (const auto& s : online) {
      PlannedTarget pt;
      pt.session_host = s.host;
      pt.pattern = net_.is_natted(s.host) ? PatternCase::NattedOnline : PatternCase::PublicOnline;
      pt.callee_ip = net_.public_ip(s.host);
      pt.observed_ip = pt.callee_ip;
      out.push_back(pt);
    }
    if (online.empty()) {
      if (auto seen = last_seen(callee, t); seen && t - seen->t <= kLastSeenHorizon) {
        PlannedTarget pt;
        pt.pattern = PatternCase::OfflineRecent;
        pt.session_host = seen->host;
        pt.callee_ip = net_.public_ip(seen->host);
        pt.observed_ip = pt.callee_ip;
        out.push_back(pt);
      }
    }
    return out;
  }

  CallPlan place_call(const CallRequest& req) {
    const UserProfile* callee = dir_.find(req.callee);
    if (!callee) throw RtcError("unknown callee " + req.callee);
    if (!dir_.find(req.caller)) throw RtcError("unknown caller " + req.caller);
    if (req.t_start < net_.now()) throw RtcError("call start in the past");
    auto caller_sessions = online_sessions(req.caller, req.t_start);
    if (caller_sessions.empty()) throw RtcError("caller " + req.caller + " is offline");
    HostId caller_host = caller_sessions.front().host;
    if (net_.is_natted(caller_host)) throw RtcError("caller host must have a public address");

    CallPlan plan;
    plan.call_id = next_call_++;
    plan.caller_host = caller_host;
    plan.caller_ip = net_.public_ip(caller_host);
    plan.defense = req.defense.value_or(cfg_.defense);
    plan.t_start = req.t_start;
    Rng rng(derive_seed(seed_, plan.call_id));
    double delay = req.pattern_delay.value_or(uniform(rng, cfg_.start_delay_min, cfg_.start_delay_max));
    plan.pattern_start = req.t_start + delay;

    CallState state;
    state.caller = req.caller;
    state.callee = req.callee;
    state.caller_host = caller_host;
    state.defense = plan.defense;

    auto targets = expected_targets(req.callee, req.t_start);
    for (const auto& t : targets) state.callee_hosts.insert(t.session_host.value);

    std::optional<HostId> relay;
    if (plan.defense == DefenseMode::RelayAll && !targets.empty()) {
      if (cfg_.relays.empty()) throw RtcError("relay-all defense without relays");
      relay = cfg_.relays[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(cfg_.relays.size()) - 1))];
      state.relay = relay;
    }
    calls_.emplace(plan.call_id, state);

    emit_noise(plan, rng);

    if (plan.defense == DefenseMode::RevealAfterAccept) {
      // Pre-accept signaling is carried by supernodes only; the callee still rings.
      for (const auto& t : targets) {
        if (t.pattern == PatternCase::OfflineRecent) continue;
        record_notification(plan.call_id, t.session_host, plan.pattern_start);
      }
      return plan;
    }

    for (auto t : targets) {
      HostId endpoint = t.session_host;
      if (relay) {
        endpoint = *relay;
        t.observed_ip = net_.public_ip(*relay);
        t.relayed = true;
      }
      // A relay has a public address, so relayed sessions all look like case (i).
      if (t.pattern == PatternCase::NattedOnline && !relay) emit_callee_initiated(plan, endpoint, rng);
      else emit_caller_initiated(plan, t.observed_ip, rng);
      plan.targets.push_back(t);
    }
    return plan;
  }

  /// Notifications raised for one call so far.
  std::vector<NotificationEvent> notify_model(std::uint64_t call_id) const {
    std::vector<NotificationEvent> out;
    for (const auto& n : notifications_)
      if (n.call_id == call_id) out.push_back(n);
    return out;
  }

  const std::vector<NotificationEvent>& notifications() const { return notifications_; }

 private:
  struct CallState {
    std::string caller;
    std::string callee;
    HostId caller_host;
    std::set<std::uint32_t> callee_hosts;
    std::optional<HostId> relay;
    DefenseMode defense = DefenseMode::None;
    std::set<Endpoint> echoed;
  };

  double gap(Rng& rng, double nominal) const {
    if (cfg_.timing_jitter <= 0.0) return nominal;
    return nominal * (1.0 + uniform(rng, -cfg_.timing_jitter, cfg_.timing_jitter));
  }

  static std::uint32_t varying_size(Rng& rng) {
    // [30, 120]; marker sizes 28 and 3 lie outside, 58/59 are skipped.
    for (;;) {
      auto s = static_cast<std::uint32_t>(uniform_int(rng, 30, 120));
      if (s != 58 && s != 59) return s;
    }
  }

  std::uint16_t ephemeral_port(std::uint64_t call_id) const {
    return static_cast<std::uint16_t>(40000 + (call_id % 20000));
  }

  void send(HostId src, std::uint16_t sport, Endpoint dst, Proto proto, std::uint32_t size, std::uint8_t flags,
            double at, std::uint64_t tag) {
    netsim::SendRequest r;
    r.src = src;
    r.src_port = sport;
    r.dst = dst;
    r.proto = proto;
    r.size = size;
    r.flags = flags;
    r.at = at;
    r.tag = tag;
    net_.schedule_send(std::move(r));
  }

  void emit_noise(CallPlan& plan, Rng& rng) {
    auto n_peers = static_cast<std::size_t>(uniform_int(rng, cfg_.noise_min_peers, cfg_.noise_max_peers));
    n_peers = std::min(n_peers, cfg_.supernodes.size());
    std::vector<HostId> pool = cfg_.supernodes;
    for (std::size_t i = 0; i < n_peers; ++i) {
      auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i), static_cast<std::int64_t>(pool.size()) - 1));
      std::swap(pool[i], pool[j]);
    }
    Endpoint caller_ep{plan.caller_ip, cfg_.rtc_port};
    for (std::size_t i = 0; i < n_peers; ++i) {
      HostId sn = pool[i];
      Endpoint sn_ep{net_.public_ip(sn), cfg_.rtc_port};
      plan.noise_ips.push_back(sn_ep.ip);
      auto m = uniform_int(rng, cfg_.noise_min_packets, cfg_.noise_max_packets);
      int markers = 0;
      for (std::int64_t k = 0; k < m; ++k) {
        double at = plan.t_start + uniform(rng, 0.0, cfg_.noise_span);
        bool outbound = chance(rng, 0.5);
        std::uint32_t size;
        if (outbound && markers < 2 && chance(rng, cfg_.noise_marker_probability)) {
          size = chance(rng, 0.5) ? 59 : 58;
          ++markers;
        } else {
          do {
            size = static_cast<std::uint32_t>(uniform_int(rng, 20, 200));
          } while (size == 28 || size == 58 || size == 59);
        }
        if (outbound) send(plan.caller_host, cfg_.rtc_port, sn_ep, Proto::UDP, size, 0, at, 0);
        else send(sn, cfg_.rtc_port, caller_ep, Proto::UDP, size, 0, at, 0);
      }
    }
    // Keep-alive on the caller's long-lived TCP connection to its own supernode.
    HostId home = cfg_.supernodes[plan.caller_host.value % cfg_.supernodes.size()];
    Endpoint home_ep{net_.public_ip(home), 443};
    auto keepalives = uniform_int(rng, 2, 4);
    for (std::int64_t k = 0; k < keepalives; ++k)
      send(plan.caller_host, 50000, home_ep, Proto::TCP, static_cast<std::uint32_t>(uniform_int(rng, 40, 160)),
           netsim::tcp::ACK | netsim::tcp::PSH, plan.t_start + uniform(rng, 0.0, cfg_.noise_span), 0);
  }

  void emit_caller_initiated(const CallPlan& plan, Ipv4 target_ip, Rng& rng) {
    double t0 = plan.pattern_start;
    auto eport = ephemeral_port(plan.call_id);
    bind_tcp_port(plan.caller_host, eport);
    Endpoint target{target_ip, cfg_.rtc_port};
    double syn = t0;
    send(plan.caller_host, eport, target, Proto::TCP, 0, netsim::tcp::SYN, syn, plan.call_id);
    syn += gap(rng, 3.0);
    send(plan.caller_host, eport, target, Proto::TCP, 0, netsim::tcp::SYN, syn, plan.call_id);
    syn += gap(rng, 1.0);
    send(plan.caller_host, eport, target, Proto::TCP, 0, netsim::tcp::SYN, syn, plan.call_id);

    double u = t0 + uniform(rng, 0.0, 1.0);
    for (int k = 0; k < 3; ++k) {
      std::uint32_t size = chance(rng, 0.5) ? 59 : 58;
      send(plan.caller_host, cfg_.rtc_port, target, Proto::UDP, size, 0, u, plan.call_id);
      if (k == 0) u += gap(rng, 2.0);
      else if (k == 1) u += gap(rng, 4.0);
    }
  }

  void emit_callee_initiated(const CallPlan& plan, HostId callee_host, Rng& rng) {
    double t0 = plan.pattern_start;
    Endpoint caller{plan.caller_ip, cfg_.rtc_port};
    send(callee_host, cfg_.rtc_port, caller, Proto::UDP, 28, 0, t0, plan.call_id);

    auto n_callee = uniform_int(rng, 2, 4);
    std::vector<double> times;
    for (std::int64_t k = 0; k < n_callee; ++k) times.push_back(t0 + uniform(rng, 0.5, 8.0));
    std::sort(times.begin(), times.end());
    for (double at : times) send(callee_host, cfg_.rtc_port, caller, Proto::UDP, varying_size(rng), 0, at, plan.call_id);

    double tail = t0 + gap(rng, 10.0);
    for (int k = 0; k < 3; ++k) {
      send(callee_host, cfg_.rtc_port, caller, Proto::UDP, 3, 0, tail, plan.call_id);
      tail += gap(rng, 1.0);
    }

    // The callee's TCP attempt toward the caller (dropped when calling inconspicuously).
    auto eport = ephemeral_port(plan.call_id);
    bind_tcp_port(callee_host, eport);
    double syn = t0 + uniform(rng, 0.0, 0.5);
    send(callee_host, eport, caller, Proto::TCP, 0, netsim::tcp::SYN, syn, plan.call_id);
    syn += gap(rng, 3.0);
    send(callee_host, eport, caller, Proto::TCP, 0, netsim::tcp::SYN, syn, plan.call_id);
    syn += gap(rng, 1.0);
    send(callee_host, eport, caller, Proto::TCP, 0, netsim::tcp::SYN, syn, plan.call_id);
  }

  void bind_app(HostId h) {
    if (!net_.is_bound(h, Proto::UDP, cfg_.rtc_port))
      net_.bind(h, Proto::UDP, cfg_.rtc_port, [this, h](Network& net, const SimPacket& p) { on_udp(net, h, p); });
    bind_tcp_port(h, cfg_.rtc_port);
  }

  void bind_tcp_port(HostId h, std::uint16_t port) {
    if (!net_.is_bound(h, Proto::TCP, port))
      net_.bind(h, Proto::TCP, port, [this, h](Network& net, const SimPacket& p) { on_tcp(net, h, p); });
  }

  void on_udp(Network& net, HostId self, const SimPacket& p) {
    auto it = calls_.find(p.tag);
    if (p.tag == 0 || it == calls_.end()) return;
    CallState& call = it->second;
    double now = net.now();
    Rng rng(derive_seed(seed_, p.seq));
    if (self == call.caller_host) {
      Endpoint peer = p.src();
      if (p.size != 28 || !call.echoed.insert(peer).second) return;
      send(self, cfg_.rtc_port, peer, Proto::UDP, 28, 0, now + cfg_.processing_delay, p.tag);
      auto n = uniform_int(rng, 2, 4);
      std::vector<double> times;
      for (std::int64_t k = 0; k < n; ++k) times.push_back(now + uniform(rng, 0.5, 8.0));
      std::sort(times.begin(), times.end());
      for (double at : times) send(self, cfg_.rtc_port, peer, Proto::UDP, varying_size(rng), 0, at, p.tag);
      return;
    }
    if (!host_active(self, now)) return;
    if (p.size == 58 || p.size == 59)
      send(self, cfg_.rtc_port, p.src(), Proto::UDP, varying_size(rng), 0, now + cfg_.processing_delay, p.tag);
  }

  void on_tcp(Network& net, HostId self, const SimPacket& p) {
    auto it = calls_.find(p.tag);
    if (p.tag == 0 || it == calls_.end()) return;
    double now = net.now();
    using namespace netsim::tcp;
    if (p.has_flag(SYN) && !p.has_flag(ACK)) {
      bool is_caller = self == it->second.caller_host;
      if (!is_caller && !host_active(self, now)) return;
      send(self, p.dst_port, p.src(), Proto::TCP, 0, SYN | ACK, now + cfg_.processing_delay, p.tag);
    } else if (p.has_flag(SYN) && p.has_flag(ACK)) {
      send(self, p.dst_port, p.src(), Proto::TCP, 0, ACK, now + cfg_.processing_delay, p.tag);
      on_established(p.tag, self, now);
    } else if (p.has_flag(ACK)) {
      on_established(p.tag, self, now);
    }
  }

  // A TCP handshake completed at `host` during setup of call `call_id`.
  void on_established(std::uint64_t call_id, HostId host, double t) {
    const CallState& call = calls_.at(call_id);
    if (call.callee_hosts.count(host.value)) {
      record_notification(call_id, host, t);
    } else if (call.relay && *call.relay == host) {
      for (auto h : call.callee_hosts)
        if (host_active(HostId{h}, t)) record_notification(call_id, HostId{h}, t);
    }
  }

  void record_notification(std::uint64_t call_id, HostId host, double t) {
    const CallState& call = calls_.at(call_id);
    // Privacy settings silence the ring; they do not change what goes on the wire.
    const UserProfile& callee = dir_.at(call.callee);
    if (callee.blocked.count(call.caller)) return;
    if (callee.whitelist_only && !callee.contact_list.count(call.caller)) return;
    if (!notified_.insert({call_id, host.value}).second) return;
    notifications_.push_back(NotificationEvent{call.callee, host, t, NotificationKind::Ring, call_id});
    notifications_.push_back(NotificationEvent{call.callee, host, t, NotificationKind::Popup, call_id});
  }

  Network& net_;
  Directory dir_;
  SignalingConfig cfg_;
  std::uint64_t seed_;
  std::uint64_t next_call_ = 1;
  std::map<std::string, PresenceState> presence_;
  std::unordered_map<std::uint32_t, std::vector<Session>> host_sessions_;
  std::set<std::uint32_t> relay_hosts_;
  std::unordered_map<std::uint64_t, CallState> calls_;
  std::set<std::pair<std::uint64_t, std::uint32_t>> notified_;
  std::vector<NotificationEvent> notifications_;
};

}  // namespace rtcleak::rtcdir
