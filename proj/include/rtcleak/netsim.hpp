#pragma once

// Deterministic discrete-event network substrate.
//
// Hosts sit either directly on the public address space or behind a NAT box.
// Every datagram gets its IP-ID from the sending host's generator at send time,
// NATs rewrite addresses and ports but never the IP-ID, and capture taps see
// packets at the wire (before any edge filter on the host they are attached to).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include "rtcleak/ipv4.hpp"
#include "rtcleak/rng.hpp"

namespace rtcleak::netsim {

inline constexpr std::uint32_t kIpIdSpace = 1u << 16;

enum class Proto : std::uint8_t { TCP, UDP };

namespace tcp {
inline constexpr std::uint8_t FIN = 0x01;
inline constexpr std::uint8_t SYN = 0x02;
inline constexpr std::uint8_t RST = 0x04;
inline constexpr std::uint8_t PSH = 0x08;
inline constexpr std::uint8_t ACK = 0x10;
}  // namespace tcp

struct HostId {
  std::uint32_t value = 0;
  auto operator<=>(const HostId&) const = default;
};

struct NatId {
  std::uint32_t value = 0;
  auto operator<=>(const NatId&) const = default;
};

using EventId = std::uint64_t;
using TapId = std::uint32_t;

enum class IpIdModel { SequentialGlobal, SequentialPerFlow, Random };

inline const char* to_string(IpIdModel m) {
  switch (m) {
    case IpIdModel::SequentialGlobal: return "sequential-global";
    case IpIdModel::SequentialPerFlow: return "sequential-per-flow";
    case IpIdModel::Random: return "random";
  }
  return "?";
}

struct HostConfig {
  Ipv4 private_ip;  // the public address when `nat` is empty
  std::optional<NatId> nat;
  IpIdModel ipid_model = IpIdModel::SequentialGlobal;
  std::string os_label;
  std::uint16_t initial_ipid = 0;
  // Packets per second the host sends that are not materialized as events.
  // They advance a SequentialGlobal counter between observed sends.
  double background_pps = 0.0;
  // SequentialPerFlow: start each flow at a keyed pseudo-random offset instead of 0.
  bool randomize_flow_offsets = false;
  std::optional<double> link_latency;
  std::optional<double> link_jitter;
};

struct NatConfig {
  Ipv4 public_ip;
  bool accepts_unsolicited_inbound = false;
};

struct SimPacket {
  double t_send = 0.0;
  double t_recv = 0.0;
  Ipv4 src_ip;
  Ipv4 dst_ip;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  Proto proto = Proto::UDP;
  std::uint8_t tcp_flags = 0;
  std::uint32_t size = 0;  // opaque size label
  std::uint16_t ip_id = 0;
  std::uint64_t seq = 0;   // global emission order
  // Ground-truth annotation (e.g. the call that caused the packet). Never exported.
  std::uint64_t tag = 0;
  std::string payload;

  bool has_flag(std::uint8_t f) const { return (tcp_flags & f) != 0; }
  bool is_syn() const { return proto == Proto::TCP && has_flag(tcp::SYN); }
  Endpoint src() const { return {src_ip, src_port}; }
  Endpoint dst() const { return {dst_ip, dst_port}; }
};

/// Time at which a packet crossed a tap whose local address is `local`.
inline double tap_time(const SimPacket& p, Ipv4 local) {
  return p.src_ip == local ? p.t_send : p.t_recv;
}

/// Flow identity from the sender's point of view (pre-NAT destination).
struct FlowKey {
  Ipv4 dst_ip;
  std::uint16_t dst_port = 0;
  Proto proto = Proto::UDP;
  auto operator<=>(const FlowKey&) const = default;
};

enum class Direction { Outbound, Inbound };

enum class EventKind { Send, Deliver, Drop, Timer };

enum class DropReason { EdgeFilter, NatNoBinding, Unroutable };

inline const char* to_string(DropReason r) {
  switch (r) {
    case DropReason::EdgeFilter: return "edge-filter";
    case DropReason::NatNoBinding: return "nat-no-binding";
    case DropReason::Unroutable: return "unroutable";
  }
  return "?";
}

struct EventRecord {
  EventId id = 0;
  double t = 0.0;
  EventKind kind = EventKind::Timer;
  std::uint64_t packet_seq = 0;
};

struct DropRecord {
  double t = 0.0;
  DropReason reason = DropReason::Unroutable;
  SimPacket packet;
};

struct LinkModel {
  double latency = 0.050;
  double jitter = 0.010;  // uniform +-jitter
};

struct SendRequest {
  HostId src;
  std::uint16_t src_port = 0;
  Endpoint dst;
  Proto proto = Proto::UDP;
  std::uint32_t size = 0;
  std::uint8_t flags = 0;
  double at = 0.0;
  std::uint64_t tag = 0;
  std::string payload;
};

/// Per-host IP-ID source.
class IpIdGenerator {
 public:
  IpIdGenerator(const HostConfig& cfg, std::uint64_t seed)
      : model_(cfg.ipid_model),
        counter_(cfg.initial_ipid),
        background_pps_(cfg.background_pps),
        randomize_offsets_(cfg.randomize_flow_offsets),
        secret_(seed),
        rng_(seed) {}

  std::uint16_t next(const FlowKey& flow, double now) {
    switch (model_) {
      case IpIdModel::SequentialGlobal: {
        account_background(now);
        return counter_++;
      }
      case IpIdModel::SequentialPerFlow: {
        auto [it, inserted] = flows_.try_emplace(flow, std::uint16_t{0});
        if (inserted && randomize_offsets_) {
          std::uint64_t k = (std::uint64_t{flow.dst_ip.value} << 24) ^
                            (std::uint64_t{flow.dst_port} << 8) ^ static_cast<std::uint64_t>(flow.proto);
          it->second = static_cast<std::uint16_t>(derive_seed(secret_, k));
        }
        return it->second++;
      }
      case IpIdModel::Random:
        return static_cast<std::uint16_t>(std::uniform_int_distribution<std::uint32_t>(0, kIpIdSpace - 1)(rng_));
    }
    return 0;
  }

  IpIdModel model() const { return model_; }

 private:
  void account_background(double now) {
    if (background_pps_ > 0.0 && now > last_t_) {
      double mean = background_pps_ * (now - last_t_);
      auto n = std::poisson_distribution<std::uint64_t>(mean)(rng_);
      counter_ = static_cast<std::uint16_t>(counter_ + n);
    }
    last_t_ = std::max(last_t_, now);
  }

  IpIdModel model_;
  std::uint16_t counter_;
  double background_pps_;
  bool randomize_offsets_;
  std::uint64_t secret_;
  Rng rng_;
  double last_t_ = 0.0;
  std::map<FlowKey, std::uint16_t> flows_;
};

class Network;

using Handler = std::function<void(Network&, const SimPacket&)>;
using EdgeFilter = std::function<bool(const SimPacket&, Direction, double now)>;

class CaptureTap {
 public:
  enum class Attach { Host, NatPublic };

  CaptureTap(Attach where, std::uint32_t target, Ipv4 local) : where_(where), target_(target), local_(local) {}

  Attach where() const { return where_; }
  std::uint32_t target() const { return target_; }
  Ipv4 local_ip() const { return local_; }
  std::size_t size() const { return packets_.size(); }

  /// Packets ordered by tap time, ties by (src_ip, src_port, emission seq).
  std::vector<SimPacket> trace() const {
    std::vector<SimPacket> out = packets_;
    sort_trace(out, local_);
    return out;
  }

  /// Returns the ordered trace and clears the tap.
  std::vector<SimPacket> take() {
    std::vector<SimPacket> out;
    out.swap(packets_);
    sort_trace(out, local_);
    return out;
  }

  void record(const SimPacket& p) { packets_.push_back(p); }

  static void sort_trace(std::vector<SimPacket>& v, Ipv4 local) {
    auto key_less = [local](const SimPacket& a, const SimPacket& b) {
      double ta = tap_time(a, local), tb = tap_time(b, local);
      if (ta != tb) return ta < tb;
      if (a.src_ip != b.src_ip) return a.src_ip < b.src_ip;
      if (a.src_port != b.src_port) return a.src_port < b.src_port;
      return a.seq < b.seq;
    };
    if (!std::is_sorted(v.begin(), v.end(), key_less)) std::stable_sort(v.begin(), v.end(), key_less);
  }

 private:
  Attach where_;
  std::uint32_t target_;
  Ipv4 local_;
  std::vector<SimPacket> packets_;
};

class Network {
 public:
  explicit Network(std::uint64_t seed, LinkModel link = {}) : seed_(seed), link_(link), rng_(derive_seed(seed, "netsim")) {}

  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  NatId add_nat(const NatConfig& cfg) {
    if (routes_.count(cfg.public_ip)) throw std::invalid_argument("duplicate public address " + cfg.public_ip.str());
    NatId id{static_cast<std::uint32_t>(nats_.size())};
    nats_.push_back(NatState{cfg, {}, {}, {}, 20000, {}, {}});
    routes_.emplace(cfg.public_ip, Route{Route::Kind::Nat, id.value});
    return id;
  }

  HostId add_host(const HostConfig& cfg) {
    HostId id{static_cast<std::uint32_t>(hosts_.size())};
    if (cfg.nat) {
      if (cfg.nat->value >= nats_.size()) throw std::invalid_argument("unknown NAT");
      auto& nat = nats_[cfg.nat->value];
      if (!nat.private_hosts.emplace(cfg.private_ip, id).second)
        throw std::invalid_argument("duplicate private address " + cfg.private_ip.str() + " behind NAT");
    } else {
      if (routes_.count(cfg.private_ip)) throw std::invalid_argument("duplicate public address " + cfg.private_ip.str());
      routes_.emplace(cfg.private_ip, Route{Route::Kind::Host, id.value});
    }
    if (cfg.link_latency && cfg.link_jitter && *cfg.link_jitter >= *cfg.link_latency)
      throw std::invalid_argument("link jitter must be below latency");
    hosts_.push_back(HostState{cfg, IpIdGenerator(cfg, derive_seed(seed_, 0x1000000ull + id.value)), {}, {}, {}});
    return id;
  }

  void add_port_forward(NatId nat, std::uint16_t public_port, HostId host, std::uint16_t private_port, Proto proto) {
    check_host(host);
    if (hosts_[host.value].cfg.nat != nat) throw std::invalid_argument("port forward to a host outside the NAT");
    nats_.at(nat.value).forwards[port_key(public_port, proto)] = Forward{host, private_port};
  }

  std::size_t host_count() const { return hosts_.size(); }
  std::size_t nat_count() const { return nats_.size(); }
  const HostConfig& host(HostId h) const { return hosts_.at(h.value).cfg; }
  const NatConfig& nat(NatId n) const { return nats_.at(n.value).cfg; }
  bool is_natted(HostId h) const { return host(h).nat.has_value(); }

  Ipv4 public_ip(HostId h) const {
    const auto& cfg = host(h);
    return cfg.nat ? nats_[cfg.nat->value].cfg.public_ip : cfg.private_ip;
  }

  std::optional<HostId> public_host(Ipv4 ip) const {
    auto it = routes_.find(ip);
    if (it == routes_.end() || it->second.kind != Route::Kind::Host) return std::nullopt;
    return HostId{it->second.index};
  }

  std::optional<NatId> nat_at(Ipv4 ip) const {
    auto it = routes_.find(ip);
    if (it == routes_.end() || it->second.kind != Route::Kind::Nat) return std::nullopt;
    return NatId{it->second.index};
  }

  double now() const { return now_; }
  std::uint64_t seed() const { return seed_; }
  Rng& rng() { return rng_; }

  EventId schedule_send(SendRequest req) {
    check_host(req.src);
    if (req.at < now_) throw std::invalid_argument("send scheduled in the past");
    return push(req.at, PendingSend{std::move(req)});
  }

  EventId schedule_at(double t, std::function<void(Network&)> fn) {
    if (t < now_) throw std::invalid_argument("timer scheduled in the past");
    return push(t, std::move(fn));
  }

  std::uint16_t next_ipid(HostId h, const FlowKey& flow) {
    check_host(h);
    return hosts_[h.value].ipid.next(flow, now_);
  }

  void bind(HostId h, Proto proto, std::uint16_t port, Handler handler) {
    check_host(h);
    hosts_[h.value].handlers[port_key(port, proto)] = std::move(handler);
  }

  bool is_bound(HostId h, Proto proto, std::uint16_t port) const {
    return hosts_.at(h.value).handlers.count(port_key(port, proto)) != 0;
  }

  void add_edge_filter(HostId h, EdgeFilter f) {
    check_host(h);
    hosts_[h.value].filters.push_back(std::move(f));
  }

  TapId attach_tap(HostId h) {
    check_host(h);
    taps_.emplace_back(CaptureTap::Attach::Host, h.value, host(h).private_ip);
    TapId id = static_cast<TapId>(taps_.size() - 1);
    hosts_[h.value].taps.push_back(id);
    return id;
  }

  TapId attach_nat_tap(NatId n) {
    auto& nat = nats_.at(n.value);
    taps_.emplace_back(CaptureTap::Attach::NatPublic, n.value, nat.cfg.public_ip);
    TapId id = static_cast<TapId>(taps_.size() - 1);
    nat.taps.push_back(id);
    return id;
  }

  /// Stops recording; the captured packets stay readable.
  void detach_tap(TapId id) {
    const CaptureTap& t = taps_.at(id);
    auto& list = t.where() == CaptureTap::Attach::Host ? hosts_.at(t.target()).taps : nats_.at(t.target()).taps;
    list.erase(std::remove(list.begin(), list.end(), id), list.end());
  }

  CaptureTap& tap(TapId id) { return taps_.at(id); }
  const CaptureTap& tap(TapId id) const { return taps_.at(id); }

  const std::vector<DropRecord>& drops() const { return drops_; }
  void clear_drops() { drops_.clear(); }

  /// Executes every event with time <= until in (time, insertion) order.
  std::vector<EventRecord> advance(double until) {
    std::vector<EventRecord> log;
    run(until, &log);
    return log;
  }

  void run_until(double until) { run(until, nullptr); }

 private:
  struct PendingSend {
    SendRequest req;
  };
  struct PendingDeliver {
    SimPacket packet;
  };
  using Payload = std::variant<PendingSend, PendingDeliver, std::function<void(Network&)>>;

  struct QueueEntry {
    double t;
    EventId id;
    std::uint32_t slot;
    bool operator>(const QueueEntry& o) const { return t != o.t ? t > o.t : id > o.id; }
  };

  struct Forward {
    HostId host;
    std::uint16_t private_port;
  };

  struct Binding {
    HostId host;
    std::uint16_t private_port;
    std::unordered_set<Ipv4> contacted;
  };

  struct NatState {
    NatConfig cfg;
    std::unordered_map<Ipv4, HostId> private_hosts;
    std::unordered_map<std::uint32_t, Forward> forwards;  // port_key -> forward
    std::unordered_map<std::uint32_t, Binding> bindings;  // port_key(public) -> binding
    std::uint32_t next_port;
    std::map<std::tuple<std::uint32_t, std::uint16_t, Proto>, std::uint16_t> outbound;  // (private ip, port, proto) -> public port
    std::vector<TapId> taps;
  };

  struct HostState {
    HostConfig cfg;
    IpIdGenerator ipid;
    std::unordered_map<std::uint32_t, Handler> handlers;
    std::vector<EdgeFilter> filters;
    std::vector<TapId> taps;
  };

  struct Route {
    enum class Kind { Host, Nat } kind;
    std::uint32_t index;
  };

  static std::uint32_t port_key(std::uint16_t port, Proto proto) {
    return (std::uint32_t{port} << 1) | (proto == Proto::TCP ? 1u : 0u);
  }

  void check_host(HostId h) const {
    if (h.value >= hosts_.size()) throw std::out_of_range("unknown host " + std::to_string(h.value));
  }

  EventId push(double t, Payload payload) {
    std::uint32_t slot;
    if (!free_slots_.empty()) {
      slot = free_slots_.back();
      free_slots_.pop_back();
      slots_[slot] = std::move(payload);
    } else {
      slot = static_cast<std::uint32_t>(slots_.size());
      slots_.push_back(std::move(payload));
    }
    EventId id = next_event_++;
    queue_.push(QueueEntry{t, id, slot});
    return id;
  }

  void run(double until, std::vector<EventRecord>* log) {
    if (until < now_) throw std::invalid_argument("cannot advance backwards");
    while (!queue_.empty() && queue_.top().t <= until) {
      QueueEntry e = queue_.top();
      queue_.pop();
      now_ = e.t;
      Payload payload = std::move(slots_[e.slot]);
      free_slots_.push_back(e.slot);
      if (auto* s = std::get_if<PendingSend>(&payload)) {
        execute_send(e, std::move(s->req), log);
      } else if (auto* d = std::get_if<PendingDeliver>(&payload)) {
        execute_deliver(e, std::move(d->packet), log);
      } else {
        if (log) log->push_back({e.id, e.t, EventKind::Timer, 0});
        std::get<std::function<void(Network&)>>(payload)(*this);
      }
    }
    now_ = until;
  }

  bool filtered(HostState& h, const SimPacket& p, Direction dir) {
    for (auto& f : h.filters)
      if (f(p, dir, now_)) return true;
    return false;
  }

  void drop(const SimPacket& p, DropReason why, const QueueEntry& e, std::vector<EventRecord>* log) {
    drops_.push_back({now_, why, p});
    if (log) log->push_back({e.id, now_, EventKind::Drop, p.seq});
  }

  double sample_latency(const HostConfig& cfg) {
    double base = cfg.link_latency.value_or(link_.latency);
    double jit = cfg.link_jitter.value_or(link_.jitter);
    return jit > 0.0 ? base + uniform(rng_, -jit, jit) : base;
  }

  void execute_send(const QueueEntry& e, SendRequest req, std::vector<EventRecord>* log) {
    HostState& src = hosts_[req.src.value];
    SimPacket p;
    p.t_send = now_;
    p.src_ip = src.cfg.private_ip;
    p.src_port = req.src_port;
    p.dst_ip = req.dst.ip;
    p.dst_port = req.dst.port;
    p.proto = req.proto;
    p.tcp_flags = req.proto == Proto::TCP ? req.flags : 0;
    p.size = req.size;
    p.seq = next_seq_++;
    p.tag = req.tag;
    p.payload = std::move(req.payload);
    p.ip_id = src.ipid.next(FlowKey{req.dst.ip, req.dst.port, req.proto}, now_);
    p.t_recv = now_ + sample_latency(src.cfg);
    if (log) log->push_back({e.id, now_, EventKind::Send, p.seq});

    for (TapId t : src.taps) taps_[t].record(p);
    if (filtered(src, p, Direction::Outbound)) {
      drop(p, DropReason::EdgeFilter, e, log);
      return;
    }
    if (src.cfg.nat) {
      NatState& nat = nats_[src.cfg.nat->value];
      auto key = std::make_tuple(p.src_ip.value, p.src_port, p.proto);
      auto it = nat.outbound.find(key);
      std::uint16_t public_port;
      if (it == nat.outbound.end()) {
        public_port = allocate_port(nat, p.proto);
        nat.outbound.emplace(key, public_port);
        nat.bindings[port_key(public_port, p.proto)] = Binding{req.src, p.src_port, {}};
      } else {
        public_port = it->second;
      }
      nat.bindings[port_key(public_port, p.proto)].contacted.insert(p.dst_ip);
      p.src_ip = nat.cfg.public_ip;
      p.src_port = public_port;
      for (TapId t : nat.taps) taps_[t].record(p);
    }
    push(p.t_recv, PendingDeliver{std::move(p)});
  }

  std::uint16_t allocate_port(NatState& nat, Proto proto) {
    for (;;) {
      if (nat.next_port > 65535) throw std::runtime_error("NAT port space exhausted");
      auto candidate = static_cast<std::uint16_t>(nat.next_port++);
      auto k = port_key(candidate, proto);
      if (!nat.forwards.count(k) && !nat.bindings.count(k)) return candidate;
    }
  }

  void execute_deliver(const QueueEntry& e, SimPacket p, std::vector<EventRecord>* log) {
    auto route = routes_.find(p.dst_ip);
    if (route == routes_.end()) {
      drop(p, DropReason::Unroutable, e, log);
      return;
    }
    HostId dst;
    if (route->second.kind == Route::Kind::Nat) {
      NatState& nat = nats_[route->second.index];
      for (TapId t : nat.taps) taps_[t].record(p);
      auto k = port_key(p.dst_port, p.proto);
      auto b = nat.bindings.find(k);
      if (b != nat.bindings.end() && b->second.contacted.count(p.src_ip)) {
        dst = b->second.host;
        p.dst_port = b->second.private_port;
      } else if (auto f = nat.forwards.find(k); f != nat.forwards.end() && nat.cfg.accepts_unsolicited_inbound) {
        dst = f->second.host;
        p.dst_port = f->second.private_port;
      } else {
        drop(p, DropReason::NatNoBinding, e, log);
        return;
      }
      p.dst_ip = hosts_[dst.value].cfg.private_ip;
    } else {
      dst = HostId{route->second.index};
    }
    HostState& h = hosts_[dst.value];
    for (TapId t : h.taps) taps_[t].record(p);
    if (filtered(h, p, Direction::Inbound)) {
      drop(p, DropReason::EdgeFilter, e, log);
      return;
    }
    if (log) log->push_back({e.id, now_, EventKind::Deliver, p.seq});
    auto handler = h.handlers.find(port_key(p.dst_port, p.proto));
    if (handler != h.handlers.end()) {
      Handler fn = handler->second;  // the handler may rebind its own port
      fn(*this, p);
    }
  }

  std::uint64_t seed_;
  LinkModel link_;
  Rng rng_;
  double now_ = 0.0;
  EventId next_event_ = 1;
  std::uint64_t next_seq_ = 1;
  std::vector<HostState> hosts_;
  std::vector<NatState> nats_;
  std::unordered_map<Ipv4, Route> routes_;
  std::vector<CaptureTap> taps_;
  std::vector<DropRecord> drops_;
  std::priority_queue<QueueEntry, std::vector<QueueEntry>, std::greater<>> queue_;
  std::vector<Payload> slots_;
  std::vector<std::uint32_t> free_slots_;
};

// ---------------------------------------------------------------------------
// Trace text format: one packet per line,
//   t_send t_recv src_ip src_port dst_ip dst_port proto flags size ip_id

inline std::string flags_string(std::uint8_t f) {
  std::string s;
  if (f & tcp::SYN) s += 'S';
  if (f & tcp::ACK) s += 'A';
  if (f & tcp::RST) s += 'R';
  if (f & tcp::PSH) s += 'P';
  if (f & tcp::FIN) s += 'F';
  return s.empty() ? "-" : s;
}

inline std::uint8_t parse_flags(std::string_view s) {
  if (s == "-") return 0;
  std::uint8_t f = 0;
  for (char c : s) {
    switch (c) {
      case 'S': f |= tcp::SYN; break;
      case 'A': f |= tcp::ACK; break;
      case 'R': f |= tcp::RST; break;
      case 'P': f |= tcp::PSH; break;
      case 'F': f |= tcp::FIN; break;
      default: throw std::invalid_argument("bad TCP flag '" + std::string(1, c) + "'");
    }
  }
  return f;
}

inline std::string format_packet(const SimPacket& p) {
  char buf[64];
  std::string out;
  std::snprintf(buf, sizeof buf, "%.6f %.6f ", p.t_send, p.t_recv);
  out += buf;
  out += p.src_ip.str() + " " + std::to_string(p.src_port) + " ";
  out += p.dst_ip.str() + " " + std::to_string(p.dst_port) + " ";
  out += p.proto == Proto::TCP ? "TCP " : "UDP ";
  out += flags_string(p.tcp_flags) + " ";
  out += std::to_string(p.size) + " " + std::to_string(p.ip_id);
  return out;
}

inline void write_trace(std::ostream& os, const std::vector<SimPacket>& trace) {
  for (const auto& p : trace) os << format_packet(p) << '\n';
}

inline SimPacket parse_packet(const std::string& line) {
  std::istringstream in(line);
  SimPacket p;
  std::string src, dst, proto, flags;
  unsigned sport = 0, dport = 0, ipid = 0;
  if (!(in >> p.t_send >> p.t_recv >> src >> sport >> dst >> dport >> proto >> flags >> p.size >> ipid))
    throw std::invalid_argument("malformed trace line: " + line);
  if (sport > 65535 || dport > 65535 || ipid >= kIpIdSpace) throw std::invalid_argument("field out of range: " + line);
  p.src_ip = Ipv4::must_parse(src);
  p.dst_ip = Ipv4::must_parse(dst);
  p.src_port = static_cast<std::uint16_t>(sport);
  p.dst_port = static_cast<std::uint16_t>(dport);
  if (proto == "TCP") p.proto = Proto::TCP;
  else if (proto == "UDP") p.proto = Proto::UDP;
  else throw std::invalid_argument("bad protocol: " + proto);
  p.tcp_flags = parse_flags(flags);
  p.ip_id = static_cast<std::uint16_t>(ipid);
  return p;
}

inline std::vector<SimPacket> read_trace(std::istream& is) {
  std::vector<SimPacket> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    out.push_back(parse_packet(line));
    out.back().seq = out.size();
  }
  return out;
}

}  // namespace rtcleak::netsim
