#pragma once

// Caller-side trace analysis: the SYN-suppression filter that keeps calls
// inconspicuous, and the classifier that finds callee addresses in a capture.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rtcleak/netsim.hpp"

namespace rtcleak::sniffer {

using netsim::SimPacket;

struct SynFilterPolicy {
  double t_begin = 0.0;
  double t_end = 0.0;
};

/// Drops every TCP packet carrying SYN, in either direction, at `host`'s edge
/// during the window. Other packets, including those of older connections, pass.
inline void apply_syn_filter(netsim::Network& net, netsim::HostId host, SynFilterPolicy policy) {
  if (policy.t_end < policy.t_begin) throw std::invalid_argument("SYN filter window ends before it begins");
  net.add_edge_filter(host, [policy](const SimPacket& p, netsim::Direction, double now) {
    return p.is_syn() && now >= policy.t_begin && now < policy.t_end;
  });
}

enum class PatternKind { I, II, III };

inline const char* to_string(PatternKind k) {
  switch (k) {
    case PatternKind::I: return "I";
    case PatternKind::II: return "II";
    case PatternKind::III: return "III";
  }
  return "?";
}

struct PatternMatch {
  PatternKind kind = PatternKind::I;
  Ipv4 candidate_ip;
  double t_first = 0.0;
  double score = 0.0;
  std::vector<SimPacket> packets;  // pattern packets plus callee-originated ones, tap order

  bool stale() const { return kind == PatternKind::III; }

  /// First packet the callee side sent within this pattern, if any.
  const SimPacket* first_callee_packet() const {
    for (const auto& p : packets)
      if (p.src_ip == candidate_ip) return &p;
    return nullptr;
  }
};

struct ClassifierConfig {
  double timing_tolerance = 0.25;  // fraction of each nominal gap
  double min_score = 0.8;
  double pattern_window = 20.0;
  double echo_timeout = 1.0;  // caller's 28-byte echo must follow within this

  void validate() const {
    if (!(timing_tolerance > 0.0 && timing_tolerance < 0.5))
      throw std::invalid_argument("timing_tolerance must lie in (0, 0.5)");
    if (min_score < 0.0 || min_score > 1.0) throw std::invalid_argument("min_score must lie in [0, 1]");
    if (pattern_window <= 0.0) throw std::invalid_argument("pattern_window must be positive");
  }
};

// Nominal timings of the three patterns, in seconds.
namespace timing {
inline constexpr std::array<double, 3> kSynSlots = {0.0, 3.0, 4.0};   // first timeout 3 s, second 1 s
inline constexpr std::array<double, 3> kUdpSlots = {0.0, 2.0, 6.0};   // gaps 2 s and 4 s
inline constexpr std::array<double, 4> kNatSlots = {0.0, 10.0, 11.0, 12.0};  // 28 B, then 3 B tail
inline constexpr int kCallerConstraints = 7;
inline constexpr int kNatConstraints = 6;
}  // namespace timing

namespace detail {

struct Timed {
  double t;
  std::size_t idx;  // into the trace
};

// Best assignment of packets to the slot template. Each assigned slot must sit
// within tol * distance of the previous assigned slot's packet, so a missing
// slot widens the allowance to the summed gap. Ranking: most slots filled,
// then earliest start, then smallest normalised deviation.
template <std::size_t N>
struct SlotFit {
  int filled = 0;
  std::array<std::optional<std::size_t>, N> chosen{};  // positions into the candidate list
  double start = 0.0;
  double deviation = 0.0;
};

template <std::size_t N>
SlotFit<N> fit_slots(std::span<const Timed> cand, const std::vector<bool>& used, const std::array<double, N>& slots,
                     double tol, std::optional<std::size_t> fixed_first = std::nullopt) {
  SlotFit<N> best;
  SlotFit<N> cur;
  std::vector<bool> taken(cand.size());
  auto better = [](const SlotFit<N>& a, const SlotFit<N>& b) {
    if (a.filled != b.filled) return a.filled > b.filled;
    if (a.start != b.start) return a.start < b.start;
    return a.deviation < b.deviation;
  };
  // cand is time ordered.
  auto dfs = [&](auto&& self, std::size_t j, std::optional<std::size_t> last) -> void {
    if (cur.filled + static_cast<int>(N - j) < best.filled) return;
    if (j == N) {
      if (cur.filled > 0 && (best.filled == 0 || better(cur, best))) best = cur;
      return;
    }
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (used[i] || taken[i]) continue;
      if (j == 0 && fixed_first && i != *fixed_first) continue;
      double dev = 0.0;
      if (last) {
        double dist = slots[j] - slots[*last];
        double expected = cand[*cur.chosen[*last]].t + dist;
        double width = tol * dist;
        if (cand[i].t > expected + width) break;
        if (cand[i].t < expected - width) continue;
        dev = std::abs(cand[i].t - expected) / width;
      }
      bool first = !last;
      double saved_start = cur.start;
      if (first) cur.start = cand[i].t - slots[j];
      cur.chosen[j] = i;
      taken[i] = true;
      ++cur.filled;
      cur.deviation += dev;
      self(self, j + 1, j);
      cur.deviation -= dev;
      --cur.filled;
      taken[i] = false;
      cur.chosen[j].reset();
      cur.start = saved_start;
    }
    if (!(j == 0 && fixed_first)) self(self, j + 1, last);
  };
  dfs(dfs, 0, std::nullopt);
  return best;
}

struct RemoteGroup {
  std::vector<Timed> out_syn;
  std::vector<Timed> out_marker;  // outbound UDP 58/59
  std::vector<Timed> inbound;
};

struct EndpointGroup {
  std::vector<Timed> udp;  // every UDP packet with this endpoint, either direction
};

}  // namespace detail

/// Finds pattern instances in a caller-side capture whose local address is `local`.
inline std::vector<PatternMatch> classify_trace(std::span<const SimPacket> trace, Ipv4 local,
                                                const ClassifierConfig& cfg = {}) {
  cfg.validate();
  std::vector<PatternMatch> matches;
  if (trace.empty()) return matches;
  using detail::Timed;
  const double tol = cfg.timing_tolerance;

  std::map<Ipv4, detail::RemoteGroup> remotes;
  std::map<Endpoint, detail::EndpointGroup> endpoints;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const SimPacket& p = trace[i];
    bool outbound = p.src_ip == local;
    if (!outbound && p.dst_ip != local) continue;
    double t = netsim::tap_time(p, local);
    Ipv4 remote = outbound ? p.dst_ip : p.src_ip;
    auto& g = remotes[remote];
    if (outbound) {
      if (p.proto == netsim::Proto::TCP && p.has_flag(netsim::tcp::SYN) && !p.has_flag(netsim::tcp::ACK))
        g.out_syn.push_back({t, i});
      else if (p.proto == netsim::Proto::UDP && (p.size == 58 || p.size == 59))
        g.out_marker.push_back({t, i});
    } else {
      g.inbound.push_back({t, i});
    }
    if (p.proto == netsim::Proto::UDP) endpoints[outbound ? p.dst() : p.src()].udp.push_back({t, i});
  }
  auto by_time = [](const Timed& a, const Timed& b) { return a.t != b.t ? a.t < b.t : a.idx < b.idx; };

  // Kinds I and III: caller-initiated SYN triple plus 59/58-byte UDP triple.
  for (auto& [ip, g] : remotes) {
    std::sort(g.out_syn.begin(), g.out_syn.end(), by_time);
    std::sort(g.out_marker.begin(), g.out_marker.end(), by_time);
    std::sort(g.inbound.begin(), g.inbound.end(), by_time);
    std::vector<bool> syn_used(g.out_syn.size()), udp_used(g.out_marker.size());
    for (;;) {
      // Earliest unconsumed anchor of either sub-pattern.
      std::optional<double> anchor;
      std::optional<std::pair<int, std::size_t>> anchor_ref;
      for (std::size_t i = 0; i < g.out_syn.size(); ++i)
        if (!syn_used[i]) {
          anchor = g.out_syn[i].t;
          anchor_ref = {{0, i}};
          break;
        }
      for (std::size_t i = 0; i < g.out_marker.size(); ++i)
        if (!udp_used[i]) {
          if (!anchor || g.out_marker[i].t < *anchor) {
            anchor = g.out_marker[i].t;
            anchor_ref = {{1, i}};
          }
          break;
        }
      if (!anchor) break;

      auto window_of = [&](const std::vector<Timed>& v, const std::vector<bool>& used, std::vector<Timed>& sub,
                           std::vector<bool>& sub_used, std::vector<std::size_t>& map) {
        for (std::size_t i = 0; i < v.size(); ++i)
          if (v[i].t >= *anchor && v[i].t <= *anchor + cfg.pattern_window) {
            sub.push_back(v[i]);
            sub_used.push_back(used[i]);
            map.push_back(i);
          }
      };
      std::vector<Timed> syn_w, udp_w;
      std::vector<bool> syn_wu, udp_wu;
      std::vector<std::size_t> syn_map, udp_map;
      window_of(g.out_syn, syn_used, syn_w, syn_wu, syn_map);
      window_of(g.out_marker, udp_used, udp_w, udp_wu, udp_map);
      auto syn_fit = detail::fit_slots<3>(syn_w, syn_wu, timing::kSynSlots, tol);
      auto udp_fit = detail::fit_slots<3>(udp_w, udp_wu, timing::kUdpSlots, tol);

      double t_first = *anchor + cfg.pattern_window;
      std::vector<std::size_t> pkt_idx;
      for (auto& c : syn_fit.chosen)
        if (c) {
          t_first = std::min(t_first, syn_w[*c].t);
          pkt_idx.push_back(syn_w[*c].idx);
        }
      for (auto& c : udp_fit.chosen)
        if (c) {
          t_first = std::min(t_first, udp_w[*c].t);
          pkt_idx.push_back(udp_w[*c].idx);
        }
      std::size_t responses = 0;
      for (const auto& in : g.inbound)
        if (in.t >= t_first && in.t <= t_first + cfg.pattern_window) {
          ++responses;
          pkt_idx.push_back(in.idx);
        }
      // The direction constraint always holds for exactly one of I / III.
      int satisfied = syn_fit.filled + udp_fit.filled + 1;
      double score = static_cast<double>(satisfied) / timing::kCallerConstraints;
      if (score >= cfg.min_score) {
        PatternMatch m;
        m.kind = responses > 0 ? PatternKind::I : PatternKind::III;
        m.candidate_ip = ip;
        m.t_first = t_first;
        m.score = score;
        std::sort(pkt_idx.begin(), pkt_idx.end());
        for (auto i : pkt_idx) m.packets.push_back(trace[i]);
        matches.push_back(std::move(m));
        for (auto& c : syn_fit.chosen)
          if (c) syn_used[syn_map[*c]] = true;
        for (auto& c : udp_fit.chosen)
          if (c) udp_used[udp_map[*c]] = true;
      }
      if (anchor_ref->first == 0) syn_used[anchor_ref->second] = true;
      else udp_used[anchor_ref->second] = true;
    }
  }

  // Kind II: callee-initiated 28-byte first contact, echoed, then a 3-byte tail.
  for (auto& [ep, g] : endpoints) {
    std::sort(g.udp.begin(), g.udp.end(), by_time);
    std::vector<Timed> tails;
    for (const auto& u : g.udp)
      if (trace[u.idx].src_ip == ep.ip && trace[u.idx].size == 3) tails.push_back(u);
    std::vector<bool> tail_used(tails.size());
    for (std::size_t a = 0; a < g.udp.size(); ++a) {
      const SimPacket& first = trace[g.udp[a].idx];
      if (first.src_ip != ep.ip || first.size != 28) continue;
      double ta = g.udp[a].t;
      int satisfied = 1;
      bool first_contact = a == 0 || g.udp[a - 1].t < ta - cfg.pattern_window;
      satisfied += first_contact;
      std::optional<std::size_t> echo;
      for (std::size_t b = a + 1; b < g.udp.size() && g.udp[b].t <= ta + cfg.echo_timeout; ++b) {
        const SimPacket& q = trace[g.udp[b].idx];
        if (q.dst_ip == ep.ip && q.size == 28) {
          echo = g.udp[b].idx;
          break;
        }
      }
      satisfied += echo.has_value();

      // Tail slots are fitted relative to the 28-byte anchor at slot 0.
      std::vector<Timed> cand{g.udp[a]};
      std::vector<bool> cand_used{false};
      std::vector<std::size_t> map{SIZE_MAX};
      for (std::size_t i = 0; i < tails.size(); ++i)
        if (tails[i].t > ta && tails[i].t <= ta + cfg.pattern_window) {
          cand.push_back(tails[i]);
          cand_used.push_back(tail_used[i]);
          map.push_back(i);
        }
      auto fit = detail::fit_slots<4>(cand, cand_used, timing::kNatSlots, tol, std::size_t{0});
      satisfied += fit.filled - 1;
      double score = static_cast<double>(satisfied) / timing::kNatConstraints;
      if (score < cfg.min_score) continue;
      PatternMatch m;
      m.kind = PatternKind::II;
      m.candidate_ip = ep.ip;
      m.t_first = ta;
      m.score = score;
      std::vector<std::size_t> idx{g.udp[a].idx};
      if (echo) idx.push_back(*echo);
      for (std::size_t s = 1; s < 4; ++s)
        if (fit.chosen[s]) {
          idx.push_back(cand[*fit.chosen[s]].idx);
          tail_used[map[*fit.chosen[s]]] = true;
        }
      std::sort(idx.begin(), idx.end());
      for (auto i : idx) m.packets.push_back(trace[i]);
      matches.push_back(std::move(m));
    }
  }

  std::sort(matches.begin(), matches.end(), [](const PatternMatch& a, const PatternMatch& b) {
    if (a.t_first != b.t_first) return a.t_first < b.t_first;
    return a.candidate_ip < b.candidate_ip;
  });
  return matches;
}

struct ExtractedIp {
  Ipv4 ip;
  PatternKind kind = PatternKind::I;
  double score = 0.0;
  double t_first = 0.0;
  bool stale = false;
};

/// Unique candidate addresses ranked by score, ties by earliest first packet.
inline std::vector<ExtractedIp> extract_callee_ips(std::span<const PatternMatch> matches) {
  std::vector<ExtractedIp> all;
  for (const auto& m : matches) all.push_back({m.candidate_ip, m.kind, m.score, m.t_first, m.stale()});
  std::sort(all.begin(), all.end(), [](const ExtractedIp& a, const ExtractedIp& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.t_first != b.t_first) return a.t_first < b.t_first;
    return a.ip < b.ip;
  });
  std::vector<ExtractedIp> out;
  for (const auto& e : all)
    if (std::none_of(out.begin(), out.end(), [&](const ExtractedIp& o) { return o.ip == e.ip; })) out.push_back(e);
  return out;
}

/// `call_id kind candidate_ip score t_first stale`
inline std::string format_match(std::uint64_t call_id, const PatternMatch& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, " %.4f %.6f %d", m.score, m.t_first, m.stale() ? 1 : 0);
  return std::to_string(call_id) + " " + to_string(m.kind) + " " + m.candidate_ip.str() + buf;
}

}  // namespace rtcleak::sniffer
