#pragma once

// Same-machine verification through IP-ID proximity: an inconspicuous call and
// a BitTorrent handshake are started at the same instant, and the IP-IDs of
// the first packet each protocol gets back are compared on the 2^16 ring.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rtcleak/btswarm.hpp"
#include "rtcleak/netsim.hpp"
#include "rtcleak/overlay.hpp"
#include "rtcleak/sniffer.hpp"
#include "rtcleak/tracker.hpp"

namespace rtcleak::verifier {

inline std::uint32_t ring_distance(std::uint32_t a, std::uint32_t b, std::uint32_t m = netsim::kIpIdSpace) {
  if (m == 0 || a >= m || b >= m) throw std::out_of_range("ring_distance operand outside [0, m)");
  std::uint32_t d = a >= b ? a - b : b - a;
  return std::min(d, m - d);
}

/// ceil(p/100 * n)-th smallest value.
template <class T>
T percentile_nearest_rank(std::vector<T> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty set");
  if (!(p > 0.0 && p <= 100.0)) throw std::invalid_argument("percentile must lie in (0, 100]");
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
  return values[rank - 1];
}

struct VerifierConfig {
  std::uint32_t ring_modulus = netsim::kIpIdSpace;
  std::uint32_t threshold = 1000;
  int min_rounds = 10;
  double round_spacing = 60.0;
  int max_attempts = 0;  // 0 means 2 * min_rounds
  double percentile = 90.0;
  int lanes = 10;  // candidates probed concurrently, one tracking client each

  int attempts_limit() const { return max_attempts > 0 ? max_attempts : 2 * min_rounds; }

  void validate() const {
    if (ring_modulus == 0) throw std::invalid_argument("ring modulus must be positive");
    if (threshold >= ring_modulus / 2) throw std::invalid_argument("threshold must be below half the ring");
    if (min_rounds < 1) throw std::invalid_argument("min_rounds must be positive");
    if (round_spacing <= 0.0) throw std::invalid_argument("round spacing must be positive");
    if (attempts_limit() < min_rounds) throw std::invalid_argument("max_attempts below min_rounds");
    if (lanes < 1) throw std::invalid_argument("at least one verifier lane is required");
  }
};

struct ProbeRound {
  double t = 0.0;
  std::uint16_t ipid_rtc = 0;
  std::uint16_t ipid_bt = 0;
  std::uint32_t distance = 0;
};

enum class Verdict { Verified, NotVerified, Unverifiable };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Verified: return "Verified";
    case Verdict::NotVerified: return "NotVerified";
    case Verdict::Unverifiable: return "Unverifiable";
  }
  return "?";
}

struct VerificationResult {
  std::size_t candidate_id = 0;
  std::vector<ProbeRound> rounds;
  std::optional<std::uint32_t> p90;
  Verdict verdict = Verdict::Unverifiable;
  int attempts = 0;
};

/// Verified iff enough rounds and the percentile distance is below threshold.
inline void judge(VerificationResult& r, const VerifierConfig& cfg) {
  if (r.rounds.empty()) {
    r.p90.reset();
    r.verdict = Verdict::Unverifiable;
    return;
  }
  std::vector<std::uint32_t> d;
  for (const auto& pr : r.rounds) d.push_back(pr.distance);
  r.p90 = percentile_nearest_rank(d, cfg.percentile);
  bool enough = r.rounds.size() >= static_cast<std::size_t>(cfg.min_rounds);
  r.verdict = enough && *r.p90 < cfg.threshold ? Verdict::Verified : Verdict::NotVerified;
}

/// `candidate_id rounds p90 verdict`
inline std::string format_result(const VerificationResult& r) {
  std::string p90 = r.p90 ? std::to_string(*r.p90) : "-";
  return std::to_string(r.candidate_id) + " " + std::to_string(r.rounds.size()) + " " + p90 + " " + to_string(r.verdict);
}

/// Sorted 90th percentiles of every judged candidate, as rank,p90 pairs.
inline std::vector<tracker::XY> p90_curve(const std::vector<VerificationResult>& results) {
  std::vector<double> v;
  for (const auto& r : results)
    if (r.p90) v.push_back(static_cast<double>(*r.p90));
  std::sort(v.begin(), v.end());
  std::vector<tracker::XY> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back({static_cast<double>(i + 1), v[i]});
  return out;
}

/// Drives probe rounds. Each lane owns a public tracking client whose SYNs are
/// suppressed; the handshake client is a separate host so its own SYNs pass.
class Verifier {
 public:
  Verifier(rtcdir::Overlay& overlay, std::vector<tracker::TrackingClient> lanes, btswarm::HandshakeClient& handshaker,
           VerifierConfig cfg, sniffer::ClassifierConfig classifier = {})
      : overlay_(overlay), lanes_(std::move(lanes)), hs_(handshaker), cfg_(cfg), classifier_(classifier) {
    cfg_.validate();
    classifier_.validate();
    if (lanes_.size() < static_cast<std::size_t>(cfg_.lanes))
      throw std::invalid_argument("fewer tracking clients than verifier lanes");
    lanes_.resize(static_cast<std::size_t>(cfg_.lanes));
    auto& net = overlay_.network();
    for (const auto& l : lanes_) {
      if (net.is_natted(l.host)) throw std::invalid_argument("verifier tracking client behind a NAT");
      if (l.host == hs_.host()) throw std::invalid_argument("handshake client must not share a host with a tracking client");
      taps_.push_back(net.attach_tap(l.host));
      sniffer::apply_syn_filter(net, l.host, {0.0, 1e300});
    }
  }

  const VerifierConfig& config() const { return cfg_; }

  /// Probes every candidate, `lanes` at a time, starting no earlier than t0.
  std::vector<VerificationResult> run(const std::vector<btswarm::MatchCandidate>& cands, double t0) {
    std::vector<VerificationResult> out(cands.size());
    double t = std::max(t0, overlay_.network().now());
    for (std::size_t base = 0; base < cands.size(); base += lanes_.size()) {
      std::size_t n = std::min(lanes_.size(), cands.size() - base);
      std::vector<std::size_t> active;
      for (std::size_t i = 0; i < n; ++i) {
        out[base + i].candidate_id = base + i;
        active.push_back(i);
      }
      while (!active.empty()) {
        std::vector<std::size_t> next;
        probe_round(cands, base, active, t, out);
        for (auto i : active) {
          auto& r = out[base + i];
          bool done = r.rounds.size() >= static_cast<std::size_t>(cfg_.min_rounds) || r.attempts >= cfg_.attempts_limit();
          if (!done) next.push_back(i);
        }
        active = std::move(next);
        t += cfg_.round_spacing;
      }
    }
    for (auto& r : out) judge(r, cfg_);
    return out;
  }

 private:
  void probe_round(const std::vector<btswarm::MatchCandidate>& cands, std::size_t base,
                   const std::vector<std::size_t>& active, double t, std::vector<VerificationResult>& out) {
    auto& net = overlay_.network();
    std::vector<std::optional<std::size_t>> handles(lanes_.size());
    for (auto i : active) {
      const auto& c = cands[base + i];
      ++out[base + i].attempts;
      // A candidate that is offline now is simply a failed round.
      if (!overlay_.online_sessions(c.user, t).empty() || overlay_.last_seen(c.user, t)) {
        rtcdir::CallRequest req;
        req.caller = lanes_[i].rtc_id;
        req.callee = c.user;
        req.t_start = t;
        overlay_.place_call(req);
      }
      handles[i] = hs_.start(Endpoint{c.ip, c.port}, c.infohash, t);
    }
    double end = t + std::min(cfg_.round_spacing, classifier_.pattern_window + 5.0);
    net.run_until(end);
    for (std::size_t i = 0; i < lanes_.size(); ++i) {
      auto trace = net.tap(taps_[i]).take();
      if (std::find(active.begin(), active.end(), i) == active.end()) continue;
      const auto& c = cands[base + i];
      const auto& hs = hs_.result(*handles[i]);
      if (!hs.first_response) continue;
      auto matches = sniffer::classify_trace(trace, net.public_ip(lanes_[i].host), classifier_);
      const netsim::SimPacket* first = nullptr;
      for (const auto& m : matches) {
        if (m.candidate_ip != c.ip || m.t_first < t) continue;
        if (const auto* p = m.first_callee_packet(); p && (!first || netsim::tap_time(*p, p->dst_ip) < netsim::tap_time(*first, first->dst_ip)))
          first = p;
      }
      if (!first) continue;
      ProbeRound pr;
      pr.t = t;
      pr.ipid_rtc = first->ip_id;
      pr.ipid_bt = hs.first_response->ip_id;
      pr.distance = ring_distance(pr.ipid_rtc, pr.ipid_bt, cfg_.ring_modulus);
      out[base + i].rounds.push_back(pr);
    }
  }

  rtcdir::Overlay& overlay_;
  std::vector<tracker::TrackingClient> lanes_;
  btswarm::HandshakeClient& hs_;
  VerifierConfig cfg_;
  sniffer::ClassifierConfig classifier_;
  std::vector<netsim::TapId> taps_;
};

}  // namespace rtcleak::verifier
