#include <gtest/gtest.h>

#include <set>

#include "rtcleak/sniffer.hpp"
#include "rtcleak/world.hpp"

using namespace rtcleak;
using netsim::Proto;
using netsim::SimPacket;
using sniffer::PatternKind;

namespace {

const Ipv4 kLocal = Ipv4::must_parse("198.18.0.10");
const Ipv4 kCallee = Ipv4::must_parse("203.0.113.7");

std::uint64_t g_seq = 1;

SimPacket pkt(Ipv4 src, Ipv4 dst, double t, Proto proto, std::uint32_t size, std::uint8_t flags = 0,
              std::uint16_t sport = 33033, std::uint16_t dport = 33033) {
  SimPacket p;
  p.src_ip = src;
  p.dst_ip = dst;
  p.t_send = t;
  p.t_recv = t;
  p.proto = proto;
  p.size = size;
  p.tcp_flags = flags;
  p.src_port = sport;
  p.dst_port = dport;
  p.seq = g_seq++;
  return p;
}

// Caller-initiated pattern toward `ip` with per-gap multipliers.
void add_caller_initiated(std::vector<SimPacket>& tr, Ipv4 ip, double t0, double j1 = 1, double j2 = 1,
                          double j3 = 1, double j4 = 1, bool answered = true) {
  double s = t0;
  for (double g : {0.0, 3.0 * j1, 1.0 * j2}) {
    s += g;
    tr.push_back(pkt(kLocal, ip, s, Proto::TCP, 0, netsim::tcp::SYN, 40001));
  }
  double u = t0 + 0.4;
  for (double g : {0.0, 2.0 * j3, 4.0 * j4}) {
    u += g;
    tr.push_back(pkt(kLocal, ip, u, Proto::UDP, 59));
  }
  if (answered) tr.push_back(pkt(ip, kLocal, t0 + 0.5, Proto::UDP, 77));
}

void add_callee_initiated(std::vector<SimPacket>& tr, Ipv4 ip, double t0, double tail_mult = 1.0) {
  tr.push_back(pkt(ip, kLocal, t0, Proto::UDP, 28));
  tr.push_back(pkt(kLocal, ip, t0 + 0.01, Proto::UDP, 28));
  tr.push_back(pkt(ip, kLocal, t0 + 2.0, Proto::UDP, 64));
  tr.push_back(pkt(kLocal, ip, t0 + 3.0, Proto::UDP, 91));
  double t = t0 + 10.0 * tail_mult;
  for (int k = 0; k < 3; ++k, t += 1.0) tr.push_back(pkt(ip, kLocal, t, Proto::UDP, 3));
}

// Signaling-like chatter with peers: no SYNs, at most two outbound 58/59 per peer.
void add_noise(std::vector<SimPacket>& tr, Rng& rng, int peers, double t0) {
  for (int i = 0; i < peers; ++i) {
    Ipv4 peer{0x64400000u + 10u + static_cast<std::uint32_t>(i)};
    int markers = 0;
    auto n = uniform_int(rng, 5, 20);
    for (std::int64_t k = 0; k < n; ++k) {
      double t = t0 + uniform(rng, 0.0, 15.0);
      bool out = chance(rng, 0.5);
      std::uint32_t size;
      if (out && markers < 2 && chance(rng, 0.3)) {
        size = chance(rng, 0.5) ? 58 : 59;
        ++markers;
      } else {
        do size = static_cast<std::uint32_t>(uniform_int(rng, 20, 200));
        while (size == 28 || size == 58 || size == 59 || size == 3);
      }
      tr.push_back(out ? pkt(kLocal, peer, t, Proto::UDP, size) : pkt(peer, kLocal, t, Proto::UDP, size));
    }
  }
}

void sort(std::vector<SimPacket>& tr) { netsim::CaptureTap::sort_trace(tr, kLocal); }

std::multiset<PatternKind> kinds(const std::vector<sniffer::PatternMatch>& m) {
  std::multiset<PatternKind> out;
  for (const auto& x : m) out.insert(x.kind);
  return out;
}

}  // namespace

TEST(Classifier, CaseOneAmidFifteenNoiseFlows) {
  std::vector<SimPacket> tr;
  Rng rng(5);
  add_noise(tr, rng, 15, 0.0);
  add_caller_initiated(tr, kCallee, 2.0);
  sort(tr);
  auto m = sniffer::classify_trace(tr, kLocal);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].kind, PatternKind::I);
  EXPECT_EQ(m[0].candidate_ip, kCallee);
  EXPECT_DOUBLE_EQ(m[0].score, 1.0);
  EXPECT_DOUBLE_EQ(m[0].t_first, 2.0);
  ASSERT_NE(m[0].first_callee_packet(), nullptr);
  EXPECT_EQ(m[0].first_callee_packet()->size, 77u);
}

TEST(Classifier, UnansweredCallerPatternIsStale) {
  std::vector<SimPacket> tr;
  add_caller_initiated(tr, kCallee, 1.0, 1, 1, 1, 1, false);
  sort(tr);
  auto m = sniffer::classify_trace(tr, kLocal);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].kind, PatternKind::III);
  EXPECT_TRUE(m[0].stale());
  EXPECT_EQ(m[0].first_callee_packet(), nullptr);
}

TEST(Classifier, CalleeInitiatedPattern) {
  std::vector<SimPacket> tr;
  add_callee_initiated(tr, kCallee, 4.0);
  sort(tr);
  auto m = sniffer::classify_trace(tr, kLocal);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].kind, PatternKind::II);
  EXPECT_EQ(m[0].candidate_ip, kCallee);
  EXPECT_DOUBLE_EQ(m[0].score, 1.0);
  EXPECT_EQ(m[0].packets.size(), 5u);  // 28, echo, three tail datagrams
}

TEST(Classifier, TailOutsideToleranceLowersScore) {
  std::vector<SimPacket> tr;
  add_callee_initiated(tr, kCallee, 4.0, 1.5);  // tail at +15 s
  sort(tr);
  for (const auto& m : sniffer::classify_trace(tr, kLocal)) EXPECT_LT(m.score, 1.0);
}

TEST(Classifier, DualLoginYieldsOneOfEachKind) {
  world::WorldConfig wc;
  wc.seed = 12;
  world::World w(wc);
  auto caller = w.add_tracking_client("tracker.001");
  auto tap = w.net.attach_tap(caller.host);
  w.add_user("callee.dual");
  auto pub = w.add_public_host(0);
  auto nat = w.add_natted_host(w.add_nat(1));
  w.overlay.login("callee.dual", pub, 0.0);
  w.overlay.login("callee.dual", nat, 0.0);
  sniffer::apply_syn_filter(w.net, caller.host, {10.0, 60.0});
  rtcdir::CallRequest r{caller.rtc_id, "callee.dual", 10.0, {}, {}};
  w.overlay.place_call(r);
  w.net.advance(60.0);
  auto tr = w.net.tap(tap).trace();
  auto m = sniffer::classify_trace(tr, w.net.public_ip(caller.host));
  EXPECT_EQ(kinds(m), (std::multiset<PatternKind>{PatternKind::I, PatternKind::II}));
  std::set<Ipv4> ips;
  for (const auto& x : m) ips.insert(x.candidate_ip);
  EXPECT_EQ(ips, (std::set<Ipv4>{w.net.public_ip(pub), w.net.public_ip(nat)}));
  EXPECT_TRUE(w.overlay.notifications().empty());
}

TEST(Classifier, NoiseOnlyTracesNeverMatch) {
  world::WorldConfig wc;
  wc.seed = 99;
  world::World w(wc);
  auto caller = w.add_tracking_client("tracker.001");
  w.add_user("never.online");
  auto local = w.net.public_ip(caller.host);
  auto tap = w.net.attach_tap(caller.host);
  std::size_t false_hits = 0;
  for (int i = 0; i < 10000; ++i) {
    double t = 20.0 * i;
    rtcdir::CallRequest r{caller.rtc_id, "never.online", t, {}, {}};
    auto plan = w.overlay.place_call(r);
    EXPECT_TRUE(plan.targets.empty());
    w.net.advance(t + 19.9);
    auto tr = w.net.tap(tap).take();
    false_hits += sniffer::classify_trace(tr, local).size();
  }
  EXPECT_EQ(false_hits, 0u);
}

TEST(Classifier, ConfigValidation) {
  sniffer::ClassifierConfig c;
  EXPECT_NO_THROW(c.validate());
  for (double tol : {0.0, 0.5, -0.1, 0.7}) {
    c = {};
    c.timing_tolerance = tol;
    EXPECT_THROW(c.validate(), std::invalid_argument) << tol;
  }
  c = {};
  c.min_score = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.pattern_window = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  std::vector<SimPacket> tr;
  c.pattern_window = -1;
  EXPECT_THROW(sniffer::classify_trace(tr, kLocal, c), std::invalid_argument);
  EXPECT_TRUE(sniffer::classify_trace(tr, kLocal).empty());
}

TEST(Extract, RanksByScoreThenTimeAndDedupes) {
  std::vector<sniffer::PatternMatch> m(4);
  m[0].candidate_ip = Ipv4::must_parse("10.0.0.1");
  m[0].score = 6.0 / 7;
  m[0].t_first = 1.0;
  m[1].candidate_ip = Ipv4::must_parse("10.0.0.2");
  m[1].score = 1.0;
  m[1].t_first = 5.0;
  m[2].candidate_ip = Ipv4::must_parse("10.0.0.3");
  m[2].score = 1.0;
  m[2].t_first = 2.0;
  m[2].kind = PatternKind::III;
  m[3] = m[1];
  m[3].t_first = 9.0;
  auto e = sniffer::extract_callee_ips(m);
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e[0].ip, m[2].candidate_ip);
  EXPECT_TRUE(e[0].stale);
  EXPECT_EQ(e[1].ip, m[1].candidate_ip);
  EXPECT_DOUBLE_EQ(e[1].t_first, 5.0);
  EXPECT_EQ(e[2].ip, m[0].candidate_ip);
}

TEST(Extract, FormatMatchLine) {
  sniffer::PatternMatch m;
  m.kind = PatternKind::III;
  m.candidate_ip = kCallee;
  m.score = 1.0;
  m.t_first = 12.5;
  EXPECT_EQ(sniffer::format_match(3, m), "3 III 203.0.113.7 1.0000 12.500000 1");
}

TEST(SynFilter, DropsEverySynInWindowAndNothingElse) {
  netsim::Network net(3);
  netsim::HostConfig a, b;
  a.private_ip = Ipv4::must_parse("198.18.0.10");
  b.private_ip = Ipv4::must_parse("203.0.113.9");
  auto ha = net.add_host(a), hb = net.add_host(b);
  sniffer::apply_syn_filter(net, ha, {10.0, 20.0});
  int delivered = 0;
  auto count = [&](netsim::Network&, const SimPacket&) { ++delivered; };
  net.bind(ha, Proto::TCP, 80, count);
  net.bind(hb, Proto::TCP, 80, count);
  net.bind(hb, Proto::UDP, 80, count);
  auto send = [&](netsim::HostId src, Ipv4 dst, Proto p, std::uint8_t flags, double at) {
    netsim::SendRequest r;
    r.src = src;
    r.src_port = 80;
    r.dst = {dst, 80};
    r.proto = p;
    r.flags = flags;
    r.at = at;
    net.schedule_send(r);
  };
  using namespace netsim::tcp;
  send(ha, b.private_ip, Proto::TCP, SYN, 11.0);        // outbound SYN: dropped
  send(hb, a.private_ip, Proto::TCP, SYN | ACK, 12.0);  // inbound SYN-ACK: dropped
  send(ha, b.private_ip, Proto::TCP, ACK | PSH, 13.0);  // established traffic: passes
  send(ha, b.private_ip, Proto::UDP, 0, 14.0);          // passes
  send(ha, b.private_ip, Proto::TCP, SYN, 25.0);        // after window: passes
  net.advance(30.0);
  EXPECT_EQ(delivered, 3);
  ASSERT_EQ(net.drops().size(), 2u);
  for (const auto& d : net.drops()) {
    EXPECT_TRUE(d.packet.is_syn());
    EXPECT_EQ(d.reason, netsim::DropReason::EdgeFilter);
  }
  EXPECT_THROW(sniffer::apply_syn_filter(net, ha, {5.0, 1.0}), std::invalid_argument);
}

// --- Properties --------------------------------------------------------------

// Gaps jittered strictly inside the tolerance always produce one full-score match.
TEST(ClassifierProperty, JitteredPatternsWithinToleranceAreFound) {
  Rng rng(2024);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<SimPacket> tr;
    add_noise(tr, rng, static_cast<int>(uniform_int(rng, 10, 15)), 0.0);
    auto j = [&] { return 1.0 + uniform(rng, -0.2, 0.2); };
    bool answered = chance(rng, 0.7);
    double t0 = uniform(rng, 0.0, 3.0);
    add_caller_initiated(tr, kCallee, t0, j(), j(), j(), j(), answered);
    sort(tr);
    auto m = sniffer::classify_trace(tr, kLocal);
    ASSERT_EQ(m.size(), 1u) << trial;
    EXPECT_EQ(m[0].candidate_ip, kCallee);
    EXPECT_DOUBLE_EQ(m[0].score, 1.0);
    EXPECT_EQ(m[0].kind, answered ? PatternKind::I : PatternKind::III);
  }
}

// Kind I and kind III are mutually exclusive: I iff the candidate sent something
// back inside the window, and every match's candidate took part in the packets.
TEST(ClassifierProperty, MatchesAreSoundAgainstOverlayTruth) {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    world::WorldConfig wc;
    wc.seed = seed;
    wc.signaling.timing_jitter = 0.2;
    world::World w(wc);
    auto caller = w.add_tracking_client("tracker.001");
    auto tap = w.net.attach_tap(caller.host);
    auto local = w.net.public_ip(caller.host);
    Rng rng(seed);
    std::set<Ipv4> truth;
    for (int u = 0; u < 5; ++u) {
      std::string id = "callee.p" + std::to_string(u);
      w.add_user(id);
      auto kind = uniform_int(rng, 0, 3);
      netsim::HostId h = kind == 1 ? w.add_natted_host(w.add_nat(2)) : w.add_public_host(0);
      double logout = kind == 2 ? 50.0 : 1e9;
      if (kind != 3) w.overlay.login(id, h, 0.0, logout);
      if (kind != 3) truth.insert(w.net.public_ip(h));
      double t = 100.0 + 40.0 * u;
      sniffer::apply_syn_filter(w.net, caller.host, {t, t + 40});
      w.overlay.place_call({caller.rtc_id, id, t, {}, {}});
    }
    w.net.advance(400.0);
    auto tr = w.net.tap(tap).trace();
    auto m = sniffer::classify_trace(tr, local);
    for (const auto& x : m) {
      EXPECT_TRUE(truth.count(x.candidate_ip)) << x.candidate_ip.str();
      bool answered = x.first_callee_packet() != nullptr;
      if (x.kind == PatternKind::I) EXPECT_TRUE(answered);
      if (x.kind == PatternKind::III) EXPECT_FALSE(answered);
      for (const auto& p : x.packets) EXPECT_TRUE(p.src_ip == x.candidate_ip || p.dst_ip == x.candidate_ip);
    }
    std::set<Ipv4> found;
    for (const auto& e : sniffer::extract_callee_ips(m)) found.insert(e.ip);
    EXPECT_EQ(found, truth) << seed;
  }
}
