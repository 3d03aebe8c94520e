#pragma once

// BitTorrent side: scrape dumps, a simulated Mainline DHT spoken to over
// bencoded KRPC, swarm membership, crawling, address matching, and the
// 68-byte peer handshake carried over netsim TCP.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rtcleak/bencode.hpp"
#include "rtcleak/netsim.hpp"
#include "rtcleak/rng.hpp"

namespace rtcleak::btswarm {

using bencode::BDict;
using bencode::BList;
using bencode::BValue;
using netsim::HostId;

// ---------------------------------------------------------------------------
// 20-byte identifiers

struct Id160 {
  std::array<std::uint8_t, 20> bytes{};

  auto operator<=>(const Id160&) const = default;

  std::string raw() const { return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()); }

  static std::optional<Id160> from_raw(std::string_view s) {
    if (s.size() != 20) return std::nullopt;
    Id160 id;
    std::memcpy(id.bytes.data(), s.data(), 20);
    return id;
  }

  std::string hex() const {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (auto b : bytes) {
      out += kHex[b >> 4];
      out += kHex[b & 15];
    }
    return out;
  }

  static Id160 random(Rng& rng) {
    Id160 id;
    for (std::size_t i = 0; i < 20; i += 8) {
      std::uint64_t r = rng();
      for (std::size_t j = 0; j < 8 && i + j < 20; ++j) id.bytes[i + j] = static_cast<std::uint8_t>(r >> (8 * j));
    }
    return id;
  }

  Id160 operator^(const Id160& o) const {
    Id160 r;
    for (std::size_t i = 0; i < 20; ++i) r.bytes[i] = bytes[i] ^ o.bytes[i];
    return r;
  }

  /// Number of leading zero bits.
  int leading_zeros() const {
    for (std::size_t i = 0; i < 20; ++i)
      if (bytes[i]) return static_cast<int>(i) * 8 + std::countl_zero(bytes[i]);
    return 160;
  }
};

using Infohash = Id160;
using NodeId = Id160;

// XOR distances compare as big-endian unsigned integers, which is byte order.
inline bool closer(const Id160& target, const Id160& a, const Id160& b) { return (a ^ target) < (b ^ target); }

// ---------------------------------------------------------------------------
// Scrape

struct ScrapeEntry {
  Infohash infohash;
  std::int64_t seeds = 0;
  std::int64_t leechers = 0;
  std::int64_t downloaded = 0;

  std::int64_t popularity() const { return seeds + leechers; }
};

struct ScrapeParse {
  std::vector<ScrapeEntry> entries;  // popularity descending, then infohash ascending
  std::size_t skipped = 0;
};

inline void sort_by_popularity(std::vector<ScrapeEntry>& v) {
  std::sort(v.begin(), v.end(), [](const ScrapeEntry& a, const ScrapeEntry& b) {
    if (a.popularity() != b.popularity()) return a.popularity() > b.popularity();
    return a.infohash < b.infohash;
  });
}

inline std::string make_scrape(const std::vector<ScrapeEntry>& entries) {
  BDict files;
  for (const auto& e : entries)
    files.emplace(e.infohash.raw(), BDict{{"complete", e.seeds}, {"downloaded", e.downloaded}, {"incomplete", e.leechers}});
  return bencode::encode(BDict{{"files", std::move(files)}});
}

/// Entries with a key that is not 20 bytes, or with missing or negative counts, are skipped and tallied.
inline ScrapeParse parse_scrape(std::string_view bytes) {
  BValue root = bencode::decode(bytes);
  const BValue* files = root.get("files");
  if (!files || !files->is_dict()) throw std::invalid_argument("scrape has no files dictionary");
  ScrapeParse out;
  for (const auto& [key, stats] : files->as_dict()) {
    auto ih = Infohash::from_raw(key);
    auto count = [&](const char* name) -> std::optional<std::int64_t> {
      const BValue* v = stats.get(name);
      if (!v || !v->is_int() || v->as_int() < 0) return std::nullopt;
      return v->as_int();
    };
    auto seeds = count("complete"), leechers = count("incomplete"), downloaded = count("downloaded");
    if (!ih || !seeds || !leechers || !downloaded) {
      ++out.skipped;
      continue;
    }
    out.entries.push_back({*ih, *seeds, *leechers, *downloaded});
  }
  sort_by_popularity(out.entries);
  return out;
}

inline std::vector<Infohash> top_k(std::vector<ScrapeEntry> entries, std::size_t k) {
  sort_by_popularity(entries);
  std::vector<Infohash> out;
  for (std::size_t i = 0; i < entries.size() && i < k; ++i) out.push_back(entries[i].infohash);
  return out;
}

// ---------------------------------------------------------------------------
// Compact peer and node encodings

inline std::string compact_peer(Endpoint ep) {
  std::string s(6, '\0');
  for (int i = 0; i < 4; ++i) s[static_cast<std::size_t>(i)] = static_cast<char>(ep.ip.value >> (24 - 8 * i));
  s[4] = static_cast<char>(ep.port >> 8);
  s[5] = static_cast<char>(ep.port & 0xff);
  return s;
}

inline std::optional<Endpoint> parse_compact_peer(std::string_view s) {
  if (s.size() != 6) return std::nullopt;
  auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])); };
  return Endpoint{Ipv4{(b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3)}, static_cast<std::uint16_t>((b(4) << 8) | b(5))};
}

struct NodeContact {
  NodeId id;
  Endpoint addr;
};

inline std::string compact_nodes(const std::vector<NodeContact>& nodes) {
  std::string out;
  for (const auto& n : nodes) out += n.id.raw() + compact_peer(n.addr);
  return out;
}

inline std::vector<NodeContact> parse_compact_nodes(std::string_view s) {
  if (s.size() % 26 != 0) throw std::invalid_argument("compact node list length is not a multiple of 26");
  std::vector<NodeContact> out;
  for (std::size_t i = 0; i < s.size(); i += 26)
    out.push_back({*Id160::from_raw(s.substr(i, 20)), *parse_compact_peer(s.substr(i + 20, 6))});
  return out;
}

// ---------------------------------------------------------------------------
// Simulated DHT

inline constexpr std::size_t kBucketSize = 8;

class DhtNode {
 public:
  DhtNode(NodeId id, Endpoint addr) : id_(id), addr_(addr) {}

  const NodeId& id() const { return id_; }
  Endpoint addr() const { return addr_; }
  const std::map<Infohash, std::vector<Endpoint>>& store() const { return store_; }

  /// Adds a contact if its bucket still has room.
  void learn(const NodeContact& c) {
    if (c.id == id_) return;
    int b = (c.id ^ id_).leading_zeros();
    auto& bucket = buckets_[static_cast<std::size_t>(b)];
    if (bucket.size() >= kBucketSize) return;
    if (std::any_of(bucket.begin(), bucket.end(), [&](const NodeContact& x) { return x.id == c.id; })) return;
    bucket.push_back(c);
  }

  std::vector<NodeContact> closest_known(const Id160& target, std::size_t k) const {
    std::vector<NodeContact> all;
    for (const auto& b : buckets_) all.insert(all.end(), b.begin(), b.end());
    all.push_back({id_, addr_});
    std::sort(all.begin(), all.end(), [&](const NodeContact& a, const NodeContact& b) { return closer(target, a.id, b.id); });
    if (all.size() > k) all.resize(k);
    return all;
  }

  void set_peers(const Infohash& ih, std::vector<Endpoint> peers) {
    if (peers.empty()) store_.erase(ih);
    else store_[ih] = std::move(peers);
  }
  void clear_store() { store_.clear(); }

  /// Answers one bencoded KRPC query. Never mutates node state; requesters are never blacklisted.
  std::string handle(std::string_view query) const {
    BValue q;
    try {
      q = bencode::decode(query);
    } catch (const bencode::DecodeError&) {
      return error_reply("", 203, "malformed query");
    }
    const BValue* t = q.get("t");
    const BValue* y = q.get("y");
    const BValue* name = q.get("q");
    const BValue* args = q.get("a");
    std::string txn = t && t->is_string() ? t->as_string() : "";
    if (!y || !y->is_string() || y->as_string() != "q" || !name || !name->is_string() || !args || !args->is_dict())
      return error_reply(txn, 203, "malformed query");
    BDict r{{"id", id_.raw()}};
    if (name->as_string() == "find_node") {
      const BValue* target = args->get("target");
      auto tid = target && target->is_string() ? Id160::from_raw(target->as_string()) : std::nullopt;
      if (!tid) return error_reply(txn, 203, "bad target");
      r.emplace("nodes", compact_nodes(closest_known(*tid, kBucketSize)));
    } else if (name->as_string() == "get_peers") {
      const BValue* ih = args->get("info_hash");
      auto id = ih && ih->is_string() ? Id160::from_raw(ih->as_string()) : std::nullopt;
      if (!id) return error_reply(txn, 203, "bad info_hash");
      r.emplace("token", std::string("tk"));
      if (auto it = store_.find(*id); it != store_.end()) {
        BList values;
        for (const auto& p : it->second) values.emplace_back(compact_peer(p));
        r.emplace("values", std::move(values));
      } else {
        r.emplace("nodes", compact_nodes(closest_known(*id, kBucketSize)));
      }
    } else {
      return error_reply(txn, 204, "method unknown");
    }
    return bencode::encode(BDict{{"t", txn}, {"y", "r"}, {"r", std::move(r)}});
  }

 private:
  static std::string error_reply(const std::string& txn, int code, const char* msg) {
    return bencode::encode(BDict{{"t", txn}, {"y", "e"}, {"e", BList{code, msg}}});
  }

  NodeId id_;
  Endpoint addr_;
  std::array<std::vector<NodeContact>, 161> buckets_;
  std::map<Infohash, std::vector<Endpoint>> store_;
};

struct DhtConfig {
  double loss_rate = 0.0;  // probability a single query goes unanswered
  int retries = 2;         // extra attempts per node before skipping it
};

class Dht {
 public:
  Dht(std::size_t n_nodes, std::uint64_t seed, DhtConfig cfg = {}) : cfg_(cfg), rng_(derive_seed(seed, "dht-loss")) {
    Rng rng(derive_seed(seed, "dht-nodes"));
    std::set<NodeId> ids;
    for (std::size_t i = 0; i < n_nodes; ++i) {
      NodeId id;
      do id = NodeId::random(rng);
      while (!ids.insert(id).second);
      Endpoint addr{Ipv4{0x0a800000u + static_cast<std::uint32_t>(i)}, 6881};
      index_.emplace(addr, nodes_.size());
      nodes_.emplace_back(id, addr);
    }
    // Every node meets the others in a seeded random order; full buckets ignore newcomers.
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      std::vector<std::size_t> order(nodes_.size());
      for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
      std::shuffle(order.begin(), order.end(), rng);
      for (auto j : order) nodes_[i].learn({nodes_[j].id(), nodes_[j].addr()});
    }
  }

  std::size_t size() const { return nodes_.size(); }
  const DhtNode& node(std::size_t i) const { return nodes_.at(i); }
  const std::vector<DhtNode>& nodes() const { return nodes_; }
  DhtConfig& config() { return cfg_; }

  std::vector<NodeContact> bootstrap(std::size_t n = 1) const {
    std::vector<NodeContact> out;
    for (std::size_t i = 0; i < nodes_.size() && i < n; ++i) out.push_back({nodes_[i].id(), nodes_[i].addr()});
    return out;
  }

  /// Exhaustive scan: the node minimising XOR distance to `target`.
  std::size_t responsible_index(const Id160& target) const {
    if (nodes_.empty()) throw std::logic_error("empty DHT");
    std::size_t best = 0;
    for (std::size_t i = 1; i < nodes_.size(); ++i)
      if (closer(target, nodes_[i].id(), nodes_[best].id())) best = i;
    return best;
  }

  /// Replaces all stored peer lists; each infohash lives on its responsible node only.
  void publish(const std::map<Infohash, std::vector<Endpoint>>& swarms) {
    for (auto& n : nodes_) n.clear_store();
    for (const auto& [ih, peers] : swarms) nodes_[responsible_index(ih)].set_peers(ih, peers);
  }

  /// Delivers a query to the node at `addr`; nullopt when it goes unanswered.
  std::optional<std::string> rpc(Endpoint addr, std::string_view query) {
    auto it = index_.find(addr);
    if (it == index_.end()) return std::nullopt;
    ++queries_;
    if (cfg_.loss_rate > 0.0 && chance(rng_, cfg_.loss_rate)) return std::nullopt;
    return nodes_[it->second].handle(query);
  }

  std::uint64_t queries() const { return queries_; }

 private:
  DhtConfig cfg_;
  Rng rng_;
  std::vector<DhtNode> nodes_;
  std::map<Endpoint, std::size_t> index_;
  std::uint64_t queries_ = 0;
};

struct LookupResult {
  bool ok = false;
  std::optional<NodeContact> responsible;
  std::vector<Endpoint> peers;
  std::vector<Id160> hop_distances;  // best known XOR distance after each improving hop
  std::size_t unanswered = 0;
};

/// KRPC client side of one crawler bot.
class DhtClient {
 public:
  DhtClient(Dht& dht, NodeId self, std::string txn_prefix) : dht_(dht), self_(self), prefix_(std::move(txn_prefix)) {}

  std::optional<BValue> query(Endpoint addr, const char* method, BDict args) {
    args.emplace("id", self_.raw());
    for (int attempt = 0; attempt <= dht_.config().retries; ++attempt) {
      std::string txn = prefix_ + std::to_string(next_txn_++);
      auto reply = dht_.rpc(addr, bencode::encode(BDict{{"t", txn}, {"y", "q"}, {"q", method}, {"a", args}}));
      if (!reply) continue;
      BValue r = bencode::decode(*reply);
      const BValue* t = r.get("t");
      const BValue* y = r.get("y");
      if (!t || !t->is_string() || t->as_string() != txn || !y || !y->is_string() || y->as_string() != "r") return std::nullopt;
      const BValue* body = r.get("r");
      if (!body || !body->is_dict()) return std::nullopt;
      return *body;
    }
    return std::nullopt;
  }

  /// Iterative find_node toward `target`, stopping once the closest known node stops improving.
  LookupResult find_node(const Id160& target, const std::vector<NodeContact>& bootstrap) {
    LookupResult res;
    if (bootstrap.empty()) return res;
    std::map<Id160, NodeContact> shortlist;  // keyed by distance
    for (const auto& c : bootstrap) shortlist.emplace(c.id ^ target, c);
    std::set<Id160> queried;
    std::set<Id160> dead;
    for (;;) {
      // The k closest live contacts not yet asked.
      std::vector<NodeContact> batch;
      std::size_t considered = 0;
      for (const auto& [d, c] : shortlist) {
        if (dead.count(c.id)) continue;
        if (++considered > kBucketSize) break;
        if (!queried.count(c.id)) batch.push_back(c);
        if (batch.size() == 3) break;
      }
      if (batch.empty()) break;
      for (const auto& c : batch) {
        queried.insert(c.id);
        auto r = query(c.addr, "find_node", BDict{{"target", target.raw()}});
        const BValue* nodes = r ? r->get("nodes") : nullptr;
        if (!nodes || !nodes->is_string()) {
          dead.insert(c.id);
          ++res.unanswered;
          continue;
        }
        for (const auto& n : parse_compact_nodes(nodes->as_string())) shortlist.emplace(n.id ^ target, n);
      }
      for (const auto& [d, c] : shortlist) {
        if (dead.count(c.id) || !queried.count(c.id)) continue;
        if (res.hop_distances.empty() || d < res.hop_distances.back()) res.hop_distances.push_back(d);
        break;
      }
    }
    for (const auto& [d, c] : shortlist)
      if (queried.count(c.id) && !dead.count(c.id)) {
        res.responsible = c;
        res.ok = true;
        break;
      }
    return res;
  }

  /// find_node to the responsible node, then get_peers there.
  LookupResult lookup(const Infohash& ih, const std::vector<NodeContact>& bootstrap) {
    LookupResult res = find_node(ih, bootstrap);
    if (!res.ok) return res;
    auto r = query(res.responsible->addr, "get_peers", BDict{{"info_hash", ih.raw()}});
    if (!r) {
      res.ok = false;
      ++res.unanswered;
      return res;
    }
    if (const BValue* values = r->get("values"); values && values->is_list())
      for (const auto& v : values->as_list())
        if (v.is_string())
          if (auto ep = parse_compact_peer(v.as_string())) res.peers.push_back(*ep);
    std::sort(res.peers.begin(), res.peers.end());
    return res;
  }

 private:
  Dht& dht_;
  NodeId self_;
  std::string prefix_;
  std::uint64_t next_txn_ = 0;
};

// ---------------------------------------------------------------------------
// Swarm membership (ground truth) and crawling

struct SwarmPeer {
  Endpoint ep;
  Infohash infohash;
  HostId host;  // hidden from attacker views
  double t_join = 0.0;
  double t_leave = 1e300;

  bool active_at(double t) const { return t_join <= t && t < t_leave; }
};

class SwarmRegistry {
 public:
  /// Rejects an (ip, port) already owned by a different host.
  void add(const SwarmPeer& p) {
    if (p.t_leave < p.t_join) throw std::invalid_argument("swarm peer leaves before joining");
    auto [it, fresh] = owner_.emplace(p.ep, p.host);
    if (!fresh && it->second != p.host)
      throw std::invalid_argument("BitTorrent endpoint " + p.ep.str() + " claimed by two hosts");
    peers_.push_back(p);
  }

  const std::vector<SwarmPeer>& peers() const { return peers_; }
  std::optional<HostId> owner(Endpoint ep) const {
    auto it = owner_.find(ep);
    return it == owner_.end() ? std::nullopt : std::optional<HostId>(it->second);
  }

  std::map<Infohash, std::vector<Endpoint>> members_at(double t) const {
    std::map<Infohash, std::vector<Endpoint>> out;
    for (const auto& p : peers_)
      if (p.active_at(t)) out[p.infohash].push_back(p.ep);
    for (auto& [ih, v] : out) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    return out;
  }

  std::set<Infohash> torrents_of(Endpoint ep, double t) const {
    std::set<Infohash> out;
    for (const auto& p : peers_)
      if (p.ep == ep && p.active_at(t)) out.insert(p.infohash);
    return out;
  }

 private:
  std::vector<SwarmPeer> peers_;
  std::map<Endpoint, HostId> owner_;
};

struct SwarmSnapshot {
  Infohash infohash;
  double t = 0.0;
  std::vector<Endpoint> peers;
  bool complete = false;
};

inline constexpr int kCrawlerBots = 10;

/// One crawl pass at time t: infohashes are dealt round-robin to the bots, each
/// running find_node then get_peers. Swarm state is not modified.
inline std::vector<SwarmSnapshot> crawl(Dht& dht, const std::vector<Infohash>& infohashes, double t,
                                        std::uint64_t seed, int bots = kCrawlerBots) {
  if (bots < 1) throw std::invalid_argument("crawl needs at least one bot");
  std::vector<DhtClient> clients;
  Rng rng(derive_seed(seed, "crawler-ids"));
  for (int b = 0; b < bots; ++b) clients.emplace_back(dht, NodeId::random(rng), "b" + std::to_string(b) + ":");
  auto boot = dht.bootstrap(3);
  std::vector<SwarmSnapshot> out;
  out.reserve(infohashes.size());
  for (std::size_t i = 0; i < infohashes.size(); ++i) {
    auto& bot = clients[i % clients.size()];
    auto res = bot.lookup(infohashes[i], boot);
    out.push_back({infohashes[i], t, std::move(res.peers), res.ok});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matching RTC sightings to swarm members

struct Sighting {
  std::string user;
  Ipv4 ip;
  double t = 0.0;
};

struct MatchCandidate {
  std::string user;
  Ipv4 ip;
  std::uint16_t port = 0;
  Infohash infohash;  // lowest infohash seen at (ip, port) that day
};

inline std::int64_t day_of(double t) { return static_cast<std::int64_t>(std::floor(t / 86400.0)); }

/// Joins on address within the same simulated day; one candidate per (user, ip, port).
inline std::vector<MatchCandidate> match_ips(const std::vector<Sighting>& sightings,
                                             const std::vector<SwarmSnapshot>& snapshots) {
  std::map<std::pair<std::int64_t, Ipv4>, std::map<std::uint16_t, Infohash>> bt;
  for (const auto& s : snapshots)
    for (const auto& ep : s.peers) {
      auto& ports = bt[{day_of(s.t), ep.ip}];
      auto [it, fresh] = ports.emplace(ep.port, s.infohash);
      if (!fresh && s.infohash < it->second) it->second = s.infohash;
    }
  std::map<std::tuple<std::string, Ipv4, std::uint16_t>, MatchCandidate> out;
  for (const auto& s : sightings) {
    auto it = bt.find({day_of(s.t), s.ip});
    if (it == bt.end()) continue;
    for (const auto& [port, ih] : it->second) {
      auto [c, fresh] = out.emplace(std::make_tuple(s.user, s.ip, port), MatchCandidate{s.user, s.ip, port, ih});
      if (!fresh && ih < c->second.infohash) c->second.infohash = ih;
    }
  }
  std::vector<MatchCandidate> v;
  for (auto& [k, c] : out) v.push_back(std::move(c));
  return v;
}

/// Distinct BitTorrent ports seen at each matched user's addresses, as a CDF.
inline std::vector<std::pair<double, double>> port_count_cdf(const std::vector<MatchCandidate>& cands) {
  std::map<std::string, std::set<std::pair<Ipv4, std::uint16_t>>> per_user;
  for (const auto& c : cands) per_user[c.user].insert({c.ip, c.port});
  std::map<std::size_t, std::size_t> hist;
  for (const auto& [u, s] : per_user) ++hist[s.size()];
  std::vector<std::pair<double, double>> out;
  std::size_t acc = 0;
  for (const auto& [k, n] : hist) {
    acc += n;
    out.emplace_back(static_cast<double>(k), static_cast<double>(acc) / static_cast<double>(per_user.size()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Peer handshake

inline constexpr std::string_view kProtocolName = "BitTorrent protocol";
inline constexpr std::size_t kHandshakeSize = 68;

inline std::string make_handshake(const Infohash& ih, const Id160& peer_id) {
  std::string s;
  s.reserve(kHandshakeSize);
  s += static_cast<char>(kProtocolName.size());
  s += kProtocolName;
  s.append(8, '\0');
  s += ih.raw();
  s += peer_id.raw();
  return s;
}

struct Handshake {
  Infohash infohash;
  Id160 peer_id;
};

inline std::optional<Handshake> parse_handshake(std::string_view s) {
  if (s.size() != kHandshakeSize || static_cast<unsigned char>(s[0]) != kProtocolName.size() ||
      s.substr(1, kProtocolName.size()) != kProtocolName)
    return std::nullopt;
  return Handshake{*Id160::from_raw(s.substr(28, 20)), *Id160::from_raw(s.substr(48, 20))};
}

/// A BitTorrent client on one host, multiplexing all its torrents on one port.
class BtApp {
 public:
  BtApp(netsim::Network& net, HostId host, std::uint16_t port, Id160 peer_id, std::function<std::set<Infohash>(double)> torrents)
      : host_(host), port_(port), peer_id_(peer_id), torrents_(std::move(torrents)) {
    net.bind(host, netsim::Proto::TCP, port, [this](netsim::Network& n, const netsim::SimPacket& p) { on_packet(n, p); });
  }

  std::uint16_t port() const { return port_; }

 private:
  void reply(netsim::Network& net, const netsim::SimPacket& p, std::uint8_t flags, std::string payload = {}) {
    netsim::SendRequest r;
    r.src = host_;
    r.src_port = port_;
    r.dst = p.src();
    r.proto = netsim::Proto::TCP;
    r.flags = flags;
    r.size = static_cast<std::uint32_t>(payload.size());
    r.payload = std::move(payload);
    r.at = net.now() + 0.002;
    net.schedule_send(std::move(r));
  }

  void on_packet(netsim::Network& net, const netsim::SimPacket& p) {
    using namespace netsim::tcp;
    if (p.has_flag(SYN) && !p.has_flag(ACK)) {
      reply(net, p, SYN | ACK);
    } else if (!p.payload.empty()) {
      auto hs = parse_handshake(p.payload);
      if (hs && torrents_(net.now()).count(hs->infohash)) reply(net, p, PSH | ACK, make_handshake(hs->infohash, peer_id_));
      else reply(net, p, RST);
    }
  }

  HostId host_;
  std::uint16_t port_;
  Id160 peer_id_;
  std::function<std::set<Infohash>(double)> torrents_;
};

enum class HandshakeOutcome { Pending, Accepted, Refused };

struct HandshakeResult {
  std::optional<netsim::SimPacket> first_response;  // first packet received from the peer
  HandshakeOutcome outcome = HandshakeOutcome::Pending;
  std::optional<Handshake> peer;
};

/// Initiator side; each attempt uses its own local port.
class HandshakeClient {
 public:
  HandshakeClient(netsim::Network& net, HostId host, Id160 peer_id) : net_(net), host_(host), peer_id_(peer_id) {}

  /// Sends the SYN at time `at`. Returns a handle for result().
  std::size_t start(Endpoint target, const Infohash& ih, double at) {
    std::uint16_t port = next_port_;
    next_port_ = next_port_ == 65000 ? 10000 : static_cast<std::uint16_t>(next_port_ + 1);
    std::size_t handle = results_.size();
    results_.push_back({});
    infohash_.push_back(ih);
    by_port_[port] = handle;
    if (!net_.is_bound(host_, netsim::Proto::TCP, port))
      net_.bind(host_, netsim::Proto::TCP, port, [this, port](netsim::Network& n, const netsim::SimPacket& p) { on_packet(n, port, p); });
    netsim::SendRequest r;
    r.src = host_;
    r.src_port = port;
    r.dst = target;
    r.proto = netsim::Proto::TCP;
    r.flags = netsim::tcp::SYN;
    r.at = at;
    net_.schedule_send(std::move(r));
    return handle;
  }

  const HandshakeResult& result(std::size_t handle) const { return results_.at(handle); }
  HostId host() const { return host_; }

 private:
  void on_packet(netsim::Network& net, std::uint16_t port, const netsim::SimPacket& p) {
    auto it = by_port_.find(port);
    if (it == by_port_.end()) return;
    std::size_t h = it->second;
    auto& res = results_[h];
    if (!res.first_response) res.first_response = p;
    using namespace netsim::tcp;
    if (p.has_flag(SYN) && p.has_flag(ACK)) {
      netsim::SendRequest r;
      r.src = host_;
      r.src_port = port;
      r.dst = p.src();
      r.proto = netsim::Proto::TCP;
      r.flags = ACK | PSH;
      r.payload = make_handshake(infohash_[h], peer_id_);
      r.size = static_cast<std::uint32_t>(r.payload.size());
      r.at = net.now() + 0.001;
      net.schedule_send(std::move(r));
    } else if (p.has_flag(RST)) {
      res.outcome = HandshakeOutcome::Refused;
    } else if (auto hs = parse_handshake(p.payload)) {
      res.outcome = hs->infohash == infohash_[h] ? HandshakeOutcome::Accepted : HandshakeOutcome::Refused;
      res.peer = hs;
    }
  }

  netsim::Network& net_;
  HostId host_;
  Id160 peer_id_;
  std::uint16_t next_port_ = 10000;
  std::vector<HandshakeResult> results_;
  std::vector<Infohash> infohash_;
  std::unordered_map<std::uint16_t, std::size_t> by_port_;
};

/// Blocking convenience: handshake at the current time and run the network `wait` seconds.
inline HandshakeResult bt_handshake(netsim::Network& net, HandshakeClient& client, Endpoint target, const Infohash& ih,
                                    double wait = 2.0) {
  auto h = client.start(target, ih, net.now());
  net.run_until(net.now() + wait);
  return client.result(h);
}

}  // namespace rtcleak::btswarm
