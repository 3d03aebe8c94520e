#pragma once

// Seeded construction of simulated worlds: address plan with a matching geo
// fixture, overlay infrastructure (supernodes, relays, tracking clients) and
// helpers to add user hosts behind or outside NATs.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rtcleak/netsim.hpp"
#include "rtcleak/overlay.hpp"
#include "rtcleak/rng.hpp"
#include "rtcleak/rtcdir.hpp"
#include "rtcleak/tracker.hpp"

namespace rtcleak::world {

using netsim::HostId;
using netsim::IpIdModel;
using netsim::NatId;

struct Location {
  std::string country;
  std::string asn;
  std::string city;
  Prefix prefix;
  std::size_t country_idx = 0;
  std::size_t as_idx = 0;  // global AS index
};

inline constexpr std::array<const char*, 12> kCountries = {"DE", "FR", "US", "BR", "IN", "JP",
                                                           "GB", "ES", "IT", "CA", "KR", "NL"};

// Infrastructure address blocks; all resolve to one placeholder location.
inline const Prefix kSupernodeBlock{Ipv4{0x64400000u}, 16};  // 100.64.0.0/16
inline const Prefix kRelayBlock{Ipv4{0x64410000u}, 16};      // 100.65.0.0/16
inline const Prefix kTrackerBlock{Ipv4{0xc6120000u}, 16};    // 198.18.0.0/16
inline const Prefix kHandshakeBlock{Ipv4{0xc6130000u}, 16};  // 198.19.0.0/16

struct GeoPlan {
  std::vector<Location> locations;
  tracker::GeoTable table;

  /// Locations in the same AS as `loc` other than itself.
  std::vector<std::size_t> same_as(std::size_t loc) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < locations.size(); ++i)
      if (i != loc && locations[i].as_idx == locations[loc].as_idx) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> same_country_other_as(std::size_t loc) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < locations.size(); ++i)
      if (locations[i].country_idx == locations[loc].country_idx && locations[i].as_idx != locations[loc].as_idx)
        out.push_back(i);
    return out;
  }
  std::vector<std::size_t> other_country(std::size_t loc) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < locations.size(); ++i)
      if (locations[i].country_idx != locations[loc].country_idx) out.push_back(i);
    return out;
  }
};

/// Location L owns the /16 starting at (11 + L/256).(L%256).0.0.
inline GeoPlan make_geo_plan(int countries, int as_per_country, int cities_per_as) {
  if (countries < 1 || countries > static_cast<int>(kCountries.size()) || as_per_country < 1 || cities_per_as < 1)
    throw std::invalid_argument("geo plan dimensions out of range");
  GeoPlan g;
  std::size_t as_counter = 0;
  for (int c = 0; c < countries; ++c) {
    for (int a = 0; a < as_per_country; ++a, ++as_counter) {
      for (int k = 0; k < cities_per_as; ++k) {
        auto idx = static_cast<std::uint32_t>(g.locations.size());
        Location loc;
        loc.country = kCountries[static_cast<std::size_t>(c)];
        loc.asn = "AS" + std::to_string(64512 + as_counter);
        loc.city = loc.country + "-city" + std::to_string(a * cities_per_as + k);
        loc.prefix = Prefix{Ipv4{((11u + idx / 256u) << 24) | ((idx % 256u) << 16)}, 16};
        loc.country_idx = static_cast<std::size_t>(c);
        loc.as_idx = as_counter;
        g.table.add(loc.prefix, {loc.city, loc.country, loc.asn});
        g.locations.push_back(std::move(loc));
      }
    }
  }
  for (const Prefix& p : {kSupernodeBlock, kRelayBlock, kTrackerBlock, kHandshakeBlock})
    g.table.add(p, {"infra", "ZZ", "AS64496"});
  return g;
}

struct WorldConfig {
  std::uint64_t seed = 1;
  int supernodes = 40;
  int relays = 4;
  int countries = 5;
  int as_per_country = 3;
  int cities_per_as = 3;
  rtcdir::SignalingConfig signaling;  // supernode and relay lists are filled in by the world
};

class World {
 public:
  explicit World(const WorldConfig& cfg)
      : cfg_(cfg),
        rng_(derive_seed(cfg.seed, "world")),
        net(derive_seed(cfg.seed, "net")),
        geo(make_geo_plan(cfg.countries, cfg.as_per_country, cfg.cities_per_as)),
        overlay(net, rtcdir::Directory{}, build_infra(), derive_seed(cfg.seed, "overlay")) {
    next_in_block_.resize(geo.locations.size(), 10);
  }

  World(const World&) = delete;
  World& operator=(const World&) = delete;

  Rng& rng() { return rng_; }
  const WorldConfig& config() const { return cfg_; }

  Ipv4 allocate(std::size_t loc) {
    auto& next = next_in_block_.at(loc);
    if (next >= 65534) throw std::runtime_error("location address block exhausted");
    return Ipv4{geo.locations[loc].prefix.base.value + next++};
  }

  HostId add_public_host(std::size_t loc, IpIdModel model = IpIdModel::SequentialGlobal, double pps = 0.0,
                         std::string os = "winxp") {
    netsim::HostConfig h;
    h.private_ip = allocate(loc);
    h.ipid_model = model;
    h.os_label = std::move(os);
    h.background_pps = pps;
    h.initial_ipid = static_cast<std::uint16_t>(uniform_int(rng_, 0, 65535));
    h.randomize_flow_offsets = model == IpIdModel::SequentialPerFlow;
    return net.add_host(h);
  }

  NatId add_nat(std::size_t loc, bool accepts_inbound = false) {
    return net.add_nat({allocate(loc), accepts_inbound});
  }

  HostId add_natted_host(NatId nat, IpIdModel model = IpIdModel::SequentialGlobal, double pps = 0.0,
                         std::string os = "winxp") {
    netsim::HostConfig h;
    h.private_ip = Ipv4{0xc0a80000u + 10u + next_private_[nat.value]++};  // 192.168.0.0/16
    h.nat = nat;
    h.ipid_model = model;
    h.os_label = std::move(os);
    h.background_pps = pps;
    h.initial_ipid = static_cast<std::uint16_t>(uniform_int(rng_, 0, 65535));
    h.randomize_flow_offsets = model == IpIdModel::SequentialPerFlow;
    return net.add_host(h);
  }

  /// A tracking account logged in forever on its own public host.
  tracker::TrackingClient add_tracking_client(const std::string& id) {
    netsim::HostConfig h;
    h.private_ip = Ipv4{kTrackerBlock.base.value + 10u + static_cast<std::uint32_t>(trackers_++)};
    h.os_label = "linux";
    h.ipid_model = IpIdModel::Random;
    HostId host = net.add_host(h);
    rtcdir::UserProfile p;
    p.rtc_id = id;
    p.email = id + "@lab.invalid";
    overlay.directory().add(p);
    overlay.login(id, host, 0.0);
    return {id, host};
  }

  HostId add_handshake_host() {
    netsim::HostConfig h;
    h.private_ip = Ipv4{kHandshakeBlock.base.value + 10u + static_cast<std::uint32_t>(handshakers_++)};
    h.os_label = "linux";
    h.ipid_model = IpIdModel::Random;
    return net.add_host(h);
  }

  /// Adds a directory entry with generated profile fields.
  const rtcdir::UserProfile& add_user(const std::string& id) {
    overlay.directory().add(generate_profile(id));
    return overlay.directory().at(id);
  }

  rtcdir::UserProfile generate_profile(const std::string& id) {
    static constexpr std::array<const char*, 24> kFirst = {
        "Anna", "Ben", "Carla", "David", "Elena", "Farid", "Grace", "Hugo", "Ines", "Jonas", "Kira", "Luca",
        "Maya", "Nils", "Olga", "Pablo", "Quinn", "Rosa", "Sami", "Tara", "Umar", "Vera", "Wen", "Yara"};
    static constexpr std::array<const char*, 24> kLast = {
        "Adler", "Bauer", "Costa", "Dubois", "Eriksen", "Fischer", "Garcia", "Haddad", "Ito", "Jensen",
        "Kowalski", "Lopez", "Martin", "Novak", "Okafor", "Petrov", "Rossi", "Silva", "Tanaka", "Umeh",
        "Varga", "Weber", "Xu", "Zimmer"};
    rtcdir::UserProfile p;
    p.rtc_id = id;
    p.email = id + "@mail.invalid";
    if (chance(rng_, 0.88)) {
      std::string first = kFirst[static_cast<std::size_t>(uniform_int(rng_, 0, kFirst.size() - 1))];
      std::string last = kLast[static_cast<std::size_t>(uniform_int(rng_, 0, kLast.size() - 1))];
      p.first_name = first;
      p.last_name = last;
      p.birth_name = first + " " + last;
    }
    if (chance(rng_, 0.82)) {
      p.country = kCountries[static_cast<std::size_t>(uniform_int(rng_, 0, cfg_.countries - 1))];
      p.language = "en";
      p.age = std::to_string(uniform_int(rng_, 18, 70));
    }
    return p;
  }

 private:
  rtcdir::SignalingConfig build_infra() {
    rtcdir::SignalingConfig sig = cfg_.signaling;
    sig.supernodes.clear();
    sig.relays.clear();
    for (int i = 0; i < cfg_.supernodes; ++i) {
      netsim::HostConfig h;
      h.private_ip = Ipv4{kSupernodeBlock.base.value + 10u + static_cast<std::uint32_t>(i)};
      h.os_label = "linux";
      h.ipid_model = IpIdModel::Random;
      sig.supernodes.push_back(net.add_host(h));
    }
    for (int i = 0; i < cfg_.relays; ++i) {
      netsim::HostConfig h;
      h.private_ip = Ipv4{kRelayBlock.base.value + 10u + static_cast<std::uint32_t>(i)};
      h.os_label = "linux";
      h.ipid_model = IpIdModel::Random;
      sig.relays.push_back(net.add_host(h));
    }
    return sig;
  }

  WorldConfig cfg_;
  Rng rng_;
  std::vector<std::uint32_t> next_in_block_;
  std::unordered_map<std::uint32_t, std::uint32_t> next_private_;
  int trackers_ = 0;
  int handshakers_ = 0;

 public:
  netsim::Network net;
  GeoPlan geo;
  rtcdir::Overlay overlay;
};

}  // namespace rtcleak::world
