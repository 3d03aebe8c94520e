#pragma once

#include <array>
#include <charconv>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rtcleak {

/// IPv4 address held in host byte order.
struct Ipv4 {
  std::uint32_t value = 0;

  constexpr Ipv4() = default;
  constexpr explicit Ipv4(std::uint32_t v) : value(v) {}
  constexpr Ipv4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d)
      : value((std::uint32_t{a} << 24) | (std::uint32_t{b} << 16) | (std::uint32_t{c} << 8) | d) {}

  constexpr auto operator<=>(const Ipv4&) const = default;

  std::string str() const {
    std::string out;
    out.reserve(15);
    for (int shift = 24; shift >= 0; shift -= 8) {
      out += std::to_string((value >> shift) & 0xffu);
      if (shift) out += '.';
    }
    return out;
  }

  static std::optional<Ipv4> parse(std::string_view text) {
    std::uint32_t v = 0;
    const char* p = text.data();
    const char* end = text.data() + text.size();
    for (int i = 0; i < 4; ++i) {
      if (p == end) return std::nullopt;
      unsigned octet = 0;
      const char* start = p;
      auto [next, ec] = std::from_chars(p, end, octet);
      if (ec != std::errc{} || octet > 255 || next - start > 3) return std::nullopt;
      v = (v << 8) | octet;
      p = next;
      if (i < 3) {
        if (p == end || *p != '.') return std::nullopt;
        ++p;
      }
    }
    if (p != end) return std::nullopt;
    return Ipv4{v};
  }

  static Ipv4 must_parse(std::string_view text) {
    auto ip = parse(text);
    if (!ip) throw std::invalid_argument("bad IPv4 address: " + std::string(text));
    return *ip;
  }
};

struct Endpoint {
  Ipv4 ip;
  std::uint16_t port = 0;

  constexpr auto operator<=>(const Endpoint&) const = default;

  std::string str() const { return ip.str() + ":" + std::to_string(port); }
};

/// CIDR prefix; `len` in [0, 32].
struct Prefix {
  Ipv4 base;
  int len = 0;

  static constexpr std::uint32_t mask_for(int len) {
    return len == 0 ? 0u : ~std::uint32_t{0} << (32 - len);
  }

  constexpr bool contains(Ipv4 ip) const {
    return (ip.value & mask_for(len)) == (base.value & mask_for(len));
  }

  std::string str() const { return base.str() + "/" + std::to_string(len); }

  static std::optional<Prefix> parse(std::string_view text) {
    auto slash = text.find('/');
    if (slash == std::string_view::npos) return std::nullopt;
    auto ip = Ipv4::parse(text.substr(0, slash));
    int len = -1;
    auto tail = text.substr(slash + 1);
    auto [p, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), len);
    if (!ip || ec != std::errc{} || p != tail.data() + tail.size() || len < 0 || len > 32)
      return std::nullopt;
    return Prefix{Ipv4{ip->value & mask_for(len)}, len};
  }
};

}  // namespace rtcleak

template <>
struct std::hash<rtcleak::Ipv4> {
  std::size_t operator()(const rtcleak::Ipv4& ip) const noexcept {
    return std::hash<std::uint32_t>{}(ip.value);
  }
};

template <>
struct std::hash<rtcleak::Endpoint> {
  std::size_t operator()(const rtcleak::Endpoint& e) const noexcept {
    return std::hash<std::uint64_t>{}((std::uint64_t{e.ip.value} << 16) | e.port);
  }
};
