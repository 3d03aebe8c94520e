#pragma once

// Bencoding with canonical-form checking.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace rtcleak::bencode {

struct BValue;
using BList = std::vector<BValue>;
using BDict = std::map<std::string, BValue>;  // byte-ordered keys

struct BValue {
  std::variant<std::int64_t, std::string, BList, BDict> v;

  BValue() : v(std::int64_t{0}) {}
  BValue(std::int64_t i) : v(i) {}
  BValue(int i) : v(std::int64_t{i}) {}
  BValue(std::string s) : v(std::move(s)) {}
  BValue(const char* s) : v(std::string(s)) {}
  BValue(BList l) : v(std::move(l)) {}
  BValue(BDict d) : v(std::move(d)) {}

  bool is_int() const { return std::holds_alternative<std::int64_t>(v); }
  bool is_string() const { return std::holds_alternative<std::string>(v); }
  bool is_list() const { return std::holds_alternative<BList>(v); }
  bool is_dict() const { return std::holds_alternative<BDict>(v); }

  std::int64_t as_int() const { return std::get<std::int64_t>(v); }
  const std::string& as_string() const { return std::get<std::string>(v); }
  const BList& as_list() const { return std::get<BList>(v); }
  const BDict& as_dict() const { return std::get<BDict>(v); }
  BList& as_list() { return std::get<BList>(v); }
  BDict& as_dict() { return std::get<BDict>(v); }

  /// Dictionary member or nullptr.
  const BValue* get(std::string_view key) const {
    if (!is_dict()) return nullptr;
    auto& d = as_dict();
    auto it = d.find(std::string(key));
    return it == d.end() ? nullptr : &it->second;
  }

  bool operator==(const BValue& o) const { return v == o.v; }
};

class DecodeError : public std::runtime_error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

inline void encode_to(std::string& out, const BValue& b) {
  if (b.is_int()) {
    out += 'i';
    out += std::to_string(b.as_int());
    out += 'e';
  } else if (b.is_string()) {
    const auto& s = b.as_string();
    out += std::to_string(s.size());
    out += ':';
    out += s;
  } else if (b.is_list()) {
    out += 'l';
    for (const auto& e : b.as_list()) encode_to(out, e);
    out += 'e';
  } else {
    out += 'd';
    for (const auto& [k, e] : b.as_dict()) {
      out += std::to_string(k.size());
      out += ':';
      out += k;
      encode_to(out, e);
    }
    out += 'e';
  }
}

inline std::string encode(const BValue& b) {
  std::string out;
  encode_to(out, b);
  return out;
}

struct DecodeOptions {
  bool reject_unsorted_keys = false;
  std::size_t max_depth = 256;
};

struct DecodeWarning {
  std::size_t offset;
  std::string message;
};

namespace detail {

class Parser {
 public:
  Parser(std::string_view in, const DecodeOptions& opt, std::vector<DecodeWarning>* warnings)
      : in_(in), opt_(opt), warnings_(warnings) {}

  BValue parse_top() {
    BValue v = value(0);
    if (pos_ != in_.size()) throw DecodeError("trailing bytes", pos_);
    return v;
  }

 private:
  char peek() const {
    if (pos_ >= in_.size()) throw DecodeError("unexpected end of input", pos_);
    return in_[pos_];
  }

  BValue value(std::size_t depth) {
    if (depth > opt_.max_depth) throw DecodeError("nesting too deep", pos_);
    char c = peek();
    if (c == 'i') return integer();
    if (c >= '0' && c <= '9') return BValue(string());
    if (c == 'l') {
      ++pos_;
      BList l;
      while (peek() != 'e') l.push_back(value(depth + 1));
      ++pos_;
      return BValue(std::move(l));
    }
    if (c == 'd') {
      ++pos_;
      BDict d;
      std::string prev;
      bool first = true;
      while (peek() != 'e') {
        std::size_t key_at = pos_;
        if (peek() < '0' || peek() > '9') throw DecodeError("dictionary key is not a string", pos_);
        std::string key = string();
        if (!first && key <= prev) {
          if (key == prev) throw DecodeError("duplicate dictionary key", key_at);
          if (opt_.reject_unsorted_keys) throw DecodeError("unsorted dictionary key", key_at);
          if (warnings_) warnings_->push_back({key_at, "unsorted dictionary key"});
        }
        if (d.count(key)) throw DecodeError("duplicate dictionary key", key_at);
        first = false;
        prev = key;
        BValue val = value(depth + 1);
        d.emplace(std::move(key), std::move(val));
      }
      ++pos_;
      return BValue(std::move(d));
    }
    throw DecodeError(std::string("unexpected byte '") + c + "'", pos_);
  }

  BValue integer() {
    std::size_t start = ++pos_;
    bool neg = false;
    if (peek() == '-') {
      neg = true;
      ++pos_;
    }
    std::size_t digits_at = pos_;
    std::uint64_t mag = 0;
    while (peek() != 'e') {
      char c = peek();
      if (c < '0' || c > '9') throw DecodeError("invalid integer digit", pos_);
      if (mag > (std::uint64_t{1} << 63) / 10) throw DecodeError("integer overflow", pos_);
      mag = mag * 10 + static_cast<std::uint64_t>(c - '0');
      ++pos_;
    }
    std::size_t n = pos_ - digits_at;
    if (n == 0) throw DecodeError("empty integer", start);
    if (n > 1 && in_[digits_at] == '0') throw DecodeError("integer with leading zero", digits_at);
    if (neg && mag == 0) throw DecodeError("negative zero", start);
    if (mag > (std::uint64_t{1} << 63) - (neg ? 0 : 1)) throw DecodeError("integer overflow", start);
    ++pos_;
    if (neg) return BValue(mag == (std::uint64_t{1} << 63) ? INT64_MIN : -static_cast<std::int64_t>(mag));
    return BValue(static_cast<std::int64_t>(mag));
  }

  std::string string() {
    std::size_t start = pos_;
    std::size_t len = 0;
    while (peek() != ':') {
      char c = peek();
      if (c < '0' || c > '9') throw DecodeError("invalid string length", pos_);
      if (len > in_.size()) throw DecodeError("string length too large", start);
      len = len * 10 + static_cast<std::size_t>(c - '0');
      ++pos_;
    }
    if (pos_ - start > 1 && in_[start] == '0') throw DecodeError("string length with leading zero", start);
    ++pos_;
    if (len > in_.size() - pos_) throw DecodeError("string runs past end of input", in_.size());
    std::string s(in_.substr(pos_, len));
    pos_ += len;
    return s;
  }

  std::string_view in_;
  const DecodeOptions& opt_;
  std::vector<DecodeWarning>* warnings_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline BValue decode(std::string_view in, const DecodeOptions& opt = {}, std::vector<DecodeWarning>* warnings = nullptr) {
  return detail::Parser(in, opt, warnings).parse_top();
}

}  // namespace rtcleak::bencode
