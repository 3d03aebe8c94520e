#pragma once

// User directory of the simulated RTC overlay: profiles, the "search users"
// command and bulk ID harvesting from name lists.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rtcleak::rtcdir {

struct UserProfile {
  std::string rtc_id;
  std::string email;
  std::optional<std::string> birth_name;
  std::optional<std::string> first_name;
  std::optional<std::string> last_name;
  std::optional<std::string> city;
  std::optional<std::string> country;
  std::optional<std::string> language;
  std::optional<std::string> age;
  std::optional<std::string> gender;
  std::optional<std::string> homepage;
  std::set<std::string> contact_list;
  std::set<std::string> blocked;
  bool whitelist_only = false;
};

/// What "search users" returns: no e-mail, contacts, or privacy lists.
struct PublicProfile {
  std::string rtc_id;
  std::optional<std::string> birth_name;
  std::optional<std::string> city;
  std::optional<std::string> country;
  std::optional<std::string> language;
  std::optional<std::string> age;
  std::optional<std::string> gender;
  std::optional<std::string> homepage;
};

enum class ProfileField : std::uint8_t { BirthName, City, Country, Language, Age, Gender, Homepage };
inline constexpr std::size_t kProfileFieldCount = 7;

inline constexpr std::array<const char*, kProfileFieldCount> kProfileFieldNames = {
    "birth_name", "city", "country", "language", "age", "gender", "homepage"};

/// Which optional fields a profile exposes; values themselves are never kept.
struct FieldAvailability {
  std::uint8_t bits = 0;

  bool has(ProfileField f) const { return (bits >> static_cast<int>(f)) & 1u; }
  void set(ProfileField f) { bits |= static_cast<std::uint8_t>(1u << static_cast<int>(f)); }

  /// Any of age, gender, homepage, country or language.
  bool has_identifying_extra() const {
    return has(ProfileField::Age) || has(ProfileField::Gender) || has(ProfileField::Homepage) ||
           has(ProfileField::Country) || has(ProfileField::Language);
  }

  static FieldAvailability of(const PublicProfile& p) {
    FieldAvailability a;
    if (p.birth_name) a.set(ProfileField::BirthName);
    if (p.city) a.set(ProfileField::City);
    if (p.country) a.set(ProfileField::Country);
    if (p.language) a.set(ProfileField::Language);
    if (p.age) a.set(ProfileField::Age);
    if (p.gender) a.set(ProfileField::Gender);
    if (p.homepage) a.set(ProfileField::Homepage);
    return a;
  }
};

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// 6-32 characters, starting with a letter; letters, digits and . , - _ after.
inline bool is_valid_rtc_id(std::string_view s) {
  if (s.size() < 6 || s.size() > 32) return false;
  if (!std::isalpha(static_cast<unsigned char>(s[0]))) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == ',' || c == '-' || c == '_';
  });
}

class Directory {
 public:
  Directory() = default;

  void add(UserProfile p) {
    if (p.rtc_id.empty()) throw std::invalid_argument("empty rtc_id");
    auto id_key = to_lower(p.rtc_id);
    auto mail_key = to_lower(p.email);
    if (by_id_.count(id_key)) throw std::invalid_argument("duplicate rtc_id " + p.rtc_id);
    if (!mail_key.empty() && by_email_.count(mail_key)) throw std::invalid_argument("duplicate email " + p.email);
    auto idx = static_cast<std::uint32_t>(profiles_.size());
    by_id_.emplace(std::move(id_key), idx);
    if (!mail_key.empty()) by_email_.emplace(std::move(mail_key), idx);
    std::string name = p.birth_name ? to_lower(*p.birth_name) : std::string{};
    index_name(idx, name);
    lowered_names_.push_back(std::move(name));
    profiles_.push_back(std::move(p));
  }

  std::size_t size() const { return profiles_.size(); }
  const std::vector<UserProfile>& profiles() const { return profiles_; }

  const UserProfile* find(std::string_view rtc_id) const {
    auto it = by_id_.find(to_lower(rtc_id));
    return it == by_id_.end() ? nullptr : &profiles_[it->second];
  }

  const UserProfile& at(std::string_view rtc_id) const {
    if (auto* p = find(rtc_id)) return *p;
    throw std::out_of_range("unknown rtc_id " + std::string(rtc_id));
  }

  static PublicProfile public_view(const UserProfile& p) {
    return PublicProfile{p.rtc_id, p.birth_name, p.city, p.country, p.language, p.age, p.gender, p.homepage};
  }

  /// "@" queries are exact e-mail lookups; a syntactically valid ID also matches
  /// rtc_id; everything else is a case-insensitive birth-name substring search.
  std::vector<PublicProfile> search_users(std::string_view query) const {
    std::vector<PublicProfile> out;
    if (query.empty()) return out;
    if (query.find('@') != std::string_view::npos) {
      auto it = by_email_.find(to_lower(query));
      if (it != by_email_.end()) out.push_back(public_view(profiles_[it->second]));
      return out;
    }
    std::vector<std::uint32_t> hits = name_matches(to_lower(query));
    if (is_valid_rtc_id(query)) {
      if (auto it = by_id_.find(to_lower(query)); it != by_id_.end()) {
        auto pos = std::lower_bound(hits.begin(), hits.end(), it->second);
        if (pos == hits.end() || *pos != it->second) hits.insert(pos, it->second);
      }
    }
    out.reserve(hits.size());
    for (auto idx : hits) out.push_back(public_view(profiles_[idx]));
    return out;
  }

 private:
  static std::uint32_t trigram_key(std::string_view s, std::size_t i) {
    return (std::uint32_t{static_cast<unsigned char>(s[i])} << 16) |
           (std::uint32_t{static_cast<unsigned char>(s[i + 1])} << 8) | static_cast<unsigned char>(s[i + 2]);
  }

  void index_name(std::uint32_t idx, const std::string& name) {
    if (name.size() < 3) return;
    for (std::size_t i = 0; i + 3 <= name.size(); ++i) {
      auto& posting = trigrams_[trigram_key(name, i)];
      if (posting.empty() || posting.back() != idx) posting.push_back(idx);
    }
  }

  // Sorted profile indices whose lowered birth name contains `needle`.
  std::vector<std::uint32_t> name_matches(const std::string& needle) const {
    std::vector<std::uint32_t> out;
    if (needle.size() < 3) {
      for (std::uint32_t i = 0; i < lowered_names_.size(); ++i)
        if (profiles_[i].birth_name && lowered_names_[i].find(needle) != std::string::npos) out.push_back(i);
      return out;
    }
    // Verify against the rarest trigram's posting list.
    const std::vector<std::uint32_t>* best = nullptr;
    for (std::size_t i = 0; i + 3 <= needle.size(); ++i) {
      auto it = trigrams_.find(trigram_key(needle, i));
      if (it == trigrams_.end()) return out;
      if (!best || it->second.size() < best->size()) best = &it->second;
    }
    for (auto idx : *best)
      if (lowered_names_[idx].find(needle) != std::string::npos) out.push_back(idx);
    return out;
  }

  std::vector<UserProfile> profiles_;
  std::vector<std::string> lowered_names_;
  std::unordered_map<std::string, std::uint32_t> by_id_;
  std::unordered_map<std::string, std::uint32_t> by_email_;
  std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> trigrams_;
};

struct HarvestResult {
  std::set<std::string> search_strings;
  std::map<std::string, FieldAvailability> ids;  // rtc_id -> availability flags

  double fraction_with(ProfileField f) const {
    if (ids.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& [id, a] : ids) n += a.has(f);
    return static_cast<double>(n) / static_cast<double>(ids.size());
  }

  double fraction_with_identifying_extra() const {
    if (ids.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& [id, a] : ids) n += a.has_identifying_extra();
    return static_cast<double>(n) / static_cast<double>(ids.size());
  }
};

/// Search strings are full names, first names, last names and every
/// "first last" combination; results are aggregated into unique IDs.
inline HarvestResult harvest_ids(const Directory& dir, const std::vector<std::string>& first_names,
                                 const std::vector<std::string>& last_names,
                                 const std::vector<std::string>& full_names) {
  if (first_names.empty() && last_names.empty() && full_names.empty())
    throw std::invalid_argument("harvest needs at least one name list");
  HarvestResult r;
  for (const auto& n : full_names) r.search_strings.insert(n);
  for (const auto& n : first_names) r.search_strings.insert(n);
  for (const auto& n : last_names) r.search_strings.insert(n);
  for (const auto& f : first_names)
    for (const auto& l : last_names) r.search_strings.insert(f + " " + l);
  r.search_strings.erase("");
  for (const auto& q : r.search_strings)
    for (const auto& p : dir.search_users(q)) r.ids.emplace(p.rtc_id, FieldAvailability::of(p));
  return r;
}

// ---------------------------------------------------------------------------
// Fixture format: one profile per line, tab separated, empty field = unset.
//   rtc_id email birth_name first_name last_name city country language age
//   gender homepage contacts(comma list) blocked(comma list) whitelist_only(0/1)

inline constexpr std::size_t kFixtureColumns = 14;

namespace detail {
inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<std::string> opt(const std::string& s) {
  return s.empty() ? std::nullopt : std::optional<std::string>(s);
}

inline std::string join(const std::set<std::string>& s) {
  std::string out;
  for (const auto& v : s) {
    if (!out.empty()) out += ',';
    out += v;
  }
  return out;
}
}  // namespace detail

inline UserProfile parse_profile_line(std::string_view line) {
  auto f = detail::split(line, '\t');
  if (f.size() != kFixtureColumns)
    throw std::invalid_argument("directory fixture: expected 14 columns, got " + std::to_string(f.size()));
  UserProfile p;
  p.rtc_id = f[0];
  p.email = f[1];
  p.birth_name = detail::opt(f[2]);
  p.first_name = detail::opt(f[3]);
  p.last_name = detail::opt(f[4]);
  p.city = detail::opt(f[5]);
  p.country = detail::opt(f[6]);
  p.language = detail::opt(f[7]);
  p.age = detail::opt(f[8]);
  p.gender = detail::opt(f[9]);
  p.homepage = detail::opt(f[10]);
  for (auto& c : detail::split(f[11], ','))
    if (!c.empty()) p.contact_list.insert(c);
  for (auto& c : detail::split(f[12], ','))
    if (!c.empty()) p.blocked.insert(c);
  p.whitelist_only = f[13] == "1";
  return p;
}

inline std::string format_profile_line(const UserProfile& p) {
  auto v = [](const std::optional<std::string>& o) { return o.value_or(""); };
  std::string out = p.rtc_id;
  for (const std::string& field :
       {p.email, v(p.birth_name), v(p.first_name), v(p.last_name), v(p.city), v(p.country), v(p.language),
        v(p.age), v(p.gender), v(p.homepage), detail::join(p.contact_list), detail::join(p.blocked),
        std::string(p.whitelist_only ? "1" : "0")}) {
    out += '\t';
    out += field;
  }
  return out;
}

inline Directory read_directory(std::istream& in) {
  Directory dir;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    dir.add(parse_profile_line(line));
  }
  return dir;
}

inline void write_directory(std::ostream& out, const Directory& dir) {
  for (const auto& p : dir.profiles()) out << format_profile_line(p) << '\n';
}

}  // namespace rtcleak::rtcdir
