#include <gtest/gtest.h>

#include <climits>

#include "rtcleak/bencode.hpp"
#include "rtcleak/rng.hpp"

using namespace rtcleak;
using namespace rtcleak::bencode;

namespace {

std::size_t error_offset(std::string_view s, const DecodeOptions& o = {}) {
  try {
    decode(s, o);
  } catch (const DecodeError& e) {
    return e.offset();
  }
  ADD_FAILURE() << "accepted: " << s;
  return SIZE_MAX;
}

std::string random_bytes(Rng& rng, std::size_t max_len) {
  std::string s(static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(max_len))), '\0');
  for (auto& c : s) c = static_cast<char>(uniform_int(rng, 0, 255));
  return s;
}

BValue random_value(Rng& rng, int depth) {
  auto kind = uniform_int(rng, 0, depth >= 4 ? 1 : 3);
  switch (kind) {
    case 0: {
      switch (uniform_int(rng, 0, 4)) {
        case 0: return BValue(std::int64_t{INT64_MIN});
        case 1: return BValue(std::int64_t{INT64_MAX});
        case 2: return BValue(0);
        default: return BValue(uniform_int(rng, -1000000, 1000000));
      }
    }
    case 1: return BValue(random_bytes(rng, 24));
    case 2: {
      BList l;
      auto n = uniform_int(rng, 0, 5);
      for (std::int64_t i = 0; i < n; ++i) l.push_back(random_value(rng, depth + 1));
      return BValue(std::move(l));
    }
    default: {
      BDict d;
      auto n = uniform_int(rng, 0, 5);
      for (std::int64_t i = 0; i < n; ++i) d[random_bytes(rng, 8)] = random_value(rng, depth + 1);
      return BValue(std::move(d));
    }
  }
}

}  // namespace

TEST(Bencode, EncodesDictionaryWithList) {
  BDict d;
  d["cow"] = "moo";
  d["spam"] = BList{"a", "b"};
  EXPECT_EQ(encode(BValue(d)), "d3:cow3:moo4:spaml1:a1:bee");
  EXPECT_EQ(encode(BValue(42)), "i42e");
  EXPECT_EQ(encode(BValue(-3)), "i-3e");
  EXPECT_EQ(encode(BValue("")), "0:");
  EXPECT_EQ(decode("d3:cow3:moo4:spaml1:a1:bee"), BValue(d));
}

TEST(Bencode, TruncatedInputReportsEndOffset) {
  EXPECT_EQ(error_offset("d3:cow"), 6u);
  EXPECT_EQ(error_offset(""), 0u);
  EXPECT_EQ(error_offset("5:ab"), 4u);
}

TEST(Bencode, RejectsNonCanonicalForms) {
  EXPECT_EQ(error_offset("i03e"), 1u);
  EXPECT_EQ(error_offset("i-0e"), 1u);
  EXPECT_EQ(error_offset("ie"), 1u);
  EXPECT_EQ(error_offset("i1ex"), 3u);
  EXPECT_EQ(error_offset("03:abc"), 0u);
  EXPECT_EQ(error_offset("d1:ai1e1:ai2ee"), 7u);
  EXPECT_EQ(error_offset("di1ei2ee"), 1u);
  EXPECT_EQ(error_offset("i9223372036854775808e"), 1u);
  EXPECT_EQ(error_offset("x"), 0u);
}

TEST(Bencode, UnsortedKeysWarnOrReject) {
  std::vector<DecodeWarning> w;
  auto v = decode("d1:bi1e1:ai2ee", {}, &w);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].offset, 7u);
  EXPECT_EQ(v.get("a")->as_int(), 2);
  DecodeOptions strict;
  strict.reject_unsorted_keys = true;
  EXPECT_EQ(error_offset("d1:bi1e1:ai2ee", strict), 7u);
}

TEST(Bencode, DepthLimit) {
  std::string deep(300, 'l');
  deep += std::string(300, 'e');
  EXPECT_THROW(decode(deep), DecodeError);
  DecodeOptions o;
  o.max_depth = 400;
  EXPECT_NO_THROW(decode(deep, o));
}

TEST(Bencode, IntegerExtremes) {
  EXPECT_EQ(decode("i-9223372036854775808e").as_int(), INT64_MIN);
  EXPECT_EQ(decode("i9223372036854775807e").as_int(), INT64_MAX);
}

TEST(BencodeProperty, RoundTripOfRandomValues) {
  Rng rng(4242);
  for (int i = 0; i < 10000; ++i) {
    BValue v = random_value(rng, 0);
    std::string s = encode(v);
    std::vector<DecodeWarning> w;
    BValue back = decode(s, {}, &w);
    ASSERT_EQ(back, v) << i;
    EXPECT_TRUE(w.empty());
    EXPECT_EQ(encode(back), s);
  }
}

// Random mutations of valid encodings either decode to something that
// re-encodes identically or raise DecodeError; nothing else escapes.
TEST(BencodeProperty, MutatedInputsFailCleanly) {
  Rng rng(99);
  for (int i = 0; i < 5000; ++i) {
    std::string s = encode(random_value(rng, 0));
    if (s.empty()) continue;
    auto pos = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(s.size()) - 1));
    switch (uniform_int(rng, 0, 2)) {
      case 0: s[pos] = static_cast<char>(uniform_int(rng, 0, 255)); break;
      case 1: s.erase(pos, 1); break;
      default: s.insert(pos, 1, static_cast<char>(uniform_int(rng, 0, 255))); break;
    }
    DecodeOptions strict;
    strict.reject_unsorted_keys = true;
    try {
      auto v = decode(s, strict);
      EXPECT_EQ(encode(v), s);
    } catch (const DecodeError& e) {
      EXPECT_LE(e.offset(), s.size());
    }
  }
}
