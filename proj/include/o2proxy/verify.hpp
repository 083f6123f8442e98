#pragma once

// BitwiseCheck: checkpoints of kernel outputs plus bit/ULP/relative
// comparison between a reference run and an offloaded run. NaNs compare by
// bit pattern in every mode; +0.0 and -0.0 are distinct in BIT mode and
// equal in REL mode.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "o2proxy/errors.hpp"
#include "o2proxy/flatbin.hpp"

namespace o2proxy::verify {

inline std::uint64_t fnv1a(std::span<const std::byte> bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 1099511628211ull;
  }
  return h;
}

struct Checkpoint {
  std::string label;
  std::vector<std::uint64_t> dims;
  std::vector<double> payload;
  std::uint64_t hash = 0;

  static Checkpoint record(std::string label, std::vector<std::uint64_t> dims,
                           std::vector<double> payload) {
    Checkpoint c;
    c.label = std::move(label);
    c.dims = std::move(dims);
    c.payload = std::move(payload);
    std::uint64_t n = 1;
    for (std::uint64_t d : c.dims) n *= d;
    if (n != c.payload.size())
      throw DimsMismatch("checkpoint '" + c.label + "': dims product " + std::to_string(n) +
                         " != payload length " + std::to_string(c.payload.size()));
    c.hash = c.compute_hash();
    return c;
  }

  std::uint64_t compute_hash() const {
    return fnv1a(std::as_bytes(std::span<const double>(payload)));
  }

  void save(const std::filesystem::path& path) const {
    flatbin::write_array(path, flatbin::Array{dims, payload});
  }

  static Checkpoint load(const std::filesystem::path& path, std::string label = "") {
    flatbin::Array a = flatbin::read_array(path);
    if (label.empty()) label = path.stem().string();
    return record(std::move(label), std::move(a.dims), std::move(a.payload));
  }
};

enum class CompareMode { kBit, kUlp, kRel };

struct CompareSpec {
  CompareMode mode = CompareMode::kBit;
  std::uint64_t ulps = 0;   // for kUlp
  double rel_eps = 0.0;     // for kRel

  static CompareSpec bit() { return CompareSpec{CompareMode::kBit, 0, 0.0}; }
  static CompareSpec ulp(std::uint64_t k) { return CompareSpec{CompareMode::kUlp, k, 0.0}; }
  static CompareSpec rel(double eps) { return CompareSpec{CompareMode::kRel, 0, eps}; }

  // Accepts "bit", "ulp:<k>", or "rel:<eps>"; anything else is rejected.
  static CompareSpec parse(const std::string& text) {
    try {
      if (text == "bit") return bit();
      if (text.rfind("ulp:", 0) == 0) {
        const std::string rest = text.substr(4);
        std::size_t pos = 0;
        const unsigned long long k = std::stoull(rest, &pos);
        if (pos == rest.size()) return ulp(k);
      } else if (text.rfind("rel:", 0) == 0) {
        const std::string rest = text.substr(4);
        std::size_t pos = 0;
        const double eps = std::stod(rest, &pos);
        if (pos == rest.size()) return rel(eps);
      }
    } catch (const std::exception&) {
      // malformed number, rejected below
    }
    throw InvalidArgument("unknown compare mode '" + text + "'");
  }

  std::string to_string() const {
    switch (mode) {
      case CompareMode::kBit: return "bit";
      case CompareMode::kUlp: return "ulp:" + std::to_string(ulps);
      case CompareMode::kRel: {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "rel:%g", rel_eps);
        return buf;
      }
    }
    return "?";
  }
};

struct Mismatch {
  std::uint64_t index = 0;
  std::uint64_t bits_a = 0, bits_b = 0;
  double value_a = 0.0, value_b = 0.0;
};

struct CompareReport {
  CompareSpec spec;
  bool match = false;
  std::uint64_t mismatch_count = 0;
  std::optional<Mismatch> first_mismatch;

  nlohmann::json to_json() const {
    nlohmann::json j{{"mode", spec.to_string()},
                     {"match", match},
                     {"mismatch_count", mismatch_count}};
    if (first_mismatch) {
      char ba[32], bb[32];
      std::snprintf(ba, sizeof(ba), "0x%016llx",
                    static_cast<unsigned long long>(first_mismatch->bits_a));
      std::snprintf(bb, sizeof(bb), "0x%016llx",
                    static_cast<unsigned long long>(first_mismatch->bits_b));
      j["first_mismatch"] = nlohmann::json{{"index", first_mismatch->index},
                                           {"bits_a", ba},
                                           {"bits_b", bb},
                                           {"value_a", first_mismatch->value_a},
                                           {"value_b", first_mismatch->value_b}};
    }
    return j;
  }
};

namespace detail {

// Maps the IEEE-754 bit pattern onto a line where adjacent representable
// doubles differ by 1, so ULP distance is an integer subtraction.
inline std::int64_t ordinal(std::uint64_t bits) {
  if (bits & 0x8000000000000000ull)
    return -static_cast<std::int64_t>(bits & 0x7fffffffffffffffull);
  return static_cast<std::int64_t>(bits);
}

inline std::uint64_t ulp_distance(double a, double b) {
  const std::int64_t oa = ordinal(std::bit_cast<std::uint64_t>(a));
  const std::int64_t ob = ordinal(std::bit_cast<std::uint64_t>(b));
  const std::int64_t d = oa > ob ? oa - ob : ob - oa;
  return static_cast<std::uint64_t>(d);
}

inline bool elements_equal(double a, double b, const CompareSpec& spec) {
  const std::uint64_t ba = std::bit_cast<std::uint64_t>(a);
  const std::uint64_t bb = std::bit_cast<std::uint64_t>(b);
  // A NaN matches only the identical bit pattern, in every mode.
  if (std::isnan(a) || std::isnan(b)) return ba == bb;
  switch (spec.mode) {
    case CompareMode::kBit:
      return ba == bb;
    case CompareMode::kUlp:
      if (ba == bb) return true;
      if (std::isinf(a) || std::isinf(b)) return false;
      return ulp_distance(a, b) <= spec.ulps;
    case CompareMode::kRel: {
      if (a == b) return true;  // covers +0 vs -0 and equal finite values
      if (std::isinf(a) || std::isinf(b)) return false;
      const double scale = std::max(std::fabs(a), std::fabs(b));
      return std::fabs(a - b) <= spec.rel_eps * scale;
    }
  }
  return false;
}

}  // namespace detail

inline CompareReport compare(const Checkpoint& a, const Checkpoint& b,
                             const CompareSpec& spec) {
  if (a.dims != b.dims)
    throw DimsMismatch("compare: '" + a.label + "' and '" + b.label +
                       "' have different dims");
  CompareReport rep;
  rep.spec = spec;
  for (std::size_t i = 0; i < a.payload.size(); ++i) {
    if (detail::elements_equal(a.payload[i], b.payload[i], spec)) continue;
    if (rep.mismatch_count == 0) {
      Mismatch m;
      m.index = i;
      m.value_a = a.payload[i];
      m.value_b = b.payload[i];
      m.bits_a = std::bit_cast<std::uint64_t>(a.payload[i]);
      m.bits_b = std::bit_cast<std::uint64_t>(b.payload[i]);
      rep.first_mismatch = m;
    }
    ++rep.mismatch_count;
  }
  rep.match = rep.mismatch_count == 0;
  return rep;
}

}  // namespace o2proxy::verify
