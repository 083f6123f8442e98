#pragma once

// Flat binary array format shared by kernel checkpoints and the verifier:
//   [n_dims: u64 LE][dims: u64 LE x n_dims][payload: f64 LE, row-major]
// The product of dims must equal the payload length.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "o2proxy/errors.hpp"

namespace o2proxy::flatbin {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");
static_assert(sizeof(double) == 8);

struct Array {
  std::vector<std::uint64_t> dims;
  std::vector<double> payload;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (std::uint64_t d : dims) n *= d;
    return n;
  }
};

inline void validate(const Array& a) {
  if (a.element_count() != a.payload.size())
    throw DimsMismatch("flat binary: dims product " + std::to_string(a.element_count()) +
                       " != payload length " + std::to_string(a.payload.size()));
}

inline void write_array(const std::filesystem::path& path, const Array& a) {
  validate(a);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::uint64_t n_dims = a.dims.size();
  out.write(reinterpret_cast<const char*>(&n_dims), sizeof(n_dims));
  out.write(reinterpret_cast<const char*>(a.dims.data()),
            static_cast<std::streamsize>(a.dims.size() * sizeof(std::uint64_t)));
  out.write(reinterpret_cast<const char*>(a.payload.data()),
            static_cast<std::streamsize>(a.payload.size() * sizeof(double)));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

inline Array read_array(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  Array a;
  std::uint64_t n_dims = 0;
  in.read(reinterpret_cast<char*>(&n_dims), sizeof(n_dims));
  if (!in) throw IoError("'" + path.string() + "': truncated header");
  if (n_dims > 64) throw IoError("'" + path.string() + "': implausible dim count");
  a.dims.resize(n_dims);
  in.read(reinterpret_cast<char*>(a.dims.data()),
          static_cast<std::streamsize>(n_dims * sizeof(std::uint64_t)));
  if (!in) throw IoError("'" + path.string() + "': truncated dims");
  const std::uint64_t count = a.element_count();
  a.payload.resize(count);
  in.read(reinterpret_cast<char*>(a.payload.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw IoError("'" + path.string() + "': truncated payload");
  char extra;
  if (in.read(&extra, 1)) throw IoError("'" + path.string() + "': trailing bytes");
  return a;
}

}  // namespace o2proxy::flatbin
