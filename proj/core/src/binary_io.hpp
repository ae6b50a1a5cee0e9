// SPDX-License-Identifier: Apache-2.0
//
// Little helpers for the versioned binary checkpoint formats. Values are written in host
// byte order; every supported build target is little-endian.

#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "guiderag/common.hpp"

namespace guiderag::detail {

inline constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw InvalidArgument("truncated checkpoint");
  return v;
}

inline void write_doubles(std::ostream& out, std::span<const double> v) {
  write_pod<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> read_doubles(std::istream& in, std::uint64_t max_size = 1ULL << 32) {
  const auto n = read_pod<std::uint64_t>(in);
  if (n > max_size) throw InvalidArgument("corrupt checkpoint: array too large");
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw InvalidArgument("truncated checkpoint");
  return v;
}

/// Eight-byte magic followed by the format version.
inline void write_header(std::ostream& out, std::string_view magic) {
  std::string m(magic);
  m.resize(8, '\0');
  out.write(m.data(), 8);
  write_pod(out, kFormatVersion);
}

inline void read_header(std::istream& in, std::string_view magic) {
  std::string m(8, '\0');
  in.read(m.data(), 8);
  std::string expected(magic);
  expected.resize(8, '\0');
  if (!in || m != expected) {
    throw InvalidArgument("not a " + std::string(magic) + " checkpoint");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kFormatVersion) {
    throw InvalidArgument("unsupported checkpoint version " + std::to_string(version));
  }
}

}  // namespace guiderag::detail
