// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>

#include "dsvd/common.hpp"

// Little helpers for the self-describing binary containers. All integers are
// little-endian uint32, all tensors raw float32 in row-major order.
namespace dsvd::binary {

using Magic = std::array<char, 8>;

inline Magic make_magic(std::string_view tag) {
  Magic m{};
  std::memcpy(m.data(), tag.data(), std::min<std::size_t>(tag.size(), m.size()));
  return m;
}

inline void write_magic(std::ostream& out, std::string_view tag) {
  const Magic m = make_magic(tag);
  out.write(m.data(), m.size());
}

inline void expect_magic(std::istream& in, std::string_view tag) {
  Magic m{};
  in.read(m.data(), m.size());
  require(in.good() && m == make_magic(tag), ErrorCode::kFormat,
          "bad magic, expected " + std::string(tag));
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  const std::array<unsigned char, 4> bytes{static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                           static_cast<unsigned char>(v >> 16),
                                           static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(bytes.data()), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  require(in.good(), ErrorCode::kFormat, "truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_i32(std::ostream& out, std::int32_t v) { write_u32(out, static_cast<std::uint32_t>(v)); }
inline std::int32_t read_i32(std::istream& in) { return static_cast<std::int32_t>(read_u32(in)); }

// x86-64 and aarch64 are both little-endian; float32 is written as-is.
inline void write_floats(std::ostream& out, std::span<const float> data) {
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
}

inline void read_floats(std::istream& in, std::span<float> data) {
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  require(in.good(), ErrorCode::kFormat, "truncated tensor data");
}

}  // namespace dsvd::binary
