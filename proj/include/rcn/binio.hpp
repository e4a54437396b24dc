#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>

#include "rcn/errors.hpp"

// Little-endian binary stream helpers for the volume and weight file formats.
// Multi-byte values are written byte-by-byte from the least significant end,
// so files are identical regardless of host byte order.

namespace rcn::binio {

template <typename U>
void write_le(std::ostream& os, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U read_le(std::istream& is, const std::string& what) {
  static_assert(std::is_unsigned_v<U>);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = is.get();
    if (c == EOF) throw FormatError("truncated file while reading " + what);
    v |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

template <typename T>
void write_scalar(std::ostream& os, T v) {
  static_assert(std::is_floating_point_v<T>);
  if constexpr (sizeof(T) == 4) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_le<std::uint32_t>(os, bits);
  } else {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_le<std::uint64_t>(os, bits);
  }
}

template <typename T>
T read_scalar(std::istream& is, const std::string& what) {
  static_assert(std::is_floating_point_v<T>);
  T v;
  if constexpr (sizeof(T) == 4) {
    const std::uint32_t bits = read_le<std::uint32_t>(is, what);
    std::memcpy(&v, &bits, 4);
  } else {
    const std::uint64_t bits = read_le<std::uint64_t>(is, what);
    std::memcpy(&v, &bits, 8);
  }
  return v;
}

template <typename T>
void write_scalars(std::ostream& os, const T* vals, std::int64_t count) {
  for (std::int64_t i = 0; i < count; ++i) write_scalar(os, vals[i]);
}

template <typename T>
void read_scalars(std::istream& is, T* vals, std::int64_t count, const std::string& what) {
  for (std::int64_t i = 0; i < count; ++i) vals[i] = read_scalar<T>(is, what);
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  return is;
}

template <typename T>
inline constexpr std::uint8_t dtype_code = sizeof(T) == 4 ? 0 : 1;

}  // namespace rcn::binio
