#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "ugcn/errors.hpp"

namespace ugcn::detail {

// Little-endian scalar I/O. Byte offsets are tracked by callers for error
// reporting.

template <typename T>
void write_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
    std::swap(buf[i], buf[sizeof(T) - 1 - i]);
#endif
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, std::uint64_t& offset, const char* what) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in)
    throw FormatError(std::string("truncated while reading ") + what +
                      " at offset " + std::to_string(offset));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
    std::swap(buf[i], buf[sizeof(T) - 1 - i]);
#endif
  offset += sizeof(T);
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline void read_bytes(std::istream& in, char* dst, std::size_t n,
                       std::uint64_t& offset, const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (!in)
    throw FormatError(std::string("truncated while reading ") + what +
                      " at offset " + std::to_string(offset));
  offset += n;
}

}  // namespace ugcn::detail
