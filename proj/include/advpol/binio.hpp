#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "advpol/errors.hpp"

namespace advpol::binio {

static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");

template <class T>
  requires std::is_trivially_copyable_v<T>
void write(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
  requires std::is_trivially_copyable_v<T>
T read(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ConfigError("unexpected end of binary stream");
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, std::uint64_t max_len = 1u << 24) {
  const auto n = read<std::uint64_t>(is);
  if (n > max_len) throw ConfigError("string length out of range in binary stream");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw ConfigError("unexpected end of binary stream");
  return s;
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char got[4];
  is.read(got, 4);
  if (!is || std::string(got, 4) != std::string(magic, 4))
    throw ConfigError(std::string("bad magic, expected ") + magic);
}

}  // namespace advpol::binio
