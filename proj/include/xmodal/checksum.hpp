#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmodal/error.hpp"

namespace xmodal {

/// 64-bit FNV-1a. Used for store checksums and for keying the mock encoder.
/// Corruption detection only; not collision resistant against an adversary.
class Fnv1a64 {
 public:
  static constexpr std::uint64_t offset_basis = 0xcbf29ce484222325ULL;
  static constexpr std::uint64_t prime = 0x100000001b3ULL;

  constexpr Fnv1a64() = default;
  constexpr explicit Fnv1a64(std::uint64_t state) : state_(state) {}

  constexpr void update(std::span<const std::byte> bytes) {
    for (std::byte b : bytes) {
      state_ ^= static_cast<std::uint64_t>(b);
      state_ *= prime;
    }
  }
  constexpr void update(std::string_view text) {
    for (char c : text) {
      state_ ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
      state_ *= prime;
    }
  }
  constexpr void update_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      state_ ^= (v >> (8 * i)) & 0xffU;
      state_ *= prime;
    }
  }

  constexpr std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = offset_basis;
};

constexpr std::uint64_t fnv1a64(std::string_view text) {
  Fnv1a64 h;
  h.update(text);
  return h.digest();
}

inline std::string to_hex(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

/// Checksum of a file's raw bytes, as 16 lowercase hex digits.
inline std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StoreError(StoreErrc::missing_file, path, "cannot open file");
  Fnv1a64 h;
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    auto got = static_cast<std::size_t>(in.gcount());
    h.update(std::as_bytes(std::span(buf.data(), got)));
  }
  if (in.bad()) throw StoreError(StoreErrc::io, path, "read failed");
  return to_hex(h.digest());
}

}  // namespace xmodal
