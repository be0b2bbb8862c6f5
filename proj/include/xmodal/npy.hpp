#pragma once

// Reader and writer for NPY v1.0 array files, restricted to what the
// representation stores need: C-order little-endian float32 and int64.
//
// Layout:
//   bytes 0..5   magic "\x93NUMPY"
//   bytes 6..7   version 0x01 0x00
//   bytes 8..9   header length, little-endian uint16
//   header       ASCII python dict literal with keys descr / fortran_order / shape,
//                space padded and newline terminated so that 10 + header_len is a
//                multiple of 64
//   payload      raw element bytes

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmodal/error.hpp"

namespace xmodal::npy {

static_assert(std::endian::native == std::endian::little,
              "payloads are read without byte swapping");

inline constexpr std::array<unsigned char, 6> magic = {0x93, 'N', 'U', 'M', 'P', 'Y'};
inline constexpr std::size_t preamble_size = 10;
inline constexpr std::size_t alignment = 64;

enum class Dtype { float32, int64 };

inline std::string_view descr(Dtype d) { return d == Dtype::float32 ? "<f4" : "<i8"; }
inline std::size_t element_size(Dtype d) { return d == Dtype::float32 ? 4 : 8; }

template <class T>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<float>() { return Dtype::float32; }
template <>
constexpr Dtype dtype_of<std::int64_t>() { return Dtype::int64; }

struct Header {
  Dtype dtype = Dtype::float32;
  bool fortran_order = false;
  std::vector<std::uint64_t> shape;
  std::size_t payload_offset = 0;  // preamble + header dict bytes

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
};

namespace detail {

class DictParser {
 public:
  DictParser(std::string_view text, const std::filesystem::path& path)
      : text_(text), path_(path) {}

  Header parse() {
    Header h;
    bool have_descr = false, have_fortran = false, have_shape = false;
    skip_ws();
    expect('{');
    for (;;) {
      skip_ws();
      if (peek() == '}') {
        ++pos_;
        break;
      }
      std::string key = parse_string();
      skip_ws();
      expect(':');
      skip_ws();
      if (key == "descr") {
        if (have_descr) fail("duplicate key 'descr'");
        have_descr = true;
        std::string d = parse_string();
        if (d == "<f4") {
          h.dtype = Dtype::float32;
        } else if (d == "<i8") {
          h.dtype = Dtype::int64;
        } else {
          throw StoreError(StoreErrc::unsupported_dtype, path_,
                           "unsupported dtype '" + d + "' (need '<f4' or '<i8')");
        }
      } else if (key == "fortran_order") {
        if (have_fortran) fail("duplicate key 'fortran_order'");
        have_fortran = true;
        h.fortran_order = parse_bool();
      } else if (key == "shape") {
        if (have_shape) fail("duplicate key 'shape'");
        have_shape = true;
        h.shape = parse_shape();
      } else {
        fail("unexpected key '" + key + "'");
      }
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      skip_ws();
      if (peek() == '}') {
        ++pos_;
        break;
      }
      fail("expected ',' or '}'");
    }
    skip_ws();
    if (pos_ != text_.size()) fail("trailing characters after dictionary");
    if (!have_descr || !have_fortran || !have_shape) fail("missing descr, fortran_order or shape");
    return h;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw StoreError(StoreErrc::malformed_header, path_,
                     "malformed header: " + msg + " at offset " + std::to_string(pos_));
  }

  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void skip_ws() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\n' ||
                                   text_[pos_] == '\t' || text_[pos_] == '\r'))
      ++pos_;
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  std::string parse_string() {
    char quote = peek();
    if (quote != '\'' && quote != '"') fail("expected string");
    ++pos_;
    std::size_t start = pos_;
    while (pos_ < text_.size() && text_[pos_] != quote) {
      if (text_[pos_] == '\\') fail("escapes are not supported");
      ++pos_;
    }
    if (pos_ >= text_.size()) fail("unterminated string");
    std::string s(text_.substr(start, pos_ - start));
    ++pos_;
    return s;
  }

  bool parse_bool() {
    if (text_.substr(pos_, 4) == "True") {
      pos_ += 4;
      return true;
    }
    if (text_.substr(pos_, 5) == "False") {
      pos_ += 5;
      return false;
    }
    fail("expected True or False");
  }

  std::vector<std::uint64_t> parse_shape() {
    std::vector<std::uint64_t> dims;
    expect('(');
    for (;;) {
      skip_ws();
      if (peek() == ')') {
        ++pos_;
        break;
      }
      if (peek() < '0' || peek() > '9') fail("expected dimension");
      std::uint64_t v = 0;
      while (peek() >= '0' && peek() <= '9') {
        auto digit = static_cast<std::uint64_t>(peek() - '0');
        if (v > (std::numeric_limits<std::uint64_t>::max() / 4 - digit) / 10)
          fail("dimension too large");
        v = v * 10 + digit;
        ++pos_;
      }
      dims.push_back(v);
      skip_ws();
      if (peek() == ',') {
        ++pos_;
      } else if (peek() != ')') {
        fail("expected ',' or ')' in shape");
      }
    }
    if (dims.size() > 32) fail("too many dimensions");
    return dims;
  }

  std::string_view text_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

inline std::uint16_t read_u16le(const std::byte* p) {
  return static_cast<std::uint16_t>(static_cast<unsigned>(p[0]) |
                                    (static_cast<unsigned>(p[1]) << 8));
}

}  // namespace detail

/// Parses the preamble and header dictionary. `bytes` must hold at least the
/// whole header; payload bytes beyond it are ignored.
inline Header parse_header(std::span<const std::byte> bytes,
                           const std::filesystem::path& path = {}) {
  if (bytes.size() < magic.size() ||
      std::memcmp(bytes.data(), magic.data(), magic.size()) != 0)
    throw StoreError(StoreErrc::bad_magic, path, "not an NPY file (bad magic)");
  if (bytes.size() < preamble_size)
    throw StoreError(StoreErrc::malformed_header, path, "file ends inside preamble");
  auto major = static_cast<unsigned>(bytes[6]);
  auto minor = static_cast<unsigned>(bytes[7]);
  if (major != 1 || minor != 0)
    throw StoreError(StoreErrc::unsupported_version, path,
                     "unsupported NPY version " + std::to_string(major) + "." +
                         std::to_string(minor) + " (only 1.0)");
  std::size_t header_len = detail::read_u16le(bytes.data() + 8);
  if (bytes.size() < preamble_size + header_len)
    throw StoreError(StoreErrc::malformed_header, path, "file ends inside header");

  std::string_view text(reinterpret_cast<const char*>(bytes.data() + preamble_size), header_len);
  for (char c : text) {
    auto u = static_cast<unsigned char>(c);
    if (u >= 0x80 || (u < 0x20 && c != '\n' && c != '\t' && c != '\r'))
      throw StoreError(StoreErrc::malformed_header, path, "header is not printable ASCII");
  }
  Header h = detail::DictParser(text, path).parse();
  h.payload_offset = preamble_size + header_len;

  std::uint64_t count = 1;
  for (auto d : h.shape) {
    if (d != 0 && count > std::numeric_limits<std::uint64_t>::max() / 16 / d)
      throw StoreError(StoreErrc::malformed_header, path, "shape overflows");
    count *= d;
  }
  return h;
}

/// Full preamble + header for the given dtype and shape, in canonical minimal form.
inline std::string format_header(Dtype dtype, std::span<const std::uint64_t> shape) {
  std::string dict = "{'descr': '";
  dict += descr(dtype);
  dict += "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) dict += ", ";
    dict += std::to_string(shape[i]);
  }
  if (shape.size() == 1) dict += ",";
  dict += "), }";

  std::size_t unpadded = preamble_size + dict.size() + 1;
  std::size_t total = (unpadded + alignment - 1) / alignment * alignment;
  std::size_t header_len = total - preamble_size;
  if (header_len > std::numeric_limits<std::uint16_t>::max())
    throw StoreError(StoreErrc::shape_mismatch, "shape too long for an NPY v1.0 header");
  dict.append(total - unpadded, ' ');
  dict.push_back('\n');

  std::string out;
  out.reserve(total);
  out.append(reinterpret_cast<const char*>(magic.data()), magic.size());
  out.push_back('\x01');
  out.push_back('\x00');
  out.push_back(static_cast<char>(header_len & 0xff));
  out.push_back(static_cast<char>((header_len >> 8) & 0xff));
  out += dict;
  return out;
}

template <class T>
struct Array {
  std::vector<std::uint64_t> shape;
  std::vector<T> values;
};

inline void check_layout(const Header& h, Dtype want, const std::filesystem::path& path) {
  if (h.dtype != want)
    throw StoreError(StoreErrc::unsupported_dtype, path,
                     std::string("dtype ") + std::string(descr(h.dtype)) + " where " +
                         std::string(descr(want)) + " is required");
  if (h.fortran_order)
    throw StoreError(StoreErrc::fortran_order, path, "Fortran-ordered arrays are not supported");
}

/// Parses an in-memory NPY file.
template <class T>
Array<T> parse(std::span<const std::byte> bytes, const std::filesystem::path& path = {}) {
  Header h = parse_header(bytes, path);
  check_layout(h, dtype_of<T>(), path);
  std::uint64_t count = h.element_count();
  std::size_t available = bytes.size() - h.payload_offset;
  if (available < count * sizeof(T))
    throw StoreError(StoreErrc::truncated_payload, path,
                     "payload has " + std::to_string(available) + " bytes, expected " +
                         std::to_string(count * sizeof(T)));
  if (available > count * sizeof(T))
    throw StoreError(StoreErrc::shape_mismatch, path, "trailing bytes after payload");
  Array<T> a{h.shape, std::vector<T>(count)};
  if (count) std::memcpy(a.values.data(), bytes.data() + h.payload_offset, count * sizeof(T));
  return a;
}

namespace detail {

// Reads preamble and header dictionary from the start of `in`.
inline Header read_head(std::ifstream& in, std::uint64_t file_size,
                        const std::filesystem::path& path) {
  std::vector<std::byte> head(
      static_cast<std::size_t>(std::min<std::uint64_t>(file_size, preamble_size)));
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  if (head.size() < preamble_size) {
    parse_header(head, path);
    throw StoreError(StoreErrc::malformed_header, path, "file ends inside preamble");
  }
  std::size_t header_len = read_u16le(head.data() + 8);
  auto want = static_cast<std::size_t>(
      std::min<std::uint64_t>(file_size, preamble_size + header_len));
  head.resize(want);
  in.read(reinterpret_cast<char*>(head.data() + preamble_size),
          static_cast<std::streamsize>(want - preamble_size));
  if (!in) throw StoreError(StoreErrc::io, path, "read failed");
  return parse_header(head, path);
}

inline std::uint64_t open_sized(std::ifstream& in, const std::filesystem::path& path) {
  in.open(path, std::ios::binary | std::ios::ate);
  if (!in) throw StoreError(StoreErrc::missing_file, path, "cannot open file");
  auto size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  return size;
}

}  // namespace detail

/// Reads and validates only the header of a file on disk.
inline Header read_header(const std::filesystem::path& path) {
  std::ifstream in;
  auto size = detail::open_sized(in, path);
  return detail::read_head(in, size, path);
}

/// Reads a file into memory. The payload is read straight into the result
/// vector, so it is copied exactly once.
template <class T>
Array<T> read(const std::filesystem::path& path) {
  std::ifstream in;
  auto file_size = detail::open_sized(in, path);
  Header h = detail::read_head(in, file_size, path);
  check_layout(h, dtype_of<T>(), path);
  std::uint64_t count = h.element_count();
  std::uint64_t available = file_size - h.payload_offset;
  if (available < count * sizeof(T))
    throw StoreError(StoreErrc::truncated_payload, path,
                     "payload has " + std::to_string(available) + " bytes, expected " +
                         std::to_string(count * sizeof(T)));
  if (available > count * sizeof(T))
    throw StoreError(StoreErrc::shape_mismatch, path, "trailing bytes after payload");

  Array<T> a{h.shape, std::vector<T>(static_cast<std::size_t>(count))};
  in.read(reinterpret_cast<char*>(a.values.data()),
          static_cast<std::streamsize>(count * sizeof(T)));
  if (!in && count) throw StoreError(StoreErrc::io, path, "read failed");
  return a;
}

template <class T>
void write(const std::filesystem::path& path, std::span<const std::uint64_t> shape,
           std::span<const T> values) {
  std::uint64_t count = 1;
  for (auto d : shape) count *= d;
  if (count != values.size())
    throw StoreError(StoreErrc::shape_mismatch, path,
                     "shape holds " + std::to_string(count) + " elements but " +
                         std::to_string(values.size()) + " were given");
  std::string header = format_header(dtype_of<T>(), shape);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError(StoreErrc::io, path, "cannot create file");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size_bytes()));
  out.flush();
  if (!out) throw StoreError(StoreErrc::io, path, "write failed");
}

}  // namespace xmodal::npy
