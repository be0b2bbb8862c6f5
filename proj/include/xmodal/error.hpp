#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace xmodal {

/// Failures while reading, validating or writing representation stores.
enum class StoreErrc {
  io,
  bad_magic,
  unsupported_version,
  malformed_header,
  unsupported_dtype,
  fortran_order,
  bad_rank,
  truncated_payload,
  dim_mismatch,
  shape_mismatch,
  non_finite,
  bad_offsets,
  missing_file,
  checksum_mismatch,
  bad_manifest,
  bad_catalog,
  out_of_range,
};

inline std::string_view to_string(StoreErrc code) {
  switch (code) {
    case StoreErrc::io: return "io";
    case StoreErrc::bad_magic: return "bad_magic";
    case StoreErrc::unsupported_version: return "unsupported_version";
    case StoreErrc::malformed_header: return "malformed_header";
    case StoreErrc::unsupported_dtype: return "unsupported_dtype";
    case StoreErrc::fortran_order: return "fortran_order";
    case StoreErrc::bad_rank: return "bad_rank";
    case StoreErrc::truncated_payload: return "truncated_payload";
    case StoreErrc::dim_mismatch: return "dim_mismatch";
    case StoreErrc::shape_mismatch: return "shape_mismatch";
    case StoreErrc::non_finite: return "non_finite";
    case StoreErrc::bad_offsets: return "bad_offsets";
    case StoreErrc::missing_file: return "missing_file";
    case StoreErrc::checksum_mismatch: return "checksum_mismatch";
    case StoreErrc::bad_manifest: return "bad_manifest";
    case StoreErrc::bad_catalog: return "bad_catalog";
    case StoreErrc::out_of_range: return "out_of_range";
  }
  return "unknown";
}

class StoreError : public std::runtime_error {
 public:
  StoreError(StoreErrc code, std::filesystem::path path, const std::string& what)
      : std::runtime_error(path.empty() ? what : path.string() + ": " + what),
        code_(code),
        path_(std::move(path)) {}
  StoreError(StoreErrc code, const std::string& what) : StoreError(code, {}, what) {}

  StoreErrc code() const noexcept { return code_; }
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  StoreErrc code_;
  std::filesystem::path path_;
};

/// Raised by the scoring kernels for contract violations (dims, empty blocks, bad config).
class ScoringError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class EncoderErrc {
  timeout,
  http_status,
  malformed_response,
  dim_mismatch,
  unsupported_input,
  invalid_input,
};

inline std::string_view to_string(EncoderErrc code) {
  switch (code) {
    case EncoderErrc::timeout: return "timeout";
    case EncoderErrc::http_status: return "http_status";
    case EncoderErrc::malformed_response: return "malformed_response";
    case EncoderErrc::dim_mismatch: return "dim_mismatch";
    case EncoderErrc::unsupported_input: return "unsupported_input";
    case EncoderErrc::invalid_input: return "invalid_input";
  }
  return "unknown";
}

class EncoderError : public std::runtime_error {
 public:
  EncoderError(EncoderErrc code, const std::string& what, int http_status = 0)
      : std::runtime_error(what), code_(code), http_status_(http_status) {}

  EncoderErrc code() const noexcept { return code_; }
  int http_status() const noexcept { return http_status_; }

 private:
  EncoderErrc code_;
  int http_status_;
};

/// Malformed queries and evaluation requests.
class QueryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace xmodal
