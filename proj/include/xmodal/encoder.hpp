#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "xmodal/checksum.hpp"
#include "xmodal/error.hpp"
#include "xmodal/scoring.hpp"

namespace xmodal {

/// Boundary to whatever turns raw text or image bytes into embeddings.
/// Implementations must be safe to call concurrently.
class EncoderAdapter {
 public:
  virtual ~EncoderAdapter() = default;

  virtual QueryEmbedding encode_text(std::string_view text) const = 0;
  virtual QueryEmbedding encode_image(std::span<const std::byte> bytes) const = 0;
  virtual std::size_t global_dim() const = 0;
  virtual std::size_t local_dim() const = 0;
  virtual std::string_view mode() const = 0;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Standard normal draws from mt19937_64 via Box-Muller. Unlike
/// std::normal_distribution the sequence is fixed across standard libraries.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

 private:
  std::mt19937_64 rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline void normalize_in_place(std::span<float> v) {
  double n = l2_norm(v);
  if (n == 0.0) return;
  for (float& x : v) x = static_cast<float>(x / n);
}

/// Deterministic stand-in for a neural encoder. Inputs are reduced to a key
/// (whitespace-normalized text, or raw image bytes); the key is hashed
/// together with the seed and drives a fixed PRNG. Text and image inputs with
/// the same key encode identically, which is what lets a generated corpus
/// place each description and its image at the same point.
class MockEncoder final : public EncoderAdapter {
 public:
  static constexpr std::uint64_t noise_stream = 0x6e6f697365ULL;

  MockEncoder(std::uint64_t seed, std::size_t global_dim, std::size_t local_dim,
              std::size_t local_count, double noise = 0.0)
      : seed_(seed),
        global_dim_(global_dim),
        local_dim_(local_dim),
        local_count_(local_count),
        noise_(noise) {
    if (global_dim_ == 0 || local_dim_ == 0) throw QueryError("mock encoder dims must be >= 1");
    if (local_count_ == 0) throw QueryError("mock encoder local_count must be >= 1");
    if (!(noise_ >= 0.0)) throw QueryError("mock encoder noise must be >= 0");
  }

  MockEncoder(std::uint64_t seed, std::size_t dim, std::size_t local_count, double noise = 0.0)
      : MockEncoder(seed, dim, dim, local_count, noise) {}

  /// Whitespace tokenization joined by single spaces.
  static std::string canonical_text(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string token, out;
    while (in >> token) {
      if (!out.empty()) out.push_back(' ');
      out += token;
    }
    return out;
  }

  std::uint64_t key_hash(std::span<const std::byte> key) const {
    Fnv1a64 h;
    h.update_u64(seed_);
    h.update(key);
    return h.digest();
  }

  /// Unit-norm vector for (key, stream); stream 0 is the global vector, stream
  /// r + 1 the r-th local vector.
  std::vector<float> unit_vector(std::uint64_t key, std::uint64_t stream, std::size_t dim) const {
    GaussianStream g(splitmix64(key ^ splitmix64(stream)));
    std::vector<float> v(dim);
    for (float& x : v) x = static_cast<float>(g.next());
    normalize_in_place(v);
    return v;
  }

  /// Noise-free embedding of a key.
  QueryEmbedding embed_key(std::span<const std::byte> key, Modality modality) const {
    auto h = key_hash(key);
    QueryEmbedding q;
    q.modality = modality;
    q.local_dim = local_dim_;
    q.global_vec = unit_vector(h, 0, global_dim_);
    q.local_vecs.reserve(local_count_ * local_dim_);
    for (std::size_t r = 0; r < local_count_; ++r) {
      auto v = unit_vector(h, r + 1, local_dim_);
      q.local_vecs.insert(q.local_vecs.end(), v.begin(), v.end());
    }
    return q;
  }

  QueryEmbedding embed_key(std::string_view key, Modality modality) const {
    return embed_key(std::as_bytes(std::span(key.data(), key.size())), modality);
  }

  QueryEmbedding encode_text(std::string_view text) const override {
    auto key = canonical_text(text);
    if (key.empty()) throw EncoderError(EncoderErrc::invalid_input, "empty text query");
    return perturb(embed_key(key, Modality::text), key_hash(std::as_bytes(std::span(key))));
  }

  QueryEmbedding encode_image(std::span<const std::byte> bytes) const override {
    if (bytes.empty()) throw EncoderError(EncoderErrc::invalid_input, "empty image payload");
    return perturb(embed_key(bytes, Modality::image), key_hash(bytes));
  }

  std::size_t global_dim() const override { return global_dim_; }
  std::size_t local_dim() const override { return local_dim_; }
  std::size_t local_count() const { return local_count_; }
  std::uint64_t seed() const { return seed_; }
  std::string_view mode() const override { return "mock"; }

 private:
  // Adds noise of relative L2 magnitude `noise_` to every vector and renormalizes.
  QueryEmbedding perturb(QueryEmbedding q, std::uint64_t key) const {
    if (noise_ == 0.0) return q;
    GaussianStream g(splitmix64(key ^ noise_stream));
    auto jitter = [&](std::span<float> v) {
      double scale = noise_ / std::sqrt(static_cast<double>(v.size()));
      for (float& x : v) x = static_cast<float>(x + scale * g.next());
      normalize_in_place(v);
    };
    jitter(q.global_vec);
    for (std::size_t r = 0; r < q.local_count(); ++r)
      jitter(std::span(q.local_vecs).subspan(r * local_dim_, local_dim_));
    return q;
  }

  std::uint64_t seed_;
  std::size_t global_dim_;
  std::size_t local_dim_;
  std::size_t local_count_;
  double noise_;
};

/// Client for an external encoder service.
///
/// Text:  POST <url> with JSON {"modality": "text", "text": "..."}
/// Image: POST <url> multipart/form-data, field "modality" = "image" and
///        file field "image" carrying the raw upload
/// Reply: 200 with JSON {"global": [f32...], "locals": [[f32...], ...]}
class RemoteEncoder final : public EncoderAdapter {
 public:
  RemoteEncoder(std::string endpoint_url, int timeout_ms, std::size_t global_dim,
                std::size_t local_dim)
      : timeout_ms_(timeout_ms), global_dim_(global_dim), local_dim_(local_dim) {
    static const std::string prefix = "http://";
    if (endpoint_url.rfind(prefix, 0) != 0)
      throw EncoderError(EncoderErrc::invalid_input, "encoder URL must start with http://");
    auto rest = endpoint_url.substr(prefix.size());
    auto slash = rest.find('/');
    host_ = prefix + rest.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : rest.substr(slash);
    if (rest.empty() || slash == 0)
      throw EncoderError(EncoderErrc::invalid_input, "encoder URL has no host");
    if (timeout_ms_ <= 0) throw EncoderError(EncoderErrc::invalid_input, "timeout must be positive");
  }

  QueryEmbedding encode_text(std::string_view text) const override {
    if (text.empty()) throw EncoderError(EncoderErrc::invalid_input, "empty text query");
    nlohmann::json body = {{"modality", "text"}, {"text", std::string(text)}};
    return send(Modality::text, [&](httplib::Client& c) {
      return c.Post(path_, body.dump(), "application/json");
    });
  }

  QueryEmbedding encode_image(std::span<const std::byte> bytes) const override {
    if (bytes.empty()) throw EncoderError(EncoderErrc::invalid_input, "empty image payload");
    httplib::MultipartFormDataItems items = {
        {"modality", "image", "", ""},
        {"image", std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
         "query", "application/octet-stream"},
    };
    return send(Modality::image, [&](httplib::Client& c) { return c.Post(path_, items); });
  }

  std::size_t global_dim() const override { return global_dim_; }
  std::size_t local_dim() const override { return local_dim_; }
  std::string_view mode() const override { return "remote"; }

  /// Validates a reply body against the expected dims.
  QueryEmbedding parse_response(const std::string& body, Modality modality) const {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      throw EncoderError(EncoderErrc::malformed_response, std::string("encoder reply: ") + e.what());
    }
    auto bad = [](const std::string& m) {
      return EncoderError(EncoderErrc::malformed_response, "encoder reply: " + m);
    };
    if (!j.is_object() || !j.contains("global") || !j.contains("locals"))
      throw bad("expected an object with 'global' and 'locals'");
    auto to_floats = [&](const nlohmann::json& arr, std::vector<float>& out) {
      if (!arr.is_array()) throw bad("vectors must be arrays of numbers");
      for (const auto& v : arr) {
        if (!v.is_number()) throw bad("vectors must be arrays of numbers");
        double d = v.get<double>();
        if (!std::isfinite(d) || std::abs(d) > 3.0e38) throw bad("non-finite value");
        out.push_back(static_cast<float>(d));
      }
      return arr.size();
    };
    QueryEmbedding q;
    q.modality = modality;
    q.local_dim = local_dim_;
    auto gdim = to_floats(j["global"], q.global_vec);
    if (gdim != global_dim_)
      throw EncoderError(EncoderErrc::dim_mismatch, "encoder returned global dim " +
                                                        std::to_string(gdim) + ", expected " +
                                                        std::to_string(global_dim_));
    const auto& locals = j["locals"];
    if (!locals.is_array() || locals.empty()) throw bad("'locals' must be a non-empty array");
    for (const auto& l : locals) {
      auto ldim = to_floats(l, q.local_vecs);
      if (ldim != local_dim_)
        throw EncoderError(EncoderErrc::dim_mismatch, "encoder returned local dim " +
                                                          std::to_string(ldim) + ", expected " +
                                                          std::to_string(local_dim_));
    }
    if (l2_norm(q.global_vec) == 0.0) throw bad("zero global vector");
    return q;
  }

 private:
  template <class Call>
  QueryEmbedding send(Modality modality, Call&& call) const {
    auto client = acquire();
    auto res = call(*client);
    if (!res) {
      // transport failure: connect refused, connect or read timeout
      throw EncoderError(EncoderErrc::timeout,
                         "encoder at " + host_ + path_ + " unreachable within " +
                             std::to_string(timeout_ms_) + " ms: " + httplib::to_string(res.error()));
    }
    release(std::move(client));
    if (res->status == 415)
      throw EncoderError(EncoderErrc::unsupported_input, "encoder rejected the input format", 415);
    if (res->status != 200)
      throw EncoderError(EncoderErrc::http_status,
                         "encoder returned HTTP " + std::to_string(res->status), res->status);
    return parse_response(res->body, modality);
  }

  std::unique_ptr<httplib::Client> acquire() const {
    {
      std::lock_guard lock(mutex_);
      if (!idle_.empty()) {
        auto c = std::move(idle_.back());
        idle_.pop_back();
        return c;
      }
    }
    auto c = std::make_unique<httplib::Client>(host_);
    auto sec = timeout_ms_ / 1000, usec = (timeout_ms_ % 1000) * 1000;
    c->set_connection_timeout(sec, usec);
    c->set_read_timeout(sec, usec);
    c->set_write_timeout(sec, usec);
    c->set_keep_alive(true);
    return c;
  }

  void release(std::unique_ptr<httplib::Client> c) const {
    std::lock_guard lock(mutex_);
    if (idle_.size() < 8) idle_.push_back(std::move(c));
  }

  std::string host_;
  std::string path_;
  int timeout_ms_;
  std::size_t global_dim_;
  std::size_t local_dim_;
  mutable std::mutex mutex_;
  mutable std::vector<std::unique_ptr<httplib::Client>> idle_;
};

}  // namespace xmodal
