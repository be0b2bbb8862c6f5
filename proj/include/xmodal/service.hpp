#pragma once

// HTTP search service.
//
//   POST /search/text    {"query": "...", "k": 10}
//   POST /search/image   multipart/form-data, file field "image", optional field "k"
//   GET  /items/{id}
//   GET  /health
//
// Search responses are JSON arrays of
//   {rank, item_id, external_id, score: {global, local, fused},
//    description, image_uri, source_url}

#include <atomic>
#include <chrono>
#include <cstring>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "xmodal/encoder.hpp"
#include "xmodal/engine.hpp"
#include "xmodal/error.hpp"
#include "xmodal/manifest.hpp"

namespace xmodal {

struct ServiceConfig {
  std::string host = "0.0.0.0";
  int port = 8080;
  std::filesystem::path manifest = "manifest.json";
  FusionConfig fusion;
  bool alpha_from_manifest = true;  // false once alpha is set explicitly
  std::string encoder_mode = "mock";
  std::string remote_endpoint;
  int remote_timeout_ms = 5000;
  std::optional<std::uint64_t> mock_seed;
  std::optional<std::size_t> mock_local_count;
  std::size_t default_k = 10;
  std::size_t max_k = 1000;
  std::size_t max_query_bytes = 4096;
  std::size_t max_upload_bytes = 8u << 20;
  std::optional<std::filesystem::path> static_dir;
  std::string cors_origin = "*";
  std::size_t worker_threads = 8;
  std::size_t scoring_threads = 1;
  bool log_requests = true;

  void validate() const {
    if (port < 0 || port > 65535) throw QueryError("port must lie in [1, 65535], or 0 for any free port");
    if (max_upload_bytes < (1u << 20)) throw QueryError("max_upload_bytes must be at least 1 MiB");
    if (default_k == 0 || default_k > max_k) throw QueryError("default_k must lie in [1, max_k]");
    if (encoder_mode != "mock" && encoder_mode != "remote")
      throw QueryError("encoder_mode must be \"mock\" or \"remote\"");
    if (encoder_mode == "remote" && remote_endpoint.empty())
      throw QueryError("remote encoder mode needs remote_endpoint");
    if (worker_threads == 0) throw QueryError("worker_threads must be >= 1");
    fusion.validate();
  }
};

inline ServiceConfig service_config_from_json(const nlohmann::json& j, ServiceConfig c = {}) {
  if (!j.is_object()) throw QueryError("service config must be a JSON object");
  try {
    if (j.contains("host")) c.host = j.at("host").get<std::string>();
    if (j.contains("port")) c.port = j.at("port").get<int>();
    if (j.contains("manifest")) c.manifest = j.at("manifest").get<std::string>();
    if (j.contains("fusion")) {
      c.fusion = fusion_config_from_json(j.at("fusion"), c.fusion);
      if (j.at("fusion").contains("alpha")) c.alpha_from_manifest = false;
    }
    if (j.contains("encoder_mode")) c.encoder_mode = j.at("encoder_mode").get<std::string>();
    if (j.contains("remote_endpoint")) c.remote_endpoint = j.at("remote_endpoint").get<std::string>();
    if (j.contains("remote_timeout_ms")) c.remote_timeout_ms = j.at("remote_timeout_ms").get<int>();
    if (j.contains("mock_seed")) c.mock_seed = j.at("mock_seed").get<std::uint64_t>();
    if (j.contains("mock_local_count")) c.mock_local_count = j.at("mock_local_count").get<std::size_t>();
    if (j.contains("default_k")) c.default_k = j.at("default_k").get<std::size_t>();
    if (j.contains("max_k")) c.max_k = j.at("max_k").get<std::size_t>();
    if (j.contains("max_upload_bytes")) c.max_upload_bytes = j.at("max_upload_bytes").get<std::size_t>();
    if (j.contains("static_dir") && !j.at("static_dir").is_null())
      c.static_dir = j.at("static_dir").get<std::string>();
    if (j.contains("cors_origin")) c.cors_origin = j.at("cors_origin").get<std::string>();
    if (j.contains("worker_threads")) c.worker_threads = j.at("worker_threads").get<std::size_t>();
    if (j.contains("scoring_threads")) c.scoring_threads = j.at("scoring_threads").get<std::size_t>();
    if (j.contains("log_requests")) c.log_requests = j.at("log_requests").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw QueryError(std::string("service config: ") + e.what());
  }
  return c;
}

inline ServiceConfig load_service_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StoreError(StoreErrc::missing_file, path, "cannot open service config");
  try {
    return service_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw QueryError(path.string() + ": " + e.what());
  }
}

/// Applies ENGINE_* overrides. `getenv` is injectable for tests.
inline void apply_env_overrides(ServiceConfig& c,
                                const std::function<const char*(const char*)>& getenv = ::getenv) {
  auto num = [](const char* name, const char* v) -> long long {
    try {
      std::size_t used = 0;
      long long n = std::stoll(v, &used);
      if (used != std::string_view(v).size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      throw QueryError(std::string(name) + " must be an integer, got '" + v + "'");
    }
  };
  if (auto v = getenv("ENGINE_HOST")) c.host = v;
  if (auto v = getenv("ENGINE_PORT")) c.port = static_cast<int>(num("ENGINE_PORT", v));
  if (auto v = getenv("ENGINE_MANIFEST")) c.manifest = v;
  if (auto v = getenv("ENGINE_ENCODER_MODE")) c.encoder_mode = v;
  if (auto v = getenv("ENGINE_REMOTE_ENDPOINT")) c.remote_endpoint = v;
  if (auto v = getenv("ENGINE_REMOTE_TIMEOUT_MS"))
    c.remote_timeout_ms = static_cast<int>(num("ENGINE_REMOTE_TIMEOUT_MS", v));
  if (auto v = getenv("ENGINE_DEFAULT_K"))
    c.default_k = static_cast<std::size_t>(num("ENGINE_DEFAULT_K", v));
  if (auto v = getenv("ENGINE_MAX_UPLOAD_BYTES"))
    c.max_upload_bytes = static_cast<std::size_t>(num("ENGINE_MAX_UPLOAD_BYTES", v));
  if (auto v = getenv("ENGINE_STATIC_DIR")) c.static_dir = v;
  if (auto v = getenv("ENGINE_CORS_ORIGIN")) c.cors_origin = v;
  if (auto v = getenv("ENGINE_WORKERS"))
    c.worker_threads = static_cast<std::size_t>(num("ENGINE_WORKERS", v));
  if (auto v = getenv("ENGINE_ALPHA")) {
    try {
      c.fusion.alpha = std::stod(v);
    } catch (const std::exception&) {
      throw QueryError(std::string("ENGINE_ALPHA must be a number, got '") + v + "'");
    }
    c.alpha_from_manifest = false;
  }
}

/// Encoder for a corpus according to the config. The mock encoder takes its
/// seed and local count from the config, else from the corpus' generator
/// record, else seed 0 and 4 local vectors.
inline std::shared_ptr<const EncoderAdapter> make_encoder(const ServiceConfig& cfg,
                                                          const Corpus& corpus) {
  if (cfg.encoder_mode == "remote")
    return std::make_shared<RemoteEncoder>(cfg.remote_endpoint, cfg.remote_timeout_ms,
                                           corpus.global_dim(), corpus.local_dim());
  std::uint64_t seed = cfg.mock_seed.value_or(corpus.synthetic ? corpus.synthetic->encoder_seed : 0);
  std::size_t locals =
      cfg.mock_local_count.value_or(corpus.synthetic ? corpus.synthetic->local_count : 4);
  return std::make_shared<MockEncoder>(seed, corpus.global_dim(), corpus.local_dim(), locals);
}

inline std::shared_ptr<const Engine> make_engine(const ServiceConfig& cfg,
                                                 std::shared_ptr<const Corpus> corpus) {
  FusionConfig fusion = cfg.fusion;
  if (cfg.alpha_from_manifest) fusion.alpha = corpus->default_fusion_weight;
  auto encoder = make_encoder(cfg, *corpus);
  return std::make_shared<Engine>(std::move(corpus), fusion, std::move(encoder),
                                  ScoringOptions{cfg.scoring_threads});
}

inline nlohmann::json to_json(const RankedResult& r) {
  return {{"rank", r.rank},
          {"item_id", r.breakdown.item_id},
          {"external_id", r.entry.external_id},
          {"score",
           {{"global", r.breakdown.global_score},
            {"local", r.breakdown.local_score},
            {"fused", r.breakdown.fused_score}}},
          {"description", r.entry.description},
          {"image_uri", r.entry.image_uri},
          {"source_url", r.entry.source_url}};
}

inline nlohmann::json to_json(const std::vector<RankedResult>& results) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : results) arr.push_back(to_json(r));
  return arr;
}

class Service {
 public:
  explicit Service(ServiceConfig cfg) : cfg_(std::move(cfg)), started_(clock::now()) {
    cfg_.validate();
    routes();
  }

  ~Service() { stop(); }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  const ServiceConfig& config() const { return cfg_; }
  httplib::Server& server() { return server_; }

  /// Loads the manifest named in the config and starts answering searches.
  void load() {
    try {
      auto corpus = std::make_shared<const Corpus>(load_corpus(cfg_.manifest));
      set_engine(make_engine(cfg_, std::move(corpus)));
    } catch (const std::exception& e) {
      std::lock_guard lock(mutex_);
      load_error_ = e.what();
      throw;
    }
  }

  void set_engine(std::shared_ptr<const Engine> engine) {
    std::lock_guard lock(mutex_);
    engine_ = std::move(engine);
    load_error_.clear();
  }

  std::shared_ptr<const Engine> engine() const {
    std::lock_guard lock(mutex_);
    return engine_;
  }

  /// Binds the listening socket; port 0 picks a free port. Returns the port or -1.
  int bind() {
    port_ = cfg_.port == 0 ? server_.bind_to_any_port(cfg_.host)
                           : (server_.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1);
    return port_;
  }

  int port() const { return port_; }

  /// Serves until stop(); call after bind().
  bool listen() { return server_.listen_after_bind(); }

  void stop() {
    if (server_.is_running()) server_.stop();
  }

 private:
  using clock = std::chrono::steady_clock;

  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& msg) {
    send_json(res, status, {{"error", msg}, {"status", status}});
  }

  // Parses a k value; returns nullopt after writing a 400 response.
  std::optional<std::size_t> parse_k(const nlohmann::json& v, httplib::Response& res) const {
    if (v.is_null()) return cfg_.default_k;
    if (!v.is_number_integer() || v.get<long long>() < 1 ||
        v.get<long long>() > static_cast<long long>(cfg_.max_k)) {
      send_error(res, 400, "k must be an integer in [1, " + std::to_string(cfg_.max_k) + "]");
      return std::nullopt;
    }
    return v.get<std::size_t>();
  }

  template <class Fn>
  void run_search(httplib::Response& res, Fn&& fn) const {
    auto engine = this->engine();
    if (!engine) return send_error(res, 503, "stores not loaded");
    try {
      send_json(res, 200, to_json(fn(*engine)));
    } catch (const EncoderError& e) {
      int status = e.code() == EncoderErrc::unsupported_input ? 415
                   : e.code() == EncoderErrc::invalid_input   ? 400
                                                              : 502;
      send_error(res, status, std::string("encoder: ") + e.what());
    } catch (const QueryError& e) {
      send_error(res, 400, e.what());
    } catch (const ScoringError& e) {
      send_error(res, 502, std::string("encoder output rejected: ") + e.what());
    }
  }

  void routes() {
    server_.new_task_queue = [n = cfg_.worker_threads] { return new httplib::ThreadPool(n); };
    server_.set_payload_max_length(2 * cfg_.max_upload_bytes + (1u << 20));

    server_.set_pre_routing_handler([](const httplib::Request&, httplib::Response&) {
      request_start() = clock::now();
      return httplib::Server::HandlerResponse::Unhandled;
    });
    server_.set_post_routing_handler([this](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", cfg_.cors_origin);
    });
    if (cfg_.log_requests)
      server_.set_logger([](const httplib::Request& req, const httplib::Response& res) {
        double ms = std::chrono::duration<double, std::milli>(clock::now() - request_start()).count();
        nlohmann::json line = {{"event", "request"},
                               {"method", req.method},
                               {"path", req.path},
                               {"status", res.status},
                               {"latency_ms", ms}};
        if (req.path == "/search/text") line["direction"] = "text-to-image";
        if (req.path == "/search/image") line["direction"] = "image-to-text";
        std::cerr << line.dump() << '\n';
      });
    server_.set_exception_handler(
        [](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
          std::string msg = "internal error";
          try {
            std::rethrow_exception(ep);
          } catch (const std::exception& e) {
            msg = e.what();
          } catch (...) {
          }
          send_error(res, 500, msg);
        });

    server_.Options(R"(/.*)", [this](const httplib::Request&, httplib::Response& res) {
      res.status = 204;
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.set_header("Access-Control-Allow-Origin", cfg_.cors_origin);
    });

    server_.Post("/search/text", [this](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::parse_error&) {
        return send_error(res, 400, "body must be JSON");
      }
      if (!body.is_object()) return send_error(res, 400, "body must be a JSON object");
      auto q = body.find("query");
      if (q == body.end() || !q->is_string() || q->get<std::string>().empty())
        return send_error(res, 400, "query must be a non-empty string");
      auto text = q->get<std::string>();
      if (text.size() > cfg_.max_query_bytes)
        return send_error(res, 400, "query exceeds " + std::to_string(cfg_.max_query_bytes) + " bytes");
      auto k = parse_k(body.value("k", nlohmann::json()), res);
      if (!k) return;
      run_search(res, [&](const Engine& e) { return e.text_to_image(Query::from_text(text, *k)); });
    });

    server_.Post("/search/image", [this](const httplib::Request& req, httplib::Response& res) {
      if (!req.is_multipart_form_data() || !req.has_file("image"))
        return send_error(res, 400, "multipart field 'image' is required");
      auto file = req.get_file_value("image");
      if (file.content.empty()) return send_error(res, 400, "image file is empty");
      if (file.content.size() > cfg_.max_upload_bytes)
        return send_error(res, 400, "image exceeds the upload limit of " +
                                        std::to_string(cfg_.max_upload_bytes) + " bytes");
      nlohmann::json kv;
      std::string ktext = req.has_file("k") ? req.get_file_value("k").content
                          : req.has_param("k") ? req.get_param_value("k")
                                               : std::string();
      if (!ktext.empty()) {
        kv = nlohmann::json::parse(ktext, nullptr, false);
        if (kv.is_discarded() || kv.is_null()) kv = "invalid";
      }
      auto k = parse_k(kv, res);
      if (!k) return;
      std::vector<std::byte> bytes(file.content.size());
      std::memcpy(bytes.data(), file.content.data(), bytes.size());
      run_search(res, [&](const Engine& e) {
        return e.image_to_text(Query::from_image(std::move(bytes), *k));
      });
    });

    server_.Get(R"(/items/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id_text = req.matches[1];
      if (id_text.empty() || id_text.size() > 18 ||
          id_text.find_first_not_of("0123456789") != std::string::npos)
        return send_error(res, 400, "item id must be a non-negative integer");
      auto engine = this->engine();
      if (!engine) return send_error(res, 503, "stores not loaded");
      auto id = static_cast<std::size_t>(std::stoull(id_text));
      const auto& corpus = engine->corpus();
      if (id >= corpus.catalog.size()) return send_error(res, 404, "unknown item " + id_text);
      auto body = to_json(corpus.catalog[id]);
      auto regions = [&](const CorpusSide& s) -> nlohmann::json {
        if (id >= s.item_count()) return nullptr;
        return s.local.block(id).rows;
      };
      body["stats"] = {{"corpus_size", corpus.catalog.size()},
                       {"global_dim", corpus.global_dim()},
                       {"local_dim", corpus.local_dim()},
                       {"image_local_count", regions(corpus.images)},
                       {"description_local_count", regions(corpus.descriptions)}};
      send_json(res, 200, body);
    });

    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      double uptime = std::chrono::duration<double>(clock::now() - started_).count();
      auto engine = this->engine();
      if (!engine) {
        std::string err;
        {
          std::lock_guard lock(mutex_);
          err = load_error_;
        }
        nlohmann::json body = {{"status", err.empty() ? "loading" : "error"},
                               {"corpus_size", 0},
                               {"encoder_mode", cfg_.encoder_mode},
                               {"uptime_s", uptime}};
        if (!err.empty()) body["error"] = err;
        return send_json(res, 503, body);
      }
      const auto& c = engine->corpus();
      send_json(res, 200,
                {{"status", "ok"},
                 {"corpus_size", c.catalog.size()},
                 {"dims", {{"global", c.global_dim()}, {"local", c.local_dim()}}},
                 {"encoder_mode", engine->adapter() ? engine->adapter()->mode() : "none"},
                 {"uptime_s", uptime}});
    });

    if (cfg_.static_dir) server_.set_mount_point("/", cfg_.static_dir->string());
  }

  static clock::time_point& request_start() {
    thread_local clock::time_point t;
    return t;
  }

  ServiceConfig cfg_;
  clock::time_point started_;
  httplib::Server server_;
  mutable std::mutex mutex_;
  std::shared_ptr<const Engine> engine_;
  std::string load_error_;
  int port_ = -1;
};

}  // namespace xmodal
