#pragma once

// Command-line front end: ingest, serve, eval, bench, synth, search.
// Exit codes: 0 success, 1 usage, 2 data error, 3 runtime error.

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xmodal/engine.hpp"
#include "xmodal/eval.hpp"
#include "xmodal/manifest.hpp"
#include "xmodal/service.hpp"
#include "xmodal/synthetic.hpp"

namespace xmodal::cli {

enum ExitCode : int { ok = 0, usage = 1, data_error = 2, runtime_error = 3 };

namespace detail {

inline std::vector<std::size_t> parse_list(const std::string& text, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
      throw QueryError(std::string(what) + ": '" + text + "' is not a comma-separated integer list");
    out.push_back(std::stoull(item));
  }
  if (out.empty()) throw QueryError(std::string(what) + " is empty");
  return out;
}

inline std::vector<Direction> parse_directions(const std::string& d) {
  if (d == "both") return {Direction::image_to_text, Direction::text_to_image};
  if (d == "text-to-image" || d == "t2i") return {Direction::text_to_image};
  if (d == "image-to-text" || d == "i2t") return {Direction::image_to_text};
  throw QueryError("direction must be both, text-to-image or image-to-text");
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw StoreError(StoreErrc::io, path, "cannot write report");
}

inline std::atomic<httplib::Server*>& running_server() {
  static std::atomic<httplib::Server*> s{nullptr};
  return s;
}

inline void on_signal(int) {
  if (auto* s = running_server().load()) s->stop();
}

}  // namespace detail

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Cross-modal image/description search engine"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Build a manifest with checksums over existing store files");
  IngestPaths ip;
  std::string ingest_out = "manifest.json", ingest_name = "corpus";
  double ingest_alpha = 0.5;
  bool ingest_normalize = false;
  ingest->add_option("--image-global", ip.image_global, "image global store (.npy)")->required();
  ingest->add_option("--image-local", ip.image_local, "image local store (.npy)")->required();
  ingest->add_option("--image-offsets", ip.image_offsets, "image local offsets (.npy, int64)")->required();
  ingest->add_option("--desc-global", ip.description_global, "description global store")->required();
  ingest->add_option("--desc-local", ip.description_local, "description local store")->required();
  ingest->add_option("--desc-offsets", ip.description_offsets, "description local offsets")->required();
  ingest->add_option("--catalog", ip.catalog, "catalog (JSON lines)")->required();
  ingest->add_option("--name", ingest_name, "corpus name");
  ingest->add_option("--alpha", ingest_alpha, "default fusion weight")->check(CLI::Range(0.0, 1.0));
  ingest->add_flag("--normalize", ingest_normalize,
                   "write unit-normalized copies of the global stores and reference those");
  ingest->add_option("--out", ingest_out, "manifest path to write");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP search service");
  std::string serve_config, serve_manifest, serve_host;
  int serve_port = -1;
  bool serve_quiet = false;
  serve->add_option("--config", serve_config, "service config (JSON)");
  serve->add_option("--manifest", serve_manifest, "store manifest");
  serve->add_option("--host", serve_host, "listen address");
  serve->add_option("--port", serve_port, "listen port");
  serve->add_flag("--quiet", serve_quiet, "disable request logging");

  // eval
  auto* eval = app.add_subcommand("eval", "Recall@K evaluation on a held-out split");
  std::string eval_manifest, eval_split = "5783,500,500", eval_k = "1,5,10", eval_dir = "both",
                             eval_gallery = "test", eval_json;
  std::uint64_t eval_seed = 0;
  std::size_t eval_threads = 1;
  double eval_alpha = -1.0, eval_lambda = 9.0;
  eval->add_option("--manifest", eval_manifest, "store manifest")->required();
  eval->add_option("--split", eval_split, "train,val,test sizes");
  eval->add_option("--seed", eval_seed, "split seed");
  eval->add_option("--k", eval_k, "comma-separated K values");
  eval->add_option("--direction", eval_dir, "both | text-to-image | image-to-text");
  eval->add_option("--gallery", eval_gallery, "test | full")->check(CLI::IsMember({"test", "full"}));
  eval->add_option("--json", eval_json, "write the report as JSON");
  eval->add_option("--threads", eval_threads, "parallel queries");
  eval->add_option("--alpha", eval_alpha, "fusion weight (default: manifest)");
  eval->add_option("--lambda", eval_lambda, "attention temperature");

  // bench
  auto* bench = app.add_subcommand("bench", "Per-query retrieval latency");
  std::string bench_manifest, bench_dir = "text-to-image", bench_json;
  std::size_t bench_queries = 100, bench_reps = 1, bench_k = 10, bench_threads = 1;
  double bench_alpha = -1.0;
  bool bench_global_only = false;
  bench->add_option("--manifest", bench_manifest, "store manifest")->required();
  bench->add_option("--queries", bench_queries, "number of precomputed queries");
  bench->add_option("--reps", bench_reps, "timed repetitions per query");
  bench->add_option("--k", bench_k, "results per query");
  bench->add_option("--direction", bench_dir, "both | text-to-image | image-to-text");
  bench->add_option("--threads", bench_threads, "scoring shards per query");
  bench->add_option("--alpha", bench_alpha, "fusion weight (default: manifest)");
  bench->add_flag("--global-only", bench_global_only, "rank by the global score alone (alpha = 1)");
  bench->add_option("--json", bench_json, "write the report as JSON");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic paired corpus");
  SyntheticParams sp;
  std::string synth_out;
  synth->add_option("--n", sp.n, "items")->required();
  synth->add_option("--dim", sp.dim, "global dim");
  synth->add_option("--local-dim", sp.local_dim, "local dim (default: --dim)");
  synth->add_option("--locals", sp.local_count, "local vectors per item");
  synth->add_option("--noise", sp.noise, "relative noise magnitude");
  synth->add_option("--seed", sp.seed, "seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  // search
  auto* search = app.add_subcommand("search", "One-shot query printing a result table");
  std::string search_manifest = "manifest.json", search_text, search_image, search_config;
  std::size_t search_k = 10;
  search->add_option("--manifest", search_manifest, "store manifest");
  search->add_option("--config", search_config, "service config (JSON) for encoder settings");
  auto* text_opt = search->add_option("--text", search_text, "text query (text-to-image)");
  auto* image_opt = search->add_option("--image", search_image, "image file (image-to-text)");
  text_opt->excludes(image_opt);
  search->add_option("--k", search_k, "results")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? ok : usage;
  }

  auto load_engine_for = [](const std::string& manifest, double alpha, double lambda) {
    auto corpus = std::make_shared<const Corpus>(load_corpus(manifest));
    FusionConfig f;
    f.alpha = alpha >= 0.0 ? alpha : corpus->default_fusion_weight;
    f.temperature_lambda = lambda;
    return std::make_pair(corpus, f);
  };

  try {
    if (*ingest) {
      if (ingest_normalize) {
        for (auto* p : {&ip.image_global, &ip.description_global}) {
          auto n = normalize_rows(load_global_matrix(*p));
          if (n.zero_rows) err << "warning: " << *p << " has " << n.zero_rows << " zero rows\n";
          auto dst = p->parent_path() / (p->stem().string() + ".normalized.npy");
          write_matrix(n.matrix, dst);
          *p = dst;
        }
      }
      auto m = build_manifest(ip, ingest_name, ingest_out, ingest_alpha);
      // validate the whole corpus before publishing the manifest
      auto tmp = m;
      (void)load_corpus(tmp);
      save_manifest(m, ingest_out);
      out << "wrote " << ingest_out << " (" << m.image_count << " items, global dim "
          << m.global_dim << ", local dim " << m.local_dim << ")\n";
      return ok;
    }

    if (*serve) {
      ServiceConfig cfg = serve_config.empty() ? ServiceConfig{} : load_service_config(serve_config);
      apply_env_overrides(cfg);
      if (!serve_manifest.empty()) cfg.manifest = serve_manifest;
      if (!serve_host.empty()) cfg.host = serve_host;
      if (serve_port >= 0) cfg.port = serve_port;
      if (serve_quiet) cfg.log_requests = false;
      if (!std::filesystem::exists(cfg.manifest)) {
        err << "error: manifest " << cfg.manifest << " not found\n";
        return data_error;
      }
      Service service(cfg);
      int port = service.bind();
      if (port < 0) {
        err << "error: cannot bind " << cfg.host << ":" << cfg.port << "\n";
        return runtime_error;
      }
      detail::running_server().store(&service.server());
      std::signal(SIGINT, detail::on_signal);
      std::signal(SIGTERM, detail::on_signal);
      std::thread listener([&] { service.listen(); });
      try {
        service.load();
      } catch (...) {
        service.stop();
        listener.join();
        detail::running_server().store(nullptr);
        throw;
      }
      err << nlohmann::json({{"event", "ready"}, {"port", port},
                             {"corpus_size", service.engine()->corpus().catalog.size()}})
                 .dump()
          << '\n';
      listener.join();
      detail::running_server().store(nullptr);
      return ok;
    }

    if (*eval) {
      auto sizes = detail::parse_list(eval_split, "--split");
      if (sizes.size() != 3) throw QueryError("--split needs three sizes: train,val,test");
      auto ks = detail::parse_list(eval_k, "--k");
      auto dirs = detail::parse_directions(eval_dir);
      auto [corpus, fusion] = load_engine_for(eval_manifest, eval_alpha, eval_lambda);
      std::size_t total = sizes[0] + sizes[1] + sizes[2];
      if (total != corpus->images.item_count())
        throw StoreError(StoreErrc::shape_mismatch, eval_manifest,
                         "split sizes sum to " + std::to_string(total) + " but the corpus has " +
                             std::to_string(corpus->images.item_count()) + " items");
      auto split = split_dataset({total, sizes[0], sizes[1], sizes[2], eval_seed});

      std::vector<ItemId> relevant(split.test.size());
      std::shared_ptr<const Corpus> gallery;
      if (eval_gallery == "test") {
        gallery = std::make_shared<const Corpus>(subset_corpus(*corpus, split.test));
        for (std::size_t j = 0; j < relevant.size(); ++j) relevant[j] = j;
      } else {
        gallery = corpus;
        relevant = split.test;
      }
      Engine engine(gallery, fusion);
      std::vector<RecallReport> reports;
      for (auto d : dirs) {
        auto pairs = make_eval_pairs(*corpus, split.test, relevant, d);
        reports.push_back(recall_at_k(engine, pairs, ks, d, eval_threads));
      }
      out << format_recall_table(reports);
      nlohmann::json j = {{"gallery", eval_gallery},
                          {"split", {{"train", sizes[0]}, {"val", sizes[1]}, {"test", sizes[2]},
                                     {"seed", eval_seed}}},
                          {"fusion", to_json(fusion)},
                          {"recall", nlohmann::json::array()}};
      for (const auto& r : reports) j["recall"].push_back(to_json(r));
      detail::write_json(eval_json, j);
      return ok;
    }

    if (*bench) {
      auto dirs = detail::parse_directions(bench_dir);
      if (bench_global_only) bench_alpha = 1.0;
      auto [corpus, fusion] = load_engine_for(bench_manifest, bench_alpha, 9.0);
      Engine engine(corpus, fusion, nullptr, ScoringOptions{bench_threads});
      std::vector<LatencyReport> reports;
      for (auto d : dirs) {
        const auto& src = d == Direction::text_to_image ? corpus->descriptions : corpus->images;
        if (src.item_count() == 0) throw StoreError(StoreErrc::shape_mismatch, "corpus is empty");
        std::vector<QueryEmbedding> queries;
        for (std::size_t i = 0; i < bench_queries; ++i)
          queries.push_back(stored_embedding(src, i % src.item_count(),
                                             d == Direction::text_to_image ? Modality::text
                                                                           : Modality::image));
        reports.push_back(latency_bench(engine, queries, bench_reps, d, bench_k));
      }
      out << format_latency_table(reports);
      nlohmann::json j = {{"fusion", to_json(fusion)},
                          {"corpus_size", corpus->images.item_count()},
                          {"threads", bench_threads},
                          {"latency", nlohmann::json::array()}};
      for (const auto& r : reports) j["latency"].push_back(to_json(r));
      detail::write_json(bench_json, j);
      return ok;
    }

    if (*synth) {
      auto manifest = generate_synthetic_corpus(sp, synth_out);
      out << "wrote " << manifest.string() << " (" << sp.n << " items, dim " << sp.dim << ", "
          << sp.local_count << " locals, noise " << sp.noise << ")\n";
      return ok;
    }

    if (*search) {
      if (search_text.empty() && search_image.empty())
        throw QueryError("search needs --text or --image");
      ServiceConfig cfg = search_config.empty() ? ServiceConfig{} : load_service_config(search_config);
      apply_env_overrides(cfg);
      auto corpus = std::make_shared<const Corpus>(load_corpus(search_manifest));
      auto engine = make_engine(cfg, corpus);
      Query q;
      if (!search_text.empty()) {
        q = Query::from_text(search_text, search_k);
      } else {
        std::ifstream in(search_image, std::ios::binary);
        if (!in) throw StoreError(StoreErrc::missing_file, search_image, "cannot open image");
        std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::vector<std::byte> bytes(raw.size());
        std::memcpy(bytes.data(), raw.data(), raw.size());
        q = Query::from_image(std::move(bytes), search_k);
      }
      auto results = engine->search(q);
      out << std::left << std::setw(6) << "rank" << std::setw(8) << "item" << std::setw(10)
          << "fused" << std::setw(10) << "global" << std::setw(10) << "local"
          << "description | source\n";
      out << std::fixed << std::setprecision(4);
      for (const auto& r : results)
        out << std::setw(6) << r.rank << std::setw(8) << r.breakdown.item_id << std::setw(10)
            << r.breakdown.fused_score << std::setw(10) << r.breakdown.global_score
            << std::setw(10) << r.breakdown.local_score << r.entry.description << " | "
            << r.entry.source_url << '\n';
      return ok;
    }
  } catch (const QueryError& e) {
    err << "error: " << e.what() << '\n';
    return usage;
  } catch (const StoreError& e) {
    err << "error: " << e.what() << '\n';
    return data_error;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return runtime_error;
  }
  return usage;
}

}  // namespace xmodal::cli
