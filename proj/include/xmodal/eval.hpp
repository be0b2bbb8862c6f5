#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "xmodal/engine.hpp"
#include "xmodal/error.hpp"
#include "xmodal/manifest.hpp"

namespace xmodal {

struct SplitSpec {
  std::size_t total = 0;
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<ItemId> train;
  std::vector<ItemId> val;
  std::vector<ItemId> test;
};

/// Uniform integer in [0, n) by rejection; unbiased and the same on every
/// standard library.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    std::uint64_t x = rng();
    if (x >= threshold) return x % n;
  }
}

/// Seeded Fisher-Yates shuffle of 0..total-1, cut into train, val, test.
inline Split split_dataset(const SplitSpec& spec) {
  if (spec.train + spec.val + spec.test != spec.total)
    throw QueryError("split sizes " + std::to_string(spec.train) + "+" + std::to_string(spec.val) +
                     "+" + std::to_string(spec.test) + " do not sum to " +
                     std::to_string(spec.total));
  std::vector<ItemId> ids(spec.total);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  std::mt19937_64 rng(spec.seed);
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[uniform_below(rng, i)]);
  auto at = [&](std::size_t off) { return ids.begin() + static_cast<std::ptrdiff_t>(off); };
  return {std::vector<ItemId>(at(0), at(spec.train)),
          std::vector<ItemId>(at(spec.train), at(spec.train + spec.val)),
          std::vector<ItemId>(at(spec.train + spec.val), ids.end())};
}

/// Copies the rows of `ids` (in that order) into a new corpus; item j of the
/// result is item ids[j] of the source.
inline Corpus subset_corpus(const Corpus& src, std::span<const ItemId> ids) {
  auto copy_side = [&](const CorpusSide& s) {
    std::vector<float> g;
    std::vector<float> l;
    std::vector<std::uint64_t> offsets{0};
    g.reserve(ids.size() * s.global.dim());
    for (ItemId id : ids) {
      auto r = s.global.row(id);
      g.insert(g.end(), r.begin(), r.end());
      auto b = s.local.block(id);
      l.insert(l.end(), b.values.begin(), b.values.end());
      offsets.push_back(offsets.back() + b.rows);
    }
    return CorpusSide{EmbeddingMatrix(ids.size(), s.global.dim(), std::move(g)),
                      LocalEmbeddingSet(s.local.dim(), std::move(offsets), std::move(l))};
  };
  Corpus c;
  c.name = src.name;
  c.images = copy_side(src.images);
  c.descriptions = copy_side(src.descriptions);
  c.default_fusion_weight = src.default_fusion_weight;
  c.synthetic = src.synthetic;
  for (std::size_t j = 0; j < ids.size(); ++j) {
    auto e = src.catalog.at(ids[j]);
    e.item_id = j;
    c.catalog.push_back(std::move(e));
  }
  return c;
}

/// Stored representation of an item, packaged as a query.
inline QueryEmbedding stored_embedding(const CorpusSide& side, ItemId id, Modality modality) {
  if (id >= side.item_count())
    throw StoreError(StoreErrc::out_of_range,
                     "query item " + std::to_string(id) + " missing from stores (count " +
                         std::to_string(side.item_count()) + ")");
  QueryEmbedding q;
  q.modality = modality;
  auto g = side.global.row(id);
  q.global_vec.assign(g.begin(), g.end());
  auto b = side.local.block(id);
  q.local_vecs.assign(b.values.begin(), b.values.end());
  q.local_dim = b.dim;
  return q;
}

struct EvalPair {
  QueryEmbedding query;
  ItemId relevant = 0;  // id within the engine's gallery
};

/// Queries come from the side opposite the gallery: descriptions for
/// text-to-image, images for image-to-text.
inline std::vector<EvalPair> make_eval_pairs(const Corpus& source, std::span<const ItemId> query_ids,
                                             std::span<const ItemId> relevant_ids, Direction d) {
  if (query_ids.size() != relevant_ids.size())
    throw QueryError("query and relevant id lists differ in length");
  const auto& side = d == Direction::text_to_image ? source.descriptions : source.images;
  auto modality = d == Direction::text_to_image ? Modality::text : Modality::image;
  std::vector<EvalPair> pairs;
  pairs.reserve(query_ids.size());
  for (std::size_t i = 0; i < query_ids.size(); ++i)
    pairs.push_back({stored_embedding(side, query_ids[i], modality), relevant_ids[i]});
  return pairs;
}

struct RecallReport {
  Direction direction = Direction::text_to_image;
  std::vector<std::size_t> k_values;
  std::map<std::size_t, double> recalls;  // k -> percentage
  std::size_t query_count = 0;
  std::vector<std::size_t> ranks;  // 1-based rank of the relevant item, 0 if beyond max k
};

/// Recall@k from per-query ranks (1-based, 0 meaning "not retrieved").
inline std::map<std::size_t, double> recall_from_ranks(std::span<const std::size_t> ranks,
                                                       std::span<const std::size_t> k_values) {
  if (ranks.empty()) throw QueryError("recall needs at least one query");
  std::map<std::size_t, double> out;
  for (auto k : k_values) {
    std::size_t hits = 0;
    for (auto r : ranks)
      if (r != 0 && r <= k) ++hits;
    out[k] = 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
  }
  return out;
}

/// A query succeeds at k when its relevant item is among the engine's top k.
inline RecallReport recall_at_k(const Engine& engine, std::span<const EvalPair> pairs,
                                std::vector<std::size_t> k_values, Direction d,
                                std::size_t threads = 1) {
  if (pairs.empty()) throw QueryError("recall_at_k needs at least one pair");
  if (k_values.empty()) throw QueryError("recall_at_k needs at least one k");
  std::sort(k_values.begin(), k_values.end());
  if (k_values.front() == 0) throw QueryError("k values must be >= 1");
  const std::size_t kmax = k_values.back();
  const std::size_t gallery = engine.gallery(d).item_count();
  for (const auto& p : pairs)
    if (p.relevant >= gallery)
      throw StoreError(StoreErrc::out_of_range,
                       "relevant item " + std::to_string(p.relevant) + " missing from gallery");

  std::vector<std::size_t> ranks(pairs.size(), 0);
  detail::for_each_shard(pairs.size(), threads, [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) {
      auto top = engine.rank(pairs[i].query, d, kmax);
      for (std::size_t r = 0; r < top.size(); ++r)
        if (top[r].item_id == pairs[i].relevant) {
          ranks[i] = r + 1;
          break;
        }
    }
  });

  RecallReport rep;
  rep.direction = d;
  rep.k_values = k_values;
  rep.query_count = pairs.size();
  rep.recalls = recall_from_ranks(ranks, k_values);
  rep.ranks = std::move(ranks);
  return rep;
}

struct LatencyReport {
  Direction direction = Direction::text_to_image;
  std::size_t query_count = 0;
  std::size_t repetitions = 0;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  std::vector<double> samples_ms;
};

/// Nearest-rank percentile of an ascending sample.
inline double percentile(std::span<const double> sorted, double p) {
  if (sorted.empty()) return 0.0;
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

/// Wall-clock time of scoring + ranking + result assembly per precomputed
/// query. One untimed warm-up pass runs first.
inline LatencyReport latency_bench(const Engine& engine, std::span<const QueryEmbedding> queries,
                                   std::size_t repetitions, Direction d, std::size_t k = 10) {
  if (queries.empty()) throw QueryError("latency_bench needs at least one query");
  if (repetitions == 0) throw QueryError("repetitions must be >= 1");
  using clock = std::chrono::steady_clock;
  for (const auto& q : queries) (void)engine.assemble(engine.rank(q, d, k));

  LatencyReport rep;
  rep.direction = d;
  rep.query_count = queries.size();
  rep.repetitions = repetitions;
  rep.samples_ms.reserve(queries.size() * repetitions);
  for (std::size_t r = 0; r < repetitions; ++r) {
    for (const auto& q : queries) {
      auto t0 = clock::now();
      auto results = engine.assemble(engine.rank(q, d, k));  // destroyed after t1
      auto t1 = clock::now();
      rep.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
  }
  double sum = 0.0;
  for (double s : rep.samples_ms) sum += s;
  rep.mean_ms = sum / static_cast<double>(rep.samples_ms.size());
  std::vector<double> sorted = rep.samples_ms;
  std::sort(sorted.begin(), sorted.end());
  rep.p50_ms = percentile(sorted, 50.0);
  rep.p95_ms = percentile(sorted, 95.0);
  return rep;
}

inline nlohmann::json to_json(const RecallReport& r) {
  nlohmann::json recalls = nlohmann::json::object();
  for (auto [k, v] : r.recalls) recalls[std::to_string(k)] = v;
  return {{"direction", to_string(r.direction)},
          {"k_values", r.k_values},
          {"recalls", recalls},
          {"query_count", r.query_count}};
}

inline nlohmann::json to_json(const LatencyReport& r) {
  return {{"direction", to_string(r.direction)},
          {"query_count", r.query_count},
          {"repetitions", r.repetitions},
          {"mean_ms", r.mean_ms},
          {"p50_ms", r.p50_ms},
          {"p95_ms", r.p95_ms}};
}

inline std::string format_recall_table(std::span<const RecallReport> reports) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "direction" << std::setw(9) << "queries";
  if (!reports.empty())
    for (auto k : reports.front().k_values) os << std::setw(10) << ("R@" + std::to_string(k));
  os << '\n';
  os << std::fixed << std::setprecision(1);
  for (const auto& r : reports) {
    os << std::setw(16) << to_string(r.direction) << std::setw(9) << r.query_count;
    for (auto k : r.k_values) os << std::setw(10) << r.recalls.at(k);
    os << '\n';
  }
  return os.str();
}

inline std::string format_latency_table(std::span<const LatencyReport> reports) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "direction" << std::setw(9) << "queries" << std::setw(6)
     << "reps" << std::setw(12) << "mean_ms" << std::setw(12) << "p50_ms" << "p95_ms\n";
  os << std::fixed << std::setprecision(3);
  for (const auto& r : reports)
    os << std::setw(16) << to_string(r.direction) << std::setw(9) << r.query_count << std::setw(6)
       << r.repetitions << std::setw(12) << r.mean_ms << std::setw(12) << r.p50_ms << r.p95_ms
       << '\n';
  return os.str();
}

}  // namespace xmodal
