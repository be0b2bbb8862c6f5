#pragma once

// Similarity scoring between one query and every item of a corpus side.
//
//   global score  cosine(query global, item global)
//   local score   stacked cross attention: every query local vector attends
//                 over the item's local vectors with weights
//                 softmax_j(lambda * cosine(q_i, r_j)); the attended context
//                 c_i = sum_j a_ij r_j is compared with q_i by cosine, and the
//                 per-vector similarities are aggregated (mean or log-mean-exp)
//   fused score   alpha * global + (1 - alpha) * local
//
// Ranking is by fused score descending, ties by ascending item id.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xmodal/error.hpp"
#include "xmodal/manifest.hpp"
#include "xmodal/store.hpp"

namespace xmodal {

enum class LocalAggregation { mean, log_sum_exp };

struct FusionConfig {
  double alpha = 0.5;               // weight of the global score
  double temperature_lambda = 9.0;  // attention sharpness
  LocalAggregation local_aggregation = LocalAggregation::mean;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0))
      throw ScoringError("alpha must lie in [0, 1], got " + std::to_string(alpha));
    if (!(temperature_lambda > 0.0) || !std::isfinite(temperature_lambda))
      throw ScoringError("temperature_lambda must be positive, got " +
                         std::to_string(temperature_lambda));
  }
};

inline nlohmann::json to_json(const FusionConfig& c) {
  return {{"alpha", c.alpha},
          {"temperature_lambda", c.temperature_lambda},
          {"local_aggregation",
           c.local_aggregation == LocalAggregation::mean ? "mean" : "log-sum-exp"}};
}

inline FusionConfig fusion_config_from_json(const nlohmann::json& j, FusionConfig base = {}) {
  if (!j.is_object()) throw ScoringError("fusion config must be a JSON object");
  if (auto it = j.find("alpha"); it != j.end()) {
    if (!it->is_number()) throw ScoringError("alpha must be a number");
    base.alpha = it->get<double>();
  }
  if (auto it = j.find("temperature_lambda"); it != j.end()) {
    if (!it->is_number()) throw ScoringError("temperature_lambda must be a number");
    base.temperature_lambda = it->get<double>();
  }
  if (auto it = j.find("local_aggregation"); it != j.end()) {
    auto s = it->is_string() ? it->get<std::string>() : std::string();
    if (s == "mean")
      base.local_aggregation = LocalAggregation::mean;
    else if (s == "log-sum-exp")
      base.local_aggregation = LocalAggregation::log_sum_exp;
    else
      throw ScoringError("local_aggregation must be \"mean\" or \"log-sum-exp\"");
  }
  base.validate();
  return base;
}

enum class Modality { text, image };

inline std::string_view to_string(Modality m) { return m == Modality::text ? "text" : "image"; }

/// Encoded query: one global vector plus a block of local vectors.
struct QueryEmbedding {
  std::vector<float> global_vec;
  std::vector<float> local_vecs;  // local_count x local_dim, row-major
  std::size_t local_dim = 0;
  Modality modality = Modality::text;

  std::size_t local_count() const { return local_dim ? local_vecs.size() / local_dim : 0; }
  MatrixView locals() const { return {local_vecs, local_count(), local_dim}; }

  void validate() const {
    if (global_vec.empty()) throw QueryError("query global vector is empty");
    if (local_dim == 0 || local_vecs.empty() || local_vecs.size() % local_dim != 0)
      throw QueryError("query needs at least one local vector of the declared dim");
    if (!all_finite(global_vec) || !all_finite(local_vecs))
      throw QueryError("query embedding has non-finite values");
    if (l2_norm(global_vec) == 0.0) throw QueryError("query global vector is zero");
  }
};

struct ScoreBreakdown {
  ItemId item_id = 0;
  double global_score = 0.0;
  double local_score = 0.0;
  double fused_score = 0.0;
};

/// Monotonic counters; the only mutable state reachable from scoring.
struct ScoringDiagnostics {
  std::atomic<std::uint64_t> degenerate_inputs{0};
};

inline ScoringDiagnostics& diagnostics() {
  static ScoringDiagnostics d;
  return d;
}

namespace kernel {

// float inputs, double accumulation; fixed reduction order so results do not
// depend on how the corpus is sharded.
inline double dot(const float* a, const float* b, std::size_t n) {
  double acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l)
      acc[l] += static_cast<double>(a[i + l]) * static_cast<double>(b[i + l]);
  double s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

inline double clamp_unit(double x) { return std::clamp(x, -1.0, 1.0); }

inline double cosine_from(double dot_uv, double norm_u, double norm_v) {
  if (norm_u == 0.0 || norm_v == 0.0) {
    diagnostics().degenerate_inputs.fetch_add(1, std::memory_order_relaxed);
    return 0.0;
  }
  return clamp_unit(dot_uv / (norm_u * norm_v));
}

// In-place softmax of lambda * x.
inline void softmax_scaled(std::span<double> x, double lambda) {
  double m = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double& v : x) {
    v = std::exp(lambda * (v - m));
    z += v;
  }
  for (double& v : x) v /= z;
}

inline double aggregate(std::span<const double> s, const FusionConfig& cfg) {
  if (cfg.local_aggregation == LocalAggregation::mean) {
    double sum = 0.0;
    for (double v : s) sum += v;
    return sum / static_cast<double>(s.size());
  }
  // log-mean-exp, which stays within [min s, max s]
  double m = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (double v : s) z += std::exp(cfg.temperature_lambda * (v - m));
  return clamp_unit(m + std::log(z / static_cast<double>(s.size())) / cfg.temperature_lambda);
}

}  // namespace kernel

inline double cosine(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size())
    throw ScoringError("cosine: dim mismatch (" + std::to_string(u.size()) + " vs " +
                       std::to_string(v.size()) + ")");
  double uv = kernel::dot(u.data(), v.data(), u.size());
  double uu = std::sqrt(kernel::dot(u.data(), u.data(), u.size()));
  double vv = std::sqrt(kernel::dot(v.data(), v.data(), v.size()));
  return kernel::cosine_from(uv, uu, vv);
}

inline double fuse(double global_score, double local_score, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ScoringError("fuse: alpha must lie in [0, 1], got " + std::to_string(alpha));
  return alpha * global_score + (1.0 - alpha) * local_score;
}

/// Cosine of the query global vector against every row.
inline std::vector<double> global_scores(const QueryEmbedding& query, const EmbeddingMatrix& corpus) {
  if (query.global_vec.size() != corpus.dim())
    throw ScoringError("global_scores: query dim " + std::to_string(query.global_vec.size()) +
                       " != corpus dim " + std::to_string(corpus.dim()));
  const std::size_t d = corpus.dim();
  const float* q = query.global_vec.data();
  double qn = std::sqrt(kernel::dot(q, q, d));
  std::vector<double> out(corpus.item_count());
  const float* base = corpus.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float* r = base + i * d;
    out[i] = kernel::cosine_from(kernel::dot(q, r, d), qn, std::sqrt(kernel::dot(r, r, d)));
  }
  return out;
}

/// Attention of one query vector over a block of target vectors.
inline std::vector<double> attention_weights(std::span<const float> query_vec,
                                             const MatrixView& targets, double lambda) {
  if (targets.rows == 0) throw ScoringError("attention_weights: empty target block");
  if (query_vec.size() != targets.dim) throw ScoringError("attention_weights: dim mismatch");
  std::vector<double> w(targets.rows);
  for (std::size_t j = 0; j < targets.rows; ++j) w[j] = cosine(query_vec, targets.row(j));
  kernel::softmax_scaled(w, lambda);
  return w;
}

/// Direct evaluation of the local alignment score: materializes every
/// attended context vector. The ranked path below uses an algebraically
/// equivalent form with cached Gram matrices.
inline double local_alignment_score(const MatrixView& query_locals, const MatrixView& target_locals,
                                    const FusionConfig& cfg) {
  if (query_locals.rows == 0 || target_locals.rows == 0)
    throw ScoringError("local_alignment_score: empty local block");
  if (query_locals.dim != target_locals.dim)
    throw ScoringError("local_alignment_score: dim mismatch (" +
                       std::to_string(query_locals.dim) + " vs " +
                       std::to_string(target_locals.dim) + ")");
  const std::size_t d = query_locals.dim;
  std::vector<double> sims(query_locals.rows);
  std::vector<double> context(d);
  for (std::size_t i = 0; i < query_locals.rows; ++i) {
    auto qi = query_locals.row(i);
    auto a = attention_weights(qi, target_locals, cfg.temperature_lambda);
    std::fill(context.begin(), context.end(), 0.0);
    for (std::size_t j = 0; j < target_locals.rows; ++j) {
      auto rj = target_locals.row(j);
      for (std::size_t k = 0; k < d; ++k) context[k] += a[j] * rj[k];
    }
    double qc = 0.0, qq = 0.0, cc = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      qc += qi[k] * context[k];
      qq += static_cast<double>(qi[k]) * qi[k];
      cc += context[k] * context[k];
    }
    sims[i] = kernel::cosine_from(qc, std::sqrt(qq), std::sqrt(cc));
  }
  return kernel::aggregate(sims, cfg);
}

struct RankedScore {
  ItemId item_id;
  double score;

  friend bool operator==(const RankedScore&, const RankedScore&) = default;
};

/// Higher score first, then lower item id.
inline bool ranks_before(double score_a, ItemId id_a, double score_b, ItemId id_b) {
  return score_a > score_b || (score_a == score_b && id_a < id_b);
}

/// The min(k, N) best entries in rank order.
inline std::vector<RankedScore> rank_top_k(std::span<const double> scores, std::size_t k) {
  if (k == 0) throw ScoringError("rank_top_k: k must be at least 1");
  std::vector<RankedScore> all(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) all[i] = {i, scores[i]};
  auto cmp = [](const RankedScore& a, const RankedScore& b) {
    return ranks_before(a.score, a.item_id, b.score, b.item_id);
  };
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), cmp);
  all.resize(k);
  return all;
}

struct ScoringOptions {
  std::size_t threads = 1;  // corpus shards scored concurrently
};

/// A corpus side with per-item quantities that do not depend on the query:
/// global row norms, local row norms and the Gram matrix of each item's local
/// block. Holds a reference to the side, which must outlive it.
class PreparedSide {
 public:
  explicit PreparedSide(const CorpusSide& side) : side_(&side) {
    const auto& g = side.global;
    global_norms_.resize(g.item_count());
    for (std::size_t i = 0; i < g.item_count(); ++i) {
      const float* r = g.values().data() + i * g.dim();
      global_norms_[i] = std::sqrt(kernel::dot(r, r, g.dim()));
    }
    const auto& l = side.local;
    local_norms_.resize(l.total_rows());
    gram_offsets_.resize(l.item_count() + 1, 0);
    for (std::size_t i = 0; i < l.item_count(); ++i) {
      auto rows = l.block_unchecked(i).rows;
      gram_offsets_[i + 1] = gram_offsets_[i] + rows * rows;
    }
    gram_.resize(gram_offsets_.back());
    for (std::size_t i = 0; i < l.item_count(); ++i) {
      auto b = l.block_unchecked(i);
      auto first = l.offsets()[i];
      double* G = gram_.data() + gram_offsets_[i];
      for (std::size_t j = 0; j < b.rows; ++j) {
        for (std::size_t k = j; k < b.rows; ++k) {
          double v = kernel::dot(b.row(j).data(), b.row(k).data(), b.dim);
          G[j * b.rows + k] = v;
          G[k * b.rows + j] = v;
        }
        local_norms_[first + j] = std::sqrt(G[j * b.rows + j]);
      }
    }
  }

  const CorpusSide& side() const { return *side_; }
  std::size_t item_count() const { return side_->item_count(); }

  void check_dims(const QueryEmbedding& q) const {
    if (q.global_vec.size() != side_->global.dim())
      throw ScoringError("query global dim " + std::to_string(q.global_vec.size()) +
                         " != corpus global dim " + std::to_string(side_->global.dim()));
    if (q.local_dim != side_->local.dim())
      throw ScoringError("query local dim " + std::to_string(q.local_dim) +
                         " != corpus local dim " + std::to_string(side_->local.dim()));
    if (q.local_count() == 0) throw ScoringError("query has no local vectors");
  }

  /// Query-side quantities reused across all items.
  struct QueryState {
    const QueryEmbedding* query;
    double global_norm;
    std::vector<double> local_norms;
  };

  QueryState prepare(const QueryEmbedding& q) const {
    check_dims(q);
    QueryState s{&q, std::sqrt(kernel::dot(q.global_vec.data(), q.global_vec.data(),
                                           q.global_vec.size())),
                 {}};
    auto locals = q.locals();
    s.local_norms.resize(locals.rows);
    for (std::size_t i = 0; i < locals.rows; ++i)
      s.local_norms[i] = std::sqrt(kernel::dot(locals.row(i).data(), locals.row(i).data(), locals.dim));
    return s;
  }

  double global_score(const QueryState& s, ItemId id) const {
    const auto& g = side_->global;
    return kernel::cosine_from(
        kernel::dot(s.query->global_vec.data(), g.values().data() + id * g.dim(), g.dim()),
        s.global_norm, global_norms_[id]);
  }

  /// Local alignment via the Gram identity
  ///   <q, c> = sum_j a_j <q, r_j>,   |c|^2 = sum_jk a_j a_k <r_j, r_k>.
  /// `scratch` must hold at least 2 * R_q * R_t + R_q doubles.
  double local_score(const QueryState& s, ItemId id, const FusionConfig& cfg,
                     std::vector<double>& scratch) const {
    const auto& l = side_->local;
    auto target = l.block_unchecked(id);
    auto first = l.offsets()[id];
    auto q = s.query->locals();
    const std::size_t rq = q.rows, rt = target.rows;
    scratch.resize(2 * rq * rt + rq);
    double* dots = scratch.data();
    double* w = dots + rq * rt;
    double* sims = w + rq * rt;
    const double* G = gram_.data() + gram_offsets_[id];

    for (std::size_t i = 0; i < rq; ++i) {
      const float* qi = q.row(i).data();
      for (std::size_t j = 0; j < rt; ++j) {
        double d = kernel::dot(qi, target.row(j).data(), q.dim);
        dots[i * rt + j] = d;
        w[i * rt + j] = kernel::cosine_from(d, s.local_norms[i], local_norms_[first + j]);
      }
      kernel::softmax_scaled(std::span(w + i * rt, rt), cfg.temperature_lambda);
      double qc = 0.0, cc = 0.0;
      for (std::size_t j = 0; j < rt; ++j) {
        double aj = w[i * rt + j];
        qc += aj * dots[i * rt + j];
        double row = 0.0;
        for (std::size_t k = 0; k < rt; ++k) row += w[i * rt + k] * G[j * rt + k];
        cc += aj * row;
      }
      sims[i] = kernel::cosine_from(qc, s.local_norms[i], cc > 0.0 ? std::sqrt(cc) : 0.0);
    }
    return kernel::aggregate(std::span<const double>(sims, rq), cfg);
  }

  ScoreBreakdown score_item(const QueryState& s, ItemId id, const FusionConfig& cfg,
                            std::vector<double>& scratch) const {
    ScoreBreakdown b;
    b.item_id = id;
    b.global_score = global_score(s, id);
    b.local_score = local_score(s, id, cfg, scratch);
    b.fused_score = fuse(b.global_score, b.local_score, cfg.alpha);
    return b;
  }

 private:
  const CorpusSide* side_;
  std::vector<double> global_norms_;
  std::vector<double> local_norms_;
  std::vector<std::size_t> gram_offsets_;
  std::vector<double> gram_;
};

namespace detail {

inline bool breakdown_before(const ScoreBreakdown& a, const ScoreBreakdown& b) {
  return ranks_before(a.fused_score, a.item_id, b.fused_score, b.item_id);
}

inline void keep_top_k(std::vector<ScoreBreakdown>& v, std::size_t k) {
  k = std::min(k, v.size());
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(),
                    breakdown_before);
  v.resize(k);
}

// Runs fn(begin, end, shard_index) over contiguous shards of [0, n).
template <class Fn>
void for_each_shard(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    fn(std::size_t{0}, n, std::size_t{0});
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    std::size_t begin = std::min(n, t * chunk), end = std::min(n, begin + chunk);
    pool.emplace_back([&fn, begin, end, t] { fn(begin, end, t); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail

/// Scores every item of the side (global, local, fused), in item order.
inline std::vector<ScoreBreakdown> score_all(const QueryEmbedding& query, const PreparedSide& side,
                                             const FusionConfig& cfg, ScoringOptions opts = {}) {
  cfg.validate();
  auto state = side.prepare(query);
  std::vector<ScoreBreakdown> out(side.item_count());
  detail::for_each_shard(out.size(), opts.threads, [&](std::size_t b, std::size_t e, std::size_t) {
    std::vector<double> scratch;
    for (std::size_t i = b; i < e; ++i) out[i] = side.score_item(state, i, cfg, scratch);
  });
  return out;
}

/// Exhaustive scoring followed by top-k on the fused score.
inline std::vector<ScoreBreakdown> score_query_against_corpus(const QueryEmbedding& query,
                                                              const PreparedSide& side,
                                                              const FusionConfig& cfg, std::size_t k,
                                                              ScoringOptions opts = {}) {
  cfg.validate();
  if (k == 0) throw ScoringError("k must be at least 1");
  auto state = side.prepare(query);
  const std::size_t n = side.item_count();
  if (n == 0) return {};
  std::size_t shards = std::max<std::size_t>(1, std::min(opts.threads, n));
  std::vector<std::vector<ScoreBreakdown>> partial(shards);

  if (cfg.alpha == 1.0) {
    // The fused score equals the global score exactly, so the local term is
    // only needed for the items that are returned.
    detail::for_each_shard(n, shards, [&](std::size_t b, std::size_t e, std::size_t t) {
      auto& part = partial[t];
      part.reserve(e - b);
      for (std::size_t i = b; i < e; ++i) {
        double g = side.global_score(state, i);
        part.push_back({i, g, 0.0, g});
      }
      detail::keep_top_k(part, k);
    });
  } else {
    detail::for_each_shard(n, shards, [&](std::size_t b, std::size_t e, std::size_t t) {
      auto& part = partial[t];
      part.reserve(e - b);
      std::vector<double> scratch;
      for (std::size_t i = b; i < e; ++i) part.push_back(side.score_item(state, i, cfg, scratch));
      detail::keep_top_k(part, k);
    });
  }

  std::vector<ScoreBreakdown> merged;
  for (auto& p : partial) merged.insert(merged.end(), p.begin(), p.end());
  detail::keep_top_k(merged, k);

  if (cfg.alpha == 1.0) {
    std::vector<double> scratch;
    for (auto& b : merged) {
      b.local_score = side.local_score(state, b.item_id, cfg, scratch);
      b.fused_score = fuse(b.global_score, b.local_score, cfg.alpha);
    }
  }
  return merged;
}

inline std::vector<ScoreBreakdown> score_query_against_corpus(const QueryEmbedding& query,
                                                              const CorpusSide& side,
                                                              const FusionConfig& cfg, std::size_t k,
                                                              ScoringOptions opts = {}) {
  return score_query_against_corpus(query, PreparedSide(side), cfg, k, opts);
}

}  // namespace xmodal
