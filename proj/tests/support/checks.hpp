#pragma once

// Randomized property checks shared by the unit suite and the acceptance
// runner. Each returns how many cases ran and the first counterexample.

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "oracle.hpp"
#include "xmodal/xmodal.hpp"

namespace checks {

struct Outcome {
  std::size_t cases = 0;
  std::size_t failures = 0;
  std::string first_failure;

  bool ok() const { return failures == 0 && cases > 0; }

  void fail(const std::string& why) {
    if (failures++ == 0) first_failure = why;
  }
};

struct Shape {
  std::size_t n, dim, local_dim, max_locals;
};

inline Shape random_shape(std::mt19937_64& rng, std::size_t max_n = 60) {
  std::uniform_int_distribution<std::size_t> n(1, max_n), d(1, 32), r(1, 8);
  return {n(rng), d(rng), d(rng), r(rng)};
}

// Scales a random subset of rows by extreme factors and zeroes a few local rows.
inline xmodal::Corpus adversarial_corpus(std::mt19937_64& rng, const Shape& s) {
  auto c = oracle::random_corpus(rng, s.n, s.dim, s.local_dim, s.max_locals);
  std::uniform_real_distribution<double> u(0, 1);
  auto warp = [&](xmodal::CorpusSide& side) {
    std::vector<float> g(side.global.values().begin(), side.global.values().end());
    std::vector<float> l(side.local.values().begin(), side.local.values().end());
    for (std::size_t i = 0; i < side.global.item_count(); ++i) {
      float f = u(rng) < 0.2 ? 1e4f : (u(rng) < 0.2 ? 1e-4f : 1.0f);
      for (std::size_t k = 0; k < s.dim; ++k) g[i * s.dim + k] *= f;
    }
    for (std::size_t r = 0; r < side.local.total_rows(); ++r)
      if (u(rng) < 0.05)
        for (std::size_t k = 0; k < s.local_dim; ++k) l[r * s.local_dim + k] = 0.0f;
    std::vector<std::uint64_t> off(side.local.offsets().begin(), side.local.offsets().end());
    side.global = xmodal::EmbeddingMatrix(side.global.item_count(), s.dim, std::move(g));
    side.local = xmodal::LocalEmbeddingSet(s.local_dim, std::move(off), std::move(l));
  };
  warp(c.images);
  warp(c.descriptions);
  return c;
}

inline xmodal::FusionConfig random_config(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> a(0, 1), lam(0.01, 50);
  xmodal::FusionConfig cfg;
  cfg.alpha = a(rng);
  cfg.temperature_lambda = lam(rng);
  cfg.local_aggregation =
      a(rng) < 0.5 ? xmodal::LocalAggregation::mean : xmodal::LocalAggregation::log_sum_exp;
  return cfg;
}

inline std::vector<std::size_t> order_of(const std::vector<xmodal::ScoreBreakdown>& r) {
  std::vector<std::size_t> ids;
  for (auto& b : r) ids.push_back(b.item_id);
  return ids;
}

/// Every global, local and fused score lies in [-1, 1] up to 1e-6.
inline Outcome boundedness(std::uint64_t seed, std::size_t cases) {
  Outcome o;
  std::mt19937_64 rng(seed);
  for (; o.cases < cases; ++o.cases) {
    auto s = random_shape(rng);
    auto c = adversarial_corpus(rng, s);
    auto cfg = random_config(rng);
    auto q = oracle::random_query(rng, s.dim, s.local_dim, 1 + rng() % 6);
    xmodal::PreparedSide side(c.images);
    for (auto& b : xmodal::score_all(q, side, cfg)) {
      for (double v : {b.global_score, b.local_score, b.fused_score})
        if (!(v >= -1.0 - 1e-6 && v <= 1.0 + 1e-6)) {
          std::ostringstream os;
          os << "case " << o.cases << " item " << b.item_id << " score " << v;
          o.fail(os.str());
        }
    }
  }
  return o;
}

/// Attention weights of each query vector sum to 1 within 1e-6.
inline Outcome attention_normalization(std::uint64_t seed, std::size_t cases) {
  Outcome o;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> lam(1e-6, 200);
  for (; o.cases < cases; ++o.cases) {
    auto s = random_shape(rng);
    auto q = oracle::random_query(rng, 1, s.local_dim, 1);
    auto t = oracle::random_query(rng, 1, s.local_dim, 1 + rng() % 16);
    double l = lam(rng);
    auto w = xmodal::attention_weights(q.local_vecs, t.locals(), l);
    double sum = 0;
    for (double x : w) sum += x;
    if (std::abs(sum - 1.0) > 1e-6) o.fail("sum " + std::to_string(sum) + " at lambda " + std::to_string(l));
  }
  return o;
}

/// At lambda = 1e-9 the weights are uniform within 1e-6.
inline Outcome uniform_limit(std::uint64_t seed, std::size_t cases) {
  Outcome o;
  std::mt19937_64 rng(seed);
  for (; o.cases < cases; ++o.cases) {
    auto s = random_shape(rng);
    auto q = oracle::random_query(rng, 1, s.local_dim, 1);
    auto t = oracle::random_query(rng, 1, s.local_dim, 1 + rng() % 16);
    auto w = xmodal::attention_weights(q.local_vecs, t.locals(), 1e-9);
    for (double x : w)
      if (std::abs(x - 1.0 / double(w.size())) > 1e-6) o.fail("weight " + std::to_string(x));
  }
  return o;
}

/// Multiplying every query vector by c > 0 leaves the ranking unchanged.
inline Outcome scale_invariance(std::uint64_t seed, std::size_t cases) {
  Outcome o;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> logc(-3, 3);
  for (; o.cases < cases; ++o.cases) {
    auto s = random_shape(rng);
    auto c = oracle::random_corpus(rng, s.n, s.dim, s.local_dim, s.max_locals);
    auto cfg = random_config(rng);
    auto q = oracle::random_query(rng, s.dim, s.local_dim, 1 + rng() % 6);
    auto scaled = q;
    float f = static_cast<float>(std::pow(10.0, logc(rng)));
    for (float& x : scaled.global_vec) x *= f;
    for (float& x : scaled.local_vecs) x *= f;
    auto a = xmodal::score_query_against_corpus(q, c.images, cfg, s.n);
    auto b = xmodal::score_query_against_corpus(scaled, c.images, cfg, s.n);
    if (order_of(a) != order_of(b)) o.fail("order changed at scale " + std::to_string(f));
  }
  return o;
}

/// With the local score fixed, fused score never decreases as the global score grows.
inline Outcome monotone_fusion(std::uint64_t seed, std::size_t cases) {
  Outcome o;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1), a(0, 1);
  for (; o.cases < cases; ++o.cases) {
    double alpha = std::max(1e-12, a(rng));
    double l = u(rng), g1 = u(rng), g2 = u(rng);
    if (g1 > g2) std::swap(g1, g2);
    if (xmodal::fuse(g1, l, alpha) > xmodal::fuse(g2, l, alpha))
      o.fail("alpha " + std::to_string(alpha));
  }
  return o;
}

/// alpha = 1 ranks exactly like global scores alone; alpha = 0 exactly like
/// local scores alone.
inline Outcome alpha_degeneracy(std::uint64_t seed, std::size_t cases) {
  Outcome o;
  std::mt19937_64 rng(seed);
  for (; o.cases < cases; ++o.cases) {
    auto s = random_shape(rng);
    auto c = oracle::random_corpus(rng, s.n, s.dim, s.local_dim, s.max_locals);
    auto cfg = random_config(rng);
    auto q = oracle::random_query(rng, s.dim, s.local_dim, 1 + rng() % 6);
    std::size_t k = 1 + rng() % s.n;

    cfg.alpha = 1.0;
    auto global_only = xmodal::rank_top_k(xmodal::global_scores(q, c.images.global), k);
    auto fused = xmodal::score_query_against_corpus(q, c.images, cfg, k);
    for (std::size_t r = 0; r < global_only.size(); ++r)
      if (fused.size() != global_only.size() || fused[r].item_id != global_only[r].item_id) {
        o.fail("alpha=1 differs at rank " + std::to_string(r + 1));
        break;
      }

    cfg.alpha = 0.0;
    std::vector<double> local(s.n);
    for (std::size_t i = 0; i < s.n; ++i)
      local[i] = xmodal::local_alignment_score(q.locals(), c.images.local.block(i), cfg);
    auto local_only = xmodal::rank_top_k(local, k);
    fused = xmodal::score_query_against_corpus(q, c.images, cfg, k);
    // The engine evaluates local scores in a different (Gram) form, so items
    // whose scores agree to rounding may trade places.
    for (std::size_t r = 0; r < local_only.size(); ++r)
      if (fused.size() != local_only.size() ||
          (fused[r].item_id != local_only[r].item_id &&
           std::abs(local[fused[r].item_id] - local_only[r].score) > 1e-9)) {
        o.fail("alpha=0 differs at rank " + std::to_string(r + 1));
        break;
      }
  }
  return o;
}

/// Full rankings from the engine equal the naive scorer's for every query of
/// `corpora` random corpora (n <= 200, D <= 32); recall from both agrees exactly.
inline Outcome oracle_equivalence(std::uint64_t seed, std::size_t corpora,
                                  std::size_t queries_per_corpus = 25) {
  Outcome o;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> nd(2, 200), dd(1, 32), rd(1, 8);
  for (; o.cases < corpora; ++o.cases) {
    std::size_t n = nd(rng), d = dd(rng), ld = dd(rng);
    auto c = std::make_shared<const xmodal::Corpus>(oracle::random_corpus(rng, n, d, ld, rd(rng)));
    auto cfg = random_config(rng);
    xmodal::Engine engine(c, cfg);
    for (auto dir : {xmodal::Direction::text_to_image, xmodal::Direction::image_to_text}) {
      const auto& gallery = dir == xmodal::Direction::text_to_image ? c->images : c->descriptions;
      std::vector<xmodal::ItemId> ids;
      for (std::size_t i = 0; i < std::min(n, queries_per_corpus); ++i) ids.push_back(i);
      auto pairs = xmodal::make_eval_pairs(*c, ids, ids, dir);
      std::vector<std::size_t> oracle_ranks;
      for (auto& p : pairs) {
        auto ref = oracle::naive_rank(p.query, gallery, cfg);
        auto got = engine.rank(p.query, dir, n);
        bool same = got.size() == ref.size();
        for (std::size_t r = 0; same && r < ref.size(); ++r)
          same = got[r].item_id == ref[r].id && std::abs(got[r].fused_score - ref[r].fused) <= 1e-5;
        if (!same) o.fail("corpus " + std::to_string(o.cases) + " ranking differs");
        std::size_t rank = 0;
        for (std::size_t r = 0; r < ref.size(); ++r)
          if (ref[r].id == p.relevant) rank = r + 1;
        oracle_ranks.push_back(rank);
      }
      auto rep = xmodal::recall_at_k(engine, pairs, {1, 5, 10}, dir);
      for (std::size_t k : {1, 5, 10})
        if (rep.recalls.at(k) != oracle::naive_recall(oracle_ranks, k))
          o.fail("corpus " + std::to_string(o.cases) + " recall@" + std::to_string(k) + " differs");
    }
  }
  return o;
}

}  // namespace checks
