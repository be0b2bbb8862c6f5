#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xmodal/encoder.hpp"
#include "xmodal/manifest.hpp"
#include "xmodal/store.hpp"

namespace xmodal {

struct SyntheticParams {
  std::size_t n = 500;
  std::size_t dim = 64;
  std::size_t local_dim = 0;  // 0: same as dim
  std::size_t local_count = 4;
  double noise = 0.0;
  std::uint64_t seed = 0;

  std::size_t effective_local_dim() const { return local_dim ? local_dim : dim; }
};

inline std::string synthetic_key(ItemId i) { return "item-" + std::to_string(i); }

/// Mock encoder matching a generated corpus: encode_text(synthetic_key(i))
/// reproduces item i's noise-free representation.
inline MockEncoder synthetic_encoder(const SyntheticParams& p) {
  return MockEncoder(p.seed, p.dim, p.effective_local_dim(), p.local_count);
}

/// Paired corpus around per-item latent points. Image i and description i
/// are the latent point of key "item-i" with independent Gaussian noise of
/// relative magnitude `noise` added to every vector, then renormalized.
inline Corpus make_synthetic_corpus(const SyntheticParams& p) {
  if (p.n == 0) throw QueryError("synthetic corpus needs n >= 1");
  if (!(p.noise >= 0.0)) throw QueryError("noise must be >= 0");
  auto encoder = synthetic_encoder(p);
  const std::size_t gd = p.dim, ld = p.effective_local_dim(), r = p.local_count;

  std::vector<float> img_g, desc_g, img_l, desc_l;
  img_g.reserve(p.n * gd);
  desc_g.reserve(p.n * gd);
  img_l.reserve(p.n * r * ld);
  desc_l.reserve(p.n * r * ld);
  std::vector<std::uint64_t> offsets(p.n + 1);

  auto append_noisy = [&](std::vector<float>& out, std::span<const float> latent,
                          GaussianStream& g) {
    auto start = out.size();
    out.insert(out.end(), latent.begin(), latent.end());
    if (p.noise == 0.0) return;
    std::span<float> v(out.data() + start, latent.size());
    double scale = p.noise / std::sqrt(static_cast<double>(v.size()));
    for (float& x : v) x = static_cast<float>(x + scale * g.next());
    normalize_in_place(v);
  };

  for (ItemId i = 0; i < p.n; ++i) {
    auto latent = encoder.embed_key(synthetic_key(i), Modality::text);
    GaussianStream img_noise(splitmix64(p.seed ^ splitmix64(2 * i + 1)));
    GaussianStream desc_noise(splitmix64(p.seed ^ splitmix64(2 * i + 2)));
    append_noisy(img_g, latent.global_vec, img_noise);
    append_noisy(desc_g, latent.global_vec, desc_noise);
    for (std::size_t j = 0; j < r; ++j) {
      auto lv = latent.locals().row(j);
      append_noisy(img_l, lv, img_noise);
      append_noisy(desc_l, lv, desc_noise);
    }
    offsets[i + 1] = offsets[i] + r;
  }

  Corpus c;
  c.name = "synthetic-" + std::to_string(p.n);
  c.images.global = EmbeddingMatrix(p.n, gd, std::move(img_g), true);
  c.descriptions.global = EmbeddingMatrix(p.n, gd, std::move(desc_g), true);
  c.images.local = LocalEmbeddingSet(ld, offsets, std::move(img_l));
  c.descriptions.local = LocalEmbeddingSet(ld, std::move(offsets), std::move(desc_l));
  c.catalog.reserve(p.n);
  for (ItemId i = 0; i < p.n; ++i) {
    auto key = synthetic_key(i);
    c.catalog.push_back({i, key, key, "synthetic://images/" + key + ".png",
                         "https://example.org/items/" + key});
  }
  c.synthetic = SyntheticInfo{p.seed, p.local_count, p.noise};
  return c;
}

/// Writes the four stores, offsets, catalog and manifest.json into `dir`.
/// Returns the manifest path.
inline std::filesystem::path write_corpus(const Corpus& c, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_matrix(c.images.global, dir / "image_global.npy");
  write_local_set(c.images.local, dir / "image_local.npy", dir / "image_local_offsets.npy");
  write_matrix(c.descriptions.global, dir / "description_global.npy");
  write_local_set(c.descriptions.local, dir / "description_local.npy",
                  dir / "description_local_offsets.npy");
  write_catalog(c.catalog, dir / "catalog.jsonl");

  IngestPaths paths{dir / "image_global.npy",       dir / "image_local.npy",
                    dir / "image_local_offsets.npy", dir / "description_global.npy",
                    dir / "description_local.npy",   dir / "description_local_offsets.npy",
                    dir / "catalog.jsonl"};
  auto manifest_path = dir / "manifest.json";
  auto m = build_manifest(paths, c.name, manifest_path, c.default_fusion_weight);
  m.synthetic = c.synthetic;
  save_manifest(m, manifest_path);
  return manifest_path;
}

/// Generates a synthetic corpus on disk, plus pairs.json with the ground-truth
/// (query item, relevant item) list. Returns the manifest path.
inline std::filesystem::path generate_synthetic_corpus(const SyntheticParams& p,
                                                       const std::filesystem::path& dir) {
  auto c = make_synthetic_corpus(p);
  auto manifest = write_corpus(c, dir);
  nlohmann::json pairs = nlohmann::json::array();
  for (ItemId i = 0; i < p.n; ++i) pairs.push_back({i, i});
  std::ofstream out(dir / "pairs.json", std::ios::trunc);
  out << pairs.dump() << '\n';
  if (!out) throw StoreError(StoreErrc::io, dir / "pairs.json", "write failed");
  return manifest;
}

}  // namespace xmodal
