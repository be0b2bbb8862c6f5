#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmodal/catalog.hpp"
#include "xmodal/checksum.hpp"
#include "xmodal/error.hpp"
#include "xmodal/npy.hpp"
#include "xmodal/store.hpp"

namespace xmodal {

struct StoreFile {
  std::filesystem::path path;  // relative paths resolve against the manifest directory
  std::string checksum;
};

struct LocalStoreFiles {
  StoreFile values;
  StoreFile offsets;
};

/// Parameters recorded by the synthetic corpus generator so that the mock
/// encoder can be configured to reproduce its embeddings.
struct SyntheticInfo {
  std::uint64_t encoder_seed = 0;
  std::size_t local_count = 1;
  double noise = 0.0;
};

struct StoreManifest {
  std::string corpus_name;
  std::size_t image_count = 0;
  std::size_t description_count = 0;
  std::size_t global_dim = 512;
  std::size_t local_dim = 512;
  StoreFile image_global;
  LocalStoreFiles image_local;
  StoreFile description_global;
  LocalStoreFiles description_local;
  StoreFile catalog;
  bool normalized_at_ingest = false;
  double default_fusion_weight = 0.5;
  std::optional<SyntheticInfo> synthetic;

  std::filesystem::path base_dir;  // not serialized

  std::filesystem::path resolve(const std::filesystem::path& p) const {
    return p.is_absolute() ? p : base_dir / p;
  }
};

namespace detail {

inline nlohmann::json file_json(const StoreFile& f) {
  return {{"path", f.path.generic_string()}, {"checksum", f.checksum}};
}

inline nlohmann::json local_json(const LocalStoreFiles& f) {
  return {{"path", f.values.path.generic_string()},
          {"checksum", f.values.checksum},
          {"offsets_path", f.offsets.path.generic_string()},
          {"offsets_checksum", f.offsets.checksum}};
}

}  // namespace detail

inline nlohmann::json to_json(const StoreManifest& m) {
  nlohmann::json j = {{"corpus_name", m.corpus_name},
                      {"image_count", m.image_count},
                      {"description_count", m.description_count},
                      {"global_dim", m.global_dim},
                      {"local_dim", m.local_dim},
                      {"image_global", detail::file_json(m.image_global)},
                      {"image_local", detail::local_json(m.image_local)},
                      {"description_global", detail::file_json(m.description_global)},
                      {"description_local", detail::local_json(m.description_local)},
                      {"catalog", detail::file_json(m.catalog)},
                      {"normalized_at_ingest", m.normalized_at_ingest},
                      {"default_fusion_weight", m.default_fusion_weight}};
  if (m.synthetic)
    j["synthetic"] = {{"encoder_seed", m.synthetic->encoder_seed},
                      {"local_count", m.synthetic->local_count},
                      {"noise", m.synthetic->noise}};
  return j;
}

inline void save_manifest(const StoreManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw StoreError(StoreErrc::io, path, "cannot create manifest");
  out << to_json(m).dump(2) << '\n';
  if (!out) throw StoreError(StoreErrc::io, path, "write failed");
}

/// Parses manifest JSON without touching the referenced files.
inline StoreManifest parse_manifest(const nlohmann::json& j, const std::filesystem::path& path) {
  auto fail = [&](const std::string& msg) -> StoreError {
    return StoreError(StoreErrc::bad_manifest, path, msg);
  };
  if (!j.is_object()) throw fail("manifest must be a JSON object");
  auto get = [&](const nlohmann::json& obj, const char* key) -> const nlohmann::json& {
    auto it = obj.find(key);
    if (it == obj.end()) throw fail(std::string("missing field '") + key + "'");
    return *it;
  };
  auto get_string = [&](const nlohmann::json& obj, const char* key) {
    const auto& v = get(obj, key);
    if (!v.is_string()) throw fail(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
  };
  auto get_count = [&](const nlohmann::json& obj, const char* key) {
    const auto& v = get(obj, key);
    if (!v.is_number_unsigned())
      throw fail(std::string("field '") + key + "' must be a non-negative integer");
    return v.get<std::size_t>();
  };
  auto get_file = [&](const char* key) {
    const auto& o = get(j, key);
    if (!o.is_object()) throw fail(std::string("field '") + key + "' must be an object");
    return StoreFile{get_string(o, "path"), get_string(o, "checksum")};
  };
  auto get_local = [&](const char* key) {
    const auto& o = get(j, key);
    if (!o.is_object()) throw fail(std::string("field '") + key + "' must be an object");
    return LocalStoreFiles{{get_string(o, "path"), get_string(o, "checksum")},
                           {get_string(o, "offsets_path"), get_string(o, "offsets_checksum")}};
  };

  StoreManifest m;
  m.corpus_name = get_string(j, "corpus_name");
  m.image_count = get_count(j, "image_count");
  m.description_count = get_count(j, "description_count");
  m.global_dim = get_count(j, "global_dim");
  m.local_dim = get_count(j, "local_dim");
  if (m.global_dim == 0 || m.local_dim == 0) throw fail("dims must be positive");
  m.image_global = get_file("image_global");
  m.image_local = get_local("image_local");
  m.description_global = get_file("description_global");
  m.description_local = get_local("description_local");
  m.catalog = get_file("catalog");
  const auto& norm = get(j, "normalized_at_ingest");
  if (!norm.is_boolean()) throw fail("field 'normalized_at_ingest' must be a boolean");
  m.normalized_at_ingest = norm.get<bool>();
  const auto& alpha = get(j, "default_fusion_weight");
  if (!alpha.is_number()) throw fail("field 'default_fusion_weight' must be a number");
  m.default_fusion_weight = alpha.get<double>();
  if (!(m.default_fusion_weight >= 0.0 && m.default_fusion_weight <= 1.0))
    throw fail("default_fusion_weight must lie in [0, 1]");
  if (auto it = j.find("synthetic"); it != j.end() && it->is_object()) {
    SyntheticInfo s;
    s.encoder_seed = it->value("encoder_seed", std::uint64_t{0});
    s.local_count = it->value("local_count", std::size_t{1});
    s.noise = it->value("noise", 0.0);
    m.synthetic = s;
  }
  m.base_dir = path.parent_path();
  return m;
}

namespace detail {

inline void verify_checksum(const StoreManifest& m, const StoreFile& f) {
  auto p = m.resolve(f.path);
  if (!std::filesystem::exists(p)) throw StoreError(StoreErrc::missing_file, p, "file not found");
  auto actual = file_checksum(p);
  if (actual != f.checksum)
    throw StoreError(StoreErrc::checksum_mismatch, p,
                     "checksum mismatch: manifest says " + f.checksum + ", file hashes to " +
                         actual);
}

inline void verify_shape(const std::filesystem::path& p, const std::vector<std::uint64_t>& shape,
                         std::size_t rank, std::optional<std::uint64_t> rows,
                         std::optional<std::uint64_t> cols, const char* what) {
  if (shape.size() != rank)
    throw StoreError(StoreErrc::bad_rank, p, std::string(what) + " has rank " +
                                                 std::to_string(shape.size()));
  if (rows && shape[0] != *rows)
    throw StoreError(StoreErrc::shape_mismatch, p,
                     std::string(what) + " has " + std::to_string(shape[0]) +
                         " rows, manifest declares " + std::to_string(*rows));
  if (cols && shape[1] != *cols)
    throw StoreError(StoreErrc::dim_mismatch, p,
                     std::string(what) + " has dim " + std::to_string(shape[1]) +
                         ", manifest declares " + std::to_string(*cols));
}

}  // namespace detail

/// Reads a manifest and verifies every referenced file: existence, checksum,
/// and that header shapes agree with the declared counts and dims.
inline StoreManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StoreError(StoreErrc::missing_file, path, "cannot open manifest");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw StoreError(StoreErrc::bad_manifest, path, e.what());
  }
  StoreManifest m = parse_manifest(j, path);

  for (const StoreFile* f : {&m.image_global, &m.image_local.values, &m.image_local.offsets,
                             &m.description_global, &m.description_local.values,
                             &m.description_local.offsets, &m.catalog})
    detail::verify_checksum(m, *f);

  using detail::verify_shape;
  auto p = m.resolve(m.image_global.path);
  verify_shape(p, npy::read_header(p).shape, 2, m.image_count, m.global_dim, "image global store");
  p = m.resolve(m.description_global.path);
  verify_shape(p, npy::read_header(p).shape, 2, m.description_count, m.global_dim,
               "description global store");
  p = m.resolve(m.image_local.values.path);
  verify_shape(p, npy::read_header(p).shape, 2, std::nullopt, m.local_dim, "image local store");
  p = m.resolve(m.description_local.values.path);
  verify_shape(p, npy::read_header(p).shape, 2, std::nullopt, m.local_dim,
               "description local store");
  p = m.resolve(m.image_local.offsets.path);
  verify_shape(p, npy::read_header(p).shape, 1, m.image_count + 1, std::nullopt,
               "image local offsets");
  p = m.resolve(m.description_local.offsets.path);
  verify_shape(p, npy::read_header(p).shape, 1, m.description_count + 1, std::nullopt,
               "description local offsets");
  return m;
}

/// Global and local representations of one modality.
struct CorpusSide {
  EmbeddingMatrix global;
  LocalEmbeddingSet local;

  std::size_t item_count() const { return global.item_count(); }
};

enum class Side { images, descriptions };

/// Everything the engine serves: both modalities plus the shared catalog.
/// Catalog entry i describes image i and description i.
struct Corpus {
  std::string name;
  CorpusSide images;
  CorpusSide descriptions;
  std::vector<CatalogEntry> catalog;
  double default_fusion_weight = 0.5;
  std::optional<SyntheticInfo> synthetic;

  const CorpusSide& side(Side s) const { return s == Side::images ? images : descriptions; }

  std::size_t global_dim() const { return images.global.dim(); }
  std::size_t local_dim() const { return images.local.dim(); }

  void validate() const {
    for (const CorpusSide* s : {&images, &descriptions}) {
      if (s->global.item_count() != s->local.item_count())
        throw StoreError(StoreErrc::shape_mismatch,
                         "global and local stores disagree on item count");
      if (s->global.item_count() > catalog.size())
        throw StoreError(StoreErrc::bad_catalog, "catalog has fewer entries than the stores");
    }
    if (images.global.dim() != descriptions.global.dim())
      throw StoreError(StoreErrc::dim_mismatch, "image and description global dims differ");
    if (images.local.dim() != descriptions.local.dim())
      throw StoreError(StoreErrc::dim_mismatch, "image and description local dims differ");
    for (std::size_t i = 0; i < catalog.size(); ++i)
      if (catalog[i].item_id != i)
        throw StoreError(StoreErrc::bad_catalog, "catalog item ids must be 0..N-1 in order");
  }
};

inline Corpus load_corpus(const StoreManifest& m) {
  Corpus c;
  c.name = m.corpus_name;
  c.images.global = load_global_matrix(m.resolve(m.image_global.path), m.global_dim);
  c.images.local = load_local_tensor(m.resolve(m.image_local.values.path),
                                     m.resolve(m.image_local.offsets.path), m.local_dim);
  c.descriptions.global = load_global_matrix(m.resolve(m.description_global.path), m.global_dim);
  c.descriptions.local = load_local_tensor(m.resolve(m.description_local.values.path),
                                           m.resolve(m.description_local.offsets.path),
                                           m.local_dim);
  c.catalog = load_catalog(m.resolve(m.catalog.path));
  c.default_fusion_weight = m.default_fusion_weight;
  c.synthetic = m.synthetic;
  if (c.images.item_count() != m.image_count || c.descriptions.item_count() != m.description_count)
    throw StoreError(StoreErrc::shape_mismatch, m.base_dir, "store item counts differ from manifest");
  if (c.catalog.size() != std::max(m.image_count, m.description_count))
    throw StoreError(StoreErrc::bad_catalog, m.resolve(m.catalog.path),
                     "catalog has " + std::to_string(c.catalog.size()) +
                         " entries, stores have " + std::to_string(m.image_count));
  c.validate();
  return c;
}

inline Corpus load_corpus(const std::filesystem::path& manifest_path) {
  return load_corpus(load_manifest(manifest_path));
}

/// Input file set for building a manifest over existing store files.
struct IngestPaths {
  std::filesystem::path image_global, image_local, image_offsets;
  std::filesystem::path description_global, description_local, description_offsets;
  std::filesystem::path catalog;
};

/// Builds a manifest (checksums, counts, dims read from headers) for files that
/// already exist. Paths are stored relative to the manifest directory when possible.
inline StoreManifest build_manifest(const IngestPaths& in, const std::string& corpus_name,
                                    const std::filesystem::path& manifest_path,
                                    double default_fusion_weight = 0.5) {
  namespace fs = std::filesystem;
  fs::path base = manifest_path.parent_path();
  auto rel = [&](const fs::path& p) {
    auto abs = fs::absolute(p);
    auto r = abs.lexically_relative(fs::absolute(base.empty() ? fs::path(".") : base));
    return (r.empty() || *r.begin() == "..") ? abs : r;
  };
  auto file = [&](const fs::path& p) { return StoreFile{rel(p), file_checksum(p)}; };

  StoreManifest m;
  m.corpus_name = corpus_name;
  m.base_dir = base;
  m.image_global = file(in.image_global);
  m.image_local = {file(in.image_local), file(in.image_offsets)};
  m.description_global = file(in.description_global);
  m.description_local = {file(in.description_local), file(in.description_offsets)};
  m.catalog = file(in.catalog);
  m.default_fusion_weight = default_fusion_weight;

  auto ig = load_global_matrix(in.image_global);
  auto dg = load_global_matrix(in.description_global, ig.dim());
  auto il = npy::read_header(in.image_local);
  if (il.shape.size() != 2) throw StoreError(StoreErrc::bad_rank, in.image_local, "expected 2-D");
  m.image_count = ig.item_count();
  m.description_count = dg.item_count();
  m.global_dim = ig.dim();
  m.local_dim = static_cast<std::size_t>(il.shape[1]);
  m.normalized_at_ingest = ig.normalized() && dg.normalized();
  return m;
}

}  // namespace xmodal
