#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xmodal/error.hpp"
#include "xmodal/npy.hpp"

namespace xmodal {

using ItemId = std::size_t;

inline constexpr double unit_norm_tolerance = 1e-4;

/// Non-owning row-major view of a rows x dim block of floats.
struct MatrixView {
  std::span<const float> values;
  std::size_t rows = 0;
  std::size_t dim = 0;

  std::span<const float> row(std::size_t r) const { return values.subspan(r * dim, dim); }
};

inline double l2_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

inline bool all_finite(std::span<const float> v) {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

/// N x D global representations, one row per item. Immutable after construction.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  EmbeddingMatrix(std::size_t item_count, std::size_t dim, std::vector<float> values,
                  bool normalized = false)
      : item_count_(item_count), dim_(dim), values_(std::move(values)), normalized_(normalized) {
    if (dim_ == 0) throw StoreError(StoreErrc::shape_mismatch, "embedding dim must be positive");
    if (values_.size() != item_count_ * dim_)
      throw StoreError(StoreErrc::shape_mismatch,
                       "values length " + std::to_string(values_.size()) + " != " +
                           std::to_string(item_count_) + " x " + std::to_string(dim_));
    if (!all_finite(values_)) throw StoreError(StoreErrc::non_finite, "non-finite embedding value");
    if (normalized_) {
      for (std::size_t i = 0; i < item_count_; ++i)
        if (std::abs(l2_norm(row(i)) - 1.0) > unit_norm_tolerance)
          throw StoreError(StoreErrc::shape_mismatch,
                           "row " + std::to_string(i) + " is not unit norm");
    }
  }

  std::size_t item_count() const noexcept { return item_count_; }
  std::size_t dim() const noexcept { return dim_; }
  bool normalized() const noexcept { return normalized_; }
  std::span<const float> values() const noexcept { return values_; }
  MatrixView view() const noexcept { return {values_, item_count_, dim_}; }

  std::span<const float> row(ItemId id) const {
    if (id >= item_count_)
      throw StoreError(StoreErrc::out_of_range, "item id " + std::to_string(id) +
                                                    " out of range (count " +
                                                    std::to_string(item_count_) + ")");
    return std::span<const float>(values_).subspan(id * dim_, dim_);
  }

 private:
  std::size_t item_count_ = 0;
  std::size_t dim_ = 1;
  std::vector<float> values_;
  bool normalized_ = false;
};

/// Variable-length blocks of local (region / token) vectors, indexed by a
/// prefix-sum offsets array: item i owns rows offsets[i] .. offsets[i+1]-1.
class LocalEmbeddingSet {
 public:
  LocalEmbeddingSet() : offsets_{0} {}

  LocalEmbeddingSet(std::size_t dim, std::vector<std::uint64_t> offsets, std::vector<float> values)
      : dim_(dim), offsets_(std::move(offsets)), values_(std::move(values)) {
    if (dim_ == 0) throw StoreError(StoreErrc::shape_mismatch, "local dim must be positive");
    if (offsets_.empty() || offsets_.front() != 0)
      throw StoreError(StoreErrc::bad_offsets, "offsets must start with 0");
    for (std::size_t i = 1; i < offsets_.size(); ++i) {
      if (offsets_[i] < offsets_[i - 1])
        throw StoreError(StoreErrc::bad_offsets,
                         "offsets decrease at index " + std::to_string(i));
      if (offsets_[i] == offsets_[i - 1])
        throw StoreError(StoreErrc::bad_offsets,
                         "item " + std::to_string(i - 1) + " has no local vectors");
    }
    if (values_.size() != offsets_.back() * dim_)
      throw StoreError(StoreErrc::bad_offsets,
                       "last offset " + std::to_string(offsets_.back()) +
                           " does not match row count " + std::to_string(values_.size() / dim_));
    if (!all_finite(values_)) throw StoreError(StoreErrc::non_finite, "non-finite local value");
  }

  std::size_t item_count() const noexcept { return offsets_.size() - 1; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t total_rows() const noexcept { return offsets_.back(); }
  std::span<const std::uint64_t> offsets() const noexcept { return offsets_; }
  std::span<const float> values() const noexcept { return values_; }

  MatrixView block(ItemId id) const {
    if (id >= item_count())
      throw StoreError(StoreErrc::out_of_range, "item id " + std::to_string(id) +
                                                    " out of range (count " +
                                                    std::to_string(item_count()) + ")");
    return block_unchecked(id);
  }

  MatrixView block_unchecked(ItemId id) const noexcept {
    auto begin = offsets_[id], end = offsets_[id + 1];
    return {std::span<const float>(values_).subspan(begin * dim_, (end - begin) * dim_),
            static_cast<std::size_t>(end - begin), dim_};
  }

 private:
  std::size_t dim_ = 1;
  std::vector<std::uint64_t> offsets_;
  std::vector<float> values_;
};

inline std::span<const float> row(const EmbeddingMatrix& m, ItemId id) { return m.row(id); }
inline MatrixView row(const LocalEmbeddingSet& s, ItemId id) { return s.block(id); }

struct NormalizeResult {
  EmbeddingMatrix matrix;
  std::size_t zero_rows = 0;
};

/// Scales each nonzero row to unit L2 norm. Zero rows stay zero and are tallied.
inline NormalizeResult normalize_rows(const EmbeddingMatrix& m) {
  std::vector<float> out(m.values().begin(), m.values().end());
  std::size_t zero_rows = 0;
  for (std::size_t i = 0; i < m.item_count(); ++i) {
    std::span<float> r(out.data() + i * m.dim(), m.dim());
    double norm = l2_norm(r);
    if (norm == 0.0) {
      ++zero_rows;
      continue;
    }
    for (float& x : r) x = static_cast<float>(x / norm);
  }
  return {EmbeddingMatrix(m.item_count(), m.dim(), std::move(out), zero_rows == 0), zero_rows};
}

inline bool rows_unit_norm(const MatrixView& v) {
  for (std::size_t i = 0; i < v.rows; ++i)
    if (std::abs(l2_norm(v.row(i)) - 1.0) > unit_norm_tolerance) return false;
  return true;
}

inline EmbeddingMatrix load_global_matrix(const std::filesystem::path& path,
                                          std::optional<std::size_t> expected_dim = {}) {
  auto arr = npy::read<float>(path);
  if (arr.shape.size() != 2)
    throw StoreError(StoreErrc::bad_rank, path,
                     "expected a 2-D array, got rank " + std::to_string(arr.shape.size()));
  auto n = static_cast<std::size_t>(arr.shape[0]);
  auto d = static_cast<std::size_t>(arr.shape[1]);
  if (d == 0) throw StoreError(StoreErrc::dim_mismatch, path, "dim must be positive");
  if (expected_dim && *expected_dim != d)
    throw StoreError(StoreErrc::dim_mismatch, path,
                     "dim " + std::to_string(d) + " != expected " + std::to_string(*expected_dim));
  if (!all_finite(arr.values)) throw StoreError(StoreErrc::non_finite, path, "non-finite value");
  bool unit = n > 0 && rows_unit_norm({arr.values, n, d});
  return EmbeddingMatrix(n, d, std::move(arr.values), unit);
}

inline LocalEmbeddingSet load_local_tensor(const std::filesystem::path& path,
                                           const std::filesystem::path& offsets_path,
                                           std::optional<std::size_t> expected_dim = {}) {
  auto arr = npy::read<float>(path);
  if (arr.shape.size() != 2)
    throw StoreError(StoreErrc::bad_rank, path,
                     "expected a 2-D array, got rank " + std::to_string(arr.shape.size()));
  auto d = static_cast<std::size_t>(arr.shape[1]);
  if (d == 0) throw StoreError(StoreErrc::dim_mismatch, path, "dim must be positive");
  if (expected_dim && *expected_dim != d)
    throw StoreError(StoreErrc::dim_mismatch, path,
                     "dim " + std::to_string(d) + " != expected " + std::to_string(*expected_dim));
  if (!all_finite(arr.values)) throw StoreError(StoreErrc::non_finite, path, "non-finite value");

  auto off = npy::read<std::int64_t>(offsets_path);
  if (off.shape.size() != 1)
    throw StoreError(StoreErrc::bad_rank, offsets_path, "offsets must be a 1-D array");
  if (off.values.empty())
    throw StoreError(StoreErrc::bad_offsets, offsets_path, "offsets must contain at least [0]");
  std::vector<std::uint64_t> offsets(off.values.size());
  for (std::size_t i = 0; i < off.values.size(); ++i) {
    if (off.values[i] < 0)
      throw StoreError(StoreErrc::bad_offsets, offsets_path, "negative offset");
    offsets[i] = static_cast<std::uint64_t>(off.values[i]);
  }
  if (offsets.back() != arr.shape[0])
    throw StoreError(StoreErrc::bad_offsets, offsets_path,
                     "last offset " + std::to_string(offsets.back()) + " != row count " +
                         std::to_string(arr.shape[0]) + " of " + path.string());
  try {
    return LocalEmbeddingSet(d, std::move(offsets), std::move(arr.values));
  } catch (const StoreError& e) {
    throw StoreError(e.code(), offsets_path, e.what());
  }
}

/// Writes a float32 array in canonical NPY v1.0 form.
inline void write_array_file(std::span<const std::uint64_t> shape, std::span<const float> values,
                             const std::filesystem::path& path) {
  npy::write<float>(path, shape, values);
}

inline void write_offsets_file(std::span<const std::uint64_t> offsets,
                               const std::filesystem::path& path) {
  std::vector<std::int64_t> v(offsets.begin(), offsets.end());
  std::uint64_t n = v.size();
  npy::write<std::int64_t>(path, std::span(&n, 1), v);
}

inline void write_matrix(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  std::uint64_t shape[2] = {m.item_count(), m.dim()};
  write_array_file(shape, m.values(), path);
}

inline void write_local_set(const LocalEmbeddingSet& s, const std::filesystem::path& path,
                            const std::filesystem::path& offsets_path) {
  std::uint64_t shape[2] = {s.total_rows(), s.dim()};
  write_array_file(shape, s.values(), path);
  write_offsets_file(s.offsets(), offsets_path);
}

}  // namespace xmodal
