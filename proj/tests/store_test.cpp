#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "oracle.hpp"
#include "xmodal/catalog.hpp"
#include "xmodal/store.hpp"

namespace {

using namespace xmodal;

template <class Fn>
StoreErrc code_of(Fn&& fn) {
  try {
    fn();
  } catch (const StoreError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no StoreError thrown";
  return StoreErrc::io;
}

TEST(EmbeddingMatrix, RowViewsAlias) {
  EmbeddingMatrix m(3, 2, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(m.item_count(), 3u);
  EXPECT_EQ(m.dim(), 2u);
  auto r = row(m, 1);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0], 3);
  EXPECT_EQ(r[1], 4);
  EXPECT_EQ(r.data(), m.values().data() + 2);
  EXPECT_EQ(code_of([&] { (void)m.row(3); }), StoreErrc::out_of_range);
}

TEST(EmbeddingMatrix, ValidatesConstruction) {
  EXPECT_EQ(code_of([] { EmbeddingMatrix(2, 3, {1, 2, 3}); }), StoreErrc::shape_mismatch);
  EXPECT_EQ(code_of([] { EmbeddingMatrix(1, 0, {}); }), StoreErrc::shape_mismatch);
  EXPECT_EQ(code_of([] { EmbeddingMatrix(1, 2, {1, std::numeric_limits<float>::quiet_NaN()}); }),
            StoreErrc::non_finite);
  EXPECT_EQ(code_of([] { EmbeddingMatrix(1, 2, {1, 1}, true); }), StoreErrc::shape_mismatch);
  EXPECT_NO_THROW(EmbeddingMatrix(0, 512, {}));
}

TEST(LocalEmbeddingSet, OffsetsDelimitBlocks) {
  std::vector<float> v(5 * 2);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = float(i);
  LocalEmbeddingSet s(2, {0, 3, 5}, v);
  EXPECT_EQ(s.item_count(), 2u);
  EXPECT_EQ(s.total_rows(), 5u);
  auto b0 = row(s, 0), b1 = row(s, 1);
  EXPECT_EQ(b0.rows, 3u);
  EXPECT_EQ(b1.rows, 2u);
  EXPECT_EQ(b1.row(0)[0], 6.0f);
  EXPECT_EQ(b1.row(1)[1], 9.0f);
  EXPECT_EQ(code_of([&] { (void)s.block(2); }), StoreErrc::out_of_range);
}

TEST(LocalEmbeddingSet, SingleItem) {
  LocalEmbeddingSet s(1, {0, 1}, {0.25f});
  EXPECT_EQ(s.item_count(), 1u);
  EXPECT_EQ(s.block(0).rows, 1u);
}

TEST(LocalEmbeddingSet, RejectsBadOffsets) {
  std::vector<float> v(5 * 2);
  try {
    LocalEmbeddingSet(2, {0, 3, 2}, v);
    FAIL();
  } catch (const StoreError& e) {
    EXPECT_EQ(e.code(), StoreErrc::bad_offsets);
    EXPECT_NE(std::string(e.what()).find("decrease"), std::string::npos);
  }
  EXPECT_EQ(code_of([&] { LocalEmbeddingSet(2, {1, 3, 5}, v); }), StoreErrc::bad_offsets);
  EXPECT_EQ(code_of([&] { LocalEmbeddingSet(2, {0, 3, 3, 5}, v); }), StoreErrc::bad_offsets);
  EXPECT_EQ(code_of([&] { LocalEmbeddingSet(2, {0, 3, 4}, v); }), StoreErrc::bad_offsets);
}

TEST(Normalize, ScalesRowsToUnitLength) {
  auto r = normalize_rows(EmbeddingMatrix(1, 2, {3, 4}));
  EXPECT_NEAR(r.matrix.row(0)[0], 0.6, 1e-7);
  EXPECT_NEAR(r.matrix.row(0)[1], 0.8, 1e-7);
  EXPECT_EQ(r.zero_rows, 0u);
  EXPECT_TRUE(r.matrix.normalized());
}

TEST(Normalize, ZeroRowsStayZeroAndAreCounted) {
  auto r = normalize_rows(EmbeddingMatrix(3, 2, {0, 0, 1, 1, 0, 0}));
  EXPECT_EQ(r.zero_rows, 2u);
  EXPECT_EQ(r.matrix.row(0)[0], 0.0f);
  EXPECT_FALSE(r.matrix.normalized());
}

TEST(Normalize, IdempotentOnUnitRows) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> g;
  std::vector<float> v(50 * 16);
  for (float& x : v) x = g(rng);
  auto once = normalize_rows(EmbeddingMatrix(50, 16, v)).matrix;
  auto twice = normalize_rows(once).matrix;
  for (std::size_t i = 0; i < v.size(); ++i)
    EXPECT_NEAR(once.values()[i], twice.values()[i], 1e-7);
}

TEST(Loaders, GlobalMatrixRoundTrip) {
  oracle::TempDir dir;
  EmbeddingMatrix m(2, 3, {1, 0, 0, 0, 1, 0});
  write_matrix(m, dir / "g.npy");
  auto back = load_global_matrix(dir / "g.npy", 3);
  EXPECT_EQ(std::vector<float>(back.values().begin(), back.values().end()),
            std::vector<float>(m.values().begin(), m.values().end()));
  EXPECT_TRUE(back.normalized());
  EXPECT_EQ(code_of([&] { load_global_matrix(dir / "g.npy", 4); }), StoreErrc::dim_mismatch);
}

TEST(Loaders, GlobalMatrixNeedsRankTwo) {
  oracle::TempDir dir;
  std::vector<float> v{1, 2, 3};
  std::uint64_t shape[1] = {3};
  write_array_file(shape, v, dir / "v.npy");
  EXPECT_EQ(code_of([&] { load_global_matrix(dir / "v.npy"); }), StoreErrc::bad_rank);
}

TEST(Loaders, GlobalMatrixRejectsNonFinite) {
  oracle::TempDir dir;
  std::vector<float> v{1, std::numeric_limits<float>::infinity()};
  std::uint64_t shape[2] = {1, 2};
  write_array_file(shape, v, dir / "v.npy");
  EXPECT_EQ(code_of([&] { load_global_matrix(dir / "v.npy"); }), StoreErrc::non_finite);
}

TEST(Loaders, LocalTensorRoundTrip) {
  oracle::TempDir dir;
  LocalEmbeddingSet s(2, {0, 3, 5}, std::vector<float>(10, 0.5f));
  write_local_set(s, dir / "l.npy", dir / "o.npy");
  auto back = load_local_tensor(dir / "l.npy", dir / "o.npy", 2);
  EXPECT_EQ(back.item_count(), 2u);
  EXPECT_EQ(back.block(0).rows, 3u);
}

TEST(Loaders, LocalTensorOffsetErrorsNameTheOffsetsFile) {
  oracle::TempDir dir;
  std::uint64_t shape[2] = {5, 2};
  write_array_file(shape, std::vector<float>(10, 1.0f), dir / "l.npy");
  std::vector<std::uint64_t> bad{0, 3, 2};
  write_offsets_file(bad, dir / "bad.npy");
  try {
    load_local_tensor(dir / "l.npy", dir / "bad.npy");
    FAIL();
  } catch (const StoreError& e) {
    EXPECT_EQ(e.code(), StoreErrc::bad_offsets);
    EXPECT_EQ(e.path(), dir / "bad.npy");
  }
  std::vector<std::uint64_t> short_by_one{0, 3, 4};
  write_offsets_file(short_by_one, dir / "short.npy");
  EXPECT_EQ(code_of([&] { load_local_tensor(dir / "l.npy", dir / "short.npy"); }),
            StoreErrc::bad_offsets);
}

TEST(Catalog, RoundTrip) {
  oracle::TempDir dir;
  std::vector<CatalogEntry> in{{0, "a", "a red cow", "img/a.png", "https://x/a"},
                               {1, "b", "unicode é \"quoted\"", "img/b.png", "https://x/b"}};
  write_catalog(in, dir / "c.jsonl");
  auto out = load_catalog(dir / "c.jsonl");
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[1].item_id, 1u);
  EXPECT_EQ(out[1].description, in[1].description);
  EXPECT_EQ(to_json(out[0])["image_uri"], "img/a.png");
}

TEST(Catalog, RejectsMalformedLines) {
  oracle::TempDir dir;
  auto write = [&](const std::string& text) {
    std::ofstream(dir / "c.jsonl", std::ios::trunc) << text;
    return code_of([&] { load_catalog(dir / "c.jsonl"); });
  };
  const std::string ok =
      R"({"external_id":"a","description":"d","image_uri":"u","source_url":"s"})";
  EXPECT_EQ(write(ok + "\n{not json}\n"), StoreErrc::bad_catalog);
  EXPECT_EQ(write(R"({"external_id":"a","image_uri":"u","source_url":"s"})"),
            StoreErrc::bad_catalog);
  EXPECT_EQ(write(R"({"external_id":"a","description":"","image_uri":"u","source_url":"s"})"),
            StoreErrc::bad_catalog);
  EXPECT_EQ(write(ok + "\n\n" + ok + "\n"), StoreErrc::bad_catalog);
  std::ofstream(dir / "c.jsonl", std::ios::trunc) << ok << "\n" << ok << "\n\n\n";
  EXPECT_EQ(load_catalog(dir / "c.jsonl").size(), 2u);
}

}  // namespace
