#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "spacevlm/store.hpp"
#include "test_support.hpp"

using namespace spacevlm;
using spacevlm::testing::TempDir;

namespace {

void expect_code(ErrorCode code, auto&& fn) {
  try {
    fn();
    FAIL() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

std::vector<StoreItem> items_for(std::size_t n) {
  std::vector<StoreItem> items;
  for (std::size_t i = 0; i < n; ++i) {
    items.push_back({"item-" + std::to_string(i), {"label"}, std::nullopt});
  }
  return items;
}

EmbeddingStore random_store(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dim_d(2, 40), count_d(0, 30), nlab(0, 3);
  std::normal_distribution<float> g;
  std::bernoulli_distribution coin;
  const std::size_t dim = dim_d(rng), count = count_d(rng);
  std::vector<StoreItem> items;
  std::vector<float> rows;
  for (std::size_t i = 0; i < count; ++i) {
    StoreItem it{"id/" + std::to_string(rng() % 1000000) + "-" + std::to_string(i), {}, {}};
    for (std::size_t l = nlab(rng); l > 0; --l) it.labels.push_back("labél " + std::to_string(l));
    if (coin(rng)) it.caption = "A photo of \"thing\" #" + std::to_string(i);
    items.push_back(std::move(it));
    for (std::size_t d = 0; d < dim; ++d) rows.push_back(g(rng) + 0.01f);
  }
  return EmbeddingStore::create(dim, std::move(items), std::move(rows));
}

void write_raw(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(StoreHeader, ExactByteLayout) {
  StoreHeader h;
  h.dim = 512;
  h.count = 0x0102030405ull;
  const auto b = h.encode();
  const unsigned char expected[36] = {'S', 'V', 'E', 'C', 1, 0, 0, 0, 0x00, 0x02, 0, 0,
                                      0x05, 0x04, 0x03, 0x02, 0x01, 0, 0, 0};
  EXPECT_EQ(std::memcmp(b.data(), expected, 36), 0);
}

TEST(WriteStore, EmptyStoreIsHeaderOnly) {
  TempDir dir("store");
  const auto s = EmbeddingStore::create(512, {}, {});
  write_store(s, dir / "v.svec", dir / "m.json");
  EXPECT_EQ(std::filesystem::file_size(dir / "v.svec"), 36u);
  const auto back = read_store(dir / "v.svec", dir / "m.json");
  EXPECT_EQ(back.dim(), 512u);
  EXPECT_EQ(back.size(), 0u);
}

TEST(WriteStore, TwoByTwoRoundTrip) {
  TempDir dir("store");
  const auto s = EmbeddingStore::create(2, items_for(2), {1.f, 0.f, 0.f, 1.f});
  write_store(s, dir / "v.svec", dir / "m.json");
  EXPECT_EQ(std::filesystem::file_size(dir / "v.svec"), 36u + 16u);
  const auto back = read_store(dir / "v.svec", dir / "m.json");
  EXPECT_EQ(back.items(), s.items());
  EXPECT_TRUE(std::equal(back.data().begin(), back.data().end(), s.data().begin()));
}

TEST(WriteStore, DuplicateIdsRejectedBeforeWrite) {
  TempDir dir("store");
  std::vector<StoreItem> items{{"a", {}, {}}, {"a", {}, {}}};
  expect_code(ErrorCode::DuplicateId, [&] {
    write_store(EmbeddingStore::create(2, items, {1.f, 0.f, 0.f, 1.f}), dir / "v.svec",
                dir / "m.json");
  });
  EXPECT_FALSE(std::filesystem::exists(dir / "v.svec"));
  EXPECT_FALSE(std::filesystem::exists(dir / "m.json"));
}

TEST(ReadStore, LoadTimeNormalization) {
  TempDir dir("store");
  // Build the file by hand so the row is stored un-normalized.
  StoreHeader h;
  h.dim = 2;
  h.count = 1;
  const auto hb = h.encode();
  std::string bytes(reinterpret_cast<const char*>(hb.data()), hb.size());
  const float row[2] = {3.f, 4.f};
  bytes.append(reinterpret_cast<const char*>(row), sizeof row);
  write_raw(dir / "v.svec", bytes);
  write_raw(dir / "m.json",
            R"({"dim":2,"count":1,"items":[{"id":"x","labels":[],"caption":null}]})");
  const auto s = read_store(dir / "v.svec", dir / "m.json");
  EXPECT_FLOAT_EQ(s.row(0)[0], 0.6f);
  EXPECT_FLOAT_EQ(s.row(0)[1], 0.8f);
}

TEST(ReadStore, RejectsCorruptFiles) {
  TempDir dir("store");
  const auto s = EmbeddingStore::create(2, items_for(2), {1.f, 0.f, 0.f, 1.f});
  write_store(s, dir / "v.svec", dir / "m.json");
  const std::string good = read_file(dir / "v.svec");

  std::string bad = good;
  bad.replace(0, 4, "XXXX");
  write_raw(dir / "bad.svec", bad);
  expect_code(ErrorCode::BadMagic, [&] { read_store(dir / "bad.svec", dir / "m.json"); });

  bad = good;
  bad[4] = 2;
  write_raw(dir / "bad.svec", bad);
  expect_code(ErrorCode::VersionUnsupported, [&] { read_store(dir / "bad.svec", dir / "m.json"); });

  write_raw(dir / "bad.svec", good.substr(0, good.size() - 4));
  expect_code(ErrorCode::LengthMismatch, [&] { read_store(dir / "bad.svec", dir / "m.json"); });

  write_raw(dir / "bad.svec", good + "pad!");
  expect_code(ErrorCode::LengthMismatch, [&] { read_store(dir / "bad.svec", dir / "m.json"); });

  write_raw(dir / "bad.svec", good.substr(0, 20));
  expect_code(ErrorCode::LengthMismatch, [&] { read_store(dir / "bad.svec", dir / "m.json"); });

  write_raw(dir / "m2.json", R"({"dim":2,"count":3,"items":[]})");
  expect_code(ErrorCode::ManifestMismatch, [&] { read_store(dir / "v.svec", dir / "m2.json"); });
  write_raw(dir / "m2.json", "{not json");
  expect_code(ErrorCode::ManifestMismatch, [&] { read_store(dir / "v.svec", dir / "m2.json"); });

  bad = good;
  std::memset(bad.data() + kStoreHeaderBytes, 0, 8);
  write_raw(dir / "bad.svec", bad);
  expect_code(ErrorCode::ZeroNormRow, [&] { read_store(dir / "bad.svec", dir / "m.json"); });

  expect_code(ErrorCode::IoFailure, [&] { read_store(dir / "missing.svec", dir / "m.json"); });
}

TEST(GetVector, KnownAndUnknownIds) {
  const auto s = EmbeddingStore::create(2, items_for(2), {1.f, 0.f, 0.f, 1.f});
  const auto v = get_vector(s, "item-1");
  EXPECT_EQ(v.vec(), (std::vector<double>{0.0, 1.0}));
  EXPECT_EQ(get_vector(s, "item-1"), v);
  expect_code(ErrorCode::UnknownId, [&] { get_vector(s, "nope"); });
}

TEST(StoreProperty, RandomRoundTripIsExact) {
  TempDir dir("store");
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 25; ++trial) {
    const auto s = random_store(rng);
    write_store(s, dir / "v.svec", dir / "m.json");
    const std::string manifest = read_file(dir / "m.json");
    const auto back = read_store(dir / "v.svec", dir / "m.json");
    ASSERT_EQ(back.dim(), s.dim());
    ASSERT_EQ(back.items(), s.items());
    EXPECT_EQ(std::memcmp(back.data().data(), s.data().data(), s.data().size_bytes()), 0);
    // Re-writing the loaded store reproduces both files byte for byte.
    write_store(back, dir / "v2.svec", dir / "m2.json");
    EXPECT_EQ(read_file(dir / "m2.json"), manifest);
    EXPECT_EQ(read_file(dir / "v2.svec"), read_file(dir / "v.svec"));
    for (std::size_t i = 0; i < back.size(); ++i) {
      EXPECT_NEAR(detail::norm(back.row(i)), 1.0, 1e-4);
    }
  }
}
