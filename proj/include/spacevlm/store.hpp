#pragma once

// Immutable embedding collections and their on-disk form.
//
// Vector file (little-endian):
//   "SVEC" | u32 version = 1 | u32 dim | u64 count | 16 zero bytes | count*dim f32
// Manifest: UTF-8 JSON {"dim", "count", "items": [{"id", "labels", "caption"}]}.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "spacevlm/atomic_file.hpp"
#include "spacevlm/error.hpp"
#include "spacevlm/sphere.hpp"

namespace spacevlm {

inline constexpr std::array<char, 4> kStoreMagic{'S', 'V', 'E', 'C'};
inline constexpr std::uint32_t kStoreVersion = 1;
inline constexpr std::size_t kStoreHeaderBytes = 36;
/// Rows whose norm is already this close to one are kept bit-for-bit on load.
inline constexpr double kRowUnitTolerance = 1e-6;

struct StoreItem {
  std::string id;
  std::vector<std::string> labels;
  std::optional<std::string> caption;

  friend bool operator==(const StoreItem&, const StoreItem&) = default;
};

struct StoreHeader {
  std::uint32_t version = kStoreVersion;
  std::uint32_t dim = 0;
  std::uint64_t count = 0;

  std::array<unsigned char, kStoreHeaderBytes> encode() const {
    std::array<unsigned char, kStoreHeaderBytes> out{};
    std::memcpy(out.data(), kStoreMagic.data(), 4);
    put_le(out.data() + 4, version, 4);
    put_le(out.data() + 8, dim, 4);
    put_le(out.data() + 12, count, 8);
    return out;
  }

  static StoreHeader decode(std::span<const unsigned char> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kStoreMagic.data(), 4) != 0) {
      throw Error(ErrorCode::BadMagic, "vector file does not start with SVEC");
    }
    if (bytes.size() < kStoreHeaderBytes) {
      throw Error(ErrorCode::LengthMismatch, "truncated header");
    }
    StoreHeader h;
    h.version = static_cast<std::uint32_t>(get_le(bytes.data() + 4, 4));
    if (h.version != kStoreVersion) {
      throw Error(ErrorCode::VersionUnsupported, "version " + std::to_string(h.version));
    }
    h.dim = static_cast<std::uint32_t>(get_le(bytes.data() + 8, 4));
    h.count = get_le(bytes.data() + 12, 8);
    for (std::size_t i = 20; i < kStoreHeaderBytes; ++i) {
      if (bytes[i] != 0) throw Error(ErrorCode::BadMagic, "reserved header bytes are not zero");
    }
    return h;
  }

 private:
  static void put_le(unsigned char* p, std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
  }
  static std::uint64_t get_le(const unsigned char* p, int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
};

class EmbeddingStore {
 public:
  /// Validates ids, re-normalizes rows, and freezes the collection.
  static EmbeddingStore create(std::size_t dim, std::vector<StoreItem> items,
                               std::vector<float> rows) {
    if (dim < 2) throw Error(ErrorCode::InvalidArgument, "store dim must be >= 2");
    if (rows.size() != items.size() * dim) {
      throw Error(ErrorCode::LengthMismatch, "rows do not match items x dim");
    }
    EmbeddingStore s;
    s.dim_ = dim;
    s.items_ = std::move(items);
    s.rows_ = std::move(rows);
    s.index_.reserve(s.items_.size());
    for (std::size_t i = 0; i < s.items_.size(); ++i) {
      if (!s.index_.emplace(s.items_[i].id, i).second) {
        throw Error(ErrorCode::DuplicateId, "id '" + s.items_[i].id + "'");
      }
    }
    for (std::size_t i = 0; i < s.items_.size(); ++i) s.normalize_row(i);
    return s;
  }

  static EmbeddingStore from_vectors(std::vector<StoreItem> items,
                                     const std::vector<UnitVector>& vectors) {
    if (vectors.empty()) throw Error(ErrorCode::InvalidArgument, "dim unknown for empty input");
    const std::size_t dim = vectors.front().dim();
    std::vector<float> rows;
    rows.reserve(vectors.size() * dim);
    for (const auto& v : vectors) {
      detail::require_same_dim(v.dim(), dim);
      for (double x : v.vec()) rows.push_back(static_cast<float>(x));
    }
    return create(dim, std::move(items), std::move(rows));
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }

  const std::vector<StoreItem>& items() const noexcept { return items_; }
  const StoreItem& item(std::size_t i) const { return items_.at(i); }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(rows_).subspan(i * dim_, dim_);
  }
  std::span<const float> data() const noexcept { return rows_; }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index_of(const std::string& id) const {
    if (auto i = find(id)) return *i;
    throw Error(ErrorCode::UnknownId, "id '" + id + "'");
  }

  UnitVector get_vector(const std::string& id) const {
    return UnitVector::normalize(row(index_of(id)));
  }

 private:
  EmbeddingStore() = default;

  void normalize_row(std::size_t i) {
    std::span<float> r(rows_.data() + i * dim_, dim_);
    const double n = detail::norm(std::span<const float>(r));
    if (!(n > kNearZeroNorm)) {
      throw Error(ErrorCode::ZeroNormRow, "row " + std::to_string(i) + " ('" + items_[i].id + "')");
    }
    if (std::abs(n - 1.0) <= kRowUnitTolerance) return;
    for (auto& x : r) x = static_cast<float>(static_cast<double>(x) / n);
  }

  std::size_t dim_ = 0;
  std::vector<StoreItem> items_;
  std::vector<float> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline nlohmann::ordered_json manifest_json(const EmbeddingStore& store) {
  nlohmann::ordered_json m;
  m["dim"] = store.dim();
  m["count"] = store.size();
  auto items = nlohmann::ordered_json::array();
  for (const auto& it : store.items()) {
    nlohmann::ordered_json j;
    j["id"] = it.id;
    j["labels"] = it.labels;
    j["caption"] = it.caption ? nlohmann::ordered_json(*it.caption) : nlohmann::ordered_json();
    items.push_back(std::move(j));
  }
  m["items"] = std::move(items);
  return m;
}

inline std::string manifest_text(const EmbeddingStore& store) {
  return manifest_json(store).dump(2) + "\n";
}

inline std::string encode_vectors(const EmbeddingStore& store) {
  StoreHeader h;
  h.dim = static_cast<std::uint32_t>(store.dim());
  h.count = store.size();
  const auto header = h.encode();
  const auto rows = store.data();
  std::string out(kStoreHeaderBytes + rows.size() * 4, '\0');
  std::memcpy(out.data(), header.data(), header.size());
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data() + kStoreHeaderBytes, rows.data(), rows.size() * 4);
  } else {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(rows[i]);
      for (int b = 0; b < 4; ++b) {
        out[kStoreHeaderBytes + i * 4 + b] = static_cast<char>(bits >> (8 * b));
      }
    }
  }
  return out;
}

inline void write_store(const EmbeddingStore& store, const std::filesystem::path& vector_path,
                        const std::filesystem::path& manifest_path) {
  if (store.dim() > UINT32_MAX) throw Error(ErrorCode::InvalidArgument, "dim too large");
  const std::string manifest = manifest_text(store);
  write_file_atomic(vector_path, encode_vectors(store));
  write_file_atomic(manifest_path, manifest);
}

namespace detail {

inline std::vector<StoreItem> parse_manifest(const std::filesystem::path& path,
                                             const StoreHeader& header) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ManifestMismatch, "unparsable manifest: " + std::string(e.what()));
  }
  try {
    if (m.at("dim").get<std::uint64_t>() != header.dim ||
        m.at("count").get<std::uint64_t>() != header.count) {
      throw Error(ErrorCode::ManifestMismatch, "manifest dim/count disagree with vector file");
    }
    const auto& arr = m.at("items");
    if (!arr.is_array() || arr.size() != header.count) {
      throw Error(ErrorCode::ManifestMismatch, "manifest item count disagrees with header");
    }
    std::vector<StoreItem> items;
    items.reserve(arr.size());
    for (const auto& j : arr) {
      StoreItem it;
      it.id = j.at("id").get<std::string>();
      it.labels = j.at("labels").get<std::vector<std::string>>();
      if (const auto& c = j.at("caption"); !c.is_null()) it.caption = c.get<std::string>();
      items.push_back(std::move(it));
    }
    return items;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ManifestMismatch, std::string("bad manifest field: ") + e.what());
  }
}

}  // namespace detail

inline EmbeddingStore read_store(const std::filesystem::path& vector_path,
                                 const std::filesystem::path& manifest_path) {
  std::ifstream in(vector_path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + vector_path.string());
  std::error_code ec;
  const std::uintmax_t file_size = std::filesystem::file_size(vector_path, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot size " + vector_path.string());

  std::array<unsigned char, kStoreHeaderBytes> hb{};
  in.read(reinterpret_cast<char*>(hb.data()), static_cast<std::streamsize>(
                                                  std::min<std::uintmax_t>(file_size, hb.size())));
  const StoreHeader header =
      StoreHeader::decode(std::span<const unsigned char>(hb.data(), std::min<std::size_t>(
                                                                        file_size, hb.size())));
  if (header.dim < 2) throw Error(ErrorCode::ManifestMismatch, "dim must be >= 2");

  const std::uint64_t payload = file_size - kStoreHeaderBytes;
  if (header.count > payload / 4 / header.dim + 1 || header.count * header.dim * 4 != payload) {
    throw Error(ErrorCode::LengthMismatch, "payload is " + std::to_string(payload) +
                                               " bytes for count " + std::to_string(header.count) +
                                               " x dim " + std::to_string(header.dim));
  }

  auto items = detail::parse_manifest(manifest_path, header);

  std::vector<float> rows(header.count * header.dim);
  in.read(reinterpret_cast<char*>(rows.data()), static_cast<std::streamsize>(payload));
  if (!in) throw Error(ErrorCode::IoFailure, "short read from " + vector_path.string());
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& x : rows) {
      auto bits = std::bit_cast<std::uint32_t>(x);
      bits = (bits >> 24) | ((bits >> 8) & 0xff00u) | ((bits << 8) & 0xff0000u) | (bits << 24);
      x = std::bit_cast<float>(bits);
    }
  }
  return EmbeddingStore::create(header.dim, std::move(items), std::move(rows));
}

inline UnitVector get_vector(const EmbeddingStore& store, const std::string& id) {
  return store.get_vector(id);
}

}  // namespace spacevlm
