#pragma once

// On-disk embedding format and the in-memory labeled dataset model.
//
// Embedding file:  "VLME" | version u32 | rows u64 | dims u64 | rows*dims float32, row-major
// Label file:      "VLML" | version u32 | rows u64 | rows * u32
// Manifest:        JSON, see load_dataset().

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vlmunc/binary_io.hpp"
#include "vlmunc/error.hpp"

namespace vlmunc {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;
inline constexpr std::uint32_t kLabelFormatVersion = 1;
inline constexpr int kManifestVersion = 1;

/// Dense feature matrix, one embedding per row. Stored as float32 on disk,
/// held as float64 in memory. Every value is finite.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  explicit EmbeddingMatrix(RowMatrix values, bool normalized = false)
      : values_(std::move(values)), normalized_(normalized) {
    if (!values_.allFinite()) {
      for (Eigen::Index r = 0; r < values_.rows(); ++r) {
        if (!values_.row(r).allFinite()) {
          throw Error(ErrorCode::NonFiniteValue, "embedding_store",
                      "row " + std::to_string(r) + " has a non-finite value");
        }
      }
    }
  }

  std::size_t rows() const noexcept { return static_cast<std::size_t>(values_.rows()); }
  std::size_t dims() const noexcept { return static_cast<std::size_t>(values_.cols()); }
  bool normalized() const noexcept { return normalized_; }
  const RowMatrix& values() const noexcept { return values_; }

  Eigen::VectorXd row(std::size_t i) const { return values_.row(static_cast<Eigen::Index>(i)).transpose(); }

  EmbeddingMatrix select_rows(std::span<const std::size_t> indices) const {
    RowMatrix out(static_cast<Eigen::Index>(indices.size()), values_.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      out.row(static_cast<Eigen::Index>(i)) = values_.row(static_cast<Eigen::Index>(indices[i]));
    }
    return EmbeddingMatrix(std::move(out), normalized_);
  }

 private:
  RowMatrix values_;
  bool normalized_ = false;
};

struct ClassPartition {
  std::uint32_t class_index = 0;
  std::vector<std::size_t> row_indices;
};

struct PartitionResult {
  std::vector<ClassPartition> partitions;   // ascending class index
  std::vector<std::uint32_t> absent_classes;  // classes with no rows in the split
};

struct LabeledDataset {
  EmbeddingMatrix embeddings;
  std::vector<std::uint32_t> labels;
  std::vector<std::string> class_names;
  std::map<std::string, std::vector<std::size_t>> splits;

  std::size_t num_classes() const noexcept { return class_names.size(); }

  bool has_split(const std::string& name) const { return splits.contains(name); }

  const std::vector<std::size_t>& split(const std::string& name) const {
    auto it = splits.find(name);
    if (it == splits.end()) {
      throw Error(ErrorCode::UnknownSplit, "embedding_store", "no split named \"" + name + "\"");
    }
    return it->second;
  }

  void validate() const {
    if (labels.size() != embeddings.rows()) {
      throw Error(ErrorCode::LabelCountMismatch, "embedding_store",
                  std::to_string(labels.size()) + " labels for " +
                      std::to_string(embeddings.rows()) + " rows");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= class_names.size()) {
        throw Error(ErrorCode::LabelOutOfRange, "embedding_store",
                    "row " + std::to_string(i) + " has label " + std::to_string(labels[i]) +
                        " but only " + std::to_string(class_names.size()) + " classes");
      }
    }
    for (const auto& [name, idx] : splits) {
      std::set<std::size_t> seen;
      for (auto r : idx) {
        if (r >= embeddings.rows()) {
          throw Error(ErrorCode::InvalidManifest, "embedding_store",
                      "split \"" + name + "\" index " + std::to_string(r) + " out of range");
        }
        if (!seen.insert(r).second) {
          throw Error(ErrorCode::InvalidManifest, "embedding_store",
                      "split \"" + name + "\" repeats index " + std::to_string(r));
        }
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Binary files

inline std::vector<char> encode_embeddings(const EmbeddingMatrix& m) {
  io::ByteWriter w;
  w.magic("VLME");
  w.put<std::uint32_t>(kEmbeddingFormatVersion);
  w.put<std::uint64_t>(m.rows());
  w.put<std::uint64_t>(m.dims());
  std::vector<float> payload(m.rows() * m.dims());
  const auto& v = m.values();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.dims(); ++c) {
      payload[r * m.dims() + c] =
          static_cast<float>(v(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
    }
  }
  w.put_span<float>(payload);
  return w.bytes();
}

inline void save_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  io::write_file_atomic(path, encode_embeddings(m), "embedding_store");
}

inline EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  io::ByteReader r(io::read_file(path, "embedding_store"), path.string());
  r.expect_magic("VLME", "embedding_store");
  const auto version = r.get<std::uint32_t>("embedding_store");
  if (version != kEmbeddingFormatVersion) {
    throw Error(ErrorCode::VersionMismatch, "embedding_store",
                path.string() + ": unsupported version " + std::to_string(version));
  }
  const auto rows = r.get<std::uint64_t>("embedding_store");
  const auto dims = r.get<std::uint64_t>("embedding_store");
  if (dims == 0 || r.remaining() != rows * dims * sizeof(float)) {
    throw Error(ErrorCode::DimensionMismatch, "embedding_store",
                path.string() + ": header says " + std::to_string(rows) + "x" +
                    std::to_string(dims) + " but payload has " + std::to_string(r.remaining()) +
                    " bytes");
  }
  std::vector<float> payload(rows * dims);
  r.get_span<float>(payload, "embedding_store");
  RowMatrix values(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dims));
  for (std::size_t i = 0; i < payload.size(); ++i) {
    if (!std::isfinite(payload[i])) {
      throw Error(ErrorCode::NonFiniteValue, "embedding_store",
                  path.string() + ": row " + std::to_string(i / dims) + " has a non-finite value");
    }
    values(static_cast<Eigen::Index>(i / dims), static_cast<Eigen::Index>(i % dims)) = payload[i];
  }
  return EmbeddingMatrix(std::move(values));
}

inline std::vector<char> encode_labels(std::span<const std::uint32_t> labels) {
  io::ByteWriter w;
  w.magic("VLML");
  w.put<std::uint32_t>(kLabelFormatVersion);
  w.put<std::uint64_t>(labels.size());
  w.put_span<std::uint32_t>(labels);
  return w.bytes();
}

inline void save_labels(const std::filesystem::path& path, std::span<const std::uint32_t> labels) {
  io::write_file_atomic(path, encode_labels(labels), "embedding_store");
}

inline std::vector<std::uint32_t> load_labels(const std::filesystem::path& path) {
  io::ByteReader r(io::read_file(path, "embedding_store"), path.string());
  r.expect_magic("VLML", "embedding_store");
  const auto version = r.get<std::uint32_t>("embedding_store");
  if (version != kLabelFormatVersion) {
    throw Error(ErrorCode::VersionMismatch, "embedding_store",
                path.string() + ": unsupported version " + std::to_string(version));
  }
  const auto rows = r.get<std::uint64_t>("embedding_store");
  if (r.remaining() != rows * sizeof(std::uint32_t)) {
    throw Error(ErrorCode::DimensionMismatch, "embedding_store",
                path.string() + ": header says " + std::to_string(rows) + " labels");
  }
  std::vector<std::uint32_t> labels(rows);
  r.get_span<std::uint32_t>(labels, "embedding_store");
  return labels;
}

// ---------------------------------------------------------------------------
// Normalization

/// Scales every row to unit Euclidean norm. Throws ZeroNormRow on an all-zero row.
inline EmbeddingMatrix l2_normalize(const EmbeddingMatrix& m) {
  RowMatrix out = m.values();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double norm = out.row(r).norm();
    if (norm == 0.0) {
      throw Error(ErrorCode::ZeroNormRow, "embedding_store", "row " + std::to_string(r) + " is all zero");
    }
    out.row(r) /= norm;
  }
  return EmbeddingMatrix(std::move(out), true);
}

// ---------------------------------------------------------------------------
// Manifest

namespace detail {

inline std::vector<std::size_t> parse_index_array(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array()) {
    throw Error(ErrorCode::InvalidManifest, "embedding_store", what + " must be an array of row indices");
  }
  std::vector<std::size_t> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number_unsigned()) {
      throw Error(ErrorCode::InvalidManifest, "embedding_store", what + " holds a non-index value");
    }
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

inline nlohmann::json parse_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(io::read_text(path, "embedding_store"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidManifest, "embedding_store", path.string() + ": " + e.what());
  }
}

}  // namespace detail

/// Loads a dataset from its JSON manifest:
///
///   {"version":1, "embeddings":"x.vlme", "labels":"x.vlml", "class_names":[...],
///    "normalize":true, "splits":{"train":[...], "test":[...]}}
///
/// `splits` may instead be {"train_file":"a.json", "test_file":"b.json"}, each file
/// holding a JSON array of row indices. Relative paths resolve against the manifest's
/// directory. Rows are L2-normalized at load when "normalize" is true (the default).
inline LabeledDataset load_dataset_unchecked(const std::filesystem::path& manifest_path);

inline LabeledDataset load_dataset(const std::filesystem::path& manifest_path) {
  try {
    return load_dataset_unchecked(manifest_path);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidManifest, "embedding_store", manifest_path.string() + ": " + e.what());
  }
}

inline LabeledDataset load_dataset_unchecked(const std::filesystem::path& manifest_path) {
  const auto manifest = detail::parse_json(manifest_path);
  const auto base = manifest_path.parent_path();
  auto field = [&](const char* key) -> const nlohmann::json& {
    if (!manifest.contains(key)) {
      throw Error(ErrorCode::InvalidManifest, "embedding_store",
                  manifest_path.string() + ": missing field \"" + key + "\"");
    }
    return manifest.at(key);
  };

  if (field("version").get<int>() != kManifestVersion) {
    throw Error(ErrorCode::VersionMismatch, "embedding_store", manifest_path.string());
  }

  LabeledDataset ds;
  ds.embeddings = load_embeddings(base / field("embeddings").get<std::string>());
  ds.labels = load_labels(base / field("labels").get<std::string>());
  ds.class_names = field("class_names").get<std::vector<std::string>>();

  if (manifest.contains("splits")) {
    const auto& splits = manifest.at("splits");
    for (const auto& [key, value] : splits.items()) {
      constexpr std::string_view suffix = "_file";
      if (key.size() > suffix.size() && key.ends_with(suffix)) {
        const auto name = key.substr(0, key.size() - suffix.size());
        ds.splits[name] =
            detail::parse_index_array(detail::parse_json(base / value.get<std::string>()), key);
      } else {
        ds.splits[key] = detail::parse_index_array(value, "split \"" + key + "\"");
      }
    }
  }

  ds.validate();

  const bool already = manifest.value("normalized", false);
  if (already) {
    ds.embeddings = EmbeddingMatrix(RowMatrix(ds.embeddings.values()), true);
  } else if (manifest.value("normalize", true)) {
    ds.embeddings = l2_normalize(ds.embeddings);
  }
  return ds;
}

/// Writes `<stem>.vlme`, `<stem>.vlml` and the manifest itself. Output bytes are a
/// pure function of the arguments. With `normalize_on_load` the manifest asks the
/// loader to L2-normalize rows; otherwise the payload is loaded as stored.
inline void save_dataset(const LabeledDataset& ds, const std::filesystem::path& manifest_path,
                         bool normalize_on_load = false) {
  if (ds.embeddings.rows() == 0) {
    throw Error(ErrorCode::EmptyDataset, "embedding_store", "refusing to save a dataset with 0 rows");
  }
  ds.validate();
  const auto stem = manifest_path.stem().string();
  const auto base = manifest_path.parent_path();
  const auto emb_name = stem + ".vlme";
  const auto lab_name = stem + ".vlml";
  save_embeddings(base / emb_name, ds.embeddings);
  save_labels(base / lab_name, ds.labels);

  nlohmann::json manifest;
  manifest["version"] = kManifestVersion;
  manifest["embeddings"] = emb_name;
  manifest["labels"] = lab_name;
  manifest["class_names"] = ds.class_names;
  manifest["normalize"] = normalize_on_load;
  manifest["normalized"] = !normalize_on_load && ds.embeddings.normalized();
  nlohmann::json splits = nlohmann::json::object();
  for (const auto& [name, idx] : ds.splits) splits[name] = idx;
  manifest["splits"] = splits;
  io::write_text_atomic(manifest_path, manifest.dump(2) + "\n", "embedding_store");
}

/// Groups the rows of a split by label. Classes without rows in the split are
/// reported in `absent_classes`.
inline PartitionResult partition_by_class(const LabeledDataset& ds, const std::string& split) {
  const auto& rows = ds.split(split);
  std::vector<std::vector<std::size_t>> buckets(ds.num_classes());
  for (auto r : rows) buckets[ds.labels[r]].push_back(r);

  PartitionResult result;
  for (std::uint32_t c = 0; c < buckets.size(); ++c) {
    if (buckets[c].empty()) {
      result.absent_classes.push_back(c);
    } else {
      std::sort(buckets[c].begin(), buckets[c].end());
      result.partitions.push_back({c, std::move(buckets[c])});
    }
  }
  return result;
}

}  // namespace vlmunc
