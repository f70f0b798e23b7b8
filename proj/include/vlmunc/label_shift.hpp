#pragma once

// Coarse-to-fine label shift: each query (test-time) class borrows the K most
// text-similar dictionary classes and gets one Gaussian fit on their pooled rows.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "vlmunc/binary_io.hpp"
#include "vlmunc/embedding_store.hpp"
#include "vlmunc/error.hpp"
#include "vlmunc/gaussian_dict.hpp"
#include "vlmunc/projector.hpp"
#include "vlmunc/scorer.hpp"

namespace vlmunc {

struct SuperclassMap {
  std::size_t k = 1;
  std::size_t n_retrieval = 0;
  std::size_t n_test = 0;
  std::map<std::uint32_t, std::vector<std::uint32_t>> map;  // query class -> dictionary classes
};

/// round(n_retrieval / n_test) with ties to even, never below 1.
inline std::size_t select_k(std::size_t n_retrieval, std::size_t n_test) {
  if (n_retrieval == 0 || n_test == 0) {
    throw Error(ErrorCode::ZeroCount, "label_shift", "class counts must be positive");
  }
  std::size_t q = n_retrieval / n_test;
  const std::size_t twice_rem = 2 * (n_retrieval % n_test);
  if (twice_rem > n_test || (twice_rem == n_test && q % 2 == 1)) ++q;
  return std::max<std::size_t>(q, 1);
}

/// For each query class (row of `query_text`), the K dictionary classes with the
/// highest text cosine similarity, best first, lowest index winning ties.
inline SuperclassMap build_superclass_map(const EmbeddingMatrix& query_text, const EmbeddingMatrix& dict_text,
                                          std::optional<std::size_t> k_override = std::nullopt) {
  if (query_text.dims() != dict_text.dims()) {
    throw Error(ErrorCode::DimensionMismatch, "label_shift",
                "query text dims " + std::to_string(query_text.dims()) + " != dictionary text dims " +
                    std::to_string(dict_text.dims()));
  }
  SuperclassMap out;
  out.n_retrieval = dict_text.rows();
  out.n_test = query_text.rows();
  out.k = k_override ? *k_override : select_k(out.n_retrieval, out.n_test);
  if (out.k == 0 || out.k > out.n_retrieval) {
    throw Error(ErrorCode::KTooLarge, "label_shift",
                "K=" + std::to_string(out.k) + " with " + std::to_string(out.n_retrieval) + " dictionary classes");
  }
  const TextBank queries(query_text);
  const TextBank keys(dict_text);
  const Eigen::MatrixXd sims = queries.rows() * keys.rows().transpose();
  for (Eigen::Index q = 0; q < sims.rows(); ++q) {
    std::vector<std::uint32_t> order(out.n_retrieval);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return sims(q, a) > sims(q, b); });
    order.resize(out.k);
    out.map[static_cast<std::uint32_t>(q)] = std::move(order);
  }
  return out;
}

/// One Gaussian per query class, fit on the union of the train rows of its
/// retrieved dictionary classes (row order canonicalized, so the result does not
/// depend on the order of the retrieved list).
inline GaussianDictionary build_superclass_dictionary(const SuperclassMap& map, const LabeledDataset& ds,
                                                      std::shared_ptr<const PcaModel> pca, CovarianceKind kind,
                                                      double ridge_epsilon = kDefaultRidgeEpsilon) {
  const auto parts = partition_by_class(ds, "train");
  std::map<std::uint32_t, const std::vector<std::size_t>*> rows_of;
  for (const auto& p : parts.partitions) rows_of[p.class_index] = &p.row_indices;

  GaussianDictionary dict(kind, pca);
  for (const auto& [query, retrieved] : map.map) {
    std::vector<std::size_t> pooled;
    for (auto c : retrieved) {
      auto it = rows_of.find(c);
      if (it == rows_of.end()) {
        throw Error(ErrorCode::EmptyPool, "label_shift",
                    "dictionary class " + std::to_string(c) + " (retrieved for query class " + std::to_string(query) +
                        ") has no training rows");
      }
      pooled.insert(pooled.end(), it->second->begin(), it->second->end());
    }
    std::sort(pooled.begin(), pooled.end());
    pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());
    if (pooled.size() < 2) {
      throw Error(ErrorCode::EmptyPool, "label_shift",
                  "query class " + std::to_string(query) + " pools fewer than 2 training rows");
    }
    dict.insert(query, fit_class_gaussian(project(*pca, ds.embeddings.select_rows(pooled)), kind, ridge_epsilon));
  }
  dict.provenance["covariance_kind"] = to_string(kind);
  dict.provenance["label_shift_k"] = map.k;
  dict.provenance["ridge_epsilon"] = ridge_epsilon;
  detail::record_ridges(dict);
  return dict;
}

// ---------------------------------------------------------------------------
// JSON: {"k": K, "map": {"<query_idx>": [dict indices]}, "n_retrieval": N, "n_test": M}

inline nlohmann::json superclass_map_to_json(const SuperclassMap& m) {
  nlohmann::json j;
  j["k"] = m.k;
  j["n_retrieval"] = m.n_retrieval;
  j["n_test"] = m.n_test;
  nlohmann::json entries = nlohmann::json::object();
  for (const auto& [q, list] : m.map) entries[std::to_string(q)] = list;
  j["map"] = entries;
  return j;
}

inline SuperclassMap superclass_map_from_json(const nlohmann::json& j) {
  try {
    SuperclassMap m;
    m.k = j.at("k").get<std::size_t>();
    for (const auto& [key, list] : j.at("map").items()) {
      auto classes = list.get<std::vector<std::uint32_t>>();
      if (classes.size() != m.k) {
        throw Error(ErrorCode::InvalidManifest, "label_shift",
                    "query class " + key + " lists " + std::to_string(classes.size()) + " classes, expected K=" +
                        std::to_string(m.k));
      }
      m.map[static_cast<std::uint32_t>(std::stoul(key))] = std::move(classes);
    }
    m.n_test = j.value("n_test", m.map.size());
    m.n_retrieval = j.value("n_retrieval", std::size_t{0});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidManifest, "label_shift", e.what());
  } catch (const std::logic_error& e) {  // non-numeric class key from stoul
    throw Error(ErrorCode::InvalidManifest, "label_shift", std::string("bad class key: ") + e.what());
  }
}

inline void save_superclass_map(const std::filesystem::path& path, const SuperclassMap& m) {
  io::write_text_atomic(path, superclass_map_to_json(m).dump(2) + "\n", "label_shift");
}

inline SuperclassMap load_superclass_map(const std::filesystem::path& path) {
  try {
    return superclass_map_from_json(nlohmann::json::parse(io::read_text(path, "label_shift")));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidManifest, "label_shift", path.string() + ": " + e.what());
  }
}

}  // namespace vlmunc
