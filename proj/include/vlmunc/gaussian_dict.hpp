#pragma once

// Per-class multivariate Gaussians over PCA-projected features.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "vlmunc/binary_io.hpp"
#include "vlmunc/embedding_store.hpp"
#include "vlmunc/error.hpp"
#include "vlmunc/parallel.hpp"
#include "vlmunc/projector.hpp"

namespace vlmunc {

enum class CovarianceKind : std::uint8_t { Full = 0, Diagonal = 1 };

inline std::string to_string(CovarianceKind kind) { return kind == CovarianceKind::Full ? "full" : "diag"; }

inline CovarianceKind parse_covariance_kind(const std::string& s) {
  if (s == "full") return CovarianceKind::Full;
  if (s == "diag" || s == "diagonal") return CovarianceKind::Diagonal;
  throw Error(ErrorCode::InvalidArgument, "gaussian_dict", "unknown covariance kind \"" + s + "\"");
}

inline constexpr double kDefaultRidgeEpsilon = 1e-6;
inline constexpr double kVarianceFloor = 1e-10;
inline constexpr std::uint32_t kDictionaryFormatVersion = 1;

class ClassGaussian {
 public:
  /// Full Gaussian from an explicit covariance. The covariance must already be
  /// positive definite; no ridge is added.
  static ClassGaussian full(Eigen::VectorXd mean, Eigen::MatrixXd covariance, std::size_t sample_count,
                            double ridge = 0.0) {
    ClassGaussian g;
    g.kind_ = CovarianceKind::Full;
    g.mean_ = std::move(mean);
    g.covariance_ = std::move(covariance);
    g.sample_count_ = sample_count;
    g.ridge_ = ridge;
    if (!g.factorize()) {
      throw Error(ErrorCode::DegenerateInput, "gaussian_dict", "covariance is not positive definite");
    }
    return g;
  }

  static ClassGaussian diagonal(Eigen::VectorXd mean, Eigen::VectorXd variances, std::size_t sample_count) {
    if ((variances.array() < kVarianceFloor).any()) {
      throw Error(ErrorCode::DegenerateInput, "gaussian_dict", "variance below floor");
    }
    ClassGaussian g;
    g.kind_ = CovarianceKind::Diagonal;
    g.mean_ = std::move(mean);
    g.variances_ = std::move(variances);
    g.sample_count_ = sample_count;
    g.log_variances_ = g.variances_.array().log();
    g.log_det_ = g.log_variances_.sum();
    return g;
  }

  CovarianceKind kind() const noexcept { return kind_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(mean_.size()); }
  const Eigen::VectorXd& mean() const noexcept { return mean_; }
  /// Full covariance (Full kind) or diag(variances) (Diagonal kind).
  Eigen::MatrixXd covariance() const {
    return kind_ == CovarianceKind::Full ? covariance_ : Eigen::MatrixXd(variances_.asDiagonal());
  }
  const Eigen::MatrixXd& full_covariance() const noexcept { return covariance_; }
  const Eigen::VectorXd& variances() const noexcept { return variances_; }
  double log_det() const noexcept { return log_det_; }
  double ridge() const noexcept { return ridge_; }
  std::size_t sample_count() const noexcept { return sample_count_; }

  /// -1/2 [k log(2 pi) + log|Sigma| + (z-mu)^T Sigma^{-1} (z-mu)], via the cached factor.
  double log_pdf(const Eigen::VectorXd& z) const {
    if (z.size() != mean_.size()) {
      throw Error(ErrorCode::DimensionMismatch, "gaussian_dict",
                  "query length " + std::to_string(z.size()) + " != " + std::to_string(mean_.size()));
    }
    const Eigen::VectorXd diff = z - mean_;
    double quad = 0.0;
    if (kind_ == CovarianceKind::Full) {
      quad = lower_.triangularView<Eigen::Lower>().solve(diff).squaredNorm();
    } else {
      quad = (diff.array().square() / variances_.array()).sum();
    }
    const double k = static_cast<double>(mean_.size());
    return -0.5 * (k * std::log(2.0 * std::numbers::pi) + log_det_ + quad);
  }

 private:
  bool factorize() {
    Eigen::LLT<Eigen::MatrixXd> llt(covariance_);
    if (llt.info() != Eigen::Success) return false;
    lower_ = llt.matrixL();
    const auto diag = lower_.diagonal();
    if (!(diag.array() > 0.0).all() || !diag.allFinite()) return false;
    log_det_ = 2.0 * diag.array().log().sum();
    return std::isfinite(log_det_);
  }

  friend ClassGaussian fit_class_gaussian(const EmbeddingMatrix&, CovarianceKind, double);

  CovarianceKind kind_ = CovarianceKind::Full;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd covariance_;  // Full only
  Eigen::MatrixXd lower_;       // Full only: Cholesky factor
  Eigen::VectorXd variances_;   // Diagonal only
  Eigen::VectorXd log_variances_;
  double log_det_ = 0.0;
  double ridge_ = 0.0;
  std::size_t sample_count_ = 0;
};

/// Sample mean and unbiased covariance of projected rows. A Full covariance gets a
/// ridge of eps * trace/k on its diagonal when rows <= k or the Cholesky factor
/// fails; eps grows by 10x until the factor succeeds. Diagonal variances are
/// clamped to kVarianceFloor.
inline ClassGaussian fit_class_gaussian(const EmbeddingMatrix& projected_rows, CovarianceKind kind,
                                        double ridge_epsilon = kDefaultRidgeEpsilon) {
  const auto n = projected_rows.rows();
  if (n < 2) {
    throw Error(ErrorCode::TooFewSamples, "gaussian_dict",
                "class Gaussian needs at least 2 rows, got " + std::to_string(n));
  }
  const auto& x = projected_rows.values();
  Eigen::VectorXd mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();

  if (kind == CovarianceKind::Diagonal) {
    Eigen::VectorXd var = centered.colwise().squaredNorm().transpose() / static_cast<double>(n - 1);
    return ClassGaussian::diagonal(std::move(mean), var.cwiseMax(kVarianceFloor), n);
  }

  const Eigen::MatrixXd cov = detail::sample_covariance(centered);
  const auto k = static_cast<double>(cov.rows());
  ClassGaussian g;
  g.kind_ = CovarianceKind::Full;
  g.mean_ = std::move(mean);
  g.sample_count_ = n;

  if (n > projected_rows.dims()) {
    g.covariance_ = cov;
    if (g.factorize()) return g;
  }
  const double scale = std::max(cov.trace() / k, kVarianceFloor);
  double eps = ridge_epsilon;
  for (int attempt = 0; attempt < 40; ++attempt, eps *= 10.0) {
    g.ridge_ = eps * scale;
    g.covariance_ = cov;
    g.covariance_.diagonal().array() += g.ridge_;
    if (g.factorize()) return g;
  }
  throw Error(ErrorCode::DegenerateInput, "gaussian_dict", "covariance factorization failed after ridge escalation");
}

// ---------------------------------------------------------------------------

enum class SubsampleStrategy { Random, First };

inline SubsampleStrategy parse_subsample_strategy(const std::string& s) {
  if (s == "random") return SubsampleStrategy::Random;
  if (s == "first") return SubsampleStrategy::First;
  throw Error(ErrorCode::InvalidArgument, "gaussian_dict", "unknown subsample strategy \"" + s + "\"");
}

/// Picks at most `max_rows` of `rows` (ascending). Random picks depend only on
/// (seed, class_index), so each class draws independently of the others.
inline std::vector<std::size_t> subsample_rows(std::vector<std::size_t> rows, std::optional<std::size_t> max_rows,
                                               std::uint64_t seed, std::uint32_t class_index,
                                               SubsampleStrategy strategy) {
  if (!max_rows || rows.size() <= *max_rows) return rows;
  if (strategy == SubsampleStrategy::Random) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), class_index};
    std::mt19937_64 rng(seq);
    std::shuffle(rows.begin(), rows.end(), rng);
  }
  rows.resize(*max_rows);
  std::sort(rows.begin(), rows.end());
  return rows;
}

class GaussianDictionary {
 public:
  GaussianDictionary() = default;
  GaussianDictionary(CovarianceKind kind, std::shared_ptr<const PcaModel> pca)
      : kind_(kind), pca_(std::move(pca)) {}

  CovarianceKind kind() const noexcept { return kind_; }
  std::size_t dim() const noexcept { return pca_ ? pca_->output_dim() : 0; }
  const PcaModel& pca() const { return *pca_; }
  std::shared_ptr<const PcaModel> pca_ptr() const { return pca_; }

  const std::map<std::uint32_t, ClassGaussian>& entries() const noexcept { return entries_; }
  bool contains(std::uint32_t c) const { return entries_.contains(c); }
  std::size_t size() const noexcept { return entries_.size(); }

  const ClassGaussian& at(std::uint32_t c) const {
    auto it = entries_.find(c);
    if (it == entries_.end()) {
      throw Error(ErrorCode::UnknownClass, "gaussian_dict", "class " + std::to_string(c) + " is not in the dictionary");
    }
    return it->second;
  }

  void insert(std::uint32_t c, ClassGaussian g) {
    if (g.kind() != kind_ || g.dim() != dim()) {
      throw Error(ErrorCode::DimensionMismatch, "gaussian_dict", "entry kind/dim differs from dictionary");
    }
    entries_.insert_or_assign(c, std::move(g));
  }

  /// Classes skipped at build time for having fewer than 2 samples.
  std::vector<std::uint32_t> excluded_classes;
  /// Build parameters, input hashes and per-class ridge values.
  nlohmann::json provenance = nlohmann::json::object();

 private:
  CovarianceKind kind_ = CovarianceKind::Full;
  std::shared_ptr<const PcaModel> pca_;
  std::map<std::uint32_t, ClassGaussian> entries_;
};

struct DictionaryBuildOptions {
  CovarianceKind kind = CovarianceKind::Full;
  std::optional<std::size_t> max_per_class;
  std::uint64_t seed = 0;
  SubsampleStrategy subsample = SubsampleStrategy::Random;
  double ridge_epsilon = kDefaultRidgeEpsilon;
};

namespace detail {

inline void record_ridges(GaussianDictionary& dict) {
  nlohmann::json ridges = nlohmann::json::object();
  for (const auto& [c, g] : dict.entries()) {
    if (g.ridge() > 0.0) ridges[std::to_string(c)] = g.ridge();
  }
  dict.provenance["ridges"] = ridges;
  dict.provenance["excluded_classes"] = dict.excluded_classes;
}

}  // namespace detail

/// One Gaussian per class of the train split, fit on projected (optionally
/// subsampled) features. Classes with fewer than 2 samples are excluded.
inline GaussianDictionary build_dictionary(const LabeledDataset& ds, std::shared_ptr<const PcaModel> pca,
                                           const DictionaryBuildOptions& options) {
  if (!ds.has_split("train") || ds.split("train").empty()) {
    throw Error(ErrorCode::EmptyTrainSplit, "gaussian_dict", "dataset has no rows in split \"train\"");
  }
  const auto parts = partition_by_class(ds, "train");

  std::vector<std::vector<std::size_t>> chosen(parts.partitions.size());
  for (std::size_t i = 0; i < parts.partitions.size(); ++i) {
    const auto& p = parts.partitions[i];
    chosen[i] = subsample_rows(p.row_indices, options.max_per_class, options.seed, p.class_index, options.subsample);
  }

  std::vector<std::optional<ClassGaussian>> fitted(parts.partitions.size());
  parallel_for(parts.partitions.size(), [&](std::size_t i) {
    if (chosen[i].size() < 2) return;
    const auto projected = project(*pca, ds.embeddings.select_rows(chosen[i]));
    fitted[i] = fit_class_gaussian(projected, options.kind, options.ridge_epsilon);
  });

  GaussianDictionary dict(options.kind, pca);
  for (std::size_t i = 0; i < fitted.size(); ++i) {
    const auto c = parts.partitions[i].class_index;
    if (fitted[i]) {
      dict.insert(c, std::move(*fitted[i]));
    } else {
      dict.excluded_classes.push_back(c);
    }
  }
  if (dict.size() == 0) {
    throw Error(ErrorCode::EmptyTrainSplit, "gaussian_dict", "no class in the train split has 2 or more samples");
  }
  dict.provenance["covariance_kind"] = to_string(options.kind);
  dict.provenance["max_per_class"] = options.max_per_class ? nlohmann::json(*options.max_per_class) : nlohmann::json();
  dict.provenance["seed"] = options.seed;
  dict.provenance["subsample"] = options.subsample == SubsampleStrategy::Random ? "random" : "first";
  dict.provenance["ridge_epsilon"] = options.ridge_epsilon;
  dict.provenance["absent_classes"] = parts.absent_classes;
  detail::record_ridges(dict);
  return dict;
}

// ---------------------------------------------------------------------------
// Serialization: "VLMD" | version u32 | kind u8 | count u64 | per class:
//   class_index u32 | sample_count u64 | mean (k f64) | covariance (k*k or k f64)
// k comes from the PCA model the dictionary was built with.

inline std::vector<char> encode_dictionary(const GaussianDictionary& dict) {
  io::ByteWriter w;
  w.magic("VLMD");
  w.put<std::uint32_t>(kDictionaryFormatVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(dict.kind()));
  w.put<std::uint64_t>(dict.size());
  for (const auto& [c, g] : dict.entries()) {
    w.put<std::uint32_t>(c);
    w.put<std::uint64_t>(g.sample_count());
    w.put_span<double>({g.mean().data(), g.dim()});
    if (g.kind() == CovarianceKind::Full) {
      const auto& cov = g.full_covariance();
      w.put_span<double>({cov.data(), static_cast<std::size_t>(cov.size())});
    } else {
      w.put_span<double>({g.variances().data(), g.dim()});
    }
  }
  return w.bytes();
}

inline void save_dictionary(const std::filesystem::path& path, const GaussianDictionary& dict) {
  io::write_file_atomic(path, encode_dictionary(dict), "gaussian_dict");
}

inline GaussianDictionary load_dictionary(const std::filesystem::path& path, std::shared_ptr<const PcaModel> pca) {
  io::ByteReader r(io::read_file(path, "gaussian_dict"), path.string());
  r.expect_magic("VLMD", "gaussian_dict");
  if (r.get<std::uint32_t>("gaussian_dict") != kDictionaryFormatVersion) {
    throw Error(ErrorCode::VersionMismatch, "gaussian_dict", path.string());
  }
  const auto kind_byte = r.get<std::uint8_t>("gaussian_dict");
  if (kind_byte > 1) throw Error(ErrorCode::InvalidManifest, "gaussian_dict", path.string() + ": bad kind byte");
  const auto kind = static_cast<CovarianceKind>(kind_byte);
  const auto count = r.get<std::uint64_t>("gaussian_dict");
  const auto k = static_cast<Eigen::Index>(pca->output_dim());
  const std::size_t payload = kind == CovarianceKind::Full ? static_cast<std::size_t>(k * k) : static_cast<std::size_t>(k);
  const std::size_t per_class = 4 + 8 + 8 * (static_cast<std::size_t>(k) + payload);
  if (r.remaining() != count * per_class) {
    throw Error(ErrorCode::DimensionMismatch, "gaussian_dict",
                path.string() + ": size does not match " + std::to_string(count) + " classes at k=" + std::to_string(k));
  }

  GaussianDictionary dict(kind, pca);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto c = r.get<std::uint32_t>("gaussian_dict");
    const auto n = r.get<std::uint64_t>("gaussian_dict");
    Eigen::VectorXd mean(k);
    r.get_span<double>({mean.data(), static_cast<std::size_t>(k)}, "gaussian_dict");
    if (kind == CovarianceKind::Full) {
      Eigen::MatrixXd cov(k, k);
      r.get_span<double>({cov.data(), payload}, "gaussian_dict");
      dict.insert(c, ClassGaussian::full(std::move(mean), std::move(cov), n));
    } else {
      Eigen::VectorXd var(k);
      r.get_span<double>({var.data(), payload}, "gaussian_dict");
      dict.insert(c, ClassGaussian::diagonal(std::move(mean), std::move(var), n));
    }
  }
  return dict;
}

}  // namespace vlmunc
