#pragma once

// Global PCA basis over training embeddings, projection into the reduced space,
// and per-class covariance condition-number diagnostics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "vlmunc/binary_io.hpp"
#include "vlmunc/embedding_store.hpp"
#include "vlmunc/error.hpp"
#include "vlmunc/parallel.hpp"

namespace vlmunc {

inline constexpr std::size_t kDefaultPcaDim = 128;
inline constexpr std::uint32_t kPcaFormatVersion = 1;
/// Condition numbers use max(lambda_min, kConditionFloor * lambda_max) as denominator.
inline constexpr double kConditionFloor = 1e-12;

struct PcaModel {
  Eigen::VectorXd global_mean;  // d
  Eigen::MatrixXd basis;        // d x k, orthonormal columns
  Eigen::VectorXd eigenvalues;  // k, nonincreasing

  std::size_t input_dim() const noexcept { return static_cast<std::size_t>(basis.rows()); }
  std::size_t output_dim() const noexcept { return static_cast<std::size_t>(basis.cols()); }
};

namespace detail {

/// Flips each column so its largest-magnitude entry (first on ties) is positive.
inline void canonicalize_signs(Eigen::MatrixXd& basis) {
  for (Eigen::Index c = 0; c < basis.cols(); ++c) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index r = 0; r < basis.rows(); ++r) {
      const double a = std::abs(basis(r, c));
      if (a > best) {
        best = a;
        arg = r;
      }
    }
    if (basis(arg, c) < 0.0) basis.col(c) *= -1.0;
  }
}

/// Unbiased sample covariance (1/(n-1)) of the rows of `centered`.
inline Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& centered) {
  const auto n = centered.rows();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(centered.cols(), centered.cols());
  cov.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
  cov = cov.selfadjointView<Eigen::Lower>();
  return cov / static_cast<double>(n - 1);
}

}  // namespace detail

/// Fits the top-k principal directions of `train`. Uses the d x d covariance
/// eigendecomposition when rows >= d and an SVD of the centered data otherwise.
inline PcaModel fit_pca(const EmbeddingMatrix& train, std::size_t k) {
  const std::size_t n = train.rows();
  const std::size_t d = train.dims();
  if (n < 2) {
    throw Error(ErrorCode::DegenerateInput, "projector", "PCA needs at least 2 rows, got " + std::to_string(n));
  }
  if (k < 1 || k > std::min(d, n - 1)) {
    throw Error(ErrorCode::RankTooLow, "projector",
                "k=" + std::to_string(k) + " exceeds min(d=" + std::to_string(d) +
                    ", rows-1=" + std::to_string(n - 1) + ")");
  }

  PcaModel model;
  model.global_mean = train.values().colwise().mean().transpose();
  const Eigen::MatrixXd centered = train.values().rowwise() - model.global_mean.transpose();

  Eigen::VectorXd spectrum;  // descending
  Eigen::MatrixXd vectors;   // matching columns
  if (n >= d) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(detail::sample_covariance(centered));
    if (eig.info() != Eigen::Success) {
      throw Error(ErrorCode::DegenerateInput, "projector", "covariance eigendecomposition failed");
    }
    spectrum = eig.eigenvalues().reverse();
    vectors = eig.eigenvectors().rowwise().reverse();
  } else {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    spectrum = svd.singularValues().array().square() / static_cast<double>(n - 1);
    vectors = svd.matrixV();
  }

  if (!(spectrum(0) > 0.0)) {
    throw Error(ErrorCode::DegenerateInput, "projector", "training embeddings have zero variance");
  }
  const auto kk = static_cast<Eigen::Index>(k);
  model.basis = vectors.leftCols(kk);
  model.eigenvalues = spectrum.head(kk).cwiseMax(0.0);
  detail::canonicalize_signs(model.basis);
  return model;
}

/// z = basis^T (v - global_mean) for every row.
inline EmbeddingMatrix project(const PcaModel& model, const EmbeddingMatrix& m) {
  if (m.dims() != model.input_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "projector",
                "embedding dims " + std::to_string(m.dims()) + " != PCA input dim " +
                    std::to_string(model.input_dim()));
  }
  RowMatrix out = (m.values().rowwise() - model.global_mean.transpose()) * model.basis;
  return EmbeddingMatrix(std::move(out));
}

inline Eigen::VectorXd project(const PcaModel& model, const Eigen::VectorXd& v) {
  if (static_cast<std::size_t>(v.size()) != model.input_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "projector",
                "vector length " + std::to_string(v.size()) + " != PCA input dim " +
                    std::to_string(model.input_dim()));
  }
  return model.basis.transpose() * (v - model.global_mean);
}

// ---------------------------------------------------------------------------
// Serialization: "VLMP" | version u32 | d u64 | k u64 | mean (d f64) |
//                basis (d*k f64, column-major) | eigenvalues (k f64)

inline std::vector<char> encode_pca(const PcaModel& model) {
  io::ByteWriter w;
  w.magic("VLMP");
  w.put<std::uint32_t>(kPcaFormatVersion);
  w.put<std::uint64_t>(model.input_dim());
  w.put<std::uint64_t>(model.output_dim());
  w.put_span<double>({model.global_mean.data(), static_cast<std::size_t>(model.global_mean.size())});
  w.put_span<double>({model.basis.data(), static_cast<std::size_t>(model.basis.size())});
  w.put_span<double>({model.eigenvalues.data(), static_cast<std::size_t>(model.eigenvalues.size())});
  return w.bytes();
}

inline void save_pca(const std::filesystem::path& path, const PcaModel& model) {
  io::write_file_atomic(path, encode_pca(model), "projector");
}

inline PcaModel load_pca(const std::filesystem::path& path) {
  io::ByteReader r(io::read_file(path, "projector"), path.string());
  r.expect_magic("VLMP", "projector");
  const auto version = r.get<std::uint32_t>("projector");
  if (version != kPcaFormatVersion) {
    throw Error(ErrorCode::VersionMismatch, "projector", path.string());
  }
  const auto d = static_cast<Eigen::Index>(r.get<std::uint64_t>("projector"));
  const auto k = static_cast<Eigen::Index>(r.get<std::uint64_t>("projector"));
  if (k < 1 || k > d) {
    throw Error(ErrorCode::DimensionMismatch, "projector", path.string() + ": invalid d/k header");
  }
  PcaModel model;
  model.global_mean.resize(d);
  model.basis.resize(d, k);
  model.eigenvalues.resize(k);
  r.get_span<double>({model.global_mean.data(), static_cast<std::size_t>(d)}, "projector");
  r.get_span<double>({model.basis.data(), static_cast<std::size_t>(d * k)}, "projector");
  r.get_span<double>({model.eigenvalues.data(), static_cast<std::size_t>(k)}, "projector");
  r.expect_end("projector");
  return model;
}

// ---------------------------------------------------------------------------
// Condition diagnostics

struct ClassCondition {
  std::uint32_t class_index = 0;
  std::size_t samples = 0;
  double lambda_max = 0.0;
  double lambda_min = 0.0;
  double log10_condition = 0.0;  // NaN when the covariance is identically zero
  bool rank_deficient = false;
};

struct ConditionReport {
  std::string space_tag;  // "raw" or "projected"
  std::vector<ClassCondition> classes;
};

/// log10(lambda_max / max(lambda_min, floor * lambda_max)) of each class covariance.
inline ClassCondition class_condition(const EmbeddingMatrix& rows, std::uint32_t class_index) {
  if (rows.rows() < 2) {
    throw Error(ErrorCode::TooFewSamples, "projector",
                "class " + std::to_string(class_index) + " has " + std::to_string(rows.rows()) +
                    " sample(s); condition number needs 2");
  }
  const Eigen::RowVectorXd mean = rows.values().colwise().mean();
  const Eigen::MatrixXd centered = rows.values().rowwise() - mean;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(detail::sample_covariance(centered),
                                                     Eigen::EigenvaluesOnly);
  ClassCondition out;
  out.class_index = class_index;
  out.samples = rows.rows();
  out.lambda_max = std::max(eig.eigenvalues().maxCoeff(), 0.0);
  out.lambda_min = eig.eigenvalues().minCoeff();
  const double floor = kConditionFloor * out.lambda_max;
  out.rank_deficient = out.lambda_min <= floor;
  out.log10_condition = out.lambda_max > 0.0
                            ? std::log10(out.lambda_max / std::max(out.lambda_min, floor))
                            : std::numeric_limits<double>::quiet_NaN();
  return out;
}

inline ConditionReport condition_report(const std::vector<ClassPartition>& partitions,
                                        const EmbeddingMatrix& features, std::string space_tag) {
  for (const auto& p : partitions) {
    if (p.row_indices.size() < 2) {
      throw Error(ErrorCode::TooFewSamples, "projector",
                  "class " + std::to_string(p.class_index) + " has fewer than 2 samples");
    }
  }
  ConditionReport report;
  report.space_tag = std::move(space_tag);
  report.classes.resize(partitions.size());
  parallel_for(partitions.size(), [&](std::size_t i) {
    report.classes[i] = class_condition(features.select_rows(partitions[i].row_indices),
                                        partitions[i].class_index);
  });
  return report;
}

/// Median of the finite log-condition values (rank-deficient classes included at the floor).
inline double median_log_condition(const ConditionReport& report) {
  std::vector<double> values;
  for (const auto& c : report.classes) {
    if (std::isfinite(c.log10_condition)) values.push_back(c.log10_condition);
  }
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const auto mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

}  // namespace vlmunc
