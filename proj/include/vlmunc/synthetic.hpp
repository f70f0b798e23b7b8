#pragma once

// Seeded synthetic fixtures for tests, acceptance checks and `gen-synthetic`.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vlmunc/embedding_store.hpp"
#include "vlmunc/error.hpp"

namespace vlmunc::synthetic {

/// Random orthogonal matrix (Householder QR of a Gaussian matrix).
inline Eigen::MatrixXd random_orthogonal(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd g(d, d);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
}

/// Upper-tail standard normal quantile: z with P(N(0,1) > z) = p.
inline double upper_normal_quantile(double p) {
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (0.5 * std::erfc(mid / std::sqrt(2.0)) > p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct ConfusionOptions {
  std::size_t classes = 5;
  std::size_t dims = 64;
  std::size_t train_per_class = 400;
  std::size_t test_per_class = 200;
  /// Fraction of each class pushed across the cosine decision boundary.
  double confusion_rate = 0.1;
  std::uint64_t seed = 0;
};

struct SyntheticBenchmark {
  LabeledDataset dataset;    // splits "train" and "test", unnormalized
  EmbeddingMatrix text_bank;  // one row per class, at the class centroid
};

/// Gaussian image features for `classes` classes. Class c is centred on
/// radius * q_c and spreads along
///   - q_c itself (sd 0.3),
///   - the centroid direction of its confuser class (c+1) mod C, with an sd chosen
///     so that `confusion_rate` of its samples land nearer the confuser's text
///     embedding and are misclassified by cosine similarity,
///   - ten shared nuisance directions with class-specific scales in [0.5, 1.5],
///   - every other direction (sd 0.05).
/// The misclassified samples remain typical under their own class Gaussian but are
/// far from the predicted class's, which is what the intra-class score detects.
/// The text bank sits exactly at the class means.
inline SyntheticBenchmark make_confusion_benchmark(const ConfusionOptions& opt) {
  constexpr std::size_t kNuisance = 10;
  constexpr double kRadius = 3.0;
  if (opt.classes < 2 || opt.dims < opt.classes + kNuisance) {
    throw Error(ErrorCode::InvalidArgument, "synthetic",
                "need >= 2 classes and dims >= classes + " + std::to_string(kNuisance));
  }
  if (!(opt.confusion_rate > 0.0 && opt.confusion_rate < 0.5)) {
    throw Error(ErrorCode::InvalidArgument, "synthetic", "confusion rate must lie in (0, 0.5)");
  }
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(0.5, 1.5);

  const auto d = static_cast<Eigen::Index>(opt.dims);
  const Eigen::MatrixXd q = random_orthogonal(opt.dims, rng);
  const double confuser_sd = kRadius / upper_normal_quantile(opt.confusion_rate);

  std::vector<Eigen::VectorXd> nuisance_scale(opt.classes);
  for (auto& s : nuisance_scale) {
    s.resize(kNuisance);
    for (auto& x : s) x = uniform(rng);
  }

  const std::size_t per_class = opt.train_per_class + opt.test_per_class;
  const std::size_t total = per_class * opt.classes;
  RowMatrix values(static_cast<Eigen::Index>(total), d);
  LabeledDataset ds;
  ds.labels.resize(total);
  auto& train = ds.splits["train"];
  auto& test = ds.splits["test"];

  std::size_t row = 0;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t c = 0; c < opt.classes; ++c, ++row) {
      Eigen::VectorXd coords = Eigen::VectorXd::Zero(d);
      for (Eigen::Index j = 0; j < d; ++j) coords(j) = 0.05 * normal(rng);
      const auto own = static_cast<Eigen::Index>(c);
      const auto confuser = static_cast<Eigen::Index>((c + 1) % opt.classes);
      coords(own) = kRadius + 0.3 * normal(rng);
      coords(confuser) = confuser_sd * normal(rng);
      for (std::size_t j = 0; j < kNuisance; ++j) {
        coords(static_cast<Eigen::Index>(opt.classes + j)) = nuisance_scale[c](static_cast<Eigen::Index>(j)) * normal(rng);
      }
      values.row(static_cast<Eigen::Index>(row)) = (q * coords).transpose();
      ds.labels[row] = static_cast<std::uint32_t>(c);
      (i < opt.train_per_class ? train : test).push_back(row);
    }
  }
  ds.embeddings = EmbeddingMatrix(std::move(values));
  for (std::size_t c = 0; c < opt.classes; ++c) ds.class_names.push_back("class_" + std::to_string(c));

  RowMatrix text(static_cast<Eigen::Index>(opt.classes), d);
  for (std::size_t c = 0; c < opt.classes; ++c) {
    text.row(static_cast<Eigen::Index>(c)) = kRadius * q.col(static_cast<Eigen::Index>(c)).transpose();
  }
  return {std::move(ds), EmbeddingMatrix(std::move(text))};
}

struct AnisotropicOptions {
  std::size_t classes = 20;
  std::size_t per_class = 200;
  std::size_t dims = 512;
  std::uint64_t seed = 0;
};

/// Classes sharing a covariance with eigenvalues 1/i^2 (i = 1..dims) in a random
/// rotation; class means drawn from the same spectrum scaled by 4. All rows go to
/// the "train" split.
inline LabeledDataset make_anisotropic_dataset(const AnisotropicOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal;
  const auto d = static_cast<Eigen::Index>(opt.dims);
  const Eigen::MatrixXd q = random_orthogonal(opt.dims, rng);
  Eigen::VectorXd sd(d);
  for (Eigen::Index i = 0; i < d; ++i) sd(i) = 1.0 / static_cast<double>(i + 1);

  LabeledDataset ds;
  const std::size_t total = opt.classes * opt.per_class;
  RowMatrix values(static_cast<Eigen::Index>(total), d);
  ds.labels.resize(total);
  std::size_t row = 0;
  for (std::size_t c = 0; c < opt.classes; ++c) {
    Eigen::VectorXd mean_coords(d);
    for (Eigen::Index j = 0; j < d; ++j) mean_coords(j) = 2.0 * sd(j) * normal(rng);
    for (std::size_t i = 0; i < opt.per_class; ++i, ++row) {
      Eigen::VectorXd coords(d);
      for (Eigen::Index j = 0; j < d; ++j) coords(j) = mean_coords(j) + sd(j) * normal(rng);
      values.row(static_cast<Eigen::Index>(row)) = (q * coords).transpose();
      ds.labels[row] = static_cast<std::uint32_t>(c);
      ds.splits["train"].push_back(row);
    }
    ds.class_names.push_back("class_" + std::to_string(c));
  }
  ds.embeddings = EmbeddingMatrix(std::move(values));
  return ds;
}

}  // namespace vlmunc::synthetic
