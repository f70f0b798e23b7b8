#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "expect_error.hpp"
#include "oracles.hpp"
#include "vlmunc/gaussian_dict.hpp"

using namespace vlmunc;

namespace {

EmbeddingMatrix rows_of(std::initializer_list<std::initializer_list<double>> rows) {
  RowMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return EmbeddingMatrix(std::move(m));
}

EmbeddingMatrix sample_gaussian(std::mt19937_64& rng, Eigen::Index n, const Eigen::VectorXd& mu,
                                const Eigen::MatrixXd& cov) {
  const Eigen::MatrixXd l = Eigen::LLT<Eigen::MatrixXd>(cov).matrixL();
  std::normal_distribution<double> normal;
  RowMatrix m(n, mu.size());
  for (Eigen::Index r = 0; r < n; ++r) {
    Eigen::VectorXd g(mu.size());
    for (auto& v : g) v = normal(rng);
    m.row(r) = (mu + l * g).transpose();
  }
  return EmbeddingMatrix(std::move(m));
}

// Labeled dataset whose class c is drawn around 3*e_c in `dims` dimensions.
LabeledDataset clustered_dataset(std::mt19937_64& rng, const std::vector<int>& per_class, Eigen::Index dims) {
  std::normal_distribution<double> normal;
  const auto total = std::accumulate(per_class.begin(), per_class.end(), 0);
  RowMatrix m(total, dims);
  LabeledDataset ds;
  Eigen::Index r = 0;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    ds.class_names.push_back("c" + std::to_string(c));
    for (int i = 0; i < per_class[c]; ++i, ++r) {
      for (Eigen::Index j = 0; j < dims; ++j) m(r, j) = normal(rng) + (j == static_cast<Eigen::Index>(c) ? 3.0 : 0.0);
      ds.labels.push_back(static_cast<std::uint32_t>(c));
      ds.splits["train"].push_back(static_cast<std::size_t>(r));
    }
  }
  ds.embeddings = EmbeddingMatrix(std::move(m));
  return ds;
}

}  // namespace

TEST(FitClassGaussian, SquareCorners) {
  const auto g = fit_class_gaussian(rows_of({{0, 0}, {2, 0}, {0, 2}, {2, 2}}), CovarianceKind::Full);
  EXPECT_NEAR(g.mean()(0), 1.0, 1e-15);
  EXPECT_NEAR(g.mean()(1), 1.0, 1e-15);
  EXPECT_NEAR(g.covariance()(0, 0), 4.0 / 3.0, 1e-12);
  EXPECT_NEAR(g.covariance()(1, 1), 4.0 / 3.0, 1e-12);
  EXPECT_NEAR(g.covariance()(0, 1), 0.0, 1e-12);
  EXPECT_EQ(g.ridge(), 0.0);
  EXPECT_EQ(g.sample_count(), 4u);
}

TEST(FitClassGaussian, SingleRowIsTooFew) {
  expect_code(ErrorCode::TooFewSamples, [] { fit_class_gaussian(rows_of({{1, 2, 3}}), CovarianceKind::Full); });
  expect_code(ErrorCode::TooFewSamples, [] { fit_class_gaussian(rows_of({{1, 2, 3}}), CovarianceKind::Diagonal); });
}

TEST(FitClassGaussian, MatchesDirectMomentsAndTruth) {
  std::mt19937_64 rng(21);
  const Eigen::MatrixXd truth = oracle::random_spd(rng, 8);
  Eigen::VectorXd mu = Eigen::VectorXd::LinSpaced(8, -1.0, 1.0);
  const auto x = sample_gaussian(rng, 50, mu, truth);
  const auto g = fit_class_gaussian(x, CovarianceKind::Full);

  // moments by explicit loops
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(8);
  for (std::size_t r = 0; r < 50; ++r) mean += x.row(r);
  mean /= 50.0;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(8, 8);
  for (std::size_t r = 0; r < 50; ++r) {
    const Eigen::VectorXd d = x.row(r) - mean;
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) cov(i, j) += d(i) * d(j);
  }
  cov /= 49.0;
  EXPECT_LT((g.mean() - mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((g.covariance() - cov).cwiseAbs().maxCoeff(), 1e-12);

  // statistical closeness to the generating parameters: loose bounds at n = 50
  EXPECT_LT((g.mean() - mu).cwiseAbs().maxCoeff(), 5.0 * std::sqrt(truth.diagonal().maxCoeff() / 50.0));
  EXPECT_LT((g.covariance() - truth).norm() / truth.norm(), 0.6);
}

TEST(FitClassGaussian, DiagonalMatchesVariances) {
  std::mt19937_64 rng(22);
  const auto x = sample_gaussian(rng, 30, Eigen::VectorXd::Zero(5), oracle::random_spd(rng, 5));
  const auto full = fit_class_gaussian(x, CovarianceKind::Full);
  const auto diag = fit_class_gaussian(x, CovarianceKind::Diagonal);
  EXPECT_LT((diag.variances() - full.covariance().diagonal()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(diag.kind(), CovarianceKind::Diagonal);

  const auto flat = fit_class_gaussian(rows_of({{1, 5}, {2, 5}, {3, 5}}), CovarianceKind::Diagonal);
  EXPECT_EQ(flat.variances()(1), kVarianceFloor);
}

TEST(LogPdf, ClosedForms) {
  const auto std_normal = ClassGaussian::full(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1), 2);
  EXPECT_NEAR(std_normal.log_pdf(Eigen::VectorXd::Zero(1)), -0.9189385332046727, 1e-12);

  const auto iso = ClassGaussian::full(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity(), 2);
  EXPECT_NEAR(iso.log_pdf(Eigen::Vector2d(3, 4)), -std::log(2 * std::numbers::pi) - 12.5, 1e-12);

  Eigen::Matrix2d s;
  s << 2, 0.5, 0.5, 1;
  const auto corr = ClassGaussian::full(Eigen::Vector2d(1, -1), s, 2);
  EXPECT_NEAR(corr.log_pdf(Eigen::Vector2d(4, 3)), -10.403399246091343, 1e-12);

  const auto diag = ClassGaussian::diagonal(Eigen::Vector2d(0, 0), Eigen::Vector2d(4, 9), 2);
  EXPECT_NEAR(diag.log_pdf(Eigen::Vector2d(2, 3)), -4.629636535637401, 1e-12);

  expect_code(ErrorCode::DimensionMismatch, [&] { corr.log_pdf(Eigen::VectorXd::Zero(3)); });
  expect_code(ErrorCode::DegenerateInput,
              [] { ClassGaussian::full(Eigen::Vector2d(0, 0), Eigen::Matrix2d::Zero(), 2); });
}

TEST(LogPdf, MatchesNaiveInverseIn16Dims) {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd cov = oracle::random_spd(rng, 16);
    Eigen::VectorXd mu(16), z(16);
    for (auto& v : mu) v = normal(rng);
    for (auto& v : z) v = normal(rng) * 2.0;
    const auto g = ClassGaussian::full(mu, cov, 100);
    EXPECT_NEAR(g.log_pdf(z), oracle::naive_log_pdf(z, mu, cov), 1e-9);

    const Eigen::VectorXd var = cov.diagonal();
    const auto d = ClassGaussian::diagonal(mu, var, 100);
    EXPECT_NEAR(d.log_pdf(z), oracle::naive_log_pdf(z, mu, var.asDiagonal().toDenseMatrix()), 1e-9);
  }
}

TEST(LogPdf, IntegratesToOne1D) {
  const double sigma = 1.7, mu = 0.3;
  const auto g = ClassGaussian::full(Eigen::VectorXd::Constant(1, mu), Eigen::MatrixXd::Constant(1, 1, sigma * sigma), 2);
  // composite Simpson over +-8 sigma
  const int n = 4000;
  const double a = mu - 8 * sigma, h = 16 * sigma / n;
  double sum = 0;
  for (int i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
    sum += w * std::exp(g.log_pdf(Eigen::VectorXd::Constant(1, a + i * h)));
  }
  EXPECT_NEAR(sum * h / 3, 1.0, 1e-3);
}

TEST(LogPdf, IntegratesToOne2D) {
  Eigen::Matrix2d s;
  s << 1.0, 0.6, 0.6, 2.0;
  const Eigen::Vector2d mu(0.5, -0.5);
  for (auto kind : {CovarianceKind::Full, CovarianceKind::Diagonal}) {
    const auto g = kind == CovarianceKind::Full ? ClassGaussian::full(mu, s, 2)
                                                : ClassGaussian::diagonal(mu, s.diagonal(), 2);
    const int n = 400;
    const double sx = std::sqrt(s(0, 0)), sy = std::sqrt(s(1, 1));
    const double hx = 16 * sx / n, hy = 16 * sy / n;
    double sum = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const Eigen::Vector2d p(mu(0) - 8 * sx + (i + 0.5) * hx, mu(1) - 8 * sy + (j + 0.5) * hy);
        sum += std::exp(g.log_pdf(p));
      }
    }
    EXPECT_NEAR(sum * hx * hy, 1.0, 1e-3) << to_string(kind);
  }
}

TEST(LogPdf, ModeIsAtTheMean) {
  std::mt19937_64 rng(24);
  std::normal_distribution<double> normal;
  const Eigen::MatrixXd cov = oracle::random_spd(rng, 6);
  const Eigen::VectorXd mu = Eigen::VectorXd::LinSpaced(6, 0.0, 1.0);
  const auto g = ClassGaussian::full(mu, cov, 10);
  const double peak = g.log_pdf(mu);
  for (int i = 0; i < 200; ++i) {
    Eigen::VectorXd z = mu;
    for (auto& v : z) v += 0.1 * normal(rng);
    EXPECT_LT(g.log_pdf(z), peak);
  }
}

TEST(LogPdf, FullAgreesWithDiagonalForDiagonalCovariance) {
  const Eigen::Vector3d var(0.5, 2.0, 7.0), mu(1, 2, 3);
  const auto full = ClassGaussian::full(mu, var.asDiagonal().toDenseMatrix(), 5);
  const auto diag = ClassGaussian::diagonal(mu, var, 5);
  std::mt19937_64 rng(25);
  std::normal_distribution<double> normal;
  for (int i = 0; i < 50; ++i) {
    const Eigen::Vector3d z(normal(rng), normal(rng), normal(rng));
    EXPECT_NEAR(full.log_pdf(z), diag.log_pdf(z), 1e-12);
  }
}

TEST(Ridge, AppliedWhenRowsDoNotExceedDims) {
  std::mt19937_64 rng(26);
  const auto x = sample_gaussian(rng, 6, Eigen::VectorXd::Zero(10), Eigen::MatrixXd::Identity(10, 10));
  const auto g = fit_class_gaussian(x, CovarianceKind::Full);
  EXPECT_GT(g.ridge(), 0.0);
  EXPECT_TRUE(std::isfinite(g.log_pdf(Eigen::VectorXd::Ones(10))));
  // stored covariance is the regularized one
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.covariance());
  EXPECT_GE(es.eigenvalues().minCoeff(), g.ridge() * (1 - 1e-6));

  const auto larger = fit_class_gaussian(x, CovarianceKind::Full, 1e-3);
  EXPECT_GT(larger.ridge(), g.ridge());

  const auto well = fit_class_gaussian(sample_gaussian(rng, 100, Eigen::VectorXd::Zero(4), Eigen::MatrixXd::Identity(4, 4)),
                                       CovarianceKind::Full);
  EXPECT_EQ(well.ridge(), 0.0);
}

TEST(BuildDictionary, CountsExclusionsAndMeans) {
  std::mt19937_64 rng(27);
  const auto ds = clustered_dataset(rng, {40, 1, 30, 25}, 6);
  const auto pca = std::make_shared<PcaModel>(fit_pca(ds.embeddings, 4));
  const auto dict = build_dictionary(ds, pca, {});
  EXPECT_EQ(dict.size(), 3u);
  EXPECT_EQ(dict.excluded_classes, (std::vector<std::uint32_t>{1}));
  EXPECT_FALSE(dict.contains(1));
  expect_code(ErrorCode::UnknownClass, [&] { dict.at(1); });

  // mean of per-row projections U^T (v - mu), computed by hand
  for (std::uint32_t c : {0u, 2u, 3u}) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(4);
    std::size_t n = 0;
    for (std::size_t r = 0; r < ds.labels.size(); ++r) {
      if (ds.labels[r] != c) continue;
      const Eigen::VectorXd d = ds.embeddings.row(r) - pca->global_mean;
      for (int j = 0; j < 4; ++j) mean(j) += pca->basis.col(j).dot(d);
      ++n;
    }
    mean /= static_cast<double>(n);
    EXPECT_LT((dict.at(c).mean() - mean).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(dict.at(c).sample_count(), n);
  }
}

TEST(BuildDictionary, EmptyTrainSplit) {
  std::mt19937_64 rng(28);
  auto ds = clustered_dataset(rng, {5, 5}, 3);
  const auto pca = std::make_shared<PcaModel>(fit_pca(ds.embeddings, 2));
  auto no_train = ds;
  no_train.splits.erase("train");
  expect_code(ErrorCode::EmptyTrainSplit, [&] { build_dictionary(no_train, pca, {}); });
  auto singletons = ds;
  singletons.splits["train"] = {0, 5};
  expect_code(ErrorCode::EmptyTrainSplit, [&] { build_dictionary(singletons, pca, {}); });
}

TEST(BuildDictionary, SubsamplingIsSeededAndDeterministic) {
  std::mt19937_64 rng(29);
  const auto ds = clustered_dataset(rng, {50, 50, 50}, 5);
  const auto pca = std::make_shared<PcaModel>(fit_pca(ds.embeddings, 3));
  DictionaryBuildOptions opt;
  opt.max_per_class = 10;
  opt.seed = 4;
  const auto a = encode_dictionary(build_dictionary(ds, pca, opt));
  const auto b = encode_dictionary(build_dictionary(ds, pca, opt));
  EXPECT_EQ(a, b);
  opt.seed = 5;
  EXPECT_NE(encode_dictionary(build_dictionary(ds, pca, opt)), a);

  const auto picked = subsample_rows({9, 3, 7, 1, 5}, 3, 0, 0, SubsampleStrategy::First);
  EXPECT_EQ(picked, (std::vector<std::size_t>{3, 7, 9}));
  const auto random = subsample_rows({0, 1, 2, 3, 4, 5, 6, 7}, 4, 11, 2, SubsampleStrategy::Random);
  EXPECT_EQ(random.size(), 4u);
  EXPECT_TRUE(std::is_sorted(random.begin(), random.end()));
  EXPECT_EQ(random, subsample_rows({0, 1, 2, 3, 4, 5, 6, 7}, 4, 11, 2, SubsampleStrategy::Random));

  opt.subsample = SubsampleStrategy::First;
  const auto first = build_dictionary(ds, pca, opt);
  EXPECT_EQ(first.at(0).sample_count(), 10u);
}

TEST(DictionaryFile, RoundTrip) {
  std::mt19937_64 rng(30);
  const auto ds = clustered_dataset(rng, {20, 20, 3}, 6);
  const auto pca = std::make_shared<PcaModel>(fit_pca(ds.embeddings, 5));
  const auto dir = oracle::scratch_dir("dict_io");
  for (auto kind : {CovarianceKind::Full, CovarianceKind::Diagonal}) {
    DictionaryBuildOptions opt;
    opt.kind = kind;
    const auto dict = build_dictionary(ds, pca, opt);
    const auto path = dir / ("d_" + to_string(kind) + ".vlmd");
    save_dictionary(path, dict);
    const auto loaded = load_dictionary(path, pca);
    EXPECT_EQ(encode_dictionary(loaded), encode_dictionary(dict));
    EXPECT_EQ(loaded.kind(), kind);
    const std::size_t payload = kind == CovarianceKind::Full ? 25 : 5;
    EXPECT_EQ(std::filesystem::file_size(path), 4u + 4 + 1 + 8 + 3 * (4 + 8 + 8 * (5 + payload)));
    const Eigen::VectorXd z = Eigen::VectorXd::LinSpaced(5, -1, 1);
    for (const auto& [c, g] : dict.entries()) EXPECT_EQ(loaded.at(c).log_pdf(z), g.log_pdf(z));

    const auto other = std::make_shared<PcaModel>(fit_pca(ds.embeddings, 4));
    expect_code(ErrorCode::DimensionMismatch, [&] { load_dictionary(path, other); });
  }
}
