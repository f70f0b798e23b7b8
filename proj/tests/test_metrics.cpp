#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "expect_error.hpp"
#include "oracles.hpp"
#include "vlmunc/metrics.hpp"

using namespace vlmunc;

namespace {

std::vector<ScoredSample> make(std::initializer_list<std::pair<double, bool>> items) {
  std::vector<ScoredSample> out;
  for (const auto& [c, ok] : items) out.push_back({c, ok});
  return out;
}

}  // namespace

TEST(Metrics, AgreeWithBruteForceOracles) {
  std::mt19937_64 rng(51);
  for (int set = 0; set < 50; ++set) {
    const auto s = oracle::random_scored_set(rng, 200);
    EXPECT_NEAR(auroc(s), oracle::auroc_pairs(s), 1e-12);
    EXPECT_NEAR(aupr(s), oracle::aupr_thresholds(s), 1e-12);
    EXPECT_NEAR(fpr_at_tpr(s), oracle::fpr_thresholds(s, 0.95), 1e-12);
    const auto taus = default_tau_grid();
    const auto curve = f1_sweep(s, taus);
    for (std::size_t i = 0; i < taus.size(); ++i) EXPECT_NEAR(curve[i].second, oracle::f1_direct(s, taus[i]), 1e-12);
  }
}

TEST(Metrics, PerfectSeparation) {
  const auto s = make({{0.9, true}, {0.8, true}, {0.3, false}, {0.1, false}});
  EXPECT_EQ(auroc(s), 1.0);
  EXPECT_EQ(aupr(s), 1.0);
  EXPECT_EQ(fpr_at_tpr(s), 0.0);
  const auto inverted = make({{0.1, true}, {0.2, true}, {0.3, false}, {0.4, false}});
  EXPECT_EQ(auroc(inverted), 0.0);
  EXPECT_EQ(fpr_at_tpr(inverted), 1.0);
}

TEST(Metrics, AllTiedScores) {
  const auto s = make({{0.5, true}, {0.5, false}, {0.5, true}, {0.5, false}, {0.5, true}});
  EXPECT_EQ(auroc(s), 0.5);
  EXPECT_NEAR(aupr(s), 0.6, 1e-15);  // one threshold: recall 1 at precision 3/5
  EXPECT_EQ(fpr_at_tpr(s), 1.0);
}

TEST(Metrics, SinglePositiveRankedLast) {
  std::vector<ScoredSample> s;
  for (int i = 0; i < 9; ++i) s.push_back({1.0 - 0.01 * i, false});
  s.push_back({0.0, true});
  EXPECT_EQ(auroc(s), 0.0);
  EXPECT_NEAR(aupr(s), 0.1, 1e-15);  // 1/n
}

TEST(Metrics, DegenerateInputs) {
  const auto only_correct = make({{0.3, true}, {0.7, true}});
  const auto only_wrong = make({{0.3, false}, {0.7, false}});
  expect_code(ErrorCode::SingleClassOnly, [&] { auroc(only_correct); });
  expect_code(ErrorCode::SingleClassOnly, [&] { auroc(only_wrong); });
  expect_code(ErrorCode::SingleClassOnly, [&] { fpr_at_tpr(only_wrong); });
  expect_code(ErrorCode::NoPositives, [&] { aupr(only_wrong); });
  EXPECT_EQ(aupr(only_correct), 1.0);
  expect_code(ErrorCode::EmptyInput, [] { accuracy(std::vector<Prediction>{}); });
}

TEST(F1Sweep, WorkedCases) {
  // uncertainties 0.1, 0.4, 0.6, 0.9 for correct, wrong, correct, wrong
  const auto s = make({{0.9, true}, {0.6, false}, {0.4, true}, {0.1, false}});
  const std::vector<double> taus{0.0, 0.1, 0.5, 1.0};
  const auto curve = f1_sweep(s, taus);
  EXPECT_EQ(curve[0].second, 0.0);  // nothing retained
  EXPECT_NEAR(curve[1].second, 2.0 / 3.0, 1e-12);  // tp 1, fn 1
  EXPECT_NEAR(curve[2].second, 0.5, 1e-12);  // tp 1, fp 1, fn 1
  EXPECT_NEAR(curve[3].second, 2.0 / 3.0, 1e-12);  // tp 2, fp 2
  EXPECT_EQ(curve[2].first, 0.5);

  const auto grid = default_tau_grid();
  ASSERT_EQ(grid.size(), 101u);
  EXPECT_EQ(grid.front(), 0.0);
  EXPECT_EQ(grid.back(), 1.0);
  EXPECT_NEAR(grid[37], 0.37, 1e-15);
}

TEST(Accuracy, CountsCorrectPredictions) {
  std::vector<Prediction> p(8);
  p[1].correct = p[4].correct = p[5].correct = true;
  EXPECT_EQ(accuracy(p), 3.0 / 8.0);
}

TEST(MetricInvariants, StrictlyMonotoneTransformLeavesRankMetricsUnchanged) {
  std::mt19937_64 rng(52);
  for (int set = 0; set < 20; ++set) {
    const auto s = oracle::random_scored_set(rng, 150);
    auto t = s;
    for (auto& x : t) x.confidence = std::exp(3.0 * x.confidence) - 7.0;
    EXPECT_NEAR(auroc(t), auroc(s), 1e-12);
    EXPECT_NEAR(aupr(t), aupr(s), 1e-12);
    EXPECT_NEAR(fpr_at_tpr(t), fpr_at_tpr(s), 1e-12);
  }
}

TEST(MetricInvariants, FlippingLabelsAndNegatingScoresPreservesAuroc) {
  std::mt19937_64 rng(53);
  for (int set = 0; set < 20; ++set) {
    const auto s = oracle::random_scored_set(rng, 150);
    auto t = s;
    for (auto& x : t) {
      x.confidence = -x.confidence;
      x.correct = !x.correct;
    }
    EXPECT_NEAR(auroc(t), auroc(s), 1e-12);
    // label flip alone mirrors it
    auto f = s;
    for (auto& x : f) x.correct = !x.correct;
    EXPECT_NEAR(auroc(f), 1.0 - auroc(s), 1e-12);
  }
}

TEST(MetricInvariants, PermutationInvariant) {
  std::mt19937_64 rng(54);
  const auto s = oracle::random_scored_set(rng, 300);
  for (int trial = 0; trial < 10; ++trial) {
    auto t = s;
    std::shuffle(t.begin(), t.end(), rng);
    EXPECT_EQ(auroc(t), auroc(s));
    EXPECT_EQ(aupr(t), aupr(s));
    EXPECT_EQ(fpr_at_tpr(t), fpr_at_tpr(s));
  }
}

TEST(MetricInvariants, TprAndFprAreMonotoneInThreshold) {
  std::mt19937_64 rng(55);
  const auto s = oracle::random_scored_set(rng, 200);
  std::size_t prev_tp = 0, prev_fp = 0;
  for (double t : oracle::thresholds_descending(s)) {
    const auto [tp, fp] = oracle::retained(s, t);
    EXPECT_GE(tp, prev_tp);
    EXPECT_GE(fp, prev_fp);
    prev_tp = tp;
    prev_fp = fp;
  }
  // a stricter TPR target can only need a higher FPR
  double prev = 0.0;
  for (double target : {0.5, 0.7, 0.9, 0.95, 0.99, 1.0}) {
    const double fpr = fpr_at_tpr(s, target);
    EXPECT_GE(fpr, prev);
    prev = fpr;
  }
}

TEST(MetricInvariants, Bounds) {
  std::mt19937_64 rng(56);
  for (int set = 0; set < 20; ++set) {
    const auto s = oracle::random_scored_set(rng, 100);
    const auto r = evaluate("m", s, default_tau_grid());
    for (double v : {r.auroc, r.aupr, r.fpr95, r.accuracy}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(r.positives + r.negatives, s.size());
    EXPECT_NEAR(r.accuracy, static_cast<double>(r.positives) / static_cast<double>(s.size()), 1e-15);
    for (const auto& [tau, f1] : r.f1_curve) {
      EXPECT_GE(f1, 0.0);
      EXPECT_LE(f1, 1.0);
    }
  }
}

TEST(Reports, SamplesForAndJson) {
  std::vector<UncertaintyScore> scores(4);
  scores[0].method = "A";
  scores[0].confidence = 0.9;
  scores[0].correct = true;
  scores[1].method = "B";
  scores[2].method = "A";
  scores[2].confidence = 0.1;
  scores[3].method = "B";
  EXPECT_EQ(methods_in(scores), (std::vector<std::string>{"A", "B"}));
  const auto a = samples_for(scores, "A");
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].confidence, 0.9);
  EXPECT_FALSE(a[1].correct);

  const auto r = evaluate("A", a, std::vector<double>{0.5});
  const auto j = report_to_json(r);
  EXPECT_EQ(j.at("method"), "A");
  EXPECT_EQ(j.at("auroc"), 1.0);
  EXPECT_EQ(j.at("f1_curve").size(), 1u);
  const auto table = reports_table(std::vector<EvaluationReport>{r});
  EXPECT_NE(table.find("100.00"), std::string::npos);
  EXPECT_NE(table.find("AuROC"), std::string::npos);
}
