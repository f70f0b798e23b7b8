#pragma once

// Zero-shot prediction and uncertainty scores: the fused intra-class / inter-modal
// score and the MaxCosine, MaxSoftmax, Entropy and TempScaling baselines.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vlmunc/embedding_store.hpp"
#include "vlmunc/error.hpp"
#include "vlmunc/format.hpp"
#include "vlmunc/gaussian_dict.hpp"
#include "vlmunc/parallel.hpp"
#include "vlmunc/projector.hpp"

namespace vlmunc {

inline constexpr double kDefaultLogitScale = 100.0;
inline constexpr double kDefaultRejectThreshold = 0.5;

namespace method {
inline constexpr std::string_view kOurs = "Ours";
inline constexpr std::string_view kOursDiag = "Ours-D";
inline constexpr std::string_view kMaxCosine = "MaxCosine";
inline constexpr std::string_view kMaxSoftmax = "MaxSoftmax";
inline constexpr std::string_view kEntropy = "Entropy";
inline constexpr std::string_view kTempScaling = "TempScaling";
}  // namespace method

struct SimilarityProfile {
  Eigen::VectorXd cosines;
  Eigen::VectorXd softmax;
  double logit_scale = kDefaultLogitScale;
};

struct Prediction {
  std::uint32_t predicted_class = 0;
  bool correct = false;
};

struct UncertaintyScore {
  std::size_t sample_index = 0;
  std::uint32_t true_class = 0;
  std::uint32_t predicted_class = 0;
  bool correct = false;
  std::string method;
  double confidence = 0.0;  // higher = more likely correct
  double p_max = 0.0;
  std::optional<double> s_d;
  std::optional<double> log_likelihood;
  std::optional<double> s_unc;
};

struct RejectionPolicy {
  double tau = kDefaultRejectThreshold;

  explicit RejectionPolicy(double t = kDefaultRejectThreshold) : tau(t) {
    if (!(t >= 0.0 && t <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "scorer", "tau must lie in [0, 1]");
    }
  }
  bool reject(double s_unc) const noexcept { return s_unc > tau; }
};

/// Max-subtracted softmax.
inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

/// Argmax with the lowest index winning exact ties.
inline std::uint32_t argmax(const Eigen::VectorXd& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return static_cast<std::uint32_t>(best);
}

/// Text bank with unit-norm rows, normalized once and reused per query.
class TextBank {
 public:
  explicit TextBank(const EmbeddingMatrix& bank)
      : normalized_(bank.normalized() ? bank : l2_normalize(bank)) {}

  std::size_t classes() const noexcept { return normalized_.rows(); }
  std::size_t dims() const noexcept { return normalized_.dims(); }
  const RowMatrix& rows() const noexcept { return normalized_.values(); }

 private:
  EmbeddingMatrix normalized_;
};

inline std::pair<SimilarityProfile, Prediction> classify(const Eigen::VectorXd& image_emb, const TextBank& text_bank,
                                                         double logit_scale = kDefaultLogitScale) {
  if (static_cast<std::size_t>(image_emb.size()) != text_bank.dims()) {
    throw Error(ErrorCode::DimensionMismatch, "scorer",
                "image embedding has " + std::to_string(image_emb.size()) + " dims, text bank " +
                    std::to_string(text_bank.dims()));
  }
  if (text_bank.classes() < 2) {
    throw Error(ErrorCode::InvalidArgument, "scorer", "text bank needs at least 2 classes");
  }
  const double norm = image_emb.norm();
  if (norm == 0.0) throw Error(ErrorCode::ZeroNormRow, "scorer", "image embedding is all zero");

  SimilarityProfile profile;
  profile.logit_scale = logit_scale;
  profile.cosines = (text_bank.rows() * (image_emb / norm)).cwiseMax(-1.0).cwiseMin(1.0);
  profile.softmax = softmax(logit_scale * profile.cosines);
  Prediction pred;
  pred.predicted_class = argmax(profile.cosines);
  return {std::move(profile), pred};
}

inline std::pair<SimilarityProfile, Prediction> classify(const Eigen::VectorXd& image_emb,
                                                         const EmbeddingMatrix& text_bank,
                                                         double logit_scale = kDefaultLogitScale) {
  return classify(image_emb, TextBank(text_bank), logit_scale);
}

struct IntraClassScore {
  double s_d = 0.0;
  double log_likelihood = 0.0;
};

/// Softmax of the log-likelihoods of z over `queried_classes`, read at `predicted`.
/// An empty `queried_classes` means every class in the dictionary.
inline IntraClassScore intra_class_score(const GaussianDictionary& dict, const Eigen::VectorXd& z,
                                         std::uint32_t predicted, std::span<const std::uint32_t> queried_classes = {}) {
  std::vector<std::uint32_t> all;
  if (queried_classes.empty()) {
    for (const auto& [c, g] : dict.entries()) all.push_back(c);
    queried_classes = all;
  }
  std::optional<std::size_t> slot;
  std::vector<double> ll(queried_classes.size());
  for (std::size_t i = 0; i < queried_classes.size(); ++i) {
    ll[i] = dict.at(queried_classes[i]).log_pdf(z);
    if (queried_classes[i] == predicted) slot = i;
  }
  if (!slot) {
    throw Error(ErrorCode::UnknownClass, "scorer",
                "predicted class " + std::to_string(predicted) + " is not among the queried classes");
  }
  const double m = *std::max_element(ll.begin(), ll.end());
  double total = 0.0;
  for (double v : ll) total += std::exp(v - m);
  return {std::exp(ll[*slot] - m) / total, ll[*slot]};
}

inline UncertaintyScore fused_uncertainty(const SimilarityProfile& profile, double s_d) {
  UncertaintyScore out;
  out.method = method::kOurs;
  out.p_max = profile.softmax.maxCoeff();
  out.s_d = s_d;
  out.s_unc = 1.0 - (out.p_max + s_d) / 2.0;
  out.confidence = 1.0 - *out.s_unc;
  return out;
}

struct BaselineScores {
  double max_cosine = 0.0;
  double max_softmax = 0.0;
  double neg_entropy = 0.0;  // -H(p), higher = more confident
  double temp_scaling = 0.0;
};

inline double shannon_entropy(const Eigen::VectorXd& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0.0) h -= p(i) * std::log(p(i));
  }
  return h;
}

inline BaselineScores baseline_scores(const SimilarityProfile& profile, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidArgument, "scorer", "temperature must be positive");
  BaselineScores out;
  out.max_cosine = profile.cosines.maxCoeff();
  out.max_softmax = profile.softmax.maxCoeff();
  out.neg_entropy = -shannon_entropy(profile.softmax);
  out.temp_scaling = temperature == 1.0 ? out.max_softmax
                                        : softmax(profile.logit_scale / temperature * profile.cosines).maxCoeff();
  return out;
}

// ---------------------------------------------------------------------------
// Temperature scaling

/// Mean negative log-likelihood of `labels` under softmax(beta * cosines / T).
inline double temperature_nll(std::span<const SimilarityProfile> profiles, std::span<const std::uint32_t> labels,
                              double temperature) {
  double total = 0.0;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    const Eigen::VectorXd logits = profiles[i].logit_scale / temperature * profiles[i].cosines;
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    total += lse - logits(labels[i]);
  }
  return total / static_cast<double>(profiles.size());
}

/// NLL-optimal temperature by golden-section search on log T in [-3, 3].
/// Returns 1 when no profile has any spread in its cosines (flat objective).
inline double calibrate_temperature(std::span<const SimilarityProfile> profiles, std::span<const std::uint32_t> labels) {
  if (profiles.size() != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "scorer", "profiles and labels differ in length");
  }
  if (profiles.size() < 10) {
    throw Error(ErrorCode::TooFewSamples, "scorer",
                "temperature calibration needs at least 10 samples, got " + std::to_string(profiles.size()));
  }
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    if (labels[i] >= static_cast<std::size_t>(profiles[i].cosines.size())) {
      throw Error(ErrorCode::LabelOutOfRange, "scorer",
                  "calibration label " + std::to_string(labels[i]) + " has no cosine entry");
    }
  }
  const bool flat = std::all_of(profiles.begin(), profiles.end(), [](const SimilarityProfile& p) {
    return p.cosines.maxCoeff() == p.cosines.minCoeff();
  });
  if (flat) return 1.0;

  auto objective = [&](double log_t) { return temperature_nll(profiles, labels, std::exp(log_t)); };
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = -3.0, hi = 3.0;
  double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
  double f1 = objective(x1), f2 = objective(x2);
  while (hi - lo > 1e-4) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = objective(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = objective(x2);
    }
  }
  return std::exp(0.5 * (lo + hi));
}

// ---------------------------------------------------------------------------
// Dataset scoring

struct ScoredDictionary {
  std::string method;  // e.g. "Ours" or "Ours-D"
  const GaussianDictionary* dictionary = nullptr;
};

struct ScoringConfig {
  double logit_scale = kDefaultLogitScale;
  double temperature = 1.0;
  std::string split = "test";
  /// Classes the intra-class softmax runs over; empty = all dictionary classes.
  std::vector<std::uint32_t> queried_classes;
};

/// Everything computed for one test row.
struct SampleResult {
  SimilarityProfile profile;
  Prediction prediction;
  std::vector<UncertaintyScore> scores;  // fused methods first, then baselines
};

inline SampleResult score_sample(const Eigen::VectorXd& v, std::size_t sample_index, std::uint32_t true_class,
                                 const TextBank& bank, std::span<const ScoredDictionary> dicts,
                                 const ScoringConfig& config) {
  SampleResult out;
  auto [profile, pred] = classify(v, bank, config.logit_scale);
  pred.correct = pred.predicted_class == true_class;

  auto stamp = [&](UncertaintyScore s, std::string_view tag) {
    s.sample_index = sample_index;
    s.true_class = true_class;
    s.predicted_class = pred.predicted_class;
    s.correct = pred.correct;
    s.method = tag;
    s.p_max = profile.softmax.maxCoeff();
    return s;
  };

  for (const auto& d : dicts) {
    const Eigen::VectorXd z = project(d.dictionary->pca(), v);
    const auto intra = intra_class_score(*d.dictionary, z, pred.predicted_class, config.queried_classes);
    auto fused = fused_uncertainty(profile, intra.s_d);
    fused.log_likelihood = intra.log_likelihood;
    out.scores.push_back(stamp(std::move(fused), d.method));
  }

  const auto base = baseline_scores(profile, config.temperature);
  auto baseline = [&](std::string_view tag, double conf) {
    UncertaintyScore s;
    s.confidence = conf;
    out.scores.push_back(stamp(std::move(s), tag));
  };
  baseline(method::kMaxCosine, base.max_cosine);
  baseline(method::kMaxSoftmax, base.max_softmax);
  baseline(method::kEntropy, base.neg_entropy);
  baseline(method::kTempScaling, base.temp_scaling);

  out.profile = std::move(profile);
  out.prediction = pred;
  return out;
}

/// Scores every row of `config.split`; results are in split order, one entry
/// per method per sample. Predictions are shared by all methods.
inline std::vector<UncertaintyScore> score_dataset(const LabeledDataset& ds, const EmbeddingMatrix& text_bank,
                                                   std::span<const ScoredDictionary> dicts,
                                                   const ScoringConfig& config) {
  const auto& rows = ds.split(config.split);
  if (rows.empty()) {
    throw Error(ErrorCode::EmptyInput, "scorer", "split \"" + config.split + "\" is empty");
  }
  const TextBank bank(text_bank);
  std::vector<std::vector<UncertaintyScore>> per_row(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    const auto r = rows[i];
    per_row[i] = score_sample(ds.embeddings.row(r), r, ds.labels[r], bank, dicts, config).scores;
  });
  std::vector<UncertaintyScore> out;
  out.reserve(rows.size() * (dicts.size() + 4));
  for (auto& v : per_row) std::move(v.begin(), v.end(), std::back_inserter(out));
  return out;
}

/// Similarity profiles for a set of rows (used for temperature calibration).
inline std::vector<SimilarityProfile> similarity_profiles(const LabeledDataset& ds, std::span<const std::size_t> rows,
                                                          const EmbeddingMatrix& text_bank, double logit_scale) {
  const TextBank bank(text_bank);
  std::vector<SimilarityProfile> out(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) { out[i] = classify(ds.embeddings.row(rows[i]), bank, logit_scale).first; });
  return out;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr std::string_view kScoreCsvHeader =
    "sample_index,true_class,predicted_class,correct,method,confidence,p_max,s_d,log_likelihood,s_unc";

inline std::string scores_to_csv(std::span<const UncertaintyScore> scores) {
  std::string out(kScoreCsvHeader);
  out += '\n';
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& s : scores) {
    out += std::to_string(s.sample_index) + ',' + std::to_string(s.true_class) + ',' +
           std::to_string(s.predicted_class) + ',' + (s.correct ? "1" : "0") + ',' + s.method + ',' +
           format_double(s.confidence) + ',' + format_double(s.p_max) + ',' + opt(s.s_d) + ',' +
           opt(s.log_likelihood) + ',' + opt(s.s_unc) + '\n';
  }
  return out;
}

inline std::vector<UncertaintyScore> scores_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kScoreCsvHeader) {
    throw Error(ErrorCode::InvalidArgument, "scorer", "score CSV header mismatch");
  }
  std::vector<UncertaintyScore> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      f.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (f.size() != 10) throw Error(ErrorCode::InvalidArgument, "scorer", "score CSV row has " + std::to_string(f.size()) + " fields");
    auto opt = [](const std::string& v) -> std::optional<double> {
      if (v.empty()) return std::nullopt;
      return parse_double(v);
    };
    UncertaintyScore s;
    s.sample_index = std::stoull(f[0]);
    s.true_class = static_cast<std::uint32_t>(std::stoul(f[1]));
    s.predicted_class = static_cast<std::uint32_t>(std::stoul(f[2]));
    s.correct = f[3] == "1";
    s.method = f[4];
    s.confidence = parse_double(f[5]);
    s.p_max = parse_double(f[6]);
    s.s_d = opt(f[7]);
    s.log_likelihood = opt(f[8]);
    s.s_unc = opt(f[9]);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace vlmunc
