#pragma once

// Batch commands behind the `vlmunc` CLI. Each command is a pure function of its
// input files, flags and seed; every output file is written atomically.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vlmunc/binary_io.hpp"
#include "vlmunc/embedding_store.hpp"
#include "vlmunc/error.hpp"
#include "vlmunc/format.hpp"
#include "vlmunc/gaussian_dict.hpp"
#include "vlmunc/hashing.hpp"
#include "vlmunc/label_shift.hpp"
#include "vlmunc/metrics.hpp"
#include "vlmunc/projector.hpp"
#include "vlmunc/scorer.hpp"
#include "vlmunc/synthetic.hpp"

namespace vlmunc {

namespace fs = std::filesystem;

struct RunConfig {
  fs::path manifest;
  fs::path text_bank;
  std::size_t pca_dim = kDefaultPcaDim;
  CovarianceKind kind = CovarianceKind::Full;
  double logit_scale = kDefaultLogitScale;
  std::optional<double> temperature;  // nullopt: fit on a held-out slice of train
  std::optional<std::size_t> max_per_class;
  SubsampleStrategy subsample = SubsampleStrategy::Random;
  std::uint64_t seed = 0;
  std::optional<double> tau;
  std::vector<double> tau_grid = default_tau_grid();
  std::optional<fs::path> shift_map;
  fs::path out = ".";
  std::optional<fs::path> dict_dir;  // where evaluate finds pca/dictionaries; defaults to `out`

  void validate() const {
    if (pca_dim < 1) throw Error(ErrorCode::InvalidArgument, "cli", "--pca-dim must be >= 1");
    if (!(logit_scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "cli", "--logit-scale must be > 0");
    if (temperature && !(*temperature > 0.0)) throw Error(ErrorCode::InvalidArgument, "cli", "--temp must be > 0");
    if (tau) (void)RejectionPolicy(*tau);
  }
};

/// "fit" or a positive number.
inline std::optional<double> parse_temperature_flag(const std::string& s) {
  if (s == "fit") return std::nullopt;
  const double t = parse_double(s);
  if (!(t > 0.0)) throw Error(ErrorCode::InvalidArgument, "cli", "--temp must be \"fit\" or a positive number");
  return t;
}

/// Either a point count N (N evenly spaced taus over [0, 1]) or a comma-separated list.
inline std::vector<double> parse_tau_grid(const std::string& s) {
  if (s.find(',') == std::string::npos && s.find('.') == std::string::npos) {
    const auto n = std::stoul(s);
    if (n < 1) throw Error(ErrorCode::InvalidArgument, "cli", "--tau-grid needs at least one point");
    return default_tau_grid(n);
  }
  std::vector<double> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    const double t = parse_double(item);
    if (!(t >= 0.0 && t <= 1.0)) throw Error(ErrorCode::InvalidArgument, "cli", "tau values must lie in [0, 1]");
    out.push_back(t);
  }
  return out;
}

namespace detail {

inline std::string dict_file_name(CovarianceKind kind) { return "dict_" + to_string(kind) + ".vlmd"; }

/// SHA-256 of the manifest and every file it references.
inline nlohmann::json input_hashes(const fs::path& manifest_path) {
  nlohmann::json hashes = nlohmann::json::object();
  hashes[manifest_path.filename().string()] = sha256_file(manifest_path);
  const auto manifest = nlohmann::json::parse(io::read_text(manifest_path, "cli"));
  const auto base = manifest_path.parent_path();
  auto add = [&](const std::string& rel) { hashes[rel] = sha256_file(base / rel); };
  add(manifest.at("embeddings").get<std::string>());
  add(manifest.at("labels").get<std::string>());
  if (manifest.contains("splits")) {
    for (const auto& [key, value] : manifest.at("splits").items()) {
      if (key.ends_with("_file")) add(value.get<std::string>());
    }
  }
  return hashes;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  io::write_text_atomic(path, j.dump(2) + "\n", "cli");
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cli", "cannot create " + dir.string() + ": " + ec.message());
}

inline LabeledDataset load_with_split(const fs::path& manifest, const std::string& split) {
  auto ds = load_dataset(manifest);
  if (!ds.has_split(split)) {
    throw Error(ErrorCode::UnknownSplit, "cli",
                manifest.string() + " has no \"" + split + "\" split");
  }
  return ds;
}

/// Seeded slice of the train split used to fit the temperature: 20% of train,
/// at least 10 rows.
inline std::vector<std::size_t> temperature_slice(const LabeledDataset& ds, std::uint64_t seed) {
  auto rows = ds.split("train");
  if (rows.size() < 10) {
    throw Error(ErrorCode::TooFewSamples, "scorer",
                "temperature fit needs >= 10 train rows; pass --temp <value> instead");
  }
  std::mt19937_64 rng(seed ^ 0x7e3d5a1bULL);
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(std::max<std::size_t>(10, rows.size() / 5));
  std::sort(rows.begin(), rows.end());
  return rows;
}

/// Dictionary class -> the query class that retrieves it at the best rank (lowest
/// query index on ties). Dictionary classes no query retrieves are absent.
inline std::map<std::uint32_t, std::uint32_t> coarse_labels(const SuperclassMap& m) {
  std::map<std::uint32_t, std::pair<std::size_t, std::uint32_t>> best;  // dict class -> (rank, query)
  for (const auto& [q, list] : m.map) {
    for (std::size_t rank = 0; rank < list.size(); ++rank) {
      auto [it, inserted] = best.try_emplace(list[rank], rank, q);
      if (!inserted && rank < it->second.first) it->second = {rank, q};
    }
  }
  std::map<std::uint32_t, std::uint32_t> out;
  for (const auto& [d, rq] : best) out[d] = rq.second;
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct BuildResult {
  fs::path pca_path;
  fs::path dict_path;
  std::size_t entries = 0;
};

/// Fits PCA on the train split and the class Gaussian dictionary (or, with a
/// shift map, the superclass dictionary keyed by query classes).
inline BuildResult cmd_build_dict(const RunConfig& cfg) {
  cfg.validate();
  const auto ds = detail::load_with_split(cfg.manifest, "train");
  detail::ensure_dir(cfg.out);

  const auto& train_rows = ds.split("train");
  if (train_rows.empty()) throw Error(ErrorCode::EmptyTrainSplit, "cli", "split \"train\" is empty");
  auto pca = std::make_shared<const PcaModel>(fit_pca(ds.embeddings.select_rows(train_rows), cfg.pca_dim));

  GaussianDictionary dict;
  std::optional<SuperclassMap> shift;
  if (cfg.shift_map) {
    shift = load_superclass_map(*cfg.shift_map);
    dict = build_superclass_dictionary(*shift, ds, pca, cfg.kind);
  } else {
    DictionaryBuildOptions opts;
    opts.kind = cfg.kind;
    opts.max_per_class = cfg.max_per_class;
    opts.seed = cfg.seed;
    opts.subsample = cfg.subsample;
    dict = build_dictionary(ds, pca, opts);
  }

  BuildResult result;
  result.pca_path = cfg.out / "pca.vlmp";
  result.dict_path = cfg.out / detail::dict_file_name(cfg.kind);
  save_pca(result.pca_path, *pca);
  save_dictionary(result.dict_path, dict);

  // Validate what was written.
  const auto reloaded_pca = std::make_shared<const PcaModel>(load_pca(result.pca_path));
  const auto reloaded = load_dictionary(result.dict_path, reloaded_pca);
  if (reloaded.size() != dict.size()) {
    throw Error(ErrorCode::IoFailure, "cli", "dictionary round-trip lost entries");
  }
  result.entries = dict.size();

  nlohmann::json prov = dict.provenance;
  prov["inputs"] = detail::input_hashes(cfg.manifest);
  prov["pca_dim"] = cfg.pca_dim;
  prov["entries"] = dict.size();
  prov["pca_sha256"] = sha256_file(result.pca_path);
  prov["dictionary_sha256"] = sha256_file(result.dict_path);
  if (shift) prov["shift_map_sha256"] = sha256_file(*cfg.shift_map);
  detail::write_json(cfg.out / ("dict_" + to_string(cfg.kind) + ".json"), prov);
  return result;
}

struct EvaluateResult {
  std::vector<EvaluationReport> reports;
  std::vector<UncertaintyScore> scores;
  double temperature = 1.0;
};

/// Scores the test split with every available method and writes scores.csv,
/// report_<method>.json, report.json, report.txt and run_metadata.json.
inline EvaluateResult cmd_evaluate(const RunConfig& cfg) {
  cfg.validate();
  const auto ds = detail::load_with_split(cfg.manifest, "test");
  if (ds.split("test").empty()) throw Error(ErrorCode::EmptyInput, "cli", "split \"test\" is empty");
  const auto bank = load_embeddings(cfg.text_bank);
  std::optional<SuperclassMap> shift;
  if (cfg.shift_map) shift = load_superclass_map(*cfg.shift_map);
  // Under label shift the bank holds the query (coarse) classes and test labels index it.
  const std::size_t expected_rows = shift ? shift->map.size() : ds.num_classes();
  if (bank.rows() != expected_rows) {
    throw Error(ErrorCode::DimensionMismatch, "cli",
                "text bank has " + std::to_string(bank.rows()) + " rows for " + std::to_string(expected_rows) +
                    (shift ? " query classes" : " classes"));
  }
  for (auto r : ds.split("test")) {
    if (ds.labels[r] >= bank.rows()) {
      throw Error(ErrorCode::LabelOutOfRange, "cli",
                  "test row " + std::to_string(r) + " has label " + std::to_string(ds.labels[r]) + " outside the text bank");
    }
  }
  const fs::path dict_dir = cfg.dict_dir.value_or(cfg.out);
  const auto pca = std::make_shared<const PcaModel>(load_pca(dict_dir / "pca.vlmp"));

  std::vector<std::pair<std::string, GaussianDictionary>> dicts;
  for (auto kind : {CovarianceKind::Full, CovarianceKind::Diagonal}) {
    const auto path = dict_dir / detail::dict_file_name(kind);
    if (fs::exists(path)) {
      dicts.emplace_back(std::string(kind == CovarianceKind::Full ? method::kOurs : method::kOursDiag),
                         load_dictionary(path, pca));
    }
  }
  if (dicts.empty()) {
    throw Error(ErrorCode::MissingFile, "cli", "no dictionary found in " + dict_dir.string() + "; run build-dict first");
  }
  std::vector<ScoredDictionary> scored;
  for (const auto& [tag, d] : dicts) scored.push_back({tag, &d});

  EvaluateResult result;
  if (cfg.temperature) {
    result.temperature = *cfg.temperature;
  } else {
    if (!ds.has_split("train")) {
      throw Error(ErrorCode::UnknownSplit, "cli", "--temp fit needs a \"train\" split; pass --temp <value> instead");
    }
    std::vector<std::size_t> slice;
    std::vector<std::uint32_t> labels;
    const auto coarse = shift ? detail::coarse_labels(*shift) : std::map<std::uint32_t, std::uint32_t>{};
    for (auto r : detail::temperature_slice(ds, cfg.seed)) {
      if (!shift) {
        slice.push_back(r);
        labels.push_back(ds.labels[r]);
      } else if (auto it = coarse.find(ds.labels[r]); it != coarse.end()) {
        slice.push_back(r);
        labels.push_back(it->second);
      }
    }
    const auto profiles = similarity_profiles(ds, slice, bank, cfg.logit_scale);
    result.temperature = calibrate_temperature(profiles, labels);
  }

  ScoringConfig sc;
  sc.logit_scale = cfg.logit_scale;
  sc.temperature = result.temperature;
  result.scores = score_dataset(ds, bank, scored, sc);

  detail::ensure_dir(cfg.out);
  io::write_text_atomic(cfg.out / "scores.csv", scores_to_csv(result.scores), "cli");

  nlohmann::json all = nlohmann::json::array();
  for (const auto& m : methods_in(result.scores)) {
    auto r = evaluate(m, samples_for(result.scores, m), cfg.tau_grid);
    auto j = report_to_json(r);
    if (shift) j["label_shift_k"] = shift->k;
    j["logit_scale"] = cfg.logit_scale;
    detail::write_json(cfg.out / ("report_" + m + ".json"), j);
    all.push_back(j);
    result.reports.push_back(std::move(r));
  }
  for (const auto& r : result.reports) {
    if (r.accuracy != result.reports.front().accuracy) {
      throw Error(ErrorCode::InvalidArgument, "scorer", "methods disagree on accuracy; predictions must be shared");
    }
  }
  detail::write_json(cfg.out / "report.json", all);
  io::write_text_atomic(cfg.out / "report.txt", reports_table(result.reports), "cli");

  if (cfg.tau) {
    const RejectionPolicy policy(*cfg.tau);
    std::string csv = "sample_index,method,s_unc,decision\n";
    for (const auto& s : result.scores) {
      if (!s.s_unc) continue;
      csv += std::to_string(s.sample_index) + ',' + s.method + ',' + format_double(*s.s_unc) + ',' +
             (policy.reject(*s.s_unc) ? "reject" : "retain") + '\n';
    }
    io::write_text_atomic(cfg.out / "decisions.csv", csv, "cli");
  }

  nlohmann::json meta;
  meta["logit_scale"] = cfg.logit_scale;
  meta["temperature"] = result.temperature;
  meta["temperature_mode"] = cfg.temperature ? "fixed" : "fit";
  meta["pca_dim"] = pca->output_dim();
  nlohmann::json kinds = nlohmann::json::array();
  for (const auto& [tag, d] : dicts) kinds.push_back(to_string(d.kind()));
  meta["covariance_kinds"] = kinds;
  meta["seed"] = cfg.seed;
  meta["tau"] = cfg.tau ? nlohmann::json(*cfg.tau) : nlohmann::json();
  meta["inputs"] = detail::input_hashes(cfg.manifest);
  meta["text_bank_sha256"] = sha256_file(cfg.text_bank);
  meta["pca_sha256"] = sha256_file(dict_dir / "pca.vlmp");
  if (shift) {
    meta["label_shift_k"] = shift->k;
    meta["shift_map_sha256"] = sha256_file(*cfg.shift_map);
  }
  detail::write_json(cfg.out / "run_metadata.json", meta);
  return result;
}

struct DiagnoseRow {
  std::uint32_t class_index = 0;
  std::string space;
  std::size_t samples = 0;
  std::optional<ClassCondition> condition;  // empty when the class has < 2 samples
};

/// Per-class log10 condition numbers in raw and projected space, written to
/// condition.csv. Classes with fewer than 2 train rows are flagged "insufficient".
inline std::vector<DiagnoseRow> cmd_diagnose(const RunConfig& cfg) {
  cfg.validate();
  const auto ds = detail::load_with_split(cfg.manifest, "train");
  const auto& train_rows = ds.split("train");
  const auto pca = fit_pca(ds.embeddings.select_rows(train_rows), cfg.pca_dim);
  const auto projected = project(pca, ds.embeddings);

  std::vector<std::vector<std::size_t>> rows_of(ds.num_classes());
  for (auto r : train_rows) rows_of[ds.labels[r]].push_back(r);

  std::vector<DiagnoseRow> out(2 * ds.num_classes());
  parallel_for(ds.num_classes(), [&](std::size_t c) {
    const auto& idx = rows_of[c];
    for (int s = 0; s < 2; ++s) {
      auto& row = out[2 * c + static_cast<std::size_t>(s)];
      row.class_index = static_cast<std::uint32_t>(c);
      row.space = s == 0 ? "raw" : "projected";
      row.samples = idx.size();
      if (idx.size() >= 2) {
        const auto& source = s == 0 ? ds.embeddings : projected;
        row.condition = class_condition(source.select_rows(idx), static_cast<std::uint32_t>(c));
      }
    }
  });

  std::string csv = "class_index,class_name,space,samples,lambda_max,lambda_min,log10_condition,status\n";
  for (const auto& row : out) {
    csv += std::to_string(row.class_index) + ',' + ds.class_names[row.class_index] + ',' + row.space + ',' +
           std::to_string(row.samples) + ',';
    if (row.condition) {
      const auto& c = *row.condition;
      csv += format_double(c.lambda_max) + ',' + format_double(c.lambda_min) + ',' + format_double(c.log10_condition) +
             ',' + (c.rank_deficient ? "rank_deficient" : "ok");
    } else {
      csv += ",,,insufficient";
    }
    csv += '\n';
  }
  detail::ensure_dir(cfg.out);
  io::write_text_atomic(cfg.out / "condition.csv", csv, "cli");
  return out;
}

/// F1 against tau for every method in scores.csv (evaluating first when the
/// file is absent), written to f1_sweep.csv.
inline std::map<std::string, std::vector<std::pair<double, double>>> cmd_sweep_threshold(const RunConfig& cfg) {
  cfg.validate();
  const auto scores_path = cfg.out / "scores.csv";
  std::vector<UncertaintyScore> scores;
  if (fs::exists(scores_path)) {
    scores = scores_from_csv(io::read_text(scores_path, "cli"));
  } else {
    scores = cmd_evaluate(cfg).scores;
  }
  if (scores.empty()) throw Error(ErrorCode::EmptyInput, "cli", "no scored samples to sweep");

  std::map<std::string, std::vector<std::pair<double, double>>> curves;
  std::string csv = "method,tau,f1\n";
  for (const auto& m : methods_in(scores)) {
    const auto curve = f1_sweep(samples_for(scores, m), cfg.tau_grid);
    for (const auto& [tau, f1] : curve) csv += m + ',' + format_double(tau) + ',' + format_double(f1) + '\n';
    curves[m] = curve;
  }
  io::write_text_atomic(cfg.out / "f1_sweep.csv", csv, "cli");
  return curves;
}

struct GenSyntheticConfig {
  std::string kind = "confusion";  // or "anisotropic"
  fs::path out = ".";
  std::uint64_t seed = 0;
  synthetic::ConfusionOptions confusion;
  synthetic::AnisotropicOptions anisotropic;
};

/// Writes data.json (+ .vlme/.vlml) and, for the confusion benchmark, text_bank.vlme.
inline fs::path cmd_gen_synthetic(const GenSyntheticConfig& cfg) {
  detail::ensure_dir(cfg.out);
  const auto manifest = cfg.out / "data.json";
  if (cfg.kind == "confusion") {
    auto opts = cfg.confusion;
    opts.seed = cfg.seed;
    const auto bench = synthetic::make_confusion_benchmark(opts);
    save_dataset(bench.dataset, manifest, true);
    save_embeddings(cfg.out / "text_bank.vlme", bench.text_bank);
  } else if (cfg.kind == "anisotropic") {
    auto opts = cfg.anisotropic;
    opts.seed = cfg.seed;
    save_dataset(synthetic::make_anisotropic_dataset(opts), manifest, false);
  } else {
    throw Error(ErrorCode::InvalidArgument, "cli", "unknown synthetic kind \"" + cfg.kind + "\"");
  }
  return manifest;
}

/// Builds the query -> dictionary class map from two text banks.
inline SuperclassMap cmd_shift_map(const fs::path& query_text, const fs::path& dict_text,
                                   std::optional<std::size_t> k_override, const fs::path& out_path) {
  const auto map = build_superclass_map(load_embeddings(query_text), load_embeddings(dict_text), k_override);
  save_superclass_map(out_path, map);
  return map;
}

}  // namespace vlmunc
