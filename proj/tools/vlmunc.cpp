// vlmunc: build class-Gaussian dictionaries over VLM embeddings, score test
// predictions, and evaluate error detection.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "vlmunc/commands.hpp"

namespace {

struct Flags {
  std::string manifest;
  std::string text_bank;
  std::size_t pca_dim = vlmunc::kDefaultPcaDim;
  std::string cov = "full";
  double logit_scale = vlmunc::kDefaultLogitScale;
  std::string temp = "fit";
  std::optional<std::size_t> max_per_class;
  std::string subsample = "random";
  std::uint64_t seed = 0;
  std::optional<double> tau;
  std::string tau_grid = "101";
  std::string shift_map;
  std::string out = ".";
  std::string dict_dir;
};

vlmunc::RunConfig to_config(const Flags& f) {
  vlmunc::RunConfig cfg;
  cfg.manifest = f.manifest;
  cfg.text_bank = f.text_bank;
  cfg.pca_dim = f.pca_dim;
  cfg.kind = vlmunc::parse_covariance_kind(f.cov);
  cfg.logit_scale = f.logit_scale;
  cfg.temperature = vlmunc::parse_temperature_flag(f.temp);
  cfg.max_per_class = f.max_per_class;
  cfg.subsample = vlmunc::parse_subsample_strategy(f.subsample);
  cfg.seed = f.seed;
  cfg.tau = f.tau;
  cfg.tau_grid = vlmunc::parse_tau_grid(f.tau_grid);
  if (!f.shift_map.empty()) cfg.shift_map = f.shift_map;
  cfg.out = f.out;
  if (!f.dict_dir.empty()) cfg.dict_dir = f.dict_dir;
  return cfg;
}

void add_run_flags(CLI::App* cmd, Flags& f, bool needs_text_bank) {
  cmd->add_option("--manifest", f.manifest, "Dataset manifest (JSON)")->required()->check(CLI::ExistingFile);
  auto* tb = cmd->add_option("--text-bank", f.text_bank, "Text embedding bank (VLME), one row per class");
  if (needs_text_bank) tb->required()->check(CLI::ExistingFile);
  cmd->add_option("--pca-dim", f.pca_dim, "Projected dimension k")->capture_default_str();
  cmd->add_option("--cov", f.cov, "Covariance kind")->check(CLI::IsMember({"full", "diag"}))->capture_default_str();
  cmd->add_option("--logit-scale", f.logit_scale, "Softmax logit scale beta")->capture_default_str();
  cmd->add_option("--temp", f.temp, "TempScaling temperature: fit | <float>")->capture_default_str();
  cmd->add_option("--max-per-class", f.max_per_class, "Cap on training rows per class");
  cmd->add_option("--subsample", f.subsample, "Row selection under --max-per-class")
      ->check(CLI::IsMember({"random", "first"}))
      ->capture_default_str();
  cmd->add_option("--seed", f.seed, "Seed for every random choice")->capture_default_str();
  cmd->add_option("--tau", f.tau, "Rejection threshold; also writes decisions.csv")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--tau-grid", f.tau_grid, "Point count over [0,1] or comma list of taus")->capture_default_str();
  cmd->add_option("--shift-map", f.shift_map, "Superclass map (JSON) for label shift")->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "Output directory")->capture_default_str();
  cmd->add_option("--dict-dir", f.dict_dir, "Directory holding pca.vlmp / dict_*.vlmd (default: --out)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Per-class Gaussian uncertainty scoring for zero-shot classifiers"};
  app.require_subcommand(1);

  Flags flags;
  auto* build = app.add_subcommand("build-dict", "Fit PCA and the class Gaussian dictionary");
  add_run_flags(build, flags, false);
  auto* evaluate = app.add_subcommand("evaluate", "Score the test split and write reports");
  add_run_flags(evaluate, flags, true);
  auto* diagnose = app.add_subcommand("diagnose", "Per-class covariance condition numbers, raw vs projected");
  add_run_flags(diagnose, flags, false);
  auto* sweep = app.add_subcommand("sweep-threshold", "F1 against the rejection threshold");
  add_run_flags(sweep, flags, false);

  vlmunc::GenSyntheticConfig gen;
  std::string gen_out = ".";
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "Write a seeded synthetic dataset");
  gen_cmd->add_option("--kind", gen.kind, "confusion | anisotropic")
      ->check(CLI::IsMember({"confusion", "anisotropic"}))
      ->capture_default_str();
  gen_cmd->add_option("--out", gen_out, "Output directory")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--classes", gen.confusion.classes, "Classes (confusion)")->capture_default_str();
  gen_cmd->add_option("--dims", gen.confusion.dims, "Embedding dims (confusion)")->capture_default_str();
  gen_cmd->add_option("--train-per-class", gen.confusion.train_per_class)->capture_default_str();
  gen_cmd->add_option("--test-per-class", gen.confusion.test_per_class)->capture_default_str();
  gen_cmd->add_option("--confusion-rate", gen.confusion.confusion_rate)->capture_default_str();

  std::string query_text, dict_text, map_out = "shift_map.json";
  std::optional<std::size_t> k_override;
  auto* shift_cmd = app.add_subcommand("shift-map", "Top-K text-similar dictionary classes per query class");
  shift_cmd->add_option("--query-text", query_text, "Query-class text bank (VLME)")->required()->check(CLI::ExistingFile);
  shift_cmd->add_option("--dict-text", dict_text, "Dictionary-class text bank (VLME)")->required()->check(CLI::ExistingFile);
  shift_cmd->add_option("--k", k_override, "Override K (default: round(N_dict / N_query))");
  shift_cmd->add_option("--out", map_out, "Output JSON path")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  CLI::App* active = app.get_subcommands().front();
  try {
    if (active == build) {
      const auto r = vlmunc::cmd_build_dict(to_config(flags));
      std::printf("wrote %s (%zu classes) and %s\n", r.dict_path.c_str(), r.entries, r.pca_path.c_str());
    } else if (active == evaluate) {
      const auto r = vlmunc::cmd_evaluate(to_config(flags));
      std::printf("T=%.4f\n%s", r.temperature, vlmunc::reports_table(r.reports).c_str());
    } else if (active == diagnose) {
      const auto rows = vlmunc::cmd_diagnose(to_config(flags));
      std::size_t flagged = 0;
      for (const auto& row : rows) flagged += !row.condition;
      std::printf("wrote condition.csv (%zu rows, %zu insufficient)\n", rows.size(), flagged);
    } else if (active == sweep) {
      const auto curves = vlmunc::cmd_sweep_threshold(to_config(flags));
      std::printf("wrote f1_sweep.csv (%zu methods)\n", curves.size());
    } else if (active == gen_cmd) {
      gen.out = gen_out;
      gen.anisotropic.seed = gen.seed;
      std::printf("wrote %s\n", vlmunc::cmd_gen_synthetic(gen).c_str());
    } else if (active == shift_cmd) {
      const auto map = vlmunc::cmd_shift_map(query_text, dict_text, k_override, map_out);
      std::printf("wrote %s (K=%zu)\n", map_out.c_str(), map.k);
    }
  } catch (const vlmunc::Error& e) {
    std::fprintf(stderr, "vlmunc %s: error in %s: %s\n", active->get_name().c_str(), e.module().c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "vlmunc %s: %s\n", active->get_name().c_str(), e.what());
    return 2;
  }
  return 0;
}
