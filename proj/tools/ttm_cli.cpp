// Command-line front end: metrics, Simple Match, TTM (grouped and global),
// synthetic data, and the random-guessing proposition check.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "ttm/ttm.hpp"

namespace {

namespace fs = std::filesystem;

struct Inputs {
  std::string manifest;
  std::string embeddings;
  std::string scores;
};

void add_inputs(CLI::App* cmd, Inputs& in, bool allow_scores) {
  cmd->add_option("manifest", in.manifest, "Dataset manifest (JSON)")->required();
  auto* emb = cmd->add_option("--embeddings", in.embeddings, "Embedding sidecar or binary");
  if (allow_scores) {
    auto* sc = cmd->add_option("--scores", in.scores, "Similarity score CSV");
    emb->excludes(sc);
  } else {
    // Parsed only to reject it with a useful message.
    cmd->add_option("--scores", in.scores, "Not supported: TTM needs embeddings");
  }
}

struct Loaded {
  ttm::GroupedDataset dataset;
  std::vector<ttm::SimilarityMatrix> scores;  // raw model scores, dataset order
  std::optional<ttm::EmbeddingTable> table;
};

Loaded load_for_eval(const Inputs& in) {
  Loaded out;
  out.dataset = ttm::io::load_manifest(in.manifest);
  if (!in.scores.empty()) {
    const ttm::ScoreStore store = ttm::io::load_scores(in.scores, out.dataset);
    ttm::require_valid(ttm::validate_dataset(out.dataset, store));
    for (const auto& g : out.dataset.groups) out.scores.push_back(store.at(g.id));
  } else if (!in.embeddings.empty()) {
    out.table = ttm::io::load_embeddings(in.embeddings);
    ttm::require_valid(ttm::validate_dataset(out.dataset, *out.table));
    const auto plain = ttm::AdapterParams::identity(out.table->dim(), 1.0, 0.0);
    out.scores = ttm::score_dataset(plain, out.dataset, *out.table);
  } else {
    ttm::fail(ttm::ErrorKind::kValidation, "one of --embeddings or --scores is required");
  }
  return out;
}

std::pair<ttm::GroupedDataset, ttm::EmbeddingTable> load_for_training(const Inputs& in) {
  if (!in.scores.empty())
    ttm::fail(ttm::ErrorKind::kValidation,
              "score-only input cannot be finetuned; TTM requires --embeddings");
  if (in.embeddings.empty()) ttm::fail(ttm::ErrorKind::kValidation, "--embeddings is required");
  auto dataset = ttm::io::load_manifest(in.manifest);
  auto table = ttm::io::load_embeddings(in.embeddings);
  ttm::require_valid(ttm::validate_dataset(dataset, table));
  return {std::move(dataset), std::move(table)};
}

std::string pct(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

struct TrainFlags {
  std::string schedule = "linear-decay";
  int iterations = 10;
  int epochs = 20;
  double lr = 1e-3;
  int batch = 50;
  std::uint64_t seed = 0;
  std::string loss = "sigmoid";
  bool keep_optimizer = false;
  double temperature = 10.0;
  double bias = -10.0;
  std::string out_dir;
  std::string out_file;
  bool record_timing = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--schedule", f.schedule, "constant|linear-decay|cosine-decay|linear-ascend")
      ->capture_default_str();
  cmd->add_option("--iters", f.iterations, "Number of TTM iterations T")->capture_default_str();
  cmd->add_option("--epochs", f.epochs, "Epochs per iteration")->capture_default_str();
  cmd->add_option("--lr", f.lr, "Base learning rate")->capture_default_str();
  cmd->add_option("--batch", f.batch, "Batch size (groups, or pairs for ttm-global)")
      ->capture_default_str();
  cmd->add_option("--seed", f.seed, "RNG seed")->capture_default_str();
  cmd->add_option("--loss", f.loss, "sigmoid|softmax")->capture_default_str();
  cmd->add_flag("--keep-optimizer", f.keep_optimizer, "Do not reset AdamW state between iterations");
  cmd->add_option("--init-temperature", f.temperature)->capture_default_str();
  cmd->add_option("--init-bias", f.bias)->capture_default_str();
  cmd->add_option("--out", f.out_file, "Write the run report to this file");
  cmd->add_option("--out-dir", f.out_dir, "Write the run report as <dir>/<kind>-<utc>-seed<S>.json");
  cmd->add_flag("--record-timing", f.record_timing, "Include wall-clock time in the report");
}

ttm::TtmConfig make_config(const TrainFlags& f) {
  ttm::TtmConfig c;
  c.schedule.kind = ttm::io::parse_schedule_kind(f.schedule);
  c.schedule.iterations = f.iterations;
  c.train.epochs = f.epochs;
  c.train.learning_rate = f.lr;
  c.train.batch_size = f.batch;
  c.train.loss = ttm::io::parse_loss_kind(f.loss);
  c.train.reset_optimizer = !f.keep_optimizer;
  c.seed = f.seed;
  c.init_temperature = f.temperature;
  c.init_bias = f.bias;
  return c;
}

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

int emit_report(const ttm::RunReport& report, const TrainFlags& f, const std::string& kind) {
  const std::string text = ttm::io::report_to_json(report, f.record_timing).dump(2) + "\n";
  if (!f.out_file.empty()) ttm::io::detail::write_text(f.out_file, text);
  if (!f.out_dir.empty()) {
    const fs::path path = fs::path(f.out_dir) /
                          (kind + "-" + utc_stamp() + "-seed" + std::to_string(report.seed) + ".json");
    if (fs::exists(path)) ttm::fail(ttm::ErrorKind::kIo, "report '" + path.string() + "' already exists");
    ttm::io::detail::write_text(path, text);
    std::cerr << "report written to " << path.string() << "\n";
  }
  if (f.out_file.empty() && f.out_dir.empty()) std::cout << text;
  if (report.aborted) {
    std::cerr << "aborted: " << *report.aborted << "\n";
    return ttm::exit_code(ttm::ErrorKind::kDivergence);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Matching-based evaluation and test-time matching over grouped image-caption data"};
  app.require_subcommand(1);

  // eval
  Inputs eval_in;
  std::string metric = "all";
  auto* eval = app.add_subcommand("eval", "Evaluate GroupScore / GroupMatch / individual matching");
  add_inputs(eval, eval_in, true);
  eval->add_option("--metric", metric, "all|group-score|group-match|individual")
      ->check(CLI::IsMember({"all", "group-score", "group-match", "individual"}))
      ->capture_default_str();

  // simple-match
  Inputs sm_in;
  bool overfit_check = false;
  auto* sm = app.add_subcommand("simple-match", "Raw GroupScore vs. Simple Match (GroupMatch)");
  add_inputs(sm, sm_in, true);
  sm->add_flag("--overfit-check", overfit_check,
               "Also overfit to each induced matching and report the resulting GroupScore");

  // ttm
  Inputs ttm_in;
  TrainFlags ttm_flags;
  double tau_start = 2.0, tau_end = 0.0;
  bool oracle = false;
  std::optional<double> calibrate_frac;
  auto* ttm_cmd = app.add_subcommand("ttm", "Grouped test-time matching");
  add_inputs(ttm_cmd, ttm_in, false);
  add_train_flags(ttm_cmd, ttm_flags);
  ttm_cmd->add_option("--tau-start", tau_start, "Initial margin threshold")->capture_default_str();
  ttm_cmd->add_option("--tau-end", tau_end, "Final margin threshold")->capture_default_str();
  ttm_cmd->add_flag("--oracle", oracle, "Keep only pseudo-labels that match the ground truth");
  ttm_cmd->add_option("--calibrate-frac", calibrate_frac,
                      "Set tau-start so this fraction of groups is selected at iteration 0");

  // ttm-global
  Inputs glob_in;
  TrainFlags glob_flags;
  const ttm::TtmConfig glob_defaults = ttm::global_defaults();
  glob_flags.batch = static_cast<int>(glob_defaults.train.batch_size);
  glob_flags.lr = glob_defaults.train.learning_rate;
  double p_start = glob_defaults.schedule.start, p_end = glob_defaults.schedule.end;
  bool glob_oracle = false;
  auto* glob = app.add_subcommand("ttm-global", "Global (flattened) test-time matching");
  add_inputs(glob, glob_in, false);
  add_train_flags(glob, glob_flags);
  glob->add_option("--percentile-start", p_start, "Initial percentile threshold in [0,1]")
      ->capture_default_str();
  glob->add_option("--percentile-end", p_end, "Final percentile threshold in [0,1]")
      ->capture_default_str();
  glob->add_flag("--oracle", glob_oracle, "Keep only correctly matched pairs");

  // synth
  ttm::SynthConfig synth_cfg;
  std::string shape_text = "2,2";
  std::string out_dir;
  bool calibrate = false;
  auto* synth = app.add_subcommand("synth", "Generate a planted synthetic dataset");
  synth->add_option("--groups", synth_cfg.n_groups)->capture_default_str();
  synth->add_option("--shape", shape_text, "m,k")->capture_default_str();
  synth->add_option("--dim", synth_cfg.dim)->capture_default_str();
  synth->add_option("--sigma", synth_cfg.noise, "Noise scale")->capture_default_str();
  synth->add_option("--anchor", synth_cfg.anchor_weight, "Shared within-group weight")
      ->capture_default_str();
  synth->add_option("--mu", synth_cfg.signal, "Concept signal weight")->capture_default_str();
  synth->add_option("--modality-mix", synth_cfg.modality_mix,
                    "Weight of the dataset-wide caption-side rotation in [0,1]")
      ->capture_default_str();
  synth->add_option("--seed", synth_cfg.seed)->capture_default_str();
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_flag("--calibrate", calibrate,
                  "Choose sigma so that raw GroupScore lands in [10, 30]");

  // validate-props
  std::size_t max_k = 4;
  std::uint64_t trials = 1'000'000, vp_seed = 0;
  std::string vp_json;
  auto* vp = app.add_subcommand("validate-props", "Monte Carlo check of random-guessing probabilities");
  vp->add_option("--max-k", max_k)->capture_default_str();
  vp->add_option("--trials", trials)->capture_default_str();
  vp->add_option("--seed", vp_seed)->capture_default_str();
  vp->add_option("--json", vp_json, "Also write the table as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*eval) {
      const Loaded l = load_for_eval(eval_in);
      const ttm::MetricSummary m = ttm::run_simple_match(l.scores, l.dataset);
      std::cout << "groups " << l.dataset.groups.size() << "  shape "
                << ttm::to_string(l.dataset.shape) << "\n";
      if (metric == "all" || metric == "group-score") std::cout << "group_score       " << pct(m.group_score) << "\n";
      if (metric == "all" || metric == "group-match") std::cout << "group_match       " << pct(m.group_match) << "\n";
      if (metric == "all" || metric == "individual") std::cout << "individual_match  " << pct(m.individual_match) << "\n";
      return 0;
    }
    if (*sm) {
      const Loaded l = load_for_eval(sm_in);
      const ttm::MetricSummary m = ttm::run_simple_match(l.scores, l.dataset);
      std::cout << "Raw (GroupScore)           " << pct(m.group_score) << "\n"
                << "SimpleMatch (GroupMatch)   " << pct(m.group_match) << "\n"
                << "Individual matching        " << pct(m.individual_match) << "\n";
      if (overfit_check) {
        const double overfit = ttm::simple_match_overfit_score(l.scores, l.dataset);
        std::cout << "Overfit GroupScore         " << pct(overfit) << "\n";
        if (overfit != m.group_match) {
          std::cerr << "overfit GroupScore differs from GroupMatch (tied matchings present)\n";
          return 1;
        }
      }
      return 0;
    }
    if (*ttm_cmd) {
      auto [dataset, table] = load_for_training(ttm_in);
      ttm::TtmConfig config = make_config(ttm_flags);
      config.schedule.start = tau_start;
      config.schedule.end = tau_end;
      config.schedule.mode = ttm::ThresholdMode::kAbsoluteMargin;
      config.oracle_mode = oracle;
      config.calibrate_fraction = calibrate_frac;
      const ttm::TtmResult result = ttm::run_ttm(dataset, table, config);
      return emit_report(result.report, ttm_flags, "ttm");
    }
    if (*glob) {
      auto [dataset, table] = load_for_training(glob_in);
      const ttm::FlatDataset flat = ttm::flatten(dataset);
      ttm::TtmConfig config = make_config(glob_flags);
      config.schedule.start = p_start;
      config.schedule.end = p_end;
      config.schedule.mode = ttm::ThresholdMode::kPercentile;
      config.oracle_mode = glob_oracle;
      const ttm::TtmResult result = ttm::run_global_ttm(flat, table, config);
      return emit_report(result.report, glob_flags, "ttm-global");
    }
    if (*synth) {
      std::size_t m = 0, k = 0;
      char comma = 0;
      std::istringstream ss(shape_text);
      if (!(ss >> m >> comma >> k) || comma != ',')
        ttm::fail(ttm::ErrorKind::kValidation, "--shape expects m,k");
      synth_cfg.shape = ttm::make_shape(m, k);
      if (calibrate) {
        std::vector<double> grid;
        for (double s = 0.2; s <= 4.0 + 1e-9; s += 0.1) grid.push_back(s);
        const auto cal = ttm::calibrate_noise(synth_cfg, grid);
        synth_cfg.noise = cal.noise;
        std::cerr << "calibrated sigma " << cal.noise << " (raw group_score "
                  << pct(cal.raw_group_score) << ")\n";
      }
      const ttm::SynthData data = ttm::generate(synth_cfg);
      const fs::path dir(out_dir);
      ttm::io::save_manifest(dir / "manifest.json", data.dataset);
      ttm::io::save_embeddings(dir / "embeddings.json", data.table);
      std::cout << "wrote " << (dir / "manifest.json").string() << " and "
                << (dir / "embeddings.{json,bin}").string() << "\n";
      return 0;
    }
    if (*vp) {
      const ttm::PropositionTable table = ttm::check_propositions(max_k, trials, vp_seed);
      std::printf("%-6s %-12s %12s %10s %14s %8s %s\n", "shape", "metric", "estimate", "stderr",
                  "closed_form", "z", "status");
      for (const auto& r : table.rows) {
        std::ostringstream exact;
        exact << r.expected.exact;
        std::printf("%-6s %-12s %12.6f %10.6f %14s %8.2f %s\n", ttm::to_string(r.shape).c_str(),
                    ttm::to_string(r.metric), r.estimate.estimate, r.estimate.standard_error,
                    exact.str().c_str(), r.deviation, r.pass ? "PASS" : "FAIL");
      }
      for (const auto& [shape, ok] : table.ordering)
        std::printf("ordering %-6s group_match >= group_score: %s\n", ttm::to_string(shape).c_str(),
                    ok ? "PASS" : "FAIL");
      if (!vp_json.empty())
        ttm::io::detail::write_text(vp_json, ttm::io::propositions_to_json(table).dump(2) + "\n");
      return table.all_pass() ? 0 : 1;
    }
  } catch (const ttm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ttm::exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ttm::exit_code(ttm::ErrorKind::kIo);
  }
  return 0;
}
