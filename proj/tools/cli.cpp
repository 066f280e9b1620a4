#include "cli.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "manifest.hpp"
#include "transact/analytics.hpp"
#include "transact/calib.hpp"
#include "transact/corpus.hpp"
#include "transact/error.hpp"
#include "transact/eval.hpp"
#include "transact/kernels.hpp"
#include "transact/model_io.hpp"
#include "transact/pruner.hpp"
#include "transact/scheduler.hpp"
#include "transact/toy.hpp"

namespace fs = std::filesystem;

namespace transact::cli {
namespace {

void setup_logging() {
  static bool done = false;
  if (!done) {
    auto logger = spdlog::stderr_logger_mt("transact");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    done = true;
  }
  const char* env = std::getenv("TRANSACT_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else spdlog::set_level(spdlog::level::info);
}

void require_file(const std::string& path, const char* flag) {
  if (!fs::exists(path)) throw IoError(std::string(flag) + ": file not found: " + path);
}

nlohmann::json read_json(const std::string& path) {
  require_file(path, "--config");
  std::ifstream in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

std::vector<std::uint64_t> parse_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t pos = 0;
      out.push_back(std::stoull(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--ctx: '" + item + "' is not a non-negative integer");
    }
  }
  return out;
}

// ---------------------------------------------------------------- calibrate
struct CalibrateArgs {
  std::string model, corpus, out;
  std::size_t samples = kDefaultCalibSamples;
  std::size_t seqlen = 128;
  std::optional<std::uint64_t> seed;
};

void run_calibrate(const CalibrateArgs& a, std::ostream& out) {
  require_file(a.model, "--model");
  require_file(a.corpus, "--corpus");
  if (!a.seed) throw ConfigError("calib_seed: --calib-seed is required");
  RunManifest manifest("calibrate");
  manifest.add_input(a.model);
  manifest.add_input(a.corpus);
  manifest.add_seed("calib", *a.seed);
  manifest.set_config({{"calib_samples", a.samples}, {"calib_seqlen", a.seqlen}, {"calib_seed", *a.seed}});

  const auto model = load_model(a.model);
  const auto corpus = read_token_stream(a.corpus);
  const auto calib = draw_calib_set(corpus, a.samples, a.seqlen, *a.seed);
  const auto stats = collect_stats(model, calib);
  save_stats(stats, a.out,
             {{"model", a.model}, {"corpus", a.corpus}, {"samples", a.samples}, {"seq_len", a.seqlen},
              {"seed", *a.seed}, {"token_count", stats.token_count}});
  manifest.add_output(a.out);
  manifest.write(a.out + ".manifest.json");
  out << nlohmann::json{{"stats", a.out}, {"token_count", stats.token_count}}.dump() << '\n';
}

// ---------------------------------------------------------------- prune
struct PruneArgs {
  std::string model, stats, out, report;
  std::size_t target_heads = 0, target_mlp = 0;
  double alpha = 1.0;
  std::string metric = "transact";
  std::string outlier = "channel-norm";
  std::optional<std::uint64_t> seed;
};

void run_prune(const PruneArgs& a, std::ostream& out) {
  require_file(a.model, "--model");
  MetricConfig mc;
  mc.alpha = a.alpha;
  mc.metric = parse_metric(a.metric);
  mc.outlier = parse_outlier_mode(a.outlier);
  if (mc.metric == Metric::random) {
    if (!a.seed) throw ConfigError("seed: --seed is required for metric=random");
    mc.random_seed = *a.seed;
  }
  RunManifest manifest("prune");
  manifest.add_input(a.model);
  std::optional<CalibStats> stats;
  nlohmann::json provenance = nlohmann::json::object();
  if (mc.metric == Metric::transact) {
    if (a.stats.empty()) throw ConfigError("stats: --stats is required for metric=transact");
    require_file(a.stats, "--stats");
    manifest.add_input(a.stats);
    stats = load_stats(a.stats, &provenance);
  }
  manifest.set_config({{"target_heads", a.target_heads},
                       {"target_mlp", a.target_mlp},
                       {"alpha", a.alpha},
                       {"metric", a.metric},
                       {"outlier_mode", a.outlier}});
  if (a.seed) manifest.add_seed("random", *a.seed);

  const auto model = load_model(a.model);
  auto report = build_report(model, stats ? &*stats : nullptr, mc, {a.target_heads, a.target_mlp});
  report.provenance = {{"stats", a.stats}, {"stats_provenance", provenance}, {"model", a.model}};
  const auto pruned = prune_model(model, report);
  save_model(pruned, a.out);
  manifest.add_output(a.out);
  if (!a.report.empty()) {
    write_text(a.report, to_json(report).dump(2) + "\n");
    manifest.add_output(a.report);
  }
  manifest.write(a.out + ".manifest.json");
  out << nlohmann::json{{"model", a.out}, {"n_heads", pruned.config.n_heads}, {"mlp_dim", pruned.config.mlp_dim}}.dump()
      << '\n';
}

// ---------------------------------------------------------------- schedule
struct ScheduleArgs {
  std::string config, model, corpus, outdir;
};

void run_schedule_cmd(const ScheduleArgs& a, std::ostream& out) {
  require_file(a.model, "--model");
  require_file(a.corpus, "--corpus");
  const auto j = read_json(a.config);
  RunManifest manifest("schedule");
  manifest.add_input(a.config);
  manifest.add_input(a.model);
  manifest.add_input(a.corpus);
  manifest.set_config(j);

  PruneTarget target;
  std::size_t n_shots = 1;
  Interpolation interp = Interpolation::linear;
  ScheduleRunOptions opts;
  RecoveryKind recovery = RecoveryKind::none;
  double lambda = 1e-3;
  bool recalibrate = true;
  try {
    target.n_heads = j.at("target_heads").get<std::size_t>();
    target.mlp_dim = j.at("target_mlp").get<std::size_t>();
    n_shots = j.value("n_shots", std::size_t{1});
    interp = parse_interpolation(j.value("interpolation", std::string("linear")));
    recovery = parse_recovery(j.value("recovery", std::string("none")));
    lambda = j.value("lambda", 1e-3);
    recalibrate = j.value("recalibrate", true);
    if (!j.contains("seeds")) throw ConfigError("seeds: required ({calib, random})");
    const auto& seeds = j.at("seeds");
    opts.calib_seed = seeds.at("calib").get<std::uint64_t>();
    opts.metric.random_seed = seeds.value("random", opts.calib_seed);
    opts.metric.metric = parse_metric(j.value("metric", std::string("transact")));
    opts.metric.alpha = j.value("alpha", 1.0);
    opts.metric.outlier = parse_outlier_mode(j.value("outlier_mode", std::string("channel-norm")));
    opts.calib_samples = j.value("calib_samples", kDefaultCalibSamples);
    opts.calib_seqlen = j.value("calib_seqlen", std::size_t{128});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schedule config: ") + e.what());
  }
  manifest.add_seed("calib", opts.calib_seed);
  manifest.add_seed("random", opts.metric.random_seed);

  const auto model = load_model(a.model);
  const auto corpus = read_token_stream(a.corpus);
  auto schedule = plan_schedule(model.config, target, n_shots, interp);
  schedule.recovery = recovery;
  schedule.lambda = lambda;
  schedule.recalibrate_each_shot = recalibrate;
  opts.outdir = a.outdir;
  const auto outcome = run_schedule(model, corpus, schedule, opts);

  nlohmann::json plan = nlohmann::json::array();
  for (std::size_t i = 0; i < schedule.shots.size(); ++i) {
    plan.push_back({{"shot", i + 1},
                    {"n_heads", schedule.shots[i].n_heads},
                    {"attn_dim", schedule.shots[i].n_heads * model.config.head_dim},
                    {"mlp_dim", schedule.shots[i].mlp_dim},
                    {"ratio", schedule.ratios[i]}});
    manifest.add_output((fs::path(a.outdir) / ("shot_" + std::to_string(i + 1) + ".model")).string());
    manifest.add_output((fs::path(a.outdir) / ("shot_" + std::to_string(i + 1) + ".report.json")).string());
  }
  const auto plan_path = (fs::path(a.outdir) / "schedule.json").string();
  write_text(plan_path, nlohmann::json{{"total_ratio", schedule.total_ratio}, {"shots", plan}}.dump(2) + "\n");
  manifest.add_output(plan_path);
  manifest.add_output((fs::path(a.outdir) / "schedule.log.jsonl").string());
  manifest.write((fs::path(a.outdir) / "manifest.json").string());
  out << nlohmann::json{{"outdir", a.outdir}, {"shots", schedule.shots.size()}}.dump() << '\n';
}

// ---------------------------------------------------------------- analyze
struct AnalyzeArgs {
  std::string config, ref, out, ctx = "256,512,1024,2048,4096";
  std::uint64_t seq = 4096;
  std::uint64_t dtype_bytes = 2;
};

void run_analyze(const AnalyzeArgs& a, std::ostream& out) {
  require_file(a.config, "--config");
  const auto cfg = load_config(a.config, /*allow_zero_layers=*/true);
  const auto ctx = parse_list(a.ctx);
  auto report = analytics::cost_report(fs::path(a.config).stem().string(), cfg, a.seq, ctx, a.dtype_bytes);
  std::optional<analytics::CostReport> ref;
  if (!a.ref.empty()) {
    require_file(a.ref, "--ref");
    ref = analytics::cost_report(fs::path(a.ref).stem().string(), load_config(a.ref, true), a.seq, ctx, a.dtype_bytes);
    analytics::compare(report, *ref);
  }
  std::string text;
  const bool csv = fs::path(a.out).extension() == ".csv";
  if (csv) {
    text = analytics::csv_header() + analytics::csv_rows(report);
    if (ref) text += analytics::csv_rows(*ref);
  } else {
    nlohmann::json j = analytics::to_json(report);
    if (ref) j["reference"] = analytics::to_json(*ref);
    text = j.dump(2) + "\n";
  }
  if (a.out.empty()) {
    out << text;
    return;
  }
  RunManifest manifest("analyze");
  manifest.add_input(a.config);
  if (!a.ref.empty()) manifest.add_input(a.ref);
  manifest.set_config({{"seq", a.seq}, {"ctx", ctx}, {"dtype_bytes", a.dtype_bytes}});
  write_text(a.out, text);
  manifest.add_output(a.out);
  manifest.write(a.out + ".manifest.json");
  out << nlohmann::json{{"report", a.out}, {"kv_cache_values", report.kv_cache_values},
                        {"params_total", report.params.total}}
             .dump()
      << '\n';
}

// ---------------------------------------------------------------- eval
struct EvalArgs {
  std::string model, stream, out;
  std::size_t window = 1024;
  bool nll = false;
};

void run_eval(const EvalArgs& a, std::ostream& out) {
  require_file(a.model, "--model");
  require_file(a.stream, "--stream");
  RunManifest manifest("eval");
  manifest.add_input(a.model);
  manifest.add_input(a.stream);
  manifest.set_config({{"window", a.window}});
  const auto model = load_model(a.model);
  const auto stream = read_token_stream(a.stream);
  const auto r = perplexity(model, stream, a.window, a.nll);
  const auto j = to_json(r);
  if (a.out.empty()) {
    out << j.dump(2) << '\n';
    return;
  }
  write_text(a.out, j.dump(2) + "\n");
  manifest.add_output(a.out);
  manifest.write(a.out + ".manifest.json");
  out << nlohmann::json{{"perplexity", r.perplexity}, {"token_count", r.token_count}}.dump() << '\n';
}

// ---------------------------------------------------------------- sweep
struct SweepArgs {
  std::string grid, corpus, out;
  std::size_t seeds = 5;
};

void run_sweep(const SweepArgs& a, std::ostream& out) {
  const auto j = read_json(a.grid);
  require_file(a.corpus, "--corpus");
  if (!j.contains("model") || !j["model"].is_string()) throw ConfigError("model: grid must name a model file");
  // Relative paths in the grid file are resolved against its directory.
  const auto base_dir = fs::path(a.grid).parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? p : (base_dir / p).string(); };
  const auto model_path = resolve(j["model"].get<std::string>());
  require_file(model_path, "grid.model");
  auto spec = sweep_spec_from_json(j);
  spec.n_seeds = a.seeds;
  RunManifest manifest("sweep");
  manifest.add_input(a.grid);
  manifest.add_input(a.corpus);
  manifest.add_input(model_path);
  manifest.set_config(j);
  for (std::size_t s = 0; s < spec.n_seeds; ++s) manifest.add_seed("seed_" + std::to_string(s), spec.base_seed + s);

  const auto model = load_model(model_path);
  const auto corpus = read_token_stream(a.corpus);
  std::vector<Token> calib_part, heldout;
  if (j.contains("heldout")) {
    const auto hp = resolve(j["heldout"].get<std::string>());
    require_file(hp, "grid.heldout");
    manifest.add_input(hp);
    heldout = read_token_stream(hp);
    calib_part = corpus;
  } else {
    // Last tenth of the corpus is held out.
    const std::size_t cut = corpus.size() - corpus.size() / 10;
    calib_part.assign(corpus.begin(), corpus.begin() + static_cast<std::ptrdiff_t>(cut));
    heldout.assign(corpus.begin() + static_cast<std::ptrdiff_t>(cut), corpus.end());
  }
  spec.window = std::min(spec.window, model.config.max_seq_len);
  const auto rows = compare_metrics(model, calib_part, heldout, spec);
  const auto base = perplexity(model, heldout, spec.window);
  std::string csv = sweep_csv(rows);
  write_text(a.out, csv);
  manifest.add_output(a.out);
  manifest.write(a.out + ".manifest.json");
  nlohmann::json summary = {{"rows", rows.size()}, {"unpruned_perplexity", base.perplexity}};
  for (Metric m : spec.metrics) summary["mean_perplexity"][std::string(to_string(m))] = mean_perplexity(rows, m);
  out << summary.dump() << '\n';
}

// ---------------------------------------------------------------- toy
struct ToyArgs {
  std::string outdir;
  std::uint64_t seed = 1;
  std::size_t steps = toy::TrainConfig{}.steps;
  std::size_t tokens = 60000;
};

void run_toy(const ToyArgs& a, std::ostream& out) {
  fs::create_directories(a.outdir);
  RunManifest manifest("toy");
  manifest.add_seed("toy", a.seed);
  manifest.set_config({{"steps", a.steps}, {"tokens", a.tokens}});
  toy::CorpusSpec cs;
  cs.seed = a.seed;
  const auto train_stream = toy::generate_corpus(cs, a.tokens, a.seed * 2 + 1);
  const auto heldout = toy::generate_corpus(cs, std::max<std::size_t>(a.tokens / 10, 512), a.seed * 2 + 2);
  const auto init = random_model(toy::tiny_config(cs.vocab), a.seed);
  toy::TrainConfig tc;
  tc.steps = a.steps;
  tc.seed = a.seed;
  const auto trained = toy::train(init, train_stream, tc);
  const auto dir = fs::path(a.outdir);
  save_model(trained.model, (dir / "tiny.model").string());
  write_token_stream(train_stream, (dir / "train.tokens").string());
  write_token_stream(heldout, (dir / "heldout.tokens").string());
  for (const char* f : {"tiny.model", "train.tokens", "heldout.tokens"}) manifest.add_output((dir / f).string());
  manifest.write((dir / "manifest.json").string());
  out << nlohmann::json{{"model", (dir / "tiny.model").string()}, {"final_loss", trained.losses.back()}}.dump() << '\n';
}

int report_error(std::ostream& err, int code, const char* kind, const std::string& msg) {
  err << nlohmann::json{{"error", kind}, {"message", msg}, {"exit_code", code}}.dump() << '\n';
  return code;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  setup_logging();
  CLI::App app{"transact: transitional-activation structured pruning toolkit", "transact"};
  app.set_version_flag("--version", kToolkitVersion);
  int threads = 0;
  app.add_option("--threads", threads, "worker thread cap (0 = runtime default)");

  CalibrateArgs ca;
  auto* calibrate = app.add_subcommand("calibrate", "collect transitional-activation statistics");
  calibrate->add_option("--model", ca.model)->required();
  calibrate->add_option("--corpus", ca.corpus, "u32 little-endian token stream")->required();
  calibrate->add_option("--calib-samples", ca.samples)->capture_default_str();
  calibrate->add_option("--calib-seqlen", ca.seqlen)->capture_default_str();
  calibrate->add_option("--calib-seed", ca.seed);
  calibrate->add_option("--out", ca.out)->required();
  calibrate->add_option("--threads", threads);

  PruneArgs pa;
  auto* prune = app.add_subcommand("prune", "score heads/channels and slice the model");
  prune->add_option("--model", pa.model)->required();
  prune->add_option("--stats", pa.stats);
  prune->add_option("--target-heads", pa.target_heads)->required();
  prune->add_option("--target-mlp", pa.target_mlp)->required();
  prune->add_option("--alpha", pa.alpha)->capture_default_str();
  prune->add_option("--metric", pa.metric)->check(CLI::IsMember({"transact", "magnitude", "random"}));
  prune->add_option("--outlier-mode", pa.outlier)->check(CLI::IsMember({"channel-norm", "token-peak"}));
  prune->add_option("--seed", pa.seed, "seed for metric=random");
  prune->add_option("--out", pa.out)->required();
  prune->add_option("--report", pa.report);
  prune->add_option("--threads", threads);

  ScheduleArgs sa;
  auto* schedule = app.add_subcommand("schedule", "iterative multi-shot pruning");
  schedule->add_option("--config", sa.config)->required();
  schedule->add_option("--model", sa.model)->required();
  schedule->add_option("--corpus", sa.corpus)->required();
  schedule->add_option("--outdir", sa.outdir)->required();
  schedule->add_option("--threads", threads);

  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("analyze", "parameter / KV-cache / FLOPs accounting");
  analyze->add_option("--config", aa.config, "JSON config or model container")->required();
  analyze->add_option("--ref", aa.ref, "reference config for change percentages");
  analyze->add_option("--seq", aa.seq, "KV-cache sequence length")->capture_default_str();
  analyze->add_option("--ctx", aa.ctx, "comma-separated context lengths")->capture_default_str();
  analyze->add_option("--dtype-bytes", aa.dtype_bytes)->capture_default_str();
  analyze->add_option("--out", aa.out, "report.json or report.csv");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "held-out perplexity");
  eval->add_option("--model", ea.model)->required();
  eval->add_option("--stream", ea.stream)->required();
  eval->add_option("--window", ea.window)->capture_default_str();
  eval->add_flag("--nll", ea.nll, "include per-position NLL");
  eval->add_option("--out", ea.out);
  eval->add_option("--threads", threads);

  SweepArgs wa;
  auto* sweep = app.add_subcommand("sweep", "compare salience metrics across pruning settings");
  sweep->add_option("--grid", wa.grid)->required();
  sweep->add_option("--corpus", wa.corpus)->required();
  sweep->add_option("--seeds", wa.seeds)->capture_default_str();
  sweep->add_option("--out", wa.out)->required();
  sweep->add_option("--threads", threads);

  ToyArgs ta;
  auto* toy_cmd = app.add_subcommand("toy", "train the bundled tiny model on a synthetic corpus");
  toy_cmd->add_option("--outdir", ta.outdir)->required();
  toy_cmd->add_option("--seed", ta.seed)->capture_default_str();
  toy_cmd->add_option("--steps", ta.steps)->capture_default_str();
  toy_cmd->add_option("--tokens", ta.tokens)->capture_default_str();
  toy_cmd->add_option("--threads", threads);

  app.require_subcommand(1);

  if (args.empty()) {
    out << app.help();
    return kUsage;
  }
  std::vector<const char*> argv{"transact"};
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolkitVersion << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    return report_error(err, kUsage, "usage", e.what());
  }

  kernels::set_num_threads(threads);
  try {
    if (*calibrate) run_calibrate(ca, out);
    else if (*prune) run_prune(pa, out);
    else if (*schedule) run_schedule_cmd(sa, out);
    else if (*analyze) run_analyze(aa, out);
    else if (*eval) run_eval(ea, out);
    else if (*sweep) run_sweep(wa, out);
    else if (*toy_cmd) run_toy(ta, out);
  } catch (const IoError& e) {
    return report_error(err, kMissingFile, "missing_file", e.what());
  } catch (const ConfigError& e) {
    return report_error(err, kInvalidConfig, "invalid_config", e.what());
  } catch (const FormatError& e) {
    return report_error(err, kBadFormat, "bad_format", e.what());
  } catch (const InputError& e) {
    return report_error(err, kBadInput, "bad_input", e.what());
  } catch (const NumericError& e) {
    return report_error(err, kNumeric, "numeric", e.what());
  } catch (const std::exception& e) {
    return report_error(err, kInternal, "internal", e.what());
  }
  return kOk;
}

}  // namespace transact::cli
