// SPDX-License-Identifier: Apache-2.0

#include "guiderag_cli/cli.hpp"

#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "guiderag/checkpoint.hpp"
#include "guiderag/evaluation.hpp"
#include "guiderag/synthgen.hpp"
#include "guiderag/training.hpp"

namespace guiderag::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = GUIDERAG_VERSION;
constexpr const char* kExperimentFile = "experiment.json";

// Every flag can also be supplied through GUIDERAG_<FLAG>, e.g. GUIDERAG_SEED=3.
std::string env(const std::string& flag) {
  std::string name = "GUIDERAG_";
  for (char c : flag) name += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return name;
}

template <typename T>
CLI::Option* opt(CLI::App* app, const std::string& flag, T& target, const std::string& help) {
  return app->add_option("--" + flag, target, help)->envname(env(flag));
}

bool given(const CLI::Option* o) { return o != nullptr && o->count() > 0; }

void require_dir(const fs::path& dir, const char* what) {
  if (!fs::is_directory(dir)) throw InvalidArgument(std::string(what) + " '" + dir.string() + "' is not a directory");
}

/// Final checkpoint directory of a training run.
fs::path final_checkpoints(const fs::path& run) {
  const auto manifest = run / kExperimentFile;
  if (!fs::exists(manifest)) throw InvalidArgument("no " + std::string(kExperimentFile) + " in " + run.string());
  const auto j = ojson::parse(read_text_file(manifest));
  return run / j.at("final_checkpoint_dir").get<std::string>();
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  fs::path out;
  fs::path config;
  std::uint64_t seed = 0;
  std::string mode = "one-to-many";
  CLI::Option* seed_opt = nullptr;
  CLI::Option* mode_opt = nullptr;
};

int run_synth(const SynthArgs& a) {
  SynthConfig cfg;
  if (!a.config.empty()) cfg = synth_config_from_json(read_text_file(a.config), cfg);
  if (given(a.seed_opt)) cfg.seed = a.seed;
  if (given(a.mode_opt)) cfg.mode = parse_synth_mode(a.mode);
  const auto ds = generate(cfg);
  write_synth(ds, a.out);
  spdlog::info("wrote {} passages, {} train and {} dev examples to {}", ds.data.corpus.size(),
               ds.data.train.size(), ds.data.dev.size(), a.out.string());
  return kExitOk;
}

// ---- index -----------------------------------------------------------------

struct IndexArgs {
  fs::path data;
  fs::path checkpoint;
  fs::path run;
  std::string model = "retriever";
  fs::path out;
};

int run_index(const IndexArgs& a) {
  require_dir(a.data, "data directory");
  const Dataset ds = load_dataset(a.data);
  const fs::path ckpt = !a.checkpoint.empty() ? a.checkpoint : final_checkpoints(a.run);
  const ModelSet models = load_models(ckpt);
  if (models.retriever.table.vocab_size() != ds.corpus.vocabulary().size()) {
    throw InvalidArgument("checkpoint vocabulary does not match the data directory");
  }
  const RetrieverModel& m = a.model == "guide" ? models.guide : models.retriever;
  const auto index = build_index(m, ds.corpus);
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  write_index(index, a.out);
  spdlog::info("indexed {} passages with the {} into {}", index.passage_ids.size(), a.model,
               a.out.string());
  return kExitOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  fs::path data;
  fs::path out;
  fs::path config;
  std::uint64_t seed = 0;
  std::string objective;
  std::vector<double> alpha;
  std::size_t rounds = 0;
  std::size_t r = 0;
  std::size_t threads = 1;
  std::size_t resume_after = 0;
  CLI::Option *seed_opt = nullptr, *objective_opt = nullptr, *alpha_opt = nullptr,
              *rounds_opt = nullptr, *r_opt = nullptr, *threads_opt = nullptr,
              *resume_opt = nullptr;
};

TrainConfig resolve_train_config(const TrainArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = train_config_from_json(read_text_file(a.config), cfg);
  if (given(a.seed_opt)) cfg.seed = a.seed;
  if (given(a.objective_opt)) cfg.objective = parse_objective_kind(a.objective);
  if (given(a.alpha_opt)) cfg.alpha_schedule = a.alpha;
  if (given(a.rounds_opt)) cfg.rounds = a.rounds;
  if (given(a.r_opt)) cfg.r = a.r;
  if (given(a.threads_opt)) cfg.threads = a.threads;
  cfg.validate();
  return cfg;
}

int run_train(const TrainArgs& a) {
  require_dir(a.data, "data directory");
  const TrainConfig cfg = resolve_train_config(a);
  const Dataset ds = load_dataset(a.data);
  if (ds.train.empty()) throw InvalidArgument("no training examples in " + a.data.string());
  fs::create_directories(a.out);
  const std::string config_text = to_json(cfg);
  write_text_file(a.out / "config.json", config_text);

  RunOptions opts{a.out, std::nullopt};
  if (given(a.resume_opt)) opts.resume_after_round = a.resume_after;
  const TrainResult res = run_training(cfg, ds.corpus, ds.train, opts);

  const std::string final_dir =
      res.report.convergence ? "converged" : "round_" + std::to_string(cfg.rounds - 1);
  ojson m;
  m["tool_version"] = kVersion;
  m["seed"] = cfg.seed;
  m["config"] = ojson::parse(config_text);
  m["config_path"] = "config.json";
  // Relative to the experiment directory, so identical runs in different places match.
  m["data"] = {{"dir", fs::proximate(fs::absolute(a.data), fs::absolute(a.out)).generic_string()},
               {"passages", "passages.jsonl"},
               {"examples", "examples.jsonl"},
               {"dev", "dev.jsonl"}};
  m["checkpoints"] = res.report.checkpoints;
  m["final_checkpoint_dir"] = final_dir;
  m["train_report"] = "report.json";
  m["eval_report"] = nullptr;
  write_text_file(a.out / kExperimentFile, m.dump(2) + "\n");
  spdlog::info("training finished; checkpoints in {}", (a.out / final_dir).string());
  return kExitOk;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  fs::path data;
  fs::path run;
  fs::path checkpoint;
  fs::path out;
  std::vector<std::size_t> ks{1, 5, 10};
  std::string split = "dev";
  std::size_t threads = 1;
};

int run_eval(const EvalArgs& a) {
  require_dir(a.data, "data directory");
  if (a.run.empty() == a.checkpoint.empty()) {
    throw InvalidArgument("eval needs exactly one of --run or --checkpoint");
  }
  const Dataset ds = load_dataset(a.data);
  const fs::path ckpt = !a.checkpoint.empty() ? a.checkpoint : final_checkpoints(a.run);
  const ModelSet models = load_models(ckpt);
  if (models.generator.vocab_size() != ds.corpus.vocabulary().size()) {
    throw InvalidArgument("checkpoint vocabulary does not match the data directory");
  }
  const auto& examples = a.split == "train" ? ds.train : ds.dev;
  EvalConfig cfg;
  cfg.ks = a.ks;
  cfg.threads = a.threads;
  const EvalReport rep = evaluate(models, ds.corpus, ds.train, examples, cfg);
  const std::string text = to_json(rep);

  fs::path out = a.out;
  if (out.empty()) out = (a.run.empty() ? ckpt : a.run) / "eval.json";
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_text_file(out, text);
  if (!a.run.empty() && out.parent_path() == a.run) {
    auto m = ojson::parse(read_text_file(a.run / kExperimentFile));
    m["eval_report"] = out.filename().string();
    write_text_file(a.run / kExperimentFile, m.dump(2) + "\n");
  }
  std::cout << text;
  return kExitOk;
}

// ---- report ----------------------------------------------------------------

struct ReportArgs {
  fs::path eval;
  fs::path out;
};

int run_report(const ReportArgs& a) {
  ojson j;
  try {
    j = ojson::parse(read_text_file(a.eval));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(a.eval.string() + ": " + e.what());
  }
  if (!j.contains("sharpness")) throw InvalidArgument(a.eval.string() + " has no sharpness curves");
  EvalReport rep;
  const auto& s = j.at("sharpness");
  rep.retriever_sharpness.cumulative = s.at("retriever").get<std::vector<double>>();
  rep.guide_sharpness.cumulative = s.at("guide").get<std::vector<double>>();
  rep.generator_posterior_sharpness.cumulative = s.at("generator_posterior").get<std::vector<double>>();
  const std::string csv = sharpness_csv(rep);
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
    write_text_file(a.out, csv);
  }
  return kExitOk;
}

// ---- check-grad ------------------------------------------------------------

struct GradArgs {
  std::string objective = "both";
  std::uint64_t seed = 0;
  std::size_t trials = 20;
  double tolerance = 1e-4;
};

int run_check_grad(const GradArgs& a) {
  std::vector<ObjectiveKind> kinds;
  if (a.objective == "both") kinds = {ObjectiveKind::kMarginalized, ObjectiveKind::kElbo};
  else kinds = {parse_objective_kind(a.objective)};
  bool ok = true;
  for (auto kind : kinds) {
    const auto rep = check_gradients(kind, a.seed, a.trials);
    const bool pass = rep.max_rel_error < a.tolerance;
    ok = ok && pass;
    std::cout << fmt::format("{:<12} trials={} params={} max_rel_error={:.3e} worst={} {}\n",
                             to_string(kind), rep.trials, rep.parameters_checked, rep.max_rel_error,
                             rep.worst_parameter, pass ? "ok" : "FAILED");
  }
  return ok ? kExitOk : kExitInternal;
}

// ---- compare ---------------------------------------------------------------

struct CompareArgs {
  fs::path a;
  fs::path b;
  fs::path out;
};

int run_compare(const CompareArgs& c) {
  const auto deltas = compare_reports(read_text_file(c.a), read_text_file(c.b));
  std::cout << compare_text(deltas);
  if (!c.out.empty()) write_text_file(c.out, compare_json(deltas));
  return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Retrieval-augmented generation with posterior-guided training", "guiderag"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")
      ->envname(env("log-level"))
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset");
  opt(s, "out", synth.out, "Output data directory")->required();
  opt(s, "config", synth.config, "Synthetic config JSON")->check(CLI::ExistingFile);
  synth.seed_opt = opt(s, "seed", synth.seed, "Random seed");
  synth.mode_opt = opt(s, "mode", synth.mode, "one-to-many | one-to-one")
                       ->check(CLI::IsMember({"one-to-many", "one-to-one"}));

  IndexArgs index;
  auto* ix = app.add_subcommand("index", "Encode every passage with a trained retriever");
  opt(ix, "data", index.data, "Data directory")->required();
  auto* ix_run = opt(ix, "run", index.run, "Training run directory");
  opt(ix, "checkpoint", index.checkpoint, "Checkpoint directory")->excludes(ix_run);
  opt(ix, "model", index.model, "retriever | guide")->check(CLI::IsMember({"retriever", "guide"}));
  opt(ix, "out", index.out, "Index file")->required();

  TrainArgs train;
  auto* tr = app.add_subcommand("train", "Train retriever, guide and generator");
  opt(tr, "data", train.data, "Data directory")->required();
  opt(tr, "out", train.out, "Experiment directory")->required();
  opt(tr, "config", train.config, "Training config JSON")->check(CLI::ExistingFile);
  train.seed_opt = opt(tr, "seed", train.seed, "Random seed");
  train.objective_opt = opt(tr, "objective", train.objective, "marginalized | elbo")
                            ->check(CLI::IsMember({"marginalized", "elbo"}));
  train.alpha_opt = opt(tr, "alpha-schedule", train.alpha, "Per-round alpha, comma separated")
                        ->delimiter(',');
  train.rounds_opt = opt(tr, "rounds", train.rounds, "Training rounds");
  train.r_opt = opt(tr, "r", train.r, "Closed-set size per model");
  train.threads_opt = opt(tr, "threads", train.threads, "Worker threads");
  train.resume_opt = opt(tr, "resume-after", train.resume_after, "Resume after this completed round");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a trained run");
  opt(e, "data", ev.data, "Data directory")->required();
  auto* e_run = opt(e, "run", ev.run, "Training run directory");
  opt(e, "checkpoint", ev.checkpoint, "Checkpoint directory")->excludes(e_run);
  opt(e, "out", ev.out, "Evaluation report path (default <run>/eval.json)");
  opt(e, "k", ev.ks, "Success@k depths, comma separated")->delimiter(',');
  opt(e, "split", ev.split, "dev | train")->check(CLI::IsMember({"dev", "train"}));
  opt(e, "threads", ev.threads, "Worker threads");

  ReportArgs report;
  auto* rp = app.add_subcommand("report", "Write sharpness curves as CSV");
  opt(rp, "eval", report.eval, "Evaluation report JSON")->required()->check(CLI::ExistingFile);
  opt(rp, "out", report.out, "CSV path (default stdout)");

  GradArgs grad;
  auto* g = app.add_subcommand("check-grad", "Compare analytic and numerical gradients");
  opt(g, "objective", grad.objective, "marginalized | elbo | both")
      ->check(CLI::IsMember({"marginalized", "elbo", "both"}));
  opt(g, "seed", grad.seed, "Random seed");
  opt(g, "trials", grad.trials, "Random instances per objective");
  opt(g, "tolerance", grad.tolerance, "Maximum relative error");

  CompareArgs cmp;
  auto* c = app.add_subcommand("compare", "Per-metric deltas between two evaluation reports");
  c->add_option("a", cmp.a, "Baseline report")->required()->check(CLI::ExistingFile);
  c->add_option("b", cmp.b, "Candidate report")->required()->check(CLI::ExistingFile);
  opt(c, "out", cmp.out, "Also write the deltas as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUser;
  }

  auto logger = spdlog::get("guiderag");
  if (!logger) {
    logger = spdlog::stderr_logger_st("guiderag");
    logger->set_pattern("[%l] %v");
  }
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (s->parsed()) return run_synth(synth);
    if (ix->parsed()) {
      if (index.run.empty() == index.checkpoint.empty()) {
        throw InvalidArgument("index needs exactly one of --run or --checkpoint");
      }
      return run_index(index);
    }
    if (tr->parsed()) return run_train(train);
    if (e->parsed()) return run_eval(ev);
    if (rp->parsed()) return run_report(report);
    if (g->parsed()) return run_check_grad(grad);
    if (c->parsed()) return run_compare(cmp);
  } catch (const InvalidArgument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUser;
  } catch (const nlohmann::json::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUser;
  } catch (const std::exception& err) {
    std::cerr << "internal error: " << err.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}

int cli_main(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"guiderag"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace guiderag::cli
