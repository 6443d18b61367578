// collapse-lab: command-line driver for pretraining, self-training runs,
// sweeps, evaluation and reports. Every subcommand reads an optional flat
// key=value plan file; --set key=value and the common flags override it.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "collapse/errors.hpp"
#include "collapse/evalsuite.hpp"
#include "collapse/experiments.hpp"
#include "collapse/model.hpp"

namespace fs = std::filesystem;
using namespace collapse;

namespace {

struct CommonFlags {
  std::string plan;
  std::vector<std::string> overrides;
  std::string out;
  std::vector<std::string> corpora;
  std::string seed;
};

void add_common(CLI::App* cmd, CommonFlags& f, const char* corpus_help) {
  cmd->add_option("--plan", f.plan, "Plan file (flat key=value)");
  cmd->add_option("--set", f.overrides, "Override a plan key (key=value, repeatable)");
  cmd->add_option("--out", f.out, "Output location");
  cmd->add_option("--corpus", f.corpora, corpus_help);
  cmd->add_option("--seed", f.seed, "Seed (sweeps accept a comma-separated list)");
}

PlanValues load_plan(const CommonFlags& f) {
  PlanValues plan = f.plan.empty() ? PlanValues{} : PlanValues::load(f.plan);
  for (const std::string& o : f.overrides) {
    plan.set_override(o);
  }
  return plan;
}

std::string joined(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    out += (i ? "," : "") + items[i];
  }
  return out;
}

// ---- pretrain --------------------------------------------------------------

int cmd_pretrain(const CommonFlags& f) {
  PlanValues v = load_plan(f);
  if (!f.corpora.empty()) {
    v.set("corpus", f.corpora.front());
  }
  if (!f.seed.empty()) {
    v.set("seed", f.seed);
  }
  if (!f.out.empty()) {
    v.set("out", f.out);
  }
  const std::string preset = v.get("preset", "tiny");
  std::cerr << "pretraining " << preset << " (" << count_params(preset_config(preset))
            << " params) for " << v.get("steps", "3000") << " steps\n";
  const PlanValues meta = pretrain_from_plan(v);
  const fs::path out = meta.get("out");
  for (const auto& [key, value] : meta.entries()) {
    if (key.starts_with("info.final_val_loss_")) {
      std::cout << "val_loss " << key.substr(20) << " " << value << "\n";
    }
  }
  std::cout << "checkpoint " << (out / "model.ckpt").string() << "\n";
  return 0;
}

// ---- selftrain -------------------------------------------------------------

int cmd_selftrain(const CommonFlags& f, const std::string& checkpoint) {
  PlanValues v = load_plan(f);
  if (!f.corpora.empty()) {
    v.set("corpora", joined(f.corpora));
  }
  if (!f.seed.empty()) {
    v.set("seed", f.seed);
  }
  if (!checkpoint.empty()) {
    v.set("checkpoint", checkpoint);
    v.erase("checkpoint_digest");
  }
  const fs::path out = !f.out.empty() ? fs::path(f.out) : fs::path(v.get("out", "runs/selftrain"));
  v.erase("out");
  RunSpec spec = RunSpec::from_values(v);
  spec.checkpoint = fs::absolute(spec.checkpoint);
  for (CorpusSpec& c : spec.corpora) {
    c.path = fs::absolute(c.path);
  }
  const RunSummary s = execute_run(spec, out);
  run_transcript_capture(out);
  std::cout << "run " << s.run_id << ": " << s.stop_reason << " after " << s.iterations
            << " iterations";
  if (s.collapse_iteration) {
    std::cout << " (collapse at " << *s.collapse_iteration << ")";
  }
  std::cout << "\n";
  return s.valid_stop() ? 0 : 1;
}

// ---- sweeps ----------------------------------------------------------------

int cmd_sweep(const CommonFlags& f, bool size_sweep) {
  PlanValues v = load_plan(f);
  if (!f.corpora.empty()) {
    v.set("corpora", joined(f.corpora));
  }
  if (!f.seed.empty()) {
    v.set("seeds", f.seed);
  }
  if (!f.out.empty()) {
    v.set("out", f.out);
  }
  const ExperimentPlan plan = ExperimentPlan::from_values(v);
  const std::vector<RunSummary> runs = size_sweep ? run_size_sweep(plan) : run_lr_sweep(plan);
  bool ok = true;
  for (const RunSummary& r : runs) {
    ok = ok && r.valid_stop();
    if (fs::exists(plan.out / r.run_id / "records.csv")) {
      run_transcript_capture(plan.out / r.run_id);
    }
  }
  emit_report(plan.out, plan.out / "report");
  std::cout << summaries_csv(runs);
  return ok ? 0 : 1;
}

// ---- eval ------------------------------------------------------------------

int cmd_eval(const CommonFlags& f, const std::string& checkpoint) {
  PlanValues v = load_plan(f);
  if (!f.corpora.empty()) {
    v.set("corpora", joined(f.corpora));
  }
  const std::string_view known[] = {"checkpoint", "corpora", "windows_per_eval", "eval_seed"};
  v.require_known(known);
  const ModelState model =
      checkpoint.empty() ? load_checkpoint(v.get("checkpoint")) : load_checkpoint(checkpoint);
  EvalConfig cfg;
  cfg.windows_per_eval = v.get_int("windows_per_eval", 0);
  cfg.seed = v.get_u64("eval_seed", 0);
  for (const Corpus& c : load_corpora(parse_corpus_list(v.get_list("corpora", {})))) {
    std::cout << c.name << " " << format_double(eval_val_loss(model, c, cfg)) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"collapse-lab: self-training collapse experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  CommonFlags pre_flags;
  auto* pre = app.add_subcommand("pretrain", "Train a base model on a text corpus");
  add_common(pre, pre_flags, "Pretraining corpus path");

  CommonFlags st_flags;
  std::string st_checkpoint;
  auto* st = app.add_subcommand("selftrain", "One self-training run (plan or run.meta)");
  add_common(st, st_flags, "Validation corpus name:path (repeatable)");
  st->add_option("--checkpoint", st_checkpoint, "Base model checkpoint");

  CommonFlags lr_flags;
  auto* lr = app.add_subcommand("sweep-lr", "Learning-rate sweep");
  add_common(lr, lr_flags, "Validation corpus name:path (repeatable)");

  CommonFlags size_flags;
  auto* size = app.add_subcommand("sweep-size", "Model-size sweep");
  add_common(size, size_flags, "Validation corpus name:path (repeatable)");

  CommonFlags ev_flags;
  std::string ev_checkpoint;
  auto* ev = app.add_subcommand("eval", "Validation loss of a checkpoint");
  add_common(ev, ev_flags, "Corpus name:path (repeatable)");
  ev->add_option("--checkpoint", ev_checkpoint, "Model checkpoint");

  std::string report_sweep;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "Figures (CSV + SVG) from a finished sweep");
  rep->add_option("--sweep", report_sweep, "Sweep output directory")->required();
  rep->add_option("--out", report_out, "Report directory (default <sweep>/report)");

  std::string transcript_run;
  auto* tr = app.add_subcommand("transcript", "Samples at iterations 0, 50, 100 and last");
  tr->add_option("--run", transcript_run, "Run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pre) {
      return cmd_pretrain(pre_flags);
    }
    if (*st) {
      return cmd_selftrain(st_flags, st_checkpoint);
    }
    if (*lr) {
      return cmd_sweep(lr_flags, false);
    }
    if (*size) {
      return cmd_sweep(size_flags, true);
    }
    if (*ev) {
      return cmd_eval(ev_flags, ev_checkpoint);
    }
    if (*rep) {
      emit_report(report_sweep, report_out.empty() ? fs::path(report_sweep) / "report"
                                                   : fs::path(report_out));
      return 0;
    }
    if (*tr) {
      std::cout << run_transcript_capture(transcript_run);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
