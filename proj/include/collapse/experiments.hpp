#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "collapse/evalsuite.hpp"
#include "collapse/model.hpp"
#include "collapse/selftrain.hpp"

namespace collapse {

inline constexpr char kVersion[] = "0.1.0";

// ---- plan files ------------------------------------------------------------

// Flat key=value text. Blank lines and lines starting with '#' are ignored,
// whitespace around keys and values is trimmed, and a key may appear once.
class PlanValues {
 public:
  static PlanValues parse(std::string_view text, const std::string& origin = "plan");
  static PlanValues load(const std::filesystem::path& path);

  // Applies a "key=value" override; later calls win.
  void set_override(std::string_view assignment);
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void erase(const std::string& key) { values_.erase(key); }

  std::string get(const std::string& key) const;  // ConfigError when missing
  std::string get(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback) const;

  // Keys accepted by a consumer; anything else is a ConfigError (typo guard).
  // Keys under "info." are free-form and always accepted.
  void require_known(std::span<const std::string_view> known,
                     std::span<const std::string_view> known_prefixes = {}) const;

  // Sorted key=value lines.
  std::string to_text() const;
  void save(const std::filesystem::path& path) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::string origin_ = "plan";
};

// "name:path" pairs, e.g. "shakespeare:corpora/shakespeare_val.txt".
struct CorpusSpec {
  std::string name;
  std::filesystem::path path;
};
std::vector<CorpusSpec> parse_corpus_list(const std::vector<std::string>& items);
std::vector<Corpus> load_corpora(std::span<const CorpusSpec> specs);

// Reads the self-training keys shared by run.meta and sweep plans:
//   temperature top_k max_new_tokens prompt
//   beta1 beta2 adam_eps grad_clip weight_decay lr
//   max_iters collapse_threshold collapse_patience
//   windows_per_eval eval_seed eval_stride snapshot_every
SelfTrainConfig selftrain_config_from(const PlanValues& values);
void write_selftrain_config(const SelfTrainConfig& cfg, PlanValues& values);

// ---- pretraining -----------------------------------------------------------

struct PretrainConfig {
  int steps = 3000;
  double learning_rate = 1e-3;
  int batch_size = 8;
  int warmup_steps = 100;
  double min_lr_ratio = 0.1;  // cosine decay floor, as a fraction of learning_rate
  double beta1 = 0.9;
  double beta2 = 0.95;
  double grad_clip = 1.0;
  int eval_every = 250;  // 0 evaluates only at the end
  EvalConfig eval;
  std::uint64_t seed = 0;

  void validate() const;
};

// Learning rate at optimizer step `step` (0-based): linear warmup, then cosine
// decay to min_lr_ratio * learning_rate at the last step.
double pretrain_lr(const PretrainConfig& cfg, int step);

struct PretrainResult {
  ModelState model;
  std::vector<double> val_losses;  // per validation corpus, after the last step
  double final_train_loss = 0.0;
};

// Next-token training on random block_size crops of `train` (uniform crop
// starts from the "pretrain-crops" stream of the seed). The model is
// initialized from init_model(config, seed). With log_path, one CSV row per
// step (step, lr, train_loss, val_loss_<name>...) is flushed as training
// proceeds. A numeric failure throws NumericError after the log is flushed.
PretrainResult pretrain(const ModelConfig& config, const Corpus& train,
                        std::span<const Corpus> validation, const PretrainConfig& cfg,
                        const std::optional<std::filesystem::path>& log_path = std::nullopt);

// Pretraining driven by a plan (keys: preset steps lr batch_size warmup_steps
// min_lr_ratio beta1 beta2 grad_clip eval_every windows_per_eval eval_seed
// seed corpus corpora out). Writes <out>/model.ckpt, pretrain.csv and
// pretrain.meta (the resolved plan plus info.* results) and returns the meta.
PlanValues pretrain_from_plan(const PlanValues& plan);

// The meta of an earlier pretrain_from_plan with the same plan, if its
// checkpoint and training corpus still match the recorded digests.
std::optional<PlanValues> pretrain_outputs_current(const PlanValues& plan);

// ---- runs ------------------------------------------------------------------

// Everything needed to reproduce one self-training run. Serialized as run.meta.
struct RunSpec {
  std::string run_id;
  std::string preset;
  std::uint64_t seed = 0;
  SelfTrainConfig config;
  std::vector<CorpusSpec> corpora;
  std::filesystem::path checkpoint;
  // Expected SHA-256 digests; empty means "record on first use".
  std::string checkpoint_digest;
  std::map<std::string, std::string> corpus_digests;

  PlanValues to_values() const;
  static RunSpec from_values(const PlanValues& values);
};

struct RunSummary {
  std::string run_id;
  std::string preset;
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
  std::int64_t param_count = 0;
  std::string stop_reason;  // collapsed, max_iters, numeric_failure or error
  int iterations = 0;
  int max_iters = 0;
  std::optional<int> collapse_iteration;
  std::vector<std::string> corpus_names;
  // Per corpus: validation loss at row 0, the middle row and the last
  // evaluated row, and the least-squares slope of loss against iteration.
  std::vector<double> val_first;
  std::vector<double> val_mid;
  std::vector<double> val_last;
  std::vector<double> val_slope;
  double final_train_loss = 0.0;  // last row
  double tail_train_loss = 0.0;   // median over the final five rows
  std::string checkpoint_digest;
  std::string error;
  double wall_seconds = 0.0;  // from result.meta; not part of summaries.csv

  bool valid_stop() const;
  // Collapse iteration, or max_iters + 1 for runs that never collapsed.
  int collapse_or_cap() const;
};

// Writes run.meta (with digests filled in) into dir, runs, and summarizes.
// Digest mismatches against a spec that already carries digests throw
// ConfigError before anything is written.
RunSummary execute_run(const RunSpec& spec, const std::filesystem::path& dir);

// Summary from a finished run directory (run.meta, records.csv, result.meta).
RunSummary summarize_run(const std::filesystem::path& dir);

// Least-squares slope of y against x over the finite pairs; 0 if fewer than two.
double least_squares_slope(std::span<const double> x, std::span<const double> y);
double median(std::vector<double> values);

// ---- sweeps ----------------------------------------------------------------

struct ExperimentPlan {
  std::vector<std::string> presets{"tiny"};
  std::vector<double> learning_rates{1e-4, 5e-4, 2e-3};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  SelfTrainConfig selftrain;
  std::vector<CorpusSpec> corpora;
  std::map<std::string, std::filesystem::path> checkpoints;  // preset -> base model
  std::filesystem::path out = "runs";
  int jobs = 1;

  // Keys: presets, learning_rates, seeds, corpora, checkpoint.<preset>, out,
  // jobs, plus every self-training key (see selftrain_config_from).
  static ExperimentPlan from_values(const PlanValues& values);
  PlanValues to_values() const;

  // Cross product preset x lr x seed, in that nesting order.
  std::vector<RunSpec> runs() const;
};

std::string run_id_for(const std::string& preset, double lr, std::uint64_t seed);

// Runs every (preset, lr, seed) of the plan under plan.out/<run_id>, on up to
// plan.jobs worker threads. A failing run is summarized with stop reason
// "error" and the sweep continues. Writes plan.out/plan.txt and
// plan.out/summaries.csv; summaries come back in plan order.
std::vector<RunSummary> run_sweep(const ExperimentPlan& plan);

// Learning-rate sweep: one preset, any number of rates.
std::vector<RunSummary> run_lr_sweep(const ExperimentPlan& plan);
// Size sweep: one learning rate, any number of presets.
std::vector<RunSummary> run_size_sweep(const ExperimentPlan& plan);

std::string summaries_csv(std::span<const RunSummary> runs);
void write_summaries(std::span<const RunSummary> runs, const std::filesystem::path& path);
// Re-summarizes every run directory listed in a sweep's summaries.csv.
std::vector<RunSummary> load_sweep(const std::filesystem::path& sweep_dir);

// ---- transcripts and reports -----------------------------------------------

// Iterations {0, 50, 100, last} clamped to [0, last], deduplicated, ascending.
std::vector<int> transcript_iterations(int last);

// Markdown document with the decoded sample of each transcript iteration
// and its distinct-4-gram ratio. Missing sample files are noted inline.
// Writes <run_dir>/transcript.md and returns its text.
std::string run_transcript_capture(const std::filesystem::path& run_dir);

struct SeriesPoint {
  std::string series;
  double x = 0.0;
  double y = 0.0;
};

struct Figure {
  std::string name;  // file stem
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<SeriesPoint> points;  // grouped by series, x ascending within a series
};

// Plot title for a figure file stem.
std::string figure_title(const std::string& name);

// CSV with header "series,step,loss" (or the figure's axis names).
std::string figure_csv(const Figure& figure);
Figure parse_figure_csv(std::string_view csv, const std::string& name);
// Self-contained SVG line plot. Pure function of the figure contents.
std::string figure_svg(const Figure& figure);

// Figures for a set of runs:
//   loss_vs_lr        val (first corpus) and train loss per learning rate
//   loss_vs_lr_<c>    the same for every further corpus
//   loss_vs_size      val and train loss per preset
//   collapse_vs_size  median collapse iteration against parameter count
// Series are medians over seeds at each iteration, using the runs still
// active at that iteration.
std::vector<Figure> build_figures(std::span<const RunSummary> runs,
                                  const std::filesystem::path& sweep_dir);

// Writes <name>.csv and <name>.svg for every figure into out_dir.
void emit_report(std::span<const Figure> figures, const std::filesystem::path& out_dir);
void emit_report(const std::filesystem::path& sweep_dir, const std::filesystem::path& out_dir);

}  // namespace collapse
