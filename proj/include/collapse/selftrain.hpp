#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "collapse/evalsuite.hpp"
#include "collapse/model.hpp"
#include "collapse/optimizer.hpp"
#include "collapse/rng.hpp"
#include "collapse/sampler.hpp"

namespace collapse {

struct StopCriteria {
  int max_iters = 1000;
  double collapse_threshold = 0.1;
  int collapse_patience = 3;

  void validate() const;
};

struct CollapseMetrics {
  double distinct_4gram_ratio = 1.0;
  double max_token_fraction = 0.0;
  double token_entropy = 0.0;  // nats, empirical unigram distribution
  double train_loss = 0.0;
};

// |unique n-grams| / (N - n + 1); 1 for sequences shorter than n.
double distinct_ngram_ratio(std::span<const TokenId> ids, std::size_t n);
CollapseMetrics sequence_metrics(std::span<const TokenId> ids, double train_loss);

// True iff the last `collapse_patience` entries all have a distinct-4-gram
// ratio below the threshold.
bool detect_collapse(std::span<const CollapseMetrics> history, const StopCriteria& criteria);

struct SelfTrainConfig {
  SamplingConfig sampling;
  TrainConfig train;
  StopCriteria stop;
  EvalConfig eval;
  int eval_stride = 1;     // evaluate validation loss every n-th iteration
  int snapshot_every = 0;  // 0 disables snapshots

  void validate() const;
};

// One row of the run log. Row i describes the parameters after i updates:
// the sample they generated, its loss under them, and their validation loss.
// The update computed from that loss produces the parameters of row i + 1.
struct IterationRecord {
  int iteration = 0;
  double train_loss = 0.0;
  std::vector<double> val_losses;  // per corpus; NaN when not evaluated
  CollapseMetrics metrics;
  double clip_scale = 1.0;
  bool collapsed = false;
  std::string sample_file;
  double wall_ms = 0.0;
};

struct SelfTrainState {
  ModelState model;
  AdamState adam;
  int iteration = 0;
  Rng sampling_rng;
  Rng dropout_rng;
  SelfTrainConfig config;
  TokenSequence last_sample;
  std::int64_t sequences_generated = 0;

  // Copies the initial parameters; rng streams are derived from seed.
  static SelfTrainState start(const ModelState& initial, const SelfTrainConfig& config,
                              std::uint64_t seed);
};

// Mean cross-entropy of `generated` under `model`, scoring every generated
// token. The context for the first token is the last prompt token (the start
// token when the prompt is empty); the stream is cut into consecutive
// block_size windows that are scored in one batched forward.
double sequence_loss(const ModelState& model, std::span<const TokenId> generated,
                     const std::string& prompt = {});

// Generate, score, backpropagate, clip, one Adam update. Validation losses are
// left empty; run_self_training fills them in.
IterationRecord self_train_step(SelfTrainState& state);

// The scoring and update half of self_train_step for a given sequence: loss,
// backward, clip, one Adam update. Consumes no sampling randomness.
IterationRecord train_on_sequence(SelfTrainState& state, TokenSequence sample);

enum class StopReason { collapsed, max_iters, numeric_failure };
const char* stop_reason_name(StopReason reason);
StopReason parse_stop_reason(std::string_view name);

struct RunResult {
  std::vector<IterationRecord> records;
  StopReason reason = StopReason::max_iters;
  std::optional<int> collapse_iteration;
  std::string error;
  std::vector<double> final_val_losses;  // after the last update
  double wall_seconds = 0.0;             // whole run, evaluation included
  ModelState final_model;
};

// Loops self_train_step until collapse or max_iters. When out_dir is given the
// run writes (flushing after every iteration):
//   records.csv, timing.csv, samples/iter_<n>.txt, snapshots/ (if enabled),
//   result.meta once the run stops.
RunResult run_self_training(const ModelState& initial, const SelfTrainConfig& config,
                            std::span<const Corpus> corpora, std::uint64_t seed,
                            const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// records.csv I/O. Columns: iter, train_loss, val_loss_<corpus>...,
// distinct_4gram_ratio, max_token_fraction, token_entropy, clip_scale,
// collapsed, sample_file. Numbers use the shortest round-trip decimal form.
std::string records_csv_header(std::span<const std::string> corpus_names);
std::string records_csv_row(const IterationRecord& record);

struct RecordsTable {
  std::vector<std::string> corpus_names;
  std::vector<IterationRecord> records;
};
RecordsTable read_records_csv(const std::filesystem::path& path);

std::string format_double(double v);

}  // namespace collapse
