#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "collapse/errors.hpp"
#include "collapse/selftrain.hpp"

using namespace collapse;
namespace fs = std::filesystem;

namespace {

std::vector<CollapseMetrics> history_of(std::initializer_list<double> ratios) {
  std::vector<CollapseMetrics> h;
  for (const double r : ratios) {
    CollapseMetrics m;
    m.distinct_4gram_ratio = r;
    h.push_back(m);
  }
  return h;
}

SelfTrainConfig quick_config(int max_iters) {
  SelfTrainConfig cfg;
  cfg.sampling.max_new_tokens = 200;
  cfg.train.learning_rate = 1e-3;
  cfg.stop.max_iters = max_iters;
  cfg.eval.windows_per_eval = 4;
  return cfg;
}

Corpus test_corpus() {
  const fs::path p = fs::temp_directory_path() / "collapse_selftrain_corpus.txt";
  std::string text;
  for (int i = 0; i < 40; ++i) {
    text += "Now is the winter of our discontent made glorious summer.\n";
  }
  std::ofstream(p, std::ios::binary | std::ios::trunc) << text;
  return load_corpus(p, "toy");
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST(Collapse, DetectionExamples) {
  const StopCriteria c;  // threshold 0.1, patience 3
  EXPECT_TRUE(detect_collapse(history_of({0.05, 0.04, 0.02}), c));
  EXPECT_FALSE(detect_collapse(history_of({0.05, 0.5, 0.05}), c));
  EXPECT_FALSE(detect_collapse(history_of({0.05, 0.05}), c));
  EXPECT_TRUE(detect_collapse(history_of({0.9, 0.8, 0.01, 0.01, 0.01}), c));
  EXPECT_FALSE(detect_collapse(history_of({0.01, 0.01, 0.1}), c));
}

TEST(Collapse, ConstantSequenceRatio) {
  const TokenSequence all45(200, 45);
  EXPECT_DOUBLE_EQ(distinct_ngram_ratio(all45, 4), 1.0 / 197.0);
  const CollapseMetrics m = sequence_metrics(all45, 0.0);
  EXPECT_DOUBLE_EQ(m.max_token_fraction, 1.0);
  EXPECT_DOUBLE_EQ(m.token_entropy, 0.0);
  EXPECT_DOUBLE_EQ(distinct_ngram_ratio(TokenSequence{1, 2, 3}, 4), 1.0);
}

// A line-level loop of "-\n" is flagged once it persists for the patience.
TEST(Collapse, RepeatedDashLinesTriggerAfterPatience) {
  TokenSequence loop;
  for (int i = 0; i < 100; ++i) {
    loop.push_back(45);
    loop.push_back(10);
  }
  EXPECT_EQ(loop.size(), 200u);
  const StopCriteria c;
  std::vector<CollapseMetrics> h;
  for (int i = 0; i < 3; ++i) {
    h.push_back(sequence_metrics(loop, 0.0));
    EXPECT_EQ(detect_collapse(h, c), i == 2);
  }
  EXPECT_DOUBLE_EQ(h.back().distinct_4gram_ratio, 2.0 / 197.0);
}

// Property: metrics stay within their ranges on arbitrary sequences.
TEST(Collapse, MetricRangesProperty) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    TokenSequence ids(rng.below(300));
    const std::uint64_t alphabet = 1 + rng.below(256);
    for (TokenId& t : ids) {
      t = static_cast<TokenId>(rng.below(alphabet));
    }
    const CollapseMetrics m = sequence_metrics(ids, 1.0);
    EXPECT_GE(m.distinct_4gram_ratio, 0.0);
    EXPECT_LE(m.distinct_4gram_ratio, 1.0);
    EXPECT_GE(m.max_token_fraction, 0.0);
    EXPECT_LE(m.max_token_fraction, 1.0);
    EXPECT_GE(m.token_entropy, 0.0);
    EXPECT_LE(m.token_entropy, std::log(256.0) + 1e-12);
  }
}

TEST(Collapse, StopCriteriaValidation) {
  StopCriteria c;
  c.max_iters = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = StopCriteria{};
  c.collapse_threshold = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = StopCriteria{};
  c.collapse_patience = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SequenceLoss, ScoresEveryGeneratedToken) {
  // A zero model is uniform, so the mean over any stream length is ln 256,
  // including a trailing partial window.
  const ModelState m = zero_model(preset_config("tiny"));
  for (const std::size_t n : {1u, 99u, 100u, 101u, 200u, 250u}) {
    EXPECT_NEAR(sequence_loss(m, TokenSequence(n, 65)), std::log(256.0), 1e-5) << n;
  }
}

TEST(SequenceLoss, MatchesPerTokenOracle) {
  // Oracle: score token j from the full preceding context cropped into the
  // same windows, one position at a time.
  const ModelState m = init_model(preset_config("tiny"), 3);
  TokenSequence gen;
  for (int i = 0; i < 150; ++i) {
    gen.push_back(static_cast<TokenId>((i * 7 + 3) % 256));
  }
  TokenSequence stream{kStartToken};
  stream.insert(stream.end(), gen.begin(), gen.end());
  double total = 0.0;
  for (std::size_t j = 0; j < gen.size(); ++j) {
    const std::size_t window_start = (j / 100) * 100;
    const std::span<const TokenId> ctx(stream.data() + window_start, j - window_start + 1);
    const auto logits = last_position_logits(m, ctx);
    double mx = -INFINITY;
    for (const float v : logits) {
      mx = std::max(mx, static_cast<double>(v));
    }
    double acc = 0.0;
    for (const float v : logits) {
      acc += std::exp(v - mx);
    }
    total += mx + std::log(acc) - logits[static_cast<std::size_t>(gen[j])];
  }
  EXPECT_NEAR(sequence_loss(m, gen), total / static_cast<double>(gen.size()), 1e-5);
}

TEST(SelfTrainStep, ZeroLearningRateKeepsParameters) {
  const ModelState initial = init_model(preset_config("tiny"), 1);
  SelfTrainConfig cfg = quick_config(5);
  cfg.train.learning_rate = 0.0;
  SelfTrainState s = SelfTrainState::start(initial, cfg, 1);
  for (int i = 0; i < 3; ++i) {
    const IterationRecord r = self_train_step(s);
    EXPECT_EQ(r.iteration, i);
  }
  EXPECT_TRUE(s.model.bit_equal(initial));
  EXPECT_EQ(s.adam.step, 3);
  EXPECT_EQ(s.iteration, 3);
  EXPECT_EQ(s.sequences_generated, 3);
}

TEST(SelfTrainStep, RecordsPreUpdateLoss) {
  const ModelState initial = init_model(preset_config("tiny"), 2);
  SelfTrainState s = SelfTrainState::start(initial, quick_config(5), 2);
  for (int i = 0; i < 3; ++i) {
    const ModelState before = s.model.clone();
    const IterationRecord r = self_train_step(s);
    EXPECT_EQ(s.last_sample.size(), 200u);
    EXPECT_NEAR(r.train_loss, sequence_loss(before, s.last_sample), 1e-6);
    EXPECT_FALSE(s.model.bit_equal(before));
    EXPECT_EQ(r.metrics.distinct_4gram_ratio, distinct_ngram_ratio(s.last_sample, 4));
  }
}

// Re-scoring the same sample after a small step lowers its loss on average.
TEST(SelfTrainStep, StepReducesLossOnItsSample) {
  double mean_change = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SelfTrainConfig cfg = quick_config(5);
    cfg.train.learning_rate = 1e-4;
    SelfTrainState s = SelfTrainState::start(init_model(preset_config("tiny"), seed), cfg, seed);
    const IterationRecord r = self_train_step(s);
    mean_change += (sequence_loss(s.model, s.last_sample) - r.train_loss) / 5.0;
  }
  EXPECT_LT(mean_change, 0.0);
}

TEST(RunSelfTraining, SingleIterationCap) {
  const Corpus c = test_corpus();
  const RunResult r =
      run_self_training(init_model(preset_config("tiny"), 1), quick_config(1), {&c, 1}, 1);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.reason, StopReason::max_iters);
  EXPECT_FALSE(r.collapse_iteration.has_value());
  EXPECT_EQ(r.final_val_losses.size(), 1u);
}

TEST(RunSelfTraining, DeterministicAndRecordsRoundTrip) {
  const Corpus c = test_corpus();
  const ModelState initial = init_model(preset_config("tiny"), 5);
  SelfTrainConfig cfg = quick_config(4);
  cfg.eval_stride = 2;
  cfg.snapshot_every = 2;
  const fs::path dir = fresh_dir("collapse_run_roundtrip");
  const RunResult a = run_self_training(initial, cfg, {&c, 1}, 9, dir);
  const RunResult b = run_self_training(initial, cfg, {&c, 1}, 9);
  ASSERT_EQ(a.records.size(), 4u);
  ASSERT_EQ(b.records.size(), 4u);
  EXPECT_TRUE(a.final_model.bit_equal(b.final_model));

  const RecordsTable t = read_records_csv(dir / "records.csv");
  EXPECT_EQ(t.corpus_names, std::vector<std::string>{"toy"});
  ASSERT_EQ(t.records.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    const IterationRecord& x = a.records[i];
    const IterationRecord& y = t.records[i];
    EXPECT_EQ(y.iteration, static_cast<int>(i));
    EXPECT_EQ(y.train_loss, x.train_loss);
    EXPECT_EQ(y.train_loss, b.records[i].train_loss);
    EXPECT_EQ(y.metrics.distinct_4gram_ratio, x.metrics.distinct_4gram_ratio);
    EXPECT_EQ(y.metrics.token_entropy, x.metrics.token_entropy);
    EXPECT_EQ(y.clip_scale, x.clip_scale);
    EXPECT_EQ(y.sample_file, "samples/iter_" + std::to_string(i) + ".txt");
    EXPECT_TRUE(fs::exists(dir / y.sample_file));
    // Stride 2: rows 1 and 3 are not evaluated.
    EXPECT_EQ(std::isnan(y.val_losses[0]), i % 2 == 1);
    if (i % 2 == 0) {
      EXPECT_EQ(y.val_losses[0], x.val_losses[0]);
    }
  }
  // Row 0 is the initial model's validation loss.
  EXPECT_EQ(t.records[0].val_losses[0], eval_val_loss(initial, c, cfg.eval));

  // The last snapshot holds the final parameters and optimizer state.
  EXPECT_TRUE(load_checkpoint(dir / "snapshots" / "iter_4.ckpt").bit_equal(a.final_model));
  EXPECT_EQ(load_adam_state(dir / "snapshots" / "iter_4.adam").step, 4);
  EXPECT_TRUE(fs::exists(dir / "result.meta"));
  fs::remove_all(dir);
}

TEST(RunSelfTraining, CollapseStopsTheRun) {
  // Greedy decoding of an untrained model settles into a loop quickly.
  const Corpus c = test_corpus();
  SelfTrainConfig cfg = quick_config(50);
  cfg.sampling.top_k = 1;
  const RunResult r = run_self_training(init_model(preset_config("tiny"), 3), cfg, {&c, 1}, 3);
  ASSERT_EQ(r.reason, StopReason::collapsed);
  ASSERT_TRUE(r.collapse_iteration.has_value());
  EXPECT_EQ(static_cast<std::size_t>(*r.collapse_iteration) + 1, r.records.size());
  EXPECT_TRUE(r.records.back().collapsed);
  EXPECT_GE(r.records.size(), 3u);
}

TEST(RunSelfTraining, NumericFailureKeepsLog) {
  const Corpus c = test_corpus();
  ModelState bad = init_model(preset_config("tiny"), 1);
  bad.wte.mutable_data()[0] = NAN;
  const fs::path dir = fresh_dir("collapse_run_nan");
  const RunResult r = run_self_training(bad, quick_config(5), {&c, 1}, 1, dir);
  EXPECT_EQ(r.reason, StopReason::numeric_failure);
  EXPECT_FALSE(r.error.empty());
  EXPECT_TRUE(r.records.empty());
  EXPECT_TRUE(read_records_csv(dir / "records.csv").records.empty());
  fs::remove_all(dir);
}

TEST(Records, CsvRowFormat) {
  IterationRecord r;
  r.iteration = 7;
  r.train_loss = 0.5;
  r.val_losses = {2.25, NAN};
  r.metrics.distinct_4gram_ratio = 0.125;
  r.metrics.max_token_fraction = 0.25;
  r.metrics.token_entropy = 1.5;
  r.collapsed = true;
  r.sample_file = "samples/iter_7.txt";
  const std::vector<std::string> names{"a", "b"};
  EXPECT_EQ(records_csv_header(names),
            "iter,train_loss,val_loss_a,val_loss_b,distinct_4gram_ratio,max_token_fraction,"
            "token_entropy,clip_scale,collapsed,sample_file");
  EXPECT_EQ(records_csv_row(r), "7,0.5,2.25,,0.125,0.25,1.5,1,1,samples/iter_7.txt");
  EXPECT_EQ(parse_stop_reason(stop_reason_name(StopReason::numeric_failure)),
            StopReason::numeric_failure);
  EXPECT_THROW(parse_stop_reason("bored"), FormatError);
}
