// Properties that need a fully pretrained base model. Under ctest these run
// after the base-model fixture; the models are read from runs/base.

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "collapse/experiments.hpp"
#include "collapse/selftrain.hpp"

using namespace collapse;
namespace fs = std::filesystem;

namespace {

const fs::path kBase = "runs/base/tiny";

Corpus shakespeare() { return load_corpus("corpora/shakespeare_val.txt", "shakespeare"); }

}  // namespace

TEST(PretrainedTiny, BeatsUniformAndReachesPinnedLoss) {
  const ModelState model = load_checkpoint(kBase / "model.ckpt");
  const double loss = eval_val_loss(model, shakespeare(), EvalConfig{});
  EXPECT_LT(loss, std::log(256.0));
  EXPECT_LT(loss, 2.8);
  const PlanValues meta = PlanValues::load(kBase / "pretrain.meta");
  EXPECT_EQ(format_double(loss), meta.get("info.final_val_loss_shakespeare"));
}

// Training on a constant stream drives its loss toward zero.
TEST(PretrainedTiny, ConstantStreamLossApproachesZero) {
  const ModelState base = load_checkpoint(kBase / "model.ckpt");
  const TokenSequence constant(200, 45);
  int below = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SelfTrainConfig cfg;
    cfg.train.learning_rate = 1e-3;
    SelfTrainState s = SelfTrainState::start(base, cfg, seed);
    for (int i = 0; i < 20; ++i) {
      train_on_sequence(s, constant);
    }
    below += sequence_loss(s.model, constant) < 0.01 ? 1 : 0;
  }
  EXPECT_GE(below, 3);
}

TEST(PretrainedTiny, HighLearningRateCollapsesWithTranscript) {
  const std::vector<Corpus> corpora{shakespeare()};
  SelfTrainConfig cfg;
  cfg.train.learning_rate = 5e-3;
  cfg.stop.max_iters = 2000;
  const fs::path dir = fs::temp_directory_path() / "collapse_pretrained_run";
  fs::remove_all(dir);
  const RunResult r = run_self_training(load_checkpoint(kBase / "model.ckpt"), cfg, corpora, 1, dir);
  ASSERT_EQ(r.reason, StopReason::collapsed);
  ASSERT_TRUE(r.collapse_iteration.has_value());
  EXPECT_LT(*r.collapse_iteration, 2000);
  const std::string doc = run_transcript_capture(dir);
  const int last = *r.collapse_iteration;
  EXPECT_NE(doc.find("## Iteration " + std::to_string(last)), std::string::npos);
  EXPECT_LT(r.records.back().metrics.distinct_4gram_ratio, 0.1);
  fs::remove_all(dir);
}

TEST(PretrainedTiny, SmallStepLowersLossOnItsSample) {
  const ModelState base = load_checkpoint(kBase / "model.ckpt");
  double mean_change = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SelfTrainConfig cfg;
    cfg.train.learning_rate = 1e-4;
    SelfTrainState s = SelfTrainState::start(base, cfg, seed);
    const IterationRecord r = self_train_step(s);
    mean_change += (sequence_loss(s.model, s.last_sample) - r.train_loss) / 5.0;
  }
  EXPECT_LT(mean_change, 0.0);
}
