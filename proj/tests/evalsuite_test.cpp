#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "collapse/errors.hpp"
#include "collapse/evalsuite.hpp"
#include "collapse/model.hpp"

using namespace collapse;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& text) {
  const fs::path p = fs::temp_directory_path() / name;
  std::ofstream(p, std::ios::binary | std::ios::trunc) << text;
  return p;
}

std::string sample_text(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const std::string alphabet = "abcdefghij klmnop\nqrst,.";
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    s.push_back(alphabet[rng.below(alphabet.size())]);
  }
  return s;
}

// Straight-line oracle: one window per forward, log-sum-exp in long double.
double oracle_loss(const ModelState& m, const Corpus& c) {
  const std::size_t block = static_cast<std::size_t>(m.config.block_size);
  long double total = 0.0L;
  std::size_t count = 0;
  for (std::size_t s = 0; s + block + 1 <= c.tokens.size(); s += block) {
    const std::span<const TokenId> in(c.tokens.data() + s, block);
    const Tensor logits = forward(m, in, 1, Mode::eval);
    for (std::size_t t = 0; t < block; ++t) {
      long double mx = -INFINITY;
      for (std::size_t v = 0; v < logits.cols(); ++v) {
        mx = std::max<long double>(mx, logits.at(t, v));
      }
      long double acc = 0.0L;
      for (std::size_t v = 0; v < logits.cols(); ++v) {
        acc += std::exp(static_cast<long double>(logits.at(t, v)) - mx);
      }
      total += mx + std::log(acc) - logits.at(t, static_cast<std::size_t>(c.tokens[s + t + 1]));
      ++count;
    }
  }
  return static_cast<double>(total / static_cast<long double>(count));
}

}  // namespace

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Corpus, LoadErrorsAndDigest) {
  EXPECT_THROW(load_corpus("/nonexistent/corpus.txt", "x"), CorpusError);
  const fs::path short_file = write_temp("collapse_short.txt", std::string(100, 'a'));
  EXPECT_THROW(load_corpus(short_file, "short"), CorpusError);
  const fs::path ok = write_temp("collapse_ok.txt", std::string(101, 'a'));
  const Corpus a = load_corpus(ok, "ok");
  const Corpus b = load_corpus(ok, "ok");
  EXPECT_EQ(a.tokens.size(), 101u);
  EXPECT_EQ(a.digest, b.digest);
  EXPECT_EQ(a.digest, sha256_file(ok));
  fs::remove(short_file);
  fs::remove(ok);
}

// The bundled corpora load to the byte counts and digests recorded in
// corpora/MANIFEST when they were built.
TEST(Corpus, BundledCorporaMatchManifest) {
  std::ifstream manifest("corpora/MANIFEST");
  ASSERT_TRUE(manifest) << "run from the source directory";
  std::string name;
  std::size_t bytes = 0;
  std::string digest;
  int seen = 0;
  while (manifest >> name >> bytes >> digest) {
    const Corpus c = load_corpus(fs::path("corpora") / name, name);
    EXPECT_EQ(c.tokens.size(), bytes) << name;
    EXPECT_EQ(c.digest, digest) << name;
    ++seen;
  }
  EXPECT_EQ(seen, 3);
}

TEST(Windows, NonOverlappingSubsampleFixedBySeed) {
  const fs::path p = write_temp("collapse_windows.txt", sample_text(5001, 1));
  const Corpus c = load_corpus(p, "w");
  EvalConfig cfg;
  cfg.windows_per_eval = 8;
  cfg.seed = 3;
  const auto a = select_windows(c, 100, cfg);
  EXPECT_EQ(a.size(), 8u);
  EXPECT_TRUE(std::ranges::is_sorted(a));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i] % 100, 0u);
    EXPECT_LE(a[i] + 101, c.tokens.size());
    if (i > 0) {
      EXPECT_GE(a[i], a[i - 1] + 100);
    }
  }
  EXPECT_EQ(select_windows(c, 100, cfg), a);
  cfg.seed = 4;
  EXPECT_NE(select_windows(c, 100, cfg), a);
  // 5001 tokens hold exactly 50 windows of 100 inputs plus one target.
  cfg.windows_per_eval = 0;
  EXPECT_EQ(select_windows(c, 100, cfg).size(), 50u);
  cfg.windows_per_eval = 500;
  EXPECT_EQ(select_windows(c, 100, cfg).size(), 50u);
  fs::remove(p);
}

TEST(EvalLoss, ZeroModelIsLn256) {
  const fs::path p = write_temp("collapse_zero.txt", sample_text(3000, 2));
  const Corpus c = load_corpus(p, "z");
  const ModelState m = zero_model(preset_config("tiny"));
  EXPECT_NEAR(eval_val_loss(m, c, EvalConfig{0, 0}), std::log(256.0), 1e-6);
  fs::remove(p);
}

TEST(EvalLoss, AllWindowsMatchSingleWindowOracle) {
  const fs::path p = write_temp("collapse_oracle.txt", sample_text(2501, 5));
  const Corpus c = load_corpus(p, "o");
  const ModelState m = init_model(preset_config("tiny"), 4);
  EXPECT_NEAR(eval_val_loss(m, c, EvalConfig{0, 0}), oracle_loss(m, c), 1e-6);
  fs::remove(p);
}

TEST(EvalLoss, DeterministicOrderInvariantAndNonMutating) {
  const fs::path p = write_temp("collapse_det.txt", sample_text(6000, 6));
  const Corpus c = load_corpus(p, "d");
  const ModelState m = init_model(preset_config("tiny"), 8);
  const ModelState before = m.clone();
  const EvalConfig cfg{16, 2};
  const double a = eval_val_loss(m, c, cfg);
  const double b = eval_val_loss(m, c, cfg);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(m.bit_equal(before));
  auto starts = select_windows(c, 100, cfg);
  std::ranges::reverse(starts);
  EXPECT_NEAR(eval_val_loss(m, c, starts), a, 1e-12);
  fs::remove(p);
}

TEST(EvalLoss, SumTokenNllMatchesLogSumExp) {
  const Tensor logits = Tensor::from_data({2, 3}, {1.0F, 2.0F, 3.0F, -1.0F, 0.0F, 5.0F});
  const TokenId targets[] = {0, 2};
  const double row0 = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 1.0;
  const double row1 = std::log(std::exp(-1.0) + std::exp(0.0) + std::exp(5.0)) - 5.0;
  EXPECT_NEAR(sum_token_nll(logits, targets), row0 + row1, 1e-12);
}
