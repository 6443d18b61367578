#include "collapse/evalsuite.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <memory>
#include <numeric>

#include "collapse/errors.hpp"
#include "collapse/rng.hpp"

namespace collapse {

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), md, &len) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot read " + path.string());
  }
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

Corpus load_corpus(const std::filesystem::path& path, const std::string& name,
                   std::size_t min_tokens) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CorpusError("cannot read corpus '" + name + "' at " + path.string());
  }
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < min_tokens) {
    throw CorpusError("corpus '" + name + "' has " + std::to_string(bytes.size()) +
                      " bytes, needs at least " + std::to_string(min_tokens));
  }
  return Corpus{name, path, encode(bytes), sha256_hex(bytes)};
}

std::vector<std::size_t> select_windows(const Corpus& corpus, std::size_t block_size,
                                        const EvalConfig& cfg) {
  if (corpus.tokens.size() < block_size + 1) {
    throw CorpusError("corpus '" + corpus.name + "' is shorter than one window");
  }
  const std::size_t total = (corpus.tokens.size() - 1) / block_size;
  std::vector<std::size_t> starts(total);
  for (std::size_t w = 0; w < total; ++w) {
    starts[w] = w * block_size;
  }
  if (cfg.windows_per_eval <= 0 || static_cast<std::size_t>(cfg.windows_per_eval) >= total) {
    return starts;
  }
  // Partial Fisher-Yates: the first windows_per_eval slots become the sample.
  Rng rng = Rng::stream(cfg.seed, "eval-windows");
  const auto want = static_cast<std::size_t>(cfg.windows_per_eval);
  for (std::size_t i = 0; i < want; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(total - i));
    std::swap(starts[i], starts[j]);
  }
  starts.resize(want);
  std::ranges::sort(starts);
  return starts;
}

double sum_token_nll(const Tensor& logits, std::span<const TokenId> targets) {
  const std::size_t vocab = logits.cols();
  const auto x = logits.data();
  double total = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const float* row = x.data() + r * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double acc = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) {
      acc += std::exp(static_cast<double>(row[c]) - mx);
    }
    total += mx + std::log(acc) - row[targets[r]];
  }
  return total;
}

double eval_val_loss(const ModelState& model, const Corpus& corpus,
                     std::span<const std::size_t> window_starts) {
  const auto block = static_cast<std::size_t>(model.config.block_size);
  constexpr std::size_t kBatch = 8;
  double total = 0.0;
  std::size_t count = 0;
  std::vector<TokenId> inputs;
  std::vector<TokenId> targets;
  for (std::size_t first = 0; first < window_starts.size(); first += kBatch) {
    const std::size_t n = std::min(kBatch, window_starts.size() - first);
    inputs.clear();
    targets.clear();
    for (std::size_t w = first; w < first + n; ++w) {
      const std::size_t s = window_starts[w];
      if (s + block + 1 > corpus.tokens.size()) {
        throw CorpusError("evaluation window at " + std::to_string(s) + " runs past corpus '" +
                          corpus.name + "'");
      }
      inputs.insert(inputs.end(), corpus.tokens.begin() + static_cast<std::ptrdiff_t>(s),
                    corpus.tokens.begin() + static_cast<std::ptrdiff_t>(s + block));
      targets.insert(targets.end(), corpus.tokens.begin() + static_cast<std::ptrdiff_t>(s + 1),
                     corpus.tokens.begin() + static_cast<std::ptrdiff_t>(s + block + 1));
    }
    const Tensor logits = forward(model, inputs, n, Mode::eval);
    total += sum_token_nll(logits, targets);
    count += targets.size();
  }
  if (count == 0) {
    throw CorpusError("no evaluation windows for corpus '" + corpus.name + "'");
  }
  return total / static_cast<double>(count);
}

double eval_val_loss(const ModelState& model, const Corpus& corpus, const EvalConfig& cfg) {
  const auto starts =
      select_windows(corpus, static_cast<std::size_t>(model.config.block_size), cfg);
  return eval_val_loss(model, corpus, starts);
}

}  // namespace collapse
