#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "collapse/model.hpp"
#include "collapse/tokenizer.hpp"

namespace collapse {

struct Corpus {
  std::string name;
  std::filesystem::path path;
  TokenSequence tokens;
  std::string digest;  // hex SHA-256 of the file bytes
};

// Reads a text file and byte-tokenizes it. Throws CorpusError when the file
// is unreadable or holds fewer than min_tokens bytes.
Corpus load_corpus(const std::filesystem::path& path, const std::string& name,
                   std::size_t min_tokens = 101);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct EvalConfig {
  int windows_per_eval = 32;  // 0 means every window
  std::uint64_t seed = 0;
};

// Non-overlapping evaluation windows: window w scores targets
// tokens[w*block + 1 .. w*block + block] from inputs tokens[w*block .. w*block + block - 1].
// Returns the window start offsets, ascending. A subsample is drawn without
// replacement from the eval seed, so the set is fixed for a given corpus,
// block size and config.
std::vector<std::size_t> select_windows(const Corpus& corpus, std::size_t block_size,
                                        const EvalConfig& cfg);

// Mean next-token cross-entropy (nats/token) over the windows, eval mode.
double eval_val_loss(const ModelState& model, const Corpus& corpus,
                     std::span<const std::size_t> window_starts);
double eval_val_loss(const ModelState& model, const Corpus& corpus, const EvalConfig& cfg);

// Sum of next-token negative log-likelihoods, in double, for logits [N x V].
double sum_token_nll(const Tensor& logits, std::span<const TokenId> targets);

}  // namespace collapse
