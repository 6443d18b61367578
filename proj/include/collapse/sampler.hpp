#pragma once

#include <span>
#include <string>

#include "collapse/model.hpp"
#include "collapse/rng.hpp"
#include "collapse/tokenizer.hpp"

namespace collapse {

struct SamplingConfig {
  double temperature = 0.8;
  int top_k = 500;
  int max_new_tokens = 200;
  std::string prompt;

  void validate() const;
};

// Draws one token: logits / temperature, keep the top_k largest (k clamped to
// the vocabulary; ties broken toward the lower id), softmax over the kept
// entries, one uniform draw from rng.
TokenId sample_next(std::span<const float> logits, const SamplingConfig& cfg, Rng& rng);

// The ids sample_next may return for these logits, ascending.
std::vector<TokenId> top_k_candidates(std::span<const float> logits, int top_k);

// Autoregressive generation of exactly cfg.max_new_tokens tokens. The context
// starts with the encoded prompt, or kStartToken when the prompt is empty, and
// is cropped to the most recent block_size tokens before every step. The
// prompt is not part of the result. Consumes exactly max_new_tokens draws.
TokenSequence generate(const ModelState& model, const SamplingConfig& cfg, Rng& rng);

}  // namespace collapse
