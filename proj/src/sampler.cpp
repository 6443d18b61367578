#include "collapse/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "collapse/errors.hpp"

namespace collapse {

void SamplingConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be > 0");
  }
  if (top_k < 1) {
    throw ConfigError("top_k must be >= 1");
  }
  if (max_new_tokens < 1) {
    throw ConfigError("max_new_tokens must be >= 1");
  }
}

namespace {

std::vector<TokenId> ranked_top_k(std::span<const float> logits, int top_k) {
  const std::size_t k = std::min(static_cast<std::size_t>(top_k), logits.size());
  std::vector<TokenId> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](TokenId a, TokenId b) {
                      return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
                    });
  order.resize(k);
  return order;
}

}  // namespace

std::vector<TokenId> top_k_candidates(std::span<const float> logits, int top_k) {
  auto ids = ranked_top_k(logits, top_k);
  std::ranges::sort(ids);
  return ids;
}

TokenId sample_next(std::span<const float> logits, const SamplingConfig& cfg, Rng& rng) {
  check_finite(logits, "sample_next logits");
  if (logits.empty()) {
    throw DimensionError("sample_next: empty logits");
  }
  const std::vector<TokenId> kept = ranked_top_k(logits, cfg.top_k);
  // kept[0] holds the maximum, so every exponent below is <= 0.
  const double top = static_cast<double>(logits[kept[0]]) / cfg.temperature;
  std::vector<double> weights(kept.size());
  double total = 0.0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    weights[i] = std::exp(static_cast<double>(logits[kept[i]]) / cfg.temperature - top);
    total += weights[i];
  }
  const double u = rng.uniform() * total;
  double cumulative = 0.0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    cumulative += weights[i];
    if (u < cumulative) {
      return kept[i];
    }
  }
  return kept.back();
}

TokenSequence generate(const ModelState& model, const SamplingConfig& cfg, Rng& rng) {
  cfg.validate();
  TokenSequence context = cfg.prompt.empty() ? TokenSequence{kStartToken} : encode(cfg.prompt);
  const std::size_t prompt_len = context.size();
  const auto window = static_cast<std::size_t>(model.config.block_size);
  context.reserve(prompt_len + static_cast<std::size_t>(cfg.max_new_tokens));
  auto recent = [&]() {
    const std::size_t start = context.size() > window ? context.size() - window : 0;
    return std::span<const TokenId>(context.data() + start, context.size() - start);
  };
  Decoder decoder(model);
  std::vector<float> logits = decoder.prefill(recent());
  for (int step = 0; step < cfg.max_new_tokens; ++step) {
    const TokenId next = sample_next(logits, cfg, rng);
    context.push_back(next);
    if (step + 1 == cfg.max_new_tokens) {
      break;
    }
    // Once the window is full every position shifts, so the cache is rebuilt.
    logits = decoder.length() < window ? decoder.step(next) : decoder.prefill(recent());
  }
  return {context.begin() + static_cast<std::ptrdiff_t>(prompt_len), context.end()};
}

}  // namespace collapse
