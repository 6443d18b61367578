#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "collapse/rng.hpp"
#include "collapse/tensor.hpp"
#include "collapse/tokenizer.hpp"

namespace collapse {

struct ModelConfig {
  int n_layer = 12;
  int n_head = 12;
  int n_embd = 768;
  int block_size = 100;
  int vocab_size = 50257;
  float dropout = 0.0F;
  bool bias = false;

  // Throws ConfigError describing the first violated constraint.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Named model sizes:
//   tiny          2 layers, 2 heads, d=64,  byte vocab
//   small         4 layers, 4 heads, d=128, byte vocab
//   medium        6 layers, 6 heads, d=192, byte vocab
//   paper-default 12 layers, 12 heads, d=768, GPT-2 vocab (50257)
// All use block_size=100, dropout=0 and no biases.
ModelConfig preset_config(std::string_view name);
std::vector<std::string> preset_names();

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct BlockParams {
  Tensor ln1_gain;
  Tensor ln1_bias;
  Tensor attn_qkv;  // [d x 3d]
  Tensor attn_qkv_bias;
  Tensor attn_proj;  // [d x d]
  Tensor attn_proj_bias;
  Tensor ln2_gain;
  Tensor ln2_bias;
  Tensor mlp_fc;  // [d x 4d]
  Tensor mlp_fc_bias;
  Tensor mlp_proj;  // [4d x d]
  Tensor mlp_proj_bias;
};

// Decoder-only transformer parameters. The output head is tied to the token
// embedding, so `wte` serves both roles.
//
// Parameter schema (names and shapes, in storage order):
//   wte.weight                [vocab x d]
//   wpe.weight                [block_size x d]
//   h.<i>.ln_1.weight         [d]        h.<i>.ln_1.bias         [d]     (bias only)
//   h.<i>.attn.c_attn.weight  [d x 3d]   h.<i>.attn.c_attn.bias  [3d]    (bias only)
//   h.<i>.attn.c_proj.weight  [d x d]    h.<i>.attn.c_proj.bias  [d]     (bias only)
//   h.<i>.ln_2.weight         [d]        h.<i>.ln_2.bias         [d]     (bias only)
//   h.<i>.mlp.c_fc.weight     [d x 4d]   h.<i>.mlp.c_fc.bias     [4d]    (bias only)
//   h.<i>.mlp.c_proj.weight   [4d x d]   h.<i>.mlp.c_proj.bias   [d]     (bias only)
//   ln_f.weight               [d]        ln_f.bias               [d]     (bias only)
// Linear weights are stored [in x out].
class ModelState {
 public:
  ModelConfig config;
  VocabKind vocab_kind = VocabKind::byte_level;
  Tensor wte;
  Tensor wpe;
  std::vector<BlockParams> blocks;
  Tensor lnf_gain;
  Tensor lnf_bias;

  // Handles sharing storage with the model, in schema order.
  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  void zero_grad();

  // Deep copy of all parameter values (gradients start at zero).
  ModelState clone() const;

  bool bit_equal(const ModelState& other) const;
};

// Parameters with every value zero except layer-norm gains (one). All
// positions then predict the uniform distribution.
ModelState zero_model(const ModelConfig& config, VocabKind kind = VocabKind::byte_level);

// normal(0, 0.02) weights; the two residual output projections per block use
// 0.02 / sqrt(2 * n_layer); gains one, biases zero. Deterministic in seed.
ModelState init_model(const ModelConfig& config, std::uint64_t seed);

std::int64_t count_params(const ModelState& model);
// Same count from the schema alone, without allocating the parameters.
std::int64_t count_params(const ModelConfig& config);

enum class Mode { train, eval };

// tokens holds `batch` sequences of equal length back to back.
// Returns logits [batch*T x vocab]. Dropout is applied only in train mode and
// draws from dropout_rng; eval mode consumes no randomness.
Tensor forward(const ModelState& model, std::span<const TokenId> tokens, std::size_t batch,
               Mode mode, Tape* tape = nullptr, Rng* dropout_rng = nullptr);

// Logits for the final position of one sequence only (eval mode, no tape).
std::vector<float> last_position_logits(const ModelState& model, std::span<const TokenId> tokens);

// Eval-mode incremental decoding of one sequence. Keys and values of every
// processed position are cached per layer, so growing the context by one token
// costs one row per layer, and the final layer only computes the last row.
// Logits agree bit for bit with last_position_logits on the same context.
class Decoder {
 public:
  explicit Decoder(const ModelState& model);

  // Discards the cache and processes tokens at positions 0..n-1.
  std::vector<float> prefill(std::span<const TokenId> tokens);
  // Appends one token at the next position. Throws ContextLengthError once
  // the context holds block_size tokens.
  std::vector<float> step(TokenId token);

  std::size_t length() const { return length_; }

 private:
  std::vector<float> extend(std::span<const TokenId> tokens);

  const ModelState* model_;
  std::vector<std::vector<float>> keys_;  // per layer, [block_size x d]
  std::vector<std::vector<float>> values_;
  std::size_t length_ = 0;
};

// Binary checkpoint; see docs/checkpoint-format.md for the byte layout.
inline constexpr char kCheckpointMagic[8] = {'C', 'L', 'P', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ModelState& model, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace collapse
