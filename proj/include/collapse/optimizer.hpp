#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "collapse/model.hpp"
#include "collapse/tensor.hpp"

namespace collapse {

struct TrainConfig {
  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double grad_clip = 1.0;  // <= 0 disables clipping
  double weight_decay = 0.0;

  void validate() const;
};

struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::int64_t step = 0;

  static AdamState for_parameters(std::span<const Tensor> params);
  static AdamState for_model(const ModelState& model);

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Global L2 norm over every gradient (double accumulation, parameter order).
double grad_norm(std::span<const Tensor> params);

// If the global norm exceeds max_norm, scales all gradients by
// max_norm / norm. Returns the applied factor (1 when unchanged).
// Throws NumericError on a non-finite gradient.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

// Bias-corrected Adam with decoupled weight decay. Reads gradients, leaves
// them untouched, advances state.step by one.
void adam_step(std::span<Tensor> params, AdamState& state, const TrainConfig& cfg);
void adam_step(ModelState& model, AdamState& state, const TrainConfig& cfg);

void save_adam_state(const AdamState& state, const std::filesystem::path& path);
AdamState load_adam_state(const std::filesystem::path& path);

}  // namespace collapse
