#include "collapse/optimizer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "collapse/errors.hpp"

namespace collapse {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be >= 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("beta1 and beta2 must be in [0, 1)");
  }
  if (!(eps > 0.0)) {
    throw ConfigError("eps must be > 0");
  }
  if (!(weight_decay >= 0.0)) {
    throw ConfigError("weight_decay must be >= 0");
  }
}

AdamState AdamState::for_parameters(std::span<const Tensor> params) {
  AdamState s;
  for (const Tensor& p : params) {
    s.m.emplace_back(p.numel(), 0.0F);
    s.v.emplace_back(p.numel(), 0.0F);
  }
  return s;
}

AdamState AdamState::for_model(const ModelState& model) {
  const auto params = model.parameters();
  return for_parameters(params);
}

double grad_norm(std::span<const Tensor> params) {
  double sq = 0.0;
  for (const Tensor& p : params) {
    for (const float g : p.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient");
      }
      sq += static_cast<double>(g) * g;
    }
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm <= 0.0 || norm <= max_norm) {
    return 1.0;
  }
  const double factor = max_norm / norm;
  const auto f = static_cast<float>(factor);
  for (Tensor& p : params) {
    for (float& g : p.mutable_grad()) {
      g *= f;
    }
  }
  return factor;
}

void adam_step(std::span<Tensor> params, AdamState& state, const TrainConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                        " tensors, model has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel()) {
      throw ContractError("adam_step: moment buffer " + std::to_string(i) +
                          " does not match parameter shape " + shape_string(params[i].shape()));
    }
  }
  state.step += 1;
  const auto t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double lr = cfg.learning_rate;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    const auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
      double pj = p[j];
      pj -= lr * cfg.weight_decay * pj;
      pj -= lr * update;
      p[j] = static_cast<float>(pj);
    }
  }
}

void adam_step(ModelState& model, AdamState& state, const TrainConfig& cfg) {
  auto params = model.parameters();
  adam_step(std::span<Tensor>(params), state, cfg);
}

namespace {

constexpr char kAdamMagic[8] = {'C', 'L', 'P', 'S', 'A', 'D', 'A', 'M'};

void write_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) {
    b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  out.write(b, 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) {
    throw FormatError("truncated optimizer state");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  }
  return v;
}

void write_floats(std::ostream& out, const std::vector<float>& xs) {
  write_u64(out, xs.size());
  for (const float x : xs) {
    const auto u = std::bit_cast<std::uint32_t>(x);
    const char b[4] = {static_cast<char>(u & 0xFF), static_cast<char>((u >> 8) & 0xFF),
                       static_cast<char>((u >> 16) & 0xFF), static_cast<char>((u >> 24) & 0xFF)};
    out.write(b, 4);
  }
}

std::vector<float> read_floats(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  std::vector<float> xs(n);
  for (float& x : xs) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
      throw FormatError("truncated optimizer state");
    }
    x = std::bit_cast<float>(static_cast<std::uint32_t>(b[0] | (b[1] << 8) | (b[2] << 16) |
                                                        (static_cast<std::uint32_t>(b[3]) << 24)));
  }
  return xs;
}

}  // namespace

// Layout: magic, u64 step, u64 tensor count, then per tensor m and v as
// (u64 length, little-endian floats).
void save_adam_state(const AdamState& state, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw FormatError("cannot write optimizer state: " + path.string());
  }
  out.write(kAdamMagic, 8);
  write_u64(out, static_cast<std::uint64_t>(state.step));
  write_u64(out, state.m.size());
  for (std::size_t i = 0; i < state.m.size(); ++i) {
    write_floats(out, state.m[i]);
    write_floats(out, state.v[i]);
  }
}

AdamState load_adam_state(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open optimizer state: " + path.string());
  }
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kAdamMagic, 8) != 0) {
    throw FormatError("bad optimizer state magic: " + path.string());
  }
  AdamState s;
  s.step = static_cast<std::int64_t>(read_u64(in));
  const std::uint64_t n = read_u64(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    s.m.push_back(read_floats(in));
    s.v.push_back(read_floats(in));
  }
  return s;
}

}  // namespace collapse
