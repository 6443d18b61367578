#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "collapse/rng.hpp"
#include "collapse/tensor.hpp"

namespace collapse::testing {

inline std::vector<float> random_values(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<float> out(n);
  for (float& v : out) {
    v = static_cast<float>(rng.normal() * scale);
  }
  return out;
}

inline Tensor random_param(Shape shape, std::uint64_t seed, double scale = 1.0) {
  const std::size_t n = shape_numel(shape);
  return Tensor::parameter(std::move(shape), random_values(n, seed, scale));
}

// Central differences of f with respect to every element of `param`.
inline std::vector<double> numeric_grad(Tensor& param, const std::function<double()>& f,
                                        double h) {
  std::vector<double> out(param.numel());
  auto data = param.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float saved = data[i];
    data[i] = static_cast<float>(saved + h);
    const double up = f();
    data[i] = static_cast<float>(saved - h);
    const double down = f();
    data[i] = saved;
    // Use the perturbation actually representable in float.
    const double step = static_cast<double>(static_cast<float>(saved + h)) -
                        static_cast<double>(static_cast<float>(saved - h));
    out[i] = (up - down) / step;
  }
  return out;
}

// ||a - b|| / max(||a||, ||b||), 0 when both are zero.
inline double relative_error(std::span<const float> a, std::span<const double> b) {
  double diff = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += static_cast<double>(a[i]) * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

// Fixed random weighting so a tensor-valued op becomes a scalar in double.
inline double weighted_sum(const Tensor& t, const std::vector<float>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) {
    s += static_cast<double>(t.data()[i]) * w[i];
  }
  return s;
}

}  // namespace collapse::testing
