#include "collapse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <utility>

#include "collapse/errors.hpp"

namespace collapse {

namespace {

thread_local std::uint64_t next_node_id = 1;

bool wants_grad(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (tape == nullptr) {
    return false;
  }
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_string(t.shape()));
  }
}

// Register-blocked GEMM: C[M x N] += sum_p A(i, p) * B[p, :], with A read
// through strides so one kernel serves both A and A^T. Every output element is
// a sequential multiply-add chain over p = 0..K-1, whichever tile computes it,
// so results do not depend on matrix shape or tile position.
// A trait rather than an alias template: GCC drops vector_size on dependent
// aliases.
template <std::size_t W>
struct vec_of {
  typedef float type __attribute__((vector_size(W * sizeof(float))));
};
template <std::size_t W>
using vec = typename vec_of<W>::type;

template <std::size_t W>
inline vec<W> load_vec(const float* p) {
  vec<W> v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

template <std::size_t W>
inline void store_vec(float* p, vec<W> v) {
  std::memcpy(p, &v, sizeof(v));
}

// MR rows by NV vectors of W floats.
template <std::size_t MR, std::size_t NV, std::size_t W>
void gemm_tile(std::size_t i, std::size_t j, std::size_t N, std::size_t K, const float* A,
               std::size_t a_rs, std::size_t a_cs, const float* B, float* C) {
  vec<W> acc[MR][NV];
  for (std::size_t r = 0; r < MR; ++r) {
    for (std::size_t v = 0; v < NV; ++v) {
      acc[r][v] = load_vec<W>(C + (i + r) * N + j + W * v);
    }
  }
  for (std::size_t p = 0; p < K; ++p) {
    vec<W> b[NV];
    for (std::size_t v = 0; v < NV; ++v) {
      b[v] = load_vec<W>(B + p * N + j + W * v);
    }
    for (std::size_t r = 0; r < MR; ++r) {
      const float av = A[(i + r) * a_rs + p * a_cs];
      for (std::size_t v = 0; v < NV; ++v) {
        acc[r][v] += av * b[v];
      }
    }
  }
  for (std::size_t r = 0; r < MR; ++r) {
    for (std::size_t v = 0; v < NV; ++v) {
      store_vec<W>(C + (i + r) * N + j + W * v, acc[r][v]);
    }
  }
}

template <std::size_t MR>
void gemm_rows(std::size_t i, std::size_t N, std::size_t K, const float* A, std::size_t a_rs,
               std::size_t a_cs, const float* B, float* C) {
  std::size_t j = 0;
  for (; j + 32 <= N; j += 32) {
    gemm_tile<MR, 2, 16>(i, j, N, K, A, a_rs, a_cs, B, C);
  }
  for (; j + 16 <= N; j += 16) {
    gemm_tile<MR, 1, 16>(i, j, N, K, A, a_rs, a_cs, B, C);
  }
  for (; j + 8 <= N; j += 8) {
    gemm_tile<MR, 1, 8>(i, j, N, K, A, a_rs, a_cs, B, C);
  }
  for (; j < N; ++j) {
    for (std::size_t r = 0; r < MR; ++r) {
      float acc = C[(i + r) * N + j];
      for (std::size_t p = 0; p < K; ++p) {
        acc += A[(i + r) * a_rs + p * a_cs] * B[p * N + j];
      }
      C[(i + r) * N + j] = acc;
    }
  }
}

void gemm_strided(std::size_t M, std::size_t N, std::size_t K, const float* A, std::size_t a_rs,
                  std::size_t a_cs, const float* B, float* C) {
  std::size_t i = 0;
  for (; i + 8 <= M; i += 8) {
    gemm_rows<8>(i, N, K, A, a_rs, a_cs, B, C);
  }
  for (; i + 4 <= M; i += 4) {
    gemm_rows<4>(i, N, K, A, a_rs, a_cs, B, C);
  }
  for (; i < M; ++i) {
    gemm_rows<1>(i, N, K, A, a_rs, a_cs, B, C);
  }
}

// c[m x n] += a[m x k] . b[k x n]
void gemm_accumulate(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                     std::size_t n) {
  gemm_strided(m, n, k, a, k, 1, b, c);
}

// c[k x n] += a[m x k]^T . d[m x n], reduced over m in ascending order.
void gemm_at_b_accumulate(const float* a, const float* d, float* c, std::size_t m, std::size_t k,
                          std::size_t n) {
  gemm_strided(k, n, m, a, 1, k, d, c);
}

std::vector<float> transpose(const float* src, std::size_t rows, std::size_t cols) {
  std::vector<float> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[c * rows + r] = src[r * cols + c];
    }
  }
  return out;
}

constexpr float kGeluCoeff = 0.044715F;
constexpr float kSqrtTwoOverPi = 0.7978845608028654F;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (const std::size_t d : shape) {
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    out << (i ? "x" : "") << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor make_result(Shape shape, bool needs_grad) {
  auto node = std::make_shared<detail::Node>();
  const std::size_t n = shape_numel(shape);
  node->shape = std::move(shape);
  node->data.assign(n, 0.0F);
  if (needs_grad) {
    node->grad.assign(n, 0.0F);
  }
  node->leaf = false;
  node->id = next_node_id++;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) {
  Tensor t = make_result(std::move(shape), false);
  t.node_->leaf = true;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> values) {
  for (const std::size_t d : shape) {
    if (d == 0) {
      throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
    }
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  Tensor t = make_result(std::move(shape), false);
  t.node_->data = std::move(values);
  t.node_->leaf = true;
  return t;
}

Tensor Tensor::parameter(Shape shape, std::vector<float> values) {
  Tensor t = from_data(std::move(shape), std::move(values));
  t.node_->grad.assign(t.numel(), 0.0F);
  return t;
}

Tensor Tensor::parameter(Shape shape) {
  const std::size_t n = shape_numel(shape);
  return parameter(std::move(shape), std::vector<float>(n, 0.0F));
}

std::size_t Tensor::cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }

std::size_t Tensor::rows() const {
  const std::size_t c = cols();
  return c == 0 ? 0 : numel() / c;
}

float Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape()));
  }
  return node_->data[0];
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0F);
}

Tensor Tensor::clone() const { return from_data(shape(), node_->data); }

void check_finite(std::span<const float> values, const char* what) {
  // x * 0 is NaN exactly when x is NaN or infinite, and NaN survives the sum.
  vec<16> probe = {};
  std::size_t i = 0;
  for (; i + 16 <= values.size(); i += 16) {
    probe += load_vec<16>(values.data() + i) * 0.0F;
  }
  float tail = 0.0F;
  for (; i < values.size(); ++i) {
    tail += values[i] * 0.0F;
  }
  bool finite = tail == 0.0F;
  for (std::size_t lane = 0; lane < 16; ++lane) {
    finite = finite && probe[lane] == 0.0F;
  }
  if (!finite) {
    throw NumericError(std::string(what) + ": non-finite value");
  }
}

// ---- tape ------------------------------------------------------------------

void Tape::record(std::string op, std::vector<const Tensor*> inputs, const Tensor& output,
                  std::function<void()> backward) {
  Entry entry;
  entry.op = std::move(op);
  for (const Tensor* in : inputs) {
    if (in->node_id() >= output.node_id()) {
      throw ContractError(entry.op + ": input recorded after its output");
    }
    entry.inputs.push_back(in->node_id());
  }
  entry.output = output.node_id();
  entry.output_node = output.shared_node();
  entry.backward = std::move(backward);
  entries_.push_back(std::move(entry));
}

void Tape::backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw ContractError("backward: root must be a scalar, got " +
                        (root.defined() ? shape_string(root.shape()) : std::string("undefined")));
  }
  const bool on_tape = std::any_of(entries_.rbegin(), entries_.rend(), [&](const Entry& e) {
    return e.output_node.get() == root.node();
  });
  if (!root.requires_grad() || !on_tape) {
    throw ContractError("backward: root was not recorded on this tape");
  }
  for (Entry& e : entries_) {
    std::fill(e.output_node->grad.begin(), e.output_node->grad.end(), 0.0F);
  }
  root.node()->grad[0] = 1.0F;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->backward();
  }
}

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " . " +
                         shape_string(b.shape()));
  }
  const bool grad = wants_grad(tape, {&a, &b});
  Tensor out = make_result({m, n}, grad);
  gemm_accumulate(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);
  check_finite(out.data(), "matmul");
  if (grad) {
    tape->record("matmul", {&a, &b}, out, [a, b, out, m, k, n]() mutable {
      const float* dc = out.grad().data();
      if (a.requires_grad()) {
        const std::vector<float> bt = transpose(b.data().data(), k, n);
        gemm_accumulate(dc, bt.data(), a.mutable_grad().data(), m, n, k);
      }
      if (b.requires_grad()) {
        gemm_at_b_accumulate(a.data().data(), dc, b.mutable_grad().data(), m, k, n);
      }
    });
  }
  return out;
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b, Tape* tape) {
  require_rank2(a, "matmul_transposed");
  require_rank2(b, "matmul_transposed");
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw DimensionError("matmul_transposed: inner dimensions differ, " + shape_string(a.shape()) +
                         " . " + shape_string(b.shape()) + "^T");
  }
  const bool grad = wants_grad(tape, {&a, &b});
  Tensor out = make_result({m, n}, grad);
  const std::vector<float> bt = transpose(b.data().data(), n, k);
  gemm_accumulate(a.data().data(), bt.data(), out.mutable_data().data(), m, k, n);
  check_finite(out.data(), "matmul_transposed");
  if (grad) {
    tape->record("matmul_transposed", {&a, &b}, out, [a, b, out, m, k, n]() mutable {
      const float* dc = out.grad().data();
      if (a.requires_grad()) {
        gemm_accumulate(dc, b.data().data(), a.mutable_grad().data(), m, n, k);
      }
      if (b.requires_grad()) {
        gemm_at_b_accumulate(dc, a.data().data(), b.mutable_grad().data(), m, n, k);
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes differ, " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  const bool grad = wants_grad(tape, {&a, &b});
  Tensor out = make_result(a.shape(), grad);
  auto o = out.mutable_data();
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = x[i] + y[i];
  }
  check_finite(out.data(), "add");
  if (grad) {
    tape->record("add", {&a, &b}, out, [a, b, out]() mutable {
      const auto g = out.grad();
      for (const Tensor* t : {&a, &b}) {
        if (t->requires_grad()) {
          auto tg = t->mutable_grad();
          for (std::size_t i = 0; i < g.size(); ++i) {
            tg[i] += g[i];
          }
        }
      }
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape) {
  const std::size_t n = x.cols();
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                         shape_string(x.shape()));
  }
  const bool grad = wants_grad(tape, {&x, &bias});
  Tensor out = make_result(x.shape(), grad);
  auto o = out.mutable_data();
  const auto xv = x.data();
  const auto bv = bias.data();
  const std::size_t rows = x.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      o[r * n + c] = xv[r * n + c] + bv[c];
    }
  }
  check_finite(out.data(), "add_bias");
  if (grad) {
    tape->record("add_bias", {&x, &bias}, out, [x, bias, out, rows, n]() mutable {
      const auto g = out.grad();
      if (x.requires_grad()) {
        auto xg = x.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          xg[i] += g[i];
        }
      }
      if (bias.requires_grad()) {
        auto bg = bias.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < n; ++c) {
            bg[c] += g[r * n + c];
          }
        }
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, float factor, Tape* tape) {
  const bool grad = wants_grad(tape, {&x});
  Tensor out = make_result(x.shape(), grad);
  auto o = out.mutable_data();
  const auto xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = xv[i] * factor;
  }
  check_finite(out.data(), "scale");
  if (grad) {
    tape->record("scale", {&x}, out, [x, out, factor]() mutable {
      const auto g = out.grad();
      auto xg = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        xg[i] += g[i] * factor;
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x, Tape* tape) {
  const bool grad = wants_grad(tape, {&x});
  Tensor out = make_result({1}, grad);
  double acc = 0.0;
  for (const float v : x.data()) {
    acc += v;
  }
  out.mutable_data()[0] = static_cast<float>(acc);
  check_finite(out.data(), "sum");
  if (grad) {
    tape->record("sum", {&x}, out, [x, out]() mutable {
      const float g = out.grad()[0];
      for (float& v : x.mutable_grad()) {
        v += g;
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, Tape* tape) {
  check_finite(x.data(), "softmax input");
  const std::size_t n = x.cols();
  const std::size_t rows = x.rows();
  const bool grad = wants_grad(tape, {&x});
  Tensor out = make_result(x.shape(), grad);
  const auto xv = x.data();
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = xv.data() + r * n;
    float* y = o.data() + r * n;
    const float mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double e = std::exp(static_cast<double>(in[c]) - mx);
      y[c] = static_cast<float>(e);
      total += e;
    }
    const double inv = 1.0 / total;
    for (std::size_t c = 0; c < n; ++c) {
      y[c] = static_cast<float>(static_cast<double>(y[c]) * inv);
    }
  }
  check_finite(out.data(), "softmax");
  if (grad) {
    tape->record("softmax", {&x}, out, [x, out, rows, n]() mutable {
      const auto y = out.data();
      const auto g = out.grad();
      auto xg = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          dot += static_cast<double>(y[r * n + c]) * g[r * n + c];
        }
        for (std::size_t c = 0; c < n; ++c) {
          const std::size_t i = r * n + c;
          xg[i] += static_cast<float>(y[i] * (g[i] - dot));
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps,
                  Tape* tape) {
  const std::size_t n = x.cols();
  const std::size_t rows = x.rows();
  if (gain.numel() != n || (bias.defined() && bias.numel() != n)) {
    throw DimensionError("layer_norm: affine parameters do not match " + shape_string(x.shape()));
  }
  const bool grad = bias.defined() ? wants_grad(tape, {&x, &gain, &bias})
                                   : wants_grad(tape, {&x, &gain});
  Tensor out = make_result(x.shape(), grad);
  std::vector<float> xhat(grad ? x.numel() : 0);
  std::vector<float> rstd(grad ? rows : 0);
  const auto xv = x.data();
  const auto gv = gain.data();
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = xv.data() + r * n;
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      mean += in[c];
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double d = in[c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      const float h = static_cast<float>((in[c] - mean) * inv);
      float y = h * gv[c];
      if (bias.defined()) {
        y += bias.data()[c];
      }
      o[r * n + c] = y;
      if (grad) {
        xhat[r * n + c] = h;
      }
    }
    if (grad) {
      rstd[r] = static_cast<float>(inv);
    }
  }
  check_finite(out.data(), "layer_norm");
  if (grad) {
    std::vector<const Tensor*> inputs{&x, &gain};
    if (bias.defined()) {
      inputs.push_back(&bias);
    }
    tape->record("layer_norm", inputs, out,
                 [x, gain, bias, out, rows, n, xhat = std::move(xhat),
                  rstd = std::move(rstd)]() mutable {
                   const auto g = out.grad();
                   const auto gv = gain.data();
                   if (x.requires_grad()) {
                     auto xg = x.mutable_grad();
                     for (std::size_t r = 0; r < rows; ++r) {
                       double m1 = 0.0;
                       double m2 = 0.0;
                       for (std::size_t c = 0; c < n; ++c) {
                         const std::size_t i = r * n + c;
                         const double dh = static_cast<double>(g[i]) * gv[c];
                         m1 += dh;
                         m2 += dh * xhat[i];
                       }
                       m1 /= static_cast<double>(n);
                       m2 /= static_cast<double>(n);
                       for (std::size_t c = 0; c < n; ++c) {
                         const std::size_t i = r * n + c;
                         const double dh = static_cast<double>(g[i]) * gv[c];
                         xg[i] += static_cast<float>(rstd[r] * (dh - m1 - xhat[i] * m2));
                       }
                     }
                   }
                   if (gain.requires_grad()) {
                     auto gg = gain.mutable_grad();
                     for (std::size_t r = 0; r < rows; ++r) {
                       for (std::size_t c = 0; c < n; ++c) {
                         gg[c] += g[r * n + c] * xhat[r * n + c];
                       }
                     }
                   }
                   if (bias.defined() && bias.requires_grad()) {
                     auto bg = bias.mutable_grad();
                     for (std::size_t r = 0; r < rows; ++r) {
                       for (std::size_t c = 0; c < n; ++c) {
                         bg[c] += g[r * n + c];
                       }
                     }
                   }
                 });
  }
  return out;
}

Tensor gelu(const Tensor& x, Tape* tape) {
  const bool grad = wants_grad(tape, {&x});
  Tensor out = make_result(x.shape(), grad);
  const auto xv = x.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const float v = xv[i];
    const float t = std::tanh(kSqrtTwoOverPi * (v + kGeluCoeff * v * v * v));
    o[i] = 0.5F * v * (1.0F + t);
  }
  check_finite(out.data(), "gelu");
  if (grad) {
    tape->record("gelu", {&x}, out, [x, out]() mutable {
      const auto xv = x.data();
      const auto g = out.grad();
      auto xg = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const float v = xv[i];
        const float t = std::tanh(kSqrtTwoOverPi * (v + kGeluCoeff * v * v * v));
        const float dt = (1.0F - t * t) * kSqrtTwoOverPi * (1.0F + 3.0F * kGeluCoeff * v * v);
        xg[i] += g[i] * (0.5F * (1.0F + t) + 0.5F * v * dt);
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, float p, Rng& rng, Tape* tape) {
  if (p < 0.0F || p >= 1.0F) {
    throw ContractError("dropout: probability must be in [0, 1)");
  }
  if (p == 0.0F) {
    return x;
  }
  const bool grad = wants_grad(tape, {&x});
  Tensor out = make_result(x.shape(), grad);
  std::vector<float> mask(x.numel());
  const float keep_scale = 1.0F / (1.0F - p);
  const auto xv = x.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0F : keep_scale;
    o[i] = xv[i] * mask[i];
  }
  if (grad) {
    tape->record("dropout", {&x}, out, [x, out, mask = std::move(mask)]() mutable {
      const auto g = out.grad();
      auto xg = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        xg[i] += g[i] * mask[i];
      }
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids, Tape* tape) {
  require_rank2(table, "embedding");
  const std::size_t vocab = table.shape()[0];
  const std::size_t d = table.shape()[1];
  for (const std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(id) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
  }
  if (ids.empty()) {
    throw DimensionError("embedding: empty id list");
  }
  const bool grad = wants_grad(tape, {&table});
  Tensor out = make_result({ids.size(), d}, grad);
  auto o = out.mutable_data();
  const auto tv = table.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[r]) * d, d, o.data() + r * d);
  }
  if (grad) {
    tape->record("embedding", {&table}, out,
                 [table, out, d, idv = std::vector<std::int32_t>(ids.begin(), ids.end())]() mutable {
                   const auto g = out.grad();
                   auto tg = table.mutable_grad();
                   for (std::size_t r = 0; r < idv.size(); ++r) {
                     float* dst = tg.data() + static_cast<std::size_t>(idv[r]) * d;
                     for (std::size_t c = 0; c < d; ++c) {
                       dst[c] += g[r * d + c];
                     }
                   }
                 });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t offset, std::size_t count, Tape* tape) {
  require_rank2(x, "slice_rows");
  if (count == 0 || offset + count > x.shape()[0]) {
    throw DimensionError("slice_rows: rows [" + std::to_string(offset) + ", " +
                         std::to_string(offset + count) + ") outside " + shape_string(x.shape()));
  }
  const std::size_t n = x.shape()[1];
  const bool grad = wants_grad(tape, {&x});
  Tensor out = make_result({count, n}, grad);
  std::copy_n(x.data().data() + offset * n, count * n, out.mutable_data().data());
  if (grad) {
    tape->record("slice_rows", {&x}, out, [x, out, offset, count, n]() mutable {
      const auto g = out.grad();
      auto xg = x.mutable_grad();
      for (std::size_t i = 0; i < count * n; ++i) {
        xg[offset * n + i] += g[i];
      }
    });
  }
  return out;
}

namespace detail {

namespace {

// Eight interleaved partial sums combined pairwise, a fixed order for any hd.
float head_dot(const float* q, const float* k, std::size_t hd) {
  vec<8> acc = {};
  std::size_t i = 0;
  for (; i + 8 <= hd; i += 8) {
    acc += load_vec<8>(q + i) * load_vec<8>(k + i);
  }
  float tail = 0.0F;
  for (; i < hd; ++i) {
    tail += q[i] * k[i];
  }
  return (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) +
         tail;
}

}  // namespace

void attend_row(const float* q, const float* keys, const float* values, std::size_t stride,
                std::size_t count, std::size_t hd, float scale_factor, float* probs,
                double* scratch, float* y) {
  float mx = -INFINITY;
  for (std::size_t s = 0; s < count; ++s) {
    const float scaled = head_dot(q, keys + s * stride, hd) * scale_factor;
    scratch[s] = scaled;
    mx = std::max(mx, scaled);
  }
  double total = 0.0;
  for (std::size_t s = 0; s < count; ++s) {
    scratch[s] = std::exp(static_cast<float>(scratch[s]) - mx);
    total += scratch[s];
  }
  const double inv = 1.0 / total;
  for (std::size_t s = 0; s < count; ++s) {
    const float p = static_cast<float>(scratch[s] * inv);
    probs[s] = p;
    const float* v = values + s * stride;
    for (std::size_t i = 0; i < hd; ++i) {
      y[i] += p * v[i];
    }
  }
}

}  // namespace detail

Tensor causal_self_attention(const Tensor& qkv, std::size_t batch, std::size_t seq,
                             std::size_t n_head, Tape* tape) {
  require_rank2(qkv, "causal_self_attention");
  const std::size_t width = qkv.shape()[1];
  if (width % 3 != 0 || qkv.shape()[0] != batch * seq || n_head == 0 ||
      (width / 3) % n_head != 0) {
    throw DimensionError("causal_self_attention: packed input " + shape_string(qkv.shape()) +
                         " does not fit batch=" + std::to_string(batch) +
                         " seq=" + std::to_string(seq) + " heads=" + std::to_string(n_head));
  }
  const std::size_t c = width / 3;
  const std::size_t hd = c / n_head;
  const float scale_factor = 1.0F / std::sqrt(static_cast<float>(hd));
  const bool grad = wants_grad(tape, {&qkv});
  Tensor out = make_result({batch * seq, c}, grad);
  // Attention weights, [batch][head][t][s], zero above the diagonal.
  std::vector<float> probs(batch * n_head * seq * seq, 0.0F);
  std::vector<double> row(seq);
  const float* in = qkv.data().data();
  float* o = out.mutable_data().data();

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_head; ++h) {
      float* p_head = probs.data() + (b * n_head + h) * seq * seq;
      const float* keys = in + b * seq * width + c + h * hd;
      const float* values = in + b * seq * width + 2 * c + h * hd;
      for (std::size_t t = 0; t < seq; ++t) {
        detail::attend_row(in + (b * seq + t) * width + h * hd, keys, values, width, t + 1, hd,
                           scale_factor, p_head + t * seq, row.data(),
                           o + (b * seq + t) * c + h * hd);
      }
    }
  }
  check_finite(out.data(), "causal_self_attention");

  if (grad) {
    tape->record("causal_self_attention", {&qkv}, out,
                 [qkv, out, batch, seq, n_head, c, hd, width, scale_factor,
                  probs = std::move(probs)]() mutable {
                   const float* in = qkv.data().data();
                   const float* dy = out.grad().data();
                   float* dx = qkv.mutable_grad().data();
                   std::vector<float> dscore(seq);
                   for (std::size_t b = 0; b < batch; ++b) {
                     for (std::size_t h = 0; h < n_head; ++h) {
                       const float* p_head = probs.data() + (b * n_head + h) * seq * seq;
                       for (std::size_t t = 0; t < seq; ++t) {
                         const float* p = p_head + t * seq;
                         const float* g = dy + (b * seq + t) * c + h * hd;
                         // dP[s] = g . v_s ; dV_s += p[s] * g
                         double weighted = 0.0;
                         for (std::size_t s = 0; s <= t; ++s) {
                           const std::size_t vrow = (b * seq + s) * width + 2 * c + h * hd;
                           float dp = 0.0F;
                           for (std::size_t i = 0; i < hd; ++i) {
                             dp += g[i] * in[vrow + i];
                             dx[vrow + i] += p[s] * g[i];
                           }
                           dscore[s] = dp;
                           weighted += static_cast<double>(p[s]) * dp;
                         }
                         const std::size_t qrow = (b * seq + t) * width + h * hd;
                         for (std::size_t s = 0; s <= t; ++s) {
                           const float ds =
                               static_cast<float>(p[s] * (dscore[s] - weighted)) * scale_factor;
                           const std::size_t krow = (b * seq + s) * width + c + h * hd;
                           for (std::size_t i = 0; i < hd; ++i) {
                             dx[qrow + i] += ds * in[krow + i];
                             dx[krow + i] += ds * in[qrow + i];
                           }
                         }
                       }
                     }
                   }
                 });
  }
  return out;
}

Tensor cross_entropy_logits(const Tensor& logits, std::span<const std::int32_t> targets,
                            Tape* tape) {
  require_rank2(logits, "cross_entropy_logits");
  const std::size_t rows = logits.shape()[0];
  const std::size_t vocab = logits.shape()[1];
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy_logits: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_string(logits.shape()));
  }
  for (const std::int32_t t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw IndexError("cross_entropy_logits: target " + std::to_string(t) +
                       " outside vocabulary of " + std::to_string(vocab));
    }
  }
  check_finite(logits.data(), "cross_entropy_logits input");
  const bool grad = wants_grad(tape, {&logits});
  Tensor out = make_result({1}, grad);
  std::vector<double> lse(rows);
  const auto x = logits.data();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = x.data() + r * vocab;
    const double mx = *std::max_element(in, in + vocab);
    double acc = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) {
      acc += std::exp(static_cast<double>(in[c]) - mx);
    }
    lse[r] = mx + std::log(acc);
    total += lse[r] - in[targets[r]];
  }
  out.mutable_data()[0] = static_cast<float>(total / static_cast<double>(rows));
  check_finite(out.data(), "cross_entropy_logits");
  if (grad) {
    tape->record("cross_entropy_logits", {&logits}, out,
                 [logits, out, rows, vocab, lse = std::move(lse),
                  tv = std::vector<std::int32_t>(targets.begin(), targets.end())]() mutable {
                   const double g = static_cast<double>(out.grad()[0]) / static_cast<double>(rows);
                   const auto x = logits.data();
                   auto xg = logits.mutable_grad();
                   for (std::size_t r = 0; r < rows; ++r) {
                     for (std::size_t c = 0; c < vocab; ++c) {
                       const std::size_t i = r * vocab + c;
                       double p = std::exp(static_cast<double>(x[i]) - lse[r]);
                       if (static_cast<std::int32_t>(c) == tv[r]) {
                         p -= 1.0;
                       }
                       xg[i] += static_cast<float>(p * g);
                     }
                   }
                 });
  }
  return out;
}

}  // namespace collapse
