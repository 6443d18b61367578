#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "collapse/rng.hpp"

namespace collapse {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty unless the node takes part in differentiation
  bool leaf = true;
  std::uint64_t id = 0;
};

}  // namespace detail

// Row-major float32 array with an optional gradient buffer.
//
// Tensor is a handle: copies share the same storage. Values produced by ops
// are never written again; only parameters are updated in place (by the
// optimizer and initializers, through mutable_data()).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor from_data(Shape shape, std::vector<float> values);
  // Leaf tensor that owns a gradient buffer (initially zero).
  static Tensor parameter(Shape shape, std::vector<float> values);
  static Tensor parameter(Shape shape);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  // Extent of the last axis / product of all the others.
  std::size_t cols() const;
  std::size_t rows() const;

  std::span<const float> data() const { return node_->data; }
  std::span<float> mutable_data() { return node_->data; }
  float item() const;
  float at(std::size_t row, std::size_t col) const { return node_->data[row * cols() + col]; }

  bool requires_grad() const { return node_ && !node_->grad.empty(); }
  std::span<const float> grad() const { return node_->grad; }
  // Gradient storage is shared by every handle, so this is available on const
  // handles too (backward closures hold const copies of their inputs).
  std::span<float> mutable_grad() const { return node_->grad; }
  void zero_grad();

  std::uint64_t node_id() const { return node_->id; }
  bool is_leaf() const { return node_->leaf; }

  // Deep copy without gradient; the result is a plain value tensor.
  Tensor clone() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& shared_node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape shape, bool needs_grad);

  std::shared_ptr<detail::Node> node_;
};

// Records differentiable ops in execution order so backward() can replay them
// in reverse. A tape and every tensor it references belong to one thread.
class Tape {
 public:
  struct Entry {
    std::string op;
    std::vector<std::uint64_t> inputs;
    std::uint64_t output = 0;
    std::shared_ptr<detail::Node> output_node;
    std::function<void()> backward;
  };

  void record(std::string op, std::vector<const Tensor*> inputs, const Tensor& output,
              std::function<void()> backward);

  // Seeds d(root)/d(root) = 1 and propagates to every tensor on the tape.
  // Leaf gradients accumulate across calls; intermediate gradients are reset
  // at the start of each call.
  void backward(const Tensor& root);

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  std::vector<Entry> entries_;
};

// ---- ops -------------------------------------------------------------------
//
// Every op takes an optional Tape. With a null tape, or when no input requires
// a gradient, nothing is recorded and the output carries no gradient buffer.
// All ops throw NumericError if they produce a non-finite value.

// a[m x k] . b[k x n]
Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
// a[m x k] . b[n x k]^T  (used for the tied output head)
Tensor matmul_transposed(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
// x[... x n] + bias[n] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape = nullptr);
Tensor scale(const Tensor& x, float factor, Tape* tape = nullptr);
// Sum of all elements, accumulated in double; returns shape {1}.
Tensor sum(const Tensor& x, Tape* tape = nullptr);

Tensor softmax(const Tensor& x, Tape* tape = nullptr);
// bias may be an undefined Tensor.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps,
                  Tape* tape = nullptr);
Tensor gelu(const Tensor& x, Tape* tape = nullptr);
// Inverted dropout. p == 0 is the identity and draws nothing from rng.
Tensor dropout(const Tensor& x, float p, Rng& rng, Tape* tape = nullptr);

// Rows of table[V x d] selected by ids -> [ids.size() x d].
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids, Tape* tape = nullptr);
// rows [offset, offset + count) of x.
Tensor slice_rows(const Tensor& x, std::size_t offset, std::size_t count, Tape* tape = nullptr);

// Multi-head causal attention over packed q|k|v.
// qkv: [batch*seq x 3*C], returns [batch*seq x C].
Tensor causal_self_attention(const Tensor& qkv, std::size_t batch, std::size_t seq,
                             std::size_t n_head, Tape* tape = nullptr);

namespace detail {

// One query row of causal attention for a single head: softmax over
// q . k_s * scale for s < count, then y += sum_s p_s v_s. Keys and values are
// rows `stride` floats apart. Writes the weights to probs[0..count). Shared by
// the batched op and the incremental decoder so both round identically.
[[gnu::noinline]] void attend_row(const float* q, const float* keys, const float* values,
                                  std::size_t stride, std::size_t count, std::size_t hd,
                                  float scale_factor, float* probs, double* scratch, float* y);

}  // namespace detail

// Mean over rows of -log softmax(logits)[row, target[row]] in nats; shape {1}.
Tensor cross_entropy_logits(const Tensor& logits, std::span<const std::int32_t> targets,
                            Tape* tape = nullptr);

// Throws NumericError naming `what` if any value is NaN or Inf.
void check_finite(std::span<const float> values, const char* what);

}  // namespace collapse
