// Copyright 2026 The polyret Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense row-major tensors and a tape for reverse-mode differentiation.
//
// A Tensor is a plain value. Computations that need gradients are recorded
// on a Tape as a sequence of nodes; a Var is a handle to one node. Trainable
// tensors enter the tape through Tape::parameter(), which references the
// tensor in place, and backward() accumulates into Tensor::grad().

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace polyret {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  /// Zero-filled tensor.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  /// Product of all but the last dimension.
  std::size_t rows() const;
  /// Size of the last dimension.
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }
  std::span<double> row(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols(), cols());
  }

  bool has_grad() const { return !grad_.empty(); }
  /// Allocates a zero gradient buffer if absent.
  std::span<double> grad();
  std::span<const double> grad() const { return grad_; }
  void zero_grad();
  void clear_grad() { grad_.clear(); }

  /// Reinterprets the data under a new shape with the same element count.
  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

using NodeId = std::uint32_t;
class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  NodeId id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

class Tape {
 public:
  enum class Mode {
    kRecord,     // keep closures, allow backward() and replay()
    kInference,  // evaluate eagerly, discard closures
  };

  using ForwardFn = std::function<void(Tape&, NodeId)>;
  using BackwardFn = std::function<void(Tape&, NodeId)>;

  explicit Tape(Mode mode = Mode::kRecord) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return mode_ == Mode::kRecord; }
  std::size_t size() const { return nodes_.size(); }

  /// Trainable leaf. The tensor must outlive the tape; it is read in place
  /// and receives its gradient in param.grad().
  Var parameter(Tensor& param);
  /// Non-trainable leaf that reads `value` in place; it must outlive the tape.
  Var frozen(const Tensor& value);
  /// Non-trainable leaf holding its own copy of the value.
  Var constant(Tensor value);

  /// Appends an operation node. `forward` computes the node's value from its
  /// inputs and is called immediately; `backward` propagates the node's
  /// gradient into its inputs.
  Var record(Shape shape, std::vector<NodeId> inputs, ForwardFn forward, BackwardFn backward);

  const Tensor& value(NodeId id) const;
  Tensor& mutable_value(NodeId id);
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_[id].inputs; }
  bool needs_grad(NodeId id) const { return nodes_[id].needs_grad; }
  /// Gradient buffer of a node, zero-initialised on first access. For
  /// parameter leaves this is the parameter's own gradient buffer.
  std::span<double> grad(NodeId id);
  bool is_parameter(NodeId id) const { return nodes_[id].param != nullptr; }
  Tensor* parameter_tensor(NodeId id) const { return nodes_[id].param; }

  /// Declares that node `id` reads only some elements of its inputs:
  /// `reads(slot, element)` is false for elements the forward never touches.
  /// Gradient checking uses this to skip elements that cannot affect the loss.
  using ReadsFn = std::function<bool(std::size_t slot, std::size_t element)>;
  void set_sparse_reads(NodeId id, ReadsFn reads);
  bool reads(NodeId id, std::size_t slot, std::size_t element) const;

  /// Runs reverse-mode differentiation from a scalar node. Every node on the
  /// tape is visited at most once, in reverse recording order.
  void backward(Var loss);

  /// Recomputes the values of nodes [from, size()) in recording order. Used
  /// after mutating a parameter in place.
  void replay(NodeId from);

  /// Copies of every node value; restore_values() writes them back for the
  /// node range [from, size()).
  std::vector<Tensor> snapshot_values() const;
  void restore_values(const std::vector<Tensor>& snapshot, NodeId from);

 private:
  struct Node {
    Tensor value;
    const Tensor* ref = nullptr;
    Tensor* param = nullptr;
    std::vector<NodeId> inputs;
    ForwardFn forward;
    BackwardFn backward;
    ReadsFn reads;
    std::vector<double> grad;
    bool needs_grad = false;
  };

  Mode mode_;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitive operations. All inputs must live on the same tape.

/// [M x K] x [K x N] -> [M x N].
Var matmul(Var a, Var b);
/// [M x K] x [N x K]^T -> [M x N].
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Adds a constant to every element.
Var shift(Var a, double s);
Var relu(Var x);
/// Adds a length-N bias to every row of [M x N].
Var add_bias(Var x, Var bias);
Var gelu(Var x);
Var tanh(Var x);
/// Row-wise softmax of x / temperature.
Var softmax(Var x, double temperature = 1.0);
/// Normalises over the last dimension then applies gain and bias.
Var layernorm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Sum of all elements, as a scalar.
Var sum(Var x);
/// Inner product of two equal-size tensors, as a scalar.
Var dot(Var a, Var b);
/// Rows of `table` selected by `ids` -> [ids.size() x cols].
Var gather_rows(Var table, std::vector<std::size_t> ids);
/// Elements of `x` at the given flat offsets, laid out as `shape`.
Var gather_elements(Var x, std::vector<std::size_t> offsets, Shape shape);
/// Stacks rows of equal-width matrices.
Var concat_rows(std::span<const Var> parts);
/// Mean of each consecutive group of `group` rows: [G*group x N] -> [G x N].
Var group_mean_rows(Var x, std::size_t group);
/// Max of each consecutive group of `group` rows, element-wise per column.
/// The gradient flows to the argmax row only; ties go to the lowest row.
Var group_max_rows(Var x, std::size_t group);
/// Multiplies element-wise by a fixed mask (already scaled).
Var apply_mask(Var x, std::vector<double> mask);

/// A contiguous run of rows that belongs to one sequence.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

/// Multi-head scaled dot-product self-attention within each segment.
/// q, k, v are [T x d]; `dropout_mask`, when non-empty, multiplies the
/// attention probabilities (one entry per (segment, head, i, j) in order).
Var self_attention(Var q, Var k, Var v, std::vector<Segment> segments, std::size_t n_heads,
                   std::vector<double> dropout_mask = {});
/// Size of the dropout mask expected by self_attention.
std::size_t attention_mask_size(const std::vector<Segment>& segments, std::size_t n_heads);

/// For every segment s, each code row c_i attends over the rows of h in s:
/// P_i = sum_j softmax_j(c_i . h_j) h_j. Output is [S*m x d].
Var poly_attention(Var codes, Var h, std::vector<Segment> segments);

/// Mean over rows of -log softmax(logits[r] / temperature)[target[r]].
Var softmax_cross_entropy(Var logits, std::vector<std::size_t> targets, double temperature = 1.0);
/// Mean binary cross-entropy of sigmoid(logits) against 0/1 labels.
Var sigmoid_cross_entropy(Var logits, std::vector<double> labels);

// ---------------------------------------------------------------------------
// Plain (tape-free) helpers.

/// Reference matrix product.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Softmax of a vector with temperature; throws NumericError on non-finite input.
Tensor softmax(const Tensor& x, double temperature = 1.0);
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
double dot(std::span<const double> a, std::span<const double> b);
/// Arithmetic mean of the rows of a matrix.
Tensor mean_rows(const Tensor& x);

// ---------------------------------------------------------------------------
// Gradient checking.

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Index into the params span and element of the worst entry.
  std::size_t worst_param = 0;
  std::size_t worst_element = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares reverse-mode gradients of the scalar built by `build_loss`
/// against central finite differences with the given step, for every
/// element of every tensor in `params`. The relative error of one entry is
/// |a - n| / (|a| + |n| + 1e-12). Parameters are restored on return.
///
/// The loss graph is recorded once; each perturbation replays only the
/// nodes at or after the first consumer of the perturbed tensor.
GradCheckReport finite_diff_check(const std::function<Var(Tape&)>& build_loss,
                                  std::span<Tensor* const> params, double step = 1e-5);

}  // namespace polyret
