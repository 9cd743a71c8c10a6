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

#include "polyret/tensor.h"

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

#include "polyret/errors.h"

namespace polyret {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape_) + " does not hold " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor({rows, cols}, std::move(v));
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? 1 : numel() / shape_.back();
}

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item: tensor " + shape_string(shape_) + " is not a scalar");
  }
  return data_[0];
}

std::span<double> Tensor::grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() { grad_.assign(data_.size(), 0.0); }

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::parameter(Tensor& param) {
  Node node;
  node.ref = &param;
  node.param = &param;
  node.needs_grad = recording();
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::frozen(const Tensor& value) {
  Node node;
  node.ref = &value;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::record(Shape shape, std::vector<NodeId> inputs, ForwardFn forward, BackwardFn backward) {
  Node node;
  node.value = Tensor(std::move(shape));
  if (recording()) {
    for (NodeId in : inputs) node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
  }
  node.inputs = std::move(inputs);
  nodes_.push_back(std::move(node));
  const auto id = static_cast<NodeId>(nodes_.size() - 1);
  forward(*this, id);
  if (recording()) {
    nodes_[id].forward = std::move(forward);
    if (nodes_[id].needs_grad) nodes_[id].backward = std::move(backward);
  }
  return Var(this, id);
}

const Tensor& Tape::value(NodeId id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.value;
}

Tensor& Tape::mutable_value(NodeId id) {
  Node& n = nodes_[id];
  if (n.ref) throw ContractError("mutable_value: node is a leaf bound to an external tensor");
  return n.value;
}

std::span<double> Tape::grad(NodeId id) {
  Node& n = nodes_[id];
  if (n.param) return n.param->grad();
  if (n.grad.size() != n.value.numel()) n.grad.assign(n.value.numel(), 0.0);
  return n.grad;
}

void Tape::set_sparse_reads(NodeId id, ReadsFn reads) {
  if (recording()) nodes_[id].reads = std::move(reads);
}

bool Tape::reads(NodeId id, std::size_t slot, std::size_t element) const {
  const Node& n = nodes_[id];
  return n.reads ? n.reads(slot, element) : true;
}

void Tape::backward(Var loss) {
  if (!recording()) throw ContractError("backward: tape was created in inference mode");
  if (loss.id() >= nodes_.size()) throw ContractError("backward: node is not on this tape");
  if (value(loss.id()).numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        shape_string(value(loss.id()).shape()));
  }
  if (!nodes_[loss.id()].needs_grad) return;
  grad(loss.id())[0] += 1.0;
  for (NodeId id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, id);
  }
}

void Tape::replay(NodeId from) {
  if (!recording()) throw ContractError("replay: tape was created in inference mode");
  for (NodeId id = from; id < nodes_.size(); ++id) {
    if (nodes_[id].forward) nodes_[id].forward(*this, id);
  }
}

std::vector<Tensor> Tape::snapshot_values() const {
  std::vector<Tensor> out;
  out.reserve(nodes_.size());
  for (const Node& n : nodes_) out.push_back(n.value);
  return out;
}

void Tape::restore_values(const std::vector<Tensor>& snapshot, NodeId from) {
  for (NodeId id = from; id < nodes_.size() && id < snapshot.size(); ++id) {
    if (!nodes_[id].ref) {
      std::copy(snapshot[id].storage().begin(), snapshot[id].storage().end(),
                nodes_[id].value.storage().begin());
    }
  }
}

// ---------------------------------------------------------------------------
// Allocator tuning

namespace {

// Tape values are freed and reallocated every step. Above glibc's default
// mmap threshold each one would be a fresh mapping and a round of page
// faults, so keep them on the heap instead.
[[maybe_unused]] const bool kAllocatorTuned = [] {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
  return true;
}();

}  // namespace

// ---------------------------------------------------------------------------
// Kernels

namespace {

// c[MxN] (+)= a[MxK] * b[KxN]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* __restrict bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[MxN] (+)= a[MxK] * b[NxK]^T. b is transposed first so the inner loop runs
// over j; every c[i][j] is still summed over p in ascending order, exactly
// like a plain dot product.
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  std::vector<double> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    double* __restrict r = row.data();
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* __restrict bp = bt.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) r[j] += av * bp[j];
    }
    double* ci = c + i * n;
    if (accumulate) {
      for (std::size_t j = 0; j < n; ++j) ci[j] += r[j];
    } else {
      std::copy(r, r + n, ci);
    }
  }
}

// c[KxN] += a[MxK]^T * b[MxN]
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* __restrict bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* __restrict cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

void require_same_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands on different tapes");
}

void require_finite(std::span<const double> xs, const char* op) {
  for (double x : xs) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

void softmax_inplace(double* x, std::size_t n, double inv_temp) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x[i] * inv_temp);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] * inv_temp - mx);
    total += x[i];
  }
  for (std::size_t i = 0; i < n; ++i) x[i] /= total;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

// ---------------------------------------------------------------------------
// Operations

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.shape()[1] != bv.shape()[0]) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_string(av.shape()) + " x " +
                     shape_string(bv.shape()));
  }
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record(
      {m, n}, {ia, ib},
      [=](Tape& t, NodeId self) {
        gemm_nn(t.value(ia).data().data(), t.value(ib).data().data(),
                t.mutable_value(self).data().data(), m, k, n, false);
      },
      [=](Tape& t, NodeId self) {
        const double* g = t.grad(self).data();
        if (t.needs_grad(ia)) {
          gemm_nt(g, t.value(ib).data().data(), t.grad(ia).data(), m, n, k, true);
        }
        if (t.needs_grad(ib)) {
          gemm_tn_acc(t.value(ia).data().data(), g, t.grad(ib).data(), m, k, n);
        }
      });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b, "matmul_nt");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul_nt");
  require_matrix(bv, "matmul_nt");
  if (av.shape()[1] != bv.shape()[1]) {
    throw ShapeError("matmul_nt: widths differ: " + shape_string(av.shape()) + " vs " +
                     shape_string(bv.shape()));
  }
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[0];
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record(
      {m, n}, {ia, ib},
      [=](Tape& t, NodeId self) {
        gemm_nt(t.value(ia).data().data(), t.value(ib).data().data(),
                t.mutable_value(self).data().data(), m, k, n, false);
      },
      [=](Tape& t, NodeId self) {
        const double* g = t.grad(self).data();
        if (t.needs_grad(ia)) {
          gemm_nn(g, t.value(ib).data().data(), t.grad(ia).data(), m, n, k, true);
        }
        if (t.needs_grad(ib)) {
          gemm_tn_acc(g, t.value(ia).data().data(), t.grad(ib).data(), m, n, k);
        }
      });
}

namespace {

template <typename Fwd, typename Bwd>
Var binary_elementwise(Var a, Var b, const char* name, Fwd fwd, Bwd bwd) {
  require_same_tape(a, b, name);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(name) + ": shapes differ: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record(
      a.shape(), {ia, ib},
      [=](Tape& t, NodeId self) {
        auto x = t.value(ia).data();
        auto y = t.value(ib).data();
        auto out = t.mutable_value(self).data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i], y[i]);
      },
      [=](Tape& t, NodeId self) {
        auto g = t.grad(self);
        auto x = t.value(ia).data();
        auto y = t.value(ib).data();
        const bool ga = t.needs_grad(ia), gb = t.needs_grad(ib);
        double* da = ga ? t.grad(ia).data() : nullptr;
        double* db = gb ? t.grad(ib).data() : nullptr;
        for (std::size_t i = 0; i < g.size(); ++i) {
          auto [pa, pb] = bwd(x[i], y[i]);
          if (ga) da[i] += g[i] * pa;
          if (gb) db[i] += g[i] * pb;
        }
      });
}

template <typename Fwd, typename Deriv>
Var unary_elementwise(Var a, Fwd fwd, Deriv deriv) {
  const NodeId ia = a.id();
  return a.tape().record(
      a.shape(), {ia},
      [=](Tape& t, NodeId self) {
        auto x = t.value(ia).data();
        auto out = t.mutable_value(self).data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
      },
      [=](Tape& t, NodeId self) {
        auto g = t.grad(self);
        auto x = t.value(ia).data();
        auto y = t.value(self).data();
        auto da = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * deriv(x[i], y[i]);
      });
}

}  // namespace

Var add(Var a, Var b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return std::pair{1.0, 1.0}; });
}

Var sub(Var a, Var b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return std::pair{1.0, -1.0}; });
}

Var mul(Var a, Var b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair{y, x}; });
}

Var scale(Var a, double s) {
  return unary_elementwise(
      a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var gelu(Var x) {
  return unary_elementwise(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Var shift(Var a, double s) {
  return unary_elementwise(
      a, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var relu(Var x) {
  return unary_elementwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double, double y) { return y > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var x) {
  return unary_elementwise(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var add_bias(Var x, Var bias) {
  require_same_tape(x, bias, "add_bias");
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols();
  if (bias.value().numel() != n) {
    throw ShapeError("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                     shape_string(xv.shape()));
  }
  const std::size_t m = xv.rows();
  const NodeId ix = x.id(), ib = bias.id();
  return x.tape().record(
      xv.shape(), {ix, ib},
      [=](Tape& t, NodeId self) {
        const double* xs = t.value(ix).data().data();
        const double* bs = t.value(ib).data().data();
        double* out = t.mutable_value(self).data().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xs[i * n + j] + bs[j];
      },
      [=](Tape& t, NodeId self) {
        auto g = t.grad(self);
        if (t.needs_grad(ix)) {
          auto dx = t.grad(ix);
          for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
        }
        if (t.needs_grad(ib)) {
          auto db = t.grad(ib);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
        }
      });
}

Var softmax(Var x, double temperature) {
  if (!(temperature > 0.0)) throw ContractError("softmax: temperature must be positive");
  const Tensor& xv = x.value();
  if (xv.numel() == 0) throw ShapeError("softmax: empty input");
  const std::size_t m = xv.rows(), n = xv.cols();
  const double inv = 1.0 / temperature;
  const NodeId ix = x.id();
  return x.tape().record(
      xv.shape(), {ix},
      [=](Tape& t, NodeId self) {
        auto in = t.value(ix).data();
        require_finite(in, "softmax");
        auto out = t.mutable_value(self).data();
        std::copy(in.begin(), in.end(), out.begin());
        for (std::size_t i = 0; i < m; ++i) softmax_inplace(out.data() + i * n, n, inv);
      },
      [=](Tape& t, NodeId self) {
        auto g = t.grad(self);
        auto y = t.value(self).data();
        auto dx = t.grad(ix);
        for (std::size_t i = 0; i < m; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * y[i * n + j];
          for (std::size_t j = 0; j < n; ++j)
            dx[i * n + j] += y[i * n + j] * (g[i * n + j] - s) * inv;
        }
      });
}

Var layernorm(Var x, Var gain, Var bias, double eps) {
  require_same_tape(x, gain, "layernorm");
  require_same_tape(x, bias, "layernorm");
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols();
  if (n == 0) throw ShapeError("layernorm: zero-length last dimension");
  if (gain.value().numel() != n || bias.value().numel() != n) {
    throw ShapeError("layernorm: gain/bias do not match last dimension " + std::to_string(n));
  }
  const std::size_t m = xv.rows();
  const NodeId ix = x.id(), ig = gain.id(), ib = bias.id();
  // Normalised values and reciprocal standard deviations, refreshed on every forward.
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto rstd = std::make_shared<std::vector<double>>(m);
  return x.tape().record(
      xv.shape(), {ix, ig, ib},
      [=](Tape& t, NodeId self) {
        const double* xs = t.value(ix).data().data();
        const double* gs = t.value(ig).data().data();
        const double* bs = t.value(ib).data().data();
        double* out = t.mutable_value(self).data().data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* row = xs + i * n;
          double mean = 0.0;
          for (std::size_t j = 0; j < n; ++j) mean += row[j];
          mean /= static_cast<double>(n);
          double var = 0.0;
          for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
          var /= static_cast<double>(n);
          const double r = 1.0 / std::sqrt(var + eps);
          (*rstd)[i] = r;
          for (std::size_t j = 0; j < n; ++j) {
            const double h = (row[j] - mean) * r;
            (*xhat)[i * n + j] = h;
            out[i * n + j] = gs[j] * h + bs[j];
          }
        }
      },
      [=](Tape& t, NodeId self) {
        auto g = t.grad(self);
        const double* gs = t.value(ig).data().data();
        if (t.needs_grad(ix)) {
          auto dx = t.grad(ix);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dh = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g[i * n + j] * gs[j];
              mean_d += d;
              mean_dh += d * (*xhat)[i * n + j];
            }
            mean_d /= static_cast<double>(n);
            mean_dh /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g[i * n + j] * gs[j];
              dx[i * n + j] += (*rstd)[i] * (d - mean_d - (*xhat)[i * n + j] * mean_dh);
            }
          }
        }
        if (t.needs_grad(ig)) {
          auto dg = t.grad(ig);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) dg[j] += g[i * n + j] * (*xhat)[i * n + j];
        }
        if (t.needs_grad(ib)) {
          auto db = t.grad(ib);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
        }
      });
}

Var sum(Var x) {
  const NodeId ix = x.id();
  return x.tape().record(
      {1}, {ix},
      [=](Tape& t, NodeId self) {
        double s = 0.0;
        for (double v : t.value(ix).data()) s += v;
        t.mutable_value(self)[0] = s;
      },
      [=](Tape& t, NodeId self) {
        const double g = t.grad(self)[0];
        for (double& d : t.grad(ix)) d += g;
      });
}

Var dot(Var a, Var b) {
  require_same_tape(a, b, "dot");
  if (a.value().numel() != b.value().numel()) {
    throw ShapeError("dot: sizes differ: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record(
      {1}, {ia, ib},
      [=](Tape& t, NodeId self) {
        t.mutable_value(self)[0] = polyret::dot(t.value(ia).data(), t.value(ib).data());
      },
      [=](Tape& t, NodeId self) {
        const double g = t.grad(self)[0];
        auto x = t.value(ia).data();
        auto y = t.value(ib).data();
        if (t.needs_grad(ia)) {
          auto d = t.grad(ia);
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * y[i];
        }
        if (t.needs_grad(ib)) {
          auto d = t.grad(ib);
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * x[i];
        }
      });
}

Var gather_rows(Var table, std::vector<std::size_t> ids) {
  const Tensor& tv = table.value();
  require_matrix(tv, "gather_rows");
  const std::size_t rows = tv.shape()[0], n = tv.shape()[1];
  for (std::size_t id : ids) {
    if (id >= rows) {
      throw ShapeError("gather_rows: row " + std::to_string(id) + " out of range " +
                       std::to_string(rows));
    }
  }
  const std::size_t m = ids.size();
  const NodeId it = table.id();
  auto shared_ids = std::make_shared<const std::vector<std::size_t>>(std::move(ids));
  Var out = table.tape().record(
      {m, n}, {it},
      [=](Tape& t, NodeId self) {
        const double* src = t.value(it).data().data();
        double* dst = t.mutable_value(self).data().data();
        for (std::size_t i = 0; i < m; ++i)
          std::copy_n(src + (*shared_ids)[i] * n, n, dst + i * n);
      },
      [=](Tape& t, NodeId self) {
        auto g = t.grad(self);
        auto d = t.grad(it);
        for (std::size_t i = 0; i < m; ++i) {
          const std::size_t r = (*shared_ids)[i];
          for (std::size_t j = 0; j < n; ++j) d[r * n + j] += g[i * n + j];
        }
      });
  auto used = std::make_shared<std::vector<bool>>(rows, false);
  for (std::size_t r : *shared_ids) (*used)[r] = true;
  out.tape().set_sparse_reads(out.id(), [used, n](std::size_t, std::size_t element) {
    return (*used)[element / n];
  });
  return out;
}

Var gather_elements(Var x, std::vector<std::size_t> offsets, Shape shape) {
  const std::size_t total = x.value().numel();
  if (shape_numel(shape) != offsets.size()) {
    throw ShapeError("gather_elements: shape " + shape_string(shape) + " does not hold " +
                     std::to_string(offsets.size()) + " elements");
  }
  for (std::size_t o : offsets) {
    if (o >= total) throw ShapeError("gather_elements: offset " + std::to_string(o) + " out of range");
  }
  const NodeId ix = x.id();
  auto idx = std::make_shared<const std::vector<std::size_t>>(std::move(offsets));
  Var out = x.tape().record(
      std::move(shape), {ix},
      [=](Tape& t, NodeId self) {
        const double* src = t.value(ix).data().data();
        double* dst = t.mutable_value(self).data().data();
        for (std::size_t i = 0; i < idx->size(); ++i) dst[i] = src[(*idx)[i]];
      },
      [=](Tape& t, NodeId self) {
        auto g = t.grad(self);
        auto d = t.grad(ix);
        for (std::size_t i = 0; i < idx->size(); ++i) d[(*idx)[i]] += g[i];
      });
  auto used = std::make_shared<std::vector<bool>>(total, false);
  for (std::size_t o : *idx) (*used)[o] = true;
  out.tape().set_sparse_reads(out.id(),
                              [used](std::size_t, std::size_t element) { return (*used)[element]; });
  return out;
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& tape = parts[0].tape();
  const std::size_t n = parts[0].value().cols();
  std::size_t m = 0;
  std::vector<NodeId> ids;
  std::vector<std::size_t> counts;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p, "concat_rows");
    if (p.value().cols() != n) throw ShapeError("concat_rows: widths differ");
    ids.push_back(p.id());
    counts.push_back(p.value().numel());
    m += p.value().rows();
  }
  return tape.record(
      {m, n}, ids,
      [=](Tape& t, NodeId self) {
        double* dst = t.mutable_value(self).data().data();
        for (NodeId id : ids) {
          auto src = t.value(id).data();
          dst = std::copy(src.begin(), src.end(), dst);
        }
      },
      [=](Tape& t, NodeId self) {
        const double* g = t.grad(self).data();
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.needs_grad(ids[k])) {
            auto d = t.grad(ids[k]);
            for (std::size_t i = 0; i < counts[k]; ++i) d[i] += g[i];
          }
          g += counts[k];
        }
      });
}

Var group_mean_rows(Var x, std::size_t group) {
  const Tensor& xv = x.value();
  require_matrix(xv, "group_mean_rows");
  const std::size_t rows = xv.shape()[0], n = xv.shape()[1];
  if (group == 0 || rows % group != 0) {
    throw ShapeError("group_mean_rows: " + std::to_string(rows) + " rows not divisible by " +
                     std::to_string(group));
  }
  const std::size_t groups = rows / group;
  const double count = static_cast<double>(group);
  const double inv = 1.0 / count;
  const NodeId ix = x.id();
  return x.tape().record(
      {groups, n}, {ix},
      [=](Tape& t, NodeId self) {
        const double* src = t.value(ix).data().data();
        double* dst = t.mutable_value(self).data().data();
        // Same summation order and division as mean_rows().
        for (std::size_t gi = 0; gi < groups; ++gi) {
          for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < group; ++r) s += src[(gi * group + r) * n + j];
            dst[gi * n + j] = s / count;
          }
        }
      },
      [=](Tape& t, NodeId self) {
        auto g = t.grad(self);
        auto d = t.grad(ix);
        for (std::size_t gi = 0; gi < groups; ++gi)
          for (std::size_t r = 0; r < group; ++r)
            for (std::size_t j = 0; j < n; ++j) d[(gi * group + r) * n + j] += g[gi * n + j] * inv;
      });
}

Var group_max_rows(Var x, std::size_t group) {
  const Tensor& xv = x.value();
  require_matrix(xv, "group_max_rows");
  const std::size_t rows = xv.shape()[0], n = xv.shape()[1];
  if (group == 0 || rows % group != 0) {
    throw ShapeError("group_max_rows: " + std::to_string(rows) + " rows not divisible by " +
                     std::to_string(group));
  }
  const std::size_t groups = rows / group;
  const NodeId ix = x.id();
  auto argmax = std::make_shared<std::vector<std::size_t>>(groups * n);
  return x.tape().record(
      {groups, n}, {ix},
      [=](Tape& t, NodeId self) {
        const double* src = t.value(ix).data().data();
        double* dst = t.mutable_value(self).data().data();
        for (std::size_t gi = 0; gi < groups; ++gi) {
          for (std::size_t j = 0; j < n; ++j) {
            std::size_t best = gi * group;
            for (std::size_t r = 1; r < group; ++r) {
              const std::size_t row = gi * group + r;
              if (src[row * n + j] > src[best * n + j]) best = row;
            }
            (*argmax)[gi * n + j] = best;
            dst[gi * n + j] = src[best * n + j];
          }
        }
      },
      [=](Tape& t, NodeId self) {
        auto g = t.grad(self);
        auto d = t.grad(ix);
        for (std::size_t k = 0; k < groups * n; ++k) d[(*argmax)[k] * n + k % n] += g[k];
      });
}

Var apply_mask(Var x, std::vector<double> mask) {
  if (mask.size() != x.value().numel()) throw ShapeError("apply_mask: mask size mismatch");
  const NodeId ix = x.id();
  auto m = std::make_shared<const std::vector<double>>(std::move(mask));
  return x.tape().record(
      x.shape(), {ix},
      [=](Tape& t, NodeId self) {
        auto in = t.value(ix).data();
        auto out = t.mutable_value(self).data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * (*m)[i];
      },
      [=](Tape& t, NodeId self) {
        auto g = t.grad(self);
        auto d = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (*m)[i];
      });
}

std::size_t attention_mask_size(const std::vector<Segment>& segments, std::size_t n_heads) {
  std::size_t total = 0;
  for (const Segment& s : segments) total += n_heads * s.length * s.length;
  return total;
}

Var self_attention(Var q, Var k, Var v, std::vector<Segment> segments, std::size_t n_heads,
                   std::vector<double> dropout_mask) {
  require_same_tape(q, k, "self_attention");
  require_same_tape(q, v, "self_attention");
  const Tensor& qv = q.value();
  require_matrix(qv, "self_attention");
  if (k.shape() != qv.shape() || v.shape() != qv.shape()) {
    throw ShapeError("self_attention: q, k, v shapes differ");
  }
  const std::size_t total = qv.shape()[0], d = qv.shape()[1];
  if (n_heads == 0 || d % n_heads != 0) {
    throw ShapeError("self_attention: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  }
  for (const Segment& s : segments) {
    if (s.offset + s.length > total) throw ShapeError("self_attention: segment out of range");
  }
  const std::size_t mask_size = attention_mask_size(segments, n_heads);
  if (!dropout_mask.empty() && dropout_mask.size() != mask_size) {
    throw ShapeError("self_attention: dropout mask size mismatch");
  }
  const std::size_t dh = d / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const NodeId iq = q.id(), ik = k.id(), iv = v.id();
  auto segs = std::make_shared<const std::vector<Segment>>(std::move(segments));
  auto mask = std::make_shared<const std::vector<double>>(std::move(dropout_mask));
  // Attention probabilities before dropout, laid out like the mask.
  auto probs = std::make_shared<std::vector<double>>(mask_size);

  auto forward = [=](Tape& t, NodeId self) {
    const double* Q = t.value(iq).data().data();
    const double* K = t.value(ik).data().data();
    const double* V = t.value(iv).data().data();
    double* O = t.mutable_value(self).data().data();
    std::fill(O, O + total * d, 0.0);
    std::size_t base = 0;
    for (const Segment& s : *segs) {
      const std::size_t L = s.length;
      for (std::size_t h = 0; h < n_heads; ++h) {
        double* P = probs->data() + base;
        for (std::size_t i = 0; i < L; ++i) {
          const double* qi = Q + (s.offset + i) * d + h * dh;
          for (std::size_t j = 0; j < L; ++j) {
            const double* kj = K + (s.offset + j) * d + h * dh;
            double acc = 0.0;
            for (std::size_t p = 0; p < dh; ++p) acc += qi[p] * kj[p];
            P[i * L + j] = acc * inv_scale;
          }
          softmax_inplace(P + i * L, L, 1.0);
          double* oi = O + (s.offset + i) * d + h * dh;
          for (std::size_t j = 0; j < L; ++j) {
            const double w = mask->empty() ? P[i * L + j] : P[i * L + j] * (*mask)[base + i * L + j];
            const double* vj = V + (s.offset + j) * d + h * dh;
            for (std::size_t p = 0; p < dh; ++p) oi[p] += w * vj[p];
          }
        }
        base += L * L;
      }
    }
  };

  auto backward = [=](Tape& t, NodeId self) {
    const double* Q = t.value(iq).data().data();
    const double* K = t.value(ik).data().data();
    const double* V = t.value(iv).data().data();
    const double* G = t.grad(self).data();
    double* dQ = t.needs_grad(iq) ? t.grad(iq).data() : nullptr;
    double* dK = t.needs_grad(ik) ? t.grad(ik).data() : nullptr;
    double* dV = t.needs_grad(iv) ? t.grad(iv).data() : nullptr;
    std::vector<double> dP;
    std::size_t base = 0;
    for (const Segment& s : *segs) {
      const std::size_t L = s.length;
      dP.assign(L * L, 0.0);
      for (std::size_t h = 0; h < n_heads; ++h) {
        const double* P = probs->data() + base;
        auto mask_at = [&](std::size_t idx) { return mask->empty() ? 1.0 : (*mask)[base + idx]; };
        for (std::size_t i = 0; i < L; ++i) {
          const double* gi = G + (s.offset + i) * d + h * dh;
          for (std::size_t j = 0; j < L; ++j) {
            const double* vj = V + (s.offset + j) * d + h * dh;
            double acc = 0.0;
            for (std::size_t p = 0; p < dh; ++p) acc += gi[p] * vj[p];
            const double mk = mask_at(i * L + j);
            dP[i * L + j] = acc * mk;
            if (dV) {
              double* dvj = dV + (s.offset + j) * d + h * dh;
              const double w = P[i * L + j] * mk;
              for (std::size_t p = 0; p < dh; ++p) dvj[p] += w * gi[p];
            }
          }
          // Softmax Jacobian, then the 1/sqrt(dh) scale.
          double row = 0.0;
          for (std::size_t j = 0; j < L; ++j) row += dP[i * L + j] * P[i * L + j];
          for (std::size_t j = 0; j < L; ++j) {
            dP[i * L + j] = P[i * L + j] * (dP[i * L + j] - row) * inv_scale;
          }
          const double* qi = Q + (s.offset + i) * d + h * dh;
          for (std::size_t j = 0; j < L; ++j) {
            const double ds = dP[i * L + j];
            if (dQ) {
              const double* kj = K + (s.offset + j) * d + h * dh;
              double* dqi = dQ + (s.offset + i) * d + h * dh;
              for (std::size_t p = 0; p < dh; ++p) dqi[p] += ds * kj[p];
            }
            if (dK) {
              double* dkj = dK + (s.offset + j) * d + h * dh;
              for (std::size_t p = 0; p < dh; ++p) dkj[p] += ds * qi[p];
            }
          }
        }
        base += L * L;
      }
    }
  };

  return q.tape().record({total, d}, {iq, ik, iv}, forward, backward);
}

Var poly_attention(Var codes, Var h, std::vector<Segment> segments) {
  require_same_tape(codes, h, "poly_attention");
  const Tensor& cv = codes.value();
  const Tensor& hv = h.value();
  require_matrix(cv, "poly_attention");
  require_matrix(hv, "poly_attention");
  if (cv.shape()[1] != hv.shape()[1]) {
    throw ShapeError("poly_attention: code width " + std::to_string(cv.shape()[1]) +
                     " differs from output width " + std::to_string(hv.shape()[1]));
  }
  const std::size_t m = cv.shape()[0], d = cv.shape()[1], total = hv.shape()[0];
  std::size_t weight_count = 0;
  for (const Segment& s : segments) {
    if (s.length == 0 || s.offset + s.length > total) {
      throw ShapeError("poly_attention: invalid segment");
    }
    weight_count += m * s.length;
  }
  const std::size_t n_seg = segments.size();
  const NodeId ic = codes.id(), ih = h.id();
  auto segs = std::make_shared<const std::vector<Segment>>(std::move(segments));
  auto weights = std::make_shared<std::vector<double>>(weight_count);

  auto forward = [=](Tape& t, NodeId self) {
    const double* C = t.value(ic).data().data();
    const double* H = t.value(ih).data().data();
    double* out = t.mutable_value(self).data().data();
    std::fill(out, out + n_seg * m * d, 0.0);
    std::size_t base = 0;
    for (std::size_t s = 0; s < n_seg; ++s) {
      const Segment& seg = (*segs)[s];
      const std::size_t L = seg.length;
      double* W = weights->data() + base;
      gemm_nt(C, H + seg.offset * d, W, m, d, L, false);
      for (std::size_t i = 0; i < m; ++i) softmax_inplace(W + i * L, L, 1.0);
      gemm_nn(W, H + seg.offset * d, out + s * m * d, m, L, d, false);
      base += m * L;
    }
  };

  auto backward = [=](Tape& t, NodeId self) {
    const double* C = t.value(ic).data().data();
    const double* H = t.value(ih).data().data();
    const double* G = t.grad(self).data();
    double* dC = t.needs_grad(ic) ? t.grad(ic).data() : nullptr;
    double* dH = t.needs_grad(ih) ? t.grad(ih).data() : nullptr;
    std::vector<double> dW;
    std::size_t base = 0;
    for (std::size_t s = 0; s < n_seg; ++s) {
      const Segment& seg = (*segs)[s];
      const std::size_t L = seg.length;
      const double* W = weights->data() + base;
      const double* Gs = G + s * m * d;
      const double* Hs = H + seg.offset * d;
      dW.assign(m * L, 0.0);
      gemm_nt(Gs, Hs, dW.data(), m, d, L, false);
      if (dH) gemm_tn_acc(W, Gs, dH + seg.offset * d, m, L, d);
      for (std::size_t i = 0; i < m; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < L; ++j) row += dW[i * L + j] * W[i * L + j];
        for (std::size_t j = 0; j < L; ++j) dW[i * L + j] = W[i * L + j] * (dW[i * L + j] - row);
      }
      if (dC) gemm_nn(dW.data(), Hs, dC, m, L, d, true);
      if (dH) gemm_tn_acc(dW.data(), C, dH + seg.offset * d, m, L, d);
      base += m * L;
    }
  };

  return codes.tape().record({n_seg * m, d}, {ic, ih}, forward, backward);
}

Var softmax_cross_entropy(Var logits, std::vector<std::size_t> targets, double temperature) {
  if (!(temperature > 0.0)) throw ContractError("softmax_cross_entropy: temperature must be positive");
  const Tensor& lv = logits.value();
  require_matrix(lv, "softmax_cross_entropy");
  const std::size_t m = lv.shape()[0], n = lv.shape()[1];
  if (targets.size() != m) throw ShapeError("softmax_cross_entropy: one target per row required");
  if (m == 0) throw ShapeError("softmax_cross_entropy: no rows");
  for (std::size_t tg : targets) {
    if (tg >= n) throw ShapeError("softmax_cross_entropy: target out of range");
  }
  const double inv = 1.0 / temperature;
  const NodeId il = logits.id();
  auto tg = std::make_shared<const std::vector<std::size_t>>(std::move(targets));
  auto probs = std::make_shared<std::vector<double>>(m * n);
  return logits.tape().record(
      {1}, {il},
      [=](Tape& t, NodeId self) {
        auto z = t.value(il).data();
        require_finite(z, "softmax_cross_entropy");
        double loss = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double* row = z.data() + i * n;
          double mx = -std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j] * inv);
          double total = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double e = std::exp(row[j] * inv - mx);
            (*probs)[i * n + j] = e;
            total += e;
          }
          for (std::size_t j = 0; j < n; ++j) (*probs)[i * n + j] /= total;
          loss += mx + std::log(total) - row[(*tg)[i]] * inv;
        }
        t.mutable_value(self)[0] = loss / static_cast<double>(m);
      },
      [=](Tape& t, NodeId self) {
        const double g = t.grad(self)[0] * inv / static_cast<double>(m);
        auto d = t.grad(il);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const double onehot = (j == (*tg)[i]) ? 1.0 : 0.0;
            d[i * n + j] += g * ((*probs)[i * n + j] - onehot);
          }
        }
      });
}

Var sigmoid_cross_entropy(Var logits, std::vector<double> labels) {
  const std::size_t n = logits.value().numel();
  if (labels.size() != n) throw ShapeError("sigmoid_cross_entropy: one label per logit required");
  if (n == 0) throw ShapeError("sigmoid_cross_entropy: empty input");
  const NodeId il = logits.id();
  auto y = std::make_shared<const std::vector<double>>(std::move(labels));
  return logits.tape().record(
      {1}, {il},
      [=](Tape& t, NodeId self) {
        auto z = t.value(il).data();
        require_finite(z, "sigmoid_cross_entropy");
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          loss += std::max(z[i], 0.0) - z[i] * (*y)[i] + std::log1p(std::exp(-std::abs(z[i])));
        }
        t.mutable_value(self)[0] = loss / static_cast<double>(n);
      },
      [=](Tape& t, NodeId self) {
        const double g = t.grad(self)[0] / static_cast<double>(n);
        auto z = t.value(il).data();
        auto d = t.grad(il);
        for (std::size_t i = 0; i < n; ++i) {
          const double s = 1.0 / (1.0 + std::exp(-z[i]));
          d[i] += g * (s - (*y)[i]);
        }
      });
}

// ---------------------------------------------------------------------------
// Plain helpers

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape tape(Tape::Mode::kInference);
  return matmul(tape.constant(a), tape.constant(b)).value();
}

Tensor softmax(const Tensor& x, double temperature) {
  if (x.numel() == 0) throw ShapeError("softmax: empty input");
  Tape tape(Tape::Mode::kInference);
  const Tensor flat = x.reshaped({1, x.numel()});
  return softmax(tape.constant(flat), temperature).value().reshaped(x.shape());
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  Tape tape(Tape::Mode::kInference);
  return layernorm(tape.constant(x), tape.constant(gain), tape.constant(bias), eps).value();
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: sizes differ: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Tensor mean_rows(const Tensor& x) {
  if (x.rank() != 2 || x.shape()[0] == 0) {
    throw ShapeError("mean_rows: expected a non-empty matrix, got " + shape_string(x.shape()));
  }
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Tensor out({n});
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += x.at(i, j);
    out[j] = s / static_cast<double>(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checking

GradCheckReport finite_diff_check(const std::function<Var(Tape&)>& build_loss,
                                  std::span<Tensor* const> params, double step) {
  for (Tensor* p : params) p->zero_grad();
  Tape tape(Tape::Mode::kRecord);
  Var loss = build_loss(tape);
  tape.backward(loss);

  // Analytic gradients, copied out before any perturbation.
  std::vector<std::vector<double>> analytic;
  for (Tensor* p : params) analytic.emplace_back(p->grad().begin(), p->grad().end());

  const std::vector<Tensor> pristine = tape.snapshot_values();
  GradCheckReport report;

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor* p = params[pi];
    // Leaves bound to this tensor and their consumers.
    std::vector<std::pair<NodeId, std::size_t>> consumers;  // (node, input slot)
    for (NodeId id = 0; id < tape.size(); ++id) {
      const auto& ins = tape.inputs(id);
      for (std::size_t slot = 0; slot < ins.size(); ++slot) {
        if (tape.parameter_tensor(ins[slot]) == p) consumers.emplace_back(id, slot);
      }
    }
    for (std::size_t e = 0; e < p->numel(); ++e) {
      const double a = analytic[pi][e];
      double numeric = 0.0;
      NodeId first = static_cast<NodeId>(tape.size());
      for (auto [id, slot] : consumers) {
        if (tape.reads(id, slot, e)) first = std::min(first, id);
      }
      if (first < tape.size()) {
        const double saved = (*p)[e];
        (*p)[e] = saved + step;
        tape.replay(first);
        const double up = loss.item();
        (*p)[e] = saved - step;
        tape.replay(first);
        const double down = loss.item();
        (*p)[e] = saved;
        tape.restore_values(pristine, first);
        numeric = (up - down) / (2.0 * step);
      }
      const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      ++report.checked;
      if (rel > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        report.worst_param = pi;
        report.worst_element = e;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    std::copy(analytic[pi].begin(), analytic[pi].end(), params[pi]->grad().begin());
  }
  return report;
}

}  // namespace polyret
