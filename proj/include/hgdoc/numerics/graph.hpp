#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hgdoc/numerics/gemm.hpp"
#include "hgdoc/numerics/tensor.hpp"

namespace hgdoc {

enum class OpKind {
  input,
  leaf,
  matmul,
  matmul_nt,
  add,
  add_row,
  mul,
  scale,
  softmax,
  masked_softmax,
  layer_norm,
  gelu,
  sigmoid,
  gather_rows,
  concat_rows,
  slice_rows,
  concat_cols,
  slice_cols,
  reshape,
  row_mean,
  group_softmax,
  group_pool,
  repeat_rows,
  sum,
  mean,
  cross_entropy,
  bce_with_logits,
};

inline const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::input: return "input";
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::matmul_nt: return "matmul_nt";
    case OpKind::add: return "add";
    case OpKind::add_row: return "add_row";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::softmax: return "softmax";
    case OpKind::masked_softmax: return "masked_softmax";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::gelu: return "gelu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::slice_rows: return "slice_rows";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::slice_cols: return "slice_cols";
    case OpKind::reshape: return "reshape";
    case OpKind::row_mean: return "row_mean";
    case OpKind::group_softmax: return "group_softmax";
    case OpKind::group_pool: return "group_pool";
    case OpKind::repeat_rows: return "repeat_rows";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::bce_with_logits: return "bce_with_logits";
  }
  return "?";
}

/// Named trainable array. `value` stays empty for shape-only models, which
/// lets the MAC counter build full-size configurations without allocating.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;

  bool materialized() const { return !value.empty(); }
  std::size_t size() const { return numel(shape); }
  void zero_grad() {
    if (materialized()) grad.assign(value.size(), 0.0);
  }
  Tensor tensor() const { return Tensor(shape, value); }
};

struct Node {
  std::uint64_t id = 0;
  OpKind op = OpKind::input;
  Shape shape;
  std::vector<double> value;
  const std::vector<double>* external = nullptr;
  std::vector<double>* grad_sink = nullptr;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::span<const double> data() const {
    return external ? std::span<const double>(*external) : std::span<const double>(value);
  }
  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(numel(shape), 0.0);
    return grad;
  }
};

/// Handle to a value in a Graph.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return numel(node_->shape); }
  std::size_t rows() const { return node_->shape.empty() ? 1 : node_->shape.front(); }
  std::size_t cols() const { return node_->shape.size() < 2 ? 1 : node_->shape.back(); }
  std::span<const double> data() const { return node_->data(); }
  double item() const { return node_->data()[0]; }
  double at(std::size_t r, std::size_t c) const { return node_->data()[r * cols() + c]; }
  Tensor value() const {
    auto d = data();
    return Tensor(shape(), std::vector<double>(d.begin(), d.end()));
  }
  std::span<const double> grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }

 private:
  std::shared_ptr<Node> node_;
};

struct OpRecord {
  std::uint64_t id;
  OpKind op;
  std::vector<std::uint64_t> inputs;
  std::uint64_t macs;
  std::string scope;
};

struct GraphOptions {
  bool track_grad = true;
  // Compute shapes and MAC counts only; no value buffers are allocated.
  bool shape_only = false;
  // Keep the OpRecord log (needed for MAC accounting).
  bool record_ops = true;
};

/// Reverse-mode tape. Every primitive is a member function; each one appends
/// an OpRecord carrying its multiply-accumulate count (matmuls only).
class Graph {
 public:
  explicit Graph(GraphOptions options = {}) : opt_(options) {}

  bool shape_only() const { return opt_.shape_only; }
  bool tracking() const { return opt_.track_grad; }

  class ScopeGuard {
   public:
    ScopeGuard(Graph& g, std::string name) : g_(g), saved_(std::move(g.scope_)) {
      g_.scope_ = saved_.empty() ? std::move(name) : saved_ + "." + name;
    }
    ~ScopeGuard() { g_.scope_ = std::move(saved_); }
    ScopeGuard(const ScopeGuard&) = delete;
    ScopeGuard& operator=(const ScopeGuard&) = delete;

   private:
    Graph& g_;
    std::string saved_;
  };

  [[nodiscard]] ScopeGuard scope(std::string name) { return ScopeGuard(*this, std::move(name)); }
  const std::string& current_scope() const { return scope_; }

  const std::vector<OpRecord>& records() const { return records_; }
  std::uint64_t total_macs() const {
    std::uint64_t total = 0;
    for (const auto& r : records_) total += r.macs;
    return total;
  }

  // ---------------------------------------------------------------- leaves

  Var input(Tensor t) { return input(t.shape(), std::move(t.buffer())); }

  Var input(Shape shape, std::vector<double> data = {}) {
    auto n = make(OpKind::input, std::move(shape), {}, 0);
    if (!opt_.shape_only) {
      if (data.size() != numel(n->shape)) {
        throw DimensionError("input data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(n->shape));
      }
      n->value = std::move(data);
    }
    return Var(n);
  }

  Var param(Parameter& p) {
    auto n = make_leaf(p.shape);
    if (!opt_.shape_only) {
      if (!p.materialized()) throw ContractError("parameter '" + p.name + "' has no storage");
      n->external = &p.value;
      if (opt_.track_grad) {
        if (p.grad.size() != p.value.size()) p.grad.assign(p.value.size(), 0.0);
        n->requires_grad = true;
        n->grad_sink = &p.grad;
      }
    }
    return Var(n);
  }

  // Leaf view of a caller-owned tensor; gradients land in t.grad() when
  // t.requires_grad() is set.
  Var leaf(Tensor& t) {
    auto n = make_leaf(t.shape());
    n->external = &t.buffer();
    if (opt_.track_grad && t.requires_grad()) {
      n->requires_grad = true;
      n->grad_sink = &*t.grad();
    }
    return Var(n);
  }

  // ------------------------------------------------------------- products

  Var matmul(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
      throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                           shape_str(b.shape()));
    }
    auto out = make(OpKind::matmul, {m, n}, {a, b}, static_cast<std::uint64_t>(m) * k * n);
    if (!opt_.shape_only) gemm::nn(a.data().data(), b.data().data(), out->value.data(), m, k, n, false);
    if (out->requires_grad) {
      out->backward = [m, k, n](Node& self) {
        Node* A = self.inputs[0].get();
        Node* B = self.inputs[1].get();
        if (A->requires_grad) gemm::nt(self.grad.data(), B->data().data(), A->grad_buffer().data(), m, n, k, true);
        if (B->requires_grad) gemm::tn(A->data().data(), self.grad.data(), B->grad_buffer().data(), k, m, n, true);
      };
    }
    return Var(out);
  }

  // a[m x k] * b[n x k]^T
  Var matmul_nt(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul_nt");
    require_rank(b, 2, "matmul_nt");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
    if (b.shape()[1] != k) {
      throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                           shape_str(b.shape()) + "^T");
    }
    auto out = make(OpKind::matmul_nt, {m, n}, {a, b}, static_cast<std::uint64_t>(m) * k * n);
    if (!opt_.shape_only) gemm::nt(a.data().data(), b.data().data(), out->value.data(), m, k, n, false);
    if (out->requires_grad) {
      out->backward = [m, k, n](Node& self) {
        Node* A = self.inputs[0].get();
        Node* B = self.inputs[1].get();
        if (A->requires_grad) gemm::nn(self.grad.data(), B->data().data(), A->grad_buffer().data(), m, n, k, true);
        if (B->requires_grad) gemm::tn(self.grad.data(), A->data().data(), B->grad_buffer().data(), n, m, k, true);
      };
    }
    return Var(out);
  }

  // ----------------------------------------------------------- elementwise

  Var add(const Var& a, const Var& b) {
    if (a.shape() != b.shape()) {
      throw DimensionError("add: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    auto out = make(OpKind::add, a.shape(), {a, b}, 0);
    if (!opt_.shape_only) {
      auto x = a.data(), y = b.data();
      for (std::size_t i = 0; i < x.size(); ++i) out->value[i] = x[i] + y[i];
    }
    if (out->requires_grad) {
      out->backward = [](Node& self) {
        for (auto& in : self.inputs) accumulate(*in, self.grad);
      };
    }
    return Var(out);
  }

  Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

  // x[m x n] + row vector b (n elements) broadcast over rows.
  Var add_row(const Var& x, const Var& b) {
    const std::size_t n = x.cols();
    if (b.size() != n) {
      throw DimensionError("add_row: bias " + shape_str(b.shape()) + " does not fit " + shape_str(x.shape()));
    }
    auto out = make(OpKind::add_row, x.shape(), {x, b}, 0);
    if (!opt_.shape_only) {
      auto xv = x.data(), bv = b.data();
      for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = xv[i] + bv[i % n];
    }
    if (out->requires_grad) {
      out->backward = [n](Node& self) {
        Node* X = self.inputs[0].get();
        Node* B = self.inputs[1].get();
        accumulate(*X, self.grad);
        if (B->requires_grad) {
          auto& g = B->grad_buffer();
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
        }
      };
    }
    return Var(out);
  }

  // Hadamard product.
  Var mul(const Var& a, const Var& b) {
    if (a.shape() != b.shape()) {
      throw DimensionError("mul: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    auto out = make(OpKind::mul, a.shape(), {a, b}, 0);
    if (!opt_.shape_only) {
      auto x = a.data(), y = b.data();
      for (std::size_t i = 0; i < x.size(); ++i) out->value[i] = x[i] * y[i];
    }
    if (out->requires_grad) {
      out->backward = [](Node& self) {
        Node* A = self.inputs[0].get();
        Node* B = self.inputs[1].get();
        auto x = A->data(), y = B->data();
        if (A->requires_grad) {
          auto& g = A->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
        }
        if (B->requires_grad) {
          auto& g = B->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x[i];
        }
      };
    }
    return Var(out);
  }

  Var scale(const Var& x, double s) {
    auto out = make(OpKind::scale, x.shape(), {x}, 0);
    if (!opt_.shape_only) {
      auto xv = x.data();
      for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = xv[i] * s;
    }
    if (out->requires_grad) {
      out->backward = [s](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
      };
    }
    return Var(out);
  }

  // tanh-approximated GELU.
  Var gelu(const Var& x) {
    auto out = make(OpKind::gelu, x.shape(), {x}, 0);
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double a = 0.044715;
    if (!opt_.shape_only) {
      auto xv = x.data();
      for (std::size_t i = 0; i < xv.size(); ++i) {
        const double v = xv[i];
        out->value[i] = 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v)));
      }
    }
    if (out->requires_grad) {
      out->backward = [](Node& self) {
        Node* X = self.inputs[0].get();
        auto xv = X->data();
        auto& g = X->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double v = xv[i];
          const double t = std::tanh(c * (v + a * v * v * v));
          const double dt = (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
          g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
        }
      };
    }
    return Var(out);
  }

  Var sigmoid(const Var& x) {
    auto out = make(OpKind::sigmoid, x.shape(), {x}, 0);
    if (!opt_.shape_only) {
      auto xv = x.data();
      for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = stable_sigmoid(xv[i]);
    }
    if (out->requires_grad) {
      out->backward = [](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = self.value[i];
          g[i] += self.grad[i] * y * (1.0 - y);
        }
      };
    }
    return Var(out);
  }

  // ----------------------------------------------------------- normalizers

  Var softmax(const Var& x, std::size_t axis) {
    const auto& s = x.shape();
    if (axis >= s.size()) {
      throw ContractError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    auto out = make(OpKind::softmax, s, {x}, 0);
    if (!opt_.shape_only) {
      auto xv = x.data();
      auto& y = out->value;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double mx = -std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
          double z = 0.0;
          for (std::size_t j = 0; j < len; ++j) {
            const double e = std::exp(xv[base + j * inner] - mx);
            y[base + j * inner] = e;
            z += e;
          }
          for (std::size_t j = 0; j < len; ++j) y[base + j * inner] /= z;
        }
      }
    }
    if (out->requires_grad) {
      out->backward = [outer, inner, len](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const auto& y = self.value;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double dot = 0.0;
            for (std::size_t j = 0; j < len; ++j) dot += self.grad[base + j * inner] * y[base + j * inner];
            for (std::size_t j = 0; j < len; ++j) {
              const std::size_t idx = base + j * inner;
              g[idx] += y[idx] * (self.grad[idx] - dot);
            }
          }
        }
      };
    }
    return Var(out);
  }

  /// Row softmax over x[m x n] restricted to active keys. Masked keys get
  /// exactly zero weight. A row with no active key is an error for an active
  /// query and an all-zero row for an inactive one.
  Var masked_softmax(const Var& x, const std::vector<std::uint8_t>& key_mask,
                     const std::vector<std::uint8_t>& query_mask) {
    require_rank(x, 2, "masked_softmax");
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    if (key_mask.size() != n || query_mask.size() != m) {
      throw DimensionError("masked_softmax: masks (" + std::to_string(query_mask.size()) + ", " +
                           std::to_string(key_mask.size()) + ") do not fit " + shape_str(x.shape()));
    }
    const bool any_key = std::any_of(key_mask.begin(), key_mask.end(), [](auto v) { return v != 0; });
    if (!any_key) {
      for (std::size_t i = 0; i < m; ++i) {
        if (query_mask[i]) throw ContractError("attention: fully masked key axis for an active query");
      }
    }
    auto out = make(OpKind::masked_softmax, x.shape(), {x}, 0);
    if (!opt_.shape_only && any_key) {
      auto xv = x.data();
      auto& y = out->value;
      for (std::size_t i = 0; i < m; ++i) {
        const double* row = xv.data() + i * n;
        double* yr = y.data() + i * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          if (key_mask[j]) mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (key_mask[j]) {
            yr[j] = std::exp(row[j] - mx);
            z += yr[j];
          }
        }
        const double inv = 1.0 / z;
        for (std::size_t j = 0; j < n; ++j) yr[j] *= inv;
      }
    }
    if (out->requires_grad) {
      out->backward = [m, n](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const auto& y = self.value;
        for (std::size_t i = 0; i < m; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * y[i * n + j];
          for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[i * n + j] * (self.grad[i * n + j] - dot);
        }
      };
    }
    return Var(out);
  }

  /// Normalizes over the last dimension, then applies gamma/beta.
  Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
    const std::size_t d = x.shape().back();
    if (gamma.size() != d || beta.size() != d) {
      throw DimensionError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()) +
                           " do not match last dimension of " + shape_str(x.shape()));
    }
    const std::size_t rows = x.size() / d;
    auto out = make(OpKind::layer_norm, x.shape(), {x, gamma, beta}, 0);
    if (opt_.shape_only) return Var(out);
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    {
      auto xv = x.data(), gv = gamma.data(), bv = beta.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
          const double h = (row[j] - mu) * is;
          (*xhat)[r * d + j] = h;
          out->value[r * d + j] = h * gv[j] + bv[j];
        }
      }
    }
    if (out->requires_grad) {
      out->backward = [d, rows, xhat, inv_std](Node& self) {
        Node* X = self.inputs[0].get();
        Node* G = self.inputs[1].get();
        Node* B = self.inputs[2].get();
        auto gv = G->data();
        if (G->requires_grad || B->requires_grad) {
          auto& gg = G->grad_buffer();
          auto& gb = B->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              gg[j] += self.grad[r * d + j] * (*xhat)[r * d + j];
              gb[j] += self.grad[r * d + j];
            }
          }
        }
        if (X->requires_grad) {
          auto& gx = X->grad_buffer();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = self.grad[r * d + j] * gv[j];
              m1 += dh;
              m2 += dh * (*xhat)[r * d + j];
            }
            m1 *= inv_d;
            m2 *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = self.grad[r * d + j] * gv[j];
              gx[r * d + j] += (*inv_std)[r] * (dh - m1 - (*xhat)[r * d + j] * m2);
            }
          }
        }
      };
    }
    return Var(out);
  }

  // ------------------------------------------------------- index/structure

  /// Row lookup: out[i] = table[ids[i]]. Counts zero MACs.
  Var gather_rows(const Var& table, std::vector<std::size_t> ids) {
    require_rank(table, 2, "gather_rows");
    const std::size_t rows = table.shape()[0], d = table.shape()[1];
    for (auto id : ids) {
      if (id >= rows) {
        throw ContractError("gather_rows: index " + std::to_string(id) + " out of range for " +
                            std::to_string(rows) + " rows");
      }
    }
    if (ids.empty()) throw DimensionError("gather_rows: empty index list");
    auto out = make(OpKind::gather_rows, {ids.size(), d}, {table}, 0);
    if (!opt_.shape_only) {
      auto tv = table.data();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, out->value.begin() + static_cast<std::ptrdiff_t>(i * d));
      }
    }
    if (out->requires_grad) {
      out->backward = [ids = std::move(ids), d](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < ids.size(); ++i) {
          for (std::size_t j = 0; j < d; ++j) g[ids[i] * d + j] += self.grad[i * d + j];
        }
      };
    }
    return Var(out);
  }

  /// Mean of the selected rows of x[m x d], as a [1 x d] row.
  Var row_mean(const Var& x, std::vector<std::size_t> ids) {
    require_rank(x, 2, "row_mean");
    if (ids.empty()) throw ContractError("row_mean: empty row set");
    const std::size_t m = x.shape()[0], d = x.shape()[1];
    for (auto id : ids) {
      if (id >= m) throw ContractError("row_mean: row " + std::to_string(id) + " out of range");
    }
    auto out = make(OpKind::row_mean, {1, d}, {x}, 0);
    const double w = 1.0 / static_cast<double>(ids.size());
    if (!opt_.shape_only) {
      auto xv = x.data();
      for (auto id : ids) {
        for (std::size_t j = 0; j < d; ++j) out->value[j] += xv[id * d + j];
      }
      for (auto& v : out->value) v *= w;
    }
    if (out->requires_grad) {
      out->backward = [ids = std::move(ids), d, w](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (auto id : ids) {
          for (std::size_t j = 0; j < d; ++j) g[id * d + j] += self.grad[j] * w;
        }
      };
    }
    return Var(out);
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
    const std::size_t d = parts.front().cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
      require_rank(p, 2, "concat_rows");
      if (p.cols() != d) throw DimensionError("concat_rows: column counts differ");
      total += p.rows();
    }
    auto out = make(OpKind::concat_rows, {total, d}, parts, 0);
    if (!opt_.shape_only) {
      std::size_t off = 0;
      for (const auto& p : parts) {
        auto pv = p.data();
        std::copy(pv.begin(), pv.end(), out->value.begin() + static_cast<std::ptrdiff_t>(off));
        off += pv.size();
      }
    }
    if (out->requires_grad) {
      out->backward = [](Node& self) {
        std::size_t off = 0;
        for (auto& in : self.inputs) {
          const std::size_t len = numel(in->shape);
          if (in->requires_grad) {
            auto& g = in->grad_buffer();
            for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
          }
          off += len;
        }
      };
    }
    return Var(out);
  }

  Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
    require_rank(x, 2, "slice_rows");
    if (begin >= end || end > x.rows()) {
      throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                           ") invalid for " + shape_str(x.shape()));
    }
    const std::size_t d = x.cols();
    auto out = make(OpKind::slice_rows, {end - begin, d}, {x}, 0);
    if (!opt_.shape_only) {
      auto xv = x.data();
      std::copy(xv.begin() + static_cast<std::ptrdiff_t>(begin * d), xv.begin() + static_cast<std::ptrdiff_t>(end * d),
                out->value.begin());
    }
    if (out->requires_grad) {
      out->backward = [begin, d](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * d + i] += self.grad[i];
      };
    }
    return Var(out);
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
    const std::size_t m = parts.front().rows();
    std::size_t total = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
      require_rank(p, 2, "concat_cols");
      if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
      widths.push_back(p.cols());
      total += p.cols();
    }
    auto out = make(OpKind::concat_cols, {m, total}, parts, 0);
    if (!opt_.shape_only) {
      std::size_t c0 = 0;
      for (std::size_t p = 0; p < parts.size(); ++p) {
        auto pv = parts[p].data();
        const std::size_t w = widths[p];
        for (std::size_t i = 0; i < m; ++i) {
          std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(i * w), w,
                      out->value.begin() + static_cast<std::ptrdiff_t>(i * total + c0));
        }
        c0 += w;
      }
    }
    if (out->requires_grad) {
      out->backward = [m, total, widths = std::move(widths)](Node& self) {
        std::size_t c0 = 0;
        for (std::size_t p = 0; p < self.inputs.size(); ++p) {
          Node* in = self.inputs[p].get();
          const std::size_t w = widths[p];
          if (in->requires_grad) {
            auto& g = in->grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
              for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * total + c0 + j];
            }
          }
          c0 += w;
        }
      };
    }
    return Var(out);
  }

  Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
    require_rank(x, 2, "slice_cols");
    const std::size_t m = x.rows(), n = x.cols();
    if (begin >= end || end > n) {
      throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                           ") invalid for " + shape_str(x.shape()));
    }
    const std::size_t w = end - begin;
    auto out = make(OpKind::slice_cols, {m, w}, {x}, 0);
    if (!opt_.shape_only) {
      auto xv = x.data();
      for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(i * n + begin), w,
                    out->value.begin() + static_cast<std::ptrdiff_t>(i * w));
      }
    }
    if (out->requires_grad) {
      out->backward = [m, n, w, begin](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
        }
      };
    }
    return Var(out);
  }

  Var reshape(const Var& x, Shape shape) {
    if (numel(shape) != x.size()) {
      throw DimensionError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
    }
    auto out = make(OpKind::reshape, std::move(shape), {x}, 0);
    if (!opt_.shape_only) {
      auto xv = x.data();
      std::copy(xv.begin(), xv.end(), out->value.begin());
    }
    if (out->requires_grad) {
      out->backward = [](Node& self) { accumulate(*self.inputs[0], self.grad); };
    }
    return Var(out);
  }

  // ------------------------------------------------------ hourglass pieces

  /// Softmax within each run of k consecutive entries of a length-L vector.
  Var group_softmax(const Var& logits, std::size_t k) {
    const std::size_t len = logits.size();
    if (k == 0 || len % k != 0) {
      throw ContractError("group_softmax: length " + std::to_string(len) + " not divisible by k=" + std::to_string(k));
    }
    auto out = make(OpKind::group_softmax, {len}, {logits}, 0);
    if (!opt_.shape_only) {
      auto xv = logits.data();
      auto& y = out->value;
      for (std::size_t g0 = 0; g0 < len; g0 += k) {
        double mx = xv[g0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, xv[g0 + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          y[g0 + j] = std::exp(xv[g0 + j] - mx);
          z += y[g0 + j];
        }
        for (std::size_t j = 0; j < k; ++j) y[g0 + j] /= z;
      }
    }
    if (out->requires_grad) {
      out->backward = [k, len](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const auto& y = self.value;
        for (std::size_t g0 = 0; g0 < len; g0 += k) {
          double dot = 0.0;
          for (std::size_t j = 0; j < k; ++j) dot += self.grad[g0 + j] * y[g0 + j];
          for (std::size_t j = 0; j < k; ++j) g[g0 + j] += y[g0 + j] * (self.grad[g0 + j] - dot);
        }
      };
    }
    return Var(out);
  }

  /// Weighted 1-D pooling: out[g] = sum_j w[g*k + j] * x[g*k + j].
  Var group_pool(const Var& x, const Var& weights, std::size_t k) {
    require_rank(x, 2, "group_pool");
    const std::size_t len = x.rows(), d = x.cols();
    if (k == 0 || len % k != 0) {
      throw ContractError("group_pool: length " + std::to_string(len) + " not divisible by k=" + std::to_string(k));
    }
    if (weights.size() != len) throw DimensionError("group_pool: weight count does not match rows");
    auto out = make(OpKind::group_pool, {len / k, d}, {x, weights}, 0);
    if (!opt_.shape_only) {
      auto xv = x.data(), wv = weights.data();
      for (std::size_t i = 0; i < len; ++i) {
        double* dst = out->value.data() + (i / k) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += wv[i] * xv[i * d + j];
      }
    }
    if (out->requires_grad) {
      out->backward = [k, len, d](Node& self) {
        Node* X = self.inputs[0].get();
        Node* W = self.inputs[1].get();
        auto xv = X->data(), wv = W->data();
        for (std::size_t i = 0; i < len; ++i) {
          const double* gy = self.grad.data() + (i / k) * d;
          if (X->requires_grad) {
            auto& gx = X->grad_buffer();
            for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += wv[i] * gy[j];
          }
          if (W->requires_grad) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += gy[j] * xv[i * d + j];
            W->grad_buffer()[i] += dot;
          }
        }
      };
    }
    return Var(out);
  }

  /// Duplicates every row k times.
  Var repeat_rows(const Var& x, std::size_t k) {
    require_rank(x, 2, "repeat_rows");
    if (k == 0) throw ContractError("repeat_rows: k must be positive");
    const std::size_t len = x.rows(), d = x.cols();
    auto out = make(OpKind::repeat_rows, {len * k, d}, {x}, 0);
    if (!opt_.shape_only) {
      auto xv = x.data();
      for (std::size_t i = 0; i < len * k; ++i) {
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((i / k) * d), d,
                    out->value.begin() + static_cast<std::ptrdiff_t>(i * d));
      }
    }
    if (out->requires_grad) {
      out->backward = [k, len, d](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < len * k; ++i) {
          for (std::size_t j = 0; j < d; ++j) g[(i / k) * d + j] += self.grad[i * d + j];
        }
      };
    }
    return Var(out);
  }

  // ----------------------------------------------------------- reductions

  Var sum(const Var& x) {
    auto out = make(OpKind::sum, {1}, {x}, 0);
    if (!opt_.shape_only) {
      double s = 0.0;
      for (double v : x.data()) s += v;
      out->value[0] = s;
    }
    if (out->requires_grad) {
      out->backward = [](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0];
      };
    }
    return Var(out);
  }

  Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

  /// Mean softmax cross-entropy of logits[m x C] against class targets.
  Var cross_entropy(const Var& logits, std::vector<std::size_t> targets) {
    require_rank(logits, 2, "cross_entropy");
    const std::size_t m = logits.rows(), c = logits.cols();
    if (targets.size() != m) throw DimensionError("cross_entropy: target count does not match rows");
    for (auto t : targets) {
      if (t >= c) throw ContractError("cross_entropy: target class out of range");
    }
    auto out = make(OpKind::cross_entropy, {1}, {logits}, 0);
    if (opt_.shape_only) return Var(out);
    auto probs = std::make_shared<std::vector<double>>(m * c);
    {
      auto xv = logits.data();
      double loss = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double* row = xv.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        const double lz = std::log(z) + mx;
        for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(row[j] - lz);
        loss += lz - row[targets[i]];
      }
      out->value[0] = loss / static_cast<double>(m);
    }
    if (out->requires_grad) {
      out->backward = [probs, targets = std::move(targets), m, c](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const double s = self.grad[0] / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            g[i * c + j] += s * ((*probs)[i * c + j] - (j == targets[i] ? 1.0 : 0.0));
          }
        }
      };
    }
    return Var(out);
  }

  /// Weighted mean binary cross-entropy on raw logits:
  /// sum_i w_i * bce(x_i, t_i) / sum_i w_i.
  Var bce_with_logits(const Var& logits, std::vector<double> targets, std::vector<double> weights = {}) {
    const std::size_t m = logits.size();
    if (targets.size() != m) throw DimensionError("bce_with_logits: target count does not match logits");
    if (weights.empty()) weights.assign(m, 1.0);
    if (weights.size() != m) throw DimensionError("bce_with_logits: weight count does not match logits");
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    if (!(wsum > 0.0)) throw ContractError("bce_with_logits: total weight must be positive");
    auto out = make(OpKind::bce_with_logits, {1}, {logits}, 0);
    if (opt_.shape_only) return Var(out);
    {
      auto xv = logits.data();
      double loss = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double x = xv[i];
        // log(1 + e^-|x|) + max(x, 0) - x t
        loss += weights[i] * (std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x))));
      }
      out->value[0] = loss / wsum;
    }
    if (out->requires_grad) {
      out->backward = [targets = std::move(targets), weights = std::move(weights), wsum](Node& self) {
        Node* X = self.inputs[0].get();
        auto xv = X->data();
        auto& g = X->grad_buffer();
        const double s = self.grad[0] / wsum;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * weights[i] * (stable_sigmoid(xv[i]) - targets[i]);
      };
    }
    return Var(out);
  }

  // ------------------------------------------------------------- backward

  /// Reverse-mode sweep from a scalar. Gradients of intermediate nodes are
  /// reset on every call; parameter and leaf-tensor sinks accumulate.
  void backward(const Var& loss) {
    if (loss.size() != 1) {
      throw ContractError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    }
    if (opt_.shape_only) throw ContractError("backward: graph was built in shape-only mode");
    if (!loss.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{loss.node()};
    while (!stack.empty()) {
      Node* n = stack.back();
      stack.pop_back();
      if (!seen.insert(n).second) continue;
      order.push_back(n);
      for (auto& in : n->inputs) {
        if (in->requires_grad) stack.push_back(in.get());
      }
    }
    // Inputs always carry smaller ids than their consumers.
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });
    for (Node* n : order) n->grad.assign(numel(n->shape), 0.0);
    loss.node()->grad[0] = 1.0;
    for (Node* n : order) {
      if (n->backward) n->backward(*n);
    }
    for (Node* n : order) {
      if (n->grad_sink) {
        auto& sink = *n->grad_sink;
        for (std::size_t i = 0; i < sink.size(); ++i) sink[i] += n->grad[i];
      }
    }
  }

  static double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }

 private:
  static void require_rank(const Var& x, std::size_t r, const char* op) {
    if (x.shape().size() != r) {
      throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(x.shape()));
    }
  }

  static void accumulate(Node& n, const std::vector<double>& g) {
    if (!n.requires_grad) return;
    auto& dst = n.grad_buffer();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }

  std::shared_ptr<Node> make_leaf(const Shape& shape) {
    auto n = std::make_shared<Node>();
    n->id = next_id_++;
    n->op = OpKind::leaf;
    n->shape = shape;
    if (opt_.record_ops) records_.push_back({n->id, OpKind::leaf, {}, 0, scope_});
    return n;
  }

  std::shared_ptr<Node> make(OpKind op, Shape shape, const std::vector<Var>& inputs, std::uint64_t macs) {
    for (auto s : shape) {
      if (s == 0) throw DimensionError(std::string(op_name(op)) + ": zero-sized result " + shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->id = next_id_++;
    n->op = op;
    n->shape = std::move(shape);
    bool rg = false;
    if (opt_.track_grad) {
      for (const auto& in : inputs) rg = rg || in.requires_grad();
    }
    n->requires_grad = rg;
    if (rg) {
      n->inputs.reserve(inputs.size());
      for (const auto& in : inputs) n->inputs.push_back(in.ptr());
    }
    if (!opt_.shape_only) n->value.assign(numel(n->shape), 0.0);
    if (opt_.record_ops) {
      std::vector<std::uint64_t> ids;
      ids.reserve(inputs.size());
      for (const auto& in : inputs) ids.push_back(in.node()->id);
      records_.push_back({n->id, op, std::move(ids), macs, scope_});
    }
    return n;
  }

  GraphOptions opt_;
  std::uint64_t next_id_ = 0;
  std::string scope_;
  std::vector<OpRecord> records_;
};

}  // namespace hgdoc
