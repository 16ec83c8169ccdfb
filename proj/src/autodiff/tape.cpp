// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#include "blockpg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "blockpg/error.hpp"

namespace blockpg::ad {

Tensor::Tensor(std::size_t n, double fill) : rank_(1), rows_(n), cols_(1), data_(n, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rank_(2), rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor Tensor::scalar(double v) { return Tensor(std::size_t{1}, v); }

Tensor Tensor::vector(std::vector<double> values) {
  Tensor t;
  t.rank_ = 1;
  t.rows_ = values.size();
  t.cols_ = 1;
  t.data_ = std::move(values);
  return t;
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols) {
    throw ShapeError("matrix: " + std::to_string(values.size()) + " values for shape (" +
                     std::to_string(rows) + ", " + std::to_string(cols) + ")");
  }
  Tensor t;
  t.rank_ = 2;
  t.rows_ = rows;
  t.cols_ = cols;
  t.data_ = std::move(values);
  return t;
}

std::vector<std::size_t> Tensor::shape() const {
  if (rank_ == 1) return {rows_};
  if (rank_ == 2) return {rows_, cols_};
  return {};
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(*this));
  return data_[0];
}

std::string shape_string(const Tensor& t) {
  std::ostringstream os;
  os << '(';
  const auto s = t.shape();
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ')';
  return os.str();
}

namespace {

Tensor zeros_like(const Tensor& t) {
  Tensor z = t;
  std::fill(z.values().begin(), z.values().end(), 0.0);
  return z;
}

void accumulate(Tensor& grad, const Tensor& like) {
  if (grad.size() == 0) grad = zeros_like(like);
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

void require_rank2(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(a));
}

}  // namespace

Tape::Tape(const Bindings* bindings, TapeOptions options)
    : bindings_(bindings), options_(options) {
  nodes_.reserve(256);
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Var v) const { return nodes_[v.id]; }

const Tensor& Tape::value(Var v) const { return nodes_.at(v.id).value; }

const char* Tape::op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConst: return "const";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kConcat: return "concat";
    case Op::kTakeRows: return "take_rows";
    case Op::kPick: return "pick";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kTanh: return "tanh";
    case Op::kRmsNorm: return "rms_norm";
    case Op::kLogSoftmax: return "log_softmax";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kMin: return "minimum";
    case Op::kClip: return "clip";
    case Op::kAddRow: return "add_row";
    case Op::kReshape: return "reshape";
  }
  return "?";
}

void Tape::domain_error(const char* op, const std::string& detail) const {
  throw NumericDomainError("node #" + std::to_string(nodes_.size()) + " (" + op + "): " + detail);
}

Var Tape::leaf(std::string_view name) {
  const std::string key(name);
  if (auto it = leaf_ids_.find(key); it != leaf_ids_.end()) return Var{this, it->second};
  if (bindings_ == nullptr) throw ConfigError("unbound leaf '" + key + "': tape has no bindings");
  auto it = bindings_->find(name);
  if (it == bindings_->end()) throw ConfigError("unbound leaf '" + key + "'");
  Node n;
  n.op = Op::kLeaf;
  n.needs_grad = true;
  n.value = it->second;
  n.name = key;
  Var v = push(std::move(n));
  leaf_ids_.emplace(key, v.id);
  return v;
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = Op::kConst;
  n.value = std::move(value);
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Forward operations

Var add(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& x = t.node(a).value;
  const Tensor& y = t.node(b).value;
  require_same(x, y, "add");
  Tape::Node n;
  n.op = Tape::Op::kAdd;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = t.node(a).needs_grad || t.node(b).needs_grad;
  n.value = x;
  for (std::size_t i = 0; i < y.size(); ++i) n.value[i] += y[i];
  return t.push(std::move(n));
}

Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& x = t.node(a).value;
  const Tensor& y = t.node(b).value;
  require_same(x, y, "sub");
  Tape::Node n;
  n.op = Tape::Op::kSub;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = t.node(a).needs_grad || t.node(b).needs_grad;
  n.value = x;
  for (std::size_t i = 0; i < y.size(); ++i) n.value[i] -= y[i];
  return t.push(std::move(n));
}

Var mul(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& x = t.node(a).value;
  const Tensor& y = t.node(b).value;
  require_same(x, y, "mul");
  Tape::Node n;
  n.op = Tape::Op::kMul;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = t.node(a).needs_grad || t.node(b).needs_grad;
  n.value = x;
  for (std::size_t i = 0; i < y.size(); ++i) n.value[i] *= y[i];
  return t.push(std::move(n));
}

Var scale(Var a, double factor) {
  Tape& t = *a.tape;
  Tape::Node n;
  n.op = Tape::Op::kScale;
  n.a = a.id;
  n.s0 = factor;
  n.needs_grad = t.node(a).needs_grad;
  n.value = t.node(a).value;
  for (double& v : n.value.values()) v *= factor;
  return t.push(std::move(n));
}

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& x = t.node(a).value;
  const Tensor& y = t.node(b).value;
  require_rank2(x, "matmul");
  require_rank2(y, "matmul");
  if (x.cols() != y.rows()) {
    throw ShapeError("matmul: inner extents differ " + shape_string(x) + " x " + shape_string(y));
  }
  const std::size_t m = x.rows(), k = x.cols(), p = y.cols();
  Tape::Node n;
  n.op = Tape::Op::kMatMul;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = t.node(a).needs_grad || t.node(b).needs_grad;
  n.value = Tensor(m, p);
  double* out = n.value.values().data();
  const double* xv = x.values().data();
  const double* yv = y.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out + i * p;
    for (std::size_t j = 0; j < k; ++j) {
      const double xij = xv[i * k + j];
      if (xij == 0.0) continue;
      const double* yrow = yv + j * p;
      for (std::size_t c = 0; c < p; ++c) row[c] += xij * yrow[c];
    }
  }
  return t.push(std::move(n));
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.node(a).value;
  require_rank2(x, "transpose");
  Tape::Node n;
  n.op = Tape::Op::kTranspose;
  n.a = a.id;
  n.needs_grad = t.node(a).needs_grad;
  n.value = Tensor(x.cols(), x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) n.value.at(j, i) = x.at(i, j);
  return t.push(std::move(n));
}

Var concat(Var a, Var b, int axis) {
  Tape& t = *a.tape;
  const Tensor& x = t.node(a).value;
  const Tensor& y = t.node(b).value;
  Tape::Node n;
  n.op = Tape::Op::kConcat;
  n.a = a.id;
  n.b = b.id;
  n.axis = axis;
  n.needs_grad = t.node(a).needs_grad || t.node(b).needs_grad;
  if (x.rank() == 1 && y.rank() == 1 && axis == 0) {
    std::vector<double> v(x.values().begin(), x.values().end());
    v.insert(v.end(), y.values().begin(), y.values().end());
    n.value = Tensor::vector(std::move(v));
  } else if (x.rank() == 2 && y.rank() == 2 && axis == 0) {
    if (x.cols() != y.cols()) throw ShapeError("concat(axis 0): column extents differ");
    std::vector<double> v(x.values().begin(), x.values().end());
    v.insert(v.end(), y.values().begin(), y.values().end());
    n.value = Tensor::matrix(x.rows() + y.rows(), x.cols(), std::move(v));
  } else if (x.rank() == 2 && y.rank() == 2 && axis == 1) {
    if (x.rows() != y.rows()) throw ShapeError("concat(axis 1): row extents differ");
    n.value = Tensor(x.rows(), x.cols() + y.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < x.cols(); ++c) n.value.at(r, c) = x.at(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) n.value.at(r, x.cols() + c) = y.at(r, c);
    }
  } else {
    throw ShapeError("concat: unsupported operands " + shape_string(x) + ", " + shape_string(y) +
                     " on axis " + std::to_string(axis));
  }
  return t.push(std::move(n));
}

Var take_rows(Var x, std::span<const std::uint32_t> rows) {
  Tape& t = *x.tape;
  const Tensor& v = t.node(x).value;
  Tape::Node n;
  n.op = Tape::Op::kTakeRows;
  n.a = x.id;
  n.needs_grad = t.node(x).needs_grad;
  n.idx0.assign(rows.begin(), rows.end());
  const std::size_t cols = v.rank() == 2 ? v.cols() : 1;
  std::vector<double> out;
  out.reserve(rows.size() * cols);
  for (std::uint32_t r : rows) {
    if (r >= v.rows()) {
      throw InputError("take_rows: index " + std::to_string(r) + " out of range for " +
                       shape_string(v));
    }
    for (std::size_t c = 0; c < cols; ++c) out.push_back(v[r * cols + c]);
  }
  n.value = v.rank() == 2 ? Tensor::matrix(rows.size(), cols, std::move(out))
                          : Tensor::vector(std::move(out));
  return t.push(std::move(n));
}

Var pick(Var x, std::span<const std::uint32_t> rows, std::span<const std::uint32_t> cols) {
  Tape& t = *x.tape;
  const Tensor& v = t.node(x).value;
  require_rank2(v, "pick");
  if (rows.size() != cols.size()) throw ShapeError("pick: index lists differ in length");
  Tape::Node n;
  n.op = Tape::Op::kPick;
  n.a = x.id;
  n.needs_grad = t.node(x).needs_grad;
  n.idx0.assign(rows.begin(), rows.end());
  n.idx1.assign(cols.begin(), cols.end());
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= v.rows() || cols[i] >= v.cols()) {
      throw InputError("pick: index (" + std::to_string(rows[i]) + ", " + std::to_string(cols[i]) +
                       ") out of range for " + shape_string(v));
    }
    out[i] = v.at(rows[i], cols[i]);
  }
  n.value = Tensor::vector(std::move(out));
  return t.push(std::move(n));
}

Var exp(Var a) {
  Tape& t = *a.tape;
  Tape::Node n;
  n.op = Tape::Op::kExp;
  n.a = a.id;
  n.needs_grad = t.node(a).needs_grad;
  n.value = t.node(a).value;
  for (double& v : n.value.values()) {
    v = std::exp(v);
    if (!std::isfinite(v)) t.domain_error("exp", "overflow");
  }
  return t.push(std::move(n));
}

Var log(Var a) {
  Tape& t = *a.tape;
  Tape::Node n;
  n.op = Tape::Op::kLog;
  n.a = a.id;
  n.needs_grad = t.node(a).needs_grad;
  n.value = t.node(a).value;
  for (double& v : n.value.values()) {
    if (!(v > 0.0) || !std::isfinite(v)) t.domain_error("log", "argument " + std::to_string(v) + " not in (0, inf)");
    v = std::log(v);
  }
  return t.push(std::move(n));
}

Var tanh(Var a) {
  Tape& t = *a.tape;
  Tape::Node n;
  n.op = Tape::Op::kTanh;
  n.a = a.id;
  n.needs_grad = t.node(a).needs_grad;
  n.value = t.node(a).value;
  for (double& v : n.value.values()) v = std::tanh(v);
  return t.push(std::move(n));
}

Var rms_norm(Var a, double eps) {
  Tape& t = *a.tape;
  const Tensor& x = t.node(a).value;
  Tape::Node n;
  n.op = Tape::Op::kRmsNorm;
  n.a = a.id;
  n.s0 = eps;
  n.needs_grad = t.node(a).needs_grad;
  n.value = x;
  const std::size_t cols = x.rank() == 2 ? x.cols() : x.size();
  const std::size_t rows = cols == 0 ? 0 : x.size() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = n.value.values().data() + r * cols;
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += row[c] * row[c];
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(cols) + eps);
    for (std::size_t c = 0; c < cols; ++c) row[c] *= inv;
  }
  return t.push(std::move(n));
}

Var log_softmax(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.node(a).value;
  Tape::Node n;
  n.op = Tape::Op::kLogSoftmax;
  n.a = a.id;
  n.needs_grad = t.node(a).needs_grad;
  n.value = x;
  const std::size_t cols = x.rank() == 2 ? x.cols() : x.size();
  const std::size_t rows = cols == 0 ? 0 : x.size() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = n.value.values().data() + r * cols;
    double mx = row[0];
    for (std::size_t c = 0; c < cols; ++c) {
      if (!std::isfinite(row[c])) t.domain_error("log_softmax", "non-finite input");
      mx = std::max(mx, row[c]);
    }
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) row[c] -= lse;
  }
  return t.push(std::move(n));
}

Var sum(Var a) {
  Tape& t = *a.tape;
  Tape::Node n;
  n.op = Tape::Op::kSum;
  n.a = a.id;
  n.needs_grad = t.node(a).needs_grad;
  double s = 0.0;
  for (double v : t.node(a).value.values()) s += v;
  n.value = Tensor::scalar(s);
  return t.push(std::move(n));
}

Var mean(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.node(a).value;
  if (x.size() == 0) throw ShapeError("mean of an empty tensor");
  Tape::Node n;
  n.op = Tape::Op::kMean;
  n.a = a.id;
  n.needs_grad = t.node(a).needs_grad;
  double s = 0.0;
  for (double v : x.values()) s += v;
  n.value = Tensor::scalar(s / static_cast<double>(x.size()));
  return t.push(std::move(n));
}

Var minimum(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& x = t.node(a).value;
  const Tensor& y = t.node(b).value;
  require_same(x, y, "minimum");
  Tape::Node n;
  n.op = Tape::Op::kMin;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = t.node(a).needs_grad || t.node(b).needs_grad;
  n.value = x;
  for (std::size_t i = 0; i < y.size(); ++i) n.value[i] = std::min(x[i], y[i]);
  return t.push(std::move(n));
}

Var clip(Var a, double lo, double hi) {
  Tape& t = *a.tape;
  Tape::Node n;
  n.op = Tape::Op::kClip;
  n.a = a.id;
  n.s0 = lo;
  n.s1 = hi;
  n.needs_grad = t.node(a).needs_grad;
  n.value = t.node(a).value;
  for (double& v : n.value.values()) v = std::clamp(v, lo, hi);
  return t.push(std::move(n));
}

Var add_row(Var x, Var bias) {
  Tape& t = *x.tape;
  const Tensor& m = t.node(x).value;
  const Tensor& b = t.node(bias).value;
  require_rank2(m, "add_row");
  if (b.size() != m.cols()) {
    throw ShapeError("add_row: bias " + shape_string(b) + " vs matrix " + shape_string(m));
  }
  Tape::Node n;
  n.op = Tape::Op::kAddRow;
  n.a = x.id;
  n.b = bias.id;
  n.needs_grad = t.node(x).needs_grad || t.node(bias).needs_grad;
  n.value = m;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) n.value.at(r, c) += b[c];
  return t.push(std::move(n));
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  Tape& t = *a.tape;
  const Tensor& x = t.node(a).value;
  const std::size_t count = cols == 0 ? rows : rows * cols;
  if (count != x.size()) throw ShapeError("reshape: cannot view " + shape_string(x) + " with " + std::to_string(count) + " values");
  Tape::Node n;
  n.op = Tape::Op::kReshape;
  n.a = a.id;
  n.needs_grad = t.node(a).needs_grad;
  std::vector<double> v(x.values().begin(), x.values().end());
  n.value = cols == 0 ? Tensor::vector(std::move(v)) : Tensor::matrix(rows, cols, std::move(v));
  return t.push(std::move(n));
}

Var detach(Var a) { return a.tape->constant(a.tape->value(a)); }

// ---------------------------------------------------------------------------
// Backward

Gradients Tape::backward(Var root) {
  const Tensor& rv = nodes_.at(root.id).value;
  if (rv.size() != 1) throw ShapeError("backward: root must be a scalar, got " + shape_string(rv));
  for (Node& n : nodes_) n.grad = Tensor();
  nodes_[root.id].grad = zeros_like(rv);
  nodes_[root.id].grad[0] = 1.0;

  for (std::int64_t id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    const Tensor& g = n.grad;
    auto in_a = [&]() -> Node* {
      Node* p = &nodes_[static_cast<std::size_t>(n.a)];
      if (!p->needs_grad) return nullptr;
      accumulate(p->grad, p->value);
      return p;
    };
    auto in_b = [&]() -> Node* {
      Node* p = &nodes_[static_cast<std::size_t>(n.b)];
      if (!p->needs_grad) return nullptr;
      accumulate(p->grad, p->value);
      return p;
    };
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConst:
        break;
      case Op::kAdd: {
        if (Node* p = in_a()) for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
        if (Node* p = in_b()) for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
        break;
      }
      case Op::kSub: {
        if (Node* p = in_a()) for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
        if (Node* p = in_b()) for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] -= g[i];
        break;
      }
      case Op::kMul: {
        const Tensor& x = nodes_[n.a].value;
        const Tensor& y = nodes_[n.b].value;
        if (Node* p = in_a()) for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i] * y[i];
        if (Node* p = in_b()) for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i] * x[i];
        break;
      }
      case Op::kScale: {
        if (Node* p = in_a()) for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i] * n.s0;
        break;
      }
      case Op::kMatMul: {
        const Tensor& x = nodes_[n.a].value;
        const Tensor& y = nodes_[n.b].value;
        const std::size_t m = x.rows(), k = x.cols(), p = y.cols();
        if (Node* pa = in_a()) {
          // dX = G Y^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j) {
              double s = 0.0;
              for (std::size_t c = 0; c < p; ++c) s += g[i * p + c] * y[j * p + c];
              pa->grad[i * k + j] += s;
            }
        }
        if (Node* pb = in_b()) {
          // dY = X^T G
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j) {
              const double xij = x[i * k + j];
              if (xij == 0.0) continue;
              double* out = pb->grad.values().data() + j * p;
              for (std::size_t c = 0; c < p; ++c) out[c] += xij * g[i * p + c];
            }
        }
        break;
      }
      case Op::kTranspose: {
        if (Node* p = in_a()) {
          const std::size_t r = p->value.rows(), c = p->value.cols();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += g[j * r + i];
        }
        break;
      }
      case Op::kConcat: {
        const Tensor& x = nodes_[n.a].value;
        const Tensor& y = nodes_[n.b].value;
        if (n.axis == 0) {
          if (Node* p = in_a()) for (std::size_t i = 0; i < x.size(); ++i) p->grad[i] += g[i];
          if (Node* p = in_b()) for (std::size_t i = 0; i < y.size(); ++i) p->grad[i] += g[x.size() + i];
        } else {
          const std::size_t w = x.cols() + y.cols();
          if (Node* p = in_a())
            for (std::size_t r = 0; r < x.rows(); ++r)
              for (std::size_t c = 0; c < x.cols(); ++c) p->grad[r * x.cols() + c] += g[r * w + c];
          if (Node* p = in_b())
            for (std::size_t r = 0; r < y.rows(); ++r)
              for (std::size_t c = 0; c < y.cols(); ++c)
                p->grad[r * y.cols() + c] += g[r * w + x.cols() + c];
        }
        break;
      }
      case Op::kTakeRows: {
        if (Node* p = in_a()) {
          const std::size_t cols = p->value.rank() == 2 ? p->value.cols() : 1;
          for (std::size_t i = 0; i < n.idx0.size(); ++i)
            for (std::size_t c = 0; c < cols; ++c) p->grad[n.idx0[i] * cols + c] += g[i * cols + c];
        }
        break;
      }
      case Op::kPick: {
        if (Node* p = in_a()) {
          const std::size_t cols = p->value.cols();
          for (std::size_t i = 0; i < n.idx0.size(); ++i) p->grad[n.idx0[i] * cols + n.idx1[i]] += g[i];
        }
        break;
      }
      case Op::kExp: {
        if (Node* p = in_a()) for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i] * n.value[i];
        break;
      }
      case Op::kLog: {
        if (Node* p = in_a()) for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i] / p->value[i];
        break;
      }
      case Op::kTanh: {
        if (Node* p = in_a())
          for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
        break;
      }
      case Op::kRmsNorm: {
        if (Node* p = in_a()) {
          // y = x / r with r = sqrt(mean(x^2) + eps):
          // dx = (g - y * mean(g * y)) / r
          const std::size_t cols = n.value.rank() == 2 ? n.value.cols() : n.value.size();
          const std::size_t rows = cols == 0 ? 0 : n.value.size() / cols;
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t o = r * cols;
            double ss = 0.0, gy = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              ss += p->value[o + c] * p->value[o + c];
              gy += g[o + c] * n.value[o + c];
            }
            const double inv = 1.0 / std::sqrt(ss / static_cast<double>(cols) + n.s0);
            gy /= static_cast<double>(cols);
            for (std::size_t c = 0; c < cols; ++c) p->grad[o + c] += (g[o + c] - n.value[o + c] * gy) * inv;
          }
        }
        break;
      }
      case Op::kLogSoftmax: {
        if (Node* p = in_a()) {
          const std::size_t cols = n.value.rank() == 2 ? n.value.cols() : n.value.size();
          const std::size_t rows = cols == 0 ? 0 : n.value.size() / cols;
          for (std::size_t r = 0; r < rows; ++r) {
            double gs = 0.0;
            for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
            for (std::size_t c = 0; c < cols; ++c) {
              const std::size_t i = r * cols + c;
              p->grad[i] += g[i] - std::exp(n.value[i]) * gs;
            }
          }
        }
        break;
      }
      case Op::kSum: {
        if (Node* p = in_a()) for (double& v : p->grad.values()) v += g[0];
        break;
      }
      case Op::kMean: {
        if (Node* p = in_a()) {
          const double share = g[0] / static_cast<double>(p->value.size());
          for (double& v : p->grad.values()) v += share;
        }
        break;
      }
      case Op::kMin: {
        const Tensor& x = nodes_[n.a].value;
        const Tensor& y = nodes_[n.b].value;
        Node* pa = in_a();
        Node* pb = in_b();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (x[i] <= y[i]) {
            if (pa) pa->grad[i] += g[i];
          } else if (pb) {
            pb->grad[i] += g[i];
          }
        }
        break;
      }
      case Op::kClip: {
        if (Node* p = in_a()) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = p->value[i];
            const bool inside = x >= n.s0 && x <= n.s1;
            if (inside || options_.corrupt_clip_gradient) p->grad[i] += g[i];
          }
        }
        break;
      }
      case Op::kAddRow: {
        const std::size_t cols = n.value.cols();
        if (Node* p = in_a()) for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
        if (Node* p = in_b())
          for (std::size_t i = 0; i < g.size(); ++i) p->grad[i % cols] += g[i];
        break;
      }
      case Op::kReshape: {
        if (Node* p = in_a()) for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
        break;
      }
    }
  }

  Gradients out;
  for (const auto& [name, id] : leaf_ids_) {
    const Node& n = nodes_[id];
    out.emplace(name, n.grad.size() ? n.grad : zeros_like(n.value));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Graph-level helpers

Tensor evaluate(const GraphFn& graph, const Bindings& bindings, TapeOptions options) {
  Tape tape(&bindings, options);
  Var root = graph(tape);
  return tape.value(root);
}

ValueAndGradients value_and_gradients(const GraphFn& graph, const Bindings& bindings,
                                      TapeOptions options) {
  Tape tape(&bindings, options);
  Var root = graph(tape);
  ValueAndGradients out;
  out.value = tape.value(root);
  out.gradients = tape.backward(root);
  return out;
}

GradCheckReport grad_check(const GraphFn& graph, const Bindings& bindings, double step,
                           double tolerance, TapeOptions options) {
  if (!(step > 0.0)) throw ConfigError("grad_check: step must be positive");
  const ValueAndGradients analytic = value_and_gradients(graph, bindings, options);
  Bindings probe = bindings;
  GradCheckReport report;
  for (auto& [name, tensor] : probe) {
    LeafCheck leaf;
    leaf.name = name;
    const auto git = analytic.gradients.find(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor[i];
      tensor[i] = orig + step;
      const double up = evaluate(graph, probe, options).item();
      tensor[i] = orig - step;
      const double down = evaluate(graph, probe, options).item();
      tensor[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = git == analytic.gradients.end() ? 0.0 : git->second[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      const double err = std::abs(a - numeric) / denom;
      ++report.parameters;
      if (i == 0 || err > leaf.max_relative_error) {
        leaf.max_relative_error = err;
        leaf.worst_index = i;
        leaf.analytic = a;
        leaf.numeric = numeric;
      }
    }
    leaf.pass = leaf.max_relative_error < tolerance;
    report.pass = report.pass && leaf.pass;
    if (leaf.max_relative_error >= report.max_relative_error) {
      report.max_relative_error = leaf.max_relative_error;
      report.worst_leaf = name;
    }
    report.leaves.push_back(std::move(leaf));
  }
  return report;
}

}  // namespace blockpg::ad
