// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode automatic differentiation over dense float64 tensors.
//
// The tape is define-by-run: every operation evaluates eagerly and records a
// node, so building a graph against a set of leaf bindings *is* evaluation.
// backward() then walks the nodes in reverse and returns the gradient of a
// scalar root for every bound leaf it reached.
//
// Tensors are rank 1 or rank 2. That covers every model and objective here and
// keeps a node small enough that tapes with a few thousand nodes stay cheap.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace blockpg::ad {

class Tensor {
 public:
  Tensor() = default;
  // Rank-1 tensor of n values.
  explicit Tensor(std::size_t n, double fill = 0.0);
  // Rank-2 row-major tensor.
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rank() const noexcept { return rank_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::vector<std::size_t> shape() const;
  bool same_shape(const Tensor& other) const noexcept {
    return rank_ == other.rank_ && rows_ == other.rows_ && cols_ == other.cols_;
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double item() const;

  bool operator==(const Tensor& other) const = default;

 private:
  friend class Tape;
  std::size_t rank_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_string(const Tensor& t);

using Bindings = std::map<std::string, Tensor, std::less<>>;
using Gradients = std::map<std::string, Tensor, std::less<>>;

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;
};

struct TapeOptions {
  // Test hook: lets gradient flow through clip outside its band. Used as the
  // negative control of the gradient-check suite.
  bool corrupt_clip_gradient = false;
};

class Tape {
 public:
  explicit Tape(const Bindings* bindings = nullptr, TapeOptions options = {});
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable leaf bound by name. Repeated calls with one name share a node.
  Var leaf(std::string_view name);
  Var constant(Tensor value);
  Var scalar(double v) { return constant(Tensor::scalar(v)); }

  const Tensor& value(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  const TapeOptions& options() const noexcept { return options_; }

  // Gradient of a one-element root with respect to every leaf reachable from
  // it. Leaves that were bound but not reached are reported as zeros.
  Gradients backward(Var root);

 private:
  enum class Op : std::uint8_t {
    kLeaf, kConst, kAdd, kSub, kMul, kScale, kMatMul, kTranspose, kConcat,
    kTakeRows, kPick, kExp, kLog, kTanh, kRmsNorm, kLogSoftmax, kSum, kMean, kMin,
    kClip, kAddRow, kReshape,
  };

  struct Node {
    Op op = Op::kConst;
    std::int32_t a = -1;
    std::int32_t b = -1;
    bool needs_grad = false;
    double s0 = 0.0;
    double s1 = 0.0;
    int axis = 0;
    Tensor value;
    Tensor grad;
    std::vector<std::uint32_t> idx0;
    std::vector<std::uint32_t> idx1;
    std::string name;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  [[noreturn]] void domain_error(const char* op, const std::string& detail) const;
  static const char* op_name(Op op);

  const Bindings* bindings_;
  TapeOptions options_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::uint32_t> leaf_ids_;

  friend Var add(Var, Var);
  friend Var sub(Var, Var);
  friend Var mul(Var, Var);
  friend Var scale(Var, double);
  friend Var matmul(Var, Var);
  friend Var transpose(Var);
  friend Var concat(Var, Var, int);
  friend Var take_rows(Var, std::span<const std::uint32_t>);
  friend Var pick(Var, std::span<const std::uint32_t>, std::span<const std::uint32_t>);
  friend Var exp(Var);
  friend Var log(Var);
  friend Var tanh(Var);
  friend Var rms_norm(Var, double);
  friend Var log_softmax(Var);
  friend Var sum(Var);
  friend Var mean(Var);
  friend Var minimum(Var, Var);
  friend Var clip(Var, double, double);
  friend Var add_row(Var, Var);
  friend Var reshape(Var, std::size_t, std::size_t);
  friend Var detach(Var);
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var matmul(Var a, Var b);
Var transpose(Var a);
// axis 0 stacks rows, axis 1 stacks columns. Rank-1 inputs only take axis 0.
Var concat(Var a, Var b, int axis);
// Row selection (embedding lookup). On a rank-1 input selects elements.
Var take_rows(Var x, std::span<const std::uint32_t> rows);
// out[i] = x[rows[i], cols[i]].
Var pick(Var x, std::span<const std::uint32_t> rows, std::span<const std::uint32_t> cols);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
// Row-wise log-softmax, max-shifted. A rank-1 input is one distribution.
// Row-wise x / sqrt(mean(x^2) + eps), no learned gain.
Var rms_norm(Var a, double eps = 1e-6);
Var log_softmax(Var a);
Var sum(Var a);
Var mean(Var a);
// Elementwise min; ties route the gradient to the first argument.
Var minimum(Var a, Var b);
// Clamp to [lo, hi]; gradient passes inside the closed band, zero outside.
Var clip(Var a, double lo, double hi);
// x[r, c] + bias[c] for every row r.
Var add_row(Var x, Var bias);
// cols == 0 reshapes to a rank-1 tensor of `rows` values.
Var reshape(Var a, std::size_t rows, std::size_t cols);
Var detach(Var a);

using GraphFn = std::function<Var(Tape&)>;

// Builds the graph against the bindings and returns the root value.
Tensor evaluate(const GraphFn& graph, const Bindings& bindings, TapeOptions options = {});

// Root value and gradients in one pass.
struct ValueAndGradients {
  Tensor value;
  Gradients gradients;
};
ValueAndGradients value_and_gradients(const GraphFn& graph, const Bindings& bindings,
                                      TapeOptions options = {});

struct LeafCheck {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<LeafCheck> leaves;
  double max_relative_error = 0.0;
  bool pass = true;
  std::size_t parameters = 0;
  // Name of the worst leaf (empty when nothing was checked).
  std::string worst_leaf;
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps vanishing
// gradients from turning float64 round-off into spurious failures.
inline constexpr double kGradCheckFloor = 1e-3;

// Compares backward() against central differences of step `step` for every
// element of every binding.
GradCheckReport grad_check(const GraphFn& graph, const Bindings& bindings, double step,
                           double tolerance, TapeOptions options = {});

}  // namespace blockpg::ad
