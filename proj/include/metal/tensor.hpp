/* Copyright 2026 The metal Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.

   Dense 64-bit tensors with reverse-mode automatic differentiation.

   Every op records a node on an implicit tape (creation-order ids give a
   topological order). Backward formulas are themselves expressed through
   the public ops, so running backward() with create_graph=true records the
   gradient computation too and the returned gradients stay differentiable
   to arbitrary order. With create_graph=false the same arithmetic runs
   with recording switched off, so first-order numbers are bit-identical
   either way.
*/
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace metal {

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dimension sizes; rank 0 (scalar), 1 (vector) and 2 (matrix) are used.
using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

class Tensor;

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

Tensor attach_node(Tensor t, NodePtr n);

/// Whether ops currently record nodes onto the active thread's tape.
inline bool& grad_mode() {
  thread_local bool on = true;
  return on;
}

struct GradModeGuard {
  bool prev;
  explicit GradModeGuard(bool on) : prev(grad_mode()) { grad_mode() = on; }
  ~GradModeGuard() { grad_mode() = prev; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;
};

inline std::uint64_t next_node_id() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

}  // namespace detail

/// A guard that suspends graph recording for its scope.
struct NoGradGuard : detail::GradModeGuard {
  NoGradGuard() : detail::GradModeGuard(false) {}
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<double> values, Shape shape) {
    if (numel(shape) != values.size())
      throw DimensionError("tensor: " + std::to_string(values.size()) +
                           " values do not fill shape " + shape_str(shape));
    data_ = std::make_shared<const Payload>(
        Payload{std::move(values), std::move(shape)});
  }

  static Tensor scalar(double v) { return Tensor({v}, Shape{}); }

  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }

  static Tensor full(Shape shape, double v) {
    std::size_t n = numel(shape);
    return Tensor(std::vector<double>(n, v), std::move(shape));
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  /// Leaf parameter: tracked by the tape so gradients can be taken w.r.t. it.
  static Tensor param(std::vector<double> values, Shape shape);

  /// Row-major matrix from nested lists (rank 2).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> v;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw DimensionError("matrix: ragged rows");
      v.insert(v.end(), r.begin(), r.end());
    }
    return Tensor(std::move(v), Shape{rows.size(), cols});
  }

  static Tensor vector(std::initializer_list<double> v) {
    return Tensor(std::vector<double>(v), Shape{v.size()});
  }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t size() const { return data_ ? data_->values.size() : 0; }
  std::size_t dim(std::size_t i) const { return data_->shape.at(i); }

  std::span<const double> values() const { return data_->values; }

  double item() const {
    if (size() != 1) throw ContractError("item: tensor is not a scalar");
    return data_->values[0];
  }

  double at(std::size_t r, std::size_t c) const {
    if (rank() != 2) throw ContractError("at(r,c): tensor is not rank 2");
    return data_->values[r * dim(1) + c];
  }

  bool finite() const {
    for (double v : data_->values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  const detail::NodePtr& node() const { return node_; }
  bool tracked() const { return node_ != nullptr; }

  /// Same values, severed from the graph.
  Tensor detach() const {
    Tensor t;
    t.data_ = data_;
    return t;
  }

 private:
  struct Payload {
    std::vector<double> values;
    Shape shape;
  };
  std::shared_ptr<const Payload> data_;
  detail::NodePtr node_;

  friend Tensor detail::attach_node(Tensor, detail::NodePtr);
};

namespace detail {

struct Node {
  std::uint64_t id = 0;
  const char* op = "";
  std::vector<Tensor> inputs;
  /// Upstream gradient -> one gradient per input (undefined Tensor where the
  /// input is untracked). Built from public ops so it can itself be recorded.
  std::function<std::vector<Tensor>(const Tensor&)> backward;
};

inline Tensor attach_node(Tensor t, NodePtr n) {
  t.node_ = std::move(n);
  return t;
}

inline Tensor make_op(const char* name, std::vector<Tensor> inputs,
                      std::vector<double> values, Shape shape,
                      std::function<std::vector<Tensor>(const Tensor&)> backward) {
  Tensor out(std::move(values), std::move(shape));
  if (!grad_mode()) return out;
  bool track = false;
  for (const auto& t : inputs)
    if (t.tracked()) {
      track = true;
      break;
    }
  if (!track) return out;
  auto node = std::make_shared<Node>();
  node->id = next_node_id();
  node->op = name;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  return attach_node(std::move(out), std::move(node));
}

}  // namespace detail

inline Tensor Tensor::param(std::vector<double> values, Shape shape) {
  Tensor t(std::move(values), std::move(shape));
  auto node = std::make_shared<detail::Node>();
  node->id = detail::next_node_id();
  node->op = "leaf";
  return detail::attach_node(std::move(t), std::move(node));
}

// ---------------------------------------------------------------------------
// Shape utilities and broadcast resolution.
//
// Binary ops accept: identical shapes, a one-element (scalar) operand, or a
// row vector [1xN] against a matrix [BxN]. Any other mixing is an error;
// wider broadcasts go through the explicit broadcast_to op.
// ---------------------------------------------------------------------------

namespace detail {

enum class Bcast { same, a_scalar, b_scalar, a_row, b_row };

inline bool is_row_of(const Shape& row, const Shape& mat) {
  return row.size() == 2 && mat.size() == 2 && row[0] == 1 &&
         row[1] == mat[1] && mat[0] > 1;
}

inline Bcast resolve_bcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::same;
  if (a.size() == 1) return Bcast::a_scalar;
  if (b.size() == 1) return Bcast::b_scalar;
  if (is_row_of(a.shape(), b.shape())) return Bcast::a_row;
  if (is_row_of(b.shape(), a.shape())) return Bcast::b_row;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()) + " do not combine");
}

template <class F>
inline std::vector<double> bcast_apply(const Tensor& a, const Tensor& b,
                                       Bcast how, F f) {
  std::span<const double> av = a.values(), bv = b.values();
  std::size_t n = std::max(av.size(), bv.size());
  std::vector<double> out(n);
  switch (how) {
    case Bcast::same:
      for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
      break;
    case Bcast::a_scalar:
      for (std::size_t i = 0; i < n; ++i) out[i] = f(av[0], bv[i]);
      break;
    case Bcast::b_scalar:
      for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[0]);
      break;
    case Bcast::a_row: {
      std::size_t cols = a.shape()[1];
      for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i % cols], bv[i]);
      break;
    }
    case Bcast::b_row: {
      std::size_t cols = b.shape()[1];
      for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i % cols]);
      break;
    }
  }
  return out;
}

inline const Shape& bcast_shape(const Tensor& a, const Tensor& b, Bcast how) {
  switch (how) {
    case Bcast::a_scalar:
    case Bcast::a_row:
      return b.shape();
    default:
      return a.shape();
  }
}

}  // namespace detail

// Forward declarations used inside backward lambdas.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor sum(const Tensor& t);
Tensor sum(const Tensor& t, std::size_t axis);
Tensor reshape(const Tensor& t, Shape shape);
Tensor broadcast_to(const Tensor& t, const Shape& shape);
Tensor transpose(const Tensor& t);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor recip(const Tensor& t);
Tensor slice(const Tensor& t, std::size_t axis, std::size_t start, std::size_t len);

namespace detail {

/// Reduce g (shaped like the broadcast result) back to `target` for the
/// gradient of a broadcast operand.
inline Tensor reduce_like(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  if (numel(target) == 1) return reshape(sum(g), target);
  if (target.size() == 2 && target[0] == 1) return sum(g, 0);
  if (target.size() == 2 && target[1] == 1) return sum(g, 1);
  throw DimensionError("reduce_like: cannot reduce " + shape_str(g.shape()) +
                       " to " + shape_str(target));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive ops.
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& t, Shape shape) {
  if (numel(shape) != t.size())
    throw DimensionError("reshape: " + shape_str(t.shape()) + " to " +
                         shape_str(shape) + " changes element count");
  Shape from = t.shape();
  return detail::make_op(
      "reshape", {t}, std::vector<double>(t.values().begin(), t.values().end()),
      std::move(shape), [t, from](const Tensor& g) -> std::vector<Tensor> {
        return {reshape(g, from)};
      });
}

inline Tensor broadcast_to(const Tensor& t, const Shape& shape) {
  if (t.shape() == shape) return t;
  std::vector<double> out(numel(shape));
  std::span<const double> v = t.values();
  bool ok = false;
  if (t.size() == 1) {
    std::fill(out.begin(), out.end(), v[0]);
    ok = true;
  } else if (t.rank() == 2 && shape.size() == 2 && t.dim(0) == 1 &&
             t.dim(1) == shape[1]) {
    for (std::size_t r = 0; r < shape[0]; ++r)
      std::copy(v.begin(), v.end(), out.begin() + r * shape[1]);
    ok = true;
  } else if (t.rank() == 2 && shape.size() == 2 && t.dim(1) == 1 &&
             t.dim(0) == shape[0]) {
    for (std::size_t r = 0; r < shape[0]; ++r)
      std::fill(out.begin() + r * shape[1], out.begin() + (r + 1) * shape[1], v[r]);
    ok = true;
  }
  if (!ok)
    throw DimensionError("broadcast_to: " + shape_str(t.shape()) + " to " +
                         shape_str(shape));
  Shape target = t.shape();
  return detail::make_op("broadcast", {t}, std::move(out), shape,
                         [t, target](const Tensor& g) -> std::vector<Tensor> {
                           return {detail::reduce_like(g, target)};
                         });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  auto how = detail::resolve_bcast(a, b, "add");
  auto vals = detail::bcast_apply(a, b, how, [](double x, double y) { return x + y; });
  return detail::make_op(
      "add", {a, b}, std::move(vals), detail::bcast_shape(a, b, how),
      [a, b](const Tensor& g) -> std::vector<Tensor> {
        std::vector<Tensor> gs(2);
        if (a.tracked()) gs[0] = detail::reduce_like(g, a.shape());
        if (b.tracked()) gs[1] = detail::reduce_like(g, b.shape());
        return gs;
      });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> vals(a.values().begin(), a.values().end());
  for (double& v : vals) v *= c;
  return detail::make_op("scale", {a}, std::move(vals), a.shape(),
                         [c](const Tensor& g) -> std::vector<Tensor> {
                           return {scale(g, c)};
                         });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor sub(const Tensor& a, const Tensor& b) {
  auto how = detail::resolve_bcast(a, b, "sub");
  auto vals = detail::bcast_apply(a, b, how, [](double x, double y) { return x - y; });
  return detail::make_op(
      "sub", {a, b}, std::move(vals), detail::bcast_shape(a, b, how),
      [a, b](const Tensor& g) -> std::vector<Tensor> {
        std::vector<Tensor> gs(2);
        if (a.tracked()) gs[0] = detail::reduce_like(g, a.shape());
        if (b.tracked()) gs[1] = neg(detail::reduce_like(g, b.shape()));
        return gs;
      });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  auto how = detail::resolve_bcast(a, b, "mul");
  auto vals = detail::bcast_apply(a, b, how, [](double x, double y) { return x * y; });
  return detail::make_op(
      "mul", {a, b}, std::move(vals), detail::bcast_shape(a, b, how),
      [a, b](const Tensor& g) -> std::vector<Tensor> {
        std::vector<Tensor> gs(2);
        if (a.tracked()) gs[0] = detail::reduce_like(mul(g, b), a.shape());
        if (b.tracked()) gs[1] = detail::reduce_like(mul(g, a), b.shape());
        return gs;
      });
}

inline Tensor transpose(const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("transpose: rank 2 required");
  std::size_t r = t.dim(0), c = t.dim(1);
  std::vector<double> out(r * c);
  std::span<const double> v = t.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  return detail::make_op("transpose", {t}, std::move(out), Shape{c, r},
                         [](const Tensor& g) -> std::vector<Tensor> {
                           return {transpose(g)};
                         });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul: rank 2 required");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner dimensions " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + " do not match");
  std::size_t r = a.dim(0), k = a.dim(1), c = b.dim(1);
  std::vector<double> out(r * c, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < r; ++i) {
    double* orow = out.data() + i * c;
    for (std::size_t kk = 0; kk < k; ++kk) {
      double aik = av[i * k + kk];
      const double* brow = bv + kk * c;
      for (std::size_t j = 0; j < c; ++j) orow[j] += aik * brow[j];
    }
  }
  return detail::make_op(
      "matmul", {a, b}, std::move(out), Shape{r, c},
      [a, b](const Tensor& g) -> std::vector<Tensor> {
        std::vector<Tensor> gs(2);
        if (a.tracked()) gs[0] = matmul(g, transpose(b));
        if (b.tracked()) gs[1] = matmul(transpose(a), g);
        return gs;
      });
}

namespace detail {

template <class F>
inline Tensor unary_with_mask(const char* name, const Tensor& t, F f,
                              std::vector<double> mask) {
  std::vector<double> vals(t.values().begin(), t.values().end());
  for (double& v : vals) v = f(v);
  Tensor m(std::move(mask), t.shape());  // constant; derivative of the mask is 0 a.e.
  return make_op(name, {t}, std::move(vals), t.shape(),
                 [m](const Tensor& g) -> std::vector<Tensor> {
                   return {mul(g, m)};
                 });
}

}  // namespace detail

inline Tensor relu(const Tensor& t) {
  std::vector<double> mask(t.size());
  std::span<const double> v = t.values();
  for (std::size_t i = 0; i < v.size(); ++i) mask[i] = v[i] > 0.0 ? 1.0 : 0.0;
  return detail::unary_with_mask("relu", t,
                                 [](double x) { return x > 0.0 ? x : 0.0; },
                                 std::move(mask));
}

inline Tensor leaky_relu(const Tensor& t, double slope = 0.01) {
  std::vector<double> mask(t.size());
  std::span<const double> v = t.values();
  for (std::size_t i = 0; i < v.size(); ++i) mask[i] = v[i] > 0.0 ? 1.0 : slope;
  return detail::unary_with_mask(
      "leaky_relu", t,
      [slope](double x) { return x > 0.0 ? x : slope * x; }, std::move(mask));
}

inline Tensor exp(const Tensor& t) {
  std::vector<double> vals(t.values().begin(), t.values().end());
  for (double& v : vals) v = std::exp(v);
  return detail::make_op("exp", {t}, std::move(vals), t.shape(),
                         [t](const Tensor& g) -> std::vector<Tensor> {
                           return {mul(g, exp(t))};
                         });
}

inline Tensor log(const Tensor& t) {
  std::vector<double> vals(t.values().begin(), t.values().end());
  for (double& v : vals) {
    if (v <= 0.0) throw DomainError("log: non-positive input");
    v = std::log(v);
  }
  return detail::make_op("log", {t}, std::move(vals), t.shape(),
                         [t](const Tensor& g) -> std::vector<Tensor> {
                           return {mul(g, recip(t))};
                         });
}

inline Tensor recip(const Tensor& t) {
  std::vector<double> vals(t.values().begin(), t.values().end());
  for (double& v : vals) {
    if (v == 0.0) throw DomainError("recip: zero input");
    v = 1.0 / v;
  }
  return detail::make_op(
      "recip", {t}, std::move(vals), t.shape(),
      [t](const Tensor& g) -> std::vector<Tensor> {
        return {neg(mul(g, mul(recip(t), recip(t))))};
      });
}

inline Tensor square(const Tensor& t) {
  std::vector<double> vals(t.values().begin(), t.values().end());
  for (double& v : vals) v = v * v;
  return detail::make_op("square", {t}, std::move(vals), t.shape(),
                         [t](const Tensor& g) -> std::vector<Tensor> {
                           return {mul(g, scale(t, 2.0))};
                         });
}

namespace detail {

/// 1/x for x > 0, 0 at x == 0 (partner of xlogx at the 0 boundary).
inline Tensor safe_recip(const Tensor& t) {
  std::vector<double> vals(t.values().begin(), t.values().end());
  for (double& v : vals) v = v > 0.0 ? 1.0 / v : 0.0;
  return make_op("safe_recip", {t}, std::move(vals), t.shape(),
                 [t](const Tensor& g) -> std::vector<Tensor> {
                   return {neg(mul(g, mul(safe_recip(t), safe_recip(t))))};
                 });
}

/// d/dp (p log p) = log p + 1 for p > 0, pinned to 0 at p == 0.
inline Tensor dxlogx(const Tensor& t) {
  std::vector<double> vals(t.values().begin(), t.values().end());
  for (double& v : vals) v = v > 0.0 ? std::log(v) + 1.0 : 0.0;
  return make_op("dxlogx", {t}, std::move(vals), t.shape(),
                 [t](const Tensor& g) -> std::vector<Tensor> {
                   return {mul(g, safe_recip(t))};
                 });
}

}  // namespace detail

/// p log p with 0 log 0 := 0. Domain: p >= 0.
inline Tensor xlogx(const Tensor& t) {
  std::vector<double> vals(t.values().begin(), t.values().end());
  for (double& v : vals) {
    if (v < 0.0) throw DomainError("xlogx: negative input");
    v = v > 0.0 ? v * std::log(v) : 0.0;
  }
  return detail::make_op("xlogx", {t}, std::move(vals), t.shape(),
                         [t](const Tensor& g) -> std::vector<Tensor> {
                           return {mul(g, detail::dxlogx(t))};
                         });
}

inline Tensor sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  Shape from = t.shape();
  return detail::make_op("sum", {t}, {s}, Shape{},
                         [from](const Tensor& g) -> std::vector<Tensor> {
                           return {broadcast_to(g, from)};
                         });
}

inline Tensor mean(const Tensor& t) {
  if (t.size() == 0) throw ContractError("mean: empty tensor");
  double s = 0.0;
  for (double v : t.values()) s += v;
  double inv = 1.0 / static_cast<double>(t.size());
  Shape from = t.shape();
  return detail::make_op("mean", {t}, {s * inv}, Shape{},
                         [from, inv](const Tensor& g) -> std::vector<Tensor> {
                           return {scale(broadcast_to(g, from), inv)};
                         });
}

/// Axis reduction over a rank-2 tensor; the reduced axis keeps size 1.
inline Tensor sum(const Tensor& t, std::size_t axis) {
  if (t.rank() != 2) throw DimensionError("sum(axis): rank 2 required");
  if (axis > 1) throw DimensionError("sum: axis out of range");
  std::size_t r = t.dim(0), c = t.dim(1);
  std::span<const double> v = t.values();
  Shape out_shape = axis == 0 ? Shape{1, c} : Shape{r, 1};
  std::vector<double> out(numel(out_shape), 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out[axis == 0 ? j : i] += v[i * c + j];
  Shape from = t.shape();
  return detail::make_op("sum_axis", {t}, std::move(out), out_shape,
                         [from](const Tensor& g) -> std::vector<Tensor> {
                           return {broadcast_to(g, from)};
                         });
}

inline Tensor mean(const Tensor& t, std::size_t axis) {
  if (t.rank() != 2) throw DimensionError("mean(axis): rank 2 required");
  if (axis > 1) throw DimensionError("mean: axis out of range");
  double inv = 1.0 / static_cast<double>(axis == 0 ? t.dim(0) : t.dim(1));
  return scale(sum(t, axis), inv);
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no parts");
  if (axis > 1) throw DimensionError("concat: axis out of range");
  for (const auto& p : parts)
    if (p.rank() != 2) throw DimensionError("concat: rank 2 required");
  std::size_t other = axis == 0 ? 1 : 0;
  std::size_t fixed = parts[0].dim(other);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim(other) != fixed)
      throw DimensionError("concat: mismatched non-concat dimension (" +
                           shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()) + ")");
    total += p.dim(axis);
  }
  Shape out_shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::span<const double> v = p.values();
    if (axis == 0) {
      std::copy(v.begin(), v.end(), out.begin() + offset * fixed);
    } else {
      for (std::size_t i = 0; i < fixed; ++i)
        std::copy(v.begin() + i * p.dim(1), v.begin() + (i + 1) * p.dim(1),
                  out.begin() + i * total + offset);
    }
    offset += p.dim(axis);
  }
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis));
  return detail::make_op(
      "concat", parts, std::move(out), out_shape,
      [widths, axis](const Tensor& g) -> std::vector<Tensor> {
        std::vector<Tensor> gs(widths.size());
        std::size_t off = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
          gs[i] = slice(g, axis, off, widths[i]);
          off += widths[i];
        }
        return gs;
      });
}

namespace detail {
Tensor embed(const Tensor& t, std::size_t axis, std::size_t start,
             const Shape& into);
}

inline Tensor slice(const Tensor& t, std::size_t axis, std::size_t start,
                    std::size_t len) {
  if (t.rank() != 2) throw DimensionError("slice: rank 2 required");
  if (axis > 1) throw DimensionError("slice: axis out of range");
  if (start + len > t.dim(axis)) throw DimensionError("slice: out of range");
  std::size_t r = t.dim(0), c = t.dim(1);
  Shape out_shape = axis == 0 ? Shape{len, c} : Shape{r, len};
  std::vector<double> out(numel(out_shape));
  std::span<const double> v = t.values();
  if (axis == 0) {
    std::copy(v.begin() + start * c, v.begin() + (start + len) * c, out.begin());
  } else {
    for (std::size_t i = 0; i < r; ++i)
      std::copy(v.begin() + i * c + start, v.begin() + i * c + start + len,
                out.begin() + i * len);
  }
  Shape from = t.shape();
  return detail::make_op(
      "slice", {t}, std::move(out), out_shape,
      [axis, start, from](const Tensor& g) -> std::vector<Tensor> {
        return {detail::embed(g, axis, start, from)};
      });
}

namespace detail {

/// Place t into a zero tensor of shape `into` at `start` along `axis`
/// (adjoint of slice).
inline Tensor embed(const Tensor& t, std::size_t axis, std::size_t start,
                    const Shape& into) {
  std::vector<double> out(numel(into), 0.0);
  std::span<const double> v = t.values();
  std::size_t c = into[1];
  if (axis == 0) {
    std::copy(v.begin(), v.end(), out.begin() + start * c);
  } else {
    std::size_t len = t.dim(1);
    for (std::size_t i = 0; i < t.dim(0); ++i)
      std::copy(v.begin() + i * len, v.begin() + (i + 1) * len,
                out.begin() + i * c + start);
  }
  std::size_t len = t.dim(axis);
  return make_op("embed", {t}, std::move(out), into,
                 [axis, start, len](const Tensor& g) -> std::vector<Tensor> {
                   return {slice(g, axis, start, len)};
                 });
}

Tensor scatter_cols(const Tensor& t, const std::vector<int>& labels,
                    std::size_t cols);

}  // namespace detail

/// Per-row selection of one column: out[i,0] = t[i, labels[i]].
inline Tensor gather_cols(const Tensor& t, const std::vector<int>& labels) {
  if (t.rank() != 2) throw DimensionError("gather_cols: rank 2 required");
  if (labels.size() != t.dim(0))
    throw DimensionError("gather_cols: one label per row required");
  std::size_t c = t.dim(1);
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= c)
      throw DomainError("gather_cols: label out of range");
  std::vector<double> out(t.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = t.values()[i * c + static_cast<std::size_t>(labels[i])];
  return detail::make_op(
      "gather_cols", {t}, std::move(out), Shape{t.dim(0), 1},
      [labels, c](const Tensor& g) -> std::vector<Tensor> {
        return {detail::scatter_cols(g, labels, c)};
      });
}

namespace detail {

inline Tensor scatter_cols(const Tensor& t, const std::vector<int>& labels,
                           std::size_t cols) {
  std::size_t rows = t.dim(0);
  std::vector<double> out(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    out[i * cols + static_cast<std::size_t>(labels[i])] = t.values()[i];
  return make_op("scatter_cols", {t}, std::move(out), Shape{rows, cols},
                 [labels](const Tensor& g) -> std::vector<Tensor> {
                   return {gather_cols(g, labels)};
                 });
}

/// Detached per-row maximum, used as the stabilizing shift in softmax-family
/// ops (exact by shift invariance).
inline Tensor row_max_constant(const Tensor& t) {
  std::size_t r = t.dim(0), c = t.dim(1);
  std::vector<double> out(r, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out[i] = std::max(out[i], t.values()[i * c + j]);
  return Tensor(std::move(out), Shape{r, 1});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operator sugar.
// ---------------------------------------------------------------------------

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Losses and probability ops.
// ---------------------------------------------------------------------------

/// Row-wise softmax, stabilized by subtracting the detached row max.
inline Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax_rows: rank 2 required");
  Tensor shift = detail::row_max_constant(logits);
  Tensor e = exp(sub(logits, broadcast_to(shift, logits.shape())));
  Tensor s = sum(e, 1);
  return mul(e, broadcast_to(recip(s), logits.shape()));
}

/// Mean over all entries of the squared error.
inline Tensor loss_mse(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw DimensionError("loss_mse: shapes " + shape_str(pred.shape()) +
                         " vs " + shape_str(target.shape()));
  return mean(square(sub(pred, target)));
}

/// Row means of the squared error, shape [Bx1].
inline Tensor loss_mse_per_example(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw DimensionError("loss_mse_per_example: shapes " +
                         shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  if (pred.rank() != 2)
    throw DimensionError("loss_mse_per_example: rank 2 required");
  return mean(square(sub(pred, target)), 1);
}

/// Per-example negative log softmax probability of the true class, [Bx1].
inline Tensor loss_softmax_ce_per_example(const Tensor& logits,
                                          const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw DimensionError("loss_softmax_ce: rank 2 required");
  if (labels.size() != logits.dim(0))
    throw DimensionError("loss_softmax_ce: one label per row required");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= logits.dim(1))
      throw DomainError("loss_softmax_ce: label out of range");
  Tensor shift = detail::row_max_constant(logits);
  Tensor shifted = sub(logits, broadcast_to(shift, logits.shape()));
  Tensor lse = add(log(sum(exp(shifted), 1)), shift);
  return sub(lse, gather_cols(logits, labels));
}

inline Tensor loss_softmax_ce(const Tensor& logits,
                              const std::vector<int>& labels) {
  return mean(loss_softmax_ce_per_example(logits, labels));
}

/// Per-row entropy -sum p log p with 0 log 0 := 0, shape [Bx1].
/// Rows must be nonnegative and sum to 1 within 1e-6.
inline Tensor entropy_rows(const Tensor& probs) {
  if (probs.rank() != 2) throw DimensionError("entropy_rows: rank 2 required");
  std::size_t r = probs.dim(0), c = probs.dim(1);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double p = probs.values()[i * c + j];
      if (p < 0.0) throw DomainError("entropy_rows: negative probability");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-6)
      throw DomainError("entropy_rows: row does not sum to 1");
  }
  return neg(sum(xlogx(probs), 1));
}

// ---------------------------------------------------------------------------
// Backward pass.
// ---------------------------------------------------------------------------

/// Gradients keyed by parameter identity (the tensor's graph node).
class GradMap {
 public:
  bool contains(const Tensor& t) const {
    return t.tracked() && grads_.count(t.node().get()) > 0;
  }

  /// Gradient for t; zeros if t did not participate in the graph.
  Tensor at(const Tensor& t) const {
    if (t.tracked()) {
      auto it = grads_.find(t.node().get());
      if (it != grads_.end()) return it->second;
    }
    return Tensor::zeros(t.shape());
  }

  std::size_t size() const { return grads_.size(); }

 private:
  friend GradMap backward(const Tensor&, std::span<const Tensor>, bool);
  std::unordered_map<const detail::Node*, Tensor> grads_;
};

/// Reverse-mode gradients of a one-element tensor w.r.t. `wrt`.
///
/// With create_graph=true the gradient computation is recorded, so returned
/// gradients can be differentiated again; numbers are identical either way.
inline GradMap backward(const Tensor& scalar, std::span<const Tensor> wrt,
                        bool create_graph) {
  if (scalar.size() != 1)
    throw ContractError("backward: output must have exactly one element");
  GradMap result;
  if (!scalar.tracked()) return result;

  // Reachable subgraph, then reverse creation order = reverse topological.
  std::vector<detail::Node*> order;
  {
    std::unordered_map<const detail::Node*, bool> seen;
    std::vector<detail::Node*> stack{scalar.node().get()};
    seen[scalar.node().get()] = true;
    while (!stack.empty()) {
      detail::Node* n = stack.back();
      stack.pop_back();
      order.push_back(n);
      for (const Tensor& in : n->inputs) {
        if (!in.tracked()) continue;
        detail::Node* m = in.node().get();
        if (!seen[m]) {
          seen[m] = true;
          stack.push_back(m);
        }
      }
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });

  detail::GradModeGuard guard(create_graph);
  auto& grads = result.grads_;
  grads[scalar.node().get()] = Tensor::ones(scalar.shape());
  for (detail::Node* n : order) {
    auto it = grads.find(n);
    if (it == grads.end() || !n->backward) continue;
    std::vector<Tensor> gs = n->backward(it->second);
    if (gs.size() != n->inputs.size())
      throw ContractError(std::string("backward(") + n->op +
                          "): gradient count mismatch");
    for (std::size_t i = 0; i < gs.size(); ++i) {
      const Tensor& in = n->inputs[i];
      if (!in.tracked() || !gs[i].defined()) continue;
      if (gs[i].shape() != in.shape())
        throw ContractError(std::string("backward(") + n->op +
                            "): gradient shape mismatch");
      auto slot = grads.find(in.node().get());
      if (slot == grads.end())
        grads.emplace(in.node().get(), gs[i]);
      else
        slot->second = add(slot->second, gs[i]);
    }
  }

  // Materialize zeros for requested tensors outside the graph.
  for (const Tensor& t : wrt) {
    if (!t.tracked()) continue;
    if (grads.find(t.node().get()) == grads.end())
      grads.emplace(t.node().get(), Tensor::zeros(t.shape()));
  }
  return result;
}

inline GradMap backward(const Tensor& scalar, std::initializer_list<Tensor> wrt,
                        bool create_graph) {
  std::vector<Tensor> w(wrt);
  return backward(scalar, std::span<const Tensor>(w), create_graph);
}

}  // namespace metal
