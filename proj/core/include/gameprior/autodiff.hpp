#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Var is an immutable tensor value optionally linked to a Graph. Operations
// on Vars compute their value eagerly; when any input is tracked the result is
// appended to that input's Graph along with a reverse rule. A Graph lives for
// one forward pass and is discarded after backward().

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "gameprior/tensor.hpp"

namespace gameprior::ad {

enum class OpKind {
  leaf,
  add,
  sub,
  mul,
  div,
  matmul,
  transpose,
  scale,
  add_scalar,
  sum,
  sum_rows,
  sqrt,
  square,
  exp,
  abs_smooth,
  clamp_unit,
  soft_threshold,
  max0,
  gather,
  scatter_add,
  reduce_norm2,
  reshape,
};

std::string_view to_string(OpKind kind);

using GradId = std::size_t;
class Graph;

class Var {
 public:
  Var() = default;
  /// Untracked constant.
  explicit Var(Tensor value);

  const Tensor& value() const { return *value_; }
  const Shape& shape() const { return value_->shape(); }
  std::size_t size() const { return value_->size(); }
  bool defined() const noexcept { return value_ != nullptr; }

  Graph* graph() const noexcept { return graph_; }
  std::optional<GradId> grad_id() const {
    return graph_ ? std::optional<GradId>(id_) : std::nullopt;
  }

  std::shared_ptr<const Tensor> shared_value() const { return value_; }

 private:
  friend class Graph;
  std::shared_ptr<const Tensor> value_;
  Graph* graph_ = nullptr;
  GradId id_ = 0;
};

/// Reverse rule: given the adjoint of the node output, accumulate into the
/// adjoints of its inputs. grad_in[i] is empty when input i needs no gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor> grad_in)>;

class Gradients;

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Registers a differentiable input.
  Var leaf(Tensor value);

  /// Appends a node. Inputs that are untracked or belong to this graph are accepted.
  Var record(OpKind kind, std::shared_ptr<const Tensor> value, std::vector<Var> inputs, BackwardFn backward);

  /// Vector-Jacobian product of `output` seeded with `seed`.
  Gradients backward(const Var& output, const Tensor& seed) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(GradId id) const { return nodes_.at(id).kind; }

 private:
  struct Node {
    OpKind kind;
    Shape shape;
    std::vector<std::optional<GradId>> inputs;
    std::vector<Shape> input_shapes;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

class Gradients {
 public:
  /// Adjoint of a Var recorded on the differentiated graph (zeros if it does
  /// not influence the output). Throws for untracked or foreign Vars.
  Tensor of(const Var& v) const;

 private:
  friend class Graph;
  const Graph* graph_ = nullptr;
  std::vector<Shape> shapes_;
  std::vector<Tensor> adjoints_;
};

/// Graph shared by the inputs (null when all are constants). Throws when two
/// inputs come from different graphs.
Graph* common_graph(std::span<const Var> inputs, std::string_view op);

// Binary elementwise ops. `b` broadcasts onto `a` when it has one element,
// when its shape equals a's shape without the leading dimension, or when it is
// a column [rows,1] (or [rows]) of a rank-2 `a`.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);

Var sum(const Var& a);        // -> [1]
Var sum_rows(const Var& a);   // [m,c] -> [m,1]
Var sqrt(const Var& a);
Var square(const Var& a);
Var exp(const Var& a);

/// Moreau envelope of |.| with parameter alpha (Huber): alpha x^2/2 for
/// |x| <= 1/alpha, |x| - 1/(2 alpha) outside.
Var abs_smooth(const Var& a, double alpha);
/// clamp(x, -1, 1), i.e. the derivative of abs_smooth(., 1). Gradient 1 inside (-1, 1), 0 outside.
Var clamp_unit(const Var& a);
/// sign(x) max(|x| - t, 0), with t broadcast like the binary ops.
Var soft_threshold(const Var& a, const Var& t);
Var max0(const Var& a);

/// Rows of x[n,c] selected by `index` -> [k,c].
Var gather(const Var& x, std::shared_ptr<const std::vector<std::size_t>> index);
/// Adjoint of gather: rows of v[k,c] accumulated into an [n,c] zero tensor.
Var scatter_add(const Var& v, std::shared_ptr<const std::vector<std::size_t>> index, std::size_t rows);
/// Row-wise Euclidean norm [m,c] -> [m,1]; gradient taken as 0 at the origin.
Var reduce_norm2(const Var& a);
Var reshape(const Var& a, Shape shape);

inline Var constant(Tensor t) { return Var(std::move(t)); }

inline std::shared_ptr<const std::vector<std::size_t>> make_index(std::vector<std::size_t> idx) {
  return std::make_shared<const std::vector<std::size_t>>(std::move(idx));
}

}  // namespace gameprior::ad
