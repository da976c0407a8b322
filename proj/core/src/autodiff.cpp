#include "gameprior/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace gameprior::ad {

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::sum: return "sum";
    case OpKind::sum_rows: return "sum_rows";
    case OpKind::sqrt: return "sqrt";
    case OpKind::square: return "square";
    case OpKind::exp: return "exp";
    case OpKind::abs_smooth: return "abs_smooth";
    case OpKind::clamp_unit: return "clamp_unit";
    case OpKind::soft_threshold: return "soft_threshold";
    case OpKind::max0: return "max0";
    case OpKind::gather: return "gather";
    case OpKind::scatter_add: return "scatter_add";
    case OpKind::reduce_norm2: return "reduce_norm2";
    case OpKind::reshape: return "reshape";
  }
  return "unknown";
}

Var::Var(Tensor value) : value_(std::make_shared<const Tensor>(std::move(value))) {}

Var Graph::leaf(Tensor value) {
  Var v;
  v.value_ = std::make_shared<const Tensor>(std::move(value));
  v.graph_ = this;
  v.id_ = nodes_.size();
  nodes_.push_back(Node{OpKind::leaf, v.shape(), {}, {}, {}});
  return v;
}

Var Graph::record(OpKind kind, std::shared_ptr<const Tensor> value, std::vector<Var> inputs, BackwardFn backward) {
  Node node{kind, value->shape(), {}, {}, std::move(backward)};
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.graph_ && in.graph_ != this) {
      throw std::logic_error(std::string(to_string(kind)) + ": input recorded on a different graph");
    }
    node.inputs.push_back(in.grad_id());
    node.input_shapes.push_back(in.shape());
  }
  Var v;
  v.value_ = std::move(value);
  v.graph_ = this;
  v.id_ = nodes_.size();
  nodes_.push_back(std::move(node));
  return v;
}

Gradients Graph::backward(const Var& output, const Tensor& seed) const {
  if (output.graph() != this) throw std::invalid_argument("backward: output was not recorded on this graph");
  if (seed.shape() != output.shape()) {
    throw std::invalid_argument("backward: seed shape " + shape_string(seed.shape()) + " does not match output " +
                                shape_string(output.shape()));
  }
  const GradId out = *output.grad_id();
  Gradients result;
  result.graph_ = this;
  result.adjoints_.resize(out + 1);
  result.shapes_.reserve(out + 1);
  for (GradId i = 0; i <= out; ++i) result.shapes_.push_back(nodes_[i].shape);
  result.adjoints_[out] = seed;

  std::vector<Tensor> grad_in;
  for (GradId id = out + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (node.kind == OpKind::leaf || result.adjoints_[id].empty()) continue;
    grad_in.assign(node.inputs.size(), Tensor());
    bool any = false;
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      if (node.inputs[i]) {
        grad_in[i] = Tensor(node.input_shapes[i], 0.0);
        any = true;
      }
    }
    if (!any) continue;
    node.backward(result.adjoints_[id], grad_in);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      if (!node.inputs[i]) continue;
      Tensor& dst = result.adjoints_[*node.inputs[i]];
      if (dst.empty()) {
        dst = std::move(grad_in[i]);
      } else {
        auto d = dst.values();
        auto s = grad_in[i].values();
        for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
      }
    }
    // Intermediate adjoints are no longer needed once propagated.
    if (id != out) result.adjoints_[id] = Tensor();
  }
  return result;
}

Tensor Gradients::of(const Var& v) const {
  if (!v.graph() || v.graph() != graph_) {
    throw std::invalid_argument("gradient requested for a tensor that was never recorded on this graph");
  }
  const GradId id = *v.grad_id();
  if (id >= adjoints_.size()) {
    throw std::invalid_argument("gradient requested for a tensor recorded after the differentiated output");
  }
  if (adjoints_[id].empty()) return Tensor(shapes_[id], 0.0);
  return adjoints_[id];
}

Graph* common_graph(std::span<const Var> inputs, std::string_view op) {
  Graph* g = nullptr;
  for (const auto& in : inputs) {
    if (!in.defined()) throw std::invalid_argument(std::string(op) + ": undefined input");
    if (!in.graph()) continue;
    if (g && g != in.graph()) throw std::logic_error(std::string(op) + ": inputs recorded on different graphs");
    g = in.graph();
  }
  return g;
}

namespace {

enum class Bcast { same, scalar, trailing, column };

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                              shape_string(b));
}

Bcast classify(std::string_view op, const Shape& a, const Shape& b) {
  if (a == b) return Bcast::same;
  if (shape_size(b) == 1) return Bcast::scalar;
  if (a.size() >= 2 && Shape(a.begin() + 1, a.end()) == b) return Bcast::trailing;
  if (a.size() == 2 && ((b.size() == 2 && b[0] == a[0] && b[1] == 1) || (b.size() == 1 && b[0] == a[0]))) {
    return Bcast::column;
  }
  shape_error(op, a, b);
}

struct BIndex {
  Bcast mode;
  std::size_t bsize;
  std::size_t cols;
  std::size_t operator()(std::size_t i) const {
    switch (mode) {
      case Bcast::same: return i;
      case Bcast::scalar: return 0;
      case Bcast::trailing: return i % bsize;
      case Bcast::column: return i / cols;
    }
    return i;
  }
};

template <class F, class Da, class Db>
Var binary(OpKind kind, const Var& a, const Var& b, F f, Da da, Db db) {
  const Var ins[] = {a, b};
  Graph* g = common_graph(ins, to_string(kind));
  const Shape& as = a.shape();
  const BIndex bi{classify(to_string(kind), as, b.shape()), b.size(), as.size() == 2 ? as[1] : 1};
  auto out = std::make_shared<Tensor>(as);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < av.size(); ++i) (*out)[i] = f(av[i], bv[bi(i)]);
  if (!g) return Var(std::move(*out));
  auto ap = a.shared_value();
  auto bp = b.shared_value();
  return g->record(kind, out, {a, b}, [ap, bp, bi, da, db](const Tensor& go, std::span<Tensor> gi) {
    const Tensor& x = *ap;
    const Tensor& y = *bp;
    if (!gi[0].empty()) {
      for (std::size_t i = 0; i < x.size(); ++i) gi[0][i] += go[i] * da(x[i], y[bi(i)]);
    }
    if (!gi[1].empty()) {
      for (std::size_t i = 0; i < x.size(); ++i) gi[1][bi(i)] += go[i] * db(x[i], y[bi(i)]);
    }
  });
}

template <class F, class D>
Var unary(OpKind kind, const Var& a, F f, D d) {
  auto out = std::make_shared<Tensor>(a.shape());
  const Tensor& av = a.value();
  for (std::size_t i = 0; i < av.size(); ++i) (*out)[i] = f(av[i]);
  if (!a.graph()) return Var(std::move(*out));
  auto ap = a.shared_value();
  std::shared_ptr<const Tensor> op = out;
  return a.graph()->record(kind, out, {a}, [ap, op, d](const Tensor& go, std::span<Tensor> gi) {
    for (std::size_t i = 0; i < go.size(); ++i) gi[0][i] += go[i] * d((*ap)[i], (*op)[i]);
  });
}

void require_rank2(std::string_view op, const Var& a) {
  if (a.shape().size() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected a matrix, got shape " + shape_string(a.shape()));
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      OpKind::add, a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      OpKind::sub, a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      OpKind::mul, a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  return binary(
      OpKind::div, a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var soft_threshold(const Var& a, const Var& t) {
  return binary(
      OpKind::soft_threshold, a, t,
      [](double x, double s) { return x > s ? x - s : (x < -s ? x + s : 0.0); },
      [](double x, double s) { return std::abs(x) > s ? 1.0 : 0.0; },
      [](double x, double s) { return x > s ? -1.0 : (x < -s ? 1.0 : 0.0); });
}

Var matmul(const Var& a, const Var& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) shape_error("matmul", a.shape(), b.shape());
  const Var ins[] = {a, b};
  Graph* g = common_graph(ins, "matmul");
  auto out = std::make_shared<Tensor>(Shape{m, n});
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = &(*out)[i * n];
    for (std::size_t l = 0; l < k; ++l) {
      const double s = A[i * k + l];
      if (s == 0.0) continue;
      const double* brow = &B[l * n];
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  if (!g) return Var(std::move(*out));
  auto ap = a.shared_value();
  auto bp = b.shared_value();
  return g->record(OpKind::matmul, out, {a, b}, [ap, bp, m, k, n](const Tensor& go, std::span<Tensor> gi) {
    const Tensor& A = *ap;
    const Tensor& B = *bp;
    if (!gi[0].empty()) {  // dA = dC B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += go[i * n + j] * B[l * n + j];
          gi[0][i * k + l] += s;
        }
    }
    if (!gi[1].empty()) {  // dB = A^T dC
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
          const double s = A[i * k + l];
          if (s == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gi[1][l * n + j] += s * go[i * n + j];
        }
    }
  });
}

Var transpose(const Var& a) {
  require_rank2("transpose", a);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  auto out = std::make_shared<Tensor>(Shape{c, r});
  const Tensor& A = a.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) (*out)[j * r + i] = A[i * c + j];
  if (!a.graph()) return Var(std::move(*out));
  return a.graph()->record(OpKind::transpose, out, {a}, [r, c](const Tensor& go, std::span<Tensor> gi) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gi[0][i * c + j] += go[j * r + i];
  });
}

Var scale(const Var& a, double s) {
  return unary(
      OpKind::scale, a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(
      OpKind::add_scalar, a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  auto out = std::make_shared<Tensor>(Tensor::scalar(s));
  if (!a.graph()) return Var(std::move(*out));
  return a.graph()->record(OpKind::sum, out, {a}, [](const Tensor& go, std::span<Tensor> gi) {
    for (double& x : gi[0].values()) x += go[0];
  });
}

Var sum_rows(const Var& a) {
  require_rank2("sum_rows", a);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  auto out = std::make_shared<Tensor>(Shape{r, 1});
  const Tensor& A = a.value();
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += A[i * c + j];
    (*out)[i] = s;
  }
  if (!a.graph()) return Var(std::move(*out));
  return a.graph()->record(OpKind::sum_rows, out, {a}, [r, c](const Tensor& go, std::span<Tensor> gi) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gi[0][i * c + j] += go[i];
  });
}

Var sqrt(const Var& a) {
  return unary(
      OpKind::sqrt, a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var square(const Var& a) {
  return unary(
      OpKind::square, a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var exp(const Var& a) {
  return unary(
      OpKind::exp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var abs_smooth(const Var& a, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("abs_smooth: alpha must be positive");
  const double knee = 1.0 / alpha;
  return unary(
      OpKind::abs_smooth, a,
      [alpha, knee](double x) {
        const double ax = std::abs(x);
        return ax <= knee ? 0.5 * alpha * x * x : ax - 0.5 * knee;
      },
      [alpha](double x, double) { return std::clamp(alpha * x, -1.0, 1.0); });
}

Var clamp_unit(const Var& a) {
  return unary(
      OpKind::clamp_unit, a, [](double x) { return std::clamp(x, -1.0, 1.0); },
      [](double x, double) { return std::abs(x) < 1.0 ? 1.0 : 0.0; });
}

Var max0(const Var& a) {
  return unary(
      OpKind::max0, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gather(const Var& x, std::shared_ptr<const std::vector<std::size_t>> index) {
  require_rank2("gather", x);
  const std::size_t n = x.shape()[0], c = x.shape()[1], k = index->size();
  auto out = std::make_shared<Tensor>(Shape{k, c});
  const Tensor& X = x.value();
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t src = (*index)[r];
    if (src >= n) {
      throw std::out_of_range("gather: index " + std::to_string(src) + " out of range for shape " +
                              shape_string(x.shape()));
    }
    std::copy_n(&X[src * c], c, &(*out)[r * c]);
  }
  if (!x.graph()) return Var(std::move(*out));
  return x.graph()->record(OpKind::gather, out, {x}, [index, c](const Tensor& go, std::span<Tensor> gi) {
    for (std::size_t r = 0; r < index->size(); ++r) {
      const std::size_t dst = (*index)[r];
      for (std::size_t j = 0; j < c; ++j) gi[0][dst * c + j] += go[r * c + j];
    }
  });
}

Var scatter_add(const Var& v, std::shared_ptr<const std::vector<std::size_t>> index, std::size_t rows) {
  require_rank2("scatter_add", v);
  const std::size_t k = v.shape()[0], c = v.shape()[1];
  if (index->size() != k) {
    throw std::invalid_argument("scatter_add: " + std::to_string(index->size()) + " indices for values of shape " +
                                shape_string(v.shape()));
  }
  auto out = std::make_shared<Tensor>(Shape{rows, c});
  const Tensor& V = v.value();
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t dst = (*index)[r];
    if (dst >= rows) {
      throw std::out_of_range("scatter_add: index " + std::to_string(dst) + " out of range for " +
                              std::to_string(rows) + " rows");
    }
    for (std::size_t j = 0; j < c; ++j) (*out)[dst * c + j] += V[r * c + j];
  }
  if (!v.graph()) return Var(std::move(*out));
  return v.graph()->record(OpKind::scatter_add, out, {v}, [index, c](const Tensor& go, std::span<Tensor> gi) {
    for (std::size_t r = 0; r < index->size(); ++r) {
      const std::size_t src = (*index)[r];
      for (std::size_t j = 0; j < c; ++j) gi[0][r * c + j] += go[src * c + j];
    }
  });
}

Var reduce_norm2(const Var& a) {
  require_rank2("reduce_norm2", a);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  auto out = std::make_shared<Tensor>(Shape{r, 1});
  const Tensor& A = a.value();
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += A[i * c + j] * A[i * c + j];
    (*out)[i] = std::sqrt(s);
  }
  if (!a.graph()) return Var(std::move(*out));
  auto ap = a.shared_value();
  std::shared_ptr<const Tensor> op = out;
  return a.graph()->record(OpKind::reduce_norm2, out, {a}, [ap, op, r, c](const Tensor& go, std::span<Tensor> gi) {
    for (std::size_t i = 0; i < r; ++i) {
      const double nrm = (*op)[i];
      if (nrm == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j) gi[0][i * c + j] += go[i] * (*ap)[i * c + j] / nrm;
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  auto out = std::make_shared<Tensor>(a.value().reshaped(std::move(shape)));
  if (!a.graph()) return Var(std::move(*out));
  return a.graph()->record(OpKind::reshape, out, {a}, [](const Tensor& go, std::span<Tensor> gi) {
    auto d = gi[0].values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += go[i];
  });
}

}  // namespace gameprior::ad
