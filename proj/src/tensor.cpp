#include "grcf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace grcf {

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // leaves only; lazily allocated
  bool requires_grad = false;
  bool leaf = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // pushes d(loss)/d(input) into the per-call gradient sink
  std::function<void(const Matrix& gout, struct GradSink& sink)> backward;
};

// Per-backward-call gradient accumulator. Leaf gradients persist on the node
// (and add up across backward calls); intermediate gradients live only for
// the duration of one call.
struct GradSink {
  std::unordered_map<Node*, Matrix> transient;
  const char* current_op = "";

  void add(const std::shared_ptr<Node>& n, const Matrix& g) {
    if (!n->requires_grad) return;
    if (!g.allFinite()) {
      throw TensorError(std::string("non-finite gradient produced by '") + current_op + "'");
    }
    if (n->leaf) {
      if (n->grad.size() == 0) n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
      n->grad += g;
    } else {
      auto it = transient.find(n.get());
      if (it == transient.end()) {
        transient.emplace(n.get(), g);
      } else {
        it->second += g;
      }
    }
  }
};

}  // namespace detail

using detail::GradSink;
using detail::Node;

namespace {

thread_local bool g_kink_active = false;
thread_local double g_kink_min_gap = 0.0;

void record_kink_gap(double gap) {
  if (g_kink_active && gap < g_kink_min_gap) g_kink_min_gap = gap;
}

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

[[noreturn]] void shape_fail(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw TensorError(std::string(op) + ": undefined tensor");
}

using BackwardFn = std::function<void(const Matrix&, GradSink&)>;

std::shared_ptr<Node> new_node(const char* op, Matrix value,
                               std::initializer_list<std::shared_ptr<Node>> inputs,
                               BackwardFn fn) {
  if (!value.allFinite()) {
    throw TensorError(std::string("non-finite values produced by '") + op + "'");
  }
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  bool rg = false;
  for (const auto& in : inputs) rg = rg || in->requires_grad;
  n->requires_grad = rg;
  // not recorded on the graph when no input carries gradient
  if (rg) {
    for (const auto& in : inputs) {
      if (in->requires_grad) n->parents.push_back(in);
    }
    n->backward = std::move(fn);
  }
  return n;
}

Tensor make(const char* op, Matrix value, std::initializer_list<std::shared_ptr<Node>> inputs,
            BackwardFn fn);

}  // namespace

Tensor wrap_node(std::shared_ptr<detail::Node> n) { return Tensor(std::move(n)); }

namespace {
Tensor make(const char* op, Matrix value, std::initializer_list<std::shared_ptr<Node>> inputs,
            BackwardFn fn) {
  return wrap_node(new_node(op, std::move(value), inputs, std::move(fn)));
}
}  // namespace

// ---- Tensor methods --------------------------------------------------------

Tensor Tensor::constant(Matrix value) {
  if (!value.allFinite()) throw TensorError("constant: non-finite values");
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->leaf = true;
  return Tensor(std::move(n));
}

Tensor Tensor::constant(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Tensor Tensor::variable(Matrix value) {
  Tensor t = constant(std::move(value));
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::variable(double value) {
  Tensor t = constant(value);
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::constant_column(std::span<const double> v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[i];
  return constant(std::move(m));
}

Tensor Tensor::variable_column(std::span<const double> v) {
  Tensor t = constant_column(v);
  t.node_->requires_grad = true;
  return t;
}

Eigen::Index Tensor::rows() const { return node_->value.rows(); }
Eigen::Index Tensor::cols() const { return node_->value.cols(); }
Eigen::Index Tensor::size() const { return node_->value.size(); }

const Matrix& Tensor::value() const {
  require_defined(*this, "value");
  return node_->value;
}

double Tensor::scalar() const {
  require_defined(*this, "scalar");
  if (node_->value.size() != 1) {
    throw ShapeError("scalar: tensor has shape " + shape_str(node_->value));
  }
  return node_->value(0, 0);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_ && node_->leaf; }
const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

bool Tensor::has_grad() const { return node_ && node_->grad.size() != 0; }

const Matrix& Tensor::grad() const {
  require_defined(*this, "grad");
  if (!node_->leaf) throw TensorError("grad: gradients are retained for leaf tensors only");
  if (node_->grad.size() == 0) {
    throw TensorError("grad: no gradient accumulated (run backward first)");
  }
  return node_->grad;
}

void Tensor::zero_grad() {
  require_defined(*this, "zero_grad");
  if (node_->grad.size() != 0) node_->grad.setZero();
}

void Tensor::scale_grad(double k) {
  require_defined(*this, "scale_grad");
  if (!node_->leaf) throw TensorError("scale_grad: leaf tensors only");
  if (node_->grad.size() != 0) node_->grad *= k;
}

void Tensor::set_value(const Matrix& v) {
  require_defined(*this, "set_value");
  if (!node_->leaf) throw TensorError("set_value: leaf tensors only");
  if (v.rows() != node_->value.rows() || v.cols() != node_->value.cols()) {
    shape_fail("set_value", node_->value, v);
  }
  if (!v.allFinite()) throw TensorError("set_value: non-finite values");
  node_->value = v;
}

Matrix& Tensor::mutable_value() {
  require_defined(*this, "mutable_value");
  if (!node_->leaf) throw TensorError("mutable_value: leaf tensors only");
  return node_->value;
}

// ---- binary elementwise ----------------------------------------------------

namespace {
void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_fail(op, a.value(), b.value());
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.cols() != b.rows()) shape_fail("matmul", a.value(), b.value());
  auto an = a.node();
  auto bn = b.node();
  return make("matmul", a.value() * b.value(), {an, bn},
              [an, bn](const Matrix& g, GradSink& sink) {
                sink.add(an, g * bn->value.transpose());
                sink.add(bn, an->value.transpose() * g);
              });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  require_same_shape("add", a, b);
  auto an = a.node();
  auto bn = b.node();
  return make("add", a.value() + b.value(), {an, bn}, [an, bn](const Matrix& g, GradSink& sink) {
    sink.add(an, g);
    sink.add(bn, g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  require_same_shape("sub", a, b);
  auto an = a.node();
  auto bn = b.node();
  return make("sub", a.value() - b.value(), {an, bn}, [an, bn](const Matrix& g, GradSink& sink) {
    sink.add(an, g);
    sink.add(bn, -g);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  require_same_shape("mul", a, b);
  auto an = a.node();
  auto bn = b.node();
  return make("mul", a.value().cwiseProduct(b.value()), {an, bn},
              [an, bn](const Matrix& g, GradSink& sink) {
                sink.add(an, g.cwiseProduct(bn->value));
                sink.add(bn, g.cwiseProduct(an->value));
              });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_defined(a, "div");
  require_defined(b, "div");
  require_same_shape("div", a, b);
  auto an = a.node();
  auto bn = b.node();
  Matrix out = a.value().cwiseQuotient(b.value());
  return make("div", std::move(out), {an, bn}, [an, bn](const Matrix& g, GradSink& sink) {
    sink.add(an, g.cwiseQuotient(bn->value));
    sink.add(bn, -(g.cwiseProduct(an->value).cwiseQuotient(bn->value.cwiseProduct(bn->value))));
  });
}

// ---- broadcast forms -------------------------------------------------------

Tensor add_rowvec(const Tensor& m, const Tensor& row) {
  require_defined(m, "add_rowvec");
  require_defined(row, "add_rowvec");
  if (row.rows() != 1 || row.cols() != m.cols()) shape_fail("add_rowvec", m.value(), row.value());
  auto mn = m.node();
  auto rn = row.node();
  Matrix out = m.value();
  out.array().rowwise() += row.value().array().row(0);
  return make("add_rowvec", std::move(out), {mn, rn}, [mn, rn](const Matrix& g, GradSink& sink) {
    sink.add(mn, g);
    sink.add(rn, g.colwise().sum());
  });
}

Tensor mul_rowvec(const Tensor& m, const Tensor& row) {
  require_defined(m, "mul_rowvec");
  require_defined(row, "mul_rowvec");
  if (row.rows() != 1 || row.cols() != m.cols()) shape_fail("mul_rowvec", m.value(), row.value());
  auto mn = m.node();
  auto rn = row.node();
  Matrix out = (m.value().array().rowwise() * row.value().array().row(0)).matrix();
  return make("mul_rowvec", std::move(out), {mn, rn}, [mn, rn](const Matrix& g, GradSink& sink) {
    sink.add(mn, (g.array().rowwise() * rn->value.array().row(0)).matrix());
    sink.add(rn, g.cwiseProduct(mn->value).colwise().sum());
  });
}

Tensor add_colvec(const Tensor& m, const Tensor& col) {
  require_defined(m, "add_colvec");
  require_defined(col, "add_colvec");
  if (col.cols() != 1 || col.rows() != m.rows()) shape_fail("add_colvec", m.value(), col.value());
  auto mn = m.node();
  auto cn = col.node();
  Matrix out = m.value();
  out.array().colwise() += col.value().array().col(0);
  return make("add_colvec", std::move(out), {mn, cn}, [mn, cn](const Matrix& g, GradSink& sink) {
    sink.add(mn, g);
    sink.add(cn, g.rowwise().sum());
  });
}

Tensor mul_colvec(const Tensor& m, const Tensor& col) {
  require_defined(m, "mul_colvec");
  require_defined(col, "mul_colvec");
  if (col.cols() != 1 || col.rows() != m.rows()) shape_fail("mul_colvec", m.value(), col.value());
  auto mn = m.node();
  auto cn = col.node();
  Matrix out = (m.value().array().colwise() * col.value().array().col(0)).matrix();
  return make("mul_colvec", std::move(out), {mn, cn}, [mn, cn](const Matrix& g, GradSink& sink) {
    sink.add(mn, (g.array().colwise() * cn->value.array().col(0)).matrix());
    sink.add(cn, g.cwiseProduct(mn->value).rowwise().sum());
  });
}

Tensor div_colvec(const Tensor& m, const Tensor& col) {
  require_defined(m, "div_colvec");
  require_defined(col, "div_colvec");
  if (col.cols() != 1 || col.rows() != m.rows()) shape_fail("div_colvec", m.value(), col.value());
  auto mn = m.node();
  auto cn = col.node();
  Matrix out = (m.value().array().colwise() / col.value().array().col(0)).matrix();
  return make("div_colvec", std::move(out), {mn, cn}, [mn, cn](const Matrix& g, GradSink& sink) {
    sink.add(mn, (g.array().colwise() / cn->value.array().col(0)).matrix());
    Matrix quotient = (mn->value.array().colwise() / cn->value.array().col(0)).matrix();
    Matrix dcol = (-(g.cwiseProduct(quotient).rowwise().sum().array() / cn->value.array().col(0))).matrix();
    sink.add(cn, dcol);
  });
}

// ---- unary -----------------------------------------------------------------

Tensor neg(const Tensor& x) {
  require_defined(x, "neg");
  auto xn = x.node();
  return make("neg", -x.value(), {xn},
              [xn](const Matrix& g, GradSink& sink) { sink.add(xn, -g); });
}

Tensor abs(const Tensor& x) {
  require_defined(x, "abs");
  auto xn = x.node();
  if (g_kink_active && x.size() > 0) record_kink_gap(x.value().array().abs().minCoeff());
  // subgradient 0 at exactly 0
  return make("abs", Matrix(x.value().array().abs().matrix()), {xn}, [xn](const Matrix& g, GradSink& sink) {
    Matrix sign = xn->value.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    sink.add(xn, g.cwiseProduct(sign));
  });
}

Tensor relu(const Tensor& x) {
  require_defined(x, "relu");
  auto xn = x.node();
  if (g_kink_active && x.size() > 0) record_kink_gap(x.value().array().abs().minCoeff());
  return make("relu", x.value().cwiseMax(0.0), {xn}, [xn](const Matrix& g, GradSink& sink) {
    Matrix active = xn->value.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    sink.add(xn, g.cwiseProduct(active));
  });
}

Tensor cmax(const Tensor& x, double floor) {
  require_defined(x, "cmax");
  auto xn = x.node();
  if (g_kink_active && x.size() > 0) {
    record_kink_gap((x.value().array() - floor).abs().minCoeff());
  }
  return make("cmax", x.value().cwiseMax(floor), {xn},
              [xn, floor](const Matrix& g, GradSink& sink) {
                Matrix active =
                    xn->value.unaryExpr([floor](double v) { return v > floor ? 1.0 : 0.0; });
                sink.add(xn, g.cwiseProduct(active));
              });
}

Tensor clip(const Tensor& x, double lo, double hi) {
  require_defined(x, "clip");
  if (!(lo <= hi)) throw DomainError("clip: lo > hi");
  auto xn = x.node();
  if (g_kink_active && x.size() > 0) {
    const double gap_lo = (x.value().array() - lo).abs().minCoeff();
    const double gap_hi = (x.value().array() - hi).abs().minCoeff();
    record_kink_gap(std::min(gap_lo, gap_hi));
  }
  return make("clip", x.value().cwiseMax(lo).cwiseMin(hi), {xn},
              [xn, lo, hi](const Matrix& g, GradSink& sink) {
                Matrix inside = xn->value.unaryExpr(
                    [lo, hi](double v) { return (v > lo && v < hi) ? 1.0 : 0.0; });
                sink.add(xn, g.cwiseProduct(inside));
              });
}

Tensor sigmoid(const Tensor& x) {
  require_defined(x, "sigmoid");
  auto xn = x.node();
  Matrix out = x.value().unaryExpr([](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  auto out_copy = out;
  return make("sigmoid", std::move(out), {xn},
              [xn, s = std::move(out_copy)](const Matrix& g, GradSink& sink) {
                sink.add(xn, (g.array() * s.array() * (1.0 - s.array())).matrix());
              });
}

Tensor tanh(const Tensor& x) {
  require_defined(x, "tanh");
  auto xn = x.node();
  Matrix out = x.value().array().tanh().matrix();
  auto out_copy = out;
  return make("tanh", std::move(out), {xn},
              [xn, t = std::move(out_copy)](const Matrix& g, GradSink& sink) {
                sink.add(xn, (g.array() * (1.0 - t.array().square())).matrix());
              });
}

Tensor exp(const Tensor& x) {
  require_defined(x, "exp");
  auto xn = x.node();
  Matrix out = x.value().array().exp().matrix();
  auto out_copy = out;
  return make("exp", std::move(out), {xn},
              [xn, e = std::move(out_copy)](const Matrix& g, GradSink& sink) {
                sink.add(xn, g.cwiseProduct(e));
              });
}

Tensor log(const Tensor& x) {
  require_defined(x, "log");
  if ((x.value().array() <= 0.0).any()) throw DomainError("log: non-positive input");
  auto xn = x.node();
  return make("log", Matrix(x.value().array().log().matrix()), {xn}, [xn](const Matrix& g, GradSink& sink) {
    sink.add(xn, g.cwiseQuotient(xn->value));
  });
}

Tensor square(const Tensor& x) {
  require_defined(x, "square");
  auto xn = x.node();
  return make("square", Matrix(x.value().array().square().matrix()), {xn}, [xn](const Matrix& g, GradSink& sink) {
    sink.add(xn, 2.0 * g.cwiseProduct(xn->value));
  });
}

Tensor sqrt(const Tensor& x) {
  require_defined(x, "sqrt");
  if ((x.value().array() < 0.0).any()) throw DomainError("sqrt: negative input");
  auto xn = x.node();
  Matrix out = x.value().array().sqrt().matrix();
  auto out_copy = out;
  return make("sqrt", std::move(out), {xn},
              [xn, s = std::move(out_copy)](const Matrix& g, GradSink& sink) {
                sink.add(xn, (g.array() / (2.0 * s.array())).matrix());
              });
}

Tensor scale(const Tensor& x, double k) {
  require_defined(x, "scale");
  auto xn = x.node();
  return make("scale", k * x.value(), {xn},
              [xn, k](const Matrix& g, GradSink& sink) { sink.add(xn, k * g); });
}

Tensor add_scalar(const Tensor& x, double k) {
  require_defined(x, "add_scalar");
  auto xn = x.node();
  return make("add_scalar", Matrix((x.value().array() + k).matrix()), {xn},
              [xn](const Matrix& g, GradSink& sink) { sink.add(xn, g); });
}

// ---- shape ops -------------------------------------------------------------

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Eigen::Index r = parts[0].rows();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    require_defined(p, "concat_cols");
    if (p.rows() != r) shape_fail("concat_cols", parts[0].value(), p.value());
    total += p.cols();
  }
  Matrix out(r, total);
  Eigen::Index at = 0;
  std::vector<std::shared_ptr<Node>> nodes;
  std::vector<Eigen::Index> offsets, widths;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    nodes.push_back(p.node());
    offsets.push_back(at);
    widths.push_back(p.cols());
    at += p.cols();
  }
  auto n = std::make_shared<Node>();
  n->value = std::move(out);
  n->op = "concat_cols";
  for (const auto& in : nodes) n->requires_grad = n->requires_grad || in->requires_grad;
  if (n->requires_grad) {
    for (const auto& in : nodes) {
      if (in->requires_grad) n->parents.push_back(in);
    }
    n->backward = [nodes, offsets, widths](const Matrix& g, GradSink& sink) {
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        sink.add(nodes[i], g.middleCols(offsets[i], widths[i]));
      }
    };
  }
  return wrap_node(std::move(n));
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Eigen::Index c = parts[0].cols();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    require_defined(p, "concat_rows");
    if (p.cols() != c) shape_fail("concat_rows", parts[0].value(), p.value());
    total += p.rows();
  }
  Matrix out(total, c);
  Eigen::Index at = 0;
  std::vector<std::shared_ptr<Node>> nodes;
  std::vector<Eigen::Index> offsets, heights;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    nodes.push_back(p.node());
    offsets.push_back(at);
    heights.push_back(p.rows());
    at += p.rows();
  }
  auto n = std::make_shared<Node>();
  n->value = std::move(out);
  n->op = "concat_rows";
  for (const auto& in : nodes) n->requires_grad = n->requires_grad || in->requires_grad;
  if (n->requires_grad) {
    for (const auto& in : nodes) {
      if (in->requires_grad) n->parents.push_back(in);
    }
    n->backward = [nodes, offsets, heights](const Matrix& g, GradSink& sink) {
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        sink.add(nodes[i], g.middleRows(offsets[i], heights[i]));
      }
    };
  }
  return wrap_node(std::move(n));
}

Tensor slice_cols(const Tensor& x, Eigen::Index first, Eigen::Index count) {
  require_defined(x, "slice_cols");
  if (first < 0 || count < 0 || first + count > x.cols()) {
    throw ShapeError("slice_cols: range out of bounds for shape " + shape_str(x.value()));
  }
  auto xn = x.node();
  return make("slice_cols", x.value().middleCols(first, count), {xn},
              [xn, first, count](const Matrix& g, GradSink& sink) {
                Matrix full = Matrix::Zero(xn->value.rows(), xn->value.cols());
                full.middleCols(first, count) = g;
                sink.add(xn, full);
              });
}

Tensor slice_rows(const Tensor& x, Eigen::Index first, Eigen::Index count) {
  require_defined(x, "slice_rows");
  if (first < 0 || count < 0 || first + count > x.rows()) {
    throw ShapeError("slice_rows: range out of bounds for shape " + shape_str(x.value()));
  }
  auto xn = x.node();
  return make("slice_rows", x.value().middleRows(first, count), {xn},
              [xn, first, count](const Matrix& g, GradSink& sink) {
                Matrix full = Matrix::Zero(xn->value.rows(), xn->value.cols());
                full.middleRows(first, count) = g;
                sink.add(xn, full);
              });
}

Tensor reshape(const Tensor& x, Eigen::Index rows, Eigen::Index cols) {
  require_defined(x, "reshape");
  if (rows * cols != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.value()) + " as " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  auto xn = x.node();
  Matrix out = Eigen::Map<const Matrix>(x.value().data(), rows, cols);
  return make("reshape", std::move(out), {xn}, [xn](const Matrix& g, GradSink& sink) {
    sink.add(xn, Eigen::Map<const Matrix>(g.data(), xn->value.rows(), xn->value.cols()));
  });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  auto xn = x.node();
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return make("sum", std::move(out), {xn}, [xn](const Matrix& g, GradSink& sink) {
    sink.add(xn, Matrix::Constant(xn->value.rows(), xn->value.cols(), g(0, 0)));
  });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  auto xn = x.node();
  Matrix out(1, 1);
  out(0, 0) = x.value().mean();
  return make("mean", std::move(out), {xn}, [xn](const Matrix& g, GradSink& sink) {
    const double k = g(0, 0) / static_cast<double>(xn->value.size());
    sink.add(xn, Matrix::Constant(xn->value.rows(), xn->value.cols(), k));
  });
}

Tensor std_pop(const Tensor& x) {
  require_defined(x, "std_pop");
  if (x.size() == 0) throw ShapeError("std_pop: empty tensor");
  auto xn = x.node();
  const double mu = x.value().mean();
  const double var = (x.value().array() - mu).square().mean();
  const double sd = std::sqrt(var);
  if (g_kink_active) record_kink_gap(sd);
  Matrix out(1, 1);
  out(0, 0) = sd;
  // d(sd)/dx_i = (x_i - mu) / (n * sd); subgradient 0 when sd == 0
  return make("std_pop", std::move(out), {xn}, [xn, mu, sd](const Matrix& g, GradSink& sink) {
    if (sd == 0.0) {
      sink.add(xn, Matrix::Zero(xn->value.rows(), xn->value.cols()));
      return;
    }
    const double k = g(0, 0) / (static_cast<double>(xn->value.size()) * sd);
    sink.add(xn, (k * (xn->value.array() - mu)).matrix());
  });
}

Tensor rowwise_sum(const Tensor& x) {
  require_defined(x, "rowwise_sum");
  auto xn = x.node();
  Matrix out = x.value().rowwise().sum();
  return make("rowwise_sum", std::move(out), {xn}, [xn](const Matrix& g, GradSink& sink) {
    sink.add(xn, g * Matrix::Ones(1, xn->value.cols()));
  });
}

Tensor rowwise_mean(const Tensor& x) {
  require_defined(x, "rowwise_mean");
  if (x.cols() == 0) throw ShapeError("rowwise_mean: no columns");
  auto xn = x.node();
  Matrix out = x.value().rowwise().mean();
  return make("rowwise_mean", std::move(out), {xn}, [xn](const Matrix& g, GradSink& sink) {
    const double inv = 1.0 / static_cast<double>(xn->value.cols());
    sink.add(xn, (inv * g) * Matrix::Ones(1, xn->value.cols()));
  });
}

// ---- softmax ---------------------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
  require_defined(x, "softmax_rows");
  auto xn = x.node();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.value().row(i).maxCoeff();
    Eigen::Array<double, 1, Eigen::Dynamic> e = (x.value().row(i).array() - m).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  auto y = out;
  return make("softmax_rows", std::move(out), {xn},
              [xn, y = std::move(y)](const Matrix& g, GradSink& sink) {
                Matrix dot = g.cwiseProduct(y).rowwise().sum();  // [r x 1]
                Matrix dx = y.cwiseProduct(g - dot * Matrix::Ones(1, y.cols()));
                sink.add(xn, dx);
              });
}

Tensor masked_softmax_rows(const Tensor& x, const Matrix& mask) {
  require_defined(x, "masked_softmax_rows");
  if (mask.rows() != x.rows() || mask.cols() != x.cols()) {
    shape_fail("masked_softmax_rows", x.value(), mask);
  }
  if (((mask.array() != 0.0) && (mask.array() != 1.0)).any()) {
    throw DomainError("masked_softmax_rows: mask entries must be 0 or 1");
  }
  auto xn = x.node();
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (mask(i, j) != 0.0) m = std::max(m, x.value()(i, j));
    }
    if (!std::isfinite(m)) {
      throw DomainError("masked_softmax_rows: empty mask row " + std::to_string(i));
    }
    double z = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (mask(i, j) != 0.0) {
        out(i, j) = std::exp(x.value()(i, j) - m);
        z += out(i, j);
      }
    }
    out.row(i) /= z;
  }
  auto y = out;
  return make("masked_softmax_rows", std::move(out), {xn},
              [xn, y = std::move(y)](const Matrix& g, GradSink& sink) {
                Matrix dot = g.cwiseProduct(y).rowwise().sum();
                Matrix dx = y.cwiseProduct(g - dot * Matrix::Ones(1, y.cols()));
                sink.add(xn, dx);
              });
}

// ---- gather / pooling ------------------------------------------------------

Tensor gather_rows(const Tensor& x, std::span<const int> idx) {
  require_defined(x, "gather_rows");
  for (int i : idx) {
    if (i < 0 || static_cast<Eigen::Index>(i) >= x.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range for " +
                       shape_str(x.value()));
    }
  }
  auto xn = x.node();
  std::vector<int> indices(idx.begin(), idx.end());
  Matrix out(static_cast<Eigen::Index>(indices.size()), x.cols());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) = x.value().row(indices[k]);
  }
  return make("gather_rows", std::move(out), {xn},
              [xn, indices](const Matrix& g, GradSink& sink) {
                Matrix dx = Matrix::Zero(xn->value.rows(), xn->value.cols());
                for (std::size_t k = 0; k < indices.size(); ++k) {
                  dx.row(indices[k]) += g.row(static_cast<Eigen::Index>(k));
                }
                sink.add(xn, dx);
              });
}

Tensor row_blocks_weighted_sum(const Tensor& frames, const Tensor& weights) {
  require_defined(frames, "row_blocks_weighted_sum");
  require_defined(weights, "row_blocks_weighted_sum");
  const Eigen::Index n = weights.rows();
  const Eigen::Index block = weights.cols();
  if (frames.rows() != n * block) {
    shape_fail("row_blocks_weighted_sum", frames.value(), weights.value());
  }
  auto fn = frames.node();
  auto wn = weights.node();
  Matrix out(n, frames.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    out.row(i) = weights.value().row(i) * frames.value().middleRows(i * block, block);
  }
  return make("row_blocks_weighted_sum", std::move(out), {fn, wn},
              [fn, wn, n, block](const Matrix& g, GradSink& sink) {
                if (fn->requires_grad) {
                  Matrix df(fn->value.rows(), fn->value.cols());
                  for (Eigen::Index i = 0; i < n; ++i) {
                    df.middleRows(i * block, block) =
                        wn->value.row(i).transpose() * g.row(i);
                  }
                  sink.add(fn, df);
                }
                if (wn->requires_grad) {
                  Matrix dw(n, block);
                  for (Eigen::Index i = 0; i < n; ++i) {
                    dw.row(i) =
                        (fn->value.middleRows(i * block, block) * g.row(i).transpose()).transpose();
                  }
                  sink.add(wn, dw);
                }
              });
}

Tensor detach(const Tensor& x) {
  require_defined(x, "detach");
  auto n = std::make_shared<Node>();
  n->value = x.value();
  n->leaf = true;
  n->op = "detach";
  return wrap_node(std::move(n));
}

// ---- backward --------------------------------------------------------------

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.value()));
  }
  if (!loss.requires_grad()) {
    throw TensorError("backward: no gradient path (loss does not require grad)");
  }
  if (!std::isfinite(loss.scalar())) throw TensorError("backward: non-finite loss");

  // post-order DFS over requires_grad parents; reverse gives topological order
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    std::size_t next = 0;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get()});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      Node* p = f.node->parents[f.next++].get();
      if (visited.insert(p).second) stack.push_back({p});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  GradSink sink;
  Node* root = loss.node().get();
  if (root->leaf) {
    if (root->grad.size() == 0) root->grad = Matrix::Zero(1, 1);
    root->grad(0, 0) += 1.0;
    return;
  }
  sink.transient.emplace(root, Matrix::Ones(1, 1));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->leaf || !n->backward) continue;
    auto gi = sink.transient.find(n);
    if (gi == sink.transient.end()) continue;  // not reachable with gradient
    Matrix gout = std::move(gi->second);
    sink.transient.erase(gi);
    sink.current_op = n->op;
    n->backward(gout, sink);
  }
}

// ---- finite differences ----------------------------------------------------

namespace {
double eval_scalar(const std::function<Tensor()>& f) {
  Tensor out = f();
  const double v = out.scalar();
  if (!std::isfinite(v)) throw TensorError("finite_diff_check: non-finite evaluation");
  return v;
}
}  // namespace

double finite_diff_check(const std::function<Tensor()>& f, std::span<const Tensor> wrt,
                         double step) {
  if (step <= 0.0) throw DomainError("finite_diff_check: step must be positive");
  for (const auto& t : wrt) {
    if (!t.is_leaf() || !t.requires_grad()) {
      throw TensorError("finite_diff_check: wrt tensors must be requires_grad leaves");
    }
  }
  for (const auto& t : wrt) const_cast<Tensor&>(t).zero_grad();

  Tensor out = f();
  if (out.size() != 1) throw ShapeError("finite_diff_check: f must return a scalar");
  if (!std::isfinite(out.scalar())) throw TensorError("finite_diff_check: non-finite evaluation");
  backward(out);

  std::vector<Matrix> analytic;
  analytic.reserve(wrt.size());
  for (const auto& t : wrt) {
    analytic.push_back(t.has_grad() ? t.grad()
                                    : Matrix::Zero(t.rows(), t.cols()));
  }

  double max_rel = 0.0;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    Matrix& v = const_cast<Tensor&>(wrt[k]).mutable_value();
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      for (Eigen::Index j = 0; j < v.cols(); ++j) {
        const double orig = v(i, j);
        v(i, j) = orig + step;
        const double fp = eval_scalar(f);
        v(i, j) = orig - step;
        const double fm = eval_scalar(f);
        v(i, j) = orig;
        const double numeric = (fp - fm) / (2.0 * step);
        const double a = analytic[k](i, j);
        const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
        max_rel = std::max(max_rel, rel);
      }
    }
  }
  return max_rel;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double step) {
  const Tensor wrt[] = {x};
  return finite_diff_check([&]() { return f(x); }, wrt, step);
}

// ---- kink monitor ----------------------------------------------------------

KinkGuard::KinkGuard() {
  if (g_kink_active) throw TensorError("KinkGuard: already active");
  g_kink_active = true;
  g_kink_min_gap = std::numeric_limits<double>::infinity();
}

KinkGuard::~KinkGuard() { g_kink_active = false; }

double KinkGuard::min_gap() const { return g_kink_min_gap; }

}  // namespace grcf
