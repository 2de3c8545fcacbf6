#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
// Values are computed eagerly; each operation that touches a differentiable
// input records itself on the implicit graph, and backward() replays the
// graph in reverse topological order. 64-bit floats throughout.

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

namespace grcf {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// shape disagreement between operands; message names the primitive
class ShapeError : public TensorError {
 public:
  using TensorError::TensorError;
};

// log/sqrt of a negative, masked softmax over an empty mask, etc.
class DomainError : public TensorError {
 public:
  using TensorError::TensorError;
};

namespace detail {
struct Node;
}

// Handle to a graph node. Copies share the node; values are immutable after
// creation except through the explicit leaf-update hooks used by the
// optimizer and the finite-difference harness.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Matrix value);
  static Tensor constant(double value);
  static Tensor variable(Matrix value);
  static Tensor variable(double value);
  // column vectors [n x 1]
  static Tensor constant_column(std::span<const double> v);
  static Tensor variable_column(std::span<const double> v);

  bool defined() const { return node_ != nullptr; }
  Eigen::Index rows() const;
  Eigen::Index cols() const;
  Eigen::Index size() const;
  const Matrix& value() const;
  double scalar() const;  // value of a 1x1 tensor
  bool requires_grad() const;
  bool is_leaf() const;
  const char* op_name() const;

  // gradient buffer; leaves only, populated by backward()
  bool has_grad() const;
  const Matrix& grad() const;
  void zero_grad();
  void scale_grad(double k);  // leaf-only, used by gradient clipping

  // leaf-only value updates (optimizer steps, finite-difference probes)
  void set_value(const Matrix& v);
  Matrix& mutable_value();

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor wrap_node(std::shared_ptr<detail::Node> n);
};

// ---- primitives ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// broadcast forms, limited to what the model needs
Tensor add_rowvec(const Tensor& m, const Tensor& row);
Tensor mul_rowvec(const Tensor& m, const Tensor& row);
Tensor add_colvec(const Tensor& m, const Tensor& col);
Tensor mul_colvec(const Tensor& m, const Tensor& col);
Tensor div_colvec(const Tensor& m, const Tensor& col);

Tensor neg(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor cmax(const Tensor& x, double floor);  // elementwise max(x, floor)
Tensor clip(const Tensor& x, double lo, double hi);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor scale(const Tensor& x, double k);
Tensor add_scalar(const Tensor& x, double k);

Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
inline Tensor concat_cols(std::initializer_list<Tensor> parts) {
  return concat_cols(std::span<const Tensor>(parts.begin(), parts.size()));
}
inline Tensor concat_rows(std::initializer_list<Tensor> parts) {
  return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
}
Tensor slice_cols(const Tensor& x, Eigen::Index first, Eigen::Index count);
Tensor slice_rows(const Tensor& x, Eigen::Index first, Eigen::Index count);
Tensor reshape(const Tensor& x, Eigen::Index rows, Eigen::Index cols);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor std_pop(const Tensor& x);  // population standard deviation
Tensor rowwise_sum(const Tensor& x);
Tensor rowwise_mean(const Tensor& x);

Tensor softmax_rows(const Tensor& x);
// mask entries must be 0 or 1; an all-zero mask row is a domain error
Tensor masked_softmax_rows(const Tensor& x, const Matrix& mask);

Tensor gather_rows(const Tensor& x, std::span<const int> idx);
// frames [(n*L) x d], weights [n x L]  ->  [n x d], out[i] = sum_l w(i,l) frames[i*L+l]
Tensor row_blocks_weighted_sum(const Tensor& frames, const Tensor& weights);

// value-identical tensor with zero gradient contribution
Tensor detach(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double k) { return scale(a, k); }
inline Tensor operator*(double k, const Tensor& a) { return scale(a, k); }
inline Tensor operator+(const Tensor& a, double k) { return add_scalar(a, k); }
inline Tensor operator-(const Tensor& a, double k) { return add_scalar(a, -k); }

// ---- backward ------------------------------------------------------------

// Accumulates d(loss)/d(leaf) into every reachable requires_grad leaf.
// Gradients add up across calls until zero_grad().
void backward(const Tensor& loss);

// ---- finite differences --------------------------------------------------

// Max over all coordinates of |analytic - central difference| / max(1, |analytic|).
// f is re-evaluated with perturbed leaf values; it must be deterministic.
double finite_diff_check(const std::function<Tensor()>& f, std::span<const Tensor> wrt,
                         double step = 1e-6);
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double step = 1e-6);

// Records, while alive, the smallest distance of any relu/abs/cmax/clip input
// to its kink and the smallest std_pop output. Finite-difference harnesses use
// it to reject sample points that sit on a non-differentiable point.
class KinkGuard {
 public:
  KinkGuard();
  ~KinkGuard();
  KinkGuard(const KinkGuard&) = delete;
  KinkGuard& operator=(const KinkGuard&) = delete;
  double min_gap() const;
};

}  // namespace grcf
