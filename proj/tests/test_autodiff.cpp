#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "grcf/random.hpp"
#include "grcf/tensor.hpp"

using grcf::Matrix;
using grcf::Rng;
using grcf::Tensor;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo = -2.0, double hi = 2.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

// Retries with fresh draws until the forward pass stays clear of every
// non-differentiable kink, per the module's testing convention.
double checked_fd(const std::function<Tensor(const Tensor&)>& f, Rng& rng, Eigen::Index r,
                  Eigen::Index c, double lo = -2.0, double hi = 2.0) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    Tensor x = Tensor::variable(random_matrix(rng, r, c, lo, hi));
    double gap;
    {
      grcf::KinkGuard guard;
      (void)f(x);
      gap = guard.min_gap();
    }
    if (gap <= 1e-2) continue;
    return grcf::finite_diff_check(f, x, 1e-5);
  }
  FAIL("could not find a kink-free sample point");
  return 0.0;
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("forward fixed points") {
  CHECK(grcf::sigmoid(Tensor::constant(0.0)).scalar() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(grcf::tanh(Tensor::constant(0.0)).scalar() == 0.0);
  Matrix ones(3, 1);
  ones << 1.0, 1.0, 1.0;
  CHECK(grcf::std_pop(Tensor::constant(ones)).scalar() == 0.0);
}

TEST_CASE("backward quadratic") {
  Tensor x = Tensor::variable(3.0);
  Tensor loss = grcf::square(x);
  grcf::backward(loss);
  CHECK(x.grad()(0, 0) == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("detach blocks one path") {
  Tensor x = Tensor::variable(2.0);
  Tensor loss = grcf::mul(grcf::detach(x), x);
  grcf::backward(loss);
  CHECK(x.grad()(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("sigmoid gradient at zero") {
  Tensor x = Tensor::variable(0.0);
  Tensor loss = grcf::sigmoid(x);
  grcf::backward(loss);
  CHECK(x.grad()(0, 0) == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("gradients accumulate until zero_grad") {
  Tensor x = Tensor::variable(3.0);
  for (int i = 0; i < 2; ++i) {
    Tensor loss = grcf::square(x);
    grcf::backward(loss);
  }
  CHECK(x.grad()(0, 0) == doctest::Approx(12.0).epsilon(1e-14));
  x.zero_grad();
  Tensor loss = grcf::square(x);
  grcf::backward(loss);
  CHECK(x.grad()(0, 0) == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("detach has zero gradient contribution") {
  Tensor x = Tensor::variable(1.5);
  Tensor d = grcf::detach(x);
  CHECK(d.value() == x.value());
  Tensor loss = grcf::add(grcf::mul(d, x), grcf::square(x));
  grcf::backward(loss);
  CHECK(x.grad()(0, 0) == doctest::Approx(1.5 + 3.0).epsilon(1e-14));
  CHECK_FALSE(d.has_grad());
}

TEST_CASE("errors") {
  Rng rng(1);
  Tensor a = Tensor::variable(random_matrix(rng, 2, 3));
  SUBCASE("shape mismatch names the primitive") {
    Tensor b = Tensor::variable(Matrix::Zero(4, 5));
    CHECK_THROWS_WITH_AS(grcf::matmul(a, b),
                         "matmul: incompatible shapes 2x3 and 4x5", grcf::ShapeError);
  }
  SUBCASE("log of negative") {
    CHECK_THROWS_AS(grcf::log(Tensor::constant(-1.0)), grcf::DomainError);
  }
  SUBCASE("sqrt of negative") {
    CHECK_THROWS_AS(grcf::sqrt(Tensor::constant(-1.0)), grcf::DomainError);
  }
  SUBCASE("non-scalar backward") {
    CHECK_THROWS_AS(grcf::backward(a), grcf::ShapeError);
  }
  SUBCASE("no gradient path") {
    Tensor c = Tensor::constant(1.0);
    CHECK_THROWS_AS(grcf::backward(grcf::square(c)), grcf::TensorError);
  }
  SUBCASE("empty mask row") {
    Tensor x = Tensor::variable(Matrix::Zero(2, 3));
    Matrix mask = Matrix::Zero(2, 3);
    mask(0, 0) = 1.0;
    CHECK_THROWS_AS(grcf::masked_softmax_rows(x, mask), grcf::DomainError);
  }
}

TEST_CASE("operations on constants are not recorded") {
  Tensor a = Tensor::constant(2.0);
  Tensor b = Tensor::constant(3.0);
  Tensor c = grcf::mul(a, b);
  CHECK_FALSE(c.requires_grad());
  CHECK(c.scalar() == 6.0);
}

TEST_CASE("finite differences across every primitive") {
  Rng rng(20240001);
  const int points = 10;
  for (int p = 0; p < points; ++p) {
    // smooth unaries
    CHECK(checked_fd([](const Tensor& x) { return grcf::sum(grcf::sigmoid(x)); }, rng, 3, 4) < 1e-5);
    CHECK(checked_fd([](const Tensor& x) { return grcf::sum(grcf::tanh(x)); }, rng, 3, 4) < 1e-5);
    CHECK(checked_fd([](const Tensor& x) { return grcf::sum(grcf::exp(x)); }, rng, 2, 3) < 1e-5);
    CHECK(checked_fd([](const Tensor& x) { return grcf::sum(grcf::log(x)); }, rng, 2, 3, 0.5, 3.0) < 1e-5);
    CHECK(checked_fd([](const Tensor& x) { return grcf::sum(grcf::square(x)); }, rng, 2, 3) < 1e-5);
    CHECK(checked_fd([](const Tensor& x) { return grcf::sum(grcf::sqrt(x)); }, rng, 2, 3, 0.5, 3.0) < 1e-5);
    CHECK(checked_fd([](const Tensor& x) { return grcf::sum(grcf::neg(x)); }, rng, 2, 3) < 1e-5);
    CHECK(checked_fd([](const Tensor& x) { return grcf::mean(grcf::scale(x, 1.7)); }, rng, 2, 3) < 1e-5);
    CHECK(checked_fd([](const Tensor& x) { return grcf::sum(grcf::add_scalar(x, 0.3)); }, rng, 2, 3) < 1e-5);
    // kinked unaries, sampled away from the kink by checked_fd
    CHECK(checked_fd([](const Tensor& x) { return grcf::sum(grcf::relu(x)); }, rng, 3, 4) < 1e-5);
    CHECK(checked_fd([](const Tensor& x) { return grcf::sum(grcf::abs(x)); }, rng, 3, 4) < 1e-5);
    CHECK(checked_fd([](const Tensor& x) { return grcf::sum(grcf::cmax(x, 0.25)); }, rng, 3, 4) < 1e-5);
    CHECK(checked_fd([](const Tensor& x) { return grcf::sum(grcf::clip(x, -1.0, 1.0)); }, rng, 3, 4) < 1e-5);
    // reductions
    CHECK(checked_fd([](const Tensor& x) { return grcf::mean(x); }, rng, 3, 4) < 1e-5);
    CHECK(checked_fd([](const Tensor& x) { return grcf::std_pop(x); }, rng, 3, 4) < 1e-5);
    CHECK(checked_fd([](const Tensor& x) { return grcf::sum(grcf::rowwise_sum(x)); }, rng, 3, 4) < 1e-5);
    CHECK(checked_fd([](const Tensor& x) { return grcf::sum(grcf::square(grcf::rowwise_mean(x))); }, rng, 3, 4) < 1e-5);
    // softmax
    CHECK(checked_fd([](const Tensor& x) {
      return grcf::sum(grcf::square(grcf::softmax_rows(x)));
    }, rng, 3, 4) < 1e-5);
    Matrix mask = Matrix::Zero(3, 4);
    mask.leftCols(3).setOnes();
    CHECK(checked_fd([mask](const Tensor& x) {
      return grcf::sum(grcf::square(grcf::masked_softmax_rows(x, mask)));
    }, rng, 3, 4) < 1e-5);
    // shape ops
    CHECK(checked_fd([](const Tensor& x) {
      return grcf::sum(grcf::square(grcf::slice_cols(x, 1, 2)));
    }, rng, 3, 4) < 1e-5);
    CHECK(checked_fd([](const Tensor& x) {
      return grcf::sum(grcf::square(grcf::slice_rows(x, 0, 2)));
    }, rng, 3, 4) < 1e-5);
    CHECK(checked_fd([](const Tensor& x) {
      return grcf::sum(grcf::square(grcf::reshape(x, 2, 6)));
    }, rng, 3, 4) < 1e-5);
    std::vector<int> idx = {2, 0, 2};
    CHECK(checked_fd([idx](const Tensor& x) {
      return grcf::sum(grcf::square(grcf::gather_rows(x, idx)));
    }, rng, 3, 4) < 1e-5);
  }
}

TEST_CASE("finite differences across binary primitives") {
  Rng rng(20240002);
  for (int p = 0; p < 10; ++p) {
    Matrix bval = random_matrix(rng, 3, 4, 0.5, 2.0);
    Tensor b = Tensor::constant(bval);
    CHECK(checked_fd([b](const Tensor& x) { return grcf::sum(grcf::add(x, b)); }, rng, 3, 4) < 1e-5);
    CHECK(checked_fd([b](const Tensor& x) { return grcf::sum(grcf::sub(x, b)); }, rng, 3, 4) < 1e-5);
    CHECK(checked_fd([b](const Tensor& x) { return grcf::sum(grcf::square(grcf::mul(x, b))); }, rng, 3, 4) < 1e-5);
    CHECK(checked_fd([b](const Tensor& x) { return grcf::sum(grcf::div(x, b)); }, rng, 3, 4) < 1e-5);
    // both sides of div
    CHECK(checked_fd([b](const Tensor& x) { return grcf::sum(grcf::div(b, x)); }, rng, 3, 4, 0.5, 2.0) < 1e-5);
    Matrix w = random_matrix(rng, 4, 2);
    Tensor wt = Tensor::constant(w);
    CHECK(checked_fd([wt](const Tensor& x) {
      return grcf::sum(grcf::square(grcf::matmul(x, wt)));
    }, rng, 3, 4) < 1e-5);
    // matmul wrt the right operand
    Matrix a = random_matrix(rng, 3, 4);
    Tensor at = Tensor::constant(a);
    CHECK(checked_fd([at](const Tensor& x) {
      return grcf::sum(grcf::square(grcf::matmul(at, x)));
    }, rng, 4, 2) < 1e-5);
    // broadcast forms
    Tensor rowc = Tensor::constant(random_matrix(rng, 1, 4));
    CHECK(checked_fd([rowc](const Tensor& x) { return grcf::sum(grcf::square(grcf::add_rowvec(x, rowc))); }, rng, 3, 4) < 1e-5);
    CHECK(checked_fd([rowc](const Tensor& x) { return grcf::sum(grcf::square(grcf::mul_rowvec(x, rowc))); }, rng, 3, 4) < 1e-5);
    Tensor matc = Tensor::constant(random_matrix(rng, 3, 4));
    CHECK(checked_fd([matc](const Tensor& x) { return grcf::sum(grcf::square(grcf::add_rowvec(matc, x))); }, rng, 1, 4) < 1e-5);
    CHECK(checked_fd([matc](const Tensor& x) { return grcf::sum(grcf::square(grcf::mul_rowvec(matc, x))); }, rng, 1, 4) < 1e-5);
    Tensor colc = Tensor::constant(random_matrix(rng, 3, 1, 0.5, 2.0));
    CHECK(checked_fd([colc](const Tensor& x) { return grcf::sum(grcf::square(grcf::add_colvec(x, colc))); }, rng, 3, 4) < 1e-5);
    CHECK(checked_fd([colc](const Tensor& x) { return grcf::sum(grcf::square(grcf::mul_colvec(x, colc))); }, rng, 3, 4) < 1e-5);
    CHECK(checked_fd([colc](const Tensor& x) { return grcf::sum(grcf::square(grcf::div_colvec(x, colc))); }, rng, 3, 4) < 1e-5);
    CHECK(checked_fd([matc](const Tensor& x) { return grcf::sum(grcf::square(grcf::add_colvec(matc, x))); }, rng, 3, 1) < 1e-5);
    CHECK(checked_fd([matc](const Tensor& x) { return grcf::sum(grcf::square(grcf::mul_colvec(matc, x))); }, rng, 3, 1) < 1e-5);
    CHECK(checked_fd([matc](const Tensor& x) { return grcf::sum(grcf::square(grcf::div_colvec(matc, x))); }, rng, 3, 1, 0.5, 2.0) < 1e-5);
    // concat and pooling
    Tensor part = Tensor::constant(random_matrix(rng, 3, 2));
    CHECK(checked_fd([part](const Tensor& x) {
      return grcf::sum(grcf::square(grcf::concat_cols({x, part})));
    }, rng, 3, 4) < 1e-5);
    Tensor row_part = Tensor::constant(random_matrix(rng, 1, 4));
    CHECK(checked_fd([row_part](const Tensor& x) {
      return grcf::sum(grcf::square(grcf::concat_rows({x, row_part})));
    }, rng, 3, 4) < 1e-5);
    Tensor weights = Tensor::constant(random_matrix(rng, 2, 3));
    CHECK(checked_fd([weights](const Tensor& frames) {
      return grcf::sum(grcf::square(grcf::row_blocks_weighted_sum(frames, weights)));
    }, rng, 6, 4) < 1e-5);
    Tensor frames = Tensor::constant(random_matrix(rng, 6, 4));
    CHECK(checked_fd([frames](const Tensor& w) {
      return grcf::sum(grcf::square(grcf::row_blocks_weighted_sum(frames, w)));
    }, rng, 2, 3) < 1e-5);
  }
}

TEST_CASE("finite_diff_check exactness on quadratics") {
  Rng rng(7);
  Tensor x = Tensor::variable(random_matrix(rng, 4, 3));
  double err = grcf::finite_diff_check(
      [](const Tensor& t) { return grcf::sum(grcf::square(t)); }, x, 1e-4);
  CHECK(err < 1e-6);
}

TEST_CASE("deterministic repeated forward and backward") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = Tensor::variable(random_matrix(rng, 5, 4));
    Tensor w = Tensor::variable(random_matrix(rng, 4, 3));
    Tensor loss = grcf::mean(grcf::square(grcf::tanh(grcf::matmul(x, w))));
    grcf::backward(loss);
    return std::make_tuple(loss.scalar(), Matrix(x.grad()), Matrix(w.grad()));
  };
  auto [l1, gx1, gw1] = run(99);
  auto [l2, gx2, gw2] = run(99);
  CHECK(l1 == l2);
  CHECK(gx1 == gx2);
  CHECK(gw1 == gw2);
}

TEST_CASE("mutation sanity: an injected sign bug in a hinge is caught") {
  // the analytic pass sees relu(m - d); the probe evaluations see relu(m + d),
  // emulating an implementation whose backward disagrees with its forward
  Rng rng(404);
  Tensor x = Tensor::variable(random_matrix(rng, 4, 1, 0.2, 1.5));
  int calls = 0;
  const double margin = 2.0;
  auto buggy = [&calls, margin](const Tensor& t) {
    ++calls;
    Tensor d = grcf::sum(t);
    Tensor pre = calls == 1 ? grcf::add_scalar(grcf::neg(d), margin)
                            : grcf::add_scalar(d, margin);
    return grcf::sum(grcf::relu(pre));
  };
  const double err = grcf::finite_diff_check(buggy, x, 1e-5);
  CHECK(err > 1e-4);
}

TEST_CASE("multi-tensor finite_diff_check") {
  Rng rng(31);
  Tensor a = Tensor::variable(random_matrix(rng, 2, 3));
  Tensor b = Tensor::variable(random_matrix(rng, 3, 2));
  std::vector<Tensor> wrt = {a, b};
  double err = grcf::finite_diff_check(
      [&]() { return grcf::sum(grcf::sigmoid(grcf::matmul(a, b))); }, wrt, 1e-6);
  CHECK(err < 1e-5);
}

}  // TEST_SUITE
