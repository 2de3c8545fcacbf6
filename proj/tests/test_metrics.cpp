#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "grcf/metrics.hpp"
#include "grcf/random.hpp"

using grcf::Rng;

namespace {

std::vector<double> random_vec(Rng& rng, int n, double lo = -3.0, double hi = 3.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// brute-force oracles, written independently of the library path
double oracle_pairwise(const std::vector<double>& y, const std::vector<double>& yh) {
  long long ok = 0, total = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = i + 1; j < y.size(); ++j) {
      ++total;
      const bool ly = y[i] > y[j];
      const bool lp = yh[i] > yh[j];
      if (ly == lp) ++ok;
    }
  }
  return double(ok) / double(total);
}

double oracle_mae(const std::vector<double>& y, const std::vector<double>& yh) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::fabs(y[i] - yh[i]);
  return s / y.size();
}

double oracle_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = a.size();
  double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

std::vector<double> oracle_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) ++less;
      if (v[j] == v[i]) ++equal;
    }
    r[i] = less + 0.5 * (equal + 1);
  }
  return r;
}

double oracle_acc7(const std::vector<double>& y, const std::vector<double>& yh, double s) {
  long long ok = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = std::clamp(std::clamp(yh[i], -s, s), -3.0, 3.0);
    if (std::round(p) == std::round(std::clamp(y[i], -3.0, 3.0))) ++ok;
  }
  return double(ok) / double(y.size());
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("pairwise accuracy basics") {
  std::vector<double> y = {1, 2, 3};
  std::vector<double> monotone = {0.1, 0.2, 0.3};
  CHECK(grcf::pairwise_acc(y, monotone) == 1.0);
  std::vector<double> two_y = {1, 2}, inverted = {2, 1};
  CHECK(grcf::pairwise_acc(two_y, inverted) == 0.0);
  std::vector<double> single = {1.0};
  CHECK_THROWS_AS(grcf::pairwise_acc(single, single), grcf::MetricError);
}

TEST_CASE("pairwise tie handling") {
  // tied labels count as correct iff the prediction does not invert them
  std::vector<double> y = {1.0, 1.0};
  std::vector<double> flat = {0.3, 0.3}, up = {0.3, 0.4}, down = {0.4, 0.3};
  CHECK(grcf::pairwise_acc(y, flat) == 1.0);
  CHECK(grcf::pairwise_acc(y, up) == 1.0);   // y_i > y_j false, yhat_i > yhat_j false
  CHECK(grcf::pairwise_acc(y, down) == 0.0);
  CHECK_THROWS_AS(grcf::pairwise_acc(y, up, /*exclude_ties=*/true), grcf::MetricError);
}

TEST_CASE("pairwise complement under prediction negation") {
  Rng rng(41);
  for (int t = 0; t < 10; ++t) {
    auto y = random_vec(rng, 30);
    auto yh = random_vec(rng, 30);
    std::vector<double> neg(yh.size());
    for (std::size_t i = 0; i < yh.size(); ++i) neg[i] = -yh[i];
    CHECK(grcf::pairwise_acc(y, yh) + grcf::pairwise_acc(y, neg) == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("acc7 fixtures") {
  std::vector<double> y = {1.0}, p = {1.4};
  CHECK(grcf::acc_k(y, p, 7) == 1.0);
  std::vector<double> y3 = {3.0}, p37 = {3.7};
  CHECK(grcf::acc_k(y3, p37, 7) == 1.0);  // clamped before rounding
  std::vector<double> y2 = {2.0}, p26 = {2.6};
  CHECK(grcf::acc_k(y2, p26, 7) == 0.0);
}

TEST_CASE("acc2 excludes zero labels") {
  std::vector<double> y = {0.0, 1.0, -2.0};
  std::vector<double> p = {5.0, 0.4, -0.1};
  CHECK(grcf::acc_k(y, p, 2) == 1.0);  // the zero label never enters
  std::vector<double> zeros = {0.0, 0.0};
  CHECK_THROWS_AS(grcf::acc_k(zeros, zeros, 2), grcf::MetricError);
}

TEST_CASE("acc3 and acc5 bin boundaries") {
  // exactly 0.1 is neutral, exactly 0.7 is strong
  std::vector<double> y = {0.1, -0.1, 0.7, -0.7, 0.3};
  std::vector<double> same = y;
  CHECK(grcf::acc_k(y, same, 3) == 1.0);
  CHECK(grcf::acc_k(y, same, 5) == 1.0);
  std::vector<double> just_over = {0.100001, -0.100001, 0.699999, -0.699999, 0.3};
  CHECK(grcf::acc_k(y, just_over, 3) == doctest::Approx(3.0 / 5.0));
  // crossing both the 0.1 and 0.7 cutoffs leaves only the 0.3 row matched
  CHECK(grcf::acc_k(y, just_over, 5) == doctest::Approx(1.0 / 5.0));
}

TEST_CASE("f1 fixtures") {
  std::vector<double> y = {1.0, -1.0, 2.0};
  std::vector<double> perfect = {0.5, -0.5, 1.5};
  CHECK(grcf::f1_regression(y, perfect) == 1.0);
  std::vector<double> all_neg = {-0.5, -0.5, -1.5};
  CHECK(grcf::f1_regression(y, all_neg) == 0.0);
  // P = R = 0.5
  std::vector<double> y2 = {1.0, 1.0, -1.0};
  std::vector<double> p2 = {0.5, -0.5, 0.5};
  CHECK(grcf::f1_regression(y2, p2) == doctest::Approx(0.5));
}

TEST_CASE("correlation fixtures") {
  Rng rng(42);
  auto y = random_vec(rng, 20);
  std::vector<double> affine(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) affine[i] = 2.0 * y[i] + 1.0;
  CHECK(grcf::pearson(y, affine) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<double> cubed(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) cubed[i] = y[i] * y[i] * y[i] + 2.0;
  CHECK(grcf::spearman(y, cubed) == doctest::Approx(1.0).epsilon(1e-12));

  CHECK(grcf::mae(y, y) == 0.0);

  std::vector<double> constant(20, 1.5);
  CHECK_THROWS_AS(grcf::pearson(y, constant), grcf::MetricError);
}

TEST_CASE("spearman averages tied ranks") {
  std::vector<double> a = {1.0, 1.0, 2.0, 3.0};
  std::vector<double> b = {0.5, 0.6, 0.7, 0.8};
  const auto ra = oracle_ranks(a);
  const auto rb = oracle_ranks(b);
  CHECK(grcf::spearman(a, b) == doctest::Approx(oracle_pearson(ra, rb)).epsilon(1e-14));
}

TEST_CASE("oracle agreement on random vectors") {
  Rng rng(43);
  for (int t = 0; t < 100; ++t) {
    auto y = random_vec(rng, 50);
    auto yh = random_vec(rng, 50);
    CHECK(grcf::pairwise_acc(y, yh) == oracle_pairwise(y, yh));
    CHECK(grcf::acc_k(y, yh, 7) == oracle_acc7(y, yh, 3.0));
    CHECK(std::abs(grcf::mae(y, yh) - oracle_mae(y, yh)) < 1e-12);
    CHECK(std::abs(grcf::pearson(y, yh) - oracle_pearson(y, yh)) < 1e-12);
    CHECK(std::abs(grcf::spearman(y, yh) - oracle_pearson(oracle_ranks(y), oracle_ranks(yh))) <
          1e-12);
  }
}

TEST_CASE("report serialization") {
  Rng rng(44);
  auto y = random_vec(rng, 25);
  auto yh = random_vec(rng, 25);
  auto report = grcf::evaluate_regression(y, yh, 3.0);
  const auto j = report.to_json();
  CHECK(j.at("pairwise_acc").get<double>() == report.pairwise);
  CHECK(j.at("n_samples").get<int>() == 25);
  CHECK(j.contains("corr"));
  CHECK(report.to_table().find("PairwiseAcc") != std::string::npos);

  std::vector<int> labels = {1, 0, 1, 0};
  std::vector<double> logits = {2.0, -1.0, 0.5, -0.25};
  auto cls = grcf::evaluate_classification(labels, logits);
  CHECK(cls.acc2 == 1.0);
  CHECK(cls.f1 == 1.0);
  CHECK_FALSE(cls.acc7.has_value());
  CHECK(cls.to_json().at("acc7").is_null());
}

}  // TEST_SUITE
