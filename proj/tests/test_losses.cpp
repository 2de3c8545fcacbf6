#include <doctest.h>

#include <cmath>
#include <utility>
#include <vector>

#include "grcf/losses.hpp"
#include "grcf/random.hpp"

using grcf::ClsPairBatch;
using grcf::ClsWeights;
using grcf::GroupSpec;
using grcf::GroupStrategy;
using grcf::MarginParams;
using grcf::Matrix;
using grcf::PairBatch;
using grcf::Rng;
using grcf::Stage1Weights;
using grcf::Stage2Weights;
using grcf::Tensor;

namespace {

// ---- independent scalar oracles (plain doubles, no graph) ------------------

double osigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

struct OracleAdvantage {
  std::vector<double> rewards, advantages, weights;
  bool degenerate = false;
};

OracleAdvantage oracle_advantage(const std::vector<double>& preds,
                                 const std::vector<std::pair<int, int>>& pairs, double eps,
                                 bool fallback_uniform) {
  OracleAdvantage o;
  for (auto [i, j] : pairs) o.rewards.push_back(osigmoid(preds[i] - preds[j]));
  double mu = 0.0;
  for (double r : o.rewards) mu += r;
  mu /= o.rewards.size();
  double var = 0.0;
  for (double r : o.rewards) var += (r - mu) * (r - mu);
  const double sd = std::sqrt(var / o.rewards.size());
  for (double r : o.rewards) o.advantages.push_back((r - mu) / (sd + eps));
  o.degenerate = sd < eps;
  for (double a : o.advantages) {
    o.weights.push_back(o.degenerate ? (fallback_uniform ? 1.0 : 0.0) : std::max(0.0, -a));
  }
  return o;
}

double oracle_group_loss(const std::vector<double>& preds, const std::vector<double>& labels,
                         const std::vector<std::pair<int, int>>& pairs, const GroupSpec& spec,
                         const MarginParams& mp, double eps, bool fallback_uniform) {
  const OracleAdvantage adv = oracle_advantage(preds, pairs, eps, fallback_uniform);
  double total = 0.0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    auto [i, j] = pairs[k];
    const double m = grcf::dynamic_margin(grcf::group_distance(labels[i], labels[j], spec), mp);
    total += adv.weights[k] * std::max(0.0, m - (preds[i] - preds[j]));
  }
  return total / pairs.size();
}

double oracle_reg(const std::vector<double>& preds, const std::vector<double>& labels,
                  double gamma) {
  auto mean_of = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return m / v.size();
  };
  auto std_of = [&](const std::vector<double>& v) {
    const double m = mean_of(v);
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    return std::sqrt(var / v.size());
  };
  const double mt = (mean_of(preds) - mean_of(labels)) * (mean_of(preds) - mean_of(labels));
  const double dt = (std_of(preds) - std_of(labels)) * (std_of(preds) - std_of(labels));
  return std::max(0.0, mt - gamma) + std::max(0.0, dt - gamma);
}

double oracle_bound(const std::vector<double>& preds, double s) {
  double total = 0.0;
  for (double p : preds) total += std::max(0.0, std::abs(p) - s);
  return total / preds.size();
}

double oracle_mae(const std::vector<double>& preds, const std::vector<double>& labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += std::abs(preds[i] - labels[i]);
  return total / preds.size();
}

PairBatch make_batch(const std::vector<double>& preds, const std::vector<double>& labels,
                     const std::vector<std::pair<int, int>>& pairs) {
  PairBatch b;
  b.predictions = Tensor::variable_column(preds);
  b.labels = labels;
  b.ranking_pairs = pairs;
  return b;
}

// random batch with ranking pairs oriented by label
PairBatch random_batch(Rng& rng, int n, int n_pairs, double spread = 2.0) {
  std::vector<double> preds, labels;
  for (int i = 0; i < n; ++i) {
    preds.push_back(rng.uniform(-spread, spread));
    labels.push_back(rng.uniform(-2.9, 2.9));
  }
  std::vector<std::pair<int, int>> pairs;
  while (static_cast<int>(pairs.size()) < n_pairs) {
    int i = rng.uniform_int(n);
    int j = rng.uniform_int(n);
    if (labels[i] == labels[j]) continue;
    if (labels[i] < labels[j]) std::swap(i, j);
    pairs.emplace_back(i, j);
  }
  return make_batch(preds, labels, pairs);
}

const GroupSpec kSpec = GroupSpec::make(GroupStrategy::Overlap5, 3.0);
const MarginParams kMargins{0.1, 0.5, 0.1};

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("rank hinge") {
  auto probe = [](double diff, double m) {
    Tensor yi = Tensor::variable(diff);
    Tensor yj = Tensor::variable(0.0);
    return grcf::rank_hinge(yi, yj, m).scalar();
  };
  CHECK(probe(1.0, 0.7) == 0.0);
  CHECK(probe(0.2, 0.7) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(probe(0.0, 0.1) == doctest::Approx(0.1).epsilon(1e-14));
}

TEST_CASE("advantage weighting fixture") {
  // differences chosen so the rewards are exactly (0.5, 0.7, 0.9)
  const std::vector<double> preds = {0.0, 0.0, std::log(7.0 / 3.0), 0.0, std::log(9.0), 0.0};
  const std::vector<double> labels = {-2.8, -2.9, -1.0, -2.5, -1.1, -2.45};
  const std::vector<std::pair<int, int>> pairs = {{0, 1}, {2, 3}, {4, 5}};
  PairBatch b = make_batch(preds, labels, pairs);

  auto adv = grcf::advantage_weights(b, 1e-8, true);
  CHECK(adv.rewards[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(adv.rewards[1] == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(adv.rewards[2] == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(adv.advantages[0] == doctest::Approx(-1.2247448714).epsilon(1e-6));
  CHECK(adv.advantages[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(adv.advantages[2] == doctest::Approx(1.2247448714).epsilon(1e-6));
  CHECK(adv.weights[0] == doctest::Approx(1.2247448714).epsilon(1e-6));
  CHECK(adv.weights[1] == 0.0);
  CHECK(adv.weights[2] == 0.0);
  CHECK_FALSE(adv.degenerate);

  const OracleAdvantage o = oracle_advantage(preds, pairs, 1e-8, true);
  for (int k = 0; k < 3; ++k) {
    CHECK(adv.advantages[k] == doctest::Approx(o.advantages[k]).epsilon(1e-15));
    CHECK(adv.weights[k] == doctest::Approx(o.weights[k]).epsilon(1e-15));
  }
}

TEST_CASE("advantage degenerate branches") {
  // all rewards equal
  PairBatch b = make_batch({0.3, 0.0, 0.3, 0.0}, {1.0, 0.0, 2.0, 0.5}, {{0, 1}, {2, 3}});
  auto uniform = grcf::advantage_weights(b, 1e-8, true);
  CHECK(uniform.degenerate);
  CHECK(uniform.weights == std::vector<double>{1.0, 1.0});
  auto zeros = grcf::advantage_weights(b, 1e-8, false);
  CHECK(zeros.weights == std::vector<double>{0.0, 0.0});

  // single pair: std undefined, treated as 0
  PairBatch one = make_batch({0.7, 0.0}, {1.0, 0.0}, {{0, 1}});
  CHECK(grcf::advantage_weights(one, 1e-8, true).degenerate);

  PairBatch empty = make_batch({0.0, 0.0}, {1.0, 0.0}, {});
  CHECK_THROWS_AS(grcf::advantage_weights(empty, 1e-8, true), grcf::LossError);
}

TEST_CASE("group-aware ranking loss fixture") {
  // margins arranged so the hinges come out (0.5, 0.2, 0.0)
  const double m_base = 0.2 + std::log(7.0 / 3.0);
  const MarginParams mp{0.5, m_base, 0.0};
  const std::vector<double> preds = {0.0, 0.0, std::log(7.0 / 3.0), 0.0, std::log(9.0), 0.0};
  const std::vector<double> labels = {-2.8, -2.9, -1.0, -2.5, -1.1, -2.45};
  const std::vector<std::pair<int, int>> pairs = {{0, 1}, {2, 3}, {4, 5}};
  // membership sanity for the engineered labels
  REQUIRE(grcf::group_distance(-2.8, -2.9, kSpec) == 0);
  REQUIRE(grcf::group_distance(-1.0, -2.5, kSpec) == 1);
  REQUIRE(grcf::group_distance(-1.1, -2.45, kSpec) == 1);

  PairBatch b = make_batch(preds, labels, pairs);
  const double loss = grcf::group_aware_ranking_loss(b, kSpec, mp, 1e-8, true).scalar();
  CHECK(loss == doctest::Approx(0.20412).epsilon(5e-5));
  CHECK(loss ==
        doctest::Approx(oracle_group_loss(preds, labels, pairs, kSpec, mp, 1e-8, true))
            .epsilon(1e-15));
}

TEST_CASE("group loss trivial zeros") {
  // correctly ordered with difference above every margin
  PairBatch wide = make_batch({2.0, -2.0, 2.5, -2.5}, {2.5, -2.5, 2.8, -2.8}, {{0, 1}, {2, 3}});
  CHECK(grcf::group_aware_ranking_loss(wide, kSpec, kMargins, 1e-8, true).scalar() == 0.0);

  // all advantages non-negative never happens alone; force zero weights
  Rng rng(5);
  PairBatch b = random_batch(rng, 6, 4);
  const std::vector<double> zero_w(4, 0.0);
  CHECK(grcf::group_aware_ranking_loss(b, kSpec, kMargins, 1e-8, true, &zero_w).scalar() == 0.0);
}

TEST_CASE("distribution regularization") {
  std::vector<double> labels = {1.0, -0.5, 2.0, 0.25};
  SUBCASE("identical distributions") {
    Tensor y = Tensor::variable_column(labels);
    CHECK(grcf::distribution_reg_loss(y, labels, 1.0).scalar() == 0.0);
  }
  SUBCASE("hinge arithmetic") {
    // construct mean gap so (Mp-Mr)^2 = 1.5 while stds match, gamma = 1
    std::vector<double> shifted;
    const double delta = std::sqrt(1.5);
    for (double v : labels) shifted.push_back(v + delta);
    Tensor y = Tensor::variable_column(shifted);
    CHECK(grcf::distribution_reg_loss(y, labels, 1.0).scalar() ==
          doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("constant shift with zero gamma") {
    std::vector<double> shifted;
    for (double v : labels) shifted.push_back(v + 1.0);
    Tensor y = Tensor::variable_column(shifted);
    CHECK(grcf::distribution_reg_loss(y, labels, 0.0).scalar() ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("too few samples") {
    std::vector<double> one = {1.0};
    Tensor y = Tensor::variable_column(one);
    CHECK_THROWS_AS(grcf::distribution_reg_loss(y, one, 1.0), grcf::LossError);
  }
}

TEST_CASE("boundary loss") {
  std::vector<double> inside = {1.0, -2.0, 0.0};
  CHECK(grcf::boundary_loss(Tensor::variable_column(inside), 3.0).scalar() == 0.0);
  std::vector<double> mixed = {3.5, -2.0, 1.0};
  CHECK(grcf::boundary_loss(Tensor::variable_column(mixed), 3.0).scalar() ==
        doctest::Approx(0.5 / 3.0).epsilon(1e-12));
  std::vector<double> below = {-4.0};
  CHECK(grcf::boundary_loss(Tensor::variable_column(below), 3.0).scalar() ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mae loss and subgradient") {
  std::vector<double> labels = {0.0, 0.0};
  std::vector<double> same = {0.0, 0.0};
  CHECK(grcf::mae_loss(Tensor::variable_column(same), labels).scalar() == 0.0);
  std::vector<double> preds = {1.0, 2.0};
  Tensor y = Tensor::variable_column(preds);
  Tensor loss = grcf::mae_loss(y, labels);
  CHECK(loss.scalar() == doctest::Approx(1.5).epsilon(1e-14));
  grcf::backward(loss);
  CHECK(y.grad()(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(y.grad()(1, 0) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("stage1 composition") {
  Rng rng(11);
  PairBatch b = random_batch(rng, 8, 6);
  Stage1Weights w;
  SUBCASE("zero weights") {
    w.lambda_group = w.lambda_reg = w.lambda_bound = 0.0;
    CHECK(grcf::stage1_loss(b, w, kSpec, kMargins).total.scalar() == 0.0);
  }
  SUBCASE("single term isolation") {
    w.lambda_group = 1.0;
    w.lambda_reg = w.lambda_bound = 0.0;
    const double expect = grcf::group_aware_ranking_loss(b, kSpec, kMargins, 1e-8, true).scalar();
    CHECK(grcf::stage1_loss(b, w, kSpec, kMargins).total.scalar() ==
          doctest::Approx(expect).epsilon(1e-15));
  }
  SUBCASE("default weights against the term oracle") {
    std::vector<double> preds(b.labels.size());
    for (std::size_t i = 0; i < preds.size(); ++i) preds[i] = b.predictions.value()(i, 0);
    auto terms = grcf::stage1_loss(b, w, kSpec, kMargins);
    const double og = oracle_group_loss(preds, b.labels, b.ranking_pairs, kSpec, kMargins, 1e-8, true);
    const double orr = oracle_reg(preds, b.labels, w.gamma);
    const double ob = oracle_bound(preds, w.half_range);
    CHECK(terms.group == doctest::Approx(og).epsilon(1e-13));
    CHECK(terms.reg == doctest::Approx(orr).epsilon(1e-13));
    CHECK(terms.bound == doctest::Approx(ob).epsilon(1e-13));
    CHECK(terms.total.scalar() ==
          doctest::Approx(0.9 * og + 0.005 * orr + 0.001 * ob).epsilon(1e-13));
  }
}

TEST_CASE("stage2 composition") {
  Rng rng(12);
  PairBatch b = random_batch(rng, 8, 6);
  Stage1Weights s1;
  Stage2Weights w;
  SUBCASE("pure MAE reduction") {
    w.beta_mae = 1.0;
    w.beta_group = w.beta_bound = 0.0;
    std::vector<double> preds(b.labels.size());
    for (std::size_t i = 0; i < preds.size(); ++i) preds[i] = b.predictions.value()(i, 0);
    CHECK(grcf::stage2_loss(b, w, s1, kSpec, kMargins).total.scalar() ==
          doctest::Approx(oracle_mae(preds, b.labels)).epsilon(1e-14));
  }
  SUBCASE("zero weights") {
    w.beta_mae = w.beta_group = w.beta_bound = 0.0;
    CHECK(grcf::stage2_loss(b, w, s1, kSpec, kMargins).total.scalar() == 0.0);
  }
  SUBCASE("seeded batch oracle") {
    std::vector<double> preds(b.labels.size());
    for (std::size_t i = 0; i < preds.size(); ++i) preds[i] = b.predictions.value()(i, 0);
    auto terms = grcf::stage2_loss(b, w, s1, kSpec, kMargins);
    const double expect =
        0.3 * oracle_mae(preds, b.labels) +
        0.3 * oracle_group_loss(preds, b.labels, b.ranking_pairs, kSpec, kMargins, 1e-8, true) +
        0.02 * oracle_bound(preds, 3.0);
    CHECK(terms.total.scalar() == doctest::Approx(expect).epsilon(1e-13));
  }
}

TEST_CASE("weights are gradient-invisible") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    PairBatch b = random_batch(rng, 10, 8);
    Tensor loss = grcf::group_aware_ranking_loss(b, kSpec, kMargins, 1e-8, true);
    grcf::backward(loss);

    // constants-treated oracle gradient: only the hinge path carries gradient
    std::vector<double> preds(b.labels.size());
    for (std::size_t i = 0; i < preds.size(); ++i) preds[i] = b.predictions.value()(i, 0);
    const OracleAdvantage adv = oracle_advantage(preds, b.ranking_pairs, 1e-8, true);
    std::vector<double> expect(preds.size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(b.ranking_pairs.size());
    for (std::size_t k = 0; k < b.ranking_pairs.size(); ++k) {
      auto [i, j] = b.ranking_pairs[k];
      const double m =
          grcf::dynamic_margin(grcf::group_distance(b.labels[i], b.labels[j], kSpec), kMargins);
      if (m - (preds[i] - preds[j]) > 0.0) {
        expect[i] -= adv.weights[k] * inv_n;
        expect[j] += adv.weights[k] * inv_n;
      }
    }
    for (std::size_t i = 0; i < preds.size(); ++i) {
      CHECK(b.predictions.grad()(static_cast<Eigen::Index>(i), 0) ==
            doctest::Approx(expect[i]).scale(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("advantage statistics invariants") {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    PairBatch b = random_batch(rng, 12, 10);
    auto adv = grcf::advantage_weights(b, 1e-8, true);
    if (adv.degenerate) continue;
    double mean_a = 0.0;
    for (double a : adv.advantages) mean_a += a;
    mean_a /= adv.advantages.size();
    CHECK(std::abs(mean_a) < 1e-9);
    for (std::size_t k = 0; k < adv.weights.size(); ++k) {
      CHECK((adv.weights[k] > 0.0) == (adv.advantages[k] < 0.0));
    }
    // normalization: std(A) * (sigma_r + eps) / sigma_r == 1
    double mu_r = 0.0;
    for (double r : adv.rewards) mu_r += r;
    mu_r /= adv.rewards.size();
    double var_r = 0.0, var_a = 0.0;
    for (double r : adv.rewards) var_r += (r - mu_r) * (r - mu_r);
    for (double a : adv.advantages) var_a += (a - mean_a) * (a - mean_a);
    const double sigma_r = std::sqrt(var_r / adv.rewards.size());
    const double sigma_a = std::sqrt(var_a / adv.advantages.size());
    CHECK(std::abs(sigma_a * (sigma_r + 1e-8) / sigma_r - 1.0) < 1e-9);
  }
}

TEST_CASE("finite differences with frozen weights") {
  Rng rng(15);
  for (int trial = 0; trial < 5; ++trial) {
    PairBatch b = random_batch(rng, 8, 6);
    const auto adv = grcf::advantage_weights(b, 1e-8, true);
    const Tensor wrt[] = {b.predictions};

    double gap;
    {
      grcf::KinkGuard guard;
      (void)grcf::stage1_loss(b, Stage1Weights{}, kSpec, kMargins, &adv.weights);
      gap = guard.min_gap();
    }
    if (gap <= 1e-2) continue;

    const double err_group = grcf::finite_diff_check(
        [&]() {
          return grcf::group_aware_ranking_loss(b, kSpec, kMargins, 1e-8, true, &adv.weights);
        },
        wrt, 1e-6);
    CHECK(err_group < 1e-4);

    const double err_s1 = grcf::finite_diff_check(
        [&]() { return grcf::stage1_loss(b, Stage1Weights{}, kSpec, kMargins, &adv.weights).total; },
        wrt, 1e-6);
    CHECK(err_s1 < 1e-4);

    const double err_s2 = grcf::finite_diff_check(
        [&]() {
          return grcf::stage2_loss(b, Stage2Weights{}, Stage1Weights{}, kSpec, kMargins, &adv.weights)
              .total;
        },
        wrt, 1e-6);
    CHECK(err_s2 < 1e-4);
  }
}

TEST_CASE("separation loss") {
  auto run = [](std::vector<double> pos, std::vector<double> neg, double m) {
    return grcf::cls_separation_loss(Tensor::variable_column(pos), Tensor::variable_column(neg), m)
        .scalar();
  };
  CHECK(run({2.0}, {-2.0}, 1.0) == 0.0);
  CHECK(run({0.2}, {0.0}, 1.0) ==
        doctest::Approx((1.0 - osigmoid(0.2)) * 0.8).epsilon(1e-12));
  CHECK(run({0.2}, {0.0}, 1.0) == doctest::Approx(0.36020).epsilon(1e-4));
  CHECK(run({0.5}, {0.5}, 1.0) == doctest::Approx(0.5 * 1.0).epsilon(1e-12));
}

TEST_CASE("compactness loss") {
  SUBCASE("identical logits") {
    std::vector<double> a = {1.0, -0.3}, b = {1.0, -0.3};
    CHECK(grcf::cls_compactness_loss(Tensor::variable_column(a), Tensor::variable_column(b), 1e-8,
                                     3.0)
              .scalar() == 0.0);
  }
  SUBCASE("sign routing over two pairs") {
    // L_dist = (0, 4): rewards (1, e^-4); far pair gets A < 0 and contributes
    std::vector<double> yi = {1.0, 2.0}, yj = {1.0, 0.0};
    const double l = grcf::cls_compactness_loss(Tensor::variable_column(yi),
                                                Tensor::variable_column(yj), 1e-8, 3.0)
                         .scalar();
    const double r0 = 1.0, r1 = std::exp(-4.0);
    const double mu = 0.5 * (r0 + r1);
    const double sd = std::sqrt(((r0 - mu) * (r0 - mu) + (r1 - mu) * (r1 - mu)) / 2.0);
    const double a1 = std::clamp((r1 - mu) / (sd + 1e-8), -3.0, 3.0);
    const double expect = (0.0 + std::max(0.0, 4.0 * (-a1))) / 2.0;
    CHECK(a1 < 0.0);
    CHECK(l == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("single pair degenerates to zero") {
    std::vector<double> yi = {1.4}, yj = {0.2};
    CHECK(grcf::cls_compactness_loss(Tensor::variable_column(yi), Tensor::variable_column(yj),
                                     1e-8, 3.0)
              .scalar() == 0.0);
  }
}

TEST_CASE("classification boundary loss") {
  std::vector<double> pos = {1.5, 2.0};
  std::vector<double> neg = {-1.5, -3.0};
  CHECK(grcf::cls_boundary_loss(Tensor::variable_column(pos), Tensor::variable_column(neg), 1.0)
            .scalar() == 0.0);
  std::vector<double> zero = {0.0};
  CHECK(grcf::cls_boundary_loss(Tensor::variable_column(zero), Tensor(), 1.0).scalar() ==
        doctest::Approx(1.0).epsilon(1e-14));
  std::vector<double> half = {0.5};
  CHECK(grcf::cls_boundary_loss(Tensor(), Tensor::variable_column(half), 1.0).scalar() ==
        doctest::Approx(1.5).epsilon(1e-14));
}

TEST_CASE("calibration loss") {
  std::vector<double> balanced = {1.0, -1.0};
  CHECK(grcf::cls_calibration_loss(Tensor::variable_column(balanced)).scalar() == 0.0);
  std::vector<double> off = {1.0, 2.0};
  CHECK(grcf::cls_calibration_loss(Tensor::variable_column(off)).scalar() ==
        doctest::Approx(1.5).epsilon(1e-14));
  std::vector<double> zeros(5, 0.0);
  CHECK(grcf::cls_calibration_loss(Tensor::variable_column(zeros)).scalar() == 0.0);
}

TEST_CASE("bce loss") {
  auto run = [](double logit, int label) {
    std::vector<double> z = {logit};
    std::vector<int> s = {label};
    return grcf::bce_loss(Tensor::variable_column(z), s).scalar();
  };
  CHECK(run(0.0, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(run(50.0, 1) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(run(-50.0, 1) == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(run(-50.0, 0) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("classification stage 1 composition") {
  Rng rng(16);
  ClsPairBatch b;
  std::vector<double> logits;
  const int n = 10;
  for (int i = 0; i < n; ++i) {
    b.labels.push_back(i % 2);
    logits.push_back(rng.uniform(-2.0, 2.0));
  }
  b.logits = Tensor::variable_column(logits);
  for (int k = 0; k < 6; ++k) {
    int p = 2 * rng.uniform_int(n / 2) + 1;  // odd = label 1
    int q = 2 * rng.uniform_int(n / 2);      // even = label 0
    b.het_pairs.emplace_back(p, q);
  }
  for (int k = 0; k < 4; ++k) {
    int i = 2 * rng.uniform_int(n / 2);
    int j = 2 * rng.uniform_int(n / 2);
    b.hom_pairs.emplace_back(i, j);
  }

  ClsWeights w;
  SUBCASE("zero weights") {
    w.theta_sep = w.theta_comp = w.theta_bound = w.theta_cal = 0.0;
    CHECK(grcf::cls_stage1_loss(b, w).total.scalar() == 0.0);
  }
  SUBCASE("term isolation and seeded oracle") {
    auto terms = grcf::cls_stage1_loss(b, w);
    // oracle, plain doubles
    double sep = 0.0;
    for (auto [p, q] : b.het_pairs) {
      const double d = logits[p] - logits[q];
      sep += (1.0 - osigmoid(d)) * std::max(0.0, w.m_sep - d);
    }
    sep /= b.het_pairs.size();
    std::vector<double> dist, reward;
    for (auto [i, j] : b.hom_pairs) {
      const double d = (logits[i] - logits[j]) * (logits[i] - logits[j]);
      dist.push_back(d);
      reward.push_back(std::exp(-d));
    }
    double mu = 0.0;
    for (double r : reward) mu += r;
    mu /= reward.size();
    double var = 0.0;
    for (double r : reward) var += (r - mu) * (r - mu);
    const double sd = std::sqrt(var / reward.size());
    double comp = 0.0;
    for (std::size_t k = 0; k < dist.size(); ++k) {
      const double a = std::clamp((reward[k] - mu) / (sd + w.adv_eps), -w.a_clip, w.a_clip);
      comp += std::max(0.0, dist[k] * (-a));
    }
    comp /= dist.size();
    double bound_pos = 0.0, bound_neg = 0.0;
    int n_pos = 0, n_neg = 0;
    for (int i = 0; i < n; ++i) {
      if (b.labels[i] == 1) {
        bound_pos += std::max(0.0, w.m_b - logits[i]);
        ++n_pos;
      } else {
        bound_neg += std::max(0.0, logits[i] + w.m_b);
        ++n_neg;
      }
    }
    const double bound = bound_pos / n_pos + bound_neg / n_neg;
    double cal = 0.0;
    for (double z : logits) cal += z;
    cal = std::abs(cal / n);

    CHECK(terms.sep == doctest::Approx(sep).epsilon(1e-13));
    CHECK(terms.comp == doctest::Approx(comp).epsilon(1e-13));
    CHECK(terms.bound == doctest::Approx(bound).epsilon(1e-13));
    CHECK(terms.cal == doctest::Approx(cal).epsilon(1e-13));
    CHECK(terms.total.scalar() ==
          doctest::Approx(w.theta_sep * sep + w.theta_comp * comp + w.theta_bound * bound +
                          w.theta_cal * cal)
              .epsilon(1e-13));
  }
}

TEST_CASE("classification losses pass finite differences with frozen weights") {
  Rng rng(17);
  for (int trial = 0; trial < 8; ++trial) {
    ClsPairBatch b;
    std::vector<double> logits;
    const int n = 8;
    for (int i = 0; i < n; ++i) {
      b.labels.push_back(i % 2);
      logits.push_back(rng.uniform(-2.0, 2.0));
    }
    b.logits = Tensor::variable_column(logits);
    for (int k = 0; k < 5; ++k) {
      b.het_pairs.emplace_back(2 * rng.uniform_int(n / 2) + 1, 2 * rng.uniform_int(n / 2));
    }
    for (int k = 0; k < 4; ++k) {
      b.hom_pairs.emplace_back(2 * rng.uniform_int(n / 2), 2 * rng.uniform_int(n / 2));
    }
    ClsWeights w;

    // freeze the detached quantities at the base point
    grcf::ClsFrozen frozen;
    for (auto [p, q] : b.het_pairs) {
      frozen.sep_weights.push_back(1.0 - osigmoid(logits[p] - logits[q]));
    }
    {
      std::vector<double> dist, reward;
      for (auto [i, j] : b.hom_pairs) {
        const double d = (logits[i] - logits[j]) * (logits[i] - logits[j]);
        dist.push_back(d);
        reward.push_back(std::exp(-d));
      }
      double mu = 0.0;
      for (double r : reward) mu += r;
      mu /= reward.size();
      double var = 0.0;
      for (double r : reward) var += (r - mu) * (r - mu);
      const double sd = std::sqrt(var / reward.size());
      for (double r : reward) {
        frozen.comp_neg_advantage.push_back(
            -std::clamp((r - mu) / (sd + w.adv_eps), -w.a_clip, w.a_clip));
      }
    }

    double gap;
    {
      grcf::KinkGuard guard;
      (void)grcf::cls_stage1_loss(b, w, &frozen);
      gap = guard.min_gap();
    }
    if (gap <= 1e-2) continue;

    const Tensor wrt[] = {b.logits};
    const double err = grcf::finite_diff_check(
        [&]() { return grcf::cls_stage1_loss(b, w, &frozen).total; }, wrt, 1e-6);
    CHECK(err < 1e-4);

    std::vector<int> all_labels = b.labels;
    const double err_bce = grcf::finite_diff_check(
        [&]() { return grcf::bce_loss(b.logits, all_labels); }, wrt, 1e-6);
    CHECK(err_bce < 1e-4);
  }
}

TEST_CASE("scaling invariance of boundary, mae, and hinge activations") {
  Rng rng(18);
  const double c = 2.5;
  PairBatch b = random_batch(rng, 10, 8);
  std::vector<double> preds(b.labels.size());
  for (std::size_t i = 0; i < preds.size(); ++i) preds[i] = b.predictions.value()(i, 0);

  std::vector<double> preds_c, labels_c;
  for (double p : preds) preds_c.push_back(c * p);
  for (double s : b.labels) labels_c.push_back(c * s);
  PairBatch bc = make_batch(preds_c, labels_c, b.ranking_pairs);

  const GroupSpec spec_c = GroupSpec::make(GroupStrategy::Overlap5, 3.0 * c);
  const MarginParams mp_c{kMargins.intra * c, kMargins.base * c, kMargins.step * c};

  CHECK(grcf::boundary_loss(bc.predictions, 3.0 * c).scalar() ==
        doctest::Approx(c * grcf::boundary_loss(b.predictions, 3.0).scalar()).epsilon(1e-12));
  CHECK(grcf::mae_loss(bc.predictions, bc.labels).scalar() ==
        doctest::Approx(c * grcf::mae_loss(b.predictions, b.labels).scalar()).epsilon(1e-12));

  // hinge activation patterns are preserved
  for (std::size_t k = 0; k < b.ranking_pairs.size(); ++k) {
    auto [i, j] = b.ranking_pairs[k];
    const double m =
        grcf::dynamic_margin(grcf::group_distance(b.labels[i], b.labels[j], kSpec), kMargins);
    const double mc =
        grcf::dynamic_margin(grcf::group_distance(labels_c[i], labels_c[j], spec_c), mp_c);
    CHECK(mc == doctest::Approx(c * m).epsilon(1e-12));
    const bool active = m - (preds[i] - preds[j]) > 0.0;
    const bool active_c = mc - (preds_c[i] - preds_c[j]) > 0.0;
    CHECK(active == active_c);
  }
}

TEST_CASE("every loss is zero on its satisfied configuration") {
  // ordering satisfied with wide margins
  PairBatch wide = make_batch({3.0, -3.0}, {2.9, -2.9}, {{0, 1}});
  CHECK(grcf::group_aware_ranking_loss(wide, kSpec, kMargins, 1e-8, true).scalar() == 0.0);
  std::vector<double> match = {1.0, -1.0, 0.5};
  CHECK(grcf::distribution_reg_loss(Tensor::variable_column(match), match, 0.0).scalar() == 0.0);
  CHECK(grcf::boundary_loss(Tensor::variable_column(match), 3.0).scalar() == 0.0);
  CHECK(grcf::mae_loss(Tensor::variable_column(match), match).scalar() == 0.0);
}

}  // TEST_SUITE
