#include "grcf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

namespace grcf {

using nlohmann::json;

namespace {

void require_same_size(std::span<const double> a, std::span<const double> b, const char* who) {
  if (a.size() != b.size()) throw MetricError(std::string(who) + ": length mismatch");
  if (a.empty()) throw MetricError(std::string(who) + ": empty input");
}

double clamp_to(double v, double bound) { return std::clamp(v, -bound, bound); }

int acc3_bin(double v) {
  if (v < -0.1) return -1;
  if (v > 0.1) return 1;
  return 0;
}

int acc5_bin(double v) {
  if (v <= -0.7) return -2;
  if (v < -0.1) return -1;
  if (v <= 0.1) return 0;
  if (v < 0.7) return 1;
  return 2;
}

}  // namespace

double pairwise_acc(std::span<const double> y, std::span<const double> y_hat, bool exclude_ties) {
  require_same_size(y, y_hat, "pairwise_acc");
  if (y.size() < 2) throw MetricError("pairwise_acc: needs at least 2 samples");
  long long correct = 0, total = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = i + 1; j < y.size(); ++j) {
      if (exclude_ties && y[i] == y[j]) continue;
      ++total;
      if ((y[i] > y[j]) == (y_hat[i] > y_hat[j])) ++correct;
    }
  }
  if (total == 0) throw MetricError("pairwise_acc: no pairs left after tie exclusion");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double acc_k(std::span<const double> y, std::span<const double> y_hat, int k, double half_range) {
  require_same_size(y, y_hat, "acc_k");
  long long correct = 0, total = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double truth = y[i];
    const double pred = clamp_to(y_hat[i], half_range);
    switch (k) {
      case 7: {
        ++total;
        if (std::round(std::clamp(pred, -3.0, 3.0)) == std::round(std::clamp(truth, -3.0, 3.0))) {
          ++correct;
        }
        break;
      }
      case 5: {
        ++total;
        if (acc5_bin(pred) == acc5_bin(truth)) ++correct;
        break;
      }
      case 3: {
        ++total;
        if (acc3_bin(pred) == acc3_bin(truth)) ++correct;
        break;
      }
      case 2: {
        if (truth == 0.0) break;  // zero-valued instances excluded
        ++total;
        if ((truth > 0.0) == (pred > 0.0)) ++correct;
        break;
      }
      default:
        throw MetricError("acc_k: k must be one of 7, 5, 3, 2");
    }
  }
  if (total == 0) throw MetricError("acc_k: no samples left in the denominator");
  return static_cast<double>(correct) / static_cast<double>(total);
}

namespace {

double f1_from_flags(const std::vector<bool>& truth, const std::vector<bool>& pred) {
  long long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] && pred[i]) ++tp;
    if (!truth[i] && pred[i]) ++fp;
    if (truth[i] && !pred[i]) ++fn;
  }
  const double p = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  const double r = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

}  // namespace

double f1_regression(std::span<const double> y, std::span<const double> y_hat) {
  require_same_size(y, y_hat, "f1_regression");
  std::vector<bool> truth, pred;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 0.0) continue;
    truth.push_back(y[i] > 0.0);
    pred.push_back(y_hat[i] > 0.0);
  }
  if (truth.empty()) throw MetricError("f1_regression: every label is zero");
  return f1_from_flags(truth, pred);
}

double f1_classification(std::span<const int> labels, std::span<const double> logits) {
  if (labels.size() != logits.size() || labels.empty()) {
    throw MetricError("f1_classification: length mismatch or empty input");
  }
  std::vector<bool> truth, pred;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    truth.push_back(labels[i] == 1);
    pred.push_back(logits[i] > 0.0);
  }
  return f1_from_flags(truth, pred);
}

double mae(std::span<const double> y, std::span<const double> y_hat) {
  require_same_size(y, y_hat, "mae");
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) total += std::abs(y[i] - y_hat[i]);
  return total / static_cast<double>(y.size());
}

double pearson(std::span<const double> a, std::span<const double> b) {
  require_same_size(a, b, "pearson");
  if (a.size() < 2) throw MetricError("pearson: needs at least 2 samples");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) throw MetricError("pearson: zero variance");
  return cov / std::sqrt(va * vb);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  require_same_size(a, b, "spearman");
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  return pearson(ra, rb);
}

json EvalReport::to_json() const {
  json j;
  j["pairwise_acc"] = pairwise;
  j["acc7"] = acc7 ? json(*acc7) : json(nullptr);
  j["acc5"] = acc5 ? json(*acc5) : json(nullptr);
  j["acc3"] = acc3 ? json(*acc3) : json(nullptr);
  j["acc2"] = acc2;
  j["f1"] = f1;
  j["mae"] = mae;
  j["corr"] = corr ? json(*corr) : json(nullptr);
  j["n_samples"] = n_samples;
  j["n_excluded_zero"] = n_excluded_zero;
  return j;
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  auto row = [&](const char* name, const std::optional<double>& v) {
    os << "  " << name;
    for (std::size_t pad = std::string(name).size(); pad < 14; ++pad) os << ' ';
    if (v) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%10.6f", *v);
      os << buf;
    } else {
      os << "       n/a";
    }
    os << "\n";
  };
  os << "metric              value\n";
  row("PairwiseAcc", pairwise);
  row("Acc7", acc7);
  row("Acc5", acc5);
  row("Acc3", acc3);
  row("Acc2", acc2);
  row("F1", f1);
  row("MAE", mae);
  row("Corr", corr);
  os << "  samples       " << n_samples << " (zero-label excluded: " << n_excluded_zero << ")\n";
  return os.str();
}

EvalReport evaluate_regression(std::span<const double> y, std::span<const double> y_hat,
                               double half_range, bool exclude_ties) {
  EvalReport r;
  r.n_samples = static_cast<int>(y.size());
  for (double v : y) r.n_excluded_zero += v == 0.0 ? 1 : 0;
  r.pairwise = pairwise_acc(y, y_hat, exclude_ties);
  r.acc7 = acc_k(y, y_hat, 7, half_range);
  r.acc5 = acc_k(y, y_hat, 5, half_range);
  r.acc3 = acc_k(y, y_hat, 3, half_range);
  r.acc2 = acc_k(y, y_hat, 2, half_range);
  r.f1 = f1_regression(y, y_hat);
  r.mae = mae(y, y_hat);
  try {
    r.corr = pearson(y, y_hat);
  } catch (const MetricError&) {
    r.corr = std::nullopt;
  }
  return r;
}

EvalReport evaluate_classification(std::span<const int> labels, std::span<const double> logits) {
  if (labels.size() != logits.size() || labels.empty()) {
    throw MetricError("evaluate_classification: length mismatch or empty input");
  }
  EvalReport r;
  r.n_samples = static_cast<int>(labels.size());
  std::vector<double> y(labels.size());
  std::vector<double> prob(labels.size());
  long long correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    y[i] = static_cast<double>(labels[i]);
    prob[i] = 1.0 / (1.0 + std::exp(-logits[i]));
    if ((labels[i] == 1) == (logits[i] > 0.0)) ++correct;
  }
  r.pairwise = pairwise_acc(y, std::span<const double>(logits));
  r.acc2 = static_cast<double>(correct) / static_cast<double>(labels.size());
  r.f1 = f1_classification(labels, logits);
  r.mae = mae(y, prob);
  try {
    r.corr = pearson(y, std::span<const double>(logits));
  } catch (const MetricError&) {
    r.corr = std::nullopt;
  }
  return r;
}

}  // namespace grcf
