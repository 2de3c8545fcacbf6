#pragma once

// Evaluation metrics: pairwise ranking accuracy, Acc-k bins, binary F1,
// MAE, Pearson and Spearman correlation, and the assembled report.

#include <json.hpp>

#include <optional>
#include <span>
#include <stdexcept>
#include <string>

namespace grcf {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fraction of unordered pairs whose predicted order matches the label
// order, scored literally: a pair counts as correct iff (y_i > y_j) and
// (yhat_i > yhat_j) agree. exclude_ties drops tied-label pairs instead.
double pairwise_acc(std::span<const double> y, std::span<const double> y_hat,
                    bool exclude_ties = false);

// k in {7, 5, 3, 2}. Acc7 clamps to [-3, 3] and rounds half away from zero;
// Acc2 compares signs with zero-valued labels excluded; Acc3/Acc5 use the
// 0.1 / 0.7 cutoffs. Predictions are clamped to the annotation range first.
double acc_k(std::span<const double> y, std::span<const double> y_hat, int k,
             double half_range = 3.0);

// positive class = score > 0, zero-valued labels excluded
double f1_regression(std::span<const double> y, std::span<const double> y_hat);
// positive class = label 1, prediction = logit > 0
double f1_classification(std::span<const int> labels, std::span<const double> logits);

double mae(std::span<const double> y, std::span<const double> y_hat);

// Pearson correlation; zero variance on either side is an error
double pearson(std::span<const double> a, std::span<const double> b);

// Spearman rank correlation with average ranks for ties
double spearman(std::span<const double> a, std::span<const double> b);

struct EvalReport {
  double pairwise = 0.0;
  std::optional<double> acc7, acc5, acc3;  // regression only
  double acc2 = 0.0;
  double f1 = 0.0;
  double mae = 0.0;
  std::optional<double> corr;  // absent when the variance degenerates
  int n_samples = 0;
  int n_excluded_zero = 0;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

EvalReport evaluate_regression(std::span<const double> y, std::span<const double> y_hat,
                               double half_range, bool exclude_ties = false);
EvalReport evaluate_classification(std::span<const int> labels, std::span<const double> logits);

}  // namespace grcf
