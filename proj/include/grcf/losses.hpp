#pragma once

// Training objectives: Stage-1 ranking losses (group-aware ranking with
// advantage weighting, distribution regularization, boundary), Stage-2
// calibration, and the classification suite (separation, compactness,
// boundary, calibration, BCE).

#include <span>
#include <utility>
#include <vector>

#include "grcf/groups.hpp"
#include "grcf/tensor.hpp"

namespace grcf {

class LossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Stage1Weights {
  double lambda_group = 0.9;
  double lambda_reg = 0.005;
  double lambda_bound = 0.001;
  double gamma = 1.0;        // regularization margin
  double half_range = 3.0;   // S
  double adv_eps = 1e-8;
  bool fallback_uniform = true;

  void validate() const;
};

struct Stage2Weights {
  double beta_mae = 0.3;
  double beta_group = 0.3;
  double beta_bound = 0.02;

  void validate() const;
};

struct ClsWeights {
  double theta_sep = 1.0;
  double theta_comp = 0.5;
  double theta_bound = 0.2;
  double theta_cal = 0.1;
  double m_sep = 1.0;   // separation margin
  double m_b = 0.5;     // boundary margin
  double a_clip = 3.0;  // advantage clip bound
  double adv_eps = 1e-8;

  void validate() const;
};

// Flattened predictions of a pair batch plus the oriented ranking pairs.
// Every ranking pair (i, j) satisfies labels[i] > labels[j] strictly; tied
// sampled pairs are routed around the ranking loss but their predictions
// stay in the flattened batch.
struct PairBatch {
  Tensor predictions;  // [n x 1]
  std::vector<double> labels;
  std::vector<std::pair<int, int>> ranking_pairs;

  void validate() const;
};

// Classification batch: logits, bit labels, heterogeneous pairs oriented as
// (positive index, negative index), homogeneous pairs as sampled.
struct ClsPairBatch {
  Tensor logits;  // [n x 1]
  std::vector<int> labels;
  std::vector<std::pair<int, int>> het_pairs;
  std::vector<std::pair<int, int>> hom_pairs;

  void validate() const;
};

// Detached per-pair statistics of the advantage mechanism. Weights carry no
// gradient by construction.
struct AdvantageResult {
  std::vector<double> rewards;     // sigmoid(y_i - y_j)
  std::vector<double> advantages;  // (r - mean) / (std + eps)
  std::vector<double> weights;     // relu(-A), or the fallback
  bool degenerate = false;         // population std < eps
};

// ---- regression / stage losses --------------------------------------------

Tensor rank_hinge(const Tensor& y_i, const Tensor& y_j, double margin);

AdvantageResult advantage_weights(const PairBatch& batch, double eps, bool fallback_uniform);

// fixed_weights, when given, replaces the advantage computation; the
// finite-difference harness uses it to freeze weights at the base point.
Tensor group_aware_ranking_loss(const PairBatch& batch, const GroupSpec& spec,
                                const MarginParams& mp, double eps, bool fallback_uniform,
                                const std::vector<double>* fixed_weights = nullptr);

Tensor distribution_reg_loss(const Tensor& y_hat, std::span<const double> labels, double gamma);

Tensor boundary_loss(const Tensor& y_hat, double half_range);

Tensor mae_loss(const Tensor& y_hat, std::span<const double> labels);

// raw (unweighted) per-term values for logging; total is the weighted sum
struct Stage1Terms {
  Tensor total;
  double group = 0.0;
  double reg = 0.0;
  double bound = 0.0;
};

struct Stage2Terms {
  Tensor total;
  double mae = 0.0;
  double group = 0.0;
  double bound = 0.0;
};

Stage1Terms stage1_loss(const PairBatch& batch, const Stage1Weights& w, const GroupSpec& spec,
                        const MarginParams& mp,
                        const std::vector<double>* fixed_weights = nullptr);

Stage2Terms stage2_loss(const PairBatch& batch, const Stage2Weights& w,
                        const Stage1Weights& s1, const GroupSpec& spec, const MarginParams& mp,
                        const std::vector<double>* fixed_weights = nullptr);

// ---- classification losses -------------------------------------------------

Tensor cls_separation_loss(const Tensor& pos_logits, const Tensor& neg_logits, double m_sep,
                           const std::vector<double>* fixed_weights = nullptr);

Tensor cls_compactness_loss(const Tensor& logits_i, const Tensor& logits_j, double eps,
                            double a_clip,
                            const std::vector<double>* fixed_neg_advantage = nullptr);

// per-sample positioning loss; an empty side contributes zero
Tensor cls_boundary_loss(const Tensor& pos_logits, const Tensor& neg_logits, double m_b);

Tensor cls_calibration_loss(const Tensor& logits);

// numerically stable log-sum-exp form
Tensor bce_loss(const Tensor& logits, std::span<const int> labels);

struct ClsFrozen {
  std::vector<double> sep_weights;
  std::vector<double> comp_neg_advantage;
};

struct ClsStage1Terms {
  Tensor total;
  double sep = 0.0;
  double comp = 0.0;
  double bound = 0.0;
  double cal = 0.0;
};

ClsStage1Terms cls_stage1_loss(const ClsPairBatch& batch, const ClsWeights& w,
                               const ClsFrozen* frozen = nullptr);

}  // namespace grcf
