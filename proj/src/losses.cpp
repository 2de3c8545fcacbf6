#include "grcf/losses.hpp"

#include <algorithm>
#include <cmath>

namespace grcf {

namespace {

double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

void require_column(const Tensor& t, const char* who) {
  if (!t.defined() || t.cols() != 1) {
    throw LossError(std::string(who) + ": predictions must be a column tensor");
  }
}

}  // namespace

void Stage1Weights::validate() const {
  if (lambda_group < 0.0 || lambda_reg < 0.0 || lambda_bound < 0.0) {
    throw LossError("Stage1Weights: loss weights must be non-negative");
  }
  if (gamma < 0.0) throw LossError("Stage1Weights: gamma must be non-negative");
  if (half_range <= 0.0) throw LossError("Stage1Weights: half_range must be positive");
  if (adv_eps <= 0.0) throw LossError("Stage1Weights: adv_eps must be positive");
}

void Stage2Weights::validate() const {
  if (beta_mae < 0.0 || beta_group < 0.0 || beta_bound < 0.0) {
    throw LossError("Stage2Weights: loss weights must be non-negative");
  }
}

void ClsWeights::validate() const {
  if (theta_sep < 0.0 || theta_comp < 0.0 || theta_bound < 0.0 || theta_cal < 0.0) {
    throw LossError("ClsWeights: loss weights must be non-negative");
  }
  if (m_sep < 0.0 || m_b < 0.0 || a_clip < 0.0) {
    throw LossError("ClsWeights: margins and clip bound must be non-negative");
  }
  if (adv_eps <= 0.0) throw LossError("ClsWeights: adv_eps must be positive");
}

void PairBatch::validate() const {
  require_column(predictions, "PairBatch");
  if (static_cast<std::size_t>(predictions.rows()) != labels.size()) {
    throw LossError("PairBatch: predictions and labels disagree in length");
  }
  const int n = static_cast<int>(labels.size());
  for (const auto& [i, j] : ranking_pairs) {
    if (i < 0 || j < 0 || i >= n || j >= n) throw LossError("PairBatch: pair index out of range");
    if (!(labels[static_cast<std::size_t>(i)] > labels[static_cast<std::size_t>(j)])) {
      throw LossError("PairBatch: ranking pair violates s_i > s_j");
    }
  }
}

void ClsPairBatch::validate() const {
  require_column(logits, "ClsPairBatch");
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw LossError("ClsPairBatch: logits and labels disagree in length");
  }
  const int n = static_cast<int>(labels.size());
  for (int b : labels) {
    if (b != 0 && b != 1) throw LossError("ClsPairBatch: labels must be bits");
  }
  for (const auto& [p, q] : het_pairs) {
    if (p < 0 || q < 0 || p >= n || q >= n) throw LossError("ClsPairBatch: index out of range");
    if (labels[static_cast<std::size_t>(p)] != 1 || labels[static_cast<std::size_t>(q)] != 0) {
      throw LossError("ClsPairBatch: heterogeneous pair must be (positive, negative)");
    }
  }
  for (const auto& [i, j] : hom_pairs) {
    if (i < 0 || j < 0 || i >= n || j >= n) throw LossError("ClsPairBatch: index out of range");
    if (labels[static_cast<std::size_t>(i)] != labels[static_cast<std::size_t>(j)]) {
      throw LossError("ClsPairBatch: homogeneous pair must share the label");
    }
  }
}

// ---- regression ------------------------------------------------------------

Tensor rank_hinge(const Tensor& y_i, const Tensor& y_j, double margin) {
  return relu(add_scalar(neg(sub(y_i, y_j)), margin));
}

AdvantageResult advantage_weights(const PairBatch& batch, double eps, bool fallback_uniform) {
  batch.validate();
  if (batch.ranking_pairs.empty()) throw LossError("advantage_weights: empty pair list");
  if (eps <= 0.0) throw LossError("advantage_weights: eps must be positive");

  const Matrix& pred = batch.predictions.value();
  AdvantageResult out;
  out.rewards.reserve(batch.ranking_pairs.size());
  for (const auto& [i, j] : batch.ranking_pairs) {
    out.rewards.push_back(stable_sigmoid(pred(i, 0) - pred(j, 0)));
  }
  const std::size_t n = out.rewards.size();
  double mu = 0.0;
  for (double r : out.rewards) mu += r;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (double r : out.rewards) var += (r - mu) * (r - mu);
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);

  out.advantages.reserve(n);
  for (double r : out.rewards) out.advantages.push_back((r - mu) / (sd + eps));

  out.degenerate = sd < eps;
  out.weights.reserve(n);
  if (out.degenerate) {
    out.weights.assign(n, fallback_uniform ? 1.0 : 0.0);
  } else {
    for (double a : out.advantages) out.weights.push_back(std::max(0.0, -a));
  }
  return out;
}

Tensor group_aware_ranking_loss(const PairBatch& batch, const GroupSpec& spec,
                                const MarginParams& mp, double eps, bool fallback_uniform,
                                const std::vector<double>* fixed_weights) {
  batch.validate();
  if (batch.ranking_pairs.empty()) throw LossError("group_aware_ranking_loss: empty pair list");

  std::vector<int> idx_i, idx_j;
  std::vector<double> margins;
  idx_i.reserve(batch.ranking_pairs.size());
  idx_j.reserve(batch.ranking_pairs.size());
  margins.reserve(batch.ranking_pairs.size());
  for (const auto& [i, j] : batch.ranking_pairs) {
    idx_i.push_back(i);
    idx_j.push_back(j);
    const int dg = group_distance(batch.labels[static_cast<std::size_t>(i)],
                                  batch.labels[static_cast<std::size_t>(j)], spec);
    margins.push_back(dynamic_margin(dg, mp));
  }

  std::vector<double> weights;
  if (fixed_weights) {
    if (fixed_weights->size() != batch.ranking_pairs.size()) {
      throw LossError("group_aware_ranking_loss: fixed weight count mismatch");
    }
    weights = *fixed_weights;
  } else {
    weights = advantage_weights(batch, eps, fallback_uniform).weights;
  }

  Tensor y_i = gather_rows(batch.predictions, idx_i);
  Tensor y_j = gather_rows(batch.predictions, idx_j);
  Tensor diff = sub(y_i, y_j);
  Tensor hinge = relu(sub(Tensor::constant_column(margins), diff));
  return mean(mul(Tensor::constant_column(weights), hinge));
}

Tensor distribution_reg_loss(const Tensor& y_hat, std::span<const double> labels, double gamma) {
  require_column(y_hat, "distribution_reg_loss");
  if (y_hat.rows() < 2) throw LossError("distribution_reg_loss: needs at least 2 samples");
  if (static_cast<std::size_t>(y_hat.rows()) != labels.size()) {
    throw LossError("distribution_reg_loss: predictions and labels disagree in length");
  }
  double mr = 0.0;
  for (double s : labels) mr += s;
  mr /= static_cast<double>(labels.size());
  double var = 0.0;
  for (double s : labels) var += (s - mr) * (s - mr);
  const double dr = std::sqrt(var / static_cast<double>(labels.size()));

  Tensor mean_term = relu(add_scalar(square(add_scalar(mean(y_hat), -mr)), -gamma));
  Tensor std_term = relu(add_scalar(square(add_scalar(std_pop(y_hat), -dr)), -gamma));
  return add(mean_term, std_term);
}

Tensor boundary_loss(const Tensor& y_hat, double half_range) {
  require_column(y_hat, "boundary_loss");
  return mean(relu(add_scalar(abs(y_hat), -half_range)));
}

Tensor mae_loss(const Tensor& y_hat, std::span<const double> labels) {
  require_column(y_hat, "mae_loss");
  if (static_cast<std::size_t>(y_hat.rows()) != labels.size()) {
    throw LossError("mae_loss: predictions and labels disagree in length");
  }
  return mean(abs(sub(y_hat, Tensor::constant_column(labels))));
}

Stage1Terms stage1_loss(const PairBatch& batch, const Stage1Weights& w, const GroupSpec& spec,
                        const MarginParams& mp, const std::vector<double>* fixed_weights) {
  w.validate();
  batch.validate();
  Stage1Terms out;
  Tensor group = batch.ranking_pairs.empty()
                     ? Tensor::constant(0.0)
                     : group_aware_ranking_loss(batch, spec, mp, w.adv_eps, w.fallback_uniform,
                                                fixed_weights);
  Tensor reg = distribution_reg_loss(batch.predictions, batch.labels, w.gamma);
  Tensor bound = boundary_loss(batch.predictions, w.half_range);
  out.group = group.scalar();
  out.reg = reg.scalar();
  out.bound = bound.scalar();
  out.total = add(add(scale(group, w.lambda_group), scale(reg, w.lambda_reg)),
                  scale(bound, w.lambda_bound));
  return out;
}

Stage2Terms stage2_loss(const PairBatch& batch, const Stage2Weights& w, const Stage1Weights& s1,
                        const GroupSpec& spec, const MarginParams& mp,
                        const std::vector<double>* fixed_weights) {
  w.validate();
  batch.validate();
  Stage2Terms out;
  Tensor mae = mae_loss(batch.predictions, batch.labels);
  Tensor group = batch.ranking_pairs.empty()
                     ? Tensor::constant(0.0)
                     : group_aware_ranking_loss(batch, spec, mp, s1.adv_eps, s1.fallback_uniform,
                                                fixed_weights);
  Tensor bound = boundary_loss(batch.predictions, s1.half_range);
  out.mae = mae.scalar();
  out.group = group.scalar();
  out.bound = bound.scalar();
  out.total =
      add(add(scale(mae, w.beta_mae), scale(group, w.beta_group)), scale(bound, w.beta_bound));
  return out;
}

// ---- classification ---------------------------------------------------------

Tensor cls_separation_loss(const Tensor& pos_logits, const Tensor& neg_logits, double m_sep,
                           const std::vector<double>* fixed_weights) {
  require_column(pos_logits, "cls_separation_loss");
  require_column(neg_logits, "cls_separation_loss");
  if (pos_logits.rows() != neg_logits.rows()) {
    throw LossError("cls_separation_loss: pair sides disagree in length");
  }
  if (pos_logits.rows() == 0) throw LossError("cls_separation_loss: empty pair list");

  Tensor diff = sub(pos_logits, neg_logits);
  std::vector<double> weights;
  if (fixed_weights) {
    weights = *fixed_weights;
    if (weights.size() != static_cast<std::size_t>(diff.rows())) {
      throw LossError("cls_separation_loss: fixed weight count mismatch");
    }
  } else {
    weights.reserve(static_cast<std::size_t>(diff.rows()));
    for (Eigen::Index k = 0; k < diff.rows(); ++k) {
      weights.push_back(1.0 - stable_sigmoid(diff.value()(k, 0)));
    }
  }
  Tensor hinge = relu(add_scalar(neg(diff), m_sep));
  return mean(mul(Tensor::constant_column(weights), hinge));
}

Tensor cls_compactness_loss(const Tensor& logits_i, const Tensor& logits_j, double eps,
                            double a_clip, const std::vector<double>* fixed_neg_advantage) {
  require_column(logits_i, "cls_compactness_loss");
  require_column(logits_j, "cls_compactness_loss");
  if (logits_i.rows() != logits_j.rows()) {
    throw LossError("cls_compactness_loss: pair sides disagree in length");
  }
  if (logits_i.rows() == 0) throw LossError("cls_compactness_loss: empty pair list");
  if (eps <= 0.0) throw LossError("cls_compactness_loss: eps must be positive");

  Tensor dist = square(sub(logits_i, logits_j));
  std::vector<double> neg_adv;
  if (fixed_neg_advantage) {
    neg_adv = *fixed_neg_advantage;
    if (neg_adv.size() != static_cast<std::size_t>(dist.rows())) {
      throw LossError("cls_compactness_loss: fixed advantage count mismatch");
    }
  } else {
    const std::size_t n = static_cast<std::size_t>(dist.rows());
    std::vector<double> reward(n);
    for (std::size_t k = 0; k < n; ++k) {
      reward[k] = std::exp(-dist.value()(static_cast<Eigen::Index>(k), 0));
    }
    double mu = 0.0;
    for (double r : reward) mu += r;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double r : reward) var += (r - mu) * (r - mu);
    const double sd = std::sqrt(var / static_cast<double>(n));
    neg_adv.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double a = std::clamp((reward[k] - mu) / (sd + eps), -a_clip, a_clip);
      neg_adv[k] = -a;
    }
  }
  return mean(relu(mul(dist, Tensor::constant_column(neg_adv))));
}

Tensor cls_boundary_loss(const Tensor& pos_logits, const Tensor& neg_logits, double m_b) {
  Tensor total = Tensor::constant(0.0);
  bool any = false;
  if (pos_logits.defined() && pos_logits.rows() > 0) {
    require_column(pos_logits, "cls_boundary_loss");
    total = add(total, mean(relu(add_scalar(neg(pos_logits), m_b))));
    any = true;
  }
  if (neg_logits.defined() && neg_logits.rows() > 0) {
    require_column(neg_logits, "cls_boundary_loss");
    total = add(total, mean(relu(add_scalar(neg_logits, m_b))));
    any = true;
  }
  if (!any) throw LossError("cls_boundary_loss: both sides empty");
  return total;
}

Tensor cls_calibration_loss(const Tensor& logits) {
  require_column(logits, "cls_calibration_loss");
  return abs(mean(logits));
}

Tensor bce_loss(const Tensor& logits, std::span<const int> labels) {
  require_column(logits, "bce_loss");
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw LossError("bce_loss: logits and labels disagree in length");
  }
  std::vector<double> bits;
  bits.reserve(labels.size());
  for (int b : labels) {
    if (b != 0 && b != 1) throw LossError("bce_loss: labels must be bits");
    bits.push_back(static_cast<double>(b));
  }
  // max(z, 0) - z*s + log(1 + exp(-|z|))
  Tensor z = logits;
  Tensor softplus = log(add_scalar(exp(neg(abs(z))), 1.0));
  Tensor per = add(sub(relu(z), mul(z, Tensor::constant_column(bits))), softplus);
  return mean(per);
}

ClsStage1Terms cls_stage1_loss(const ClsPairBatch& batch, const ClsWeights& w,
                               const ClsFrozen* frozen) {
  w.validate();
  batch.validate();

  ClsStage1Terms out;

  Tensor sep = Tensor::constant(0.0);
  if (!batch.het_pairs.empty()) {
    std::vector<int> pos_idx, neg_idx;
    for (const auto& [p, q] : batch.het_pairs) {
      pos_idx.push_back(p);
      neg_idx.push_back(q);
    }
    sep = cls_separation_loss(gather_rows(batch.logits, pos_idx),
                              gather_rows(batch.logits, neg_idx), w.m_sep,
                              frozen ? &frozen->sep_weights : nullptr);
  }

  Tensor comp = Tensor::constant(0.0);
  if (!batch.hom_pairs.empty()) {
    std::vector<int> idx_i, idx_j;
    for (const auto& [i, j] : batch.hom_pairs) {
      idx_i.push_back(i);
      idx_j.push_back(j);
    }
    comp = cls_compactness_loss(gather_rows(batch.logits, idx_i),
                                gather_rows(batch.logits, idx_j), w.adv_eps, w.a_clip,
                                frozen ? &frozen->comp_neg_advantage : nullptr);
  }

  // boundary runs over the batch samples, not the pairs
  std::vector<int> pos_samples, neg_samples;
  for (std::size_t k = 0; k < batch.labels.size(); ++k) {
    (batch.labels[k] == 1 ? pos_samples : neg_samples).push_back(static_cast<int>(k));
  }
  Tensor pos_logits =
      pos_samples.empty() ? Tensor() : gather_rows(batch.logits, pos_samples);
  Tensor neg_logits =
      neg_samples.empty() ? Tensor() : gather_rows(batch.logits, neg_samples);
  Tensor bound = cls_boundary_loss(pos_logits, neg_logits, w.m_b);

  Tensor cal = cls_calibration_loss(batch.logits);

  out.sep = sep.scalar();
  out.comp = comp.scalar();
  out.bound = bound.scalar();
  out.cal = cal.scalar();
  out.total = add(add(scale(sep, w.theta_sep), scale(comp, w.theta_comp)),
                  add(scale(bound, w.theta_bound), scale(cal, w.theta_cal)));
  return out;
}

}  // namespace grcf
