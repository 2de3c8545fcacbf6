#pragma once

// Two-stage training orchestration: AdamW with per-group learning rates,
// cosine decay to zero, global-norm gradient clipping, per-epoch validation
// with best-checkpoint retention, and deterministic seeding throughout.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "grcf/config.hpp"
#include "grcf/data.hpp"
#include "grcf/losses.hpp"
#include "grcf/metrics.hpp"
#include "grcf/model.hpp"

namespace grcf {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// base_lr * 0.5 * (1 + cos(pi * step / total))
double cosine_lr(int step, int total_steps, double base_lr);

// scales all gradients so the global L2 norm is at most max_norm; returns
// the pre-clip norm
double clip_grad_norm(std::span<const NamedParam> params, double max_norm);

class AdamW {
 public:
  AdamW(std::span<const NamedParam> params, const OptimShared& shared);

  // one decoupled-weight-decay step; each parameter uses its group's rate
  void step(const std::map<ParamGroup, double>& group_lrs, double weight_decay);

  long steps_taken() const { return step_count_; }

 private:
  std::vector<NamedParam> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  OptimShared shared_;
  long step_count_ = 0;
};

// Per-micro-batch loss terms. For regression runs the columns are the
// group / reg / bound / mae terms; classification stage 1 logs
// sep / comp / bound / cal under the same slots and stage 2 logs BCE
// in the mae slot.
struct LossLogRow {
  long step = 0;
  double group = 0.0;
  double reg = 0.0;
  double bound = 0.0;
  double mae = 0.0;
  double total = 0.0;
};

void save_loss_log(const std::string& path, std::span<const LossLogRow> rows,
                   const std::string& header);

struct StageResult {
  std::vector<Matrix> best_params;
  double best_metric = 0.0;
  int best_epoch = -1;
  std::vector<LossLogRow> log;
  std::vector<std::pair<int, double>> val_history;  // (epoch, metric)
  bool diverged = false;
  std::string divergence_note;
};

// Stage 1: ranking objective, two rate groups, best validation PairwiseAcc.
StageResult run_stage1(Model& model, std::span<const Sample> train,
                       std::span<const DataPair> pairs, std::span<const Sample> val,
                       const TrainConfig& cfg);

// Stage 2: calibration objective from the current parameters, three rate
// groups, best validation MAE (regression) or Acc2 (classification).
StageResult run_stage2(Model& model, std::span<const Sample> train,
                       std::span<const DataPair> pairs, std::span<const Sample> val,
                       const TrainConfig& cfg);

// validation metrics used for checkpoint selection
double validation_pairwise_acc(const Model& model, std::span<const Sample> val);
double validation_mae(const Model& model, std::span<const Sample> val);
double validation_acc2(const Model& model, std::span<const Sample> val);

}  // namespace grcf
