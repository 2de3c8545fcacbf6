#include "grcf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace grcf {

double cosine_lr(int step, int total_steps, double base_lr) {
  if (total_steps <= 0) return base_lr;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

double clip_grad_norm(std::span<const NamedParam> params, double max_norm) {
  if (max_norm <= 0.0) throw TrainError("clip_grad_norm: max_norm must be positive");
  double sq = 0.0;
  for (const NamedParam& p : params) {
    if (!p.tensor.has_grad()) continue;
    sq += p.tensor.grad().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw TrainError("clip_grad_norm: non-finite gradient norm");
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (const NamedParam& p : params) {
      Tensor t = p.tensor;
      t.scale_grad(scale);
    }
  }
  return norm;
}

AdamW::AdamW(std::span<const NamedParam> params, const OptimShared& shared)
    : params_(params.begin(), params.end()), shared_(shared) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const NamedParam& p : params_) {
    m_.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
    v_.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
  }
}

void AdamW::step(const std::map<ParamGroup, double>& group_lrs, double weight_decay) {
  ++step_count_;
  const double b1 = shared_.beta1;
  const double b2 = shared_.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    NamedParam& p = params_[i];
    const auto lr_it = group_lrs.find(p.group);
    if (lr_it == group_lrs.end()) throw TrainError("AdamW: no learning rate for group");
    const double lr = lr_it->second;
    Matrix g = p.tensor.has_grad() ? p.tensor.grad()
                                   : Matrix::Zero(p.tensor.rows(), p.tensor.cols());
    if (!g.allFinite()) throw TrainError("AdamW: non-finite gradient for " + p.name);
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g.cwiseProduct(g);
    Matrix m_hat = m_[i] / bias1;
    Matrix v_hat = v_[i] / bias2;
    Matrix update =
        (m_hat.array() / (v_hat.array().sqrt() + shared_.adam_eps)).matrix() + weight_decay * p.tensor.value();
    p.tensor.mutable_value() -= lr * update;
  }
}

void save_loss_log(const std::string& path, std::span<const LossLogRow> rows,
                   const std::string& header) {
  std::ofstream out(path);
  if (!out) throw TrainError("cannot write loss log: " + path);
  out << header << "\n";
  out.precision(17);
  for (const LossLogRow& r : rows) {
    out << r.step << ',' << r.group << ',' << r.reg << ',' << r.bound << ',' << r.mae << ','
        << r.total << "\n";
  }
}

double validation_pairwise_acc(const Model& model, std::span<const Sample> val) {
  std::vector<double> y;
  y.reserve(val.size());
  for (const Sample& s : val) y.push_back(s.label);
  return pairwise_acc(y, model.predict(val));
}

double validation_mae(const Model& model, std::span<const Sample> val) {
  std::vector<double> y;
  y.reserve(val.size());
  for (const Sample& s : val) y.push_back(s.label);
  return mae(y, model.predict(val));
}

double validation_acc2(const Model& model, std::span<const Sample> val) {
  std::vector<int> labels;
  labels.reserve(val.size());
  for (const Sample& s : val) labels.push_back(s.label > 0.5 ? 1 : 0);
  const auto logits = model.predict(val);
  long long ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if ((labels[i] == 1) == (logits[i] > 0.0)) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(labels.size());
}

namespace {

struct MicroBatch {
  std::vector<int> slots;                           // dataset indices, 2 per pair
  std::vector<double> labels;                       // per slot
  std::vector<std::pair<int, int>> ranking_pairs;   // regression orientation
  std::vector<std::pair<int, int>> het_pairs;       // classification (pos, neg)
  std::vector<std::pair<int, int>> hom_pairs;       // classification same-label
};

MicroBatch build_micro_batch(std::span<const Sample> train, std::span<const DataPair> pairs,
                             bool classification) {
  MicroBatch mb;
  mb.slots.reserve(pairs.size() * 2);
  mb.labels.reserve(pairs.size() * 2);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const DataPair& p = pairs[k];
    mb.slots.push_back(p.i);
    mb.slots.push_back(p.j);
    const double yi = train[static_cast<std::size_t>(p.i)].label;
    const double yj = train[static_cast<std::size_t>(p.j)].label;
    mb.labels.push_back(yi);
    mb.labels.push_back(yj);
    const int a = static_cast<int>(2 * k);
    const int b = a + 1;
    if (classification) {
      const int bi = yi > 0.5 ? 1 : 0;
      const int bj = yj > 0.5 ? 1 : 0;
      if (bi != bj) {
        mb.het_pairs.emplace_back(bi == 1 ? a : b, bi == 1 ? b : a);
      } else {
        mb.hom_pairs.emplace_back(a, b);
      }
    } else {
      if (yi > yj) {
        mb.ranking_pairs.emplace_back(a, b);
      } else if (yj > yi) {
        mb.ranking_pairs.emplace_back(b, a);
      }
      // tied labels stay in the flattened batch but carry no ranking pair
    }
  }
  return mb;
}

struct StagePlan {
  int stage = 1;
  std::map<ParamGroup, double> base_lrs;
  double weight_decay = 0.0;
  int epochs = 0;
  bool maximize_metric = true;
};

StageResult run_stage(Model& model, std::span<const Sample> train,
                      std::span<const DataPair> pairs, std::span<const Sample> val,
                      const TrainConfig& cfg, const StagePlan& plan) {
  const bool classification = model.config().head == HeadKind::Classification;
  const GroupSpec spec = cfg.group_spec();
  Stage1Weights s1w = cfg.stage1_weights;
  s1w.half_range = model.config().half_range;

  StageResult result;
  result.best_params = model.snapshot();

  auto validate = [&]() {
    if (plan.stage == 1) return validation_pairwise_acc(model, val);
    return classification ? validation_acc2(model, val) : validation_mae(model, val);
  };

  result.best_metric = validate();
  result.best_epoch = 0;
  if (plan.epochs == 0) return result;

  AdamW opt(model.parameters(), cfg.optim);
  model.zero_grad();

  Rng master(cfg.seed);
  Rng shuffle_rng = master.fork(100 + static_cast<std::uint64_t>(plan.stage));
  Rng dropout_rng = master.fork(200 + static_cast<std::uint64_t>(plan.stage));

  const int micro_per_epoch =
      static_cast<int>((pairs.size() + cfg.optim.batch_pairs - 1) / cfg.optim.batch_pairs);
  const int steps_per_epoch =
      (micro_per_epoch + cfg.optim.grad_accum_steps - 1) / cfg.optim.grad_accum_steps;
  const int total_steps = steps_per_epoch * plan.epochs;

  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  long micro_step = 0;
  int opt_step = 0;
  for (int epoch = 1; epoch <= plan.epochs; ++epoch) {
    // seeded Fisher-Yates
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(
          shuffle_rng.below(static_cast<std::uint64_t>(i)));
      std::swap(order[i - 1], order[j]);
    }

    std::size_t at = 0;
    while (at < order.size()) {
      // one accumulation window
      const int micro_in_window = std::min<int>(
          cfg.optim.grad_accum_steps,
          static_cast<int>((order.size() - at + cfg.optim.batch_pairs - 1) /
                           cfg.optim.batch_pairs));
      bool window_ok = true;
      for (int w = 0; w < micro_in_window && window_ok; ++w) {
        const std::size_t take = std::min<std::size_t>(
            static_cast<std::size_t>(cfg.optim.batch_pairs), order.size() - at);
        std::vector<DataPair> chunk;
        chunk.reserve(take);
        for (std::size_t k = 0; k < take; ++k) {
          chunk.push_back(pairs[order[at + k]]);
        }
        at += take;

        MicroBatch mb = build_micro_batch(train, chunk, classification);
        try {
          FeatureBatch fb = FeatureBatch::from_indices(train, mb.slots, model.config());
          Tensor out = model.forward(fb, /*training=*/true, &dropout_rng);

          LossLogRow row;
          row.step = ++micro_step;
          Tensor total;
          if (classification) {
            ClsPairBatch cb;
            cb.logits = out;
            cb.labels.reserve(mb.labels.size());
            for (double v : mb.labels) cb.labels.push_back(v > 0.5 ? 1 : 0);
            cb.het_pairs = mb.het_pairs;
            cb.hom_pairs = mb.hom_pairs;
            if (plan.stage == 1) {
              auto terms = cls_stage1_loss(cb, cfg.cls_weights);
              row.group = terms.sep;
              row.reg = terms.comp;
              row.bound = terms.bound;
              row.mae = terms.cal;
              total = terms.total;
            } else {
              total = bce_loss(cb.logits, cb.labels);
              row.mae = total.scalar();
            }
          } else {
            PairBatch pb;
            pb.predictions = out;
            pb.labels = mb.labels;
            pb.ranking_pairs = mb.ranking_pairs;
            if (plan.stage == 1) {
              auto terms = stage1_loss(pb, s1w, spec, cfg.margins);
              row.group = terms.group;
              row.reg = terms.reg;
              row.bound = terms.bound;
              {
                // logged for the curves; not part of the stage-1 objective
                double mae_val = 0.0;
                for (std::size_t i = 0; i < pb.labels.size(); ++i) {
                  mae_val += std::abs(out.value()(static_cast<Eigen::Index>(i), 0) -
                                      pb.labels[i]);
                }
                row.mae = mae_val / static_cast<double>(pb.labels.size());
              }
              total = terms.total;
            } else {
              auto terms = stage2_loss(pb, cfg.stage2_weights, s1w, spec, cfg.margins);
              row.group = terms.group;
              row.bound = terms.bound;
              row.mae = terms.mae;
              total = terms.total;
            }
          }
          row.total = total.scalar();
          result.log.push_back(row);
          if (!std::isfinite(row.total)) throw TrainError("non-finite loss");
          backward(scale(total, 1.0 / static_cast<double>(micro_in_window)));
        } catch (const std::runtime_error& e) {
          result.diverged = true;
          result.divergence_note = e.what();
          window_ok = false;
        }
      }
      if (!window_ok) break;

      try {
        clip_grad_norm(model.parameters(), cfg.optim.grad_clip_norm);
        std::map<ParamGroup, double> lrs;
        for (const auto& [group, base] : plan.base_lrs) {
          lrs[group] = cosine_lr(opt_step, total_steps, base);
        }
        opt.step(lrs, plan.weight_decay);
      } catch (const std::runtime_error& e) {
        result.diverged = true;
        result.divergence_note = e.what();
      }
      model.zero_grad();
      ++opt_step;
      if (result.diverged) break;
    }
    if (result.diverged) break;

    const double metric = validate();
    result.val_history.emplace_back(epoch, metric);
    const bool better =
        plan.maximize_metric ? metric > result.best_metric : metric < result.best_metric;
    if (better) {
      result.best_metric = metric;
      result.best_epoch = epoch;
      result.best_params = model.snapshot();
    }
  }

  if (result.diverged) {
    // fall back to the last good checkpoint
    model.restore(result.best_params);
  }
  return result;
}

}  // namespace

StageResult run_stage1(Model& model, std::span<const Sample> train,
                       std::span<const DataPair> pairs, std::span<const Sample> val,
                       const TrainConfig& cfg) {
  StagePlan plan;
  plan.stage = 1;
  plan.base_lrs = {{ParamGroup::Head, cfg.stage1.head_lr},
                   {ParamGroup::Top, cfg.stage1.encoder_base_lr},
                   {ParamGroup::Base, cfg.stage1.encoder_base_lr}};
  plan.weight_decay = cfg.stage1.weight_decay;
  plan.epochs = cfg.stage1.epochs;
  plan.maximize_metric = true;  // PairwiseAcc
  return run_stage(model, train, pairs, val, cfg, plan);
}

StageResult run_stage2(Model& model, std::span<const Sample> train,
                       std::span<const DataPair> pairs, std::span<const Sample> val,
                       const TrainConfig& cfg) {
  StagePlan plan;
  plan.stage = 2;
  plan.base_lrs = {{ParamGroup::Head, cfg.stage2.head_lr},
                   {ParamGroup::Top, cfg.stage2.encoder_top_lr},
                   {ParamGroup::Base, cfg.stage2.encoder_base_lr}};
  plan.weight_decay = cfg.stage2.weight_decay;
  plan.epochs = cfg.stage2.epochs;
  // MAE minimized for regression, Acc2 maximized for classification
  plan.maximize_metric = model.config().head == HeadKind::Classification;
  return run_stage(model, train, pairs, val, cfg, plan);
}

}  // namespace grcf
