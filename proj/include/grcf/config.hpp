#pragma once

// The full training configuration: model dims, group strategy, margins,
// stage loss weights, per-stage optimizer settings, pair expansion, seed.
// JSON round-trips reject unknown keys.

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>

#include "grcf/groups.hpp"
#include "grcf/json_util.hpp"
#include "grcf/losses.hpp"
#include "grcf/model.hpp"

namespace grcf {

// Stage 1 trains two rate groups (head vs encoders); Stage 2 splits the
// unified encoder out into its own top rate.
struct Stage1Optim {
  double head_lr = 2e-3;
  double encoder_base_lr = 1e-3;
  double weight_decay = 2e-2;
  int epochs = 17;
};

struct Stage2Optim {
  double head_lr = 1e-3;
  double encoder_top_lr = 4e-4;
  double encoder_base_lr = 2e-4;
  double weight_decay = 1e-2;
  int epochs = 5;
};

struct OptimShared {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 1.0;
  int batch_pairs = 96;
  int grad_accum_steps = 8;
};

struct PairExpansion {
  int max_pairs = 50000;
  int per_sample_factor = 40;
  int explicit_pairs = -1;  // overrides the rule when non-negative

  int count_for(int n_samples) const {
    if (explicit_pairs >= 0) return explicit_pairs;
    return std::min(max_pairs, per_sample_factor * n_samples);
  }
};

struct TrainConfig {
  std::uint64_t seed = 42;
  ModelConfig model;
  GroupStrategy strategy = GroupStrategy::Overlap5;
  std::optional<std::vector<Interval>> explicit_intervals;
  MarginParams margins;
  Stage1Weights stage1_weights;
  Stage2Weights stage2_weights;
  ClsWeights cls_weights;
  Stage1Optim stage1;
  Stage2Optim stage2;
  OptimShared optim;
  PairExpansion pairs;

  GroupSpec group_spec() const;
  void validate() const;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::string& path);
  void save(const std::string& path) const;
};

}  // namespace grcf
