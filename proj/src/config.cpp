#include "grcf/config.hpp"

#include <fstream>

namespace grcf {

using nlohmann::json;

GroupSpec TrainConfig::group_spec() const {
  if (explicit_intervals) {
    GroupSpec spec;
    spec.strategy = strategy;
    spec.half_range = model.half_range;
    spec.intervals = *explicit_intervals;
    if (spec.intervals.empty()) throw ConfigError("groups: explicit intervals are empty");
    return spec;
  }
  return GroupSpec::make(strategy, model.half_range);
}

void TrainConfig::validate() const {
  model.validate();
  margins.validate();
  stage1_weights.validate();
  stage2_weights.validate();
  cls_weights.validate();
  // zero rates are legal (they freeze the affected groups)
  if (stage1.head_lr < 0.0 || stage1.encoder_base_lr < 0.0 || stage2.head_lr < 0.0 ||
      stage2.encoder_top_lr < 0.0 || stage2.encoder_base_lr < 0.0) {
    throw ConfigError("optim: learning rates must be non-negative");
  }
  if (stage1.weight_decay < 0.0 || stage2.weight_decay < 0.0) {
    throw ConfigError("optim: weight decay must be non-negative");
  }
  if (stage1.epochs < 0 || stage2.epochs < 0) throw ConfigError("optim: epochs must be >= 0");
  if (optim.beta1 < 0.0 || optim.beta1 >= 1.0 || optim.beta2 < 0.0 || optim.beta2 >= 1.0) {
    throw ConfigError("optim: betas must lie in [0, 1)");
  }
  if (optim.adam_eps <= 0.0) throw ConfigError("optim: adam_eps must be positive");
  if (optim.grad_clip_norm <= 0.0) throw ConfigError("optim: grad_clip_norm must be positive");
  if (optim.batch_pairs < 1) throw ConfigError("optim: batch_pairs must be positive");
  if (optim.grad_accum_steps < 1) throw ConfigError("optim: grad_accum_steps must be positive");
  if (pairs.max_pairs < 1 || pairs.per_sample_factor < 1) {
    throw ConfigError("pairs: expansion bounds must be positive");
  }
  // S rides along with the model's annotation range
  if (stage1_weights.half_range != model.half_range) {
    throw ConfigError("stage1 half_range must equal the model half_range");
  }
}

json TrainConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["model"] = model.to_json();

  json groups;
  groups["strategy"] = to_string(strategy);
  if (explicit_intervals) {
    json arr = json::array();
    for (const Interval& iv : *explicit_intervals) arr.push_back({iv.lo, iv.hi});
    groups["intervals"] = std::move(arr);
  }
  j["groups"] = std::move(groups);

  j["margins"] = {{"intra", margins.intra}, {"base", margins.base}, {"step", margins.step}};

  j["stage1"] = {{"lambda_group", stage1_weights.lambda_group},
                 {"lambda_reg", stage1_weights.lambda_reg},
                 {"lambda_bound", stage1_weights.lambda_bound},
                 {"gamma", stage1_weights.gamma},
                 {"adv_eps", stage1_weights.adv_eps},
                 {"fallback_uniform", stage1_weights.fallback_uniform},
                 {"head_lr", stage1.head_lr},
                 {"encoder_base_lr", stage1.encoder_base_lr},
                 {"weight_decay", stage1.weight_decay},
                 {"epochs", stage1.epochs}};

  j["stage2"] = {{"beta_mae", stage2_weights.beta_mae},
                 {"beta_group", stage2_weights.beta_group},
                 {"beta_bound", stage2_weights.beta_bound},
                 {"head_lr", stage2.head_lr},
                 {"encoder_top_lr", stage2.encoder_top_lr},
                 {"encoder_base_lr", stage2.encoder_base_lr},
                 {"weight_decay", stage2.weight_decay},
                 {"epochs", stage2.epochs}};

  j["cls"] = {{"theta_sep", cls_weights.theta_sep},
              {"theta_comp", cls_weights.theta_comp},
              {"theta_bound", cls_weights.theta_bound},
              {"theta_cal", cls_weights.theta_cal},
              {"m_sep", cls_weights.m_sep},
              {"m_b", cls_weights.m_b},
              {"a_clip", cls_weights.a_clip},
              {"adv_eps", cls_weights.adv_eps}};

  j["optim"] = {{"beta1", optim.beta1},
                {"beta2", optim.beta2},
                {"adam_eps", optim.adam_eps},
                {"grad_clip_norm", optim.grad_clip_norm},
                {"batch_pairs", optim.batch_pairs},
                {"grad_accum_steps", optim.grad_accum_steps}};

  j["pairs"] = {{"max_pairs", pairs.max_pairs},
                {"per_sample_factor", pairs.per_sample_factor},
                {"explicit_pairs", pairs.explicit_pairs}};
  return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
  check_known_keys(
      j, {"seed", "model", "groups", "margins", "stage1", "stage2", "cls", "optim", "pairs"},
      "config");
  TrainConfig c;
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));

  if (j.contains("groups")) {
    const json& g = j.at("groups");
    check_known_keys(g, {"strategy", "intervals"}, "groups");
    if (g.contains("strategy")) {
      c.strategy = group_strategy_from_string(g.at("strategy").get<std::string>());
    }
    if (g.contains("intervals")) {
      std::vector<Interval> ivs;
      for (const auto& pair : g.at("intervals")) {
        if (!pair.is_array() || pair.size() != 2) {
          throw ConfigError("groups.intervals: each entry must be [lo, hi]");
        }
        ivs.push_back({pair.at(0).get<double>(), pair.at(1).get<double>()});
      }
      c.explicit_intervals = std::move(ivs);
    }
  }

  if (j.contains("margins")) {
    const json& m = j.at("margins");
    check_known_keys(m, {"intra", "base", "step"}, "margins");
    c.margins.intra = get_or(m, "intra", c.margins.intra);
    c.margins.base = get_or(m, "base", c.margins.base);
    c.margins.step = get_or(m, "step", c.margins.step);
  }

  if (j.contains("stage1")) {
    const json& s = j.at("stage1");
    check_known_keys(s,
                     {"lambda_group", "lambda_reg", "lambda_bound", "gamma", "adv_eps",
                      "fallback_uniform", "head_lr", "encoder_base_lr", "weight_decay", "epochs"},
                     "stage1");
    c.stage1_weights.lambda_group = get_or(s, "lambda_group", c.stage1_weights.lambda_group);
    c.stage1_weights.lambda_reg = get_or(s, "lambda_reg", c.stage1_weights.lambda_reg);
    c.stage1_weights.lambda_bound = get_or(s, "lambda_bound", c.stage1_weights.lambda_bound);
    c.stage1_weights.gamma = get_or(s, "gamma", c.stage1_weights.gamma);
    c.stage1_weights.adv_eps = get_or(s, "adv_eps", c.stage1_weights.adv_eps);
    c.stage1_weights.fallback_uniform =
        get_or(s, "fallback_uniform", c.stage1_weights.fallback_uniform);
    c.stage1.head_lr = get_or(s, "head_lr", c.stage1.head_lr);
    c.stage1.encoder_base_lr = get_or(s, "encoder_base_lr", c.stage1.encoder_base_lr);
    c.stage1.weight_decay = get_or(s, "weight_decay", c.stage1.weight_decay);
    c.stage1.epochs = get_or(s, "epochs", c.stage1.epochs);
  }

  if (j.contains("stage2")) {
    const json& s = j.at("stage2");
    check_known_keys(s,
                     {"beta_mae", "beta_group", "beta_bound", "head_lr", "encoder_top_lr",
                      "encoder_base_lr", "weight_decay", "epochs"},
                     "stage2");
    c.stage2_weights.beta_mae = get_or(s, "beta_mae", c.stage2_weights.beta_mae);
    c.stage2_weights.beta_group = get_or(s, "beta_group", c.stage2_weights.beta_group);
    c.stage2_weights.beta_bound = get_or(s, "beta_bound", c.stage2_weights.beta_bound);
    c.stage2.head_lr = get_or(s, "head_lr", c.stage2.head_lr);
    c.stage2.encoder_top_lr = get_or(s, "encoder_top_lr", c.stage2.encoder_top_lr);
    c.stage2.encoder_base_lr = get_or(s, "encoder_base_lr", c.stage2.encoder_base_lr);
    c.stage2.weight_decay = get_or(s, "weight_decay", c.stage2.weight_decay);
    c.stage2.epochs = get_or(s, "epochs", c.stage2.epochs);
  }

  if (j.contains("cls")) {
    const json& s = j.at("cls");
    check_known_keys(
        s, {"theta_sep", "theta_comp", "theta_bound", "theta_cal", "m_sep", "m_b", "a_clip",
            "adv_eps"},
        "cls");
    c.cls_weights.theta_sep = get_or(s, "theta_sep", c.cls_weights.theta_sep);
    c.cls_weights.theta_comp = get_or(s, "theta_comp", c.cls_weights.theta_comp);
    c.cls_weights.theta_bound = get_or(s, "theta_bound", c.cls_weights.theta_bound);
    c.cls_weights.theta_cal = get_or(s, "theta_cal", c.cls_weights.theta_cal);
    c.cls_weights.m_sep = get_or(s, "m_sep", c.cls_weights.m_sep);
    c.cls_weights.m_b = get_or(s, "m_b", c.cls_weights.m_b);
    c.cls_weights.a_clip = get_or(s, "a_clip", c.cls_weights.a_clip);
    c.cls_weights.adv_eps = get_or(s, "adv_eps", c.cls_weights.adv_eps);
  }

  if (j.contains("optim")) {
    const json& s = j.at("optim");
    check_known_keys(
        s, {"beta1", "beta2", "adam_eps", "grad_clip_norm", "batch_pairs", "grad_accum_steps"},
        "optim");
    c.optim.beta1 = get_or(s, "beta1", c.optim.beta1);
    c.optim.beta2 = get_or(s, "beta2", c.optim.beta2);
    c.optim.adam_eps = get_or(s, "adam_eps", c.optim.adam_eps);
    c.optim.grad_clip_norm = get_or(s, "grad_clip_norm", c.optim.grad_clip_norm);
    c.optim.batch_pairs = get_or(s, "batch_pairs", c.optim.batch_pairs);
    c.optim.grad_accum_steps = get_or(s, "grad_accum_steps", c.optim.grad_accum_steps);
  }

  if (j.contains("pairs")) {
    const json& s = j.at("pairs");
    check_known_keys(s, {"max_pairs", "per_sample_factor", "explicit_pairs"}, "pairs");
    c.pairs.max_pairs = get_or(s, "max_pairs", c.pairs.max_pairs);
    c.pairs.per_sample_factor = get_or(s, "per_sample_factor", c.pairs.per_sample_factor);
    c.pairs.explicit_pairs = get_or(s, "explicit_pairs", c.pairs.explicit_pairs);
  }

  c.stage1_weights.half_range = c.model.half_range;
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  return from_json(j);
}

void TrainConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config: " + path);
  out << to_json().dump(2) << "\n";
}

}  // namespace grcf
