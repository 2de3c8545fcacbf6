#include "grcf/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "grcf/json_util.hpp"

namespace grcf {

using nlohmann::json;

void ModelConfig::validate() const {
  if (d_text < 1 || d_audio < 1 || d_vision < 1 || d_proj < 1 || d_fused < 1 || d_unified < 1) {
    throw ModelError("ModelConfig: all dims must be at least 1");
  }
  if (alpha <= 0.0) throw ModelError("ModelConfig: alpha must be positive");
  if (half_range <= 0.0) throw ModelError("ModelConfig: half_range must be positive");
  if (alpha < half_range) {
    throw ModelError("ModelConfig: alpha must cover the annotation range (alpha >= half_range)");
  }
  if (dropout_fusion < 0.0 || dropout_fusion >= 1.0 || dropout_unified < 0.0 ||
      dropout_unified >= 1.0) {
    throw ModelError("ModelConfig: dropout probabilities must lie in [0, 1)");
  }
}

json ModelConfig::to_json() const {
  json j;
  j["d_text"] = d_text;
  j["d_audio"] = d_audio;
  j["d_vision"] = d_vision;
  j["d_proj"] = d_proj;
  j["d_fused"] = d_fused;
  j["d_unified"] = d_unified;
  j["alpha"] = alpha;
  j["half_range"] = half_range;
  j["head"] = head == HeadKind::Regression ? "regression" : "classification";
  j["dropout_fusion"] = dropout_fusion;
  j["dropout_unified"] = dropout_unified;
  return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
  check_known_keys(j,
                   {"d_text", "d_audio", "d_vision", "d_proj", "d_fused", "d_unified", "alpha",
                    "half_range", "head", "dropout_fusion", "dropout_unified"},
                   "model config");
  ModelConfig c;
  c.d_text = get_or(j, "d_text", c.d_text);
  c.d_audio = get_or(j, "d_audio", c.d_audio);
  c.d_vision = get_or(j, "d_vision", c.d_vision);
  c.d_proj = get_or(j, "d_proj", c.d_proj);
  c.d_fused = get_or(j, "d_fused", c.d_fused);
  c.d_unified = get_or(j, "d_unified", c.d_unified);
  c.alpha = get_or(j, "alpha", c.alpha);
  c.half_range = get_or(j, "half_range", c.half_range);
  if (j.contains("head")) {
    const std::string h = j.at("head").get<std::string>();
    if (h == "regression") {
      c.head = HeadKind::Regression;
    } else if (h == "classification") {
      c.head = HeadKind::Classification;
    } else {
      throw ConfigError("model config: unknown head '" + h + "'");
    }
  }
  c.dropout_fusion = get_or(j, "dropout_fusion", c.dropout_fusion);
  c.dropout_unified = get_or(j, "dropout_unified", c.dropout_unified);
  c.validate();
  return c;
}

// ---- feature batch ----------------------------------------------------------

FeatureBatch FeatureBatch::from_samples(std::span<const Sample> samples, const ModelConfig& cfg) {
  std::vector<int> indices(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) indices[i] = static_cast<int>(i);
  return from_indices(samples, indices, cfg);
}

FeatureBatch FeatureBatch::from_indices(std::span<const Sample> dataset,
                                        std::span<const int> indices, const ModelConfig& cfg) {
  if (indices.empty()) throw ModelError("FeatureBatch: empty batch");
  for (int k : indices) {
    if (k < 0 || static_cast<std::size_t>(k) >= dataset.size()) {
      throw ModelError("FeatureBatch: sample index out of range");
    }
  }
  FeatureBatch b;
  b.size = static_cast<int>(indices.size());

  Matrix text(b.size, cfg.d_text);
  int max_la = 1, max_lv = 1;
  bool any_audio = false, any_vision = false;
  for (int k : indices) {
    const Sample& s = dataset[static_cast<std::size_t>(k)];
    if (s.text_emb.cols() != cfg.d_text) {
      throw ModelError("sample '" + s.id + "': text dim " + std::to_string(s.text_emb.cols()) +
                       " does not match config d_text " + std::to_string(cfg.d_text));
    }
    if (s.audio_valid > 0 && s.audio.cols() != cfg.d_audio) {
      throw ModelError("sample '" + s.id + "': audio dim " + std::to_string(s.audio.cols()) +
                       " does not match config d_audio " + std::to_string(cfg.d_audio));
    }
    if (s.vision_valid > 0 && s.vision.cols() != cfg.d_vision) {
      throw ModelError("sample '" + s.id + "': vision dim " + std::to_string(s.vision.cols()) +
                       " does not match config d_vision " + std::to_string(cfg.d_vision));
    }
    any_audio = any_audio || s.audio_valid > 0;
    any_vision = any_vision || s.vision_valid > 0;
    max_la = std::max(max_la, static_cast<int>(s.audio.rows()));
    max_lv = std::max(max_lv, static_cast<int>(s.vision.rows()));
  }
  b.audio_ablated = !any_audio;
  b.vision_ablated = !any_vision;
  b.len_audio = max_la;
  b.len_vision = max_lv;

  Matrix audio = Matrix::Zero(static_cast<Eigen::Index>(b.size) * max_la, cfg.d_audio);
  Matrix vision = Matrix::Zero(static_cast<Eigen::Index>(b.size) * max_lv, cfg.d_vision);
  Matrix audio_mask = Matrix::Zero(b.size, max_la);
  Matrix vision_mask = Matrix::Zero(b.size, max_lv);

  for (int i = 0; i < b.size; ++i) {
    const Sample& s = dataset[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])];
    text.row(i) = s.text_emb;
    if (!b.audio_ablated && s.audio_valid == 0) {
      throw ModelError("sample '" + s.id + "': empty modality sequence (audio)");
    }
    if (!b.vision_ablated && s.vision_valid == 0) {
      throw ModelError("sample '" + s.id + "': empty modality sequence (vision)");
    }
    if (s.audio_valid > 0) {
      audio.middleRows(static_cast<Eigen::Index>(i) * max_la, s.audio.rows()) = s.audio;
      audio_mask.row(i).head(s.audio_valid).setOnes();
    }
    if (s.vision_valid > 0) {
      vision.middleRows(static_cast<Eigen::Index>(i) * max_lv, s.vision.rows()) = s.vision;
      vision_mask.row(i).head(s.vision_valid).setOnes();
    }
  }
  b.text = Tensor::constant(std::move(text));
  b.audio = Tensor::constant(std::move(audio));
  b.vision = Tensor::constant(std::move(vision));
  b.audio_mask = std::move(audio_mask);
  b.vision_mask = std::move(vision_mask);
  return b;
}

// ---- free operations ---------------------------------------------------------

Tensor attention_pool(const Tensor& frames, int valid_len, const Tensor& w) {
  if (!frames.defined() || !w.defined()) throw ModelError("attention_pool: undefined input");
  if (valid_len < 1) throw ModelError("attention_pool: empty modality sequence");
  if (valid_len > frames.rows()) {
    throw ModelError("attention_pool: valid_len exceeds the stored frame count");
  }
  if (w.cols() != 1 || w.rows() != frames.cols()) {
    throw ModelError("attention_pool: score vector shape mismatch");
  }
  Tensor scores = reshape(matmul(frames, w), 1, frames.rows());
  Matrix mask = Matrix::Zero(1, frames.rows());
  mask.row(0).head(valid_len).setOnes();
  Tensor alpha = masked_softmax_rows(scores, mask);
  return row_blocks_weighted_sum(frames, alpha);
}

Tensor apply_dropout(const Tensor& x, double p, bool training, Rng* rng) {
  if (p < 0.0 || p >= 1.0) throw ModelError("apply_dropout: p must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  if (rng == nullptr) throw ModelError("apply_dropout: training mode needs an RNG");
  const double keep_scale = 1.0 / (1.0 - p);
  Matrix mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.rows(); ++i) {
    for (Eigen::Index j = 0; j < mask.cols(); ++j) {
      mask(i, j) = rng->uniform() < p ? 0.0 : keep_scale;
    }
  }
  return mul(x, Tensor::constant(std::move(mask)));
}

// ---- model -------------------------------------------------------------------

namespace {

constexpr double kLayerNormEps = 1e-5;

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  Tensor centered = add_colvec(x, neg(rowwise_mean(x)));
  Tensor sd = sqrt(add_scalar(rowwise_mean(square(centered)), kLayerNormEps));
  return add_rowvec(mul_rowvec(div_colvec(centered, sd), gain), bias);
}

Matrix xavier(Rng& rng, int fan_in, int fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(fan_in, fan_out);
  for (int i = 0; i < fan_in; ++i) {
    for (int j = 0; j < fan_out; ++j) m(i, j) = rng.uniform(-bound, bound);
  }
  return m;
}

int head_hidden(int d) { return std::max(1, d / 2); }

}  // namespace

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(0);
  build_params(rng);
}

Model::Model(const ModelConfig& cfg, Rng& init_rng) : cfg_(cfg) {
  cfg_.validate();
  build_params(init_rng);
}

void Model::build_params(Rng& rng) {
  auto weight = [&](const std::string& name, int in, int out, ParamGroup group) {
    params_.push_back({name, Tensor::variable(xavier(rng, in, out)), group});
  };
  auto zeros = [&](const std::string& name, int r, int c, ParamGroup group) {
    params_.push_back({name, Tensor::variable(Matrix::Zero(r, c)), group});
  };
  auto ones_row = [&](const std::string& name, int c, ParamGroup group) {
    params_.push_back({name, Tensor::variable(Matrix::Ones(1, c)), group});
  };

  for (const auto& [prefix, dim] :
       {std::pair<std::string, int>{"audio", cfg_.d_audio}, {"vision", cfg_.d_vision}}) {
    ones_row(prefix + ".norm.gain", dim, ParamGroup::Base);
    zeros(prefix + ".norm.bias", 1, dim, ParamGroup::Base);
    // zero score vector gives uniform attention at the start
    zeros(prefix + ".pool.w", dim, 1, ParamGroup::Base);
    weight(prefix + ".proj.weight", dim, cfg_.d_proj, ParamGroup::Base);
    zeros(prefix + ".proj.bias", 1, cfg_.d_proj, ParamGroup::Base);
  }

  if (cfg_.head == HeadKind::Regression) {
    const int d_concat = cfg_.d_text + 2 * cfg_.d_proj;
    weight("fusion.l1.weight", d_concat, cfg_.d_fused, ParamGroup::Head);
    zeros("fusion.l1.bias", 1, cfg_.d_fused, ParamGroup::Head);
    weight("fusion.l2.weight", cfg_.d_fused, cfg_.d_fused, ParamGroup::Head);
    zeros("fusion.l2.bias", 1, cfg_.d_fused, ParamGroup::Head);
    weight("unified.l1.weight", cfg_.d_fused, cfg_.d_unified, ParamGroup::Top);
    zeros("unified.l1.bias", 1, cfg_.d_unified, ParamGroup::Top);
    weight("unified.l2.weight", cfg_.d_unified, cfg_.d_unified, ParamGroup::Top);
    zeros("unified.l2.bias", 1, cfg_.d_unified, ParamGroup::Top);
    const int h = head_hidden(cfg_.d_unified);
    weight("head.l1.weight", cfg_.d_unified, h, ParamGroup::Head);
    zeros("head.l1.bias", 1, h, ParamGroup::Head);
    weight("head.l2.weight", h, 1, ParamGroup::Head);
    zeros("head.l2.bias", 1, 1, ParamGroup::Head);
  } else {
    weight("attn.query.weight", cfg_.d_text, cfg_.d_proj, ParamGroup::Head);
    zeros("attn.query.bias", 1, cfg_.d_proj, ParamGroup::Head);
    weight("attn.key.weight", cfg_.d_proj, cfg_.d_proj, ParamGroup::Head);
    zeros("attn.key.bias", 1, cfg_.d_proj, ParamGroup::Head);
    weight("attn.value.weight", cfg_.d_proj, cfg_.d_proj, ParamGroup::Head);
    zeros("attn.value.bias", 1, cfg_.d_proj, ParamGroup::Head);
    weight("attn.out.weight", cfg_.d_proj, cfg_.d_text, ParamGroup::Head);
    zeros("attn.out.bias", 1, cfg_.d_text, ParamGroup::Head);
    const int hg = head_hidden(cfg_.d_text);
    weight("gate.l1.weight", 2 * cfg_.d_text, hg, ParamGroup::Head);
    zeros("gate.l1.bias", 1, hg, ParamGroup::Head);
    weight("gate.l2.weight", hg, 1, ParamGroup::Head);
    zeros("gate.l2.bias", 1, 1, ParamGroup::Head);
    const int hc = head_hidden(cfg_.d_text);
    weight("cls.l1.weight", cfg_.d_text, hc, ParamGroup::Head);
    zeros("cls.l1.bias", 1, hc, ParamGroup::Head);
    weight("cls.l2.weight", hc, 1, ParamGroup::Head);
    zeros("cls.l2.bias", 1, 1, ParamGroup::Head);
  }
}

Tensor Model::param(const std::string& name) const {
  for (const NamedParam& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw ModelError("unknown parameter: " + name);
}

Tensor Model::forward(const FeatureBatch& batch, bool training, Rng* dropout_rng) const {
  const int n = batch.size;

  auto pooled_modality = [&](const Tensor& frames, const Matrix& mask, int len, bool ablated,
                             const std::string& prefix, int dim) {
    if (ablated) return Tensor::constant(Matrix::Zero(n, dim));
    Tensor normed = layer_norm_rows(frames, param(prefix + ".norm.gain"),
                                    param(prefix + ".norm.bias"));
    Tensor scores = reshape(matmul(normed, param(prefix + ".pool.w")), n, len);
    Tensor alpha = masked_softmax_rows(scores, mask);
    return row_blocks_weighted_sum(normed, alpha);
  };

  Tensor pooled_a = pooled_modality(batch.audio, batch.audio_mask, batch.len_audio,
                                    batch.audio_ablated, "audio", cfg_.d_audio);
  Tensor z_a = add_rowvec(matmul(pooled_a, param("audio.proj.weight")), param("audio.proj.bias"));
  Tensor pooled_v = pooled_modality(batch.vision, batch.vision_mask, batch.len_vision,
                                    batch.vision_ablated, "vision", cfg_.d_vision);
  Tensor z_v =
      add_rowvec(matmul(pooled_v, param("vision.proj.weight")), param("vision.proj.bias"));

  if (cfg_.head == HeadKind::Regression) {
    Tensor h = concat_cols({batch.text, z_a, z_v});
    Tensor f1 = relu(add_rowvec(matmul(h, param("fusion.l1.weight")), param("fusion.l1.bias")));
    f1 = apply_dropout(f1, cfg_.dropout_fusion, training, dropout_rng);
    Tensor z_int = add_rowvec(matmul(f1, param("fusion.l2.weight")), param("fusion.l2.bias"));
    Tensor u1 =
        relu(add_rowvec(matmul(z_int, param("unified.l1.weight")), param("unified.l1.bias")));
    u1 = apply_dropout(u1, cfg_.dropout_unified, training, dropout_rng);
    Tensor z_final =
        add_rowvec(matmul(u1, param("unified.l2.weight")), param("unified.l2.bias"));
    Tensor r1 =
        relu(add_rowvec(matmul(z_final, param("head.l1.weight")), param("head.l1.bias")));
    Tensor raw = add_rowvec(matmul(r1, param("head.l2.weight")), param("head.l2.bias"));
    return scale(tanh(raw), cfg_.alpha);
  }

  // gated cross-attention classifier
  Tensor z_text = batch.text;
  Tensor q = add_rowvec(matmul(z_text, param("attn.query.weight")), param("attn.query.bias"));
  Tensor k_a = add_rowvec(matmul(z_a, param("attn.key.weight")), param("attn.key.bias"));
  Tensor k_v = add_rowvec(matmul(z_v, param("attn.key.weight")), param("attn.key.bias"));
  Tensor v_a = add_rowvec(matmul(z_a, param("attn.value.weight")), param("attn.value.bias"));
  Tensor v_v = add_rowvec(matmul(z_v, param("attn.value.weight")), param("attn.value.bias"));
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(cfg_.d_proj));
  Tensor s_a = scale(rowwise_sum(mul(q, k_a)), inv_scale);
  Tensor s_v = scale(rowwise_sum(mul(q, k_v)), inv_scale);
  Tensor att = softmax_rows(concat_cols({s_a, s_v}));
  Tensor z_att = add(mul_colvec(v_a, slice_cols(att, 0, 1)),
                     mul_colvec(v_v, slice_cols(att, 1, 1)));
  Tensor z_fused = add_rowvec(matmul(z_att, param("attn.out.weight")), param("attn.out.bias"));

  Tensor gate_in = concat_cols({z_text, z_fused});
  Tensor g1 = relu(add_rowvec(matmul(gate_in, param("gate.l1.weight")), param("gate.l1.bias")));
  Tensor g = sigmoid(add_rowvec(matmul(g1, param("gate.l2.weight")), param("gate.l2.bias")));
  Tensor z_final = add(mul_colvec(z_text, g), mul_colvec(z_fused, add_scalar(neg(g), 1.0)));

  Tensor c1 = relu(add_rowvec(matmul(z_final, param("cls.l1.weight")), param("cls.l1.bias")));
  return add_rowvec(matmul(c1, param("cls.l2.weight")), param("cls.l2.bias"));
}

std::vector<double> Model::predict(std::span<const Sample> samples) const {
  FeatureBatch batch = FeatureBatch::from_samples(samples, cfg_);
  Tensor out = forward(batch, /*training=*/false, nullptr);
  std::vector<double> values(samples.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = out.value()(static_cast<Eigen::Index>(i), 0);
  }
  return values;
}

void Model::zero_grad() {
  for (NamedParam& p : params_) p.tensor.zero_grad();
}

std::vector<Matrix> Model::snapshot() const {
  std::vector<Matrix> out;
  out.reserve(params_.size());
  for (const NamedParam& p : params_) out.push_back(p.tensor.value());
  return out;
}

void Model::restore(const std::vector<Matrix>& values) {
  if (values.size() != params_.size()) throw ModelError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) params_[i].tensor.set_value(values[i]);
}

json Model::to_checkpoint() const {
  json params = json::object();
  for (const NamedParam& p : params_) {
    json rows = json::array();
    const Matrix& m = p.tensor.value();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(std::move(row));
    }
    params[p.name] = std::move(rows);
  }
  json j;
  j["config"] = cfg_.to_json();
  j["params"] = std::move(params);
  return j;
}

Model Model::from_checkpoint(const json& j) {
  check_known_keys(j, {"config", "params"}, "checkpoint");
  if (!j.contains("config") || !j.contains("params")) {
    throw ModelError("checkpoint: missing config or params");
  }
  Model model(ModelConfig::from_json(j.at("config")));
  const json& params = j.at("params");
  for (NamedParam& p : model.params_) {
    if (!params.contains(p.name)) throw ModelError("checkpoint: missing parameter " + p.name);
    const json& rows = params.at(p.name);
    Matrix m(p.tensor.rows(), p.tensor.cols());
    if (static_cast<Eigen::Index>(rows.size()) != m.rows()) {
      throw ModelError("checkpoint: shape mismatch for " + p.name);
    }
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const json& row = rows.at(static_cast<std::size_t>(r));
      if (static_cast<Eigen::Index>(row.size()) != m.cols()) {
        throw ModelError("checkpoint: shape mismatch for " + p.name);
      }
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
      }
    }
    p.tensor.set_value(m);
  }
  for (const auto& [key, value] : params.items()) {
    bool known = false;
    for (const NamedParam& p : model.params_) known = known || p.name == key;
    if (!known) throw ModelError("checkpoint: unknown parameter " + key);
  }
  return model;
}

void Model::save_checkpoint(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ModelError("cannot write checkpoint: " + path);
  out << to_checkpoint().dump(2) << "\n";
  if (!out) throw ModelError("checkpoint write failed: " + path);
}

Model Model::load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ModelError(std::string("malformed checkpoint JSON: ") + e.what());
  }
  return from_checkpoint(j);
}

}  // namespace grcf
