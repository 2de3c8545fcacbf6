#pragma once

// The network over pre-extracted features: per-modality layer norm,
// attention pooling, projection to a shared latent space, concat fusion with
// a unified encoder and tanh-scaled regression head, or the gated
// cross-attention classifier.

#include <json.hpp>

#include <span>
#include <string>
#include <vector>

#include "grcf/data.hpp"
#include "grcf/random.hpp"
#include "grcf/tensor.hpp"

namespace grcf {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class HeadKind { Regression, Classification };

struct ModelConfig {
  int d_text = 32;
  int d_audio = 16;
  int d_vision = 16;
  int d_proj = 32;
  int d_fused = 64;
  int d_unified = 64;
  double alpha = 3.5;       // output scale
  double half_range = 3.0;  // S, annotation half-range
  HeadKind head = HeadKind::Regression;
  double dropout_fusion = 0.0;
  double dropout_unified = 0.0;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// learning-rate group a parameter belongs to
enum class ParamGroup { Base, Top, Head };

struct NamedParam {
  std::string name;
  Tensor tensor;
  ParamGroup group = ParamGroup::Base;
};

// Padded, masked batch view over samples. A modality whose valid_len is zero
// for every sample is ablated and replaced by a zero pooled vector.
struct FeatureBatch {
  Tensor text;
  Tensor audio;  // [(n * len_audio) x d_audio]
  Matrix audio_mask;
  int len_audio = 0;
  bool audio_ablated = false;
  Tensor vision;
  Matrix vision_mask;
  int len_vision = 0;
  bool vision_ablated = false;
  int size = 0;

  static FeatureBatch from_samples(std::span<const Sample> samples, const ModelConfig& cfg);
  // batch over dataset rows selected by index, duplicates allowed
  static FeatureBatch from_indices(std::span<const Sample> dataset, std::span<const int> indices,
                                   const ModelConfig& cfg);
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);
  Model(const ModelConfig& cfg, Rng& init_rng);

  const ModelConfig& config() const { return cfg_; }

  // predictions (regression) or logits (classification), [n x 1]
  Tensor forward(const FeatureBatch& batch, bool training = false,
                 Rng* dropout_rng = nullptr) const;

  std::vector<double> predict(std::span<const Sample> samples) const;

  const std::vector<NamedParam>& parameters() const { return params_; }
  void zero_grad();

  // deep copies of parameter values in declaration order
  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& values);

  nlohmann::json to_checkpoint() const;
  static Model from_checkpoint(const nlohmann::json& j);
  void save_checkpoint(const std::string& path) const;
  static Model load_checkpoint(const std::string& path);

 private:
  void build_params(Rng& rng);
  Tensor param(const std::string& name) const;

  ModelConfig cfg_;
  std::vector<NamedParam> params_;
};

// Masked attention pooling of one frame sequence: softmax of w-scores over
// the first valid_len rows, weighted sum of the frames. frames [L x d],
// w [d x 1], output [1 x d].
Tensor attention_pool(const Tensor& frames, int valid_len, const Tensor& w);

// Inverted dropout: training keeps each element with probability 1-p and
// rescales survivors by 1/(1-p); evaluation is the identity.
Tensor apply_dropout(const Tensor& x, double p, bool training, Rng* rng);

}  // namespace grcf
