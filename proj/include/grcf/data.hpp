#pragma once

// Dataset I/O (line-delimited JSON), synthetic generation, pair sampling,
// and the evaluation-time perturbations (noise, ablation, truncation).

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "grcf/random.hpp"
#include "grcf/tensor.hpp"

namespace grcf {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One utterance: a precomputed text vector plus per-modality frame sequences.
// valid_len counts the real frames; rows beyond it are padding. A valid_len
// of zero is the ablation sentinel and never comes out of the loader.
struct Sample {
  std::string id;
  double label = 0.0;
  Eigen::RowVectorXd text_emb;
  Matrix audio;
  int audio_valid = 0;
  Matrix vision;
  int vision_valid = 0;
};

struct DataPair {
  int i = 0;
  int j = 0;
  int c = 0;  // 1 iff label_i > label_j
};

enum class TaskKind { Regression, Classification };

const char* to_string(TaskKind t);
TaskKind task_from_string(const std::string& name);

std::vector<Sample> load_dataset(const std::string& path, double half_range,
                                 TaskKind task = TaskKind::Regression);
void save_dataset(const std::string& path, std::span<const Sample> samples);

std::vector<DataPair> sample_pairs(std::span<const Sample> samples, int n_pairs, Rng& rng);

// default pair count used when a config does not pin one
int default_pair_count(int n_samples);

struct SynthConfig {
  int n = 100;
  std::uint64_t seed = 42;
  // the latent-to-feature linear map gets its own seed so datasets drawn
  // with different sample seeds stay mutually consistent
  std::uint64_t map_seed = 9001;
  TaskKind task = TaskKind::Regression;
  double half_range = 3.0;
  int d_text = 32;
  int d_audio = 16;
  int d_vision = 16;
  int len_audio = 6;
  int len_vision = 6;
  double noise_text = 0.1;
  double noise_audio = 0.1;
  double noise_vision = 0.1;
};

// Latent score drawn uniformly over [-S, S] (regression) or from balanced
// bits (classification); every modality is a fixed seeded linear map of the
// score plus per-modality Gaussian noise.
std::vector<Sample> generate_synthetic(const SynthConfig& cfg);

enum class Modality { Text, Audio, Vision };

std::vector<Sample> perturb_noise(std::span<const Sample> samples, double sigma,
                                  std::uint64_t seed);
std::vector<Sample> perturb_ablate(std::span<const Sample> samples,
                                   std::span<const Modality> modalities);
struct TruncateDims {
  int text = -1;    // -1 keeps the dimension as is
  int audio = -1;
  int vision = -1;
};
std::vector<Sample> perturb_truncate(std::span<const Sample> samples, const TruncateDims& dims);

// FNV-1a over the file bytes, hex encoded; used by run manifests
std::string file_content_hash(const std::string& path);

}  // namespace grcf
