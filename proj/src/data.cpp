#include "grcf/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace grcf {

using nlohmann::json;

const char* to_string(TaskKind t) {
  return t == TaskKind::Regression ? "regression" : "classification";
}

TaskKind task_from_string(const std::string& name) {
  if (name == "regression") return TaskKind::Regression;
  if (name == "classification") return TaskKind::Classification;
  throw DataError("unknown task: " + name);
}

namespace {

Matrix matrix_from_json(const json& j, const std::string& id, const char* field) {
  if (!j.is_array() || j.empty()) {
    throw DataError("sample '" + id + "': " + field + " must be a non-empty array");
  }
  const bool nested = j.front().is_array();
  const std::size_t rows = nested ? j.size() : 1;
  const std::size_t cols = nested ? j.front().size() : j.size();
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    const json& row = nested ? j.at(r) : j;
    if (!row.is_array() || row.size() != cols) {
      throw DataError("sample '" + id + "': ragged rows in " + field);
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (!row.at(c).is_number()) {
        throw DataError("sample '" + id + "': non-numeric entry in " + field);
      }
      const double v = row.at(c).get<double>();
      if (!std::isfinite(v)) {
        throw DataError("sample '" + id + "': non-finite entry in " + field);
      }
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
    }
  }
  return m;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::vector<Sample> load_dataset(const std::string& path, double half_range, TaskKind task) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);

  std::vector<Sample> samples;
  std::string line;
  int line_no = 0;
  Eigen::Index d_text = -1, d_audio = -1, d_vision = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("malformed JSON at line " + std::to_string(line_no) + ": " + e.what());
    }
    for (const char* key : {"id", "label", "text_emb", "audio", "vision"}) {
      if (!j.contains(key)) {
        throw DataError("line " + std::to_string(line_no) + ": missing key '" + key + "'");
      }
    }
    Sample s;
    s.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    if (!j.at("label").is_number()) {
      throw DataError("sample '" + s.id + "': label must be numeric");
    }
    s.label = j.at("label").get<double>();
    if (task == TaskKind::Regression) {
      if (!std::isfinite(s.label) || s.label < -half_range || s.label > half_range) {
        throw DataError("sample '" + s.id + "': label " + std::to_string(s.label) +
                        " outside [-" + std::to_string(half_range) + ", " +
                        std::to_string(half_range) + "]");
      }
    } else if (s.label != 0.0 && s.label != 1.0) {
      throw DataError("sample '" + s.id + "': classification label must be 0 or 1");
    }

    Matrix text = matrix_from_json(j.at("text_emb"), s.id, "text_emb");
    if (text.rows() != 1) throw DataError("sample '" + s.id + "': text_emb must be a flat vector");
    s.text_emb = text.row(0);
    s.audio = matrix_from_json(j.at("audio"), s.id, "audio");
    s.vision = matrix_from_json(j.at("vision"), s.id, "vision");
    s.audio_valid = j.contains("audio_valid") ? j.at("audio_valid").get<int>()
                                              : static_cast<int>(s.audio.rows());
    s.vision_valid = j.contains("vision_valid") ? j.at("vision_valid").get<int>()
                                                : static_cast<int>(s.vision.rows());
    if (s.audio_valid < 1 || s.audio_valid > s.audio.rows()) {
      throw DataError("sample '" + s.id + "': audio_valid out of range");
    }
    if (s.vision_valid < 1 || s.vision_valid > s.vision.rows()) {
      throw DataError("sample '" + s.id + "': vision_valid out of range");
    }

    if (d_text < 0) {
      d_text = s.text_emb.cols();
      d_audio = s.audio.cols();
      d_vision = s.vision.cols();
    } else {
      if (s.text_emb.cols() != d_text || s.audio.cols() != d_audio ||
          s.vision.cols() != d_vision) {
        throw DataError("sample '" + s.id + "': feature dims disagree with the first sample");
      }
    }
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw DataError("no samples in " + path);
  return samples;
}

void save_dataset(const std::string& path, std::span<const Sample> samples) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file: " + path);
  for (const Sample& s : samples) {
    json j;
    j["id"] = s.id;
    j["label"] = s.label;
    json text = json::array();
    for (Eigen::Index c = 0; c < s.text_emb.cols(); ++c) text.push_back(s.text_emb(c));
    j["text_emb"] = std::move(text);
    j["audio"] = matrix_to_json(s.audio);
    j["audio_valid"] = s.audio_valid;
    j["vision"] = matrix_to_json(s.vision);
    j["vision_valid"] = s.vision_valid;
    out << j.dump() << "\n";
  }
  if (!out) throw DataError("write failed: " + path);
}

std::vector<DataPair> sample_pairs(std::span<const Sample> samples, int n_pairs, Rng& rng) {
  const int n = static_cast<int>(samples.size());
  if (n < 2) throw DataError("sample_pairs: need at least 2 samples");
  if (n_pairs < 1) throw DataError("sample_pairs: need at least 1 pair");
  std::vector<DataPair> out;
  out.reserve(static_cast<std::size_t>(n_pairs));
  for (int k = 0; k < n_pairs; ++k) {
    int i = rng.uniform_int(n);
    int j = rng.uniform_int(n - 1);
    if (j >= i) ++j;  // ordered pair with i != j
    DataPair p;
    p.i = i;
    p.j = j;
    p.c = samples[static_cast<std::size_t>(i)].label > samples[static_cast<std::size_t>(j)].label
              ? 1
              : 0;
    out.push_back(p);
  }
  return out;
}

int default_pair_count(int n_samples) { return std::min(50000, 40 * n_samples); }

std::vector<Sample> generate_synthetic(const SynthConfig& cfg) {
  if (cfg.n < 1) throw DataError("generate_synthetic: n must be positive");
  if (cfg.d_text < 1 || cfg.d_audio < 1 || cfg.d_vision < 1) {
    throw DataError("generate_synthetic: dims must be positive");
  }
  if (cfg.len_audio < 1 || cfg.len_vision < 1) {
    throw DataError("generate_synthetic: sequence lengths must be positive");
  }

  Rng master(cfg.seed);
  Rng map_rng(Rng(cfg.map_seed).next_u64());
  Rng label_rng = master.fork(2);
  Rng noise_rng = master.fork(3);
  Rng len_rng = master.fork(4);

  // fixed random linear maps from the latent score to each modality
  Eigen::RowVectorXd u_text(cfg.d_text);
  for (int k = 0; k < cfg.d_text; ++k) u_text(k) = map_rng.normal();
  Eigen::RowVectorXd u_audio(cfg.d_audio);
  for (int k = 0; k < cfg.d_audio; ++k) u_audio(k) = map_rng.normal();
  Eigen::RowVectorXd u_vision(cfg.d_vision);
  for (int k = 0; k < cfg.d_vision; ++k) u_vision(k) = map_rng.normal();

  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(cfg.n));
  for (int i = 0; i < cfg.n; ++i) {
    Sample s;
    s.id = "synth-" + std::to_string(i);
    double latent;
    if (cfg.task == TaskKind::Regression) {
      latent = label_rng.uniform(-cfg.half_range, cfg.half_range);
      s.label = latent;
    } else {
      const int bit = i % 2;  // balanced classes
      (void)label_rng.next_u64();
      s.label = static_cast<double>(bit);
      latent = bit == 1 ? 1.0 : -1.0;
    }

    s.text_emb = latent * u_text;
    for (int k = 0; k < cfg.d_text; ++k) s.text_emb(k) += cfg.noise_text * noise_rng.normal();

    s.audio_valid = 1 + len_rng.uniform_int(cfg.len_audio);
    s.audio = Matrix::Zero(cfg.len_audio, cfg.d_audio);
    for (int r = 0; r < s.audio_valid; ++r) {
      for (int k = 0; k < cfg.d_audio; ++k) {
        s.audio(r, k) = latent * u_audio(k) + cfg.noise_audio * noise_rng.normal();
      }
    }

    s.vision_valid = 1 + len_rng.uniform_int(cfg.len_vision);
    s.vision = Matrix::Zero(cfg.len_vision, cfg.d_vision);
    for (int r = 0; r < s.vision_valid; ++r) {
      for (int k = 0; k < cfg.d_vision; ++k) {
        s.vision(r, k) = latent * u_vision(k) + cfg.noise_vision * noise_rng.normal();
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> perturb_noise(std::span<const Sample> samples, double sigma,
                                  std::uint64_t seed) {
  if (sigma < 0.0) throw DataError("perturb_noise: sigma must be non-negative");
  std::vector<Sample> out(samples.begin(), samples.end());
  if (sigma == 0.0) return out;
  Rng rng(seed);
  for (Sample& s : out) {
    for (Eigen::Index r = 0; r < s.audio.rows(); ++r) {
      for (Eigen::Index c = 0; c < s.audio.cols(); ++c) {
        s.audio(r, c) += sigma * rng.normal();
      }
    }
    for (Eigen::Index r = 0; r < s.vision.rows(); ++r) {
      for (Eigen::Index c = 0; c < s.vision.cols(); ++c) {
        s.vision(r, c) += sigma * rng.normal();
      }
    }
  }
  return out;
}

std::vector<Sample> perturb_ablate(std::span<const Sample> samples,
                                   std::span<const Modality> modalities) {
  std::vector<Sample> out(samples.begin(), samples.end());
  for (Sample& s : out) {
    for (Modality m : modalities) {
      switch (m) {
        case Modality::Text:
          s.text_emb.setZero();
          break;
        case Modality::Audio:
          s.audio.setZero();
          s.audio_valid = 0;  // ablation sentinel
          break;
        case Modality::Vision:
          s.vision.setZero();
          s.vision_valid = 0;
          break;
      }
    }
  }
  return out;
}

std::vector<Sample> perturb_truncate(std::span<const Sample> samples, const TruncateDims& dims) {
  std::vector<Sample> out(samples.begin(), samples.end());
  for (Sample& s : out) {
    if (dims.text >= 0) {
      if (dims.text > s.text_emb.cols()) {
        throw DataError("perturb_truncate: text target " + std::to_string(dims.text) +
                        " exceeds source dim " + std::to_string(s.text_emb.cols()));
      }
      s.text_emb = s.text_emb.head(dims.text).eval();
    }
    if (dims.audio >= 0) {
      if (dims.audio > s.audio.cols()) {
        throw DataError("perturb_truncate: audio target " + std::to_string(dims.audio) +
                        " exceeds source dim " + std::to_string(s.audio.cols()));
      }
      s.audio = s.audio.leftCols(dims.audio).eval();
    }
    if (dims.vision >= 0) {
      if (dims.vision > s.vision.cols()) {
        throw DataError("perturb_truncate: vision target " + std::to_string(dims.vision) +
                        " exceeds source dim " + std::to_string(s.vision.cols()));
      }
      s.vision = s.vision.leftCols(dims.vision).eval();
    }
  }
  return out;
}

std::string file_content_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file for hashing: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    if (!in) break;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace grcf
