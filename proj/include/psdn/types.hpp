#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace psdn {

// Row-major throughout: rows are frames, columns are channels.
using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline MatD to_f64(const MatF& m) { return m.cast<double>(); }
inline MatF to_f32(const MatD& m) { return m.cast<float>(); }

constexpr int kMelDim = 80;

enum class Split { kTrain, kValid, kTest };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

// Per-speaker global affine timbre: mel channels are scaled by gain and
// shifted by bias.
struct Timbre {
  std::vector<double> gain;  // [80], in [0.5, 1.5]
  std::vector<double> bias;  // [80], in [-0.5, 0.5]
};

// Ground-truth latents behind a synthetic utterance. Enables oracle
// conversion; absent for externally produced data.
struct SynthFactors {
  std::vector<int> content_seq;  // per frame, symbols in [1, V]
  int accent_id = 0;             // 0 = target accent
  Timbre timbre;
  std::uint64_t noise_seed = 0;
};

struct Utterance {
  std::string id;
  std::string speaker_id;
  int accent_label = 0;
  MatF mel;  // [T x 80]
  MatF bnf;  // [T x D_bnf]
  std::optional<SynthFactors> factors;
  Split split = Split::kTrain;

  int frames() const { return static_cast<int>(mel.rows()); }
  bool is_target_accent() const { return accent_label == 0; }
};

}  // namespace psdn
