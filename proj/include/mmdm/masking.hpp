#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmdm/common.hpp"

namespace mmdm::masking {

// A: pose-level random (floor(r*J) joints per frame)
// B: joint-level random (floor(r*T*J) cells over the whole grid)
// C: weighted random, probability proportional to the adaptive weight
enum class Pattern { A, B, C };
Pattern pattern_from_string(const std::string& s);
std::string to_string(Pattern p);

struct MaskingConfig {
  Pattern pattern = Pattern::A;
  double ratio = 0.5;   // in (0, 1)
  double omega = 1.0;   // confidence/error blend, >= 0
  uint64_t seed = 0;
  // joints invisible in every view carry no triangulation evidence and are
  // always masked under pattern C
  bool force_invisible = true;

  void validate() const;
};

// Per-joint capture quality: rho are 2D confidences in [0,1] (V x T x J,
// rho = 0 means invisible in that view), sigma are normalized triangulation
// errors in [0,1] (T x J).
struct QualitySignals {
  int views = 0, frames = 0, joints = 0;
  std::vector<double> rho;    // V x T x J
  std::vector<double> sigma;  // T x J

  QualitySignals() = default;
  QualitySignals(int views, int frames, int joints);
  double rho_at(int v, int t, int j) const {
    return rho[(static_cast<int64_t>(v) * frames + t) * joints + j];
  }
  double& rho_at(int v, int t, int j) {
    return rho[(static_cast<int64_t>(v) * frames + t) * joints + j];
  }
  double sigma_at(int t, int j) const { return sigma[static_cast<int64_t>(t) * joints + j]; }
  double& sigma_at(int t, int j) { return sigma[static_cast<int64_t>(t) * joints + j]; }
  void validate() const;
};

// w = omega * exp(-sum_v rho_v) + sigma
double adaptive_weight(const std::vector<double>& rho_column, double sigma_value, double omega);

// T x J boolean mask (true = masked). Deterministic given cfg.seed.
std::vector<uint8_t> build_mask(const MaskingConfig& cfg, int frames, int joints,
                                const QualitySignals* signals = nullptr);

}  // namespace mmdm::masking
