#include "mmdm/masking.hpp"

#include <algorithm>
#include <cmath>

namespace mmdm::masking {

Pattern pattern_from_string(const std::string& s) {
  if (s == "A" || s == "a" || s == "pose") return Pattern::A;
  if (s == "B" || s == "b" || s == "joint") return Pattern::B;
  if (s == "C" || s == "c" || s == "weighted") return Pattern::C;
  throw DomainError("unknown masking pattern: " + s);
}

std::string to_string(Pattern p) {
  switch (p) {
    case Pattern::A: return "A";
    case Pattern::B: return "B";
    case Pattern::C: return "C";
  }
  return "?";
}

void MaskingConfig::validate() const {
  if (!(ratio > 0.0 && ratio < 1.0)) throw DomainError("ratio out of range (0, 1)");
  if (omega < 0.0) throw DomainError("omega must be nonnegative");
}

QualitySignals::QualitySignals(int views, int frames, int joints)
    : views(views), frames(frames), joints(joints) {
  rho.assign(static_cast<size_t>(views) * frames * joints, 0.0);
  sigma.assign(static_cast<size_t>(frames) * joints, 0.0);
}

void QualitySignals::validate() const {
  if (static_cast<int64_t>(rho.size()) != static_cast<int64_t>(views) * frames * joints ||
      static_cast<int64_t>(sigma.size()) != static_cast<int64_t>(frames) * joints)
    throw ShapeMismatch("quality signal shapes inconsistent");
  for (double r : rho)
    if (!(r >= 0.0 && r <= 1.0)) throw DomainError("rho entries must lie in [0, 1]");
  for (double s : sigma)
    if (!(s >= 0.0 && s <= 1.0)) throw DomainError("sigma entries must lie in [0, 1]");
}

double adaptive_weight(const std::vector<double>& rho_column, double sigma_value, double omega) {
  double sum = 0.0;
  for (double r : rho_column) sum += r;
  return omega * std::exp(-sum) + sigma_value;
}

namespace {

// k uniform draws without replacement out of n, by partial Fisher-Yates
void sample_uniform(RandomStream& rng, int n, int k, std::vector<int>& out) {
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int i = 0; i < k; ++i) {
    const int pick = i + rng.uniform_int(n - i);
    std::swap(idx[i], idx[pick]);
  }
  out.assign(idx.begin(), idx.begin() + k);
}

}  // namespace

std::vector<uint8_t> build_mask(const MaskingConfig& cfg, int frames, int joints,
                                const QualitySignals* signals) {
  cfg.validate();
  if (frames < 1 || joints < 1) throw ShapeMismatch("mask grid must be at least 1x1");
  std::vector<uint8_t> mask(static_cast<size_t>(frames) * joints, 0);
  RandomStream rng(cfg.seed);

  switch (cfg.pattern) {
    case Pattern::A: {
      const int per_frame = static_cast<int>(std::floor(cfg.ratio * joints));
      std::vector<int> picks;
      for (int t = 0; t < frames; ++t) {
        sample_uniform(rng, joints, per_frame, picks);
        for (int j : picks) mask[static_cast<size_t>(t) * joints + j] = 1;
      }
      break;
    }
    case Pattern::B: {
      const int total = static_cast<int>(std::floor(cfg.ratio * frames * joints));
      std::vector<int> picks;
      sample_uniform(rng, frames * joints, total, picks);
      for (int c : picks) mask[static_cast<size_t>(c)] = 1;
      break;
    }
    case Pattern::C: {
      if (signals == nullptr) throw DomainError("missing signals: pattern C needs them");
      signals->validate();
      if (signals->frames != frames || signals->joints != joints)
        throw ShapeMismatch("quality signals do not match the mask grid");
      const int total = static_cast<int>(std::floor(cfg.ratio * frames * joints));
      const int n = frames * joints;
      std::vector<double> weight(static_cast<size_t>(n), 0.0);
      std::vector<uint8_t> taken(static_cast<size_t>(n), 0);
      int masked = 0;
      for (int t = 0; t < frames; ++t) {
        for (int j = 0; j < joints; ++j) {
          double rho_sum = 0.0;
          bool visible = false;
          for (int v = 0; v < signals->views; ++v) {
            const double r = signals->rho_at(v, t, j);
            rho_sum += r;
            visible = visible || r > 0.0;
          }
          const int c = t * joints + j;
          weight[c] = cfg.omega * std::exp(-rho_sum) + signals->sigma_at(t, j);
          if (cfg.force_invisible && !visible) {
            mask[c] = 1;
            taken[c] = 1;
            ++masked;
          }
        }
      }
      // sequential weighted draws without replacement until the target count;
      // cells the invisibility rule already claimed count toward it
      while (masked < total) {
        double wsum = 0.0;
        for (int c = 0; c < n; ++c)
          if (!taken[c]) wsum += weight[c];
        int pick = -1;
        if (wsum > 0.0) {
          const double u = rng.uniform() * wsum;
          double acc = 0.0;
          for (int c = 0; c < n; ++c) {
            if (taken[c]) continue;
            acc += weight[c];
            if (acc > u) {
              pick = c;
              break;
            }
          }
        }
        if (pick < 0) {
          // all remaining weights zero (or fp underrun): lowest untaken index
          for (int c = 0; c < n; ++c)
            if (!taken[c]) {
              pick = c;
              break;
            }
        }
        mask[pick] = 1;
        taken[pick] = 1;
        ++masked;
      }
      break;
    }
  }
  return mask;
}

}  // namespace mmdm::masking
