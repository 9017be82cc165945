#include "mmdm/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace mmdm::diffusion {

namespace {
constexpr double kBetaClip = 0.999;
constexpr double kRampLo = 1e-4;
constexpr double kRampHi = 2e-2;
constexpr double kPi = 3.14159265358979323846264338328;

double tail_for_scale(const std::vector<double>& ramp, double scale) {
  double abar = 1.0;
  for (double b : ramp) abar *= 1.0 - std::min(b * scale, kBetaClip);
  return abar;
}
}  // namespace

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "scaled-linear") return ScheduleKind::ScaledLinear;
  if (s == "cosine") return ScheduleKind::Cosine;
  throw DomainError("unknown schedule kind: " + s);
}

std::string to_string(ScheduleKind k) {
  return k == ScheduleKind::ScaledLinear ? "scaled-linear" : "cosine";
}

double DiffusionSchedule::alphaBar(int k) const {
  if (k < 0 || k > steps) throw DomainError("step out of range");
  return k == 0 ? 1.0 : alpha_bar[k - 1];
}

double DiffusionSchedule::betaAt(int k) const {
  if (k < 1 || k > steps) throw DomainError("step out of range");
  return beta[k - 1];
}

double DiffusionSchedule::alphaAt(int k) const {
  if (k < 1 || k > steps) throw DomainError("step out of range");
  return alpha[k - 1];
}

double DiffusionSchedule::posteriorVariance(int k) const {
  return (1.0 - alphaBar(k - 1)) / (1.0 - alphaBar(k)) * betaAt(k);
}

void DiffusionSchedule::validate(double target_tail) const {
  double prev = 1.0;
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    if (!(beta[i] > 0.0 && beta[i] < 1.0)) throw DomainError("beta must lie in (0, 1)");
    prod *= alpha[i];
    if (!(alpha_bar[i] < prev)) throw DomainError("alpha_bar must be strictly decreasing");
    if (std::abs(alpha_bar[i] - prod) > 1e-12 * std::max(1.0, std::abs(prod)))
      throw DomainError("alpha_bar is not the cumulative product");
    prev = alpha_bar[i];
  }
  if (alpha_bar[steps - 1] > target_tail)
    throw DomainError("unreachable tail: alpha_bar_K above target");
}

DiffusionSchedule make_schedule(int steps, ScheduleKind kind, double target_tail) {
  if (steps < 1) throw DomainError("schedule needs K >= 1");
  DiffusionSchedule s;
  s.steps = steps;
  s.beta.resize(static_cast<size_t>(steps));

  if (kind == ScheduleKind::ScaledLinear) {
    std::vector<double> ramp(static_cast<size_t>(steps));
    for (int i = 0; i < steps; ++i)
      ramp[i] = steps == 1 ? kRampHi : kRampLo + (kRampHi - kRampLo) * i / (steps - 1.0);
    // multiplier driving alpha_bar_K onto the target tail; gentle targets
    // (refinement starting from mildly corrupted data) scale the ramp down,
    // aggressive ones scale it up until the betas saturate at the clip
    const double max_scale = kBetaClip / kRampLo;
    if (tail_for_scale(ramp, max_scale) > target_tail)
      throw DomainError("unreachable tail: K too small for the target with beta < 1");
    double lo = 0.0, hi = max_scale;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (tail_for_scale(ramp, mid) > target_tail)
        lo = mid;
      else
        hi = mid;
    }
    const double scale = hi;
    for (int i = 0; i < steps; ++i) s.beta[i] = std::min(ramp[i] * scale, kBetaClip);
  } else {
    const double off = 0.008;
    auto f = [off](double u) {
      const double c = std::cos((u + off) / (1.0 + off) * kPi / 2.0);
      return c * c;
    };
    const double f0 = f(0.0);
    double prev = 1.0;
    for (int i = 1; i <= steps; ++i) {
      const double abar = f(static_cast<double>(i) / steps) / f0;
      double b = 1.0 - abar / prev;
      b = std::clamp(b, 1e-8, kBetaClip);
      s.beta[i - 1] = b;
      prev *= 1.0 - b;
    }
  }

  s.alpha.resize(static_cast<size_t>(steps));
  s.alpha_bar.resize(static_cast<size_t>(steps));
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
  s.validate(target_tail);
  return s;
}

std::vector<double> forward_diffuse(const std::vector<double>& x0, int k,
                                    const std::vector<double>& eps,
                                    const DiffusionSchedule& sched) {
  if (x0.size() != eps.size()) throw ShapeMismatch("noise shape must match the signal");
  const double abar = sched.alphaBar(k);
  const double ca = std::sqrt(abar);
  const double ce = std::sqrt(1.0 - abar);
  std::vector<double> out(x0.size());
  for (size_t i = 0; i < x0.size(); ++i) out[i] = ca * x0[i] + ce * eps[i];
  return out;
}

std::vector<double> x0_from_eps(const std::vector<double>& x_k, const std::vector<double>& eps,
                                int k, const DiffusionSchedule& sched) {
  if (x_k.size() != eps.size()) throw ShapeMismatch("noise shape must match the signal");
  const double abar = sched.alphaBar(k);
  const double ca = std::sqrt(abar);
  const double ce = std::sqrt(1.0 - abar);
  std::vector<double> out(x_k.size());
  for (size_t i = 0; i < x_k.size(); ++i) out[i] = (x_k[i] - ce * eps[i]) / ca;
  return out;
}

std::vector<double> eps_from_x0(const std::vector<double>& x_k, const std::vector<double>& x0,
                                int k, const DiffusionSchedule& sched) {
  if (x_k.size() != x0.size()) throw ShapeMismatch("signal shapes must match");
  const double abar = sched.alphaBar(k);
  if (abar >= 1.0) throw DomainError("step out of range: eps undefined at k = 0");
  const double ca = std::sqrt(abar);
  const double ce = std::sqrt(1.0 - abar);
  std::vector<double> out(x_k.size());
  for (size_t i = 0; i < x_k.size(); ++i) out[i] = (x_k[i] - ca * x0[i]) / ce;
  return out;
}

std::pair<double, double> posterior_coeffs(int k, const DiffusionSchedule& sched) {
  if (k < 1 || k > sched.steps) throw DomainError("step out of range");
  const double abar_k = sched.alphaBar(k);
  const double abar_prev = sched.alphaBar(k - 1);
  const double c0 = std::sqrt(abar_prev) * sched.betaAt(k) / (1.0 - abar_k);
  const double ck = std::sqrt(sched.alphaAt(k)) * (1.0 - abar_prev) / (1.0 - abar_k);
  return {c0, ck};
}

std::vector<double> reverse_step_ddpm(const PredictX0& model, const std::vector<double>& x_k,
                                      int k, const DiffusionSchedule& sched, RandomStream& rng) {
  if (k < 1 || k > sched.steps) throw DomainError("step out of range");
  const std::vector<double> x0 = model(x_k, k);
  if (x0.size() != x_k.size()) throw ShapeMismatch("model output shape mismatch");
  const auto [c0, ck] = posterior_coeffs(k, sched);
  const double sigma = k == 1 ? 0.0 : std::sqrt(sched.posteriorVariance(k));
  std::vector<double> out(x_k.size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = c0 * x0[i] + ck * x_k[i];
    if (sigma > 0.0) out[i] += sigma * rng.normal();
  }
  return out;
}

std::vector<double> reverse_step_ddim(const PredictX0& model, const std::vector<double>& x_k,
                                      int k, int k_next, const DiffusionSchedule& sched) {
  if (k < 1 || k > sched.steps) throw DomainError("step out of range");
  if (k_next >= k || k_next < 0) throw DomainError("step order error: k_next must precede k");
  const std::vector<double> x0 = model(x_k, k);
  if (x0.size() != x_k.size()) throw ShapeMismatch("model output shape mismatch");
  const double abar_k = sched.alphaBar(k);
  const double abar_n = sched.alphaBar(k_next);
  const double ca = std::sqrt(abar_k);
  const double ce = std::sqrt(1.0 - abar_k);
  const double na = std::sqrt(abar_n);
  const double ne = std::sqrt(1.0 - abar_n);
  std::vector<double> out(x_k.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double eps_hat = (x_k[i] - ca * x0[i]) / ce;
    out[i] = na * x0[i] + ne * eps_hat;
  }
  return out;
}

std::vector<int> ddim_step_sequence(int steps, int stride) {
  if (stride < 1) throw DomainError("ddim stride must be >= 1");
  std::vector<int> ks;
  for (int k = steps; k > 0; k -= stride) ks.push_back(k);
  ks.push_back(0);
  return ks;
}

std::vector<double> restore_unmasked(const std::vector<double>& x,
                                     const std::vector<double>& original,
                                     const std::vector<uint8_t>& cell_mask, int feat_dim) {
  if (x.size() != original.size() || x.size() != cell_mask.size() * static_cast<size_t>(feat_dim))
    throw ShapeMismatch("restore_unmasked shapes disagree");
  std::vector<double> out(x.size());
  for (size_t c = 0; c < cell_mask.size(); ++c) {
    const double* src = cell_mask[c] ? x.data() : original.data();
    for (int f = 0; f < feat_dim; ++f) out[c * feat_dim + f] = src[c * feat_dim + f];
  }
  return out;
}

double loss_masked(const std::vector<double>& pred, const std::vector<double>& target,
                   const std::vector<uint8_t>& cell_mask, int feat_dim) {
  if (pred.size() != target.size() ||
      pred.size() != cell_mask.size() * static_cast<size_t>(feat_dim))
    throw ShapeMismatch("loss shapes disagree");
  int64_t cells = 0;
  double acc = 0.0;
  for (size_t c = 0; c < cell_mask.size(); ++c) {
    if (!cell_mask[c]) continue;
    ++cells;
    for (int f = 0; f < feat_dim; ++f) {
      const double e = pred[c * feat_dim + f] - target[c * feat_dim + f];
      acc += e * e;
    }
  }
  if (cells == 0) throw DomainError("empty mask: loss over zero masked cells");
  return acc / static_cast<double>(cells);
}

double loss_full(const std::vector<double>& pred, const std::vector<double>& target,
                 int feat_dim) {
  if (pred.size() != target.size()) throw ShapeMismatch("loss shapes disagree");
  if (pred.empty()) throw DomainError("empty mask: loss over zero cells");
  if (feat_dim < 1 || pred.size() % static_cast<size_t>(feat_dim) != 0)
    throw ShapeMismatch("loss feat_dim does not divide the data");
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - target[i];
    acc += e * e;
  }
  return acc / static_cast<double>(pred.size() / feat_dim);
}

MaeResult mae_reconstruct(const MaeForward& forward, const std::vector<double>& values,
                          const std::vector<uint8_t>& cell_mask, int feat_dim) {
  bool any = false;
  for (uint8_t m : cell_mask) any = any || m;
  if (!any) throw DomainError("empty mask: nothing to reconstruct");
  MaeResult r;
  r.reconstruction = forward(values, cell_mask);
  if (r.reconstruction.size() != values.size()) throw ShapeMismatch("mae output shape mismatch");
  r.loss = loss_masked(r.reconstruction, values, cell_mask, feat_dim);
  return r;
}

}  // namespace mmdm::diffusion
