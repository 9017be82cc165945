#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mmdm/common.hpp"

namespace mmdm::diffusion {

enum class ScheduleKind { ScaledLinear, Cosine };
ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

// Per-step noise schedule. beta[k-1], alpha[k-1], alpha_bar[k-1] hold the
// values for step k in [1, K]; alphaBar(0) == 1 by convention.
struct DiffusionSchedule {
  int steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  double alphaBar(int k) const;
  double betaAt(int k) const;
  double alphaAt(int k) const;
  // posterior variance beta~_k = (1 - abar_{k-1}) / (1 - abar_k) * beta_k
  double posteriorVariance(int k) const;
  void validate(double target_tail) const;
};

// scaled-linear: a 1e-4 -> 2e-2 linear ramp multiplied by the smallest
// factor that pushes alpha_bar_K at or below target_tail (betas capped at
// 0.999; UnreachableTail if the cap prevents it). cosine: the standard
// squared-cosine schedule, checked against the same tail bound.
DiffusionSchedule make_schedule(int steps, ScheduleKind kind, double target_tail = 1e-2);

// x_k = sqrt(abar_k) x0 + sqrt(1 - abar_k) eps
std::vector<double> forward_diffuse(const std::vector<double>& x0, int k,
                                    const std::vector<double>& eps,
                                    const DiffusionSchedule& sched);

// objective interconversion through the forward identity
std::vector<double> x0_from_eps(const std::vector<double>& x_k, const std::vector<double>& eps,
                                int k, const DiffusionSchedule& sched);
std::vector<double> eps_from_x0(const std::vector<double>& x_k, const std::vector<double>& x0,
                                int k, const DiffusionSchedule& sched);

// model closure: predicts the clean signal x0 from (x_k, k)
using PredictX0 = std::function<std::vector<double>(const std::vector<double>& x_k, int k)>;

// posterior mean mu = c0 * x0_hat + ck * x_k; returns (c0, ck)
std::pair<double, double> posterior_coeffs(int k, const DiffusionSchedule& sched);

// One ancestral DDPM step x_k -> x_{k-1}; sigma_1 = 0 so the last step
// returns the posterior mean.
std::vector<double> reverse_step_ddpm(const PredictX0& model, const std::vector<double>& x_k,
                                      int k, const DiffusionSchedule& sched, RandomStream& rng);

// Deterministic (eta = 0) DDIM jump x_k -> x_{k_next}, k_next < k.
std::vector<double> reverse_step_ddim(const PredictX0& model, const std::vector<double>& x_k,
                                      int k, int k_next, const DiffusionSchedule& sched);

// Visited step sequence {K, K-stride, ..., 0} (0 is always appended).
std::vector<int> ddim_step_sequence(int steps, int stride);

// x' takes `original` on unmasked cells and `x` on masked ones, bit-exactly.
std::vector<double> restore_unmasked(const std::vector<double>& x,
                                     const std::vector<double>& original,
                                     const std::vector<uint8_t>& cell_mask, int feat_dim);

// Mean over masked cells of the per-cell squared L2 error.
double loss_masked(const std::vector<double>& pred, const std::vector<double>& target,
                   const std::vector<uint8_t>& cell_mask, int feat_dim);
// Same over all cells.
double loss_full(const std::vector<double>& pred, const std::vector<double>& target,
                 int feat_dim);

// One-pass masked-autoencoder reconstruction (the non-diffusion ablation
// mode). The encoder/decoder pair and the learned placeholder tokens live
// behind `forward`, supplied by the network layer.
struct MaeResult {
  std::vector<double> reconstruction;
  double loss = 0.0;
};
using MaeForward = std::function<std::vector<double>(const std::vector<double>& values,
                                                     const std::vector<uint8_t>& cell_mask)>;
MaeResult mae_reconstruct(const MaeForward& forward, const std::vector<double>& values,
                          const std::vector<uint8_t>& cell_mask, int feat_dim);

}  // namespace mmdm::diffusion
