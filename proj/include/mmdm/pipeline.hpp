#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmdm/diffusion.hpp"
#include "mmdm/metrics.hpp"
#include "mmdm/mocap.hpp"
#include "mmdm/motion.hpp"
#include "mmdm/network.hpp"
#include "mmdm/task_config.hpp"

namespace mmdm::pipeline {

// ---- synthetic datasets

std::vector<motion::MotionSequence> build_dataset(const TaskConfig& cfg);
std::vector<motion::JointLevelRepr> build_bundle_dataset(const TaskConfig& cfg);

// ---- sampling cores

// Single-window loops over an externally supplied signal predictor (the
// model path wraps these; tests drive them with oracle closures).
std::vector<double> complete_with_predictor(const diffusion::PredictX0& predict,
                                            const diffusion::DiffusionSchedule& sched,
                                            const std::vector<double>& values,
                                            const std::vector<uint8_t>& cell_mask, int feat_dim,
                                            int ddim_stride, RandomStream& rng);
std::vector<double> refine_with_predictor(const diffusion::PredictX0& predict,
                                          const diffusion::DiffusionSchedule& sched,
                                          const std::vector<double>& values, int ddim_stride,
                                          RandomStream& rng);

// Completion: masked cells start from Gaussian noise at k = K and the
// unmasked input is restored after every reverse step. Sequences longer than
// window_length run under a half-overlap sliding window with a linear
// cross-fade, then a final restore.
motion::MotionSequence complete_sequence(const net::MmdmModel& model,
                                         const diffusion::DiffusionSchedule& sched,
                                         const std::string& objective,
                                         const motion::MotionSequence& input, int ddim_stride,
                                         uint64_t seed, int window_length);

// Refinement: the noisy input is the k = K state; every cell updates.
motion::MotionSequence refine_sequence(const net::MmdmModel& model,
                                       const diffusion::DiffusionSchedule& sched,
                                       const std::string& objective,
                                       const motion::MotionSequence& input, int ddim_stride,
                                       uint64_t seed, int window_length);

struct ImputationSettings {
  bool emphasis = false;
  double emphasis_factor = 10.0;
  std::vector<int> emphasis_dims;  // token-0 feature slots scaled by the factor
  double guidance_scale = 0.0;     // s; 0 disables dense gradient propagation
};

// In-betweening reverse diffusion with boundary imputation each step,
// optional emphasis projection and dense gradient propagation. Boundary
// frames of the output equal the input bit-exactly.
std::vector<double> inbetween_sequence(const net::InbetweenModel& model,
                                       const diffusion::DiffusionSchedule& sched,
                                       const std::vector<double>& values,
                                       const motion::SegmentSplit& split,
                                       const ImputationSettings& imp, const std::string& label,
                                       uint64_t seed);

// Linear/slerp interpolation baseline across the transition window.
std::vector<double> interpolate_transition(const std::vector<double>& values,
                                           const motion::SegmentSplit& split);

// emphasis projection M (diagonal, token-0 slots scaled); exact inverse pair
void apply_emphasis(std::vector<double>& values, int frames, int joints, int feat_dim,
                    double factor, const std::vector<int>& dims, bool inverse);

// ---- training

struct TrainResult {
  std::string checkpoint_path;
  std::vector<std::pair<int, double>> loss_curve;  // (step, training loss)
  double initial_eval_loss = 0.0;
  double final_eval_loss = 0.0;
};

// Two-phase schedule: pretrain with the pretrain masking phase and the
// masked loss, fine-tune with the finetune phase (full loss when train.mode
// is refinement). train.mode = inbetween trains the encoder-only model with
// the transition segment masked.
TrainResult train(const TaskConfig& cfg, const std::string& out_dir);

// deterministic eval loss: full-stride DDIM completion against the clean set
double eval_completion_loss(const net::MmdmModel& model,
                            const diffusion::DiffusionSchedule& sched,
                            const std::string& objective,
                            const std::vector<motion::MotionSequence>& dataset, double mask_ratio,
                            uint64_t seed);

// deterministic refinement eval: Gaussian-corrupted inputs refined with full
// DDIM, scored by full-grid MSE against the clean set
double eval_refinement_loss(const net::MmdmModel& model,
                            const diffusion::DiffusionSchedule& sched,
                            const std::string& objective,
                            const std::vector<motion::MotionSequence>& dataset, double noise_m,
                            uint64_t seed);

// ---- metric assembly

metrics::MetricReport position_metrics(const motion::MotionSequence& pred,
                                       const motion::MotionSequence& gt);
metrics::MetricReport jointlevel_metrics(const std::vector<double>& pred,
                                         const std::vector<double>& gt, int frames,
                                         int window_start, int window_len);

// ---- CLI task entry points (file in, files out); return the report

struct CliPaths {
  std::string config;
  std::string checkpoint;
  std::string input;
  std::string gt;
  std::string pred;
  std::string rig;
  std::string out_dir = ".";
};

metrics::MetricReport run_train(const TaskConfig& cfg, const CliPaths& paths);
metrics::MetricReport run_completion(const TaskConfig& cfg, const CliPaths& paths);
metrics::MetricReport run_refinement(const TaskConfig& cfg, const CliPaths& paths);
metrics::MetricReport run_inbetween(const TaskConfig& cfg, const CliPaths& paths);
metrics::MetricReport run_simulate(const TaskConfig& cfg, const CliPaths& paths);
metrics::MetricReport run_eval(const TaskConfig& cfg, const CliPaths& paths);

}  // namespace mmdm::pipeline
