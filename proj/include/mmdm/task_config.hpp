#pragma once

#include <set>
#include <string>
#include <vector>

#include "mmdm/common.hpp"
#include "mmdm/diffusion.hpp"
#include "mmdm/masking.hpp"
#include "mmdm/motion.hpp"
#include "mmdm/network.hpp"

namespace mmdm::pipeline {

struct PhaseMasking {
  masking::Pattern pattern = masking::Pattern::A;
  double ratio = 0.5;
};

// Flat dotted-key configuration backing every CLI task. Unknown keys are a
// hard error; per-task defaults (e.g. K = 50 for refinement) apply to keys
// the file leaves unset.
struct TaskConfig {
  std::string task;
  uint64_t seed = 42;
  std::string out_dir = ".";
  std::string label = "walk";

  net::NetworkConfig net;

  int diffusion_steps = 1000;
  diffusion::ScheduleKind schedule = diffusion::ScheduleKind::ScaledLinear;
  double target_tail = 1e-2;
  std::string objective = "signal";  // signal | noise
  int ddim_stride = 0;               // 0 = ancestral DDPM; >= 1 = DDIM stride

  PhaseMasking pretrain{masking::Pattern::A, 0.5};
  PhaseMasking finetune{masking::Pattern::C, 0.3};
  double omega = 1.0;
  bool force_invisible = true;
  double mask_ratio = 0.3;  // inference-time mask density where one is drawn

  std::string train_mode = "completion";  // completion | refinement | inbetween
  int pretrain_steps = 1200;
  int finetune_steps = 800;
  int batch = 4;
  double lr = 1e-5;
  double weight_decay = 1e-4;
  int checkpoint_every = 500;
  bool augment = false;  // random yaw + mirror augmentation during training

  std::string data_kind = "mixed";  // mixed | sinusoid-limb | linear-walk | figure-eight
  int data_sequences = 16;
  int data_frames = 10;
  int data_joints = 17;

  int window_length = 10;  // sliding-window inference length

  motion::SegmentSplit split{8, 30, 8};

  bool emphasis_enabled = false;
  double emphasis_factor = 10.0;
  std::vector<int> emphasis_dims = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  double guidance_scale = 0.0;

  int sim_cameras = 4;
  double sim_noise_px = 1.0;
  double sim_occl_prob = 0.05;
  int sim_people = 2;
  double sim_sigma_max = 20.0;
  double sim_conf_scale = 10.0;
  bool sim_shuffle = true;

  std::vector<std::string> eval_metrics;  // empty: defaults per representation

  std::set<std::string> explicit_keys;
  std::string config_hash;

  void set(const std::string& key, const std::string& value);
  void finalize();  // task defaults + validation + hash
};

TaskConfig parse_config_text(const std::string& text);
TaskConfig parse_config_file(const std::string& path);

}  // namespace mmdm::pipeline
