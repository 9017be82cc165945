#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmdm/common.hpp"
#include "mmdm/motion.hpp"
#include "mmdm/skeleton.hpp"

namespace mmdm::metrics {

// PCP@0.5: a limb counts as correct when both endpoint errors are strictly
// below half the ground-truth limb length. Percentage over frames x limbs.
double pcp(const motion::MotionSequence& pred, const motion::MotionSequence& gt,
           const SkeletonSpec& skeleton);

// Mean per-joint Euclidean error, millimeters (inputs in meters).
double mpjpe(const motion::MotionSequence& pred, const motion::MotionSequence& gt);

// Index-corresponded joint sets; absent entries are unestimated joints.
struct JointEstimate {
  bool present = false;
  std::array<double, 3> p = {0, 0, 0};
};
// A pair is correct when both sides are present and their distance is
// strictly below the threshold. Precision is over estimated joints, recall
// over ground-truth joints.
std::pair<double, double> precision_recall(const std::vector<JointEstimate>& pred,
                                           const std::vector<JointEstimate>& gt,
                                           double threshold_m = 0.2);

// Mean norm of the second-finite-difference discrepancy, mm/frame^2. The
// frame rate is metadata only; the value is per frame squared.
double accel_error(const motion::MotionSequence& pred, const motion::MotionSequence& gt);

// Mean over frames of the L2 norm of the flattened per-frame difference.
double l2p(const std::vector<double>& pred, const std::vector<double>& gt, int frames);

// Quaternions (w,x,y,z), unit within 1e-6; per-joint antipodal-min distances
// accumulate into a per-frame norm.
double l2q(const std::vector<std::array<double, 4>>& pred,
           const std::vector<std::array<double, 4>>& gt, int frames, int joints);

// Normalized power spectrum similarity over aligned angle channels (T-major
// rows, C channels). DC bin excluded; identical inputs give 0.
double npss(const std::vector<double>& pred, const std::vector<double>& gt, int frames,
            int channels);

// rotation-6d (two leading rotation-matrix columns) to quaternion (w,x,y,z)
std::array<double, 4> rot6d_to_quat(const std::array<double, 6>& r6);
std::array<double, 6> quat_to_rot6d(const std::array<double, 4>& q);
// spherical interpolation with antipodal handling, t in [0, 1]
std::array<double, 4> slerp(const std::array<double, 4>& a, const std::array<double, 4>& b,
                            double t);

// ---- reporting

struct MetricReport {
  struct Entry {
    double value;
    std::string unit;
  };
  std::map<std::string, Entry> entries;  // alphabetical by construction
  uint64_t seed = 0;
  std::string config_hash;

  void add(const std::string& name, double value, const std::string& unit);
  double value(const std::string& name) const;
  std::string to_text() const;  // "name value unit" lines, alphabetical
  std::string to_json() const;
};

void save_report(const MetricReport& r, const std::string& text_path,
                 const std::string& json_path);

}  // namespace mmdm::metrics
