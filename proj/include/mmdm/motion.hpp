#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmdm/common.hpp"
#include "mmdm/skeleton.hpp"

namespace mmdm::motion {

// T x J x d joint features with an aligned per-cell mask (true = masked,
// i.e. the cell is to be generated). Positions are meters when d == 3.
class MotionSequence {
 public:
  MotionSequence() = default;
  MotionSequence(int frames, int joints, int feat_dim);

  int frames() const { return frames_; }
  int joints() const { return joints_; }
  int feat_dim() const { return feat_dim_; }

  double& value(int t, int j, int c) { return values_[offset(t, j, c)]; }
  double value(int t, int j, int c) const { return values_[offset(t, j, c)]; }

  bool masked(int t, int j) const { return mask_[cell(t, j)] != 0; }
  void set_masked(int t, int j, bool m) { mask_[cell(t, j)] = m ? 1 : 0; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<uint8_t>& mask() { return mask_; }
  const std::vector<uint8_t>& mask() const { return mask_; }

  int64_t cell(int t, int j) const { return static_cast<int64_t>(t) * joints_ + j; }
  int masked_count() const;

 private:
  int64_t offset(int t, int j, int c) const {
    return (static_cast<int64_t>(t) * joints_ + j) * feat_dim_ + c;
  }
  int frames_ = 0, joints_ = 0, feat_dim_ = 0;
  std::vector<double> values_;
  std::vector<uint8_t> mask_;
};

// HumanML3D-style per-frame channel bundle (J = 22 joints, 21 non-root).
struct ChannelBundle {
  int frames = 0;
  std::vector<double> root_rot_vel;    // T x 6
  std::vector<double> root_ang_vel;    // T
  std::vector<double> root_lin_vel_x;  // T
  std::vector<double> root_lin_vel_z;  // T
  std::vector<double> root_height;     // T
  std::vector<double> joint_rot;       // T x 21 x 6
  std::vector<double> joint_pos;       // T x 21 x 3
  std::vector<double> joint_vel;       // T x 21 x 3
  std::vector<double> contacts;        // T x 4
};

// Joint-level repacking of the bundle: T x 22 x 12 with an exact inverse.
// Token 0 (root):   [root_rot_vel(6), ang_vel, lin_vel_x, lin_vel_z, height, 0, 0]
// Tokens 1..21:     [joint_rot(6), joint_pos(3), joint_vel(3)]
// The 4 contact labels do not fit in the 12 slots and ride in a side channel.
struct JointLevelRepr {
  static constexpr int kTokens = 22;
  static constexpr int kTokenDim = 12;
  int frames = 0;
  std::vector<double> values;    // T x 22 x 12
  std::vector<double> contacts;  // T x 4 side channel

  double& at(int t, int j, int c) { return values[(static_cast<int64_t>(t) * kTokens + j) * kTokenDim + c]; }
  double at(int t, int j, int c) const { return values[(static_cast<int64_t>(t) * kTokens + j) * kTokenDim + c]; }
};

// Human-readable description of the token/slot assignment above.
std::string packing_map();

struct SegmentSplit {
  int preceding = 0;   // T0
  int transition = 0;  // T1
  int succeeding = 0;  // T2
  int total() const { return preceding + transition + succeeding; }
  void validate(int frames) const;
};

// ---- normalization & augmentation (d == 3 sequences)

// Shifts every frame so its joint centroid is the origin; returns the
// removed per-frame centroids (T x 3) for exact inversion.
std::pair<MotionSequence, std::vector<std::array<double, 3>>> normalize_centroid(
    const MotionSequence& m);
MotionSequence denormalize_centroid(const MotionSequence& m,
                                    const std::vector<std::array<double, 3>>& centroids);

// Rotation about the world-vertical y axis; yaw 90 deg maps (1,0,0) to (0,0,-1).
MotionSequence augment_rotate_yaw(const MotionSequence& m, double angle_deg);

// Negates the lateral (x) coordinate and swaps the indexed joint pairs.
// Bit-exact involution.
MotionSequence augment_flip(const MotionSequence& m,
                            const std::vector<std::pair<int, int>>& lr_pairs);

// ---- joint-level packing

JointLevelRepr pack_joint_level(const ChannelBundle& channels);
ChannelBundle unpack_joint_level(const JointLevelRepr& repr);

// ---- synthetic motion

enum class SynthKind { SinusoidLimb, LinearWalk, FigureEight };
SynthKind synth_kind_from_string(const std::string& s);

// Drawn parameters of a synthetic motion, exposed so closed-form oracles can
// recompute trajectories.
struct SynthInfo {
  double amplitude = 0.0;  // limb swing amplitude (rad)
  double frequency = 0.0;  // swing frequency (cycles per frame)
  double phase = 0.0;
  double heading = 0.0;        // walk direction (rad about y)
  double speed = 0.0;          // root speed (m per frame)
  double radius = 0.0;         // figure-eight radius (m)
  std::array<double, 3> root0 = {0, 0, 0};
};

MotionSequence synth_motion(SynthKind kind, int frames, int joints, uint64_t seed,
                            SynthInfo* info = nullptr);

// Smooth synthetic channel bundle for the joint-level representation.
ChannelBundle synth_bundle(int frames, uint64_t seed);

// ---- file I/O (text, 17 significant digits, bit-exact round trip)

void save_motion(const MotionSequence& m, const std::string& path);
MotionSequence load_motion(const std::string& path);

}  // namespace mmdm::motion
