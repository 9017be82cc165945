#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

namespace mmdm {

// Joint topology used by the synthetic motions, the mocap simulator and the
// limb-based metrics. Offsets are rest-pose bone vectors in meters relative
// to the parent joint.
struct SkeletonSpec {
  std::vector<int> parents;                       // -1 for the root
  std::vector<std::array<double, 3>> offsets;     // rest offset from parent
  std::vector<std::pair<int, int>> limbs;         // scored by PCP
  std::vector<std::pair<int, int>> lr_pairs;      // left/right mirror pairs
  int mid_hip = 0;
  std::vector<std::string> names;

  int joints() const { return static_cast<int>(parents.size()); }
};

// 17-joint h36m-style skeleton:
//  0 pelvis, 1 rhip, 2 rknee, 3 rankle, 4 lhip, 5 lknee, 6 lankle,
//  7 spine, 8 thorax, 9 neck, 10 head, 11 lshoulder, 12 lelbow, 13 lwrist,
//  14 rshoulder, 15 relbow, 16 rwrist
SkeletonSpec human17();

// serial chain fallback for arbitrary joint counts
SkeletonSpec chain(int joints, double bone_length = 0.3);

}  // namespace mmdm
