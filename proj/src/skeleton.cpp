#include "mmdm/skeleton.hpp"

namespace mmdm {

SkeletonSpec human17() {
  SkeletonSpec s;
  s.parents = {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15};
  // left is +x, right is -x, y up
  s.offsets = {
      {0.00, 0.00, 0.00},    // 0 pelvis
      {-0.12, -0.04, 0.00},  // 1 rhip
      {0.00, -0.45, 0.00},   // 2 rknee
      {0.00, -0.45, 0.00},   // 3 rankle
      {0.12, -0.04, 0.00},   // 4 lhip
      {0.00, -0.45, 0.00},   // 5 lknee
      {0.00, -0.45, 0.00},   // 6 lankle
      {0.00, 0.25, 0.00},    // 7 spine
      {0.00, 0.25, 0.00},    // 8 thorax
      {0.00, 0.12, 0.00},    // 9 neck
      {0.00, 0.15, 0.00},    // 10 head
      {0.20, 0.02, 0.00},    // 11 lshoulder
      {0.00, -0.28, 0.00},   // 12 lelbow
      {0.00, -0.26, 0.00},   // 13 lwrist
      {-0.20, 0.02, 0.00},   // 14 rshoulder
      {0.00, -0.28, 0.00},   // 15 relbow
      {0.00, -0.26, 0.00},   // 16 rwrist
  };
  s.limbs = {{1, 2}, {2, 3}, {4, 5}, {5, 6}, {11, 12}, {12, 13}, {14, 15}, {15, 16}, {0, 8}, {9, 10}};
  s.lr_pairs = {{1, 4}, {2, 5}, {3, 6}, {11, 14}, {12, 15}, {13, 16}};
  s.mid_hip = 0;
  s.names = {"pelvis", "rhip",      "rknee",  "rankle", "lhip",      "lknee",
             "lankle", "spine",     "thorax", "neck",   "head",      "lshoulder",
             "lelbow", "lwrist",    "rshoulder", "relbow", "rwrist"};
  return s;
}

SkeletonSpec chain(int joints, double bone_length) {
  SkeletonSpec s;
  s.parents.resize(static_cast<size_t>(joints));
  s.offsets.resize(static_cast<size_t>(joints));
  for (int j = 0; j < joints; ++j) {
    s.parents[j] = j - 1;
    s.offsets[j] = {0.0, j == 0 ? 0.0 : bone_length, 0.0};
    if (j > 0) s.limbs.push_back({j - 1, j});
  }
  s.mid_hip = 0;
  return s;
}

}  // namespace mmdm
