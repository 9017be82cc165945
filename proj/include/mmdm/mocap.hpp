#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mmdm/common.hpp"
#include "mmdm/masking.hpp"
#include "mmdm/motion.hpp"

namespace mmdm::mocap {

// Calibrated pinhole camera: 3x4 projection (meters -> pixels), row-major.
struct CameraModel {
  std::array<double, 12> P;
  int width = 1280;
  int height = 1024;

  double p(int r, int c) const { return P[r * 4 + c]; }
};

using CameraRig = std::vector<CameraModel>;

// V cameras on a circle looking at the origin.
CameraRig default_rig(int cameras = 4, double radius_m = 5.0, double height_m = 1.6,
                      double focal_px = 1100.0, int width = 1280, int height = 1024);

void save_rig(const CameraRig& rig, const std::string& path);
CameraRig load_rig(const std::string& path);

// Per-person, per-view 2D detections with confidences. rho = 0 marks a joint
// invisible in that view.
struct DetectionSet {
  int people = 0, views = 0, frames = 0, joints = 0;
  std::vector<double> p;    // N x V x T x J x 2, pixels
  std::vector<double> rho;  // N x V x T x J

  DetectionSet() = default;
  DetectionSet(int people, int views, int frames, int joints);
  int64_t idx(int n, int v, int t, int j) const {
    return ((static_cast<int64_t>(n) * views + v) * frames + t) * joints + j;
  }
  double px(int n, int v, int t, int j) const { return p[2 * idx(n, v, t, j)]; }
  double py(int n, int v, int t, int j) const { return p[2 * idx(n, v, t, j) + 1]; }
};

void save_detections(const DetectionSet& d, const std::string& path);
DetectionSet load_detections(const std::string& path);

// Triangulated people with normalized reprojection errors.
struct Reconstruction3D {
  int people = 0, frames = 0, joints = 0;
  std::vector<double> d;      // N x T x J x 3, meters
  std::vector<double> sigma;  // N x T x J, in [0, 1]

  Reconstruction3D() = default;
  Reconstruction3D(int people, int frames, int joints);
  int64_t idx(int n, int t, int j) const {
    return (static_cast<int64_t>(n) * frames + t) * joints + j;
  }
};

// ---- geometry

// Perspective projection; BehindCamera when the homogeneous depth is not
// positive.
std::array<double, 2> project(const CameraModel& cam, const std::array<double, 3>& point);

struct SimulationOptions {
  double noise_px = 0.0;     // isotropic Gaussian pixel noise
  double occl_prob = 0.0;    // independent per (view, frame, joint)
  double conf_scale = 10.0;  // rho = exp(-|noise| / conf_scale)
  uint64_t seed = 0;
};

// Projects every scene person into every view, with noise, occlusion and the
// confidence model above. People are identity-aligned in the output.
DetectionSet simulate_detections(const std::vector<motion::MotionSequence>& scene,
                                 const CameraRig& rig, const SimulationOptions& opt);

// Symmetric epipolar distance (pixels) of two mid-hip detections; +inf when
// either is invisible.
double epipolar_midhip_cost(const std::array<double, 2>& pix_a, double rho_a,
                            const std::array<double, 2>& pix_b, double rho_b,
                            const CameraModel& cam_a, const CameraModel& cam_b);

// Minimum-cost assignment over min(n, m) pairs. +inf entries are never chosen
// while a finite completion exists; InfeasibleAll otherwise.
std::vector<std::pair<int, int>> hungarian_match(const std::vector<double>& cost, int n, int m);

struct TriangulationResult {
  std::array<double, 3> point;
  double sigma_raw = 0.0;  // RMS reprojection error in pixels
};

// DLT least squares over the visible views (>= 2 required).
TriangulationResult triangulate(const std::vector<std::array<double, 2>>& points2d,
                                const CameraRig& cams, const std::vector<uint8_t>& visible);

// Greedy nearest-centroid identity linking. frames[t] lists people as J x 3
// value blocks in arbitrary per-frame order; returns for each frame the
// track id of each listed person.
std::vector<std::vector<int>> track_identities(
    const std::vector<std::vector<std::vector<double>>>& frames, int joints);

// ---- full chain

struct MocapResult {
  DetectionSet detections;                        // identity-aligned after matching
  Reconstruction3D reconstruction;
  std::vector<masking::QualitySignals> signals;   // per person
};

// simulate -> shuffle per view -> epipolar+Hungarian matching -> triangulate
// -> track; sigma_max normalizes raw reprojection error into [0, 1].
MocapResult run_capture(const std::vector<motion::MotionSequence>& scene, const CameraRig& rig,
                        const SimulationOptions& opt, double sigma_max = 20.0,
                        bool shuffle_identities = true);

}  // namespace mmdm::mocap
