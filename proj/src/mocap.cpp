#include "mmdm/mocap.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace mmdm::mocap {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kBig = 1e15;  // stands in for +inf inside the assignment solver

using Mat34 = Eigen::Matrix<double, 3, 4>;

Mat34 as_eigen(const CameraModel& cam) {
  Mat34 P;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) P(r, c) = cam.p(r, c);
  return P;
}

Eigen::Vector3d camera_center(const Mat34& P) {
  const Eigen::Matrix3d M = P.leftCols<3>();
  if (std::abs(M.determinant()) < 1e-12)
    throw DomainError("degenerate geometry: camera matrix is rank deficient");
  return -M.inverse() * P.col(3);
}

void fmt17(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

}  // namespace

CameraRig default_rig(int cameras, double radius_m, double height_m, double focal_px, int width,
                      int height) {
  if (cameras < 1) throw DomainError("rig needs at least one camera");
  CameraRig rig;
  const Eigen::Vector3d target(0.0, 0.0, 0.0);
  const Eigen::Vector3d world_up(0.0, 1.0, 0.0);
  for (int i = 0; i < cameras; ++i) {
    const double a = 2.0 * M_PI * i / cameras;
    const Eigen::Vector3d C(radius_m * std::cos(a), height_m, radius_m * std::sin(a));
    const Eigen::Vector3d zc = (target - C).normalized();
    const Eigen::Vector3d xc = world_up.cross(zc).normalized();
    const Eigen::Vector3d yc = zc.cross(xc);
    Eigen::Matrix3d R;
    R.row(0) = xc;
    R.row(1) = yc;
    R.row(2) = zc;
    Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
    K(0, 0) = K(1, 1) = focal_px;
    K(0, 2) = width / 2.0;
    K(1, 2) = height / 2.0;
    Mat34 Rt;
    Rt.leftCols<3>() = R;
    Rt.col(3) = -R * C;
    const Mat34 P = K * Rt;
    CameraModel cam;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) cam.P[r * 4 + c] = P(r, c);
    cam.width = width;
    cam.height = height;
    rig.push_back(cam);
  }
  return rig;
}

void save_rig(const CameraRig& rig, const std::string& path) {
  std::string out = "mmdm-rig v1 " + std::to_string(rig.size()) + "\n";
  for (const CameraModel& cam : rig) {
    for (int i = 0; i < 12; ++i) {
      if (i) out += ' ';
      fmt17(out, cam.P[i]);
    }
    out += "\n" + std::to_string(cam.width) + " " + std::to_string(cam.height) + "\n";
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path);
}

CameraRig load_rig(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw FormatError(1, "empty rig file");
  std::istringstream hs(line);
  std::string tag, ver;
  int count = 0;
  if (!(hs >> tag >> ver >> count) || tag != "mmdm-rig" || ver != "v1" || count < 1)
    throw FormatError(1, "bad header, expected 'mmdm-rig v1 <V>'");
  CameraRig rig;
  int line_no = 1;
  for (int i = 0; i < count; ++i) {
    CameraModel cam;
    ++line_no;
    if (!std::getline(f, line)) throw FormatError(line_no, "missing projection row");
    std::istringstream ps(line);
    for (int k = 0; k < 12; ++k)
      if (!(ps >> cam.P[k])) throw FormatError(line_no, "expected 12 projection values");
    ++line_no;
    if (!std::getline(f, line)) throw FormatError(line_no, "missing image size");
    std::istringstream ss(line);
    if (!(ss >> cam.width >> cam.height) || cam.width < 1 || cam.height < 1)
      throw FormatError(line_no, "bad image size");
    rig.push_back(cam);
  }
  return rig;
}

DetectionSet::DetectionSet(int people, int views, int frames, int joints)
    : people(people), views(views), frames(frames), joints(joints) {
  const int64_t n = static_cast<int64_t>(people) * views * frames * joints;
  p.assign(static_cast<size_t>(2 * n), 0.0);
  rho.assign(static_cast<size_t>(n), 0.0);
}

Reconstruction3D::Reconstruction3D(int people, int frames, int joints)
    : people(people), frames(frames), joints(joints) {
  const int64_t n = static_cast<int64_t>(people) * frames * joints;
  d.assign(static_cast<size_t>(3 * n), 0.0);
  sigma.assign(static_cast<size_t>(n), 0.0);
}

void save_detections(const DetectionSet& det, const std::string& path) {
  std::string out = "mmdm-detections v1 " + std::to_string(det.people) + " " +
                    std::to_string(det.views) + " " + std::to_string(det.frames) + " " +
                    std::to_string(det.joints) + "\n";
  for (int n = 0; n < det.people; ++n)
    for (int v = 0; v < det.views; ++v)
      for (int t = 0; t < det.frames; ++t)
        for (int j = 0; j < det.joints; ++j) {
          out += std::to_string(n) + " " + std::to_string(v) + " " + std::to_string(t) + " " +
                 std::to_string(j) + " ";
          fmt17(out, det.px(n, v, t, j));
          out += ' ';
          fmt17(out, det.py(n, v, t, j));
          out += ' ';
          fmt17(out, det.rho[det.idx(n, v, t, j)]);
          out += '\n';
        }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path);
}

DetectionSet load_detections(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw FormatError(1, "empty detections file");
  std::istringstream hs(line);
  std::string tag, ver;
  int N, V, T, J;
  if (!(hs >> tag >> ver >> N >> V >> T >> J) || tag != "mmdm-detections" || ver != "v1")
    throw FormatError(1, "bad header");
  DetectionSet det(N, V, T, J);
  int line_no = 1;
  for (int64_t i = 0; i < static_cast<int64_t>(N) * V * T * J; ++i) {
    ++line_no;
    if (!std::getline(f, line)) throw FormatError(line_no, "unexpected end of file");
    std::istringstream ls(line);
    int n, v, t, j;
    double x, y, r;
    if (!(ls >> n >> v >> t >> j >> x >> y >> r)) throw FormatError(line_no, "bad row");
    const int64_t k = det.idx(n, v, t, j);
    det.p[2 * k] = x;
    det.p[2 * k + 1] = y;
    det.rho[k] = r;
  }
  return det;
}

std::array<double, 2> project(const CameraModel& cam, const std::array<double, 3>& point) {
  const double x = point[0], y = point[1], z = point[2];
  const double hx = cam.p(0, 0) * x + cam.p(0, 1) * y + cam.p(0, 2) * z + cam.p(0, 3);
  const double hy = cam.p(1, 0) * x + cam.p(1, 1) * y + cam.p(1, 2) * z + cam.p(1, 3);
  const double hw = cam.p(2, 0) * x + cam.p(2, 1) * y + cam.p(2, 2) * z + cam.p(2, 3);
  if (hw <= 1e-12) throw DomainError("behind camera");
  return {hx / hw, hy / hw};
}

DetectionSet simulate_detections(const std::vector<motion::MotionSequence>& scene,
                                 const CameraRig& rig, const SimulationOptions& opt) {
  if (scene.empty()) throw DomainError("empty scene");
  const int T = scene[0].frames();
  const int J = scene[0].joints();
  for (const auto& m : scene) {
    if (m.feat_dim() != 3) throw ShapeMismatch("scene sequences must be 3d positions");
    if (m.frames() != T || m.joints() != J) throw ShapeMismatch("scene sequences must agree");
  }
  const int N = static_cast<int>(scene.size());
  const int V = static_cast<int>(rig.size());
  DetectionSet det(N, V, T, J);
  RandomStream rng(opt.seed ^ 0x64657473ULL);
  for (int n = 0; n < N; ++n)
    for (int v = 0; v < V; ++v)
      for (int t = 0; t < T; ++t)
        for (int j = 0; j < J; ++j) {
          const std::array<double, 3> X = {scene[n].value(t, j, 0), scene[n].value(t, j, 1),
                                           scene[n].value(t, j, 2)};
          const auto pix = project(rig[v], X);
          const double dx = opt.noise_px * rng.normal();
          const double dy = opt.noise_px * rng.normal();
          const bool occluded = rng.uniform() < opt.occl_prob;
          const int64_t k = det.idx(n, v, t, j);
          det.p[2 * k] = pix[0] + dx;
          det.p[2 * k + 1] = pix[1] + dy;
          det.rho[k] =
              occluded ? 0.0 : std::exp(-std::sqrt(dx * dx + dy * dy) / opt.conf_scale);
        }
  return det;
}

double epipolar_midhip_cost(const std::array<double, 2>& pix_a, double rho_a,
                            const std::array<double, 2>& pix_b, double rho_b,
                            const CameraModel& cam_a, const CameraModel& cam_b) {
  if (rho_a <= 0.0 || rho_b <= 0.0) return kInf;
  const Mat34 Pa = as_eigen(cam_a);
  const Mat34 Pb = as_eigen(cam_b);
  const Eigen::Vector3d Ca = camera_center(Pa);
  const Eigen::Vector3d Cb = camera_center(Pb);
  if ((Ca - Cb).norm() < 1e-9)
    throw DomainError("degenerate geometry: coincident camera centers");

  // F = [e_b]x Pb Pa^+   (HZ 9.2.4)
  Eigen::Vector4d Ca_h;
  Ca_h << Ca, 1.0;
  const Eigen::Vector3d eb = Pb * Ca_h;
  const Eigen::Matrix<double, 4, 3> Pa_pinv =
      Pa.transpose() * (Pa * Pa.transpose()).inverse();
  Eigen::Matrix3d ex;
  ex << 0, -eb(2), eb(1), eb(2), 0, -eb(0), -eb(1), eb(0), 0;
  const Eigen::Matrix3d F = ex * (Pb * Pa_pinv);

  const Eigen::Vector3d xa(pix_a[0], pix_a[1], 1.0);
  const Eigen::Vector3d xb(pix_b[0], pix_b[1], 1.0);
  const Eigen::Vector3d lb = F * xa;
  const Eigen::Vector3d la = F.transpose() * xb;
  const double db = std::abs(xb.dot(lb)) / std::hypot(lb(0), lb(1));
  const double da = std::abs(xa.dot(la)) / std::hypot(la(0), la(1));
  return 0.5 * (da + db);
}

std::vector<std::pair<int, int>> hungarian_match(const std::vector<double>& cost, int n, int m) {
  if (n < 1 || m < 1 || cost.size() != static_cast<size_t>(n) * m)
    throw ShapeMismatch("cost matrix size mismatch");
  const bool transposed = n > m;
  const int R = transposed ? m : n;
  const int C = transposed ? n : m;
  auto at = [&](int r, int c) -> double {
    const double v = transposed ? cost[static_cast<size_t>(c) * m + r]
                                : cost[static_cast<size_t>(r) * m + c];
    if (std::isnan(v)) throw DomainError("cost matrix contains NaN");
    return std::isinf(v) ? kBig : v;
  };

  // shortest augmenting path with potentials, rows 1..R, cols 1..C
  std::vector<double> u(R + 1, 0.0), v(C + 1, 0.0);
  std::vector<int> p(C + 1, 0), way(C + 1, 0);
  for (int i = 1; i <= R; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(C + 1, kInf);
    std::vector<char> used(C + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= C; ++j) {
        if (used[j]) continue;
        const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= C; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  std::vector<std::pair<int, int>> out;
  for (int j = 1; j <= C; ++j) {
    if (p[j] == 0) continue;
    const int r = p[j] - 1, c = j - 1;
    const double orig = transposed ? cost[static_cast<size_t>(c) * m + r]
                                   : cost[static_cast<size_t>(r) * m + c];
    if (std::isinf(orig))
      throw DomainError("infeasible: every complete assignment crosses an infinite cost");
    out.push_back(transposed ? std::make_pair(c, r) : std::make_pair(r, c));
  }
  std::sort(out.begin(), out.end());
  return out;
}

TriangulationResult triangulate(const std::vector<std::array<double, 2>>& points2d,
                                const CameraRig& cams, const std::vector<uint8_t>& visible) {
  if (points2d.size() != cams.size() || visible.size() != cams.size())
    throw ShapeMismatch("triangulate: per-view arrays must align");
  std::vector<int> vis;
  for (size_t v = 0; v < cams.size(); ++v)
    if (visible[v]) vis.push_back(static_cast<int>(v));
  if (vis.size() < 2) throw DomainError("insufficient views: triangulation needs >= 2");

  Eigen::MatrixXd A(2 * vis.size(), 4);
  for (size_t i = 0; i < vis.size(); ++i) {
    const Mat34 P = as_eigen(cams[vis[i]]);
    const double u = points2d[vis[i]][0];
    const double w = points2d[vis[i]][1];
    A.row(2 * i) = u * P.row(2) - P.row(0);
    A.row(2 * i + 1) = w * P.row(2) - P.row(1);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::Vector4d X = svd.matrixV().col(3);
  if (std::abs(X(3)) < 1e-14) throw DomainError("degenerate geometry: point at infinity");
  const Eigen::Vector3d x = X.head<3>() / X(3);

  // a noisy two-view solve can land behind a camera; that counts as a huge
  // residual, not a hard failure
  double acc = 0.0;
  for (int v : vis) {
    const CameraModel& cam = cams[v];
    const double hx = cam.p(0, 0) * x(0) + cam.p(0, 1) * x(1) + cam.p(0, 2) * x(2) + cam.p(0, 3);
    const double hy = cam.p(1, 0) * x(0) + cam.p(1, 1) * x(1) + cam.p(1, 2) * x(2) + cam.p(1, 3);
    const double hw = cam.p(2, 0) * x(0) + cam.p(2, 1) * x(1) + cam.p(2, 2) * x(2) + cam.p(2, 3);
    if (hw <= 1e-12) {
      acc += 1e12;
      continue;
    }
    const double dx = hx / hw - points2d[v][0];
    const double dy = hy / hw - points2d[v][1];
    acc += dx * dx + dy * dy;
  }
  TriangulationResult r;
  r.point = {x(0), x(1), x(2)};
  r.sigma_raw = std::sqrt(acc / vis.size());
  return r;
}

std::vector<std::vector<int>> track_identities(
    const std::vector<std::vector<std::vector<double>>>& frames, int joints) {
  if (frames.empty()) throw DomainError("tracking needs at least one frame");
  auto centroid = [joints](const std::vector<double>& person) {
    std::array<double, 3> c = {0, 0, 0};
    for (int j = 0; j < joints; ++j)
      for (int k = 0; k < 3; ++k) c[k] += person[static_cast<size_t>(j) * 3 + k];
    for (int k = 0; k < 3; ++k) c[k] /= joints;
    return c;
  };

  std::vector<std::vector<int>> ids(frames.size());
  std::vector<std::array<double, 3>> track_pos;
  for (size_t t = 0; t < frames.size(); ++t) {
    const auto& people = frames[t];
    ids[t].assign(people.size(), -1);
    std::vector<std::array<double, 3>> cents;
    for (const auto& person : people) {
      if (person.size() != static_cast<size_t>(joints) * 3)
        throw ShapeMismatch("tracking: person block must be J x 3");
      cents.push_back(centroid(person));
    }
    if (t == 0) {
      for (size_t i = 0; i < people.size(); ++i) {
        ids[t][i] = static_cast<int>(track_pos.size());
        track_pos.push_back(cents[i]);
      }
      continue;
    }
    // greedy global-minimum linking, deterministic tie-break on (track, det)
    std::vector<char> track_used(track_pos.size(), 0), det_used(people.size(), 0);
    const size_t links = std::min(track_pos.size(), people.size());
    for (size_t step = 0; step < links; ++step) {
      double best = kInf;
      int bi = -1, bj = -1;
      for (size_t i = 0; i < track_pos.size(); ++i) {
        if (track_used[i]) continue;
        for (size_t j = 0; j < people.size(); ++j) {
          if (det_used[j]) continue;
          const double dx = track_pos[i][0] - cents[j][0];
          const double dy = track_pos[i][1] - cents[j][1];
          const double dz = track_pos[i][2] - cents[j][2];
          const double d2 = dx * dx + dy * dy + dz * dz;
          if (d2 < best) {
            best = d2;
            bi = static_cast<int>(i);
            bj = static_cast<int>(j);
          }
        }
      }
      track_used[bi] = 1;
      det_used[bj] = 1;
      ids[t][bj] = bi;
      track_pos[bi] = cents[bj];
    }
    for (size_t j = 0; j < people.size(); ++j) {
      if (!det_used[j]) {
        ids[t][j] = static_cast<int>(track_pos.size());
        track_pos.push_back(cents[j]);
      }
    }
  }
  return ids;
}

MocapResult run_capture(const std::vector<motion::MotionSequence>& scene, const CameraRig& rig,
                        const SimulationOptions& opt, double sigma_max, bool shuffle_identities) {
  if (rig.size() < 2) throw DomainError("capture needs at least two cameras");
  const DetectionSet det = simulate_detections(scene, rig, opt);
  const int N = det.people, V = det.views, T = det.frames, J = det.joints;
  const int mid_hip = 0;

  // per-view, per-frame person order as a detector would emit it
  std::vector<std::vector<std::vector<int>>> order(
      V, std::vector<std::vector<int>>(T, std::vector<int>(N)));
  RandomStream shuffle_rng(opt.seed ^ 0x73687566ULL);
  for (int v = 0; v < V; ++v)
    for (int t = 0; t < T; ++t) {
      auto& o = order[v][t];
      for (int i = 0; i < N; ++i) o[i] = i;
      // the reference view keeps scene order at t = 0 so track ids line up
      // with the scene people
      if (shuffle_identities && !(v == 0 && t == 0))
        for (int i = N - 1; i > 0; --i) std::swap(o[i], o[shuffle_rng.uniform_int(i + 1)]);
    }

  // cross-view identity matching against view 0, per frame
  // match[v][t][slot0] = slot in view v holding the same person
  std::vector<std::vector<std::vector<int>>> match(
      V, std::vector<std::vector<int>>(T, std::vector<int>(N)));
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < N; ++s) match[0][t][s] = s;
  for (int v = 1; v < V; ++v) {
    for (int t = 0; t < T; ++t) {
      std::vector<double> cost(static_cast<size_t>(N) * N, 0.0);
      for (int a = 0; a < N; ++a) {
        const int pa = order[0][t][a];
        const std::array<double, 2> pix_a = {det.px(pa, 0, t, mid_hip),
                                             det.py(pa, 0, t, mid_hip)};
        const double rho_a = det.rho[det.idx(pa, 0, t, mid_hip)];
        for (int b = 0; b < N; ++b) {
          const int pb = order[v][t][b];
          const std::array<double, 2> pix_b = {det.px(pb, v, t, mid_hip),
                                               det.py(pb, v, t, mid_hip)};
          const double rho_b = det.rho[det.idx(pb, v, t, mid_hip)];
          cost[static_cast<size_t>(a) * N + b] =
              epipolar_midhip_cost(pix_a, rho_a, pix_b, rho_b, rig[0], rig[v]);
        }
      }
      try {
        for (const auto& [a, b] : hungarian_match(cost, N, N)) match[v][t][a] = b;
      } catch (const DomainError&) {
        // mid-hips occluded everywhere: reuse the previous frame's links
        match[v][t] = t > 0 ? match[v][t - 1] : match[0][t];
      }
    }
  }

  // triangulate every view-0 slot
  std::vector<std::vector<std::vector<double>>> people_frames(
      T, std::vector<std::vector<double>>(N, std::vector<double>(static_cast<size_t>(J) * 3, 0.0)));
  std::vector<std::vector<std::vector<double>>> sigma_frames(
      T, std::vector<std::vector<double>>(N, std::vector<double>(static_cast<size_t>(J), 1.0)));
  std::vector<std::vector<std::vector<double>>> rho_frames(
      T, std::vector<std::vector<double>>(
             N, std::vector<double>(static_cast<size_t>(V) * J, 0.0)));

  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < N; ++s) {
      for (int j = 0; j < J; ++j) {
        std::vector<std::array<double, 2>> pts(V);
        std::vector<uint8_t> vis(V, 0);
        int n_vis = 0;
        for (int v = 0; v < V; ++v) {
          const int person = order[v][t][match[v][t][s]];
          const double rho = det.rho[det.idx(person, v, t, j)];
          rho_frames[t][s][static_cast<size_t>(v) * J + j] = rho;
          pts[v] = {det.px(person, v, t, j), det.py(person, v, t, j)};
          if (rho > 0.0) {
            vis[v] = 1;
            ++n_vis;
          }
        }
        double sraw = sigma_max;  // unseen joints carry maximal error
        std::array<double, 3> X = {0.0, 0.0, 0.0};
        if (n_vis >= 2) {
          try {
            const TriangulationResult r = triangulate(pts, rig, vis);
            X = r.point;
            sraw = r.sigma_raw;
          } catch (const DomainError&) {
            // point at infinity: keep the maximal-error placeholder
          }
        }
        for (int k = 0; k < 3; ++k) people_frames[t][s][static_cast<size_t>(j) * 3 + k] = X[k];
        sigma_frames[t][s][j] = std::clamp(sraw / sigma_max, 0.0, 1.0);
      }
    }
  }

  const std::vector<std::vector<int>> track_ids = track_identities(people_frames, J);

  MocapResult result;
  result.detections = DetectionSet(N, V, T, J);
  result.reconstruction = Reconstruction3D(N, T, J);
  result.signals.assign(N, masking::QualitySignals(V, T, J));
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < N; ++s) {
      const int n = track_ids[t][s];
      for (int j = 0; j < J; ++j) {
        const int64_t k = result.reconstruction.idx(n, t, j);
        for (int c = 0; c < 3; ++c)
          result.reconstruction.d[3 * k + c] = people_frames[t][s][static_cast<size_t>(j) * 3 + c];
        result.reconstruction.sigma[k] = sigma_frames[t][s][j];
        result.signals[n].sigma_at(t, j) = sigma_frames[t][s][j];
        for (int v = 0; v < V; ++v) {
          const double rho = rho_frames[t][s][static_cast<size_t>(v) * J + j];
          result.signals[n].rho_at(v, t, j) = rho;
          const int person = order[v][t][match[v][t][s]];
          const int64_t dk = result.detections.idx(n, v, t, j);
          result.detections.p[2 * dk] = det.px(person, v, t, j);
          result.detections.p[2 * dk + 1] = det.py(person, v, t, j);
          result.detections.rho[dk] = rho;
        }
      }
    }
  }
  return result;
}

}  // namespace mmdm::mocap
