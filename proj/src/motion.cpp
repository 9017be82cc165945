#include "mmdm/motion.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mmdm::motion {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void require_d3(const MotionSequence& m, const char* op) {
  if (m.feat_dim() != 3)
    throw ShapeMismatch(std::string("wrong feature dim: ") + op + " needs d == 3");
}

std::array<double, 3> rotate_x(const std::array<double, 3>& v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {v[0], c * v[1] - s * v[2], s * v[1] + c * v[2]};
}

std::array<double, 3> rotate_z(const std::array<double, 3>& v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]};
}

std::array<double, 3> add3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}

std::array<double, 3> sub3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}

// swing chains of the 17-joint skeleton: pivot joint, rotated descendants,
// sign of the shared swing phase
struct Swing {
  int pivot;
  std::array<int, 2> moved;
  double sign;
  double amp_scale;
};

const Swing kSwings[4] = {
    {14, {15, 16}, +1.0, 1.0},  // right arm
    {11, {12, 13}, -1.0, 1.0},  // left arm
    {1, {2, 3}, -1.0, 0.8},     // right leg
    {4, {5, 6}, +1.0, 0.8},     // left leg
};

void fmt17(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

}  // namespace

MotionSequence::MotionSequence(int frames, int joints, int feat_dim)
    : frames_(frames), joints_(joints), feat_dim_(feat_dim) {
  if (frames < 1 || joints < 1 || feat_dim < 1)
    throw ShapeMismatch("motion sequence dimensions must be >= 1");
  values_.assign(static_cast<size_t>(frames) * joints * feat_dim, 0.0);
  mask_.assign(static_cast<size_t>(frames) * joints, 0);
}

int MotionSequence::masked_count() const {
  int n = 0;
  for (uint8_t m : mask_) n += m;
  return n;
}

void SegmentSplit::validate(int frames) const {
  if (preceding < 1 || transition < 1 || succeeding < 1 || total() != frames)
    throw DomainError("bad split: segment lengths must be >= 1 and sum to T");
}

std::string packing_map() {
  return
      "token 0  : root_rot_vel[0..5], root_ang_vel, root_lin_vel_x, root_lin_vel_z, "
      "root_height, pad, pad\n"
      "token j  : joint_rot[j-1][0..5], joint_pos[j-1][0..2], joint_vel[j-1][0..2]  (j = 1..21)\n"
      "contacts : 4 labels per frame in the side channel (outside the 12 slots)";
}

std::pair<MotionSequence, std::vector<std::array<double, 3>>> normalize_centroid(
    const MotionSequence& m) {
  require_d3(m, "normalize_centroid");
  MotionSequence out = m;
  std::vector<std::array<double, 3>> centroids(static_cast<size_t>(m.frames()));
  for (int t = 0; t < m.frames(); ++t) {
    std::array<double, 3> c = {0, 0, 0};
    for (int j = 0; j < m.joints(); ++j)
      for (int k = 0; k < 3; ++k) c[k] += m.value(t, j, k);
    for (int k = 0; k < 3; ++k) c[k] /= m.joints();
    centroids[t] = c;
    for (int j = 0; j < m.joints(); ++j)
      for (int k = 0; k < 3; ++k) out.value(t, j, k) = m.value(t, j, k) - c[k];
  }
  return {std::move(out), std::move(centroids)};
}

MotionSequence denormalize_centroid(const MotionSequence& m,
                                    const std::vector<std::array<double, 3>>& centroids) {
  require_d3(m, "denormalize_centroid");
  if (static_cast<int>(centroids.size()) != m.frames())
    throw ShapeMismatch("centroid count does not match frame count");
  MotionSequence out = m;
  for (int t = 0; t < m.frames(); ++t)
    for (int j = 0; j < m.joints(); ++j)
      for (int k = 0; k < 3; ++k) out.value(t, j, k) = m.value(t, j, k) + centroids[t][k];
  return out;
}

MotionSequence augment_rotate_yaw(const MotionSequence& m, double angle_deg) {
  require_d3(m, "augment_rotate_yaw");
  if (angle_deg < -180.0 || angle_deg > 180.0)
    throw DomainError("yaw angle out of [-180, 180]");
  if (angle_deg == 0.0) return m;
  const double a = angle_deg * (kTwoPi / 360.0);
  const double c = std::cos(a), s = std::sin(a);
  MotionSequence out = m;
  for (int t = 0; t < m.frames(); ++t) {
    for (int j = 0; j < m.joints(); ++j) {
      const double x = m.value(t, j, 0), z = m.value(t, j, 2);
      out.value(t, j, 0) = c * x + s * z;
      out.value(t, j, 2) = -s * x + c * z;
    }
  }
  return out;
}

MotionSequence augment_flip(const MotionSequence& m,
                            const std::vector<std::pair<int, int>>& lr_pairs) {
  require_d3(m, "augment_flip");
  std::vector<uint8_t> used(static_cast<size_t>(m.joints()), 0);
  for (auto [a, b] : lr_pairs) {
    if (a < 0 || b < 0 || a >= m.joints() || b >= m.joints() || a == b)
      throw DomainError("invalid pair list: bad joint index");
    if (used[a]++ || used[b]++) throw DomainError("invalid pair list: pairs must be disjoint");
  }
  MotionSequence out = m;
  for (int t = 0; t < m.frames(); ++t) {
    for (int j = 0; j < m.joints(); ++j) out.value(t, j, 0) = -m.value(t, j, 0);
    for (auto [a, b] : lr_pairs) {
      for (int k = 0; k < 3; ++k) std::swap(out.value(t, a, k), out.value(t, b, k));
      const bool ma = out.masked(t, a), mb = out.masked(t, b);
      out.set_masked(t, a, mb);
      out.set_masked(t, b, ma);
    }
  }
  return out;
}

JointLevelRepr pack_joint_level(const ChannelBundle& ch) {
  const int T = ch.frames;
  if (T < 1) throw ShapeMismatch("channel size mismatch: frames must be >= 1");
  auto expect = [T](const std::vector<double>& v, int per_frame, const char* name) {
    if (static_cast<int64_t>(v.size()) != static_cast<int64_t>(T) * per_frame)
      throw ShapeMismatch(std::string("channel size mismatch: ") + name);
  };
  expect(ch.root_rot_vel, 6, "root_rot_vel");
  expect(ch.root_ang_vel, 1, "root_ang_vel");
  expect(ch.root_lin_vel_x, 1, "root_lin_vel_x");
  expect(ch.root_lin_vel_z, 1, "root_lin_vel_z");
  expect(ch.root_height, 1, "root_height");
  expect(ch.joint_rot, 21 * 6, "joint_rot");
  expect(ch.joint_pos, 21 * 3, "joint_pos");
  expect(ch.joint_vel, 21 * 3, "joint_vel");
  expect(ch.contacts, 4, "contacts");

  JointLevelRepr r;
  r.frames = T;
  r.values.assign(static_cast<size_t>(T) * 22 * 12, 0.0);
  r.contacts = ch.contacts;
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < 6; ++k) r.at(t, 0, k) = ch.root_rot_vel[t * 6 + k];
    r.at(t, 0, 6) = ch.root_ang_vel[t];
    r.at(t, 0, 7) = ch.root_lin_vel_x[t];
    r.at(t, 0, 8) = ch.root_lin_vel_z[t];
    r.at(t, 0, 9) = ch.root_height[t];
    // slots 10..11 stay zero padding
    for (int j = 0; j < 21; ++j) {
      for (int k = 0; k < 6; ++k) r.at(t, j + 1, k) = ch.joint_rot[(t * 21 + j) * 6 + k];
      for (int k = 0; k < 3; ++k) r.at(t, j + 1, 6 + k) = ch.joint_pos[(t * 21 + j) * 3 + k];
      for (int k = 0; k < 3; ++k) r.at(t, j + 1, 9 + k) = ch.joint_vel[(t * 21 + j) * 3 + k];
    }
  }
  return r;
}

ChannelBundle unpack_joint_level(const JointLevelRepr& r) {
  const int T = r.frames;
  if (static_cast<int64_t>(r.values.size()) != static_cast<int64_t>(T) * 22 * 12)
    throw ShapeMismatch("channel size mismatch: repr values");
  if (static_cast<int64_t>(r.contacts.size()) != static_cast<int64_t>(T) * 4)
    throw ShapeMismatch("channel size mismatch: repr contacts");
  ChannelBundle ch;
  ch.frames = T;
  ch.root_rot_vel.resize(static_cast<size_t>(T) * 6);
  ch.root_ang_vel.resize(static_cast<size_t>(T));
  ch.root_lin_vel_x.resize(static_cast<size_t>(T));
  ch.root_lin_vel_z.resize(static_cast<size_t>(T));
  ch.root_height.resize(static_cast<size_t>(T));
  ch.joint_rot.resize(static_cast<size_t>(T) * 21 * 6);
  ch.joint_pos.resize(static_cast<size_t>(T) * 21 * 3);
  ch.joint_vel.resize(static_cast<size_t>(T) * 21 * 3);
  ch.contacts = r.contacts;
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < 6; ++k) ch.root_rot_vel[t * 6 + k] = r.at(t, 0, k);
    ch.root_ang_vel[t] = r.at(t, 0, 6);
    ch.root_lin_vel_x[t] = r.at(t, 0, 7);
    ch.root_lin_vel_z[t] = r.at(t, 0, 8);
    ch.root_height[t] = r.at(t, 0, 9);
    for (int j = 0; j < 21; ++j) {
      for (int k = 0; k < 6; ++k) ch.joint_rot[(t * 21 + j) * 6 + k] = r.at(t, j + 1, k);
      for (int k = 0; k < 3; ++k) ch.joint_pos[(t * 21 + j) * 3 + k] = r.at(t, j + 1, 6 + k);
      for (int k = 0; k < 3; ++k) ch.joint_vel[(t * 21 + j) * 3 + k] = r.at(t, j + 1, 9 + k);
    }
  }
  return ch;
}

SynthKind synth_kind_from_string(const std::string& s) {
  if (s == "sinusoid-limb") return SynthKind::SinusoidLimb;
  if (s == "linear-walk") return SynthKind::LinearWalk;
  if (s == "figure-eight") return SynthKind::FigureEight;
  throw DomainError("unknown kind: " + s);
}

MotionSequence synth_motion(SynthKind kind, int frames, int joints, uint64_t seed,
                            SynthInfo* info) {
  if (frames < 2) throw DomainError("synth_motion needs T >= 2");
  if (joints < 1) throw DomainError("synth_motion needs J >= 1");
  RandomStream rng(seed ^ 0x6d6d646dULL);
  SynthInfo si;
  si.amplitude = rng.uniform(0.3, 0.8);
  si.frequency = rng.uniform(0.05, 0.15);
  si.phase = rng.uniform(0.0, kTwoPi);
  si.heading = rng.uniform(0.0, kTwoPi);
  si.speed = rng.uniform(0.02, 0.06);
  si.radius = rng.uniform(0.5, 1.5);
  si.root0 = {rng.uniform(-0.5, 0.5), 0.95, rng.uniform(-0.5, 0.5)};
  if (info) *info = si;

  MotionSequence out(frames, joints, 3);
  const bool human = joints == 17;
  const SkeletonSpec skel = human ? human17() : chain(joints, 0.25);

  for (int t = 0; t < frames; ++t) {
    std::array<double, 3> root = si.root0;
    switch (kind) {
      case SynthKind::SinusoidLimb:
        break;
      case SynthKind::LinearWalk:
        root[0] += si.speed * t * std::sin(si.heading);
        root[2] += si.speed * t * std::cos(si.heading);
        break;
      case SynthKind::FigureEight: {
        const double u = kTwoPi * t / frames;
        root[0] += si.radius * std::sin(u);
        root[2] += 0.5 * si.radius * std::sin(2.0 * u);
        break;
      }
    }
    std::vector<std::array<double, 3>> pos(static_cast<size_t>(joints));
    if (human) {
      pos[0] = root;
      for (int j = 1; j < joints; ++j) pos[j] = add3(pos[skel.parents[j]], skel.offsets[j]);
      const double theta = si.amplitude * std::sin(kTwoPi * si.frequency * t + si.phase);
      for (const Swing& sw : kSwings) {
        const double a = sw.sign * sw.amp_scale * theta;
        for (int d : sw.moved) pos[d] = add3(pos[sw.pivot], rotate_x(sub3(pos[d], pos[sw.pivot]), a));
      }
    } else {
      // serpentine chain: each link turns about z by a phase-shifted sinusoid
      pos[0] = root;
      double psi = 0.0;
      for (int j = 1; j < joints; ++j) {
        psi += 0.5 * si.amplitude * std::sin(kTwoPi * si.frequency * t + si.phase + 0.4 * j);
        pos[j] = add3(pos[j - 1], rotate_z({0.0, 0.25, 0.0}, psi));
      }
    }
    for (int j = 0; j < joints; ++j)
      for (int k = 0; k < 3; ++k) out.value(t, j, k) = pos[j][k];
  }
  return out;
}

ChannelBundle synth_bundle(int frames, uint64_t seed) {
  if (frames < 2) throw DomainError("synth_bundle needs T >= 2");
  RandomStream rng(seed ^ 0x62756e64ULL);
  ChannelBundle ch;
  ch.frames = frames;
  const int T = frames;
  ch.root_rot_vel.resize(static_cast<size_t>(T) * 6);
  ch.root_ang_vel.resize(static_cast<size_t>(T));
  ch.root_lin_vel_x.resize(static_cast<size_t>(T));
  ch.root_lin_vel_z.resize(static_cast<size_t>(T));
  ch.root_height.resize(static_cast<size_t>(T));
  ch.joint_rot.resize(static_cast<size_t>(T) * 21 * 6);
  ch.joint_pos.resize(static_cast<size_t>(T) * 21 * 3);
  ch.joint_vel.resize(static_cast<size_t>(T) * 21 * 3);
  ch.contacts.resize(static_cast<size_t>(T) * 4);

  const double f = rng.uniform(0.02, 0.08);
  const double fr = rng.uniform(0.01, 0.05);
  const double amp_yaw = rng.uniform(0.1, 0.5);
  std::vector<double> jamp(21), jphase(21);
  std::vector<std::array<double, 3>> rest(21), axis(21);
  for (int j = 0; j < 21; ++j) {
    jamp[j] = rng.uniform(0.05, 0.3);
    jphase[j] = rng.uniform(0.0, kTwoPi);
    rest[j] = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    axis[j] = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  }

  for (int t = 0; t < T; ++t) {
    const double yaw = amp_yaw * std::sin(kTwoPi * fr * t);
    const double cy = std::cos(yaw), sy = std::sin(yaw);
    // first two columns of R_y(yaw), column-major
    const double r6[6] = {cy, 0.0, -sy, 0.0, 1.0, 0.0};
    for (int k = 0; k < 6; ++k) ch.root_rot_vel[t * 6 + k] = r6[k];
    ch.root_ang_vel[t] = amp_yaw * kTwoPi * fr * std::cos(kTwoPi * fr * t);
    ch.root_lin_vel_x[t] = 0.03 * std::sin(kTwoPi * f * t);
    ch.root_lin_vel_z[t] = 0.03 * std::cos(kTwoPi * f * t);
    ch.root_height[t] = 0.9 + 0.05 * std::sin(kTwoPi * f * t);
    for (int j = 0; j < 21; ++j) {
      const double a = jamp[j] * std::sin(kTwoPi * f * t + jphase[j]);
      const double c = std::cos(a), s = std::sin(a);
      const double rot6[6] = {c, 0.0, -s, 0.0, 1.0, 0.0};  // R_y(a) columns 0,1
      for (int k = 0; k < 6; ++k) ch.joint_rot[(t * 21 + j) * 6 + k] = rot6[k];
      for (int k = 0; k < 3; ++k) {
        ch.joint_pos[(t * 21 + j) * 3 + k] = rest[j][k] + 0.1 * axis[j][k] * std::sin(kTwoPi * f * t + jphase[j]);
        ch.joint_vel[(t * 21 + j) * 3 + k] =
            0.1 * axis[j][k] * kTwoPi * f * std::cos(kTwoPi * f * t + jphase[j]);
      }
    }
    for (int k = 0; k < 4; ++k)
      ch.contacts[t * 4 + k] = std::sin(kTwoPi * f * t + 1.7 * k) > 0 ? 1.0 : 0.0;
  }
  return ch;
}

void save_motion(const MotionSequence& m, const std::string& path) {
  std::string out;
  out.reserve(static_cast<size_t>(m.frames()) * m.joints() * (m.feat_dim() + 2) * 20);
  out += "mmdm-motion v1 " + std::to_string(m.frames()) + " " + std::to_string(m.joints()) +
         " " + std::to_string(m.feat_dim()) + "\n";
  for (int t = 0; t < m.frames(); ++t) {
    for (int j = 0; j < m.joints(); ++j) {
      out += std::to_string(t);
      out += ' ';
      out += std::to_string(j);
      for (int c = 0; c < m.feat_dim(); ++c) {
        out += ' ';
        fmt17(out, m.value(t, j, c));
      }
      out += m.masked(t, j) ? " 1\n" : " 0\n";
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path);
}

MotionSequence load_motion(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string line;
  int line_no = 1;
  if (!std::getline(f, line)) throw FormatError(1, "empty file");
  std::istringstream hs(line);
  std::string tag, ver;
  int T = 0, J = 0, d = 0;
  if (!(hs >> tag >> ver >> T >> J >> d) || tag != "mmdm-motion" || ver != "v1")
    throw FormatError(1, "bad header, expected 'mmdm-motion v1 <T> <J> <d>'");
  if (T < 1 || J < 1 || d < 1) throw FormatError(1, "non-positive dimensions");
  std::string extra;
  if (hs >> extra) throw FormatError(1, "trailing tokens in header");

  MotionSequence m(T, J, d);
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < J; ++j) {
      ++line_no;
      if (!std::getline(f, line)) throw FormatError(line_no, "unexpected end of file");
      std::istringstream ls(line);
      int ft = -1, fj = -1;
      if (!(ls >> ft >> fj)) throw FormatError(line_no, "expected 't j' indices");
      if (ft != t || fj != j) throw FormatError(line_no, "rows must be t-major then j");
      for (int c = 0; c < d; ++c) {
        double v;
        if (!(ls >> v)) throw FormatError(line_no, "missing value");
        if (!std::isfinite(v)) throw FormatError(line_no, "non-finite value");
        m.value(t, j, c) = v;
      }
      int mk;
      if (!(ls >> mk) || (mk != 0 && mk != 1)) throw FormatError(line_no, "mask bit must be 0 or 1");
      if (ls >> extra) throw FormatError(line_no, "trailing tokens");
      m.set_masked(t, j, mk == 1);
    }
  }
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty()) throw FormatError(line_no, "trailing content after data");
  }
  return m;
}

}  // namespace mmdm::motion
