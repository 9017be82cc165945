#include "mmdm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace mmdm::metrics {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void check_match(const motion::MotionSequence& a, const motion::MotionSequence& b) {
  if (a.frames() != b.frames() || a.joints() != b.joints() || a.feat_dim() != b.feat_dim())
    throw ShapeMismatch("sequences must have identical shape");
}

double joint_dist(const motion::MotionSequence& a, const motion::MotionSequence& b, int t, int j) {
  double acc = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double d = a.value(t, j, c) - b.value(t, j, c);
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace

double pcp(const motion::MotionSequence& pred, const motion::MotionSequence& gt,
           const SkeletonSpec& skeleton) {
  check_match(pred, gt);
  if (pred.feat_dim() != 3) throw ShapeMismatch("pcp needs 3d positions");
  if (skeleton.limbs.empty()) throw DomainError("skeleton has no limbs");
  int64_t correct = 0, total = 0;
  for (int t = 0; t < gt.frames(); ++t) {
    for (const auto& [a, b] : skeleton.limbs) {
      if (a < 0 || b < 0 || a >= gt.joints() || b >= gt.joints())
        throw ShapeMismatch("limb index outside the skeleton");
      double len = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double d = gt.value(t, a, c) - gt.value(t, b, c);
        len += d * d;
      }
      len = std::sqrt(len);
      if (len <= 0.0) throw DomainError("zero length limb in the ground truth");
      const double half = 0.5 * len;
      ++total;
      if (joint_dist(pred, gt, t, a) < half && joint_dist(pred, gt, t, b) < half) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

double mpjpe(const motion::MotionSequence& pred, const motion::MotionSequence& gt) {
  check_match(pred, gt);
  if (pred.feat_dim() != 3) throw ShapeMismatch("mpjpe needs 3d positions");
  double acc = 0.0;
  for (int t = 0; t < gt.frames(); ++t)
    for (int j = 0; j < gt.joints(); ++j) acc += joint_dist(pred, gt, t, j);
  return 1000.0 * acc / (static_cast<double>(gt.frames()) * gt.joints());
}

std::pair<double, double> precision_recall(const std::vector<JointEstimate>& pred,
                                           const std::vector<JointEstimate>& gt,
                                           double threshold_m) {
  if (pred.size() != gt.size()) throw ShapeMismatch("correspondence lists must align");
  if (threshold_m <= 0.0) throw DomainError("threshold must be positive");
  int64_t n_pred = 0, n_gt = 0, correct = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].present) ++n_pred;
    if (gt[i].present) ++n_gt;
    if (pred[i].present && gt[i].present) {
      double acc = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double d = pred[i].p[c] - gt[i].p[c];
        acc += d * d;
      }
      if (std::sqrt(acc) < threshold_m) ++correct;  // strictly less than
    }
  }
  if (n_pred == 0 || n_gt == 0) throw DomainError("empty sets: nothing to score");
  return {100.0 * correct / static_cast<double>(n_pred),
          100.0 * correct / static_cast<double>(n_gt)};
}

double accel_error(const motion::MotionSequence& pred, const motion::MotionSequence& gt) {
  check_match(pred, gt);
  if (pred.feat_dim() != 3) throw ShapeMismatch("accel needs 3d positions");
  if (gt.frames() < 3) throw DomainError("too short: acceleration needs T >= 3");
  double acc = 0.0;
  int64_t count = 0;
  for (int t = 1; t + 1 < gt.frames(); ++t) {
    for (int j = 0; j < gt.joints(); ++j) {
      double norm2 = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double ap =
            pred.value(t + 1, j, c) - 2.0 * pred.value(t, j, c) + pred.value(t - 1, j, c);
        const double ag = gt.value(t + 1, j, c) - 2.0 * gt.value(t, j, c) + gt.value(t - 1, j, c);
        norm2 += (ap - ag) * (ap - ag);
      }
      acc += std::sqrt(norm2);
      ++count;
    }
  }
  return 1000.0 * acc / static_cast<double>(count);
}

double l2p(const std::vector<double>& pred, const std::vector<double>& gt, int frames) {
  if (pred.size() != gt.size()) throw ShapeMismatch("l2p inputs must align");
  if (frames < 1 || pred.size() % static_cast<size_t>(frames) != 0)
    throw ShapeMismatch("l2p frame count does not divide the data");
  const size_t per = pred.size() / frames;
  double acc = 0.0;
  for (int t = 0; t < frames; ++t) {
    double n2 = 0.0;
    for (size_t i = 0; i < per; ++i) {
      const double d = pred[t * per + i] - gt[t * per + i];
      n2 += d * d;
    }
    acc += std::sqrt(n2);
  }
  return acc / frames;
}

double l2q(const std::vector<std::array<double, 4>>& pred,
           const std::vector<std::array<double, 4>>& gt, int frames, int joints) {
  if (pred.size() != gt.size() ||
      pred.size() != static_cast<size_t>(frames) * static_cast<size_t>(joints))
    throw ShapeMismatch("l2q inputs must be T x J quaternions");
  auto check_unit = [](const std::array<double, 4>& q) {
    const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    if (std::abs(n - 1.0) > 1e-6) throw DomainError("not a unit quaternion");
  };
  double acc = 0.0;
  for (int t = 0; t < frames; ++t) {
    double n2 = 0.0;
    for (int j = 0; j < joints; ++j) {
      const auto& q = gt[static_cast<size_t>(t) * joints + j];
      const auto& qh = pred[static_cast<size_t>(t) * joints + j];
      check_unit(q);
      check_unit(qh);
      double dm = 0.0, dp = 0.0;
      for (int c = 0; c < 4; ++c) {
        dm += (q[c] - qh[c]) * (q[c] - qh[c]);
        dp += (q[c] + qh[c]) * (q[c] + qh[c]);
      }
      n2 += std::min(dm, dp);  // antipodal equivalence
    }
    acc += std::sqrt(n2);
  }
  return acc / frames;
}

double npss(const std::vector<double>& pred, const std::vector<double>& gt, int frames,
            int channels) {
  if (pred.size() != gt.size() ||
      pred.size() != static_cast<size_t>(frames) * static_cast<size_t>(channels))
    throw ShapeMismatch("npss inputs must be T x C");
  if (frames < 2) throw DomainError("too short: npss needs T >= 2");

  // per-channel power spectrum, DC bin excluded
  const int nbins = frames / 2;  // positive-frequency bins 1..T/2
  if (nbins < 1) throw DomainError("too short: npss needs at least one non-DC bin");
  auto spectrum = [&](const std::vector<double>& x, int c, std::vector<double>& power) {
    power.assign(static_cast<size_t>(nbins), 0.0);
    for (int f = 1; f <= nbins; ++f) {
      double re = 0.0, im = 0.0;
      for (int t = 0; t < frames; ++t) {
        const double a = kTwoPi * f * t / frames;
        const double v = x[static_cast<size_t>(t) * channels + c];
        re += v * std::cos(a);
        im -= v * std::sin(a);
      }
      power[f - 1] = re * re + im * im;
    }
  };

  // spectra below the rounding floor of the DFT count as empty, so constant
  // channels do not turn numerical noise into spurious distributions
  auto channel_ssq = [&](const std::vector<double>& x, int c) {
    double ssq = 0.0;
    for (int t = 0; t < frames; ++t) {
      const double v = x[static_cast<size_t>(t) * channels + c];
      ssq += v * v;
    }
    return ssq;
  };

  std::vector<double> emd(static_cast<size_t>(channels), 0.0);
  std::vector<double> gt_power(static_cast<size_t>(channels), 0.0);
  std::vector<double> pp, pg;
  for (int c = 0; c < channels; ++c) {
    spectrum(pred, c, pp);
    spectrum(gt, c, pg);
    double sp = 0.0, sg = 0.0;
    for (int f = 0; f < nbins; ++f) {
      sp += pp[f];
      sg += pg[f];
    }
    if (sp <= 1e-18 * channel_ssq(pred, c)) sp = 0.0;
    if (sg <= 1e-18 * channel_ssq(gt, c)) sg = 0.0;
    gt_power[c] = sg;
    if (sp <= 0.0 && sg <= 0.0) {
      emd[c] = 0.0;  // both spectra empty: identical
      continue;
    }
    // cumulative-distribution comparison (earth-mover distance on the line)
    double cp = 0.0, cg = 0.0, d = 0.0;
    for (int f = 0; f < nbins; ++f) {
      cp += sp > 0.0 ? pp[f] / sp : 0.0;
      cg += sg > 0.0 ? pg[f] / sg : 0.0;
      d += std::abs(cp - cg);
    }
    emd[c] = d;
  }
  double total = 0.0;
  for (double w : gt_power) total += w;
  if (total <= 0.0) return 0.0;  // constant ground truth
  double out = 0.0;
  for (int c = 0; c < channels; ++c) out += emd[c] * (gt_power[c] / total);
  return out;
}

std::array<double, 4> rot6d_to_quat(const std::array<double, 6>& r6) {
  // columns a1 = r6[0..2], a2 = r6[3..5]; Gram-Schmidt to a rotation matrix
  std::array<double, 3> b1 = {r6[0], r6[1], r6[2]};
  double n1 = std::sqrt(b1[0] * b1[0] + b1[1] * b1[1] + b1[2] * b1[2]);
  if (n1 < 1e-12) throw DomainError("degenerate rotation-6d");
  for (double& v : b1) v /= n1;
  std::array<double, 3> a2 = {r6[3], r6[4], r6[5]};
  const double dot = b1[0] * a2[0] + b1[1] * a2[1] + b1[2] * a2[2];
  std::array<double, 3> b2 = {a2[0] - dot * b1[0], a2[1] - dot * b1[1], a2[2] - dot * b1[2]};
  double n2 = std::sqrt(b2[0] * b2[0] + b2[1] * b2[1] + b2[2] * b2[2]);
  if (n2 < 1e-12) throw DomainError("degenerate rotation-6d");
  for (double& v : b2) v /= n2;
  const std::array<double, 3> b3 = {b1[1] * b2[2] - b1[2] * b2[1], b1[2] * b2[0] - b1[0] * b2[2],
                                    b1[0] * b2[1] - b1[1] * b2[0]};
  // rotation matrix columns b1 b2 b3 -> quaternion (w,x,y,z)
  const double m00 = b1[0], m01 = b2[0], m02 = b3[0];
  const double m10 = b1[1], m11 = b2[1], m12 = b3[1];
  const double m20 = b1[2], m21 = b2[2], m22 = b3[2];
  const double tr = m00 + m11 + m22;
  std::array<double, 4> q;
  if (tr > 0.0) {
    const double s = std::sqrt(tr + 1.0) * 2.0;
    q = {0.25 * s, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s};
  } else if (m00 > m11 && m00 > m22) {
    const double s = std::sqrt(1.0 + m00 - m11 - m22) * 2.0;
    q = {(m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s};
  } else if (m11 > m22) {
    const double s = std::sqrt(1.0 + m11 - m00 - m22) * 2.0;
    q = {(m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s};
  } else {
    const double s = std::sqrt(1.0 + m22 - m00 - m11) * 2.0;
    q = {(m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s};
  }
  const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  for (double& v : q) v /= n;
  return q;
}

std::array<double, 6> quat_to_rot6d(const std::array<double, 4>& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  // first two rotation-matrix columns
  return {1.0 - 2.0 * (y * y + z * z),
          2.0 * (x * y + w * z),
          2.0 * (x * z - w * y),
          2.0 * (x * y - w * z),
          1.0 - 2.0 * (x * x + z * z),
          2.0 * (y * z + w * x)};
}

std::array<double, 4> slerp(const std::array<double, 4>& a, const std::array<double, 4>& b,
                            double t) {
  std::array<double, 4> bb = b;
  double dot = 0.0;
  for (int i = 0; i < 4; ++i) dot += a[i] * b[i];
  if (dot < 0.0) {
    for (double& v : bb) v = -v;
    dot = -dot;
  }
  std::array<double, 4> out;
  if (dot > 1.0 - 1e-10) {
    for (int i = 0; i < 4; ++i) out[i] = (1.0 - t) * a[i] + t * bb[i];
  } else {
    const double theta = std::acos(std::clamp(dot, -1.0, 1.0));
    const double s = std::sin(theta);
    const double wa = std::sin((1.0 - t) * theta) / s;
    const double wb = std::sin(t * theta) / s;
    for (int i = 0; i < 4; ++i) out[i] = wa * a[i] + wb * bb[i];
  }
  double n = 0.0;
  for (double v : out) n += v * v;
  n = std::sqrt(n);
  for (double& v : out) v /= n;
  return out;
}

void MetricReport::add(const std::string& name, double value, const std::string& unit) {
  entries[name] = {value, unit};
}

double MetricReport::value(const std::string& name) const {
  auto it = entries.find(name);
  if (it == entries.end()) throw DomainError("no such metric in the report: " + name);
  return it->second.value;
}

std::string MetricReport::to_text() const {
  std::string out;
  char buf[64];
  for (const auto& [name, e] : entries) {
    std::snprintf(buf, sizeof buf, "%.17g", e.value);
    out += name + " " + buf + " " + e.unit + "\n";
  }
  return out;
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["metadata"]["seed"] = seed;
  j["metadata"]["config_hash"] = config_hash;
  for (const auto& [name, e] : entries) {
    j["metrics"][name]["value"] = e.value;
    j["metrics"][name]["unit"] = e.unit;
  }
  return j.dump(2) + "\n";
}

void save_report(const MetricReport& r, const std::string& text_path,
                 const std::string& json_path) {
  std::ofstream t(text_path, std::ios::binary);
  if (!t) throw IoError("cannot open for writing: " + text_path);
  const std::string text = r.to_text();
  t.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::ofstream j(json_path, std::ios::binary);
  if (!j) throw IoError("cannot open for writing: " + json_path);
  const std::string js = r.to_json();
  j.write(js.data(), static_cast<std::streamsize>(js.size()));
}

}  // namespace mmdm::metrics
