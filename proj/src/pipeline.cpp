#include "mmdm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>

namespace mmdm::pipeline {

namespace {

namespace fs = std::filesystem;

std::vector<motion::SynthKind> kinds_for(const std::string& kind) {
  if (kind == "mixed")
    return {motion::SynthKind::SinusoidLimb, motion::SynthKind::LinearWalk,
            motion::SynthKind::FigureEight};
  return {motion::synth_kind_from_string(kind)};
}

masking::QualitySignals synthetic_signals(int frames, int joints, RandomStream& rng) {
  masking::QualitySignals sig(4, frames, joints);
  for (double& r : sig.rho) r = rng.uniform();
  for (double& s : sig.sigma) s = rng.uniform();
  return sig;
}

std::vector<uint8_t> draw_mask(const TaskConfig& cfg, const PhaseMasking& phase, int frames,
                               int joints, RandomStream& rng) {
  masking::MaskingConfig mc;
  mc.pattern = phase.pattern;
  mc.ratio = phase.ratio;
  mc.omega = cfg.omega;
  mc.force_invisible = cfg.force_invisible;
  mc.seed = rng.next_u64();
  if (mc.pattern == masking::Pattern::C) {
    const masking::QualitySignals sig = synthetic_signals(frames, joints, rng);
    return masking::build_mask(mc, frames, joints, &sig);
  }
  return masking::build_mask(mc, frames, joints);
}

// graph-level losses
ad::Var masked_mse_var(const ad::Var& pred, const std::vector<double>& target,
                       const std::vector<uint8_t>& mask, int frames, int joints, int feat_dim) {
  int64_t cells = 0;
  ad::Tensor w({frames, joints, 1});
  for (size_t c = 0; c < mask.size(); ++c) {
    w[static_cast<int64_t>(c)] = mask[c] ? 1.0 : 0.0;
    cells += mask[c] ? 1 : 0;
  }
  if (cells == 0) throw DomainError("empty mask: loss over zero masked cells");
  ad::Var diff = ad::sub(pred, ad::constant(ad::Tensor({frames, joints, feat_dim}, target)));
  ad::Var sq = ad::mul(diff, diff);
  return ad::scale(ad::sum(ad::mul(sq, ad::constant(w))), 1.0 / static_cast<double>(cells));
}

ad::Var full_mse_var(const ad::Var& pred, const std::vector<double>& target, int frames,
                     int joints, int feat_dim) {
  ad::Var diff = ad::sub(pred, ad::constant(ad::Tensor({frames, joints, feat_dim}, target)));
  return ad::scale(ad::sum(ad::mul(diff, diff)),
                   1.0 / (static_cast<double>(frames) * joints));
}

diffusion::PredictX0 make_predictor(const net::MmdmModel& model,
                                    const diffusion::DiffusionSchedule& sched,
                                    const std::string& objective,
                                    const std::vector<double>& cond,
                                    const std::vector<uint8_t>& mask, int frames, int joints,
                                    bool refine_mode) {
  return [&model, &sched, objective, cond, mask, frames, joints,
          refine_mode](const std::vector<double>& x_k, int k) {
    const std::vector<double>& enc_in = refine_mode ? x_k : cond;
    std::vector<double> out = model.predict_values(enc_in, x_k, mask, frames, joints, k);
    if (objective == "noise") out = diffusion::x0_from_eps(x_k, out, k, sched);
    return out;
  };
}

std::vector<double> run_reverse_loop(const diffusion::PredictX0& predict,
                                     const diffusion::DiffusionSchedule& sched,
                                     std::vector<double> x, int ddim_stride,
                                     RandomStream& rng,
                                     const std::vector<double>* restore_to,
                                     const std::vector<uint8_t>* mask, int feat_dim) {
  auto restore = [&](std::vector<double>& v) {
    if (restore_to) v = diffusion::restore_unmasked(v, *restore_to, *mask, feat_dim);
  };
  if (ddim_stride >= 1) {
    const std::vector<int> ks = diffusion::ddim_step_sequence(sched.steps, ddim_stride);
    for (size_t i = 0; i + 1 < ks.size(); ++i) {
      x = diffusion::reverse_step_ddim(predict, x, ks[i], ks[i + 1], sched);
      restore(x);
    }
  } else {
    for (int k = sched.steps; k >= 1; --k) {
      x = diffusion::reverse_step_ddpm(predict, x, k, sched, rng);
      restore(x);
    }
  }
  return x;
}

motion::MotionSequence slice_window(const motion::MotionSequence& m, int start, int len) {
  motion::MotionSequence out(len, m.joints(), m.feat_dim());
  for (int t = 0; t < len; ++t)
    for (int j = 0; j < m.joints(); ++j) {
      out.set_masked(t, j, m.masked(start + t, j));
      for (int c = 0; c < m.feat_dim(); ++c) out.value(t, j, c) = m.value(start + t, j, c);
    }
  return out;
}

motion::MotionSequence run_windowed(const net::MmdmModel& model,
                                    const diffusion::DiffusionSchedule& sched,
                                    const std::string& objective,
                                    const motion::MotionSequence& input, int ddim_stride,
                                    uint64_t seed, int window_length, bool refine_mode) {
  const int T = input.frames(), J = input.joints(), d = input.feat_dim();
  RandomStream master(seed);

  auto run_one = [&](const motion::MotionSequence& win, RandomStream rng) {
    const auto predict = make_predictor(model, sched, objective, win.values(), win.mask(),
                                        win.frames(), win.joints(), refine_mode);
    return refine_mode
               ? refine_with_predictor(predict, sched, win.values(), ddim_stride, rng)
               : complete_with_predictor(predict, sched, win.values(), win.mask(), d,
                                         ddim_stride, rng);
  };

  motion::MotionSequence out = input;
  if (T <= window_length) {
    const std::vector<double> x = run_one(input, master.fork(0));
    out.values() = x;
  } else {
    const int stride = std::max(1, window_length / 2);
    std::vector<int> starts;
    for (int s = 0; s + window_length < T; s += stride) starts.push_back(s);
    starts.push_back(T - window_length);
    std::vector<double> acc(static_cast<size_t>(T) * J * d, 0.0);
    std::vector<int> covered(static_cast<size_t>(T), 0);
    int prev_end = 0;
    for (size_t wi = 0; wi < starts.size(); ++wi) {
      const int s0 = starts[wi];
      const motion::MotionSequence win = slice_window(input, s0, window_length);
      const std::vector<double> x = run_one(win, master.fork(wi));
      for (int f = 0; f < window_length; ++f) {
        const int g = s0 + f;
        const int overlap = prev_end - s0;
        double alpha = 1.0;  // linear cross-fade inside the overlap
        if (wi > 0 && g < prev_end && overlap > 0)
          alpha = static_cast<double>(f + 1) / (overlap + 1);
        for (int j = 0; j < J; ++j)
          for (int c = 0; c < d; ++c) {
            const size_t gi = (static_cast<size_t>(g) * J + j) * d + c;
            const size_t li = (static_cast<size_t>(f) * J + j) * d + c;
            acc[gi] = covered[g] ? (1.0 - alpha) * acc[gi] + alpha * x[li] : x[li];
          }
        covered[g] = 1;
      }
      prev_end = s0 + window_length;
    }
    out.values() = acc;
  }
  if (!refine_mode)
    out.values() = diffusion::restore_unmasked(out.values(), input.values(), input.mask(), d);
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw IoError("write failed: " + path);
}

std::string joinp(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

}  // namespace

std::vector<double> complete_with_predictor(const diffusion::PredictX0& predict,
                                            const diffusion::DiffusionSchedule& sched,
                                            const std::vector<double>& values,
                                            const std::vector<uint8_t>& cell_mask, int feat_dim,
                                            int ddim_stride, RandomStream& rng) {
  std::vector<double> x = values;
  for (size_t c = 0; c < cell_mask.size(); ++c)
    if (cell_mask[c])
      for (int f = 0; f < feat_dim; ++f) x[c * feat_dim + f] = rng.normal();
  x = run_reverse_loop(predict, sched, std::move(x), ddim_stride, rng, &values, &cell_mask,
                       feat_dim);
  return diffusion::restore_unmasked(x, values, cell_mask, feat_dim);
}

std::vector<double> refine_with_predictor(const diffusion::PredictX0& predict,
                                          const diffusion::DiffusionSchedule& sched,
                                          const std::vector<double>& values, int ddim_stride,
                                          RandomStream& rng) {
  // the noisy input is the k = K state; no restoration, every cell updates
  return run_reverse_loop(predict, sched, values, ddim_stride, rng, nullptr, nullptr, 0);
}

std::vector<motion::MotionSequence> build_dataset(const TaskConfig& cfg) {
  const auto kinds = kinds_for(cfg.data_kind);
  RandomStream master(cfg.seed ^ 0x64617461ULL);
  std::vector<motion::MotionSequence> out;
  for (int i = 0; i < cfg.data_sequences; ++i) {
    const motion::SynthKind kind = kinds[i % kinds.size()];
    out.push_back(motion::synth_motion(kind, cfg.data_frames, cfg.data_joints,
                                       master.fork(i).next_u64()));
  }
  return out;
}

std::vector<motion::JointLevelRepr> build_bundle_dataset(const TaskConfig& cfg) {
  RandomStream master(cfg.seed ^ 0x62646174ULL);
  std::vector<motion::JointLevelRepr> out;
  const int T = cfg.task == "inbetween" || cfg.train_mode == "inbetween" ? cfg.split.total()
                                                                         : cfg.data_frames;
  for (int i = 0; i < cfg.data_sequences; ++i)
    out.push_back(motion::pack_joint_level(motion::synth_bundle(T, master.fork(i).next_u64())));
  return out;
}

motion::MotionSequence complete_sequence(const net::MmdmModel& model,
                                         const diffusion::DiffusionSchedule& sched,
                                         const std::string& objective,
                                         const motion::MotionSequence& input, int ddim_stride,
                                         uint64_t seed, int window_length) {
  if (input.masked_count() == 0) return input;  // degenerate pass-through
  return run_windowed(model, sched, objective, input, ddim_stride, seed, window_length, false);
}

motion::MotionSequence refine_sequence(const net::MmdmModel& model,
                                       const diffusion::DiffusionSchedule& sched,
                                       const std::string& objective,
                                       const motion::MotionSequence& input, int ddim_stride,
                                       uint64_t seed, int window_length) {
  return run_windowed(model, sched, objective, input, ddim_stride, seed, window_length, true);
}

void apply_emphasis(std::vector<double>& values, int frames, int joints, int feat_dim,
                    double factor, const std::vector<int>& dims, bool inverse) {
  if (factor <= 0.0) throw DomainError("emphasis factor must be positive");
  const double f = inverse ? 1.0 / factor : factor;
  for (int t = 0; t < frames; ++t)
    for (int d : dims) {
      if (d < 0 || d >= feat_dim) throw ShapeMismatch("emphasis dim outside features");
      values[(static_cast<size_t>(t) * joints + 0) * feat_dim + d] *= f;
    }
}

std::vector<double> inbetween_sequence(const net::InbetweenModel& model,
                                       const diffusion::DiffusionSchedule& sched,
                                       const std::vector<double>& values,
                                       const motion::SegmentSplit& split,
                                       const ImputationSettings& imp, const std::string& label,
                                       uint64_t seed) {
  const int J = motion::JointLevelRepr::kTokens;
  const int d = motion::JointLevelRepr::kTokenDim;
  const int T = split.total();
  split.validate(T);
  if (values.size() != static_cast<size_t>(T) * J * d)
    throw ShapeMismatch("in-betweening grid must be T x 22 x 12");
  const int T0 = split.preceding, T1 = split.transition, T2 = split.succeeding;
  const size_t row = static_cast<size_t>(J) * d;

  std::vector<double> scaled = values;
  if (imp.emphasis)
    apply_emphasis(scaled, T, J, d, imp.emphasis_factor, imp.emphasis_dims, false);

  RandomStream rng(seed);
  std::vector<double> x(values.size());
  for (double& v : x) v = rng.normal();

  const double s = imp.guidance_scale;
  std::vector<double> d0(values.size());
  for (int k = sched.steps; k >= 1; --k) {
    std::vector<double> grad;
    if (s > 0.0) {
      ad::Var xleaf = ad::leaf(ad::Tensor({T, J, d}, x), true, "x_k");
      ad::Var d0v = model.predict(xleaf, T, J, k, label);
      ad::Var pre = ad::slice(d0v, 0, 0, T0);
      ad::Var suc = ad::slice(d0v, 0, T0 + T1, T2);
      std::vector<double> pre_ref(scaled.begin(), scaled.begin() + T0 * row);
      std::vector<double> suc_ref(scaled.begin() + (T0 + T1) * row, scaled.end());
      ad::Var ep = ad::sub(ad::constant(ad::Tensor({T0, J, d}, pre_ref)), pre);
      ad::Var es = ad::sub(ad::constant(ad::Tensor({T2, J, d}, suc_ref)), suc);
      ad::Var goal = ad::add(ad::sum(ad::mul(ep, ep)), ad::sum(ad::mul(es, es)));
      const ad::GradientMap grads = ad::backward(goal);
      grad = grads.at(xleaf).vec();
      d0 = d0v->value.vec();
    } else {
      d0 = model.predict_values(x, T, J, k, label);
    }

    // imputation: boundary segments come from the (scaled) inputs
    std::copy(scaled.begin(), scaled.begin() + T0 * row, d0.begin());
    std::copy(scaled.begin() + (T0 + T1) * row, scaled.end(), d0.begin() + (T0 + T1) * row);

    const auto [c0, ck] = diffusion::posterior_coeffs(k, sched);
    const double sigma = k == 1 ? 0.0 : std::sqrt(sched.posteriorVariance(k));
    for (size_t i = 0; i < x.size(); ++i) {
      double mu = c0 * d0[i] + ck * x[i];
      if (s > 0.0) mu -= s * grad[i];
      x[i] = sigma > 0.0 ? mu + sigma * rng.normal() : mu;
    }
  }

  if (imp.emphasis) apply_emphasis(x, T, J, d, imp.emphasis_factor, imp.emphasis_dims, true);
  // boundary segments equal the inputs bit-exactly
  std::copy(values.begin(), values.begin() + T0 * row, x.begin());
  std::copy(values.begin() + (T0 + T1) * row, values.end(), x.begin() + (T0 + T1) * row);
  return x;
}

std::vector<double> interpolate_transition(const std::vector<double>& values,
                                           const motion::SegmentSplit& split) {
  const int J = motion::JointLevelRepr::kTokens;
  const int d = motion::JointLevelRepr::kTokenDim;
  const int T = split.total();
  split.validate(T);
  if (values.size() != static_cast<size_t>(T) * J * d)
    throw ShapeMismatch("in-betweening grid must be T x 22 x 12");
  const int T0 = split.preceding, T1 = split.transition;
  std::vector<double> out = values;
  const int prev = T0 - 1, next = T0 + T1;
  auto at = [&](const std::vector<double>& v, int t, int j, int c) {
    return v[(static_cast<size_t>(t) * J + j) * d + c];
  };
  for (int t = T0; t < T0 + T1; ++t) {
    const double a = static_cast<double>(t - T0 + 1) / (T1 + 1);
    for (int j = 0; j < J; ++j) {
      if (j >= 1) {
        // rotation slots interpolate on the quaternion sphere
        std::array<double, 6> r0, r1;
        for (int c = 0; c < 6; ++c) {
          r0[c] = at(values, prev, j, c);
          r1[c] = at(values, next, j, c);
        }
        const auto q = metrics::slerp(metrics::rot6d_to_quat(r0), metrics::rot6d_to_quat(r1), a);
        const auto r = metrics::quat_to_rot6d(q);
        for (int c = 0; c < 6; ++c) out[(static_cast<size_t>(t) * J + j) * d + c] = r[c];
        for (int c = 6; c < 12; ++c)
          out[(static_cast<size_t>(t) * J + j) * d + c] =
              (1.0 - a) * at(values, prev, j, c) + a * at(values, next, j, c);
      } else {
        for (int c = 0; c < 12; ++c)
          out[(static_cast<size_t>(t) * J + j) * d + c] =
              (1.0 - a) * at(values, prev, j, c) + a * at(values, next, j, c);
      }
    }
  }
  return out;
}

double eval_completion_loss(const net::MmdmModel& model,
                            const diffusion::DiffusionSchedule& sched,
                            const std::string& objective,
                            const std::vector<motion::MotionSequence>& dataset, double mask_ratio,
                            uint64_t seed) {
  RandomStream master(seed ^ 0x6576616cULL);
  double acc = 0.0;
  for (size_t i = 0; i < dataset.size(); ++i) {
    const motion::MotionSequence& seq = dataset[i];
    masking::MaskingConfig mc;
    mc.pattern = masking::Pattern::A;
    mc.ratio = mask_ratio;
    mc.seed = master.fork(i).next_u64();
    motion::MotionSequence masked = seq;
    masked.mask() = masking::build_mask(mc, seq.frames(), seq.joints());
    const motion::MotionSequence out =
        complete_sequence(model, sched, objective, masked, 1, master.fork(1000 + i).next_u64(),
                          seq.frames());
    acc += diffusion::loss_masked(out.values(), seq.values(), masked.mask(), seq.feat_dim());
  }
  return acc / static_cast<double>(dataset.size());
}

double eval_refinement_loss(const net::MmdmModel& model,
                            const diffusion::DiffusionSchedule& sched,
                            const std::string& objective,
                            const std::vector<motion::MotionSequence>& dataset, double noise_m,
                            uint64_t seed) {
  RandomStream master(seed ^ 0x72656576ULL);
  double acc = 0.0;
  for (size_t i = 0; i < dataset.size(); ++i) {
    const motion::MotionSequence& seq = dataset[i];
    motion::MotionSequence noisy = seq;
    RandomStream ns = master.fork(i);
    for (double& v : noisy.values()) v += noise_m * ns.normal();
    const motion::MotionSequence out =
        refine_sequence(model, sched, objective, noisy, 1, master.fork(1000 + i).next_u64(),
                        seq.frames());
    acc += diffusion::loss_full(out.values(), seq.values(), seq.feat_dim());
  }
  return acc / static_cast<double>(dataset.size());
}

namespace {

TrainResult train_mmdm(const TaskConfig& cfg, const std::string& out_dir) {
  const auto dataset = build_dataset(cfg);
  const int T = cfg.data_frames, J = cfg.data_joints, d = 3;
  if (cfg.net.in_dim != d || cfg.net.out_dim != d)
    throw ConfigError("completion/refinement training needs net.in_dim = net.out_dim = 3");

  net::MmdmModel model(cfg.net, cfg.seed);
  const auto sched = diffusion::make_schedule(cfg.diffusion_steps, cfg.schedule, cfg.target_tail);
  net::AdamW opt(cfg.lr, cfg.weight_decay);
  RandomStream master(cfg.seed ^ 0x7472616eULL);

  const bool refine_finetune = cfg.train_mode == "refinement";
  auto eval_now = [&] {
    return refine_finetune
               ? eval_refinement_loss(model, sched, cfg.objective, dataset, 0.05, cfg.seed)
               : eval_completion_loss(model, sched, cfg.objective, dataset, cfg.finetune.ratio,
                                      cfg.seed);
  };
  TrainResult result;
  result.initial_eval_loss = eval_now();
  double best_eval = result.initial_eval_loss;
  std::map<std::string, ad::Tensor> best_params = model.params().values();

  const int total = cfg.pretrain_steps + cfg.finetune_steps;
  for (int step = 0; step < total; ++step) {
    const bool finetune_phase = step >= cfg.pretrain_steps;
    const PhaseMasking& phase = finetune_phase ? cfg.finetune : cfg.pretrain;
    ad::Var loss;
    for (int b = 0; b < cfg.batch; ++b) {
      motion::MotionSequence seq =
          dataset[(static_cast<size_t>(step) * cfg.batch + b) % dataset.size()];
      RandomStream st = master.fork(0x100000ULL + static_cast<uint64_t>(step) * cfg.batch + b);
      if (cfg.augment) {
        seq = motion::augment_rotate_yaw(seq, st.uniform(-180.0, 180.0));
        if (J == 17 && st.uniform() < 0.5) seq = motion::augment_flip(seq, human17().lr_pairs);
      }
      const std::vector<uint8_t> mask = draw_mask(cfg, phase, T, J, st);
      const int k = 1 + st.uniform_int(sched.steps);
      std::vector<double> eps(seq.values().size());
      for (double& e : eps) e = st.normal();
      const std::vector<double> x_k = diffusion::forward_diffuse(seq.values(), k, eps, sched);
      const bool noisy_cond = refine_finetune && finetune_phase;
      const ad::Var pred =
          model.predict(noisy_cond ? x_k : seq.values(), x_k, mask, T, J, k);
      const std::vector<double>& target = cfg.objective == "signal" ? seq.values() : eps;
      ad::Var li = (refine_finetune && finetune_phase)
                       ? full_mse_var(pred, target, T, J, d)
                       : masked_mse_var(pred, target, mask, T, J, d);
      loss = loss ? ad::add(loss, li) : li;
    }
    loss = ad::scale(loss, 1.0 / cfg.batch);
    const double lv = loss->value[0];
    if (!std::isfinite(lv)) throw DomainError("diverged loss: NaN at step " + std::to_string(step));
    result.loss_curve.push_back({step, lv});
    const ad::GradientMap grads = ad::backward(loss);
    opt.step(model.params(), grads);

    if ((step + 1) % cfg.checkpoint_every == 0 || step + 1 == total) {
      const double ev = eval_now();
      if (ev <= best_eval) {
        best_eval = ev;
        best_params = model.params().values();
      }
      net::CheckpointMeta meta{net::ModelKind::Completion, cfg.net,        cfg.objective,
                               cfg.diffusion_steps,        diffusion::to_string(cfg.schedule),
                               cfg.target_tail};
      net::save_checkpoint(joinp(out_dir, "checkpoint_last.bin"), meta, model.params());
    }
  }

  model.params().set_values(best_params);
  result.final_eval_loss = best_eval;
  net::CheckpointMeta meta{net::ModelKind::Completion, cfg.net,        cfg.objective,
                           cfg.diffusion_steps,        diffusion::to_string(cfg.schedule),
                           cfg.target_tail};
  result.checkpoint_path = joinp(out_dir, "checkpoint.bin");
  net::save_checkpoint(result.checkpoint_path, meta, model.params());

  std::string curve;
  char buf[64];
  for (const auto& [s, l] : result.loss_curve) {
    std::snprintf(buf, sizeof buf, "%d %.17g\n", s, l);
    curve += buf;
  }
  write_text(joinp(out_dir, "loss_curve.txt"), curve);
  return result;
}

TrainResult train_inbetween(const TaskConfig& cfg, const std::string& out_dir) {
  const auto dataset = build_bundle_dataset(cfg);
  const int J = motion::JointLevelRepr::kTokens, d = motion::JointLevelRepr::kTokenDim;
  const int T = cfg.split.total();
  cfg.split.validate(T);
  if (cfg.net.in_dim != d || cfg.net.out_dim != d)
    throw ConfigError("in-betweening training needs net.in_dim = net.out_dim = 12");

  net::InbetweenModel model(cfg.net, cfg.seed);
  const auto sched = diffusion::make_schedule(cfg.diffusion_steps, cfg.schedule, cfg.target_tail);
  net::AdamW opt(cfg.lr, cfg.weight_decay);
  RandomStream master(cfg.seed ^ 0x74696274ULL);

  // transition cells are the masked set
  std::vector<uint8_t> mask(static_cast<size_t>(T) * J, 0);
  for (int t = cfg.split.preceding; t < cfg.split.preceding + cfg.split.transition; ++t)
    for (int j = 0; j < J; ++j) mask[static_cast<size_t>(t) * J + j] = 1;

  TrainResult result;
  const int total = cfg.pretrain_steps + cfg.finetune_steps;
  for (int step = 0; step < total; ++step) {
    ad::Var loss;
    for (int b = 0; b < cfg.batch; ++b) {
      const motion::JointLevelRepr& seq =
          dataset[(static_cast<size_t>(step) * cfg.batch + b) % dataset.size()];
      RandomStream st = master.fork(0x200000ULL + static_cast<uint64_t>(step) * cfg.batch + b);
      const int k = 1 + st.uniform_int(sched.steps);
      std::vector<double> eps(seq.values.size());
      for (double& e : eps) e = st.normal();
      const std::vector<double> x_k = diffusion::forward_diffuse(seq.values, k, eps, sched);
      const ad::Var pred = model.predict(x_k, T, J, k, cfg.label);
      const std::vector<double>& target = cfg.objective == "signal" ? seq.values : eps;
      ad::Var li = masked_mse_var(pred, target, mask, T, J, d);
      loss = loss ? ad::add(loss, li) : li;
    }
    loss = ad::scale(loss, 1.0 / cfg.batch);
    const double lv = loss->value[0];
    if (!std::isfinite(lv)) throw DomainError("diverged loss: NaN at step " + std::to_string(step));
    result.loss_curve.push_back({step, lv});
    const ad::GradientMap grads = ad::backward(loss);
    opt.step(model.params(), grads);
  }

  net::CheckpointMeta meta{net::ModelKind::Inbetween, cfg.net,        cfg.objective,
                           cfg.diffusion_steps,       diffusion::to_string(cfg.schedule),
                           cfg.target_tail};
  result.checkpoint_path = joinp(out_dir, "checkpoint.bin");
  net::save_checkpoint(result.checkpoint_path, meta, model.params());
  if (!result.loss_curve.empty()) {
    result.initial_eval_loss = result.loss_curve.front().second;
    result.final_eval_loss = result.loss_curve.back().second;
  }
  std::string curve;
  char buf[64];
  for (const auto& [s, l] : result.loss_curve) {
    std::snprintf(buf, sizeof buf, "%d %.17g\n", s, l);
    curve += buf;
  }
  write_text(joinp(out_dir, "loss_curve.txt"), curve);
  return result;
}

}  // namespace

TrainResult train(const TaskConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  if (cfg.train_mode == "inbetween") return train_inbetween(cfg, out_dir);
  return train_mmdm(cfg, out_dir);
}

metrics::MetricReport position_metrics(const motion::MotionSequence& pred,
                                       const motion::MotionSequence& gt) {
  metrics::MetricReport r;
  r.add("mpjpe", metrics::mpjpe(pred, gt), "mm");
  if (gt.frames() >= 3) r.add("accel", metrics::accel_error(pred, gt), "mm/frame^2");
  if (gt.joints() == 17) r.add("pcp", metrics::pcp(pred, gt, human17()), "%");
  std::vector<metrics::JointEstimate> pe, ge;
  for (int t = 0; t < gt.frames(); ++t)
    for (int j = 0; j < gt.joints(); ++j) {
      pe.push_back({true, {pred.value(t, j, 0), pred.value(t, j, 1), pred.value(t, j, 2)}});
      ge.push_back({true, {gt.value(t, j, 0), gt.value(t, j, 1), gt.value(t, j, 2)}});
    }
  const auto [prec, rec] = metrics::precision_recall(pe, ge);
  r.add("precision", prec, "%");
  r.add("recall", rec, "%");
  return r;
}

metrics::MetricReport jointlevel_metrics(const std::vector<double>& pred,
                                         const std::vector<double>& gt, int frames,
                                         int window_start, int window_len) {
  const int J = motion::JointLevelRepr::kTokens, d = motion::JointLevelRepr::kTokenDim;
  const int T = frames;
  if (pred.size() != gt.size() || pred.size() != static_cast<size_t>(T) * J * d)
    throw ShapeMismatch("joint-level metric inputs must be T x 22 x 12");
  if (window_start < 0 || window_len < 1 || window_start + window_len > T)
    throw ShapeMismatch("scored window outside the sequence");
  const int T0 = window_start, T1 = window_len;

  // scored-window channel extraction
  std::vector<double> pos_p, pos_g;             // local joint positions
  std::vector<std::array<double, 4>> qp, qg;    // per-joint quaternions
  std::vector<double> chan_p, chan_g;           // quaternion channels for npss
  for (int t = T0; t < T0 + T1; ++t) {
    for (int j = 1; j < J; ++j) {
      std::array<double, 6> r6p, r6g;
      for (int c = 0; c < 6; ++c) {
        r6p[c] = pred[(static_cast<size_t>(t) * J + j) * d + c];
        r6g[c] = gt[(static_cast<size_t>(t) * J + j) * d + c];
      }
      const auto qph = metrics::rot6d_to_quat(r6p);
      const auto qgh = metrics::rot6d_to_quat(r6g);
      qp.push_back(qph);
      qg.push_back(qgh);
      for (int c = 0; c < 4; ++c) {
        chan_p.push_back(qph[c]);
        chan_g.push_back(qgh[c]);
      }
      for (int c = 6; c < 9; ++c) {
        pos_p.push_back(pred[(static_cast<size_t>(t) * J + j) * d + c]);
        pos_g.push_back(gt[(static_cast<size_t>(t) * J + j) * d + c]);
      }
    }
  }
  metrics::MetricReport r;
  r.add("l2p", metrics::l2p(pos_p, pos_g, T1), "-");
  r.add("l2q", metrics::l2q(qp, qg, T1, J - 1), "-");
  if (T1 >= 2) r.add("npss", metrics::npss(chan_p, chan_g, T1, (J - 1) * 4), "-");
  return r;
}

// ---- CLI wrappers

namespace {

std::pair<net::CheckpointMeta, std::unique_ptr<net::MmdmModel>> load_mmdm(
    const std::string& path) {
  if (path.empty()) throw DomainError("no checkpoint: pass --checkpoint");
  auto [meta, values] = net::load_checkpoint(path);
  if (meta.kind != net::ModelKind::Completion)
    throw DomainError("checkpoint holds an in-betweening model");
  auto model = std::make_unique<net::MmdmModel>(meta.config, 0);
  model->params().set_values(values);
  return {meta, std::move(model)};
}

diffusion::DiffusionSchedule schedule_for(const TaskConfig& cfg, const net::CheckpointMeta& meta) {
  const int steps = cfg.explicit_keys.count("diffusion.steps") ? cfg.diffusion_steps
                                                               : meta.diffusion_steps;
  const auto kind = cfg.explicit_keys.count("diffusion.schedule")
                        ? cfg.schedule
                        : diffusion::schedule_kind_from_string(meta.schedule);
  const double tail =
      cfg.explicit_keys.count("diffusion.target_tail") ? cfg.target_tail : meta.target_tail;
  return diffusion::make_schedule(steps, kind, tail);
}

void stamp(metrics::MetricReport& r, const TaskConfig& cfg) {
  r.seed = cfg.seed;
  r.config_hash = cfg.config_hash;
}

}  // namespace

metrics::MetricReport run_train(const TaskConfig& cfg, const CliPaths& paths) {
  const TrainResult tr = train(cfg, paths.out_dir);
  metrics::MetricReport r;
  r.add("loss_eval_initial", tr.initial_eval_loss, "-");
  r.add("loss_eval_final", tr.final_eval_loss, "-");
  if (!tr.loss_curve.empty()) r.add("loss_train_last", tr.loss_curve.back().second, "-");
  stamp(r, cfg);
  metrics::save_report(r, joinp(paths.out_dir, "report.txt"), joinp(paths.out_dir, "report.json"));
  return r;
}

metrics::MetricReport run_completion(const TaskConfig& cfg, const CliPaths& paths) {
  fs::create_directories(paths.out_dir);
  auto [meta, model] = load_mmdm(paths.checkpoint);
  const auto sched = schedule_for(cfg, meta);
  const motion::MotionSequence input = motion::load_motion(paths.input);
  const motion::MotionSequence out = complete_sequence(
      *model, sched, meta.objective, input, cfg.ddim_stride, cfg.seed, cfg.window_length);
  motion::save_motion(out, joinp(paths.out_dir, "completed.txt"));
  metrics::MetricReport r;
  r.add("masked_cells", input.masked_count(), "-");
  if (!paths.gt.empty()) {
    const motion::MotionSequence gt = motion::load_motion(paths.gt);
    for (const auto& [name, e] : position_metrics(out, gt).entries) r.add(name, e.value, e.unit);
  }
  stamp(r, cfg);
  metrics::save_report(r, joinp(paths.out_dir, "report.txt"), joinp(paths.out_dir, "report.json"));
  return r;
}

metrics::MetricReport run_refinement(const TaskConfig& cfg, const CliPaths& paths) {
  fs::create_directories(paths.out_dir);
  auto [meta, model] = load_mmdm(paths.checkpoint);
  const auto sched = schedule_for(cfg, meta);
  const motion::MotionSequence input = motion::load_motion(paths.input);
  const motion::MotionSequence out = refine_sequence(*model, sched, meta.objective, input,
                                                     cfg.ddim_stride, cfg.seed, cfg.window_length);
  motion::save_motion(out, joinp(paths.out_dir, "refined.txt"));
  metrics::MetricReport r;
  if (!paths.gt.empty()) {
    const motion::MotionSequence gt = motion::load_motion(paths.gt);
    const auto before = position_metrics(input, gt);
    const auto after = position_metrics(out, gt);
    for (const auto& [name, e] : before.entries) {
      r.add(name + "_before", e.value, e.unit);
      const double av = after.value(name);
      r.add(name + "_after", av, e.unit);
      if (e.value != 0.0) r.add("delta_" + name, 100.0 * std::abs(av - e.value) / e.value, "%");
    }
  }
  stamp(r, cfg);
  metrics::save_report(r, joinp(paths.out_dir, "report.txt"), joinp(paths.out_dir, "report.json"));
  return r;
}

metrics::MetricReport run_inbetween(const TaskConfig& cfg, const CliPaths& paths) {
  fs::create_directories(paths.out_dir);
  if (paths.checkpoint.empty()) throw DomainError("no checkpoint: pass --checkpoint");
  auto [meta, values] = net::load_checkpoint(paths.checkpoint);
  if (meta.kind != net::ModelKind::Inbetween)
    throw DomainError("checkpoint holds a completion model");
  net::InbetweenModel model(meta.config, 0);
  model.params().set_values(values);
  const auto sched = schedule_for(cfg, meta);

  const motion::MotionSequence input = motion::load_motion(paths.input);
  if (input.joints() != motion::JointLevelRepr::kTokens ||
      input.feat_dim() != motion::JointLevelRepr::kTokenDim)
    throw ShapeMismatch("in-betweening input must be T x 22 x 12");
  cfg.split.validate(input.frames());

  ImputationSettings imp;
  imp.emphasis = cfg.emphasis_enabled;
  imp.emphasis_factor = cfg.emphasis_factor;
  imp.emphasis_dims = cfg.emphasis_dims;
  imp.guidance_scale = cfg.guidance_scale;
  const std::vector<double> out =
      inbetween_sequence(model, sched, input.values(), cfg.split, imp, cfg.label, cfg.seed);

  motion::MotionSequence outseq = input;
  outseq.values() = out;
  for (int t = cfg.split.preceding; t < cfg.split.preceding + cfg.split.transition; ++t)
    for (int j = 0; j < outseq.joints(); ++j) outseq.set_masked(t, j, true);
  motion::save_motion(outseq, joinp(paths.out_dir, "inbetween.txt"));

  metrics::MetricReport r;
  if (!paths.gt.empty()) {
    const motion::MotionSequence gt = motion::load_motion(paths.gt);
    if (gt.frames() != input.frames()) throw ShapeMismatch("ground truth length mismatch");
    const auto jm = jointlevel_metrics(out, gt.values(), input.frames(), cfg.split.preceding,
                                       cfg.split.transition);
    for (const auto& [name, e] : jm.entries) r.add(name, e.value, e.unit);
    const std::vector<double> interp = interpolate_transition(input.values(), cfg.split);
    const auto im = jointlevel_metrics(interp, gt.values(), input.frames(), cfg.split.preceding,
                                       cfg.split.transition);
    for (const auto& [name, e] : im.entries) r.add(name + "_interp", e.value, e.unit);
  }
  stamp(r, cfg);
  metrics::save_report(r, joinp(paths.out_dir, "report.txt"), joinp(paths.out_dir, "report.json"));
  return r;
}

metrics::MetricReport run_simulate(const TaskConfig& cfg, const CliPaths& paths) {
  fs::create_directories(paths.out_dir);
  RandomStream master(cfg.seed ^ 0x73696d75ULL);
  const auto kinds = kinds_for(cfg.data_kind);
  std::vector<motion::MotionSequence> scene;
  for (int i = 0; i < cfg.sim_people; ++i) {
    motion::MotionSequence m = motion::synth_motion(kinds[i % kinds.size()], cfg.data_frames,
                                                    cfg.data_joints, master.fork(i).next_u64());
    const double off = (i - (cfg.sim_people - 1) / 2.0) * 1.5;
    for (int t = 0; t < m.frames(); ++t)
      for (int j = 0; j < m.joints(); ++j) m.value(t, j, 0) += off;
    scene.push_back(std::move(m));
  }

  const mocap::CameraRig rig =
      paths.rig.empty() ? mocap::default_rig(cfg.sim_cameras) : mocap::load_rig(paths.rig);
  mocap::save_rig(rig, joinp(paths.out_dir, "rig.txt"));

  mocap::SimulationOptions opt;
  opt.noise_px = cfg.sim_noise_px;
  opt.occl_prob = cfg.sim_occl_prob;
  opt.conf_scale = cfg.sim_conf_scale;
  opt.seed = master.fork("sim").next_u64();
  const mocap::MocapResult cap =
      mocap::run_capture(scene, rig, opt, cfg.sim_sigma_max, cfg.sim_shuffle);
  mocap::save_detections(cap.detections, joinp(paths.out_dir, "detections.txt"));

  metrics::MetricReport r;
  double err_acc = 0.0;
  int forced = 0;
  for (int n = 0; n < cap.reconstruction.people; ++n) {
    motion::MotionSequence rec(cap.reconstruction.frames, cap.reconstruction.joints, 3);
    for (int t = 0; t < rec.frames(); ++t)
      for (int j = 0; j < rec.joints(); ++j)
        for (int c = 0; c < 3; ++c)
          rec.value(t, j, c) = cap.reconstruction.d[3 * cap.reconstruction.idx(n, t, j) + c];
    masking::MaskingConfig mc;
    mc.pattern = masking::Pattern::C;
    mc.ratio = cfg.mask_ratio;
    mc.omega = cfg.omega;
    mc.force_invisible = cfg.force_invisible;
    mc.seed = master.fork(0x4d00 + n).next_u64();
    rec.mask() = masking::build_mask(mc, rec.frames(), rec.joints(), &cap.signals[n]);
    motion::save_motion(rec, joinp(paths.out_dir, "recon_" + std::to_string(n) + ".txt"));
    motion::save_motion(scene[n], joinp(paths.out_dir, "gt_" + std::to_string(n) + ".txt"));
    err_acc += metrics::mpjpe(rec, scene[n]);
    for (int t = 0; t < rec.frames(); ++t)
      for (int j = 0; j < rec.joints(); ++j) {
        bool invisible = true;
        for (int v = 0; v < cap.detections.views && invisible; ++v)
          invisible = cap.signals[n].rho_at(v, t, j) <= 0.0;
        if (invisible) ++forced;
      }
  }
  r.add("recon_mpjpe", err_acc / cap.reconstruction.people, "mm");
  r.add("forced_invisible_cells", forced, "-");
  stamp(r, cfg);
  metrics::save_report(r, joinp(paths.out_dir, "report.txt"), joinp(paths.out_dir, "report.json"));
  return r;
}

metrics::MetricReport run_eval(const TaskConfig& cfg, const CliPaths& paths) {
  fs::create_directories(paths.out_dir);
  const motion::MotionSequence pred = motion::load_motion(paths.pred);
  const motion::MotionSequence gt = motion::load_motion(paths.gt);
  if (pred.frames() != gt.frames() || pred.joints() != gt.joints() ||
      pred.feat_dim() != gt.feat_dim())
    throw ShapeMismatch("prediction and ground truth shapes differ");

  std::vector<std::string> wanted = cfg.eval_metrics;
  if (wanted.empty()) {
    if (pred.feat_dim() == 3) {
      wanted = {"mpjpe", "accel", "precision", "recall"};
      if (pred.joints() == 17) wanted.push_back("pcp");
    } else if (pred.joints() == motion::JointLevelRepr::kTokens &&
               pred.feat_dim() == motion::JointLevelRepr::kTokenDim) {
      wanted = {"l2p", "l2q", "npss"};
    } else {
      throw DomainError("no default metrics for this representation; pass eval.metrics");
    }
  }

  metrics::MetricReport available;
  if (pred.feat_dim() == 3) {
    available = position_metrics(pred, gt);
  } else {
    // whole sequence treated as the scored window
    available = jointlevel_metrics(pred.values(), gt.values(), pred.frames(), 0, pred.frames());
  }

  metrics::MetricReport r;
  for (const std::string& name : wanted) {
    auto it = available.entries.find(name);
    if (it == available.entries.end()) throw DomainError("metric unavailable here: " + name);
    r.add(name, it->second.value, it->second.unit);
  }
  stamp(r, cfg);
  metrics::save_report(r, joinp(paths.out_dir, "report.txt"), joinp(paths.out_dir, "report.json"));
  return r;
}

}  // namespace mmdm::pipeline
