#include "mmdm/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace mmdm::net {

using ad::Var;

AggregationOrder order_from_string(const std::string& s) {
  if (s == "structure-first") return AggregationOrder::StructureFirst;
  if (s == "trajectory-first") return AggregationOrder::TrajectoryFirst;
  throw DomainError("unknown aggregation order: " + s);
}

std::string to_string(AggregationOrder o) {
  return o == AggregationOrder::StructureFirst ? "structure-first" : "trajectory-first";
}

void NetworkConfig::validate() const {
  if (depth < 1) throw DomainError("network depth must be >= 1");
  if (dec_depth < 0) throw DomainError("decoder depth must be >= 0");
  if (feat_dim < 1 || heads < 1 || head_dim < 1 || ffn_dim < 1 || in_dim < 1 || out_dim < 1)
    throw DomainError("network dimensions must be positive");
}

AttentionStats& attention_stats() {
  thread_local AttentionStats stats;
  return stats;
}

uint64_t kaa_score_entries(int frames, int joints) {
  const uint64_t t = frames, s = joints + 1;
  return t * s * s + t * t;
}

uint64_t cascaded_score_entries(int frames, int joints) {
  const uint64_t t = frames, j = joints;
  return t * j * j + j * t * t;
}

ad::Tensor fourier_pos_embed(int frame, int joint, int dim) {
  if (dim % 2 != 0) throw DomainError("odd dim: fourier embedding needs an even dimension");
  ad::Tensor e({dim});
  for (int p = 0; p < dim / 2; ++p) {
    const double u = (p % 2 == 0) ? static_cast<double>(frame) : static_cast<double>(joint);
    const double f = std::ldexp(1.0, p / 2);  // 2^(p/2)
    e[2 * p] = std::sin(f * u);
    e[2 * p + 1] = std::cos(f * u);
  }
  return e;
}

ad::Tensor sinusoidal_step_embed(int k, int dim) {
  if (dim % 2 != 0) throw DomainError("odd dim: step embedding needs an even dimension");
  ad::Tensor e({dim});
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double w = std::exp(-std::log(10000.0) * (2.0 * i / dim));
    e[i] = std::sin(k * w);
    e[half + i] = std::cos(k * w);
  }
  return e;
}

ad::Tensor condition_embedding(const std::string& label, int dim) {
  if (dim < 1) throw DomainError("condition embedding needs a positive dimension");
  RandomStream rng(fnv1a(label) ^ 0x434c4950434c4950ULL);
  ad::Tensor e({dim});
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  for (int i = 0; i < dim; ++i) e[i] = rng.normal() * s;
  return e;
}

// ---- parameters

Var ParamStore::create(const std::string& name, std::vector<int> shape) {
  if (params_.count(name)) throw DomainError("duplicate parameter name: " + name);
  Var v = ad::leaf(ad::Tensor(std::move(shape)), true, name);
  params_[name] = v;
  return v;
}

Var ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw DomainError("unknown parameter: " + name);
  return it->second;
}

int64_t ParamStore::total_size() const {
  int64_t n = 0;
  for (const auto& [_, v] : params_) n += v->value.size();
  return n;
}

void ParamStore::set_values(const std::map<std::string, ad::Tensor>& named) {
  if (named.size() != params_.size())
    throw DomainError("checkpoint parameter set does not match the model");
  for (const auto& [name, t] : named) {
    Var v = at(name);
    if (t.shape() != v->value.shape())
      throw ShapeMismatch("checkpoint shape mismatch for " + name);
    v->value = t;
  }
}

std::map<std::string, ad::Tensor> ParamStore::values() const {
  std::map<std::string, ad::Tensor> out;
  for (const auto& [name, v] : params_) out[name] = v->value;
  return out;
}

AdamW::AdamW(double lr, double weight_decay) : lr(lr), weight_decay(weight_decay) {}

void AdamW::step(ParamStore& params, const ad::GradientMap& grads) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(b1, t_);
  const double c2 = 1.0 - std::pow(b2, t_);
  for (const auto& [name, var] : params.all()) {
    if (!grads.contains(var)) continue;
    const ad::Tensor& g = grads.at(var);
    auto& [m, v] = moments_[var.get()];
    if (m.size() == 0) {
      m = ad::Tensor(var->value.shape());
      v = ad::Tensor(var->value.shape());
    }
    ad::Tensor& p = var->value;
    const bool decay = weight_decay > 0.0 && p.rank() >= 2;
    for (int64_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      p[i] -= lr * mh / (std::sqrt(vh) + eps);
      if (decay) p[i] -= lr * weight_decay * p[i];
    }
  }
}

// ---- building blocks

namespace {

struct CrossParams {
  LnParams ln_q, ln_kv;
  AttnParams attn;
  LnParams ln_ffn;
  FfnParams ffn;
};

struct Builder {
  ParamStore& ps;
  RandomStream& rng;

  Var weight(const std::string& name, int rows, int cols) {
    Var v = ps.create(name, {rows, cols});
    for (int64_t i = 0; i < v->value.size(); ++i) v->value[i] = rng.normal(0.0, 0.02);
    return v;
  }
  Var zeros(const std::string& name, std::vector<int> shape) { return ps.create(name, std::move(shape)); }
  Var ones(const std::string& name, int n) {
    Var v = ps.create(name, {n});
    for (int64_t i = 0; i < v->value.size(); ++i) v->value[i] = 1.0;
    return v;
  }
  LnParams ln(const std::string& p, int d) { return {ones(p + ".g", d), zeros(p + ".b", {d})}; }
  AttnParams attn(const std::string& p, int d, int proj) {
    return {weight(p + ".wq", d, proj), zeros(p + ".bq", {proj}),
            weight(p + ".wk", d, proj), zeros(p + ".bk", {proj}),
            weight(p + ".wv", d, proj), zeros(p + ".bv", {proj}),
            weight(p + ".wo", proj, d), zeros(p + ".bo", {d})};
  }
  FfnParams ffn(const std::string& p, int d, int f) {
    return {weight(p + ".w1", d, f), zeros(p + ".b1", {f}), weight(p + ".w2", f, d),
            zeros(p + ".b2", {d})};
  }
  BlockParams block(const std::string& p, int d, int proj, int f) {
    return {ln(p + ".ln1", d), attn(p + ".attn", d, proj), ln(p + ".ln2", d), ffn(p + ".ffn", d, f)};
  }
  CrossParams cross(const std::string& p, int d, int proj, int f) {
    return {ln(p + ".lnq", d), ln(p + ".lnkv", d), attn(p + ".attn", d, proj), ln(p + ".ln2", d),
            ffn(p + ".ffn", d, f)};
  }
};

Var split_heads(const Var& x, int heads, int head_dim) {
  auto shape = x->value.shape();  // [..., S, H*hd]
  shape.back() = heads;
  shape.push_back(head_dim);  // [..., S, H, hd]
  Var y = ad::reshape(x, shape);
  const int r = static_cast<int>(shape.size());
  std::vector<int> perm;
  for (int i = 0; i < r - 3; ++i) perm.push_back(i);
  perm.push_back(r - 2);  // H
  perm.push_back(r - 3);  // S
  perm.push_back(r - 1);  // hd
  return ad::permute(y, perm);
}

Var merge_heads(const Var& x, int heads, int head_dim) {
  // [..., H, S, hd] -> [..., S, H*hd]
  const auto& shape = x->value.shape();
  const int r = static_cast<int>(shape.size());
  std::vector<int> perm;
  for (int i = 0; i < r - 3; ++i) perm.push_back(i);
  perm.push_back(r - 2);  // S
  perm.push_back(r - 3);  // H
  perm.push_back(r - 1);  // hd
  Var y = ad::permute(x, perm);
  auto ns = y->value.shape();
  ns[ns.size() - 2] = heads * head_dim;
  ns.pop_back();
  return ad::reshape(y, ns);
}

Var multihead(const Var& q_in, const Var& kv_in, const AttnParams& p, int heads, int head_dim,
              const Var* key_bias, bool is_temporal) {
  Var q = ad::add(ad::matmul(q_in, p.wq), p.bq);
  Var k = ad::add(ad::matmul(kv_in, p.wk), p.bk);
  Var v = ad::add(ad::matmul(kv_in, p.wv), p.bv);
  Var qh = split_heads(q, heads, head_dim);
  Var kh = split_heads(k, heads, head_dim);
  Var vh = split_heads(v, heads, head_dim);
  Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0 / std::sqrt(head_dim));
  if (key_bias) scores = ad::add(scores, *key_bias);

  AttentionStats& st = attention_stats();
  st.score_entries += static_cast<uint64_t>(scores->value.size() / heads);
  if (is_temporal) {
    st.temporal_calls++;
    const auto& ss = scores->value.shape();
    st.max_temporal_tokens = std::max(st.max_temporal_tokens, ss[ss.size() - 2]);
  }

  Var w = ad::softmax(scores, scores->value.rank() - 1);
  Var ctx = merge_heads(ad::matmul(w, vh), heads, head_dim);
  return ad::add(ad::matmul(ctx, p.wo), p.bo);
}

}  // namespace

BlockParams make_block_params(ParamStore& ps, const std::string& prefix, int dim, int proj_dim,
                              int ffn_dim, RandomStream& rng) {
  Builder b{ps, rng};
  return b.block(prefix, dim, proj_dim, ffn_dim);
}

Var self_attention_block(const Var& tokens, const BlockParams& p, int heads, int head_dim,
                         const Var* key_bias, bool is_temporal) {
  Var x = tokens;
  Var a = ad::layer_norm(x, p.ln_attn.gain, p.ln_attn.bias);
  x = ad::add(x, multihead(a, a, p.attn, heads, head_dim, key_bias, is_temporal));
  Var f = ad::layer_norm(x, p.ln_ffn.gain, p.ln_ffn.bias);
  f = ad::add(ad::matmul(f, p.ffn.w1), p.ffn.b1);
  f = ad::gelu(f);
  f = ad::add(ad::matmul(f, p.ffn.w2), p.ffn.b2);
  return ad::add(x, f);
}

Var structural_attention(const Var& frame_tokens, const BlockParams& p, int heads, int head_dim,
                         const Var* key_bias) {
  if (frame_tokens->value.rank() != 3)
    throw ShapeMismatch("structural attention expects [T, 1+J, D] tokens");
  return self_attention_block(frame_tokens, p, heads, head_dim, key_bias, false);
}

Var temporal_attention(const Var& stars, const BlockParams& p, int heads, int head_dim) {
  if (stars->value.rank() != 2)
    throw ShapeMismatch("temporal attention expects [T, D] star tokens");
  return self_attention_block(stars, p, heads, head_dim, nullptr, true);
}

namespace {

Var cross_block(Var x, const Var& memory, const CrossParams& p, int heads, int head_dim) {
  Var q = ad::layer_norm(x, p.ln_q.gain, p.ln_q.bias);
  Var kv = ad::layer_norm(memory, p.ln_kv.gain, p.ln_kv.bias);
  x = ad::add(x, multihead(q, kv, p.attn, heads, head_dim, nullptr, false));
  Var f = ad::layer_norm(x, p.ln_ffn.gain, p.ln_ffn.bias);
  f = ad::add(ad::matmul(f, p.ffn.w1), p.ffn.b1);
  f = ad::gelu(f);
  f = ad::add(ad::matmul(f, p.ffn.w2), p.ffn.b2);
  return ad::add(x, f);
}

}  // namespace

Var kaa_round(const Var& tokens_in, int lead, int joints, const RoundParams& p,
              const Var* key_bias, AggregationOrder order, int heads, int head_dim) {
  Var tokens = tokens_in;
  const int T = tokens->value.dim(0);
  const int D = tokens->value.dim(2);
  if (tokens->value.rank() != 3 || tokens->value.dim(1) != lead + joints)
    throw ShapeMismatch("kaa_round expects [T, lead+J, D] tokens");

  auto structural = [&](Var tk) {
    return structural_attention(tk, p.structural, heads, head_dim, key_bias);
  };
  auto temporal = [&](Var tk) {
    Var stars = ad::reshape(ad::slice(tk, 1, 0, 1), {T, D});
    stars = temporal_attention(stars, p.temporal, heads, head_dim);
    Var rest = ad::slice(tk, 1, 1, lead - 1 + joints);
    return ad::concat({ad::reshape(stars, {T, 1, D}), rest}, 1);
  };

  if (order == AggregationOrder::StructureFirst) {
    tokens = structural(tokens);
    tokens = temporal(tokens);
  } else {
    tokens = temporal(tokens);
    tokens = structural(tokens);
  }

  Var star = ad::slice(tokens, 1, 0, 1);  // [T,1,D]
  Var jt = ad::add(ad::slice(tokens, 1, lead, joints), star);
  if (lead > 1) {
    Var mid = ad::slice(tokens, 1, 1, lead - 1);
    return ad::concat({star, mid, jt}, 1);
  }
  return ad::concat({star, jt}, 1);
}

namespace {

ad::Tensor pos_grid(int frames, int joints, int dim) {
  ad::Tensor g({frames, joints, dim});
  for (int t = 0; t < frames; ++t)
    for (int j = 0; j < joints; ++j) {
      const ad::Tensor e = fourier_pos_embed(t, j, dim);
      for (int c = 0; c < dim; ++c) g.at({t, j, c}) = e[c];
    }
  return g;
}

// the star slot borrows joint coordinate J (one past the real joints)
ad::Tensor star_pos_grid(int frames, int joints, int dim) {
  ad::Tensor g({frames, 1, dim});
  for (int t = 0; t < frames; ++t) {
    const ad::Tensor e = fourier_pos_embed(t, joints, dim);
    for (int c = 0; c < dim; ++c) g.at({t, 0, c}) = e[c];
  }
  return g;
}

Var step_var(int k, int dim) {
  ad::Tensor e = sinusoidal_step_embed(k, dim);
  return ad::constant(ad::Tensor({1, 1, dim}, e.vec()));
}

}  // namespace

// ---- MmdmModel

struct MmdmParamsView {
  Var in_w, in_b, star, mask_token;
  std::vector<RoundParams> rounds;
  Var z_w, z_b;
  std::vector<CrossParams> dec_blocks;
  Var out_w, out_b;
};

namespace {

// rebuilt on demand from the store so checkpoint loads swap values in place
MmdmParamsView mmdm_view(const ParamStore& ps, const NetworkConfig& c) {
  MmdmParamsView v;
  auto P = [&](const std::string& n) { return ps.at(n); };
  v.in_w = P("enc.in.w");
  v.in_b = P("enc.in.b");
  v.star = P("enc.star");
  v.mask_token = P("enc.mask_token");
  for (int r = 0; r < c.depth; ++r) {
    const std::string pre = "enc.r" + std::to_string(r);
    RoundParams rp;
    rp.structural = {{P(pre + ".str.ln1.g"), P(pre + ".str.ln1.b")},
                     {P(pre + ".str.attn.wq"), P(pre + ".str.attn.bq"), P(pre + ".str.attn.wk"),
                      P(pre + ".str.attn.bk"), P(pre + ".str.attn.wv"), P(pre + ".str.attn.bv"),
                      P(pre + ".str.attn.wo"), P(pre + ".str.attn.bo")},
                     {P(pre + ".str.ln2.g"), P(pre + ".str.ln2.b")},
                     {P(pre + ".str.ffn.w1"), P(pre + ".str.ffn.b1"), P(pre + ".str.ffn.w2"),
                      P(pre + ".str.ffn.b2")}};
    rp.temporal = {{P(pre + ".tmp.ln1.g"), P(pre + ".tmp.ln1.b")},
                   {P(pre + ".tmp.attn.wq"), P(pre + ".tmp.attn.bq"), P(pre + ".tmp.attn.wk"),
                    P(pre + ".tmp.attn.bk"), P(pre + ".tmp.attn.wv"), P(pre + ".tmp.attn.bv"),
                    P(pre + ".tmp.attn.wo"), P(pre + ".tmp.attn.bo")},
                   {P(pre + ".tmp.ln2.g"), P(pre + ".tmp.ln2.b")},
                   {P(pre + ".tmp.ffn.w1"), P(pre + ".tmp.ffn.b1"), P(pre + ".tmp.ffn.w2"),
                    P(pre + ".tmp.ffn.b2")}};
    v.rounds.push_back(std::move(rp));
  }
  v.z_w = P("dec.z.w");
  v.z_b = P("dec.z.b");
  for (int b = 0; b < c.dec_depth; ++b) {
    const std::string pre = "dec.b" + std::to_string(b);
    CrossParams cp{{P(pre + ".lnq.g"), P(pre + ".lnq.b")},
                   {P(pre + ".lnkv.g"), P(pre + ".lnkv.b")},
                   {P(pre + ".attn.wq"), P(pre + ".attn.bq"), P(pre + ".attn.wk"),
                    P(pre + ".attn.bk"), P(pre + ".attn.wv"), P(pre + ".attn.bv"),
                    P(pre + ".attn.wo"), P(pre + ".attn.bo")},
                   {P(pre + ".ln2.g"), P(pre + ".ln2.b")},
                   {P(pre + ".ffn.w1"), P(pre + ".ffn.b1"), P(pre + ".ffn.w2"), P(pre + ".ffn.b2")}};
    v.dec_blocks.push_back(std::move(cp));
  }
  v.out_w = P("dec.out.w");
  v.out_b = P("dec.out.b");
  return v;
}

void check_grid(const std::vector<double>& values, const std::vector<uint8_t>& mask, int frames,
                int joints, int in_dim) {
  if (values.size() != static_cast<size_t>(frames) * joints * in_dim)
    throw ShapeMismatch("value grid does not match T x J x d");
  if (mask.size() != static_cast<size_t>(frames) * joints)
    throw ShapeMismatch("cell mask does not match T x J");
}

}  // namespace

MmdmModel::MmdmModel(NetworkConfig config, uint64_t init_seed) : config_(config) {
  config_.validate();
  if (config_.dec_depth < 1) throw DomainError("mmdm model needs decoder depth >= 1");
  RandomStream rng(init_seed ^ 0x6b6161ULL);
  Builder b{params_, rng};
  const int D = config_.feat_dim;
  const int P = config_.heads * config_.head_dim;
  b.weight("enc.in.w", config_.in_dim, D);
  b.zeros("enc.in.b", {D});
  Var star = params_.create("enc.star", {1, 1, D});
  Var mtok = params_.create("enc.mask_token", {1, 1, D});
  for (int64_t i = 0; i < star->value.size(); ++i) star->value[i] = b.rng.normal(0.0, 0.02);
  for (int64_t i = 0; i < mtok->value.size(); ++i) mtok->value[i] = b.rng.normal(0.0, 0.02);
  for (int r = 0; r < config_.depth; ++r) {
    const std::string pre = "enc.r" + std::to_string(r);
    b.block(pre + ".str", D, P, config_.ffn_dim);
    b.block(pre + ".tmp", D, P, config_.ffn_dim);
  }
  b.weight("dec.z.w", config_.in_dim, D);
  b.zeros("dec.z.b", {D});
  for (int d = 0; d < config_.dec_depth; ++d)
    b.cross("dec.b" + std::to_string(d), D, P, config_.ffn_dim);
  b.weight("dec.out.w", D, config_.out_dim);
  b.zeros("dec.out.b", {config_.out_dim});
}

std::pair<Var, Var> MmdmModel::encode(const std::vector<double>& values,
                                      const std::vector<uint8_t>& cell_mask, int frames,
                                      int joints, int k) const {
  check_grid(values, cell_mask, frames, joints, config_.in_dim);
  const MmdmParamsView v = mmdm_view(params_, config_);
  const int T = frames, J = joints, D = config_.feat_dim;

  Var x = ad::constant(ad::Tensor({T, J, config_.in_dim}, values));
  x = ad::add(ad::matmul(x, v.in_w), v.in_b);

  // visibility: masked cells are hidden from the encoder entirely
  ad::Tensor vis({T, J, 1});
  ad::Tensor bias({T, 1, 1, 1 + J});
  for (int t = 0; t < T; ++t) {
    bias.at({t, 0, 0, 0}) = 0.0;  // star always visible
    for (int j = 0; j < J; ++j) {
      const bool m = cell_mask[static_cast<size_t>(t) * J + j] != 0;
      vis.at({t, j, 0}) = m ? 0.0 : 1.0;
      bias.at({t, 0, 0, 1 + j}) = m ? -1e30 : 0.0;
    }
  }
  x = ad::mul(x, ad::constant(vis));

  Var pos = ad::constant(pos_grid(T, J, D));
  Var spos = ad::constant(star_pos_grid(T, J, D));
  Var step = step_var(k, D);
  x = ad::add(ad::add(x, pos), step);

  Var star = ad::add(ad::constant(ad::Tensor({T, 1, D})), v.star);
  star = ad::add(ad::add(star, spos), step);

  Var tokens = ad::concat({star, x}, 1);
  Var key_bias = ad::constant(bias);
  Var full_pos = config_.pos_embed_per_block
                     ? ad::constant([&] {
                         ad::Tensor g({T, 1 + J, D});
                         const ad::Tensor jp = pos_grid(T, J, D);
                         const ad::Tensor sp = star_pos_grid(T, J, D);
                         for (int t = 0; t < T; ++t)
                           for (int c = 0; c < D; ++c) {
                             g.at({t, 0, c}) = sp.at({t, 0, c});
                             for (int j = 0; j < J; ++j) g.at({t, 1 + j, c}) = jp.at({t, j, c});
                           }
                         return g;
                       }())
                     : Var{};
  for (int r = 0; r < config_.depth; ++r) {
    if (full_pos) tokens = ad::add(tokens, full_pos);  // per-round re-add variant
    tokens = kaa_round(tokens, 1, J, v.rounds[r], &key_bias, config_.order, config_.heads,
                       config_.head_dim);
  }
  Var c = ad::reshape(ad::slice(tokens, 1, 0, 1), {T, D});
  Var h = ad::slice(tokens, 1, 1, J);
  return {h, c};
}

Var MmdmModel::decode(const Var& tokens_in, const Var& c, int frames, int joints, int k) const {
  const MmdmParamsView v = mmdm_view(params_, config_);
  const int T = frames, J = joints, D = config_.feat_dim;
  if (tokens_in->value.shape() != std::vector<int>{T, J, D})
    throw ShapeMismatch("token layout error: decoder expects [T, J, D]");
  if (c->value.shape() != std::vector<int>{T, D})
    throw ShapeMismatch("token layout error: condition must be [T, D]");

  Var x = ad::add(ad::add(tokens_in, ad::constant(pos_grid(T, J, D))), step_var(k, D));
  x = ad::reshape(x, {T * J, D});
  for (const CrossParams& blk : v.dec_blocks)
    x = cross_block(x, c, blk, config_.heads, config_.head_dim);
  Var out = ad::add(ad::matmul(x, v.out_w), v.out_b);
  return ad::reshape(out, {T, J, config_.out_dim});
}

Var MmdmModel::predict(const std::vector<double>& cond_values,
                       const std::vector<double>& x_values,
                       const std::vector<uint8_t>& cell_mask, int frames, int joints,
                       int k) const {
  check_grid(x_values, cell_mask, frames, joints, config_.in_dim);
  const MmdmParamsView v = mmdm_view(params_, config_);
  auto [h, c] = encode(cond_values, cell_mask, frames, joints, k);
  const int T = frames, J = joints;

  Var z = ad::constant(ad::Tensor({T, J, config_.in_dim}, x_values));
  z = ad::add(ad::matmul(z, v.z_w), v.z_b);

  ad::Tensor vis({T, J, 1}), msk({T, J, 1});
  for (int64_t i = 0; i < static_cast<int64_t>(cell_mask.size()); ++i) {
    vis[i] = cell_mask[i] ? 0.0 : 1.0;
    msk[i] = cell_mask[i] ? 1.0 : 0.0;
  }
  Var tokens = ad::add(ad::mul(h, ad::constant(vis)), ad::mul(z, ad::constant(msk)));
  return decode(tokens, c, T, J, k);
}

std::vector<double> MmdmModel::predict_values(const std::vector<double>& cond_values,
                                              const std::vector<double>& x_values,
                                              const std::vector<uint8_t>& cell_mask, int frames,
                                              int joints, int k) const {
  return predict(cond_values, x_values, cell_mask, frames, joints, k)->value.vec();
}

Var MmdmModel::mae_forward(const std::vector<double>& values,
                           const std::vector<uint8_t>& cell_mask, int frames, int joints) const {
  check_grid(values, cell_mask, frames, joints, config_.in_dim);
  const MmdmParamsView v = mmdm_view(params_, config_);
  auto [h, c] = encode(values, cell_mask, frames, joints, 0);
  const int T = frames, J = joints, D = config_.feat_dim;

  Var z = ad::add(ad::constant(ad::Tensor({T, J, D})), v.mask_token);
  ad::Tensor vis({T, J, 1}), msk({T, J, 1});
  for (int64_t i = 0; i < static_cast<int64_t>(cell_mask.size()); ++i) {
    vis[i] = cell_mask[i] ? 0.0 : 1.0;
    msk[i] = cell_mask[i] ? 1.0 : 0.0;
  }
  Var tokens = ad::add(ad::mul(h, ad::constant(vis)), ad::mul(z, ad::constant(msk)));
  return decode(tokens, c, T, J, 0);
}

// ---- InbetweenModel

namespace {

struct InbetweenParamsView {
  Var in_w, in_b, star;
  std::vector<RoundParams> rounds;
  Var out_w, out_b;
};

InbetweenParamsView inbetween_view(const ParamStore& ps, const NetworkConfig& c) {
  InbetweenParamsView v;
  auto P = [&](const std::string& n) { return ps.at(n); };
  v.in_w = P("enc.in.w");
  v.in_b = P("enc.in.b");
  v.star = P("enc.star");
  for (int r = 0; r < c.depth; ++r) {
    const std::string pre = "enc.r" + std::to_string(r);
    RoundParams rp;
    rp.structural = {{P(pre + ".str.ln1.g"), P(pre + ".str.ln1.b")},
                     {P(pre + ".str.attn.wq"), P(pre + ".str.attn.bq"), P(pre + ".str.attn.wk"),
                      P(pre + ".str.attn.bk"), P(pre + ".str.attn.wv"), P(pre + ".str.attn.bv"),
                      P(pre + ".str.attn.wo"), P(pre + ".str.attn.bo")},
                     {P(pre + ".str.ln2.g"), P(pre + ".str.ln2.b")},
                     {P(pre + ".str.ffn.w1"), P(pre + ".str.ffn.b1"), P(pre + ".str.ffn.w2"),
                      P(pre + ".str.ffn.b2")}};
    rp.temporal = {{P(pre + ".tmp.ln1.g"), P(pre + ".tmp.ln1.b")},
                   {P(pre + ".tmp.attn.wq"), P(pre + ".tmp.attn.bq"), P(pre + ".tmp.attn.wk"),
                    P(pre + ".tmp.attn.bk"), P(pre + ".tmp.attn.wv"), P(pre + ".tmp.attn.bv"),
                    P(pre + ".tmp.attn.wo"), P(pre + ".tmp.attn.bo")},
                   {P(pre + ".tmp.ln2.g"), P(pre + ".tmp.ln2.b")},
                   {P(pre + ".tmp.ffn.w1"), P(pre + ".tmp.ffn.b1"), P(pre + ".tmp.ffn.w2"),
                    P(pre + ".tmp.ffn.b2")}};
    v.rounds.push_back(std::move(rp));
  }
  v.out_w = P("enc.out.w");
  v.out_b = P("enc.out.b");
  return v;
}

}  // namespace

InbetweenModel::InbetweenModel(NetworkConfig config, uint64_t init_seed) : config_(config) {
  config_.validate();
  RandomStream rng(init_seed ^ 0x696274ULL);
  Builder b{params_, rng};
  const int D = config_.feat_dim;
  const int P = config_.heads * config_.head_dim;
  b.weight("enc.in.w", config_.in_dim, D);
  b.zeros("enc.in.b", {D});
  Var star = params_.create("enc.star", {1, 1, D});
  for (int64_t i = 0; i < star->value.size(); ++i) star->value[i] = b.rng.normal(0.0, 0.02);
  for (int r = 0; r < config_.depth; ++r) {
    const std::string pre = "enc.r" + std::to_string(r);
    b.block(pre + ".str", D, P, config_.ffn_dim);
    b.block(pre + ".tmp", D, P, config_.ffn_dim);
  }
  b.weight("enc.out.w", D, config_.out_dim);
  b.zeros("enc.out.b", {config_.out_dim});
}

Var InbetweenModel::predict(const std::vector<double>& values, int frames, int joints, int k,
                            const std::string& label, bool use_condition_token) const {
  if (values.size() != static_cast<size_t>(frames) * joints * config_.in_dim)
    throw ShapeMismatch("value grid does not match T x J x d");
  return predict(ad::constant(ad::Tensor({frames, joints, config_.in_dim}, values)), frames,
                 joints, k, label, use_condition_token);
}

Var InbetweenModel::predict(const ad::Var& values, int frames, int joints, int k,
                            const std::string& label, bool use_condition_token) const {
  if (values->value.shape() != std::vector<int>{frames, joints, config_.in_dim})
    throw ShapeMismatch("value grid does not match T x J x d");
  const InbetweenParamsView v = inbetween_view(params_, config_);
  const int T = frames, J = joints, D = config_.feat_dim;

  Var x = ad::add(ad::matmul(values, v.in_w), v.in_b);
  Var step = step_var(k, D);
  x = ad::add(ad::add(x, ad::constant(pos_grid(T, J, D))), step);

  Var star = ad::add(ad::constant(ad::Tensor({T, 1, D})), v.star);
  star = ad::add(ad::add(star, ad::constant(star_pos_grid(T, J, D))), step);

  int lead = 1;
  Var tokens;
  if (use_condition_token) {
    const ad::Tensor vv = condition_embedding(label, D);
    Var vt = ad::add(ad::constant(ad::Tensor({T, 1, D})),
                     ad::constant(ad::Tensor({1, 1, D}, vv.vec())));
    vt = ad::add(vt, step);
    tokens = ad::concat({star, vt, x}, 1);
    lead = 2;
  } else {
    tokens = ad::concat({star, x}, 1);
  }

  for (int r = 0; r < config_.depth; ++r)
    tokens = kaa_round(tokens, lead, J, v.rounds[r], nullptr, config_.order, config_.heads,
                       config_.head_dim);

  Var jt = ad::slice(tokens, 1, lead, J);
  Var out = ad::add(ad::matmul(jt, v.out_w), v.out_b);
  return out;
}

std::vector<double> InbetweenModel::predict_values(const std::vector<double>& values, int frames,
                                                   int joints, int k, const std::string& label,
                                                   bool use_condition_token) const {
  return predict(values, frames, joints, k, label, use_condition_token)->value.vec();
}

// ---- checkpoints

namespace {

constexpr char kMagic[8] = {'M', 'M', 'D', 'M', 'C', 'K', 'P', '1'};

template <typename T>
void wr(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename T>
void rd(std::ifstream& f, T& v) {
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!f) throw IoError("checkpoint truncated");
}

void wr_str(std::ofstream& f, const std::string& s) {
  const uint32_t n = static_cast<uint32_t>(s.size());
  wr(f, n);
  f.write(s.data(), n);
}
std::string rd_str(std::ifstream& f) {
  uint32_t n;
  rd(f, n);
  if (n > (1u << 20)) throw IoError("checkpoint string too long");
  std::string s(n, '\0');
  f.read(s.data(), n);
  if (!f) throw IoError("checkpoint truncated");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const ParamStore& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(kMagic, sizeof kMagic);
  wr(f, static_cast<uint32_t>(meta.kind));
  const NetworkConfig& c = meta.config;
  for (int v : {c.depth, c.dec_depth, c.feat_dim, c.heads, c.head_dim, c.ffn_dim, c.in_dim,
                c.out_dim, static_cast<int>(c.order), c.pos_embed_per_block ? 1 : 0})
    wr(f, static_cast<int32_t>(v));
  wr_str(f, meta.objective);
  wr(f, static_cast<int32_t>(meta.diffusion_steps));
  wr_str(f, meta.schedule);
  wr(f, meta.target_tail);
  wr(f, static_cast<uint64_t>(params.all().size()));
  for (const auto& [name, var] : params.all()) {
    wr_str(f, name);
    const auto& shape = var->value.shape();
    wr(f, static_cast<uint32_t>(shape.size()));
    for (int d : shape) wr(f, static_cast<int32_t>(d));
    f.write(reinterpret_cast<const char*>(var->value.data()),
            static_cast<std::streamsize>(var->value.size() * sizeof(double)));
  }
  if (!f) throw IoError("write failed: " + path);
}

std::pair<CheckpointMeta, std::map<std::string, ad::Tensor>> load_checkpoint(
    const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("no checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof magic);
  if (!f || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw IoError("no checkpoint: bad magic in " + path);
  CheckpointMeta meta;
  uint32_t kind;
  rd(f, kind);
  meta.kind = static_cast<ModelKind>(kind);
  int32_t iv[10];
  for (int i = 0; i < 10; ++i) rd(f, iv[i]);
  meta.config.depth = iv[0];
  meta.config.dec_depth = iv[1];
  meta.config.feat_dim = iv[2];
  meta.config.heads = iv[3];
  meta.config.head_dim = iv[4];
  meta.config.ffn_dim = iv[5];
  meta.config.in_dim = iv[6];
  meta.config.out_dim = iv[7];
  meta.config.order = static_cast<AggregationOrder>(iv[8]);
  meta.config.pos_embed_per_block = iv[9] != 0;
  meta.objective = rd_str(f);
  int32_t steps;
  rd(f, steps);
  meta.diffusion_steps = steps;
  meta.schedule = rd_str(f);
  rd(f, meta.target_tail);
  uint64_t count;
  rd(f, count);
  std::map<std::string, ad::Tensor> named;
  for (uint64_t i = 0; i < count; ++i) {
    const std::string name = rd_str(f);
    uint32_t rank;
    rd(f, rank);
    if (rank > 8) throw IoError("checkpoint rank out of range");
    std::vector<int> shape(rank);
    int64_t n = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      int32_t dim;
      rd(f, dim);
      shape[d] = dim;
      n *= dim;
    }
    std::vector<double> data(static_cast<size_t>(n));
    f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!f) throw IoError("checkpoint truncated");
    named.emplace(name, ad::Tensor(shape, std::move(data)));
  }
  return {meta, named};
}

}  // namespace mmdm::net
