#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmdm/autodiff.hpp"
#include "mmdm/common.hpp"

namespace mmdm::net {

// structure-first is the published KAA order; trajectory-first is the
// dagger variant that runs temporal attention before structural.
enum class AggregationOrder { StructureFirst, TrajectoryFirst };
AggregationOrder order_from_string(const std::string& s);
std::string to_string(AggregationOrder o);

struct NetworkConfig {
  int depth = 9;      // encoder KAA rounds
  int dec_depth = 3;  // decoder cross-attention blocks
  int feat_dim = 512;
  int heads = 4;
  int head_dim = 32;
  int ffn_dim = 512;
  int in_dim = 3;
  int out_dim = 3;
  AggregationOrder order = AggregationOrder::StructureFirst;
  bool pos_embed_per_block = false;  // re-add positional encodings before every block

  void validate() const;
};

// Attention instrumentation: counts score-matrix cells per head and tracks
// the temporal token load, backing the complexity checks.
struct AttentionStats {
  uint64_t score_entries = 0;
  uint64_t temporal_calls = 0;
  int max_temporal_tokens = 0;
  void reset() { *this = AttentionStats{}; }
};
AttentionStats& attention_stats();  // thread-local

// closed-form per-round score-entry counts
uint64_t kaa_score_entries(int frames, int joints);       // T(1+J)^2 + T^2
uint64_t cascaded_score_entries(int frames, int joints);  // T J^2 + J T^2

// ---- positional / step / condition embeddings

// Fourier features over (frame, joint): pair p of the D/2 sin-cos pairs uses
// axis p%2 (frame, joint) at frequency 2^(p/2). D must be even.
ad::Tensor fourier_pos_embed(int frame, int joint, int dim);
// standard transformer timestep embedding, first half sines, second half cosines
ad::Tensor sinusoidal_step_embed(int k, int dim);
// fixed seeded lookup: each label hashes to a deterministic Gaussian vector
ad::Tensor condition_embedding(const std::string& label, int dim);

// ---- parameters

class ParamStore {
 public:
  ad::Var create(const std::string& name, std::vector<int> shape);
  ad::Var at(const std::string& name) const;
  const std::map<std::string, ad::Var>& all() const { return params_; }
  int64_t total_size() const;
  void set_values(const std::map<std::string, ad::Tensor>& named);
  std::map<std::string, ad::Tensor> values() const;

 private:
  std::map<std::string, ad::Var> params_;
};

class AdamW {
 public:
  explicit AdamW(double lr, double weight_decay = 1e-4);
  void step(ParamStore& params, const ad::GradientMap& grads);
  double lr;
  double weight_decay;

 private:
  int t_ = 0;
  std::unordered_map<const ad::Node*, std::pair<ad::Tensor, ad::Tensor>> moments_;
};

// ---- attention blocks

struct LnParams {
  ad::Var gain, bias;
};
struct AttnParams {
  ad::Var wq, bq, wk, bk, wv, bv, wo, bo;
};
struct FfnParams {
  ad::Var w1, b1, w2, b2;
};
struct BlockParams {
  LnParams ln_attn;
  AttnParams attn;
  LnParams ln_ffn;
  FfnParams ffn;
};
struct RoundParams {
  BlockParams structural;
  BlockParams temporal;
};

BlockParams make_block_params(ParamStore& ps, const std::string& prefix, int dim, int proj_dim,
                              int ffn_dim, RandomStream& rng);

// Pre-norm multi-head self-attention plus FFN over [..., S, D] tokens;
// leading axes are batch. key_bias (broadcastable to the score tensor) hides
// masked keys.
ad::Var self_attention_block(const ad::Var& tokens, const BlockParams& p, int heads, int head_dim,
                             const ad::Var* key_bias = nullptr, bool is_temporal = false);

// Per-frame attention over [T, 1+J, D] grids with the star at slot 0.
ad::Var structural_attention(const ad::Var& frame_tokens, const BlockParams& p, int heads,
                             int head_dim, const ad::Var* key_bias = nullptr);

// Attention over the T star tokens only ([T, D]); counts into the temporal
// instrumentation.
ad::Var temporal_attention(const ad::Var& stars, const BlockParams& p, int heads, int head_dim);

// One KAA round over a [T, lead+J, D] grid: slot 0 is the star, slots
// [1, lead) carry condition tokens, the rest are joints. Ends by duplicating
// the star along the joint axis and adding it back.
ad::Var kaa_round(const ad::Var& tokens, int lead_tokens, int joints, const RoundParams& p,
                  const ad::Var* key_bias, AggregationOrder order, int heads, int head_dim);

// ---- models

// Masked-autoencoder diffusion network: Kinematic Encoder (N KAA rounds over
// star + joint tokens) plus a cross-attention Motion Decoder conditioned on
// the star-token sequence.
class MmdmModel {
 public:
  MmdmModel(NetworkConfig config, uint64_t init_seed);

  // Encoder over the visible cells; returns (h: [T,J,D] joint latents valid
  // at visible slots, c: [T,D] kinematic condition).
  std::pair<ad::Var, ad::Var> encode(const std::vector<double>& values,
                                     const std::vector<uint8_t>& cell_mask, int frames,
                                     int joints, int k) const;

  // Decoder over an assembled token grid. tokens: [T,J,D], c: [T,D].
  ad::Var decode(const ad::Var& tokens, const ad::Var& c, int frames, int joints, int k) const;

  // Full forward predicting the clean signal at every cell. cond_values is
  // what the encoder sees at visible slots (the clean input for completion,
  // the current state for refinement); x_values supplies the noised masked
  // tokens.
  ad::Var predict(const std::vector<double>& cond_values, const std::vector<double>& x_values,
                  const std::vector<uint8_t>& cell_mask, int frames, int joints, int k) const;
  std::vector<double> predict_values(const std::vector<double>& cond_values,
                                     const std::vector<double>& x_values,
                                     const std::vector<uint8_t>& cell_mask, int frames,
                                     int joints, int k) const;

  // One-pass MAE reconstruction: masked slots decode from the learned
  // placeholder token instead of noised values.
  ad::Var mae_forward(const std::vector<double>& values, const std::vector<uint8_t>& cell_mask,
                      int frames, int joints) const;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const NetworkConfig& config() const { return config_; }

 private:
  NetworkConfig config_;
  ParamStore params_;
};

// Encoder-only in-betweening network: the token grid carries a per-frame
// condition token next to the star, and a linear head maps joint tokens back
// to motion channels.
class InbetweenModel {
 public:
  InbetweenModel(NetworkConfig config, uint64_t init_seed);

  ad::Var predict(const std::vector<double>& values, int frames, int joints, int k,
                  const std::string& label, bool use_condition_token = true) const;
  // graph-input variant; gradients can flow back into `values`
  ad::Var predict(const ad::Var& values, int frames, int joints, int k, const std::string& label,
                  bool use_condition_token = true) const;
  std::vector<double> predict_values(const std::vector<double>& values, int frames, int joints,
                                     int k, const std::string& label,
                                     bool use_condition_token = true) const;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const NetworkConfig& config() const { return config_; }

 private:
  NetworkConfig config_;
  ParamStore params_;
};

// ---- checkpoints

enum class ModelKind { Completion, Inbetween };

struct CheckpointMeta {
  ModelKind kind = ModelKind::Completion;
  NetworkConfig config;
  std::string objective = "signal";  // "signal" | "noise"
  int diffusion_steps = 1000;
  std::string schedule = "scaled-linear";
  double target_tail = 1e-2;
};

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const ParamStore& params);
std::pair<CheckpointMeta, std::map<std::string, ad::Tensor>> load_checkpoint(
    const std::string& path);

}  // namespace mmdm::net
