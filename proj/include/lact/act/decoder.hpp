#pragma once

#include "lact/numcore/checkpoint.hpp"
#include "lact/numcore/nnblocks.hpp"
#include "lact/world/types.hpp"

namespace lact::act {

// Executable low-level action sequence decoded from one latent action.
struct ActionChunk {
  world::Embodiment embodiment = world::Embodiment::Manip;
  nc::Tensor<float> actions;  // [chunk, act_dim], components in [-1, 1]
};

struct DecoderDims {
  int hidden = 128;  // 512 at paper scale
  int heads = 8;
  int head_dim = 16;  // 64 at paper scale
  int mlp_ratio = 4;
};

inline DecoderDims desk_dims() { return {128, 8, 16, 4}; }
inline DecoderDims paper_dims() { return {512, 8, 64, 4}; }

struct DecoderConfig {
  world::Embodiment embodiment = world::Embodiment::Manip;
  int trunk_dim = 256;  // width of the policy's last-layer embeddings
  DecoderDims dims = desk_dims();
  int chunk = 8;
  int act_dim = 3;
  int proprio_dim = 0;  // 0 disables the proprio branch
  int n_latents = 4;
  bool use_visual = true;  // false: "w/o visual" ablation (q_a only)
};

DecoderConfig decoder_config_for(world::Embodiment emb, int trunk_dim, DecoderDims dims = desk_dims());

// Attention pooling with a learnable query followed by an MLP, residual on
// the pooled token.
struct PoolBlock {
  std::shared_ptr<nc::Parameter<float>> query;  // [1, hidden]
  nc::Attention<float> attn;
  nc::LayerNormLayer<float> ln;
  nc::Mlp<float> mlp;

  static PoolBlock create(nc::ParamStore<float>& store, const std::string& name, int hidden,
                          int kv_dim, int heads, int head_dim, int mlp_ratio, nc::Rng& rng);
  // q_extra, when defined, is added to the learnable query (q_a + E_v').
  nc::Tensor<float> forward(nc::Tape<float>* tape, nc::Tensor<float> kv,
                            const nc::Tensor<float>& q_extra = nc::Tensor<float>{}) const;
};

// Latent action decoder head: pools visual embeddings into one context token,
// queries the latent-action embeddings with it, and projects linearly into a
// tanh-bounded action chunk.
class ActionDecoder {
 public:
  ActionDecoder(DecoderConfig cfg, uint64_t seed);

  // E_v' = A(q_v, E_v). Throws on empty input.
  nc::Tensor<float> pool_visual(nc::Tape<float>* tape, nc::Tensor<float> e_v) const;

  // E_a' = A(q_a + E_v', E_a); concatenated with projected proprio when the
  // embodiment carries one; linear map to chunk x act_dim, tanh bound.
  nc::Tensor<float> decode_chunk(nc::Tape<float>* tape, nc::Tensor<float> e_a,
                                 const nc::Tensor<float>& e_v_pooled,
                                 const nc::Tensor<float>& proprio) const;

  // Full pass from trunk embeddings to an executable chunk (no gradients).
  ActionChunk decode(const nc::Tensor<float>& e_a, const nc::Tensor<float>& e_v,
                     const std::vector<float>& proprio) const;

  const DecoderConfig& config() const { return cfg_; }
  nc::ParamStore<float>& params() { return store_; }
  const nc::ParamStore<float>& params() const { return store_; }
  size_t parameter_count() const { return store_.total_count(); }
  uint64_t weights_hash() const { return store_.content_hash(); }

  void save_into(nc::Checkpoint& ck, const std::string& prefix) const;
  void load_from(const nc::Checkpoint& ck, const std::string& prefix);

 private:
  DecoderConfig cfg_;
  nc::ParamStore<float> store_;
  PoolBlock visual_pool_, action_pool_;
  nc::Linear<float> proprio_fc1_, proprio_fc2_;
  nc::Linear<float> action_proj_;
};

// Discretized-bin autoregressive baseline behind the same chunk interface:
// a small causal transformer emits chunk*act_dim bin tokens conditioned on a
// trunk context vector (the OpenVLA/LAPA decoding scheme).
class ArBinDecoder {
 public:
  static constexpr int kBins = 256;

  ArBinDecoder(DecoderConfig cfg, uint64_t seed);

  static int bin_of(float v);
  static float value_of(int bin);

  // Teacher-forced summed cross entropy over all bin positions.
  nc::Tensor<float> loss(nc::Tape<float>* tape, nc::Tensor<float> ctx,
                         const nc::Tensor<float>& proprio, const std::vector<int>& target_bins) const;

  ActionChunk decode(const nc::Tensor<float>& ctx, const std::vector<float>& proprio) const;

  std::vector<int> bins_of_chunk(const std::vector<std::vector<float>>& actions) const;

  const DecoderConfig& config() const { return cfg_; }
  nc::ParamStore<float>& params() { return store_; }
  size_t parameter_count() const { return store_.total_count(); }
  uint64_t weights_hash() const { return store_.content_hash(); }

  void save_into(nc::Checkpoint& ck, const std::string& prefix) const;
  void load_from(const nc::Checkpoint& ck, const std::string& prefix);

 private:
  nc::Tensor<float> hidden_states(nc::Tape<float>* tape, nc::Tensor<float> ctx,
                                  const nc::Tensor<float>& proprio,
                                  const std::vector<int>& prefix_bins) const;

  DecoderConfig cfg_;
  nc::ParamStore<float> store_;
  nc::Linear<float> ctx_proj_;
  nc::Linear<float> proprio_fc1_, proprio_fc2_;
  std::shared_ptr<nc::Parameter<float>> bin_emb_, pos_emb_;
  std::vector<nc::TransformerBlock<float>> blocks_;
  nc::LayerNormLayer<float> out_ln_;
  nc::Linear<float> head_;
};

}  // namespace lact::act
