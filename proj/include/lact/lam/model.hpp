#pragma once

#include "lact/lam/codebook.hpp"
#include "lact/lam/instr.hpp"
#include "lact/numcore/checkpoint.hpp"
#include "lact/numcore/nnblocks.hpp"

namespace lact::lam {

struct LamConfig {
  int feat_dim = 64;
  int patches = 64;
  int dim = 128;  // model width == codebook entry dim
  int heads = 8;
  int enc_blocks = 4;
  int dec_blocks = 4;
  int n_latents = 4;      // N
  int codebook_size = 16; // |C|
  float beta = 0.25f;
  float ema_decay = 0.99f;
  int dead_code_window = 500;
  int stage = 1;
  bool use_language = true;  // false: single-codebook "all visual changes" variant
};

// Spatial-temporal encoder block: attention within each time slice, then
// causally masked attention across slices at matching positions, then MLP.
struct STBlock {
  nc::LayerNormLayer<float> ln1, ln2, ln3;
  nc::Attention<float> attn_spatial, attn_temporal;
  nc::Mlp<float> mlp;

  static STBlock create(nc::ParamStore<float>& store, const std::string& name, int dim, int heads,
                        nc::Rng& rng);
  nc::Tensor<float> forward(nc::Tape<float>* tape, nc::Tensor<float> x,
                            const nc::Tensor<float>& spatial_mask,
                            const nc::Tensor<float>& temporal_mask) const;
};

// Latent action model: IDM encoder over a frame-feature pair with learnable
// action slots, vector-quantized codebooks, FDM decoder predicting the future
// feature grid. Stage 1 conditions on language and trains the task-irrelevant
// codebook; stage 2 freezes it and adds task-centric slots and codebook.
class LamModel {
 public:
  LamModel(LamConfig cfg, uint64_t seed);

  struct Encoded {
    nc::Tensor<float> ti_raw;  // [N, dim]
    nc::Tensor<float> tc_raw;  // defined only at stage 2
  };

  // instr: [1, kTextDim] or null. Stage 1 with language requires instr;
  // stage 2 (and the no-language variant) forbids it.
  Encoded idm_encode(nc::Tape<float>* tape, nc::Tensor<float> o_t, nc::Tensor<float> o_tk,
                     const nc::Tensor<float>* instr) const;

  // Stage-consistent argument sets: stage 1 + language -> (q_ti, instr);
  // stage 1 no-language -> (q_ti); stage 2 -> (q_ti, q_tc).
  nc::Tensor<float> fdm_decode(nc::Tape<float>* tape, nc::Tensor<float> o_t, nc::Tensor<float> q_ti,
                               const nc::Tensor<float>* q_tc, const nc::Tensor<float>* instr) const;

  const LamConfig& config() const { return cfg_; }
  nc::ParamStore<float>& params() { return store_; }
  const nc::ParamStore<float>& params() const { return store_; }
  Codebook& ti_codebook() { return ti_; }
  Codebook& tc_codebook();
  const Codebook& ti_codebook() const { return ti_; }
  const Codebook& tc_codebook() const;

  void save(const std::string& path) const;
  static LamModel load(const std::string& path);

  // Builds a stage-2 model from a stage-1 checkpoint: shared weights are
  // loaded, the TI codebook is frozen, TC slots and codebook start fresh.
  // Throws std::runtime_error if the checkpoint is not a stage-1 model.
  static LamModel stage2_from_stage1(const std::string& stage1_path, uint64_t seed);

  uint64_t weights_hash() const { return store_.content_hash(); }

 private:
  int slice_len() const;
  void build_masks();

  LamConfig cfg_;
  nc::ParamStore<float> store_;

  nc::Linear<float> enc_in_, dec_in_, enc_instr_, dec_instr_, dec_head_;
  std::shared_ptr<nc::Parameter<float>> enc_spatial_pos_, enc_temporal_pos_, enc_ti_slots_,
      enc_tc_slots_, dec_spatial_pos_, dec_ti_pos_, dec_tc_pos_, dec_l_pos_;
  std::vector<STBlock> enc_blocks_;
  std::vector<nc::TransformerBlock<float>> dec_blocks_;
  nc::LayerNormLayer<float> enc_out_ln_, dec_out_ln_;

  Codebook ti_, tc_;
  bool has_tc_ = false;

  nc::Tensor<float> spatial_mask_, temporal_mask_;
};

}  // namespace lact::lam
