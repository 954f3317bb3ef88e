#pragma once

#include <span>

#include "lact/lam/codebook.hpp"
#include "lact/numcore/checkpoint.hpp"
#include "lact/numcore/nnblocks.hpp"
#include "lact/policy/vocab.hpp"

namespace lact::policy {

struct PolicyConfig {
  int dim = 256;
  int heads = 8;
  int blocks = 4;
  int mlp_ratio = 4;
  int feat_dim = 64;
  int patches = 64;
  int n_latents = 4;
  int codebook_size = 16;
  int max_text = 40;  // text-region capacity (BOS + instruction + history + SEP + ACT)
};

struct PolicyInput {
  const nc::Tensor<float>* visual = nullptr;     // [P, feat_dim]
  const std::string* instruction = nullptr;
  std::span<const lam::LatentCode> history = {}; // at most one step
  const lam::LatentCode* target = nullptr;       // training only
};

struct BuiltSequence {
  std::vector<int> text_ids;
  int total_len = 0;
  std::vector<int> predict_rows;    // logits here predict ACT tokens (needs target)
  std::vector<int> act_input_rows;  // rows of the teacher-forced ACT inputs
  int unk_count = 0;
};

// Decoder-only autoregressive policy over ACT tokens. Visual tokens are
// bidirectionally visible among themselves and to every text position; the
// text/ACT region is causal.
class PolicyModel {
 public:
  PolicyModel(PolicyConfig cfg, uint64_t seed);

  BuiltSequence build_sequence(const PolicyInput& input) const;

  struct Forward {
    BuiltSequence seq;
    nc::Tensor<float> hidden;  // [total_len, dim]
  };
  Forward forward(nc::Tape<float>* tape, const PolicyInput& input) const;

  // Summed next-ACT-token cross entropy for one sample; logits restricted to
  // the ACT block. correct counts greedy hits at the 4 positions.
  struct NllOut {
    nc::Tensor<float> loss;
    int correct = 0;
  };
  NllOut nll_from_forward(nc::Tape<float>* tape, const Forward& fw,
                          const lam::LatentCode& target) const;

  struct Prediction {
    lam::LatentCode code;
    nc::Tensor<float> act_hidden;  // [N, dim] last-layer states at the ACT inputs
    nc::Tensor<float> vis_hidden;  // [P, dim] last-layer states at visual positions
  };
  // Greedy left-to-right decoding, argmax restricted to the ACT block.
  Prediction predict_latent_action(const nc::Tensor<float>& visual, const std::string& instruction,
                                   std::span<const lam::LatentCode> history) const;

  const PolicyConfig& config() const { return cfg_; }
  const PolicyVocab& vocab() const { return vocab_; }
  nc::ParamStore<float>& params() { return store_; }
  const nc::ParamStore<float>& params() const { return store_; }
  uint64_t weights_hash() const { return store_.content_hash(); }

  // Freezes every trunk parameter (decoder-only adaptation); gradients are
  // not even computed for them afterwards.
  void freeze_trunk();

  void save(const std::string& path) const;
  static PolicyModel load(const std::string& path);

 private:
  nc::Tensor<float> build_mask(int total_len) const;
  nc::Tensor<float> trunk(nc::Tape<float>* tape, const nc::Tensor<float>& visual,
                          const std::vector<int>& text_ids) const;

  PolicyConfig cfg_;
  PolicyVocab vocab_;
  nc::ParamStore<float> store_;

  nc::Linear<float> vis_proj_;
  std::shared_ptr<nc::Parameter<float>> vis_pos_, tok_emb_, txt_pos_;
  std::vector<nc::TransformerBlock<float>> blocks_;
  nc::LayerNormLayer<float> out_ln_;
  nc::Linear<float> head_;
};

}  // namespace lact::policy
