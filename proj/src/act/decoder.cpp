#include "lact/act/decoder.hpp"

#include <algorithm>

namespace lact::act {

using nc::Tape;
using nc::Tensor;

DecoderConfig decoder_config_for(world::Embodiment emb, int trunk_dim, DecoderDims dims) {
  DecoderConfig cfg;
  cfg.embodiment = emb;
  cfg.trunk_dim = trunk_dim;
  cfg.dims = dims;
  cfg.chunk = world::frame_interval(emb);
  cfg.act_dim = world::action_dim(emb);
  // proprio branch only for manipulation
  cfg.proprio_dim = emb == world::Embodiment::Manip ? world::proprio_dim(emb) : 0;
  return cfg;
}

PoolBlock PoolBlock::create(nc::ParamStore<float>& store, const std::string& name, int hidden,
                            int kv_dim, int heads, int head_dim, int mlp_ratio, nc::Rng& rng) {
  PoolBlock b;
  b.query = store.add(name + "/q", {1, hidden}, nc::Init::TruncNormal02, rng);
  b.attn = nc::Attention<float>::create(store, name + "/attn", hidden, kv_dim, heads * head_dim,
                                        hidden, heads, rng);
  b.ln = nc::LayerNormLayer<float>::create(store, name + "/ln", hidden, rng);
  b.mlp = nc::Mlp<float>::create(store, name + "/mlp", hidden, hidden * mlp_ratio, rng);
  return b;
}

Tensor<float> PoolBlock::forward(Tape<float>* tape, Tensor<float> kv,
                                 const Tensor<float>& q_extra) const {
  Tensor<float> q = query->value;
  if (q_extra.defined()) q = nc::add(tape, q, q_extra);
  Tensor<float> pooled = nc::add(tape, q, attn.forward(tape, q, kv, kv));
  return nc::add(tape, pooled, mlp.forward(tape, ln.forward(tape, pooled)));
}

ActionDecoder::ActionDecoder(DecoderConfig cfg, uint64_t seed) : cfg_(cfg) {
  nc::Rng rng(seed);
  const auto& d = cfg_.dims;
  visual_pool_ = PoolBlock::create(store_, "visual_pool", d.hidden, cfg_.trunk_dim, d.heads,
                                   d.head_dim, d.mlp_ratio, rng);
  action_pool_ = PoolBlock::create(store_, "action_pool", d.hidden, cfg_.trunk_dim, d.heads,
                                   d.head_dim, d.mlp_ratio, rng);
  if (cfg_.proprio_dim > 0) {
    proprio_fc1_ = nc::Linear<float>::create(store_, "proprio/fc1", cfg_.proprio_dim, d.hidden, rng);
    proprio_fc2_ = nc::Linear<float>::create(store_, "proprio/fc2", d.hidden, d.hidden, rng);
  }
  const int in = d.hidden + (cfg_.proprio_dim > 0 ? d.hidden : 0);
  action_proj_ = nc::Linear<float>::create(store_, "action_proj", in, cfg_.chunk * cfg_.act_dim, rng);
}

Tensor<float> ActionDecoder::pool_visual(Tape<float>* tape, Tensor<float> e_v) const {
  if (!e_v.defined() || e_v.dim(0) == 0)
    throw std::invalid_argument("pool_visual: empty visual embeddings");
  return visual_pool_.forward(tape, std::move(e_v));
}

Tensor<float> ActionDecoder::decode_chunk(Tape<float>* tape, Tensor<float> e_a,
                                          const Tensor<float>& e_v_pooled,
                                          const Tensor<float>& proprio) const {
  if (e_a.dim(0) != cfg_.n_latents)
    throw std::invalid_argument("decode_chunk: expected " + std::to_string(cfg_.n_latents) +
                                " latent-action tokens, got " + std::to_string(e_a.dim(0)));
  if (cfg_.use_visual && !e_v_pooled.defined())
    throw std::invalid_argument("decode_chunk: missing pooled visual token");
  Tensor<float> pooled = action_pool_.forward(tape, std::move(e_a),
                                              cfg_.use_visual ? e_v_pooled : Tensor<float>{});
  if (cfg_.proprio_dim > 0) {
    if (!proprio.defined()) throw std::invalid_argument("decode_chunk: missing proprio input");
    Tensor<float> pp = proprio_fc2_.forward(tape, nc::gelu(tape, proprio_fc1_.forward(tape, proprio)));
    pooled = nc::concat_cols(tape, {std::move(pooled), std::move(pp)});
  }
  return nc::tanh_op(tape, action_proj_.forward(tape, std::move(pooled)));
}

ActionChunk ActionDecoder::decode(const Tensor<float>& e_a, const Tensor<float>& e_v,
                                  const std::vector<float>& proprio) const {
  Tensor<float> pooled_v;
  if (cfg_.use_visual) pooled_v = pool_visual(nullptr, e_v);
  Tensor<float> pp;
  if (cfg_.proprio_dim > 0) {
    pp = Tensor<float>({1, cfg_.proprio_dim});
    for (int i = 0; i < cfg_.proprio_dim; ++i) pp.data()[i] = proprio[static_cast<size_t>(i)];
  }
  Tensor<float> flat = decode_chunk(nullptr, e_a, pooled_v, pp);
  ActionChunk chunk;
  chunk.embodiment = cfg_.embodiment;
  chunk.actions = Tensor<float>({cfg_.chunk, cfg_.act_dim});
  std::copy_n(flat.data(), flat.numel(), chunk.actions.data());
  return chunk;
}

void ActionDecoder::save_into(nc::Checkpoint& ck, const std::string& prefix) const {
  ck.put_store(store_, prefix);
  ck.put_i64(prefix + "meta/embodiment", static_cast<int64_t>(cfg_.embodiment));
  ck.put_i64(prefix + "meta/use_visual", cfg_.use_visual ? 1 : 0);
  ck.put_i64(prefix + "meta/hidden", cfg_.dims.hidden);
}

void ActionDecoder::load_from(const nc::Checkpoint& ck, const std::string& prefix) {
  ck.load_store(store_, prefix);
}

// ---- autoregressive bin baseline -------------------------------------------

ArBinDecoder::ArBinDecoder(DecoderConfig cfg, uint64_t seed) : cfg_(cfg) {
  nc::Rng rng(seed);
  const int hidden = cfg_.dims.hidden;
  const int len = 1 + cfg_.chunk * cfg_.act_dim;  // context token + bins
  ctx_proj_ = nc::Linear<float>::create(store_, "ctx_proj", cfg_.trunk_dim, hidden, rng);
  if (cfg_.proprio_dim > 0) {
    proprio_fc1_ = nc::Linear<float>::create(store_, "proprio/fc1", cfg_.proprio_dim, hidden, rng);
    proprio_fc2_ = nc::Linear<float>::create(store_, "proprio/fc2", hidden, hidden, rng);
  }
  bin_emb_ = store_.add("bin_emb", {kBins, hidden}, nc::Init::TruncNormal02, rng);
  pos_emb_ = store_.add("pos_emb", {len, hidden}, nc::Init::TruncNormal02, rng);
  for (int i = 0; i < 2; ++i)
    blocks_.push_back(
        nc::TransformerBlock<float>::create(store_, "blocks/" + std::to_string(i), hidden, 4, 4, rng));
  out_ln_ = nc::LayerNormLayer<float>::create(store_, "out_ln", hidden, rng);
  head_ = nc::Linear<float>::create(store_, "head", hidden, kBins, rng);
}

int ArBinDecoder::bin_of(float v) {
  const int b = static_cast<int>((v + 1.0f) * 0.5f * kBins);
  return std::clamp(b, 0, kBins - 1);
}

float ArBinDecoder::value_of(int bin) {
  return -1.0f + (static_cast<float>(bin) + 0.5f) * (2.0f / kBins);
}

std::vector<int> ArBinDecoder::bins_of_chunk(const std::vector<std::vector<float>>& actions) const {
  std::vector<int> bins;
  for (const auto& a : actions)
    for (float v : a) bins.push_back(bin_of(v));
  return bins;
}

Tensor<float> ArBinDecoder::hidden_states(Tape<float>* tape, Tensor<float> ctx,
                                          const Tensor<float>& proprio,
                                          const std::vector<int>& prefix_bins) const {
  Tensor<float> c = ctx_proj_.forward(tape, std::move(ctx));
  if (cfg_.proprio_dim > 0 && proprio.defined()) {
    Tensor<float> pp = proprio_fc2_.forward(tape, nc::gelu(tape, proprio_fc1_.forward(tape, proprio)));
    c = nc::add(tape, c, pp);
  }
  std::vector<Tensor<float>> rows{c};
  if (!prefix_bins.empty())
    rows.push_back(nc::embedding_lookup(tape, bin_emb_->value, prefix_bins));
  Tensor<float> x = rows.size() == 1 ? rows[0] : nc::concat_rows(tape, std::move(rows));
  std::vector<int> pos(static_cast<size_t>(x.dim(0)));
  for (size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
  x = nc::add(tape, x, nc::embedding_lookup(tape, pos_emb_->value, pos));
  const Tensor<float> mask = nc::causal_mask<float>(x.dim(0));
  for (const auto& b : blocks_) x = b.forward(tape, x, mask);
  return out_ln_.forward(tape, x);
}

Tensor<float> ArBinDecoder::loss(Tape<float>* tape, Tensor<float> ctx, const Tensor<float>& proprio,
                                 const std::vector<int>& target_bins) const {
  const int len = cfg_.chunk * cfg_.act_dim;
  if (static_cast<int>(target_bins.size()) != len)
    throw std::invalid_argument("ar bins: expected " + std::to_string(len) + " targets");
  Tensor<float> h = hidden_states(tape, std::move(ctx), proprio, target_bins);
  // rows 0..len-1 predict bins 1..len (teacher forcing with the context first)
  Tensor<float> logits = head_.forward(tape, nc::slice_rows(tape, std::move(h), 0, len));
  return nc::cross_entropy_sum(tape, std::move(logits), target_bins);
}

ActionChunk ArBinDecoder::decode(const Tensor<float>& ctx, const std::vector<float>& proprio) const {
  Tensor<float> pp;
  if (cfg_.proprio_dim > 0) {
    pp = Tensor<float>({1, cfg_.proprio_dim});
    for (int i = 0; i < cfg_.proprio_dim; ++i) pp.data()[i] = proprio[static_cast<size_t>(i)];
  }
  const int len = cfg_.chunk * cfg_.act_dim;
  std::vector<int> bins;
  for (int i = 0; i < len; ++i) {
    Tensor<float> h = hidden_states(nullptr, ctx, pp, bins);
    Tensor<float> last = nc::slice_rows<float>(nullptr, h, h.dim(0) - 1, h.dim(0));
    Tensor<float> logits = head_.forward(nullptr, std::move(last));
    int best = 0;
    for (int c = 1; c < kBins; ++c)
      if (logits.data()[c] > logits.data()[best]) best = c;
    bins.push_back(best);
  }
  ActionChunk chunk;
  chunk.embodiment = cfg_.embodiment;
  chunk.actions = Tensor<float>({cfg_.chunk, cfg_.act_dim});
  for (int i = 0; i < len; ++i) chunk.actions.data()[i] = value_of(bins[static_cast<size_t>(i)]);
  return chunk;
}

void ArBinDecoder::save_into(nc::Checkpoint& ck, const std::string& prefix) const {
  ck.put_store(store_, prefix);
  ck.put_i64(prefix + "meta/embodiment", static_cast<int64_t>(cfg_.embodiment));
}

void ArBinDecoder::load_from(const nc::Checkpoint& ck, const std::string& prefix) {
  ck.load_store(store_, prefix);
}

}  // namespace lact::act
