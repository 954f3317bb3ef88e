#include "lact/lam/model.hpp"

#include <cstring>

namespace lact::lam {

using nc::Tensor;

STBlock STBlock::create(nc::ParamStore<float>& store, const std::string& name, int dim, int heads,
                        nc::Rng& rng) {
  STBlock b;
  b.ln1 = nc::LayerNormLayer<float>::create(store, name + "/ln1", dim, rng);
  b.attn_spatial = nc::Attention<float>::create(store, name + "/attn_s", dim, dim, dim, dim, heads, rng);
  b.ln2 = nc::LayerNormLayer<float>::create(store, name + "/ln2", dim, rng);
  b.attn_temporal = nc::Attention<float>::create(store, name + "/attn_t", dim, dim, dim, dim, heads, rng);
  b.ln3 = nc::LayerNormLayer<float>::create(store, name + "/ln3", dim, rng);
  b.mlp = nc::Mlp<float>::create(store, name + "/mlp", dim, dim * 4, rng);
  return b;
}

Tensor<float> STBlock::forward(nc::Tape<float>* tape, Tensor<float> x, const Tensor<float>& spatial_mask,
                               const Tensor<float>& temporal_mask) const {
  Tensor<float> h = ln1.forward(tape, x);
  x = nc::add(tape, x, attn_spatial.forward(tape, h, h, h, spatial_mask));
  h = ln2.forward(tape, x);
  x = nc::add(tape, x, attn_temporal.forward(tape, h, h, h, temporal_mask));
  return nc::add(tape, x, mlp.forward(tape, ln3.forward(tape, x)));
}

int LamModel::slice_len() const {
  int s = cfg_.patches + cfg_.n_latents;             // patches + TI slots
  if (cfg_.stage == 2) s += cfg_.n_latents;          // TC slots
  if (cfg_.stage == 1 && cfg_.use_language) s += 1;  // language token
  return s;
}

void LamModel::build_masks() {
  const int s = slice_len();
  const int n = 2 * s;
  spatial_mask_ = Tensor<float>({n, n});
  temporal_mask_ = Tensor<float>({n, n});
  constexpr float kHide = -1e9f;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const bool same_slice = (i / s) == (j / s);
      spatial_mask_.data()[i * n + j] = same_slice ? 0.0f : kHide;
      const bool same_pos = (i % s) == (j % s);
      const bool causal = (j / s) <= (i / s);
      temporal_mask_.data()[i * n + j] = (same_pos && causal) ? 0.0f : kHide;
    }
}

LamModel::LamModel(LamConfig cfg, uint64_t seed) : cfg_(cfg) {
  nc::Rng rng(seed);
  const int d = cfg_.dim;
  enc_in_ = nc::Linear<float>::create(store_, "enc/in", cfg_.feat_dim, d, rng);
  enc_spatial_pos_ = store_.add("enc/spatial_pos", {cfg_.patches, d}, nc::Init::TruncNormal02, rng);
  enc_temporal_pos_ = store_.add("enc/temporal_pos", {2, d}, nc::Init::TruncNormal02, rng);
  enc_ti_slots_ = store_.add("enc/ti_slots", {cfg_.n_latents, d}, nc::Init::TruncNormal02, rng);
  if (cfg_.stage == 2) {
    enc_tc_slots_ = store_.add("enc/tc_slots", {cfg_.n_latents, d}, nc::Init::TruncNormal02, rng);
    has_tc_ = true;
  }
  if (cfg_.use_language) enc_instr_ = nc::Linear<float>::create(store_, "enc/instr", kTextDim, d, rng);
  for (int i = 0; i < cfg_.enc_blocks; ++i)
    enc_blocks_.push_back(STBlock::create(store_, "enc/blocks/" + std::to_string(i), d, cfg_.heads, rng));
  enc_out_ln_ = nc::LayerNormLayer<float>::create(store_, "enc/out_ln", d, rng);

  dec_in_ = nc::Linear<float>::create(store_, "dec/in", cfg_.feat_dim, d, rng);
  dec_spatial_pos_ = store_.add("dec/spatial_pos", {cfg_.patches, d}, nc::Init::TruncNormal02, rng);
  dec_ti_pos_ = store_.add("dec/ti_pos", {cfg_.n_latents, d}, nc::Init::TruncNormal02, rng);
  if (cfg_.stage == 2)
    dec_tc_pos_ = store_.add("dec/tc_pos", {cfg_.n_latents, d}, nc::Init::TruncNormal02, rng);
  if (cfg_.use_language) {
    dec_instr_ = nc::Linear<float>::create(store_, "dec/instr", kTextDim, d, rng);
    dec_l_pos_ = store_.add("dec/l_pos", {1, d}, nc::Init::TruncNormal02, rng);
  }
  for (int i = 0; i < cfg_.dec_blocks; ++i)
    dec_blocks_.push_back(
        nc::TransformerBlock<float>::create(store_, "dec/blocks/" + std::to_string(i), d, cfg_.heads, 4, rng));
  dec_out_ln_ = nc::LayerNormLayer<float>::create(store_, "dec/out_ln", d, rng);
  dec_head_ = nc::Linear<float>::create(store_, "dec/head", d, cfg_.feat_dim, rng);

  ti_ = Codebook::create(store_, "vq/ti", cfg_.codebook_size, d, CodeRole::TaskIrrelevant, rng);
  if (cfg_.stage == 2)
    tc_ = Codebook::create(store_, "vq/tc", cfg_.codebook_size, d, CodeRole::TaskCentric, rng);

  build_masks();
}

Codebook& LamModel::tc_codebook() {
  if (!has_tc_) throw std::runtime_error("lam: no task-centric codebook before stage 2");
  return tc_;
}
const Codebook& LamModel::tc_codebook() const {
  if (!has_tc_) throw std::runtime_error("lam: no task-centric codebook before stage 2");
  return tc_;
}

LamModel::Encoded LamModel::idm_encode(nc::Tape<float>* tape, Tensor<float> o_t, Tensor<float> o_tk,
                                       const Tensor<float>* instr) const {
  if (cfg_.stage == 1 && cfg_.use_language && !instr)
    throw std::invalid_argument("idm_encode: stage 1 requires an instruction embedding");
  if ((cfg_.stage == 2 || !cfg_.use_language) && instr)
    throw std::invalid_argument("idm_encode: this stage does not take an instruction");
  if (o_t.shape() != nc::Shape{cfg_.patches, cfg_.feat_dim})
    nc::shape_error("idm_encode", o_t.shape(), {cfg_.patches, cfg_.feat_dim});
  if (o_tk.shape() != o_t.shape()) nc::shape_error("idm_encode", o_tk.shape(), o_t.shape());

  const int s = slice_len();
  auto make_slice = [&](Tensor<float> o, int slice_idx) {
    std::vector<Tensor<float>> parts;
    parts.push_back(nc::add(tape, enc_in_.forward(tape, std::move(o)), enc_spatial_pos_->value));
    parts.push_back(enc_ti_slots_->value);
    if (cfg_.stage == 2) parts.push_back(enc_tc_slots_->value);
    if (cfg_.stage == 1 && cfg_.use_language) parts.push_back(enc_instr_.forward(tape, *instr));
    Tensor<float> slice = nc::concat_rows(tape, std::move(parts));
    Tensor<float> tpos = nc::slice_rows<float>(tape, enc_temporal_pos_->value, slice_idx, slice_idx + 1);
    return nc::add_rowvec(tape, std::move(slice), std::move(tpos));
  };

  Tensor<float> x = nc::concat_rows(tape, {make_slice(std::move(o_t), 0), make_slice(std::move(o_tk), 1)});
  for (const auto& block : enc_blocks_) x = block.forward(tape, x, spatial_mask_, temporal_mask_);
  x = enc_out_ln_.forward(tape, x);

  // action-slot outputs are read from the second (later) slice
  Encoded out;
  const int base = s + cfg_.patches;
  out.ti_raw = nc::slice_rows(tape, x, base, base + cfg_.n_latents);
  if (cfg_.stage == 2)
    out.tc_raw = nc::slice_rows(tape, x, base + cfg_.n_latents, base + 2 * cfg_.n_latents);
  return out;
}

Tensor<float> LamModel::fdm_decode(nc::Tape<float>* tape, Tensor<float> o_t, Tensor<float> q_ti,
                                   const Tensor<float>* q_tc, const Tensor<float>* instr) const {
  const bool want_tc = cfg_.stage == 2;
  const bool want_instr = cfg_.stage == 1 && cfg_.use_language;
  if (want_tc != (q_tc != nullptr) || want_instr != (instr != nullptr))
    throw std::invalid_argument("fdm_decode: argument set inconsistent with stage");
  if (q_ti.shape() != nc::Shape{cfg_.n_latents, cfg_.dim})
    nc::shape_error("fdm_decode", q_ti.shape(), {cfg_.n_latents, cfg_.dim});

  std::vector<Tensor<float>> parts;
  parts.push_back(nc::add(tape, dec_in_.forward(tape, std::move(o_t)), dec_spatial_pos_->value));
  parts.push_back(nc::add(tape, std::move(q_ti), dec_ti_pos_->value));
  if (want_tc) parts.push_back(nc::add(tape, *q_tc, dec_tc_pos_->value));
  if (want_instr) parts.push_back(nc::add(tape, dec_instr_.forward(tape, *instr), dec_l_pos_->value));

  Tensor<float> x = nc::concat_rows(tape, std::move(parts));
  for (const auto& block : dec_blocks_) x = block.forward(tape, x);
  x = dec_out_ln_.forward(tape, x);
  return dec_head_.forward(tape, nc::slice_rows(tape, std::move(x), 0, cfg_.patches));
}

namespace {

void put_f64_vec(nc::Checkpoint& ck, const std::string& name, const std::vector<double>& v) {
  nc::CkptRecord r;
  r.name = name;
  r.dtype = nc::Dtype::F64;
  r.shape = {static_cast<int>(v.size())};
  r.bytes.resize(v.size() * 8);
  std::memcpy(r.bytes.data(), v.data(), r.bytes.size());
  ck.put(std::move(r));
}

std::vector<double> get_f64_vec(const nc::Checkpoint& ck, const std::string& name) {
  const auto* r = ck.find(name);
  if (!r) throw std::runtime_error("lam checkpoint: missing " + name);
  std::vector<double> v(r->bytes.size() / 8);
  std::memcpy(v.data(), r->bytes.data(), r->bytes.size());
  return v;
}

void put_codebook_state(nc::Checkpoint& ck, const std::string& prefix, const Codebook& cb) {
  put_f64_vec(ck, prefix + "/ema_counts", cb.ema_counts);
  put_f64_vec(ck, prefix + "/ema_sums", cb.ema_sums);
  std::vector<double> usage(cb.usage.begin(), cb.usage.end());
  put_f64_vec(ck, prefix + "/usage", usage);
  ck.put_i64(prefix + "/frozen", cb.frozen() ? 1 : 0);
}

void load_codebook_state(const nc::Checkpoint& ck, const std::string& prefix, Codebook& cb) {
  cb.ema_counts = get_f64_vec(ck, prefix + "/ema_counts");
  cb.ema_sums = get_f64_vec(ck, prefix + "/ema_sums");
  const auto usage = get_f64_vec(ck, prefix + "/usage");
  cb.usage.assign(usage.begin(), usage.end());
  if (ck.find(prefix + "/frozen")->as_i64() != 0) cb.entries->frozen = true;
}

}  // namespace

void LamModel::save(const std::string& path) const {
  nc::Checkpoint ck;
  ck.put_store(store_);
  ck.put_i64("meta/stage", cfg_.stage);
  ck.put_i64("meta/use_language", cfg_.use_language ? 1 : 0);
  ck.put_i64("meta/dim", cfg_.dim);
  ck.put_i64("meta/heads", cfg_.heads);
  ck.put_i64("meta/enc_blocks", cfg_.enc_blocks);
  ck.put_i64("meta/dec_blocks", cfg_.dec_blocks);
  ck.put_i64("meta/n_latents", cfg_.n_latents);
  ck.put_i64("meta/codebook_size", cfg_.codebook_size);
  ck.put_i64("meta/feat_dim", cfg_.feat_dim);
  ck.put_i64("meta/patches", cfg_.patches);
  put_f64_vec(ck, "meta/beta", {cfg_.beta});
  put_f64_vec(ck, "meta/ema_decay", {cfg_.ema_decay});
  ck.put_i64("meta/dead_code_window", cfg_.dead_code_window);
  put_codebook_state(ck, "state/ti", ti_);
  if (has_tc_) put_codebook_state(ck, "state/tc", tc_);
  ck.save(path);
}

namespace {

LamConfig config_from_ckpt(const nc::Checkpoint& ck) {
  auto geti = [&](const char* n) {
    const auto* r = ck.find(n);
    if (!r) throw std::runtime_error(std::string("lam checkpoint: missing ") + n);
    return static_cast<int>(r->as_i64());
  };
  LamConfig cfg;
  cfg.stage = geti("meta/stage");
  cfg.use_language = geti("meta/use_language") != 0;
  cfg.dim = geti("meta/dim");
  cfg.heads = geti("meta/heads");
  cfg.enc_blocks = geti("meta/enc_blocks");
  cfg.dec_blocks = geti("meta/dec_blocks");
  cfg.n_latents = geti("meta/n_latents");
  cfg.codebook_size = geti("meta/codebook_size");
  cfg.feat_dim = geti("meta/feat_dim");
  cfg.patches = geti("meta/patches");
  cfg.beta = static_cast<float>(get_f64_vec(ck, "meta/beta")[0]);
  cfg.ema_decay = static_cast<float>(get_f64_vec(ck, "meta/ema_decay")[0]);
  cfg.dead_code_window = geti("meta/dead_code_window");
  return cfg;
}

}  // namespace

LamModel LamModel::load(const std::string& path) {
  nc::Checkpoint ck = nc::Checkpoint::load(path);
  LamModel m(config_from_ckpt(ck), 0);
  ck.load_store(m.store_);
  load_codebook_state(ck, "state/ti", m.ti_);
  if (m.has_tc_) load_codebook_state(ck, "state/tc", m.tc_);
  return m;
}

LamModel LamModel::stage2_from_stage1(const std::string& stage1_path, uint64_t seed) {
  nc::Checkpoint ck = nc::Checkpoint::load(stage1_path);
  LamConfig cfg = config_from_ckpt(ck);
  if (cfg.stage != 1)
    throw std::runtime_error("stage 2 requires a stage-1 checkpoint, got stage " +
                             std::to_string(cfg.stage));
  cfg.stage = 2;
  cfg.use_language = false;  // the stage-2 equations carry no language token
  LamModel m(cfg, seed);

  // shared weights continue from stage 1; TC slots/codebook stay fresh
  for (auto& p : m.store_.all()) {
    const auto* r = ck.find(p->name);
    if (!r) continue;
    if (r->shape != p->value.shape())
      throw std::runtime_error("stage2 init: shape mismatch for " + p->name);
    std::memcpy(p->value.data(), r->bytes.data(), r->bytes.size());
  }
  load_codebook_state(ck, "state/ti", m.ti_);
  m.ti_.freeze();
  return m;
}

}  // namespace lact::lam
