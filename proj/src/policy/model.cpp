#include "lact/policy/model.hpp"

#include <cstring>

namespace lact::policy {

using nc::Tape;
using nc::Tensor;

PolicyModel::PolicyModel(PolicyConfig cfg, uint64_t seed)
    : cfg_(cfg), vocab_(PolicyVocab::build(cfg.codebook_size)) {
  nc::Rng rng(seed);
  vis_proj_ = nc::Linear<float>::create(store_, "vis_proj", cfg_.feat_dim, cfg_.dim, rng);
  vis_pos_ = store_.add("vis_pos", {cfg_.patches, cfg_.dim}, nc::Init::TruncNormal02, rng);
  tok_emb_ = store_.add("tok_emb", {vocab_.size(), cfg_.dim}, nc::Init::TruncNormal02, rng);
  txt_pos_ = store_.add("txt_pos", {cfg_.max_text, cfg_.dim}, nc::Init::TruncNormal02, rng);
  for (int i = 0; i < cfg_.blocks; ++i)
    blocks_.push_back(nc::TransformerBlock<float>::create(store_, "blocks/" + std::to_string(i), cfg_.dim,
                                                          cfg_.heads, cfg_.mlp_ratio, rng));
  out_ln_ = nc::LayerNormLayer<float>::create(store_, "out_ln", cfg_.dim, rng);
  head_ = nc::Linear<float>::create(store_, "head", cfg_.dim, vocab_.size(), rng);
}

namespace {

void append_code(std::vector<int>& ids, const PolicyVocab& vocab, const lam::LatentCode& code) {
  for (int idx : code.indices) ids.push_back(vocab.act_token(idx));
}

}  // namespace

BuiltSequence PolicyModel::build_sequence(const PolicyInput& input) const {
  if (!input.visual) throw std::invalid_argument("build_sequence: missing visual features");
  if (!input.instruction) throw std::invalid_argument("build_sequence: missing instruction");
  if (input.history.size() > 1)
    throw std::invalid_argument("build_sequence: at most one history step is supported");

  BuiltSequence seq;
  seq.text_ids.push_back(vocab_.bos);
  for (int id : vocab_.encode_words(*input.instruction, &seq.unk_count)) seq.text_ids.push_back(id);
  if (!input.history.empty()) {
    if (static_cast<int>(input.history[0].indices.size()) != cfg_.n_latents)
      throw std::invalid_argument("build_sequence: history code has wrong latent count");
    seq.text_ids.push_back(vocab_.hist);
    append_code(seq.text_ids, vocab_, input.history[0]);
  }
  const int sep_pos = static_cast<int>(seq.text_ids.size());
  seq.text_ids.push_back(vocab_.sep);
  if (input.target) {
    if (static_cast<int>(input.target->indices.size()) != cfg_.n_latents)
      throw std::invalid_argument("build_sequence: target code has wrong latent count");
    append_code(seq.text_ids, vocab_, *input.target);
    for (int i = 0; i < cfg_.n_latents; ++i) {
      seq.predict_rows.push_back(cfg_.patches + sep_pos + i);
      seq.act_input_rows.push_back(cfg_.patches + sep_pos + 1 + i);
    }
  }
  if (static_cast<int>(seq.text_ids.size()) > cfg_.max_text)
    throw std::invalid_argument("build_sequence: text region exceeds max_text capacity");
  seq.total_len = cfg_.patches + static_cast<int>(seq.text_ids.size());
  return seq;
}

Tensor<float> PolicyModel::build_mask(int total_len) const {
  Tensor<float> mask({total_len, total_len});
  constexpr float kHide = -1e9f;
  const int p = cfg_.patches;
  for (int i = 0; i < total_len; ++i)
    for (int j = 0; j < total_len; ++j) {
      bool visible;
      if (i < p)
        visible = j < p;  // visual tokens see each other
      else
        visible = j < p || j <= i;  // text: full visual prefix + causal text
      mask.data()[i * total_len + j] = visible ? 0.0f : kHide;
    }
  return mask;
}

Tensor<float> PolicyModel::trunk(Tape<float>* tape, const Tensor<float>& visual,
                                 const std::vector<int>& text_ids) const {
  if (visual.shape() != nc::Shape{cfg_.patches, cfg_.feat_dim})
    nc::shape_error("policy trunk", visual.shape(), {cfg_.patches, cfg_.feat_dim});
  Tensor<float> vis = nc::add(tape, vis_proj_.forward(tape, visual), vis_pos_->value);

  std::vector<int> pos_ids(text_ids.size());
  for (size_t i = 0; i < text_ids.size(); ++i) pos_ids[i] = static_cast<int>(i);
  Tensor<float> txt = nc::add(tape, nc::embedding_lookup(tape, tok_emb_->value, text_ids),
                              nc::embedding_lookup(tape, txt_pos_->value, pos_ids));

  Tensor<float> x = nc::concat_rows(tape, {std::move(vis), std::move(txt)});
  const Tensor<float> mask = build_mask(x.dim(0));
  for (const auto& block : blocks_) x = block.forward(tape, x, mask);
  return out_ln_.forward(tape, x);
}

PolicyModel::Forward PolicyModel::forward(Tape<float>* tape, const PolicyInput& input) const {
  Forward fw;
  fw.seq = build_sequence(input);
  fw.hidden = trunk(tape, *input.visual, fw.seq.text_ids);
  return fw;
}

PolicyModel::NllOut PolicyModel::nll_from_forward(Tape<float>* tape, const Forward& fw,
                                                  const lam::LatentCode& target) const {
  if (fw.seq.predict_rows.empty())
    throw std::invalid_argument("nll: sequence was built without target codes");
  Tensor<float> rows = nc::gather_rows(tape, fw.hidden, fw.seq.predict_rows);
  Tensor<float> logits = head_.forward(tape, std::move(rows));
  Tensor<float> act_logits =
      nc::slice_cols(tape, std::move(logits), vocab_.act_start, vocab_.act_start + vocab_.act_count);

  NllOut out;
  out.loss = nc::cross_entropy_sum(tape, act_logits, target.indices);
  for (int i = 0; i < cfg_.n_latents; ++i) {
    const float* row = act_logits.data() + i * vocab_.act_count;
    int best = 0;
    for (int c = 1; c < vocab_.act_count; ++c)
      if (row[c] > row[best]) best = c;
    if (best == target.indices[static_cast<size_t>(i)]) ++out.correct;
  }
  return out;
}

PolicyModel::Prediction PolicyModel::predict_latent_action(
    const Tensor<float>& visual, const std::string& instruction,
    std::span<const lam::LatentCode> history) const {
  if (history.size() > 1)
    throw std::invalid_argument("predict: at most one history step is supported");

  lam::LatentCode partial;
  partial.role = lam::CodeRole::TaskCentric;

  std::vector<int> base_ids;
  base_ids.push_back(vocab_.bos);
  for (int id : vocab_.encode_words(instruction, nullptr)) base_ids.push_back(id);
  if (!history.empty()) {
    base_ids.push_back(vocab_.hist);
    append_code(base_ids, vocab_, history[0]);
  }
  base_ids.push_back(vocab_.sep);

  for (int i = 0; i < cfg_.n_latents; ++i) {
    std::vector<int> ids = base_ids;
    append_code(ids, vocab_, partial);
    Tensor<float> hidden = trunk(nullptr, visual, ids);
    Tensor<float> last = nc::slice_rows<float>(nullptr, hidden, hidden.dim(0) - 1, hidden.dim(0));
    Tensor<float> logits = head_.forward(nullptr, std::move(last));
    int best = 0;
    const float* row = logits.data() + vocab_.act_start;
    for (int c = 1; c < vocab_.act_count; ++c)
      if (row[c] > row[best]) best = c;
    partial.indices.push_back(best);
  }

  // one more pass including the final ACT input to expose its hidden state
  std::vector<int> ids = base_ids;
  append_code(ids, vocab_, partial);
  Tensor<float> hidden = trunk(nullptr, visual, ids);
  Prediction pred;
  pred.code = partial;
  const int act0 = static_cast<int>(ids.size()) - cfg_.n_latents + cfg_.patches;
  pred.act_hidden = nc::slice_rows<float>(nullptr, hidden, act0, act0 + cfg_.n_latents);
  pred.vis_hidden = nc::slice_rows<float>(nullptr, std::move(hidden), 0, cfg_.patches);
  return pred;
}

void PolicyModel::freeze_trunk() {
  for (auto& p : store_.all()) p->freeze(true);
}

void PolicyModel::save(const std::string& path) const {
  nc::Checkpoint ck;
  ck.put_store(store_);
  ck.put_i64("meta/dim", cfg_.dim);
  ck.put_i64("meta/heads", cfg_.heads);
  ck.put_i64("meta/blocks", cfg_.blocks);
  ck.put_i64("meta/mlp_ratio", cfg_.mlp_ratio);
  ck.put_i64("meta/feat_dim", cfg_.feat_dim);
  ck.put_i64("meta/patches", cfg_.patches);
  ck.put_i64("meta/n_latents", cfg_.n_latents);
  ck.put_i64("meta/codebook_size", cfg_.codebook_size);
  ck.put_i64("meta/max_text", cfg_.max_text);
  nc::CkptRecord vr;
  vr.name = "meta/vocab";
  vr.dtype = nc::Dtype::I64;
  const std::string blob = vocab_.serialize();
  vr.shape = {static_cast<int>((blob.size() + 7) / 8)};
  vr.bytes.assign(vr.shape[0] * 8, '\0');
  std::memcpy(vr.bytes.data(), blob.data(), blob.size());
  ck.put(std::move(vr));
  ck.save(path);
}

PolicyModel PolicyModel::load(const std::string& path) {
  nc::Checkpoint ck = nc::Checkpoint::load(path);
  auto geti = [&](const char* n) { return static_cast<int>(ck.find(n)->as_i64()); };
  PolicyConfig cfg;
  cfg.dim = geti("meta/dim");
  cfg.heads = geti("meta/heads");
  cfg.blocks = geti("meta/blocks");
  cfg.mlp_ratio = geti("meta/mlp_ratio");
  cfg.feat_dim = geti("meta/feat_dim");
  cfg.patches = geti("meta/patches");
  cfg.n_latents = geti("meta/n_latents");
  cfg.codebook_size = geti("meta/codebook_size");
  cfg.max_text = geti("meta/max_text");
  PolicyModel m(cfg, 0);
  ck.load_store(m.store_);
  return m;
}

}  // namespace lact::policy
