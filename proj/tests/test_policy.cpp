#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "lact/numcore/adamw.hpp"
#include "lact/policy/train.hpp"

using namespace lact;
using namespace lact::policy;
using nc::Shape;
using nc::Tape;
using nc::Tensor;

namespace {

PolicyConfig tiny_cfg() {
  PolicyConfig c;
  c.dim = 64;
  c.heads = 4;
  c.blocks = 2;
  return c;
}

Tensor<float> random_visual(nc::Rng& rng) {
  Tensor<float> t(Shape{64, 64});
  for (size_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<float>(rng.gauss(0, 0.5));
  return t;
}

lam::LatentCode code_of(std::vector<int> idx) {
  lam::LatentCode c;
  c.indices = std::move(idx);
  c.role = lam::CodeRole::TaskCentric;
  return c;
}

}  // namespace

TEST_CASE("vocab: ACT block is contiguous and sized |C|") {
  auto v = PolicyVocab::build(16);
  CHECK(v.act_count == 16);
  CHECK(v.act_start + v.act_count == v.size());
  for (int i = 0; i < 16; ++i) CHECK(v.is_act(v.act_token(i)));
  CHECK_FALSE(v.is_act(v.sep));

  int unks = 0;
  auto ids = v.encode_words("move the shiny gizmo", &unks);
  CHECK(ids.size() == 4);
  CHECK(unks == 2);

  auto rt = PolicyVocab::deserialize(v.serialize());
  CHECK(rt.size() == v.size());
  CHECK(rt.act_start == v.act_start);
}

TEST_CASE("build_sequence: layout arithmetic") {
  PolicyModel m(tiny_cfg(), 3);
  nc::Rng rng(1);
  auto vis = random_visual(rng);
  std::string instr = "move the red circle to the north east corner";  // 9 words
  auto target = code_of({1, 2, 3, 4});

  PolicyInput in;
  in.visual = &vis;
  in.instruction = &instr;
  in.target = &target;
  auto seq = m.build_sequence(in);
  CHECK(seq.total_len == 64 + 1 + 9 + 1 + 4);
  CHECK(seq.unk_count == 0);
  CHECK(seq.predict_rows.size() == 4);

  auto hist = code_of({5, 6, 7, 8});
  in.history = std::span<const lam::LatentCode>(&hist, 1);
  auto seq_h = m.build_sequence(in);
  CHECK(seq_h.total_len == seq.total_len + 5);  // marker + 4 history ids

  std::string empty;
  in.instruction = &empty;
  in.history = {};
  auto seq_e = m.build_sequence(in);
  CHECK(seq_e.total_len == 64 + 1 + 0 + 1 + 4);

  std::vector<lam::LatentCode> two = {hist, hist};
  in.history = two;
  CHECK_THROWS_AS((void)m.build_sequence(in), std::invalid_argument);
}

TEST_CASE("nll: uniform logits cost ln16 per token and shift-invariance holds") {
  PolicyModel m(tiny_cfg(), 4);
  // zero the head: logits are exactly uniform over the whole vocabulary
  auto head_w = m.params().find("head/w");
  auto head_b = m.params().find("head/b");
  REQUIRE(head_w);
  for (size_t i = 0; i < head_w->numel(); ++i) head_w->value.data()[i] = 0.0f;
  for (size_t i = 0; i < head_b->numel(); ++i) head_b->value.data()[i] = 0.0f;

  nc::Rng rng(2);
  auto vis = random_visual(rng);
  std::string instr = "go to the red marker";
  auto target = code_of({0, 5, 10, 15});
  PolicyInput in;
  in.visual = &vis;
  in.instruction = &instr;
  in.target = &target;

  auto fw = m.forward(nullptr, in);
  auto nll = m.nll_from_forward(nullptr, fw, target);
  CHECK(nll.loss.item() == doctest::Approx(4.0 * std::log(16.0)).epsilon(1e-5));
  CHECK(nll.loss.item() == doctest::Approx(11.0904).epsilon(1e-4));

  // adding a constant to every ACT logit (via the head bias) keeps the loss
  const auto& vocab = m.vocab();
  for (int c = vocab.act_start; c < vocab.act_start + vocab.act_count; ++c)
    head_b->value.data()[c] += 3.7f;
  auto fw2 = m.forward(nullptr, in);
  auto nll2 = m.nll_from_forward(nullptr, fw2, target);
  CHECK(nll2.loss.item() == doctest::Approx(nll.loss.item()).epsilon(1e-4));
}

TEST_CASE("causality: hidden states at ACT position i ignore later targets") {
  PolicyModel m(tiny_cfg(), 5);
  nc::Rng rng(3);
  auto vis = random_visual(rng);
  std::string instr = "move the blue square to the south west corner";
  auto t1 = code_of({1, 2, 3, 4});
  auto t2 = code_of({1, 2, 3, 9});  // differs only at the last position

  PolicyInput in;
  in.visual = &vis;
  in.instruction = &instr;
  in.target = &t1;
  auto fa = m.forward(nullptr, in);
  in.target = &t2;
  auto fb = m.forward(nullptr, in);

  const int dim = m.config().dim;
  for (int i = 0; i < 3; ++i) {
    const int row = fa.seq.predict_rows[static_cast<size_t>(i + 1)];  // rows of a1..a3 inputs
    for (int d = 0; d < dim; ++d)
      CHECK(fa.hidden.data()[row * dim + d] == fb.hidden.data()[row * dim + d]);
  }
}

TEST_CASE("greedy decode: deterministic, in-range, invariant to positive logit scaling") {
  PolicyModel m(tiny_cfg(), 6);
  nc::Rng rng(4);
  auto vis = random_visual(rng);
  std::string instr = "go to the green marker";
  auto a = m.predict_latent_action(vis, instr, {});
  auto b = m.predict_latent_action(vis, instr, {});
  CHECK(a.code.indices == b.code.indices);
  for (int idx : a.code.indices) CHECK((idx >= 0 && idx < 16));
  CHECK(a.act_hidden.shape() == Shape{4, m.config().dim});
  CHECK(a.vis_hidden.shape() == Shape{64, m.config().dim});

  auto head_w = m.params().find("head/w");
  auto head_b = m.params().find("head/b");
  for (size_t i = 0; i < head_w->numel(); ++i) head_w->value.data()[i] *= 2.0f;
  for (size_t i = 0; i < head_b->numel(); ++i) head_b->value.data()[i] *= 2.0f;
  auto c = m.predict_latent_action(vis, instr, {});
  CHECK(c.code.indices == a.code.indices);
}

TEST_CASE("single-sample overfit: loss < 0.01 and prediction equals the label") {
  PolicyModel m(tiny_cfg(), 7);
  nc::Rng rng(5);
  auto vis = random_visual(rng);
  std::string instr = "move the yellow triangle to the north west corner";
  auto target = code_of({3, 14, 0, 9});

  nc::AdamW<float>::Config oc;
  oc.lr = 2e-3f;
  oc.weight_decay = 0.0f;
  nc::AdamW<float> opt(m.params(), oc);
  float last = 1e9f;
  for (int step = 0; step < 500; ++step) {
    m.params().zero_grads();
    Tape<float> tape;
    PolicyInput in;
    in.visual = &vis;
    in.instruction = &instr;
    in.target = &target;
    auto fw = m.forward(&tape, in);
    auto nll = m.nll_from_forward(&tape, fw, target);
    tape.backward(nll.loss);
    opt.step();
    last = nll.loss.item();
    if (last < 5e-3f) break;
  }
  CHECK(last < 0.01f);
  auto pred = m.predict_latent_action(vis, instr, {});
  CHECK(pred.code.indices == target.indices);
}

TEST_CASE("history plumbing: Markovian code sequence is learnable through history tokens") {
  PolicyModel m(tiny_cfg(), 8);
  nc::Rng rng(6);
  // 16 fixed samples: identical visuals/instruction, target equals history.
  // only the history tokens carry the answer.
  auto vis = random_visual(rng);
  std::string instr;
  std::vector<lam::LatentCode> hists;
  for (int i = 0; i < 16; ++i)
    hists.push_back(code_of({rng.index(16), rng.index(16), rng.index(16), rng.index(16)}));

  nc::AdamW<float>::Config oc;
  oc.lr = 1e-3f;
  oc.weight_decay = 0.0f;
  nc::AdamW<float> opt(m.params(), oc);
  float mean_loss = 1e9f;
  for (int step = 0; step < 700 && mean_loss > 0.005f; ++step) {
    m.params().zero_grads();
    double total = 0;
    for (const auto& h : hists) {
      Tape<float> tape;
      PolicyInput in;
      in.visual = &vis;
      in.instruction = &instr;
      in.history = std::span<const lam::LatentCode>(&h, 1);
      in.target = &h;
      auto fw = m.forward(&tape, in);
      auto nll = m.nll_from_forward(&tape, fw, h);
      auto scaled = nc::scale(&tape, nll.loss, 1.0f / 16.0f);
      tape.backward(scaled);
      total += nll.loss.item();
    }
    opt.step();
    mean_loss = static_cast<float>(total / 16.0);
  }
  CHECK(mean_loss < 0.01f);
}

TEST_CASE("policy checkpoint round-trip") {
  PolicyModel m(tiny_cfg(), 9);
  const auto path = std::filesystem::temp_directory_path() / "lact_policy_rt.bin";
  m.save(path.string());
  auto loaded = PolicyModel::load(path.string());
  CHECK(loaded.weights_hash() == m.weights_hash());
  CHECK(loaded.vocab().size() == m.vocab().size());
  std::filesystem::remove(path);
}

TEST_CASE("pretrain: learns fabricated annotations, logs mixture, validates inputs") {
  // tiny dataset + hand-built annotations whose codes depend on the episode
  world::DataConfig dc;
  dc.episodes = 6;
  dc.manip_weight = 1.0;
  dc.nav_weight = 0.0;
  dc.human_weight = 0.0;
  const auto dir = std::filesystem::temp_directory_path() / "lact_pp_ds";
  std::filesystem::remove_all(dir);
  world::generate_dataset(dc, 11, dir.string());
  auto ds = world::load_dataset(dir.string());

  lam::Annotations ann;
  ann.role = lam::CodeRole::TaskCentric;
  ann.n_latents = 4;
  ann.codebook_size = 16;
  nc::Rng crng(7);
  for (const auto& ep : ds.episodes) {
    const int k = world::frame_interval(ep.embodiment);
    std::vector<std::pair<int, lam::LatentCode>> codes;
    // constant code per episode: predictable from the visuals (objects differ)
    auto c = code_of({crng.index(16), crng.index(16), crng.index(16), crng.index(16)});
    for (int t = 0; t + k < static_cast<int>(ep.frames.size()); ++t) codes.emplace_back(t, c);
    ann.by_episode[ep.episode_id] = std::move(codes);
  }

  feat::Featurizer fz;
  PolicyModel m(tiny_cfg(), 10);
  PretrainConfig pc;
  pc.steps = 120;
  pc.batch = 8;
  pc.lr = 1e-3f;
  pc.holdout_frac = 0.0;
  pc.mixture_tag = "manip-only";
  pc.metrics_csv = (std::filesystem::temp_directory_path() / "lact_pp.csv").string();

  std::vector<PretrainPool> pools{{&ds, &ann, 1.0, "manip"}};
  auto summary = pretrain_policy(m, pools, fz, pc);
  CHECK(summary.loss_trace.back() < summary.loss_trace.front());

  const float acc = act_token_accuracy(m, ds, ann, fz, true, 0.0, 1.0, 128);
  CHECK(acc > 1.0f / 16.0f);  // strictly above chance

  std::ifstream csv(pc.metrics_csv);
  std::string header;
  std::getline(csv, header);
  CHECK(header == "step,loss,act_accuracy,lr,mixture");
  std::string line;
  bool tag_seen = false;
  while (std::getline(csv, line)) tag_seen = tag_seen || line.find("manip-only") != std::string::npos;
  CHECK(tag_seen);

  CHECK_THROWS_AS((void)pretrain_policy(m, {}, fz, pc), std::invalid_argument);
  std::vector<PretrainPool> zero{{&ds, &ann, 0.0, "z"}};
  CHECK_THROWS_AS((void)pretrain_policy(m, zero, fz, pc), std::invalid_argument);

  std::filesystem::remove_all(dir);
  std::filesystem::remove(pc.metrics_csv);
}
