#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "lact/numcore/adamw.hpp"
#include "lact/numcore/checkpoint.hpp"
#include "lact/numcore/nnblocks.hpp"
#include "lact/numcore/ops.hpp"
#include "support/gradcheck.hpp"

using namespace lact;
using nc::Shape;
using nc::Tape;
using nc::Tensor;
using lact::testing::gradcheck;
using lact::testing::random_tensor;
using lact::testing::weigh;

namespace {
constexpr double kTol = 1e-4;
}

TEST_CASE("gradcheck: matmul and matmul_nt") {
  nc::Rng rng(1);
  auto a = random_tensor({10, 10}, rng);
  auto b = random_tensor({10, 10}, rng);
  auto res = gradcheck(
      [](Tape<double>* t, std::vector<Tensor<double>>& in) {
        return weigh(t, nc::matmul(t, in[0], in[1]), 0);
      },
      {a, b}, {true, true});
  CHECK(res.checked == 200);
  CHECK(res.max_rel_err <= kTol);

  res = gradcheck(
      [](Tape<double>* t, std::vector<Tensor<double>>& in) {
        return weigh(t, nc::matmul_nt(t, in[0], in[1]), 1);
      },
      {a, b}, {true, true});
  CHECK(res.max_rel_err <= kTol);
}

TEST_CASE("gradcheck: elementwise ops") {
  nc::Rng rng(2);
  auto a = random_tensor({10, 10}, rng);
  auto b = random_tensor({10, 10}, rng);
  auto row = random_tensor({10}, rng);

  auto res = gradcheck(
      [](Tape<double>* t, std::vector<Tensor<double>>& in) {
        auto x = nc::add(t, in[0], in[1]);
        x = nc::sub(t, x, in[1]);
        x = nc::mul(t, x, in[1]);
        x = nc::scale(t, x, 0.7);
        return weigh(t, x, 2);
      },
      {a, b}, {true, true});
  CHECK(res.max_rel_err <= kTol);

  res = gradcheck(
      [](Tape<double>* t, std::vector<Tensor<double>>& in) {
        return weigh(t, nc::add_rowvec(t, in[0], in[1]), 3);
      },
      {a, row}, {true, true});
  CHECK(res.max_rel_err <= kTol);
}

TEST_CASE("gradcheck: gelu and tanh") {
  nc::Rng rng(3);
  auto x = random_tensor({10, 10}, rng);
  auto res = gradcheck(
      [](Tape<double>* t, std::vector<Tensor<double>>& in) { return weigh(t, nc::gelu(t, in[0]), 4); },
      {x}, {true});
  CHECK(res.max_rel_err <= kTol);
  res = gradcheck(
      [](Tape<double>* t, std::vector<Tensor<double>>& in) { return weigh(t, nc::tanh_op(t, in[0]), 5); },
      {x}, {true});
  CHECK(res.max_rel_err <= kTol);
}

TEST_CASE("gradcheck: layer_norm") {
  nc::Rng rng(4);
  auto x = random_tensor({10, 10}, rng);
  auto g = random_tensor({10}, rng, 0.5);
  auto b = random_tensor({10}, rng, 0.5);
  auto res = gradcheck(
      [](Tape<double>* t, std::vector<Tensor<double>>& in) {
        return weigh(t, nc::layer_norm(t, in[0], in[1], in[2]), 6);
      },
      {x, g, b}, {true, true, true});
  CHECK(res.max_rel_err <= kTol);
}

TEST_CASE("gradcheck: softmax") {
  nc::Rng rng(5);
  auto x = random_tensor({10, 10}, rng);
  auto res = gradcheck(
      [](Tape<double>* t, std::vector<Tensor<double>>& in) { return weigh(t, nc::softmax(t, in[0]), 7); },
      {x}, {true});
  CHECK(res.max_rel_err <= kTol);
}

TEST_CASE("gradcheck: gather, slice, concat") {
  nc::Rng rng(6);
  auto x = random_tensor({10, 10}, rng);
  auto y = random_tensor({5, 10}, rng);
  auto res = gradcheck(
      [](Tape<double>* t, std::vector<Tensor<double>>& in) {
        auto g = nc::gather_rows(t, in[0], {0, 3, 3, 9});
        auto s = nc::slice_rows(t, in[0], 2, 6);
        auto c = nc::slice_cols(t, in[1], 1, 8);
        auto cat = nc::concat_rows(t, {g, s, in[1]});
        auto cat2 = nc::concat_cols(t, {nc::slice_cols(t, cat, 0, 3), nc::slice_cols(t, cat, 3, 10)});
        return nc::add(t, weigh(t, cat2, 8), weigh(t, c, 9));
      },
      {x, y}, {true, true});
  CHECK(res.max_rel_err <= kTol);
}

TEST_CASE("gradcheck: losses") {
  nc::Rng rng(7);
  auto pred = random_tensor({10, 10}, rng);
  auto tgt = random_tensor({10, 10}, rng);
  // keep |pred - tgt| away from the L1 kink at the FD step size
  for (size_t i = 0; i < pred.numel(); ++i)
    if (std::abs(pred.data()[i] - tgt.data()[i]) < 1e-3) pred.data()[i] += 0.01;

  auto res = gradcheck(
      [&](Tape<double>* t, std::vector<Tensor<double>>& in) { return nc::mse_loss(t, in[0], tgt); },
      {pred}, {true});
  CHECK(res.max_rel_err <= kTol);

  res = gradcheck(
      [&](Tape<double>* t, std::vector<Tensor<double>>& in) { return nc::l1_loss(t, in[0], tgt); },
      {pred}, {true});
  CHECK(res.max_rel_err <= kTol);

  std::vector<int> targets{1, 4, 0, 7, 2, 2, 9, 5, 3, 8};
  res = gradcheck(
      [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
        return nc::cross_entropy_sum(t, in[0], targets);
      },
      {pred}, {true});
  CHECK(res.max_rel_err <= kTol);
}

TEST_CASE("gradcheck: multi_head_attention") {
  nc::Rng rng(8);
  auto q = random_tensor({6, 8}, rng);
  auto kv = random_tensor({5, 8}, rng);
  std::vector<Tensor<double>> weights;
  for (int i = 0; i < 4; ++i) {
    weights.push_back(random_tensor({8, 8}, rng, 0.3));  // wq wk wv wo
    weights.push_back(random_tensor({8}, rng, 0.1));     // biases
  }
  std::vector<Tensor<double>> inputs{q, kv};
  for (auto& w : weights) inputs.push_back(w);
  auto res = gradcheck(
      [](Tape<double>* t, std::vector<Tensor<double>>& in) {
        return weigh(t,
                     nc::multi_head_attention(t, in[0], in[1], in[1], in[2], in[3], in[4], in[5], in[6],
                                              in[7], in[8], in[9], 2),
                     10);
      },
      inputs, std::vector<bool>(inputs.size(), true));
  CHECK(res.checked > 100);
  CHECK(res.max_rel_err <= kTol);
}

TEST_CASE("gradcheck: full transformer block") {
  nc::Rng rng(9);
  nc::ParamStore<double> store;
  auto block = nc::TransformerBlock<double>::create(store, "blk", 8, 2, 2, rng);
  auto x = random_tensor({5, 8}, rng);
  auto mask = nc::causal_mask<double>(5);

  // check input gradient plus a couple of parameter gradients via FD
  x.ensure_grad();
  nc::Tape<double> tape;
  auto loss = weigh(&tape, block.forward(&tape, x, mask), 11);
  tape.backward(loss);

  auto eval = [&]() {
    return weigh(nullptr, block.forward(nullptr, x, mask), 11).item();
  };
  double max_err = 0.0;
  const double eps = 1e-5;
  for (size_t j = 0; j < x.numel(); ++j) {
    const double saved = x.data()[j];
    x.data()[j] = saved + eps;
    const double fp = eval();
    x.data()[j] = saved - eps;
    const double fm = eval();
    x.data()[j] = saved;
    const double fd = (fp - fm) / (2 * eps);
    const double an = x.grad()[j];
    max_err = std::max(max_err, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4}));
  }
  for (auto& pname : {"blk/attn/wq", "blk/mlp/fc1/w", "blk/ln1/g"}) {
    auto p = store.find(pname);
    REQUIRE(p);
    for (size_t j = 0; j < std::min<size_t>(p->numel(), 8); ++j) {
      const double saved = p->value.data()[j];
      p->value.data()[j] = saved + eps;
      const double fp = eval();
      p->value.data()[j] = saved - eps;
      const double fm = eval();
      p->value.data()[j] = saved;
      const double fd = (fp - fm) / (2 * eps);
      const double an = p->value.grad()[j];
      max_err = std::max(max_err, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4}));
    }
  }
  CHECK(max_err <= kTol);
}

TEST_CASE("fused attention matches the composite op in values and gradients") {
  nc::Rng rng(77);
  auto q_in = random_tensor({7, 12}, rng);
  auto kv_in = random_tensor({5, 12}, rng);
  std::vector<Tensor<double>> w;
  for (int i = 0; i < 4; ++i) {
    w.push_back(random_tensor({12, 12}, rng, 0.3));
    w.push_back(random_tensor({12}, rng, 0.1));
  }
  Tensor<double> mask(Shape{7, 5});
  for (int r = 0; r < 7; ++r) mask.data()[r * 5 + (r % 5)] = -1e9;

  auto run = [&](bool fused) {
    std::vector<Tensor<double>> inputs{q_in, kv_in, w[0], w[1], w[2], w[3], w[4], w[5], w[6], w[7]};
    for (auto& t : inputs) t.ensure_grad();
    nc::Tape<double> tape;
    Tensor<double> out =
        fused ? nc::fused_mha(&tape, inputs[0], inputs[1], inputs[1], inputs[2], inputs[3], inputs[4],
                              inputs[5], inputs[6], inputs[7], inputs[8], inputs[9], 3, mask)
              : nc::multi_head_attention(&tape, inputs[0], inputs[1], inputs[1], inputs[2], inputs[3],
                                         inputs[4], inputs[5], inputs[6], inputs[7], inputs[8],
                                         inputs[9], 3, mask);
    auto loss = weigh(&tape, out, 99);
    tape.backward(loss);
    std::vector<double> flat;
    for (size_t i = 0; i < out.numel(); ++i) flat.push_back(out.data()[i]);
    for (auto& t : inputs)
      for (size_t i = 0; i < t.numel(); ++i) flat.push_back(t.grad()[i]);
    return flat;
  };

  auto a = run(false), b = run(true);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
}

TEST_CASE("softmax of zeros is uniform and rows sum to one") {
  auto x = Tensor<float>(Shape{1, 4});
  auto y = nc::softmax<float>(nullptr, x);
  for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == doctest::Approx(0.25).epsilon(1e-7));

  nc::Rng rng(10);
  Tensor<float> r(Shape{32, 17});
  for (size_t i = 0; i < r.numel(); ++i) r.data()[i] = static_cast<float>(rng.gauss(0, 3));
  auto s = nc::softmax<float>(nullptr, r);
  for (int row = 0; row < 32; ++row) {
    double total = 0;
    for (int c = 0; c < 17; ++c) total += s.data()[row * 17 + c];
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("attention with a single key/value position returns its value projection") {
  nc::Rng rng(11);
  nc::ParamStore<double> store;
  auto attn = nc::Attention<double>::create(store, "a", 8, 8, 8, 8, 2, rng);
  auto q = random_tensor({3, 8}, rng);
  auto kv = random_tensor({1, 8}, rng);

  auto out = attn.forward(nullptr, q, kv, kv);
  // expected: wo @ (wv kv + bv) + bo, independent of the query content
  auto v = nc::add_rowvec<double>(nullptr, nc::matmul<double>(nullptr, kv, attn.wv->value), attn.bv->value);
  auto expect = nc::add_rowvec<double>(nullptr, nc::matmul<double>(nullptr, v, attn.wo->value), attn.bo->value);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 8; ++c)
      CHECK(out.data()[r * 8 + c] == doctest::Approx(expect.data()[c]).epsilon(1e-10));
}

TEST_CASE("shape mismatch errors name both shapes") {
  Tensor<float> a(Shape{2, 3}), b(Shape{4, 5});
  try {
    nc::matmul<float>(nullptr, a, b);
    FAIL("expected exception");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
}

TEST_CASE("verification mode rejects non-finite intermediates") {
  nc::set_check_finite(true);
  Tensor<float> a(Shape{1, 2});
  a.data()[0] = 1e30f;
  a.data()[1] = 1e30f;
  Tensor<float> b = a;
  CHECK_THROWS_AS((void)nc::mul<float>(nullptr, a, b), std::runtime_error);
  nc::set_check_finite(false);
}

TEST_CASE("adamw: zero gradient and zero weight decay leave parameter unchanged") {
  nc::Rng rng(12);
  nc::ParamStore<float> store;
  auto p = store.add("p", {4}, nc::Init::Normal1, rng);
  std::vector<float> before(p->value.data(), p->value.data() + 4);
  nc::AdamW<float>::Config cfg;
  cfg.weight_decay = 0.0f;
  nc::AdamW<float> opt(store, cfg);
  store.zero_grads();
  opt.step();
  for (int i = 0; i < 4; ++i) CHECK(p->value.data()[i] == before[i]);
}

TEST_CASE("adamw: matches an independent scalar reference over three steps") {
  // hand-rolled scalar AdamW, written directly from the update rule
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01;
  const double grads[3] = {0.5, -1.25, 2.0};
  double ref = 0.7, m = 0, v = 0;
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    ref -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * ref);
  }

  nc::Rng rng(13);
  nc::ParamStore<double> store;
  auto p = store.add("w", {1}, nc::Init::Zeros, rng);
  p->value.data()[0] = 0.7;
  nc::AdamW<double>::Config cfg;
  cfg.lr = lr;
  nc::AdamW<double> opt(store, cfg);
  for (double g : grads) {
    store.zero_grads();
    p->value.grad()[0] = g;
    opt.step();
  }
  CHECK(p->value.data()[0] == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("adamw: frozen parameter is bit-identical after many steps") {
  nc::Rng rng(14);
  nc::ParamStore<float> store;
  auto frozen = store.add("codebook", {16, 8}, nc::Init::Normal1, rng);
  auto live = store.add("live", {4}, nc::Init::Normal1, rng);
  frozen->frozen = true;
  std::vector<float> before(frozen->value.data(), frozen->value.data() + frozen->numel());

  nc::AdamW<float> opt(store, {});
  for (int step = 0; step < 1000; ++step) {
    store.zero_grads();
    for (size_t i = 0; i < frozen->numel(); ++i) frozen->value.grad()[i] = 0.3f;
    live->value.grad()[0] = 0.1f;
    opt.step();
  }
  CHECK(std::memcmp(before.data(), frozen->value.data(), before.size() * sizeof(float)) == 0);
  CHECK(live->value.data()[0] != doctest::Approx(0.0));
}

TEST_CASE("straight_through copies values forward and gradients backward") {
  nc::Rng rng(15);
  auto raw = random_tensor({4, 8}, rng);
  auto q = random_tensor({4, 8}, rng);
  raw.ensure_grad();
  nc::Tape<double> tape;
  auto out = nc::straight_through(&tape, raw, q);
  for (size_t i = 0; i < q.numel(); ++i) CHECK(out.data()[i] == q.data()[i]);
  auto loss = weigh(&tape, out, 16);
  tape.backward(loss);
  // gradient w.r.t. raw equals gradient w.r.t. the quantized output exactly
  nc::Rng wrng(0x9a1fULL + 16);
  for (size_t i = 0; i < raw.numel(); ++i) CHECK(raw.grad()[i] == wrng.gauss());
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  nc::Rng rng(16);
  nc::ParamStore<float> store;
  store.add("a/w", {3, 5}, nc::Init::Normal1, rng);
  store.add("a/b", {5}, nc::Init::TruncNormal02, rng);
  store.add("deep/nested/ln/g", {7}, nc::Init::Ones, rng);

  nc::Checkpoint ck;
  ck.put_store(store);
  ck.put_i64("meta/stage", 2);
  const std::string path = (std::filesystem::temp_directory_path() / "lact_ckpt_test.bin").string();
  ck.save(path);

  auto loaded = nc::Checkpoint::load(path);
  CHECK(loaded.content_hash() == ck.content_hash());
  CHECK(loaded.find("meta/stage")->as_i64() == 2);

  nc::Rng rng2(99);
  nc::ParamStore<float> store2;
  store2.add("a/w", {3, 5}, nc::Init::Normal1, rng2);
  store2.add("a/b", {5}, nc::Init::Normal1, rng2);
  store2.add("deep/nested/ln/g", {7}, nc::Init::Zeros, rng2);
  loaded.load_store(store2);
  CHECK(store2.content_hash() == store.content_hash());
  std::filesystem::remove(path);
}

TEST_CASE("training steps are deterministic given a seed") {
  auto run = [](uint64_t seed) {
    nc::Rng rng(seed);
    nc::ParamStore<float> store;
    auto lin = nc::Linear<float>::create(store, "lin", 8, 8, rng);
    auto block = nc::TransformerBlock<float>::create(store, "blk", 8, 2, 2, rng);
    nc::AdamW<float> opt(store, {});
    std::vector<float> trace;
    nc::Rng drng(seed ^ 0x1234);
    for (int step = 0; step < 20; ++step) {
      Tensor<float> x(Shape{6, 8});
      for (size_t i = 0; i < x.numel(); ++i) x.data()[i] = static_cast<float>(drng.gauss());
      Tensor<float> tgt(Shape{6, 8});
      store.zero_grads();
      nc::Tape<float> tape;
      auto h = block.forward(&tape, lin.forward(&tape, x));
      auto loss = nc::mse_loss(&tape, h, tgt);
      tape.backward(loss);
      opt.step();
      trace.push_back(loss.item());
    }
    return trace;
  };
  auto t1 = run(7), t2 = run(7), t3 = run(8);
  CHECK(t1 == t2);        // bit-identical loss traces
  CHECK(t1 != t3);        // and seed-sensitive
  CHECK(t1.back() < t1.front());
}
