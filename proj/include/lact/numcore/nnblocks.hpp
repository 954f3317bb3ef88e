#pragma once

#include <string>

#include "lact/numcore/ops.hpp"
#include "lact/numcore/param.hpp"

namespace lact::nc {

template <class T>
struct Linear {
  std::shared_ptr<Parameter<T>> w, b;

  static Linear create(ParamStore<T>& store, const std::string& name, int in, int out, Rng& rng) {
    Linear l;
    l.w = store.add(name + "/w", {in, out}, Init::TruncNormal02, rng);
    l.b = store.add(name + "/b", {out}, Init::Zeros, rng);
    return l;
  }

  Tensor<T> forward(Tape<T>* tape, Tensor<T> x) const {
    return add_rowvec(tape, matmul(tape, std::move(x), w->value), b->value);
  }

  int out_dim() const { return w->value.dim(1); }
};

template <class T>
struct LayerNormLayer {
  std::shared_ptr<Parameter<T>> g, b;

  static LayerNormLayer create(ParamStore<T>& store, const std::string& name, int dim, Rng& rng) {
    LayerNormLayer ln;
    ln.g = store.add(name + "/g", {dim}, Init::Ones, rng);
    ln.b = store.add(name + "/b", {dim}, Init::Zeros, rng);
    return ln;
  }

  Tensor<T> forward(Tape<T>* tape, Tensor<T> x) const {
    return layer_norm(tape, std::move(x), g->value, b->value);
  }
};

template <class T>
struct Attention {
  std::shared_ptr<Parameter<T>> wq, bq, wk, bk, wv, bv, wo, bo;
  int n_heads = 1;

  // d_q/d_kv are input widths; inner = n_heads * head_dim; d_out is the
  // output width of the final projection.
  static Attention create(ParamStore<T>& store, const std::string& name, int d_q, int d_kv, int inner,
                          int d_out, int n_heads, Rng& rng) {
    Attention a;
    a.n_heads = n_heads;
    a.wq = store.add(name + "/wq", {d_q, inner}, Init::TruncNormal02, rng);
    a.bq = store.add(name + "/bq", {inner}, Init::Zeros, rng);
    a.wk = store.add(name + "/wk", {d_kv, inner}, Init::TruncNormal02, rng);
    a.bk = store.add(name + "/bk", {inner}, Init::Zeros, rng);
    a.wv = store.add(name + "/wv", {d_kv, inner}, Init::TruncNormal02, rng);
    a.bv = store.add(name + "/bv", {inner}, Init::Zeros, rng);
    a.wo = store.add(name + "/wo", {inner, d_out}, Init::TruncNormal02, rng);
    a.bo = store.add(name + "/bo", {d_out}, Init::Zeros, rng);
    return a;
  }

  Tensor<T> forward(Tape<T>* tape, Tensor<T> q, Tensor<T> k, Tensor<T> v,
                    const Tensor<T>& mask = Tensor<T>{}) const {
    return fused_mha(tape, std::move(q), std::move(k), std::move(v), wq->value, bq->value, wk->value,
                     bk->value, wv->value, bv->value, wo->value, bo->value, n_heads, mask);
  }
};

template <class T>
struct Mlp {
  Linear<T> fc1, fc2;

  static Mlp create(ParamStore<T>& store, const std::string& name, int dim, int hidden, Rng& rng) {
    Mlp m;
    m.fc1 = Linear<T>::create(store, name + "/fc1", dim, hidden, rng);
    m.fc2 = Linear<T>::create(store, name + "/fc2", hidden, dim, rng);
    return m;
  }

  Tensor<T> forward(Tape<T>* tape, Tensor<T> x) const {
    return fc2.forward(tape, gelu(tape, fc1.forward(tape, std::move(x))));
  }
};

// Pre-LN self-attention transformer block.
template <class T>
struct TransformerBlock {
  LayerNormLayer<T> ln1, ln2;
  Attention<T> attn;
  Mlp<T> mlp;

  static TransformerBlock create(ParamStore<T>& store, const std::string& name, int dim, int n_heads,
                                 int mlp_ratio, Rng& rng) {
    TransformerBlock b;
    b.ln1 = LayerNormLayer<T>::create(store, name + "/ln1", dim, rng);
    b.attn = Attention<T>::create(store, name + "/attn", dim, dim, dim, dim, n_heads, rng);
    b.ln2 = LayerNormLayer<T>::create(store, name + "/ln2", dim, rng);
    b.mlp = Mlp<T>::create(store, name + "/mlp", dim, dim * mlp_ratio, rng);
    return b;
  }

  Tensor<T> forward(Tape<T>* tape, Tensor<T> x, const Tensor<T>& mask = Tensor<T>{}) const {
    Tensor<T> h = ln1.forward(tape, x);
    x = add(tape, x, attn.forward(tape, h, h, h, mask));
    return add(tape, x, mlp.forward(tape, ln2.forward(tape, x)));
  }
};

}  // namespace lact::nc
