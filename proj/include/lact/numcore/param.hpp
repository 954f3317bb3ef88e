#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lact/numcore/rng.hpp"
#include "lact/numcore/tensor.hpp"

namespace lact::nc {

// Named trainable array. The gradient buffer is persistent; training steps
// zero it, run a graph, then let the optimizer consume it. Frozen parameters
// keep their values bit-identical for the rest of the run. ema_managed marks
// parameters whose values are written directly (codebooks) and must never be
// touched by a gradient optimizer.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool frozen = false;
  bool ema_managed = false;

  size_t numel() const { return value.numel(); }

  // detach=true also drops the gradient buffer so graphs skip this parameter
  // entirely (frozen-trunk training).
  void freeze(bool detach = false) {
    frozen = true;
    if (detach) value.attach_grad(nullptr);
  }
};

enum class Init { Zeros, Ones, TruncNormal02, Normal1 };

// Ordered registry; registration order is the canonical serialization and
// update order, which keeps runs reproducible.
template <class T>
class ParamStore {
 public:
  std::shared_ptr<Parameter<T>> add(const std::string& name, Shape shape, Init init, Rng& rng) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    auto p = std::make_shared<Parameter<T>>();
    p->name = name;
    p->value = Tensor<T>(std::move(shape));
    switch (init) {
      case Init::Zeros:
        break;
      case Init::Ones:
        for (size_t i = 0; i < p->value.numel(); ++i) p->value.data()[i] = T{1};
        break;
      case Init::TruncNormal02:
        for (size_t i = 0; i < p->value.numel(); ++i)
          p->value.data()[i] = static_cast<T>(rng.trunc_gauss(0.02));
        break;
      case Init::Normal1:
        for (size_t i = 0; i < p->value.numel(); ++i) p->value.data()[i] = static_cast<T>(rng.gauss());
        break;
    }
    p->value.ensure_grad();
    index_[name] = params_.size();
    params_.push_back(p);
    return p;
  }

  std::shared_ptr<Parameter<T>> find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second];
  }

  const std::vector<std::shared_ptr<Parameter<T>>>& all() const { return params_; }

  void zero_grads() {
    for (auto& p : params_)
      if (p->value.has_grad()) p->value.zero_grad();
  }

  size_t total_count() const {
    size_t n = 0;
    for (auto& p : params_) n += p->numel();
    return n;
  }

  // Sum of per-worker gradient buffers into the canonical buffers, in worker
  // order (fixed reduction order for reproducibility).
  void reduce_grads(const std::vector<std::vector<std::vector<T>>>& worker_grads) {
    for (size_t w = 0; w < worker_grads.size(); ++w) {
      for (size_t pi = 0; pi < params_.size(); ++pi) {
        T* dst = params_[pi]->value.grad();
        const auto& src = worker_grads[w][pi];
        for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
      }
    }
  }

  uint64_t content_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (auto& p : params_) {
      h = fnv1a(p->name, h);
      h = fnv1a(p->value.data(), p->numel() * sizeof(T), h);
    }
    return h;
  }

 private:
  std::vector<std::shared_ptr<Parameter<T>>> params_;
  std::map<std::string, size_t> index_;
};

}  // namespace lact::nc
