#pragma once

#include <cmath>
#include <cstdio>
#include <set>
#include <vector>

#include "lact/numcore/param.hpp"

namespace lact::nc {

// Decoupled weight decay Adam with bias correction. Frozen parameters are
// skipped entirely: their gradients are discarded (warned once per name) and
// their values never move. EMA-managed parameters are not optimizer state.
template <class T>
class AdamW {
 public:
  struct Config {
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T weight_decay = T(0.01);
  };

  AdamW(ParamStore<T>& store, Config cfg) : store_(&store), cfg_(cfg) {
    for (auto& p : store.all()) {
      slots_.push_back(Slot{});
      if (!p->frozen && !p->ema_managed) {
        slots_.back().m.assign(p->numel(), T{0});
        slots_.back().v.assign(p->numel(), T{0});
      }
    }
  }

  void set_lr(T lr) { cfg_.lr = lr; }
  T lr() const { return cfg_.lr; }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), t_);
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), t_);
    const auto& params = store_->all();
    for (size_t pi = 0; pi < params.size(); ++pi) {
      auto& p = *params[pi];
      if (p.ema_managed) continue;
      if (p.frozen) {
        warn_frozen_grad(p);
        continue;
      }
      auto& s = slots_[pi];
      T* val = p.value.data();
      const T* g = p.value.grad();
      for (size_t i = 0; i < p.numel(); ++i) {
        s.m[i] = cfg_.beta1 * s.m[i] + (T{1} - cfg_.beta1) * g[i];
        s.v[i] = cfg_.beta2 * s.v[i] + (T{1} - cfg_.beta2) * g[i] * g[i];
        const T mhat = static_cast<T>(s.m[i] / bc1);
        const T vhat = static_cast<T>(s.v[i] / bc2);
        val[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * val[i]);
      }
    }
  }

 private:
  struct Slot {
    std::vector<T> m, v;
  };

  void warn_frozen_grad(const Parameter<T>& p) {
    if (!p.value.has_grad()) return;
    const T* g = p.value.grad();
    bool nonzero = false;
    for (size_t i = 0; i < p.numel() && !nonzero; ++i) nonzero = g[i] != T{0};
    if (nonzero && !warned_.count(p.name)) {
      warned_.insert(p.name);
      std::fprintf(stderr, "[adamw] discarding gradient for frozen parameter '%s'\n", p.name.c_str());
    }
  }

  ParamStore<T>* store_;
  Config cfg_;
  std::vector<Slot> slots_;
  int64_t t_ = 0;
  std::set<std::string> warned_;
};

}  // namespace lact::nc
