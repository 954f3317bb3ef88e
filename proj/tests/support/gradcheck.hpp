#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lact/numcore/ops.hpp"

namespace lact::testing {

// Central finite-difference gradient oracle, run in 64-bit. The callable
// rebuilds the graph from the given inputs and returns a scalar loss; inputs
// flagged differentiable get their analytic gradients compared element by
// element against (f(x+eps) - f(x-eps)) / (2 eps).
struct GradCheckResult {
  double max_rel_err = 0.0;
  int checked = 0;
};

using LossFn = std::function<nc::Tensor<double>(nc::Tape<double>*, std::vector<nc::Tensor<double>>&)>;

inline GradCheckResult gradcheck(const LossFn& f, std::vector<nc::Tensor<double>> inputs,
                                 const std::vector<bool>& diff, double eps = 1e-5) {
  for (size_t i = 0; i < inputs.size(); ++i)
    if (diff[i]) inputs[i].ensure_grad();

  nc::Tape<double> tape;
  nc::Tensor<double> loss = f(&tape, inputs);
  tape.backward(loss);

  GradCheckResult res;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (!diff[i]) continue;
    for (size_t j = 0; j < inputs[i].numel(); ++j) {
      const double saved = inputs[i].data()[j];
      inputs[i].data()[j] = saved + eps;
      std::vector<nc::Tensor<double>> noderiv = inputs;  // shared storage, no grads needed
      const double fp = f(nullptr, noderiv).item();
      inputs[i].data()[j] = saved - eps;
      const double fm = f(nullptr, noderiv).item();
      inputs[i].data()[j] = saved;

      const double fd = (fp - fm) / (2.0 * eps);
      const double an = inputs[i].grad()[j];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
      res.max_rel_err = std::max(res.max_rel_err, std::abs(fd - an) / denom);
      ++res.checked;
    }
  }
  return res;
}

inline nc::Tensor<double> random_tensor(nc::Shape shape, nc::Rng& rng, double scale = 1.0) {
  nc::Tensor<double> t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.gauss(0.0, scale);
  return t;
}

// Weighted sum against fixed random coefficients: turns any output tensor
// into a scalar loss with informative gradients everywhere.
inline nc::Tensor<double> weigh(nc::Tape<double>* tape, nc::Tensor<double> out, uint64_t salt) {
  nc::Rng rng(0x9a1fULL + salt);
  nc::Tensor<double> w(out.shape());
  for (size_t i = 0; i < w.numel(); ++i) w.data()[i] = rng.gauss();
  return nc::sum(tape, nc::mul(tape, std::move(out), w));
}

}  // namespace lact::testing
