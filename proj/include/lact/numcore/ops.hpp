#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "lact/numcore/tensor.hpp"

namespace lact::nc {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;

template <class T>
inline ECMap<T> mat_view(const Tensor<T>& t) {
  return ECMap<T>(t.data(), t.dim(0), t.dim(1));
}
template <class T>
inline EMap<T> mat_view_mut(Tensor<T>& t) {
  return EMap<T>(t.data(), t.dim(0), t.dim(1));
}
template <class T>
inline EMap<T> grad_view(Tensor<T>& t) {
  return EMap<T>(t.grad(), t.dim(0), t.dim(1));
}

template <class T>
inline void require_2d(const char* op, const Tensor<T>& t) {
  if (t.shape().size() != 2)
    throw std::invalid_argument(std::string(op) + ": expected a 2-d tensor, got " + shape_str(t.shape()));
}

template <class T>
inline Tensor<T> make_out(Tape<T>* tape, Shape shape, bool need_grad) {
  Tensor<T> out(std::move(shape));
  if (tape && need_grad) out.ensure_grad();
  return out;
}

// ---- matmul ---------------------------------------------------------------

// C = A @ B, A:[m,k] B:[k,n]
template <class T>
Tensor<T> matmul(Tape<T>* tape, Tensor<T> a, Tensor<T> b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  if (a.dim(1) != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
  const bool need = a.has_grad() || b.has_grad();
  Tensor<T> out = make_out(tape, {a.dim(0), b.dim(1)}, need);
  mat_view_mut(out).noalias() = mat_view(a) * mat_view(b);
  check_output("matmul", out);
  if (tape && need) {
    tape->record([a, b, out]() mutable {
      auto dc = grad_view(out);
      if (a.has_grad()) grad_view(a).noalias() += dc * mat_view(b).transpose();
      if (b.has_grad()) grad_view(b).noalias() += mat_view(a).transpose() * dc;
    });
  }
  return out;
}

// C = A @ B^T, A:[m,k] B:[n,k] -> [m,n]
template <class T>
Tensor<T> matmul_nt(Tape<T>* tape, Tensor<T> a, Tensor<T> b) {
  require_2d("matmul_nt", a);
  require_2d("matmul_nt", b);
  if (a.dim(1) != b.dim(1)) shape_error("matmul_nt", a.shape(), b.shape());
  const bool need = a.has_grad() || b.has_grad();
  Tensor<T> out = make_out(tape, {a.dim(0), b.dim(0)}, need);
  mat_view_mut(out).noalias() = mat_view(a) * mat_view(b).transpose();
  check_output("matmul_nt", out);
  if (tape && need) {
    tape->record([a, b, out]() mutable {
      auto dc = grad_view(out);
      if (a.has_grad()) grad_view(a).noalias() += dc * mat_view(b);
      if (b.has_grad()) grad_view(b).noalias() += dc.transpose() * mat_view(a);
    });
  }
  return out;
}

// ---- elementwise ----------------------------------------------------------

template <class T>
Tensor<T> add(Tape<T>* tape, Tensor<T> a, Tensor<T> b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  const bool need = a.has_grad() || b.has_grad();
  Tensor<T> out = make_out(tape, a.shape(), need);
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  check_output("add", out);
  if (tape && need) {
    tape->record([a, b, out]() mutable {
      const size_t n2 = out.numel();
      if (a.has_grad())
        for (size_t i = 0; i < n2; ++i) a.grad()[i] += out.grad()[i];
      if (b.has_grad())
        for (size_t i = 0; i < n2; ++i) b.grad()[i] += out.grad()[i];
    });
  }
  return out;
}

// a:[m,n] + row:[n] broadcast over rows (bias add).
template <class T>
Tensor<T> add_rowvec(Tape<T>* tape, Tensor<T> a, Tensor<T> row) {
  require_2d("add_rowvec", a);
  if (row.numel() != static_cast<size_t>(a.dim(1))) shape_error("add_rowvec", a.shape(), row.shape());
  const bool need = a.has_grad() || row.has_grad();
  Tensor<T> out = make_out(tape, a.shape(), need);
  const int m = a.dim(0), n = a.dim(1);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out.data()[r * n + c] = a.data()[r * n + c] + row.data()[c];
  check_output("add_rowvec", out);
  if (tape && need) {
    tape->record([a, row, out, m, n]() mutable {
      if (a.has_grad())
        for (size_t i = 0; i < out.numel(); ++i) a.grad()[i] += out.grad()[i];
      if (row.has_grad())
        for (int r = 0; r < m; ++r)
          for (int c = 0; c < n; ++c) row.grad()[c] += out.grad()[r * n + c];
    });
  }
  return out;
}

template <class T>
Tensor<T> sub(Tape<T>* tape, Tensor<T> a, Tensor<T> b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  const bool need = a.has_grad() || b.has_grad();
  Tensor<T> out = make_out(tape, a.shape(), need);
  for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  check_output("sub", out);
  if (tape && need) {
    tape->record([a, b, out]() mutable {
      if (a.has_grad())
        for (size_t i = 0; i < out.numel(); ++i) a.grad()[i] += out.grad()[i];
      if (b.has_grad())
        for (size_t i = 0; i < out.numel(); ++i) b.grad()[i] -= out.grad()[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(Tape<T>* tape, Tensor<T> a, Tensor<T> b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  const bool need = a.has_grad() || b.has_grad();
  Tensor<T> out = make_out(tape, a.shape(), need);
  for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  check_output("mul", out);
  if (tape && need) {
    tape->record([a, b, out]() mutable {
      if (a.has_grad())
        for (size_t i = 0; i < out.numel(); ++i) a.grad()[i] += out.grad()[i] * b.data()[i];
      if (b.has_grad())
        for (size_t i = 0; i < out.numel(); ++i) b.grad()[i] += out.grad()[i] * a.data()[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(Tape<T>* tape, Tensor<T> a, T c) {
  const bool need = a.has_grad();
  Tensor<T> out = make_out(tape, a.shape(), need);
  for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * c;
  check_output("scale", out);
  if (tape && need) {
    tape->record([a, out, c]() mutable {
      for (size_t i = 0; i < out.numel(); ++i) a.grad()[i] += out.grad()[i] * c;
    });
  }
  return out;
}

template <class T>
Tensor<T> gelu(Tape<T>* tape, Tensor<T> x) {
  const bool need = x.has_grad();
  Tensor<T> out = make_out(tape, x.shape(), need);
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (size_t i = 0; i < x.numel(); ++i) {
    const double v = static_cast<double>(x.data()[i]);
    out.data()[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  check_output("gelu", out);
  if (tape && need) {
    tape->record([x, out]() mutable {
      constexpr double inv_sqrt2pi = 0.3989422804014326779;
      for (size_t i = 0; i < out.numel(); ++i) {
        const double v = static_cast<double>(x.data()[i]);
        const double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865475244));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        x.grad()[i] += out.grad()[i] * static_cast<T>(cdf + v * pdf);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> tanh_op(Tape<T>* tape, Tensor<T> x) {
  const bool need = x.has_grad();
  Tensor<T> out = make_out(tape, x.shape(), need);
  for (size_t i = 0; i < x.numel(); ++i) out.data()[i] = std::tanh(x.data()[i]);
  check_output("tanh", out);
  if (tape && need) {
    tape->record([x, out]() mutable {
      for (size_t i = 0; i < out.numel(); ++i) {
        const T y = out.data()[i];
        x.grad()[i] += out.grad()[i] * (T{1} - y * y);
      }
    });
  }
  return out;
}

// ---- normalization / softmax ----------------------------------------------

template <class T>
Tensor<T> layer_norm(Tape<T>* tape, Tensor<T> x, Tensor<T> gain, Tensor<T> bias, T eps = T(1e-5)) {
  require_2d("layer_norm", x);
  if (gain.numel() != static_cast<size_t>(x.dim(1))) shape_error("layer_norm", x.shape(), gain.shape());
  if (bias.numel() != static_cast<size_t>(x.dim(1))) shape_error("layer_norm", x.shape(), bias.shape());
  const bool need = x.has_grad() || gain.has_grad() || bias.has_grad();
  const int m = x.dim(0), n = x.dim(1);
  Tensor<T> out = make_out(tape, x.shape(), need);
  // normalized values are re-derivable but cached for the backward pass
  auto xhat = std::make_shared<Buf<T>>(x.numel());
  auto inv_std = std::make_shared<Buf<T>>(static_cast<size_t>(m));
  for (int r = 0; r < m; ++r) {
    const T* xr = x.data() + r * n;
    T mu = 0;
    for (int c = 0; c < n; ++c) mu += xr[c];
    mu /= static_cast<T>(n);
    T var = 0;
    for (int c = 0; c < n; ++c) {
      const T d = xr[c] - mu;
      var += d * d;
    }
    var /= static_cast<T>(n);
    const T istd = T{1} / std::sqrt(var + eps);
    inv_std->data()[r] = istd;
    for (int c = 0; c < n; ++c) {
      const T h = (xr[c] - mu) * istd;
      xhat->data()[r * n + c] = h;
      out.data()[r * n + c] = h * gain.data()[c] + bias.data()[c];
    }
  }
  check_output("layer_norm", out);
  if (tape && need) {
    tape->record([x, gain, bias, out, xhat, inv_std, m, n]() mutable {
      for (int r = 0; r < m; ++r) {
        const T* dy = out.grad() + r * n;
        const T* h = xhat->data() + r * n;
        if (gain.has_grad())
          for (int c = 0; c < n; ++c) gain.grad()[c] += dy[c] * h[c];
        if (bias.has_grad())
          for (int c = 0; c < n; ++c) bias.grad()[c] += dy[c];
        if (x.has_grad()) {
          T s1 = 0, s2 = 0;
          for (int c = 0; c < n; ++c) {
            const T g = dy[c] * gain.data()[c];
            s1 += g;
            s2 += g * h[c];
          }
          s1 /= static_cast<T>(n);
          s2 /= static_cast<T>(n);
          const T istd = inv_std->data()[r];
          for (int c = 0; c < n; ++c) {
            const T g = dy[c] * gain.data()[c];
            x.grad()[r * n + c] += istd * (g - s1 - h[c] * s2);
          }
        }
      }
    });
  }
  return out;
}

// Row-wise softmax with max-shift.
template <class T>
Tensor<T> softmax(Tape<T>* tape, Tensor<T> x) {
  require_2d("softmax", x);
  const bool need = x.has_grad();
  const int m = x.dim(0), n = x.dim(1);
  Tensor<T> out = make_out(tape, x.shape(), need);
  for (int r = 0; r < m; ++r) {
    const T* xr = x.data() + r * n;
    T* yr = out.data() + r * n;
    T mx = xr[0];
    for (int c = 1; c < n; ++c) mx = std::max(mx, xr[c]);
    T z = 0;
    for (int c = 0; c < n; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      z += yr[c];
    }
    const T inv = T{1} / z;
    for (int c = 0; c < n; ++c) yr[c] *= inv;
  }
  check_output("softmax", out);
  if (tape && need) {
    tape->record([x, out, m, n]() mutable {
      for (int r = 0; r < m; ++r) {
        const T* y = out.data() + r * n;
        const T* dy = out.grad() + r * n;
        T dot = 0;
        for (int c = 0; c < n; ++c) dot += y[c] * dy[c];
        for (int c = 0; c < n; ++c) x.grad()[r * n + c] += y[c] * (dy[c] - dot);
      }
    });
  }
  return out;
}

// ---- gather / embedding -----------------------------------------------------

// Rows of x selected by index; backward scatter-adds.
template <class T>
Tensor<T> gather_rows(Tape<T>* tape, Tensor<T> x, std::vector<int> ids) {
  require_2d("gather_rows", x);
  const int n = x.dim(1);
  for (int id : ids)
    if (id < 0 || id >= x.dim(0))
      throw std::invalid_argument("gather_rows: index " + std::to_string(id) + " out of range for " +
                                  shape_str(x.shape()));
  const bool need = x.has_grad();
  Tensor<T> out = make_out(tape, {static_cast<int>(ids.size()), n}, need);
  for (size_t r = 0; r < ids.size(); ++r)
    std::copy_n(x.data() + ids[r] * n, n, out.data() + r * n);
  check_output("gather_rows", out);
  if (tape && need) {
    tape->record([x, out, ids = std::move(ids), n]() mutable {
      for (size_t r = 0; r < ids.size(); ++r) {
        T* dst = x.grad() + ids[r] * n;
        const T* src = out.grad() + r * n;
        for (int c = 0; c < n; ++c) dst[c] += src[c];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> embedding_lookup(Tape<T>* tape, Tensor<T> table, const std::vector<int>& ids) {
  return gather_rows(tape, std::move(table), ids);
}

// ---- slicing / concatenation -----------------------------------------------

template <class T>
Tensor<T> slice_rows(Tape<T>* tape, Tensor<T> x, int r0, int r1) {
  require_2d("slice_rows", x);
  if (r0 < 0 || r1 > x.dim(0) || r0 >= r1)
    throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                                ") for " + shape_str(x.shape()));
  const int n = x.dim(1);
  const bool need = x.has_grad();
  Tensor<T> out = make_out(tape, {r1 - r0, n}, need);
  std::copy_n(x.data() + r0 * n, static_cast<size_t>(r1 - r0) * n, out.data());
  if (tape && need) {
    tape->record([x, out, r0, n]() mutable {
      const size_t cnt = out.numel();
      T* dst = x.grad() + r0 * n;
      for (size_t i = 0; i < cnt; ++i) dst[i] += out.grad()[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> slice_cols(Tape<T>* tape, Tensor<T> x, int c0, int c1) {
  require_2d("slice_cols", x);
  if (c0 < 0 || c1 > x.dim(1) || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                                ") for " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1), w = c1 - c0;
  const bool need = x.has_grad();
  Tensor<T> out = make_out(tape, {m, w}, need);
  for (int r = 0; r < m; ++r) std::copy_n(x.data() + r * n + c0, w, out.data() + r * w);
  if (tape && need) {
    tape->record([x, out, c0, m, n, w]() mutable {
      for (int r = 0; r < m; ++r) {
        T* dst = x.grad() + r * n + c0;
        const T* src = out.grad() + r * w;
        for (int c = 0; c < w; ++c) dst[c] += src[c];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> concat_rows(Tape<T>* tape, std::vector<Tensor<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const int n = parts[0].dim(1);
  int m = 0;
  bool need = false;
  for (auto& p : parts) {
    require_2d("concat_rows", p);
    if (p.dim(1) != n) shape_error("concat_rows", parts[0].shape(), p.shape());
    m += p.dim(0);
    need = need || p.has_grad();
  }
  Tensor<T> out = make_out(tape, {m, n}, need);
  size_t off = 0;
  for (auto& p : parts) {
    std::copy_n(p.data(), p.numel(), out.data() + off);
    off += p.numel();
  }
  if (tape && need) {
    tape->record([parts = std::move(parts), out]() mutable {
      size_t off2 = 0;
      for (auto& p : parts) {
        if (p.has_grad())
          for (size_t i = 0; i < p.numel(); ++i) p.grad()[i] += out.grad()[off2 + i];
        off2 += p.numel();
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> concat_cols(Tape<T>* tape, std::vector<Tensor<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int m = parts[0].dim(0);
  int n = 0;
  bool need = false;
  for (auto& p : parts) {
    require_2d("concat_cols", p);
    if (p.dim(0) != m) shape_error("concat_cols", parts[0].shape(), p.shape());
    n += p.dim(1);
    need = need || p.has_grad();
  }
  Tensor<T> out = make_out(tape, {m, n}, need);
  int c0 = 0;
  for (auto& p : parts) {
    const int w = p.dim(1);
    for (int r = 0; r < m; ++r) std::copy_n(p.data() + r * w, w, out.data() + r * n + c0);
    c0 += w;
  }
  if (tape && need) {
    tape->record([parts = std::move(parts), out, m, n]() mutable {
      int cc = 0;
      for (auto& p : parts) {
        const int w = p.dim(1);
        if (p.has_grad())
          for (int r = 0; r < m; ++r) {
            const T* src = out.grad() + r * n + cc;
            T* dst = p.grad() + r * w;
            for (int c = 0; c < w; ++c) dst[c] += src[c];
          }
        cc += w;
      }
    });
  }
  return out;
}

// ---- reductions / losses -----------------------------------------------------

template <class T>
Tensor<T> sum(Tape<T>* tape, Tensor<T> x) {
  const bool need = x.has_grad();
  Tensor<T> out = make_out(tape, {1}, need);
  T s = 0;
  for (size_t i = 0; i < x.numel(); ++i) s += x.data()[i];
  out.data()[0] = s;
  check_output("sum", out);
  if (tape && need) {
    tape->record([x, out]() mutable {
      const T g = out.grad()[0];
      for (size_t i = 0; i < x.numel(); ++i) x.grad()[i] += g;
    });
  }
  return out;
}

template <class T>
Tensor<T> mean(Tape<T>* tape, Tensor<T> x) {
  return scale(tape, sum(tape, x), T{1} / static_cast<T>(x.numel()));
}

// Mean squared error against a constant target.
template <class T>
Tensor<T> mse_loss(Tape<T>* tape, Tensor<T> pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) shape_error("mse_loss", pred.shape(), target.shape());
  const bool need = pred.has_grad();
  Tensor<T> out = make_out(tape, {1}, need);
  const size_t n = pred.numel();
  T s = 0;
  for (size_t i = 0; i < n; ++i) {
    const T d = pred.data()[i] - target.data()[i];
    s += d * d;
  }
  out.data()[0] = s / static_cast<T>(n);
  check_output("mse_loss", out);
  if (tape && need) {
    Tensor<T> tgt = target;
    tape->record([pred, tgt, out, n]() mutable {
      const T g = out.grad()[0] * T{2} / static_cast<T>(n);
      for (size_t i = 0; i < n; ++i) pred.grad()[i] += g * (pred.data()[i] - tgt.data()[i]);
    });
  }
  return out;
}

// Mean absolute error; subgradient 0 at exact zeros.
template <class T>
Tensor<T> l1_loss(Tape<T>* tape, Tensor<T> pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) shape_error("l1_loss", pred.shape(), target.shape());
  const bool need = pred.has_grad();
  Tensor<T> out = make_out(tape, {1}, need);
  const size_t n = pred.numel();
  T s = 0;
  for (size_t i = 0; i < n; ++i) s += std::abs(pred.data()[i] - target.data()[i]);
  out.data()[0] = s / static_cast<T>(n);
  check_output("l1_loss", out);
  if (tape && need) {
    Tensor<T> tgt = target;
    tape->record([pred, tgt, out, n]() mutable {
      const T g = out.grad()[0] / static_cast<T>(n);
      for (size_t i = 0; i < n; ++i) {
        const T d = pred.data()[i] - tgt.data()[i];
        if (d > T{0})
          pred.grad()[i] += g;
        else if (d < T{0})
          pred.grad()[i] -= g;
      }
    });
  }
  return out;
}

// Summed next-token negative log-likelihood over rows of logits.
// Targets index columns. Stable log-softmax; backward is softmax - onehot.
template <class T>
Tensor<T> cross_entropy_sum(Tape<T>* tape, Tensor<T> logits, std::vector<int> targets) {
  require_2d("cross_entropy", logits);
  const int m = logits.dim(0), n = logits.dim(1);
  if (static_cast<int>(targets.size()) != m)
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                std::to_string(m) + " rows");
  for (int t : targets)
    if (t < 0 || t >= n) throw std::invalid_argument("cross_entropy: target id out of range");
  const bool need = logits.has_grad();
  Tensor<T> out = make_out(tape, {1}, need);
  T total = 0;
  for (int r = 0; r < m; ++r) {
    const T* x = logits.data() + r * n;
    T mx = x[0];
    for (int c = 1; c < n; ++c) mx = std::max(mx, x[c]);
    T z = 0;
    for (int c = 0; c < n; ++c) z += std::exp(x[c] - mx);
    total += std::log(z) + mx - x[targets[static_cast<size_t>(r)]];
  }
  out.data()[0] = total;
  check_output("cross_entropy", out);
  if (tape && need) {
    tape->record([logits, out, targets = std::move(targets), m, n]() mutable {
      const T g = out.grad()[0];
      for (int r = 0; r < m; ++r) {
        const T* x = logits.data() + r * n;
        T* dx = logits.grad() + r * n;
        T mx = x[0];
        for (int c = 1; c < n; ++c) mx = std::max(mx, x[c]);
        T z = 0;
        for (int c = 0; c < n; ++c) z += std::exp(x[c] - mx);
        const T inv = T{1} / z;
        for (int c = 0; c < n; ++c) dx[c] += g * std::exp(x[c] - mx) * inv;
        dx[targets[static_cast<size_t>(r)]] -= g;
      }
    });
  }
  return out;
}

// Quantization pass-through: forward takes the quantized values, backward
// hands the gradient to the pre-quantization input unchanged.
template <class T>
Tensor<T> straight_through(Tape<T>* tape, Tensor<T> raw, const Tensor<T>& quantized) {
  if (raw.shape() != quantized.shape()) shape_error("straight_through", raw.shape(), quantized.shape());
  const bool need = raw.has_grad();
  Tensor<T> out = make_out(tape, raw.shape(), need);
  std::copy_n(quantized.data(), quantized.numel(), out.data());
  check_output("straight_through", out);
  if (tape && need) {
    tape->record([raw, out]() mutable {
      for (size_t i = 0; i < out.numel(); ++i) raw.grad()[i] += out.grad()[i];
    });
  }
  return out;
}

// ---- multi-head attention ----------------------------------------------------

// Attention pooling / self-attention. q_in:[mq,dq], k_in,v_in:[mk,dk].
// Weights project to n_heads*head_dim; wo maps back to d_out. mask, when
// defined, is an additive [mq,mk] constant (0 = visible, large negative =
// hidden) applied to the pre-softmax scores.
template <class T>
Tensor<T> multi_head_attention(Tape<T>* tape, Tensor<T> q_in, Tensor<T> k_in, Tensor<T> v_in,
                               Tensor<T> wq, Tensor<T> bq, Tensor<T> wk, Tensor<T> bk, Tensor<T> wv,
                               Tensor<T> bv, Tensor<T> wo, Tensor<T> bo, int n_heads,
                               const Tensor<T>& mask = Tensor<T>{}) {
  require_2d("multi_head_attention", q_in);
  require_2d("multi_head_attention", k_in);
  if (k_in.dim(0) != v_in.dim(0)) shape_error("multi_head_attention k/v", k_in.shape(), v_in.shape());
  const int inner = wq.dim(1);
  if (inner % n_heads != 0)
    throw std::invalid_argument("multi_head_attention: inner dim not divisible by head count");
  const int hd = inner / n_heads;
  if (mask.defined() && (mask.dim(0) != q_in.dim(0) || mask.dim(1) != k_in.dim(0)))
    shape_error("multi_head_attention mask", mask.shape(), Shape{q_in.dim(0), k_in.dim(0)});

  Tensor<T> q = add_rowvec(tape, matmul(tape, q_in, wq), bq);
  Tensor<T> k = add_rowvec(tape, matmul(tape, k_in, wk), bk);
  Tensor<T> v = add_rowvec(tape, matmul(tape, v_in, wv), bv);

  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(hd));
  std::vector<Tensor<T>> heads;
  heads.reserve(static_cast<size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Tensor<T> qh = slice_cols(tape, q, h * hd, (h + 1) * hd);
    Tensor<T> kh = slice_cols(tape, k, h * hd, (h + 1) * hd);
    Tensor<T> vh = slice_cols(tape, v, h * hd, (h + 1) * hd);
    Tensor<T> scores = scale(tape, matmul_nt(tape, qh, kh), inv_sqrt);
    if (mask.defined()) scores = add(tape, scores, mask);
    Tensor<T> att = softmax(tape, scores);
    heads.push_back(matmul(tape, att, vh));
  }
  Tensor<T> cat = n_heads == 1 ? heads[0] : concat_cols(tape, std::move(heads));
  return add_rowvec(tape, matmul(tape, cat, wo), bo);
}

// Fused multi-head attention: one graph node covering projections, per-head
// masked softmax attention, and the output projection. Matches the composite
// multi_head_attention op; kept separate so the composite remains the
// reference path in tests.
template <class T>
Tensor<T> fused_mha(Tape<T>* tape, Tensor<T> q_in, Tensor<T> k_in, Tensor<T> v_in, Tensor<T> wq,
                    Tensor<T> bq, Tensor<T> wk, Tensor<T> bk, Tensor<T> wv, Tensor<T> bv,
                    Tensor<T> wo, Tensor<T> bo, int n_heads, const Tensor<T>& mask = Tensor<T>{}) {
  require_2d("fused_mha", q_in);
  require_2d("fused_mha", k_in);
  if (k_in.dim(0) != v_in.dim(0)) shape_error("fused_mha k/v", k_in.shape(), v_in.shape());
  const int inner = wq.dim(1);
  if (inner % n_heads != 0)
    throw std::invalid_argument("fused_mha: inner dim not divisible by head count");
  const int hd = inner / n_heads;
  const int mq = q_in.dim(0), mk = k_in.dim(0);
  if (mask.defined() && (mask.dim(0) != mq || mask.dim(1) != mk))
    shape_error("fused_mha mask", mask.shape(), Shape{mq, mk});
  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(hd));

  // projections
  auto q = std::make_shared<Buf<T>>(static_cast<size_t>(mq) * inner);
  auto k = std::make_shared<Buf<T>>(static_cast<size_t>(mk) * inner);
  auto v = std::make_shared<Buf<T>>(static_cast<size_t>(mk) * inner);
  {
    EMap<T>(q->data(), mq, inner).noalias() = mat_view(q_in) * mat_view(wq);
    EMap<T>(k->data(), mk, inner).noalias() = mat_view(k_in) * mat_view(wk);
    EMap<T>(v->data(), mk, inner).noalias() = mat_view(v_in) * mat_view(wv);
    for (int r = 0; r < mq; ++r)
      for (int c = 0; c < inner; ++c) q->data()[r * inner + c] += bq.data()[c];
    for (int r = 0; r < mk; ++r)
      for (int c = 0; c < inner; ++c) {
        k->data()[r * inner + c] += bk.data()[c];
        v->data()[r * inner + c] += bv.data()[c];
      }
  }

  // per-head masked softmax attention; weights kept for the backward pass
  auto att = std::make_shared<Buf<T>>(static_cast<size_t>(n_heads) * mq * mk);
  auto heads_out = std::make_shared<Buf<T>>(static_cast<size_t>(mq) * inner);
  std::vector<T> scores(static_cast<size_t>(mq) * mk);
  for (int h = 0; h < n_heads; ++h) {
    EMap<T> qh(q->data(), mq, inner);
    EMap<T> kh(k->data(), mk, inner);
    EMap<T>(scores.data(), mq, mk).noalias() =
        qh.middleCols(h * hd, hd) * kh.middleCols(h * hd, hd).transpose();
    T* a = att->data() + static_cast<size_t>(h) * mq * mk;
    for (int r = 0; r < mq; ++r) {
      T* row = scores.data() + static_cast<size_t>(r) * mk;
      if (mask.defined()) {
        const T* mrow = mask.data() + static_cast<size_t>(r) * mk;
        for (int c = 0; c < mk; ++c) row[c] = row[c] * inv_sqrt + mrow[c];
      } else {
        for (int c = 0; c < mk; ++c) row[c] *= inv_sqrt;
      }
      T mx = row[0];
      for (int c = 1; c < mk; ++c) mx = std::max(mx, row[c]);
      T z = 0;
      for (int c = 0; c < mk; ++c) {
        row[c] = std::exp(row[c] - mx);
        z += row[c];
      }
      const T inv = T{1} / z;
      T* arow = a + static_cast<size_t>(r) * mk;
      for (int c = 0; c < mk; ++c) arow[c] = row[c] * inv;
    }
    EMap<T> vh(v->data(), mk, inner);
    EMap<T> ho(heads_out->data(), mq, inner);
    ho.middleCols(h * hd, hd).noalias() = ECMap<T>(a, mq, mk) * vh.middleCols(h * hd, hd);
  }

  const bool need = q_in.has_grad() || k_in.has_grad() || v_in.has_grad() || wq.has_grad() ||
                    wk.has_grad() || wv.has_grad() || wo.has_grad() || bq.has_grad() ||
                    bk.has_grad() || bv.has_grad() || bo.has_grad();
  Tensor<T> out = make_out(tape, {mq, wo.dim(1)}, need);
  mat_view_mut(out).noalias() = ECMap<T>(heads_out->data(), mq, inner) * mat_view(wo);
  for (int r = 0; r < mq; ++r)
    for (int c = 0; c < out.dim(1); ++c) out.data()[r * out.dim(1) + c] += bo.data()[c];
  check_output("fused_mha", out);

  if (tape && need) {
    tape->record([q_in, k_in, v_in, wq, bq, wk, bk, wv, bv, wo, bo, out, q, k, v, att, heads_out,
                  n_heads, hd, mq, mk, inner, inv_sqrt]() mutable {
      const int d_out = out.dim(1);
      ECMap<T> dout(out.grad(), mq, d_out);
      ECMap<T> ho(heads_out->data(), mq, inner);
      if (wo.has_grad()) grad_view(wo).noalias() += ho.transpose() * dout;
      if (bo.has_grad())
        for (int r = 0; r < mq; ++r)
          for (int c = 0; c < d_out; ++c) bo.grad()[c] += out.grad()[r * d_out + c];

      // gradients w.r.t. concatenated head outputs
      std::vector<T> dho(static_cast<size_t>(mq) * inner);
      EMap<T>(dho.data(), mq, inner).noalias() = dout * mat_view(wo).transpose();

      std::vector<T> dq(static_cast<size_t>(mq) * inner, T{0});
      std::vector<T> dk(static_cast<size_t>(mk) * inner, T{0});
      std::vector<T> dv(static_cast<size_t>(mk) * inner, T{0});
      std::vector<T> da(static_cast<size_t>(mq) * mk);
      std::vector<T> ds(static_cast<size_t>(mq) * mk);
      for (int h = 0; h < n_heads; ++h) {
        const T* a = att->data() + static_cast<size_t>(h) * mq * mk;
        ECMap<T> am(a, mq, mk);
        EMap<T> dho_m(dho.data(), mq, inner);
        EMap<T> vm(v->data(), mk, inner);
        // dV_h and dA
        EMap<T>(dv.data(), mk, inner).middleCols(h * hd, hd).noalias() +=
            am.transpose() * dho_m.middleCols(h * hd, hd);
        EMap<T>(da.data(), mq, mk).noalias() =
            dho_m.middleCols(h * hd, hd) * vm.middleCols(h * hd, hd).transpose();
        // softmax backward into dS (scaled)
        for (int r = 0; r < mq; ++r) {
          const T* arow = a + static_cast<size_t>(r) * mk;
          const T* darow = da.data() + static_cast<size_t>(r) * mk;
          T dot = 0;
          for (int c = 0; c < mk; ++c) dot += arow[c] * darow[c];
          T* dsrow = ds.data() + static_cast<size_t>(r) * mk;
          for (int c = 0; c < mk; ++c) dsrow[c] = arow[c] * (darow[c] - dot) * inv_sqrt;
        }
        EMap<T> qm(q->data(), mq, inner);
        EMap<T> km(k->data(), mk, inner);
        EMap<T>(dq.data(), mq, inner).middleCols(h * hd, hd).noalias() +=
            ECMap<T>(ds.data(), mq, mk) * km.middleCols(h * hd, hd);
        EMap<T>(dk.data(), mk, inner).middleCols(h * hd, hd).noalias() +=
            ECMap<T>(ds.data(), mq, mk).transpose() * qm.middleCols(h * hd, hd);
      }

      if (bq.has_grad())
        for (int r = 0; r < mq; ++r)
          for (int c = 0; c < inner; ++c) bq.grad()[c] += dq[static_cast<size_t>(r) * inner + c];
      if (bk.has_grad())
        for (int r = 0; r < mk; ++r)
          for (int c = 0; c < inner; ++c) bk.grad()[c] += dk[static_cast<size_t>(r) * inner + c];
      if (bv.has_grad())
        for (int r = 0; r < mk; ++r)
          for (int c = 0; c < inner; ++c) bv.grad()[c] += dv[static_cast<size_t>(r) * inner + c];
      if (wq.has_grad())
        grad_view(wq).noalias() += mat_view(q_in).transpose() * ECMap<T>(dq.data(), mq, inner);
      if (wk.has_grad())
        grad_view(wk).noalias() += mat_view(k_in).transpose() * ECMap<T>(dk.data(), mk, inner);
      if (wv.has_grad())
        grad_view(wv).noalias() += mat_view(v_in).transpose() * ECMap<T>(dv.data(), mk, inner);
      if (q_in.has_grad())
        grad_view(q_in).noalias() += ECMap<T>(dq.data(), mq, inner) * mat_view(wq).transpose();
      if (k_in.has_grad())
        grad_view(k_in).noalias() += ECMap<T>(dk.data(), mk, inner) * mat_view(wk).transpose();
      if (v_in.has_grad())
        grad_view(v_in).noalias() += ECMap<T>(dv.data(), mk, inner) * mat_view(wv).transpose();
    });
  }
  return out;
}

// Additive attention masks (constants, no gradient).
template <class T>
Tensor<T> causal_mask(int n, T neg = T(-1e9)) {
  Tensor<T> m(Shape{n, n});
  for (int r = 0; r < n; ++r)
    for (int c = r + 1; c < n; ++c) m.data()[r * n + c] = neg;
  return m;
}

}  // namespace lact::nc
