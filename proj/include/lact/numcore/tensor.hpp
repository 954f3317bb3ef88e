#pragma once

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lact::nc {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= static_cast<size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

[[noreturn]] inline void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw std::invalid_argument("shape mismatch in " + op + ": " + shape_str(a) + " vs " + shape_str(b));
}

// 64-byte aligned value storage so identical shapes always hit identical
// vectorized code paths (keeps results bit-reproducible run to run).
template <class T>
class Buf {
 public:
  explicit Buf(size_t n) : n_(n) {
    data_ = static_cast<T*>(std::aligned_alloc(64, round_up(n * sizeof(T))));
    if (!data_) throw std::bad_alloc();
  }
  ~Buf() { std::free(data_); }
  Buf(const Buf&) = delete;
  Buf& operator=(const Buf&) = delete;

  T* data() { return data_; }
  const T* data() const { return data_; }
  size_t size() const { return n_; }

  void fill(T v) {
    for (size_t i = 0; i < n_; ++i) data_[i] = v;
  }

 private:
  static size_t round_up(size_t bytes) { return (bytes + 63) & ~size_t{63}; }
  T* data_ = nullptr;
  size_t n_ = 0;
};

// Verification mode: every op output is scanned for NaN/Inf.
inline std::atomic<bool>& check_finite_flag() {
  static std::atomic<bool> f{false};
  return f;
}
inline void set_check_finite(bool on) { check_finite_flag().store(on); }
inline bool check_finite_enabled() { return check_finite_flag().load(std::memory_order_relaxed); }

// Dense array handle. Value storage is shared; the gradient buffer exists
// only while the tensor participates in a recorded graph.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    val_ = std::make_shared<Buf<T>>(shape_numel(shape_));
    val_->fill(T{0});
  }

  Tensor(Shape shape, std::shared_ptr<Buf<T>> val, std::shared_ptr<Buf<T>> grad)
      : shape_(std::move(shape)), val_(std::move(val)), grad_(std::move(grad)) {}

  static Tensor scalar(T v) {
    Tensor t(Shape{1});
    t.val_->data()[0] = v;
    return t;
  }

  static Tensor from(Shape shape, const std::vector<T>& values) {
    Tensor t(std::move(shape));
    if (values.size() != t.numel())
      throw std::invalid_argument("Tensor::from: value count " + std::to_string(values.size()) +
                                  " does not match shape " + shape_str(t.shape()));
    for (size_t i = 0; i < values.size(); ++i) t.val_->data()[i] = values[i];
    return t;
  }

  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  size_t numel() const { return shape_numel(shape_); }
  bool defined() const { return val_ != nullptr; }

  T* data() { return val_->data(); }
  const T* data() const { return val_->data(); }
  T item() const { return val_->data()[0]; }

  bool has_grad() const { return grad_ != nullptr; }
  T* grad() { return grad_->data(); }
  const T* grad() const { return grad_->data(); }

  void ensure_grad() {
    if (!grad_) {
      grad_ = std::make_shared<Buf<T>>(numel());
      grad_->fill(T{0});
    }
  }
  void attach_grad(std::shared_ptr<Buf<T>> g) { grad_ = std::move(g); }
  std::shared_ptr<Buf<T>> grad_buf() const { return grad_; }
  std::shared_ptr<Buf<T>> val_buf() const { return val_; }

  void zero_grad() {
    if (grad_) grad_->fill(T{0});
  }

 private:
  Shape shape_;
  std::shared_ptr<Buf<T>> val_;
  std::shared_ptr<Buf<T>> grad_;
};

// Reverse-mode tape. Ops append backward closures in creation order; since
// every op runs after its inputs exist, reverse creation order is a valid
// reverse topological order.
template <class T>
class Tape {
 public:
  void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }

  size_t size() const { return steps_.size(); }

  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be a scalar");
    loss.ensure_grad();
    loss.grad()[0] += T{1};
    for (size_t i = steps_.size(); i-- > 0;) steps_[i]();
  }

  void clear() { steps_.clear(); }

 private:
  std::vector<std::function<void()>> steps_;
};

template <class T>
inline void check_output(const char* op, const Tensor<T>& t) {
  if (!check_finite_enabled()) return;
  const T* p = t.data();
  for (size_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(static_cast<double>(p[i])))
      throw std::runtime_error(std::string("non-finite value produced by ") + op);
  }
}

}  // namespace lact::nc
