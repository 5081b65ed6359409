#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "filmens/errors.hpp"

namespace filmens {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {
template <typename S>
struct TensorImpl {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;  // same length as data when requires_grad
  bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major n-d array with an optional gradient buffer.  Copying a
/// Tensor copies a handle: two copies share the same storage, which is what
/// lets the tape and the optimizer refer to the same parameter.  Use clone()
/// for a deep copy.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorImpl<S>>()) {
    for (std::size_t e : shape)
      if (e == 0) throw ShapeError("Tensor: zero extent in shape " + shape_str(shape));
    impl_->shape = std::move(shape);
    impl_->data.assign(shape_numel(impl_->shape), S(0));
    set_requires_grad(requires_grad);
  }

  static Tensor from_data(Shape shape, std::vector<S> values, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    if (values.size() != t.size())
      throw ShapeError("Tensor::from_data: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(t.shape()));
    t.impl_->data = std::move(values);
    return t;
  }

  static Tensor full(Shape shape, S value, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    for (auto& v : t.impl_->data) v = value;
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), requires_grad);
  }
  static Tensor ones(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), S(1), requires_grad);
  }
  static Tensor scalar(S value) { return full({1}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t extent(std::size_t d) const { return impl_->shape.at(d); }
  std::size_t size() const { return impl_->data.size(); }

  S* data() { return impl_->data.data(); }
  const S* data() const { return impl_->data.data(); }
  std::vector<S>& vec() { return impl_->data; }
  const std::vector<S>& vec() const { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    if (rg && impl_->grad.size() != impl_->data.size())
      impl_->grad.assign(impl_->data.size(), S(0));
  }

  S* grad() { return impl_->grad.data(); }
  const S* grad() const { return impl_->grad.data(); }
  std::vector<S>& grad_vec() { return impl_->grad; }

  void zero_grad() {
    for (auto& g : impl_->grad) g = S(0);
  }

  /// Deep copy (values only; the copy does not require grad).
  Tensor clone() const {
    Tensor t(impl_->shape);
    t.impl_->data = impl_->data;
    return t;
  }

  /// True when both handles share storage.
  bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

  S item() const {
    if (size() != 1)
      throw ValueError("Tensor::item: tensor has " + std::to_string(size()) + " elements");
    return impl_->data[0];
  }

  // Convenience indexed access for up to 4 dims; row-major.
  S& at(std::size_t i) { return impl_->data[check_index(offset({i}))]; }
  S& at(std::size_t i, std::size_t j) { return impl_->data[check_index(offset({i, j}))]; }
  S& at(std::size_t i, std::size_t j, std::size_t k) {
    return impl_->data[check_index(offset({i, j, k}))];
  }
  S& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return impl_->data[check_index(offset({i, j, k, l}))];
  }
  S at(std::size_t i) const { return impl_->data[check_index(offset({i}))]; }
  S at(std::size_t i, std::size_t j) const { return impl_->data[check_index(offset({i, j}))]; }
  S at(std::size_t i, std::size_t j, std::size_t k) const {
    return impl_->data[check_index(offset({i, j, k}))];
  }
  S at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return impl_->data[check_index(offset({i, j, k, l}))];
  }

  bool all_finite() const {
    for (S v : impl_->data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != impl_->shape.size())
      throw ShapeError("Tensor: indexed with " + std::to_string(idx.size()) +
                       " indices but shape is " + shape_str(impl_->shape));
    std::size_t off = 0;
    std::size_t d = 0;
    for (std::size_t i : idx) {
      off = off * impl_->shape[d] + i;
      ++d;
    }
    return off;
  }
  std::size_t check_index(std::size_t off) const {
    if (off >= impl_->data.size()) throw ShapeError("Tensor: index out of range");
    return off;
  }

  std::shared_ptr<detail::TensorImpl<S>> impl_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Reverse-mode gradient tape.  Operations append nodes in execution order,
/// so the list is already topologically sorted; backward() walks it once in
/// reverse.  A tape can be replayed exactly once per recording; reset()
/// clears it for the next step.
template <typename S>
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  /// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
  /// requires_grad tensor reachable from the recorded ops.
  void backward(Tensor<S>& loss) {
    if (loss.size() != 1)
      throw ValueError("Tape::backward: loss must be scalar, got shape " +
                       shape_str(loss.shape()));
    if (nodes_.empty()) throw ValueError("Tape::backward: tape is empty");
    if (consumed_)
      throw ValueError("Tape::backward: tape already consumed; reset() before reuse");
    if (!loss.requires_grad())
      throw ValueError("Tape::backward: loss does not require grad");
    consumed_ = true;
    loss.grad()[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

namespace detail {
/// True when this op should record a node: a tape is active and some input
/// carries grad.
template <typename S, typename... Ts>
bool tracing(Tape<S>* tape, const Ts&... inputs) {
  if (tape == nullptr) return false;
  return (... || inputs.requires_grad());
}

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}
}  // namespace detail

#ifdef NDEBUG
template <typename S>
inline void debug_check_finite(const Tensor<S>&, const char*) {}
#else
/// Debug-build guard: forward passes must never produce NaN/Inf from finite
/// inputs.
template <typename S>
inline void debug_check_finite(const Tensor<S>& t, const char* op) {
  if (!t.all_finite())
    throw ValueError(std::string("non-finite value produced by ") + op);
}
#endif

}  // namespace filmens
