#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "agcn/tensor.hpp"

namespace agcn {

/// Handle into a Tape. Plain index; cheap to copy, meaningless across tapes.
struct Val {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over one forward pass. Ops append values and backward
/// closures in recording order; backward() replays the closures in exact
/// reverse. Single-use: a second backward() on the same tape is rejected.
/// Gradients are allocated lazily, so a value the loss never touched reads
/// back as zeros.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Val leaf(Tensor<T> t) {
    values_.push_back(std::move(t));
    grads_.emplace_back(nullptr);
    return Val{static_cast<std::int32_t>(values_.size() - 1)};
  }

  const Tensor<T>& value(Val v) const { return values_[check(v)]; }

  /// Gradient accumulator for v, created zero-filled on first access.
  Tensor<T>& grad(Val v) {
    const auto i = check(v);
    if (!grads_[i]) grads_[i] = std::make_unique<Tensor<T>>(values_[i].shape());
    return *grads_[i];
  }

  /// True once something accumulated into v's gradient. Backward closures
  /// use this to skip branches the loss never reached.
  bool grad_touched(Val v) const { return grads_[check(v)] != nullptr; }

  /// grad(v) += delta, moving delta in when v's accumulator is still empty.
  void add_grad(Val v, Tensor<T>&& delta) {
    const auto i = check(v);
    if (!values_[i].same_shape(delta)) {
      throw std::invalid_argument("tape: gradient shape " + delta.shape_str() +
                                  " does not match value shape " + values_[i].shape_str());
    }
    if (!grads_[i]) {
      grads_[i] = std::make_unique<Tensor<T>>(std::move(delta));
      return;
    }
    Tensor<T>& acc = *grads_[i];
    const T* src = delta.data();
    T* dst = acc.data();
    for (std::int64_t k = 0; k < acc.numel(); ++k) dst[k] += src[k];
  }

  /// Ops call this after computing their forward value.
  void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

  std::size_t op_count() const { return nodes_.size(); }

  void backward(Val loss) {
    if (consumed_) throw std::logic_error("tape: backward already ran; tapes are single-use");
    if (nodes_.empty()) throw std::logic_error("tape: no recorded ops");
    if (value(loss).numel() != 1) {
      throw std::invalid_argument("tape: loss must be scalar, got shape " +
                                  value(loss).shape_str());
    }
    consumed_ = true;
    grad(loss).fill(T(1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::size_t check(Val v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= values_.size()) {
      throw std::out_of_range("tape: invalid value handle");
    }
    return static_cast<std::size_t>(v.id);
  }

  std::vector<Tensor<T>> values_;
  std::vector<std::unique_ptr<Tensor<T>>> grads_;
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

}  // namespace agcn
