#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <cstring>
#include <initializer_list>
#include <new>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace agcn {

// Byte accounting for tensor storage. Counts live allocations exactly,
// not process RSS. peak_bytes() is monotone until reset_peak().
namespace alloc {

namespace detail {
inline std::atomic<std::size_t>& current_counter() {
  static std::atomic<std::size_t> c{0};
  return c;
}
inline std::atomic<std::size_t>& peak_counter() {
  static std::atomic<std::size_t> p{0};
  return p;
}
inline void add(std::size_t bytes) {
  std::size_t cur = current_counter().fetch_add(bytes, std::memory_order_relaxed) + bytes;
  std::atomic<std::size_t>& peak = peak_counter();
  std::size_t seen = peak.load(std::memory_order_relaxed);
  while (seen < cur && !peak.compare_exchange_weak(seen, cur, std::memory_order_relaxed)) {
  }
}
inline void sub(std::size_t bytes) {
  current_counter().fetch_sub(bytes, std::memory_order_relaxed);
}
}  // namespace detail

inline std::size_t current_bytes() { return detail::current_counter().load(std::memory_order_relaxed); }
inline std::size_t peak_bytes() { return detail::peak_counter().load(std::memory_order_relaxed); }
inline void reset_peak() { detail::peak_counter().store(current_bytes(), std::memory_order_relaxed); }

}  // namespace alloc

template <typename T>
struct TrackingAllocator {
  using value_type = T;
  TrackingAllocator() = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>&) {}
  T* allocate(std::size_t n) {
    alloc::detail::add(n * sizeof(T));
    return static_cast<T*>(::operator new(n * sizeof(T)));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    alloc::detail::sub(n * sizeof(T));
    ::operator delete(p);
  }
  template <typename U>
  bool operator==(const TrackingAllocator<U>&) const { return true; }
};

/// Dense row-major tensor of rank 1..4. The canonical layout for network
/// signals is sample x channel x height x width. Values are plain data;
/// copies are deep.
template <typename T>
class Tensor {
 public:
  using Storage = std::vector<T, TrackingAllocator<T>>;

  Tensor() = default;

  explicit Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(checked_numel(shape_), T(0));
  }

  Tensor(std::vector<std::int64_t> shape, T fill) : shape_(std::move(shape)) {
    data_.assign(checked_numel(shape_), fill);
  }

  Tensor(std::vector<std::int64_t> shape, const std::vector<T>& values) : shape_(std::move(shape)) {
    const std::int64_t n = checked_numel(shape_);
    if (static_cast<std::int64_t>(values.size()) != n) {
      throw std::invalid_argument("tensor: data length " + std::to_string(values.size()) +
                                  " does not match shape numel " + std::to_string(n));
    }
    data_.assign(values.begin(), values.end());
  }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t extent(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // Bounds-checked element access, mostly for tests and fixtures.
  T& at(std::initializer_list<std::int64_t> idx) { return data_[flat_index(idx)]; }
  const T& at(std::initializer_list<std::int64_t> idx) const { return data_[flat_index(idx)]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    if constexpr (std::is_floating_point_v<T>) {
      for (const T& v : data_) {
        if (!std::isfinite(v)) return false;
      }
    }
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) os << ',';
      os << shape_[i];
    }
    os << ']';
    return os.str();
  }

 private:
  static std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
    if (shape.empty() || shape.size() > 4) {
      throw std::invalid_argument("tensor: rank must be 1..4, got " + std::to_string(shape.size()));
    }
    std::int64_t n = 1;
    for (std::int64_t e : shape) {
      if (e < 1) throw std::invalid_argument("tensor: extents must be >= 1");
      n *= e;
    }
    return n;
  }

  std::size_t flat_index(std::initializer_list<std::int64_t> idx) const {
    if (idx.size() != shape_.size()) throw std::out_of_range("tensor: index rank mismatch");
    std::int64_t flat = 0;
    std::size_t axis = 0;
    for (std::int64_t i : idx) {
      if (i < 0 || i >= shape_[axis]) throw std::out_of_range("tensor: index out of range");
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return static_cast<std::size_t>(flat);
  }

  std::vector<std::int64_t> shape_;
  Storage data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;
// Integer maps: class labels [s,h,w] and pooling argmax offsets [s,c,h,w].
using IntTensor = Tensor<std::int32_t>;

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    if (std::memcmp(&a[i], &b[i], sizeof(T)) != 0) return false;
  }
  return true;
}

}  // namespace agcn
