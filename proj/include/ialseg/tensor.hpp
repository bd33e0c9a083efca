#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ialseg {

/// Base exception for every recoverable failure in the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

// Eigen's vectorized kernels peel unaligned heads, so the summation order
// depends on the buffer address. Fixed 64-byte alignment keeps float results
// independent of heap state.
inline constexpr std::size_t kBufferAlign = 64;

template <typename T>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kBufferAlign})); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kBufferAlign}); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
bool operator==(const Buffer<T>& a, const std::vector<T>& b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end());
}

/// Dense row-major array of up to four dimensions.
///
/// Spatial tensors use NHWC layout: batch x height x width x channels, with the
/// channel index varying fastest.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    if (shape_.size() > 4) throw Error("tensor rank " + std::to_string(shape_.size()) + " exceeds 4");
    data_.assign(shape_numel(shape_), fill);
  }
  Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), Buffer<T>(data.begin(), data.end())) {}
  Tensor(Shape shape, Buffer<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.size() > 4) throw Error("tensor rank " + std::to_string(shape_.size()) + " exceeds 4");
    if (data_.size() != shape_numel(shape_))
      throw Error("tensor payload of " + std::to_string(data_.size()) + " elements does not match shape " +
                  shape_str(shape_));
  }

  static Tensor nhwc(std::size_t n, std::size_t h, std::size_t w, std::size_t c, T fill = T(0)) {
    return Tensor(Shape{n, h, w, c}, fill);
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // NHWC accessors; only valid on rank-4 tensors.
  std::size_t n() const { return shape_.at(0); }
  std::size_t h() const { return shape_.at(1); }
  std::size_t w() const { return shape_.at(2); }
  std::size_t c() const { return shape_.at(3); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  Buffer<T>& vec() noexcept { return data_; }
  const Buffer<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t b, std::size_t y, std::size_t x, std::size_t ch) {
    return data_[((b * shape_[1] + y) * shape_[2] + x) * shape_[3] + ch];
  }
  const T& at(std::size_t b, std::size_t y, std::size_t x, std::size_t ch) const {
    return data_[((b * shape_[1] + y) * shape_[2] + x) * shape_[3] + ch];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(*this, o, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, Buffer<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  static void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape_ != b.shape_)
      throw Error(std::string(what) + ": shape mismatch " + shape_str(a.shape_) + " vs " + shape_str(b.shape_));
  }

 private:
  Shape shape_;
  Buffer<T> data_;
};

}  // namespace ialseg
