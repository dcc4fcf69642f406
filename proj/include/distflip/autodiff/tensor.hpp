#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace distflip::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

/// Raised when an op receives operands of incompatible shape. The message
/// names the op and every operand shape.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const std::vector<Shape>& shapes,
             const std::string& detail = {})
      : std::invalid_argument(format(op, shapes, detail)), op_(op), shapes_(shapes) {}

  const std::string& op() const noexcept { return op_; }
  const std::vector<Shape>& shapes() const noexcept { return shapes_; }

 private:
  static std::string format(const std::string& op, const std::vector<Shape>& shapes,
                            const std::string& detail) {
    std::string msg = "shape mismatch in " + op + ":";
    for (const auto& s : shapes) msg += " " + to_string(s);
    if (!detail.empty()) msg += " (" + detail + ")";
    return msg;
  }

  std::string op_;
  std::vector<Shape> shapes_;
};

/// Raised when a forward value or gradient stops being finite.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major array.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(numel(shape_), fill) {
    check_dims();
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (numel(shape_) != data_.size())
      throw ShapeError("Tensor", {shape_}, "payload has " + std::to_string(data_.size()) +
                                               " values");
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }
  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Views a rank-1 tensor as a single row.
  std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }
  T& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  T item() const {
    if (data_.size() != 1) throw ShapeError("item", {shape_}, "expected a single value");
    return data_[0];
  }

  bool all_finite() const noexcept {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(T v) noexcept { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& other) {
    if (other.data_.size() != data_.size()) throw ShapeError("+=", {shape_, other.shape_});
    const T* src = other.data_.data();
    T* dst = data_.data();
    const std::size_t n = data_.size();
    for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
    return *this;
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    for (auto d : shape_)
      if (d == 0) throw ShapeError("Tensor", {shape_}, "dimensions must be positive");
  }

  Shape shape_;
  std::vector<T> data_;
};

}  // namespace distflip::ad
