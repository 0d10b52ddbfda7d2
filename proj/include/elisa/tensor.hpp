#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace elisa {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

/// Dense row-major array. Rank 0 is a scalar holding one element.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (shape_size(shape_) != data_.size()) {
      throw std::invalid_argument("tensor: shape " + shape_string(shape_) + " does not match " +
                                  std::to_string(data_.size()) + " values");
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }
  static Tensor vector(std::vector<T> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }
  static Tensor vector(std::initializer_list<T> v) { return vector(std::vector<T>(v)); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * shape_[1], shape_[1]); }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * shape_[1], shape_[1]);
  }

  T item() const {
    if (data_.size() != 1) throw std::invalid_argument("tensor: item() on non-scalar");
    return data_[0];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    for (std::size_t e : shape_) {
      if (e == 0) throw std::invalid_argument("tensor: zero extent in shape " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_{T{0}};
};

}  // namespace elisa
