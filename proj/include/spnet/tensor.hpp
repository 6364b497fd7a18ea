#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spnet {

/// Raised when tensor or layer shapes disagree.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a computation leaves the finite domain.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for malformed user input (configs, datasets, checkpoints).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense row-major (N, C, H, W) array. Vectors and matrices are stored as
/// (n, 1, 1, 1) and (rows, cols, 1, 1).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor vector(int n, T fill = T(0)) { return Tensor({n, 1, 1, 1}, fill); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  const T& at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  void fill(T value);
  void reshape(Shape shape);
  /// Changes the shape, reallocating as needed; contents are unspecified.
  void resize(Shape shape);
  bool all_finite() const;

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  Shape shape_{};
  std::vector<T> data_;
};

enum class ParamRole { conv_weight, conv_bias, bn_gamma, bn_beta, linear_weight, linear_bias };

const char* to_string(ParamRole role);

/// A trainable tensor with its gradient accumulator. `touched` is set by any
/// backward pass that wrote into `grad`; the optimizer skips untouched params.
template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;
  ParamRole role = ParamRole::conv_weight;
  bool touched = false;

  Param() = default;
  Param(Tensor<T> v, ParamRole r) : value(std::move(v)), grad(value.shape()), role(r) {}

  void zero_grad() {
    grad.fill(T(0));
    touched = false;
  }
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace spnet
