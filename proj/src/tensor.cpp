#include "spnet/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace spnet {

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
         std::to_string(w) + ")";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw DimensionError("negative tensor dimension " + shape.str());
  }
  data_.assign(shape.numel(), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_.str());
  }
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
  if (shape.numel() != data_.size()) {
    throw DimensionError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  shape_ = shape;
}

template <typename T>
void Tensor<T>::resize(Shape shape) {
  shape_ = shape;
  data_.resize(shape.numel());
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

const char* to_string(ParamRole role) {
  switch (role) {
    case ParamRole::conv_weight: return "conv-weight";
    case ParamRole::conv_bias: return "conv-bias";
    case ParamRole::bn_gamma: return "bn-gamma";
    case ParamRole::bn_beta: return "bn-beta";
    case ParamRole::linear_weight: return "linear-weight";
    case ParamRole::linear_bias: return "linear-bias";
  }
  return "?";
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace spnet
