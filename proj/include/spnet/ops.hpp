#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "spnet/tensor.hpp"

namespace spnet {

enum class Activation { none, relu, relu6 };
enum class PoolKind { max, global_avg };

struct ConvGeometry {
  int in_channels = 0;
  int in_h = 0;
  int in_w = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int groups = 1;

  int out_h() const { return (in_h + 2 * padding - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * padding - kernel) / stride + 1; }
  /// Number of weights per filter actually read: (in_channels / groups) * k * k.
  std::size_t filter_size() const {
    return static_cast<std::size_t>(in_channels / groups) * kernel * kernel;
  }
  void validate(std::string_view layer) const;
};

// ---------------------------------------------------------------------------
// Raw kernels. Weights are addressed as `w + o * filter_stride`, and only the
// first filter_size() entries of each filter are read. A prefix slice of a
// larger weight tensor is therefore just the base pointer plus the full
// tensor's filter stride. All reductions run in a fixed sequential order.
// ---------------------------------------------------------------------------

template <typename T>
void conv2d_forward(const T* x, int batch, const ConvGeometry& g, const T* w,
                    std::size_t filter_stride, const T* bias, T* y);

/// Accumulates (+=) into gx, gw and gbias; any of them may be null.
template <typename T>
void conv2d_backward(const T* x, int batch, const ConvGeometry& g, const T* w,
                     std::size_t filter_stride, const T* gy, T* gx, T* gw, T* gbias);

/// y = x * W^T + b with W rows addressed as `w + o * row_stride`.
template <typename T>
void linear_forward(const T* x, int batch, int in_features, int out_features, const T* w,
                    std::size_t row_stride, const T* bias, T* y);

template <typename T>
void linear_backward(const T* x, int batch, int in_features, int out_features, const T* w,
                     std::size_t row_stride, const T* gy, T* gx, T* gw, T* gbias);

/// Training-mode normalization with batch statistics. Writes the batch mean
/// and biased variance into batch_mean / batch_var (length C).
template <typename T>
void batchnorm_forward_train(const T* x, int batch, int channels, std::size_t plane,
                             const T* gamma, const T* beta, double eps, T* y,
                             std::vector<double>& batch_mean, std::vector<double>& batch_var);

template <typename T>
void batchnorm_forward_eval(const T* x, int batch, int channels, std::size_t plane,
                            const T* gamma, const T* beta, const T* running_mean,
                            const T* running_var, double eps, T* y);

/// Backward of the training-mode forward; accumulates into gx, ggamma, gbeta.
template <typename T>
void batchnorm_backward_train(const T* x, const T* gy, int batch, int channels,
                              std::size_t plane, const T* gamma,
                              const std::vector<double>& batch_mean,
                              const std::vector<double>& batch_var, double eps, T* gx,
                              T* ggamma, T* gbeta);

template <typename T>
void activation_forward(const T* x, std::size_t n, Activation kind, T* y);
template <typename T>
void activation_backward(const T* x, const T* gy, std::size_t n, Activation kind, T* gx);

/// Max pooling; padded positions never win. `argmax` receives the flat input
/// index used for each output element (first maximum wins).
template <typename T>
void maxpool_forward(const T* x, int batch, int channels, int h, int w, int window, int stride,
                     int padding, T* y, std::vector<std::size_t>& argmax);
template <typename T>
void maxpool_backward(const T* gy, std::size_t out_count, const std::vector<std::size_t>& argmax,
                      T* gx);

template <typename T>
void global_avgpool_forward(const T* x, int batch, int channels, std::size_t plane, T* y);
template <typename T>
void global_avgpool_backward(const T* gy, int batch, int channels, std::size_t plane, T* gx);

/// Mean cross-entropy over the batch. Returns the loss; writes dL/dlogits
/// into grad when non-null.
template <typename T>
double cross_entropy(const T* logits, int batch, int classes, std::span<const int> labels,
                     T* grad);

/// Softmax of logits / temperature, row by row, computed in double.
template <typename T>
std::vector<double> softmax(const T* logits, int batch, int classes, double temperature);

/// Per-channel batch-norm parameters and running statistics for one width.
template <typename T>
struct BnState {
  Param<T> gamma;
  Param<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BnState() = default;
  explicit BnState(int channels)
      : gamma(Tensor<T>::vector(channels, T(1)), ParamRole::bn_gamma),
        beta(Tensor<T>::vector(channels, T(0)), ParamRole::bn_beta),
        running_mean(Tensor<T>::vector(channels, T(0))),
        running_var(Tensor<T>::vector(channels, T(1))) {}

  int channels() const { return static_cast<int>(gamma.value.size()); }
};

/// Updates running statistics from batch statistics over `count` channels
/// (exponential moving average; the variance uses the unbiased estimate).
template <typename T>
void update_running_stats(T* running_mean, T* running_var, const std::vector<double>& batch_mean,
                          const std::vector<double>& batch_var, std::size_t samples_per_channel,
                          double momentum);

// ---------------------------------------------------------------------------
// Tensor-level convenience API.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 int stride, int padding, int groups, std::string_view layer = "conv2d");

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 std::string_view layer = "linear");

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, BnState<T>& state, bool training);

template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation kind);

template <typename T>
Tensor<T> pool(const Tensor<T>& input, PoolKind kind, int window = 0, int stride = 0,
               int padding = 0);

}  // namespace spnet
