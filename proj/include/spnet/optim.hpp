#pragma once

#include <span>
#include <unordered_map>
#include <vector>

#include "spnet/tensor.hpp"

namespace spnet {

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.0;
  bool nesterov = false;
  double weight_decay = 0.0;
};

/// Momentum buffers keyed by parameter identity. A buffer is created from the
/// first update it sees (no dampening), matching the usual framework rule.
template <typename T>
class SgdState {
 public:
  std::vector<T>* find(const Param<T>* p) {
    auto it = buffers_.find(p);
    return it == buffers_.end() ? nullptr : &it->second;
  }
  std::vector<T>& create(const Param<T>* p, std::vector<T> init) {
    return buffers_[p] = std::move(init);
  }
  void clear() { buffers_.clear(); }

 private:
  std::unordered_map<const Param<T>*, std::vector<T>> buffers_;
};

/// One SGD step over every touched parameter, then zeroes all gradients.
///
///   d   = g + weight_decay * p
///   buf = d                      (first step)
///   buf = momentum * buf + d     (afterwards)
///   d   = d + momentum * buf     (nesterov)   or   d = buf   (classic)
///   p  -= lr * d
///
/// With momentum == 0 the buffer is skipped and d is used directly.
template <typename T>
void sgd_step(std::span<Param<T>* const> params, const SgdConfig& config, SgdState<T>& state);

extern template void sgd_step<float>(std::span<Param<float>* const>, const SgdConfig&,
                                     SgdState<float>&);
extern template void sgd_step<double>(std::span<Param<double>* const>, const SgdConfig&,
                                      SgdState<double>&);

}  // namespace spnet
