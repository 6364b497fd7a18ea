#include "spnet/optim.hpp"

namespace spnet {

template <typename T>
void sgd_step(std::span<Param<T>* const> params, const SgdConfig& config, SgdState<T>& state) {
  const T lr = static_cast<T>(config.lr);
  const T mu = static_cast<T>(config.momentum);
  const T wd = static_cast<T>(config.weight_decay);
  std::vector<T> d;
  for (Param<T>* p : params) {
    if (!p->touched) {
      p->zero_grad();
      continue;
    }
    const std::size_t n = p->value.size();
    d.resize(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = p->grad[i] + wd * p->value[i];
    if (config.momentum != 0.0) {
      std::vector<T>* buf = state.find(p);
      if (buf == nullptr) {
        buf = &state.create(p, d);
      } else {
        for (std::size_t i = 0; i < n; ++i) (*buf)[i] = mu * (*buf)[i] + d[i];
      }
      if (config.nesterov) {
        for (std::size_t i = 0; i < n; ++i) d[i] += mu * (*buf)[i];
      } else {
        for (std::size_t i = 0; i < n; ++i) d[i] = (*buf)[i];
      }
    }
    for (std::size_t i = 0; i < n; ++i) p->value[i] -= lr * d[i];
    p->zero_grad();
  }
}

template void sgd_step<float>(std::span<Param<float>* const>, const SgdConfig&, SgdState<float>&);
template void sgd_step<double>(std::span<Param<double>* const>, const SgdConfig&,
                               SgdState<double>&);

}  // namespace spnet
