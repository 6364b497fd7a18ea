#include "spnet/network.hpp"

#include <cmath>
#include <random>

namespace spnet {

template <typename T>
Network<T>::Network(const ModelSpec& spec) : graph_(std::make_shared<const Graph>(spec)) {
  const Graph& g = *graph_;
  for (const ConvInfo& c : g.convs()) {
    ConvLayer<T> layer;
    layer.weight = Param<T>(Tensor<T>({c.out_channels, c.in_channels, c.kernel, c.kernel}),
                            ParamRole::conv_weight);
    layer.has_bias = c.bias;
    if (c.bias) layer.bias = Param<T>(Tensor<T>::vector(c.out_channels), ParamRole::conv_bias);
    convs.push_back(std::move(layer));
  }
  for (const BnInfo& b : g.bns()) {
    BnLayer<T> layer;
    layer.banks.emplace_back(b.channels);
    bns.push_back(std::move(layer));
  }
  for (const LinearInfo& l : g.linears()) {
    LinearLayer<T> layer;
    layer.weight =
        Param<T>(Tensor<T>({l.out_features, l.in_features, 1, 1}), ParamRole::linear_weight);
    layer.has_bias = l.bias;
    if (l.bias) layer.bias = Param<T>(Tensor<T>::vector(l.out_features), ParamRole::linear_bias);
    linears.push_back(std::move(layer));
  }
  order = ChannelPermutation::identity(g).order;
}

template <typename T>
void Network<T>::set_bank_count(std::size_t banks) {
  if (banks < 1) throw std::invalid_argument("bank count must be >= 1");
  for (BnLayer<T>& layer : bns) {
    BnState<T> base = layer.banks.front();
    base.gamma.zero_grad();
    base.beta.zero_grad();
    layer.banks.assign(banks, base);
  }
}

template <typename T>
std::vector<Param<T>*> Network<T>::parameters() {
  std::vector<Param<T>*> out;
  for (ConvLayer<T>& c : convs) {
    out.push_back(&c.weight);
    if (c.has_bias) out.push_back(&c.bias);
  }
  for (BnLayer<T>& b : bns) {
    for (BnState<T>& bank : b.banks) {
      out.push_back(&bank.gamma);
      out.push_back(&bank.beta);
    }
  }
  for (LinearLayer<T>& l : linears) {
    out.push_back(&l.weight);
    if (l.has_bias) out.push_back(&l.bias);
  }
  return out;
}

template <typename T>
void Network<T>::zero_grad() {
  for (Param<T>* p : parameters()) p->zero_grad();
}

template <typename T>
void Network<T>::set_embedded(WidthList widths, std::vector<PrunedArchitecture> archs) {
  if (widths.size() != archs.size()) {
    throw std::invalid_argument("embedded architectures must match the width list");
  }
  for (const PrunedArchitecture& a : archs) validate_architecture(*graph_, a);
  widths_ = std::move(widths);
  embedded_ = std::move(archs);
}

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
  Network<U> out(spec());
  auto copy = [](const Param<T>& src, Param<U>& dst) {
    dst.value = src.value.template cast<U>();
    dst.grad = Tensor<U>(dst.value.shape());
    dst.role = src.role;
  };
  for (std::size_t i = 0; i < convs.size(); ++i) {
    copy(convs[i].weight, out.convs[i].weight);
    if (convs[i].has_bias) copy(convs[i].bias, out.convs[i].bias);
  }
  for (std::size_t i = 0; i < bns.size(); ++i) {
    out.bns[i].banks.resize(bns[i].banks.size());
    for (std::size_t k = 0; k < bns[i].banks.size(); ++k) {
      const BnState<T>& s = bns[i].banks[k];
      BnState<U>& d = out.bns[i].banks[k];
      copy(s.gamma, d.gamma);
      copy(s.beta, d.beta);
      d.running_mean = s.running_mean.template cast<U>();
      d.running_var = s.running_var.template cast<U>();
      d.momentum = s.momentum;
      d.eps = s.eps;
    }
  }
  for (std::size_t i = 0; i < linears.size(); ++i) {
    copy(linears[i].weight, out.linears[i].weight);
    if (linears[i].has_bias) copy(linears[i].bias, out.linears[i].bias);
  }
  out.order = order;
  if (!embedded_.empty()) out.set_embedded(widths_, embedded_);
  return out;
}

template <typename T>
Network<T> build_model(const ModelSpec& spec, std::uint64_t seed) {
  Network<T> net(spec);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (ConvLayer<T>& c : net.convs) {
    const Shape& s = c.weight.value.shape();
    const double fan_in = static_cast<double>(s.c) * s.h * s.w;
    const double std = std::sqrt(2.0 / fan_in);
    for (std::size_t i = 0; i < c.weight.value.size(); ++i) {
      c.weight.value[i] = static_cast<T>(normal(rng) * std);
    }
  }
  for (LinearLayer<T>& l : net.linears) {
    const double std = std::sqrt(1.0 / l.weight.value.shape().c);
    for (std::size_t i = 0; i < l.weight.value.size(); ++i) {
      l.weight.value[i] = static_cast<T>(normal(rng) * std);
    }
  }
  return net;
}

template class Network<float>;
template class Network<double>;
template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;
template Network<float> build_model<float>(const ModelSpec&, std::uint64_t);
template Network<double> build_model<double>(const ModelSpec&, std::uint64_t);

}  // namespace spnet
