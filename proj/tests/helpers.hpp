#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "spnet/architecture.hpp"
#include "spnet/network.hpp"
#include "spnet/slimmable.hpp"
#include "spnet/tensor.hpp"

namespace testutil {

using spnet::Shape;
using spnet::Tensor;

template <typename T>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(u(rng));
  return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::max(std::sqrt(std::max(na, nb)), 1e-12);
  return std::sqrt(num) / den;
}

/// Central differences of f over every entry of x.
inline std::vector<double> numeric_grad(std::vector<double>& x,
                                        const std::function<double()>& f, double eps = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f();
    x[i] = keep - eps;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

/// Direct 7-loop convolution, independent of the library kernels.
inline Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w,
                                 const std::vector<double>* bias, int stride, int pad,
                                 int groups) {
  const Shape xs = x.shape(), ws = w.shape();
  const int oh = (xs.h + 2 * pad - ws.h) / stride + 1;
  const int ow = (xs.w + 2 * pad - ws.w) / stride + 1;
  const int cin_g = xs.c / groups, cout_g = ws.n / groups;
  Tensor<double> y({xs.n, ws.n, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ws.n; ++o)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double s = bias ? (*bias)[o] : 0.0;
          const int g = o / cout_g;
          for (int c = 0; c < cin_g; ++c)
            for (int ki = 0; ki < ws.h; ++ki)
              for (int kj = 0; kj < ws.w; ++kj) {
                const int yi = i * stride + ki - pad, xj = j * stride + kj - pad;
                if (yi < 0 || yi >= xs.h || xj < 0 || xj >= xs.w) continue;
                s += x.at(n, g * cin_g + c, yi, xj) * w.at(o, c, ki, kj);
              }
          y.at(n, o, i, j) = s;
        }
  return y;
}

template <typename T>
std::vector<double> flat(const Tensor<T>& t) {
  return std::vector<double>(t.storage().begin(), t.storage().end());
}

/// Gives BN layers non-trivial parameters and statistics.
template <typename T>
void randomize_bn(spnet::Network<T>& net, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5), v(-0.3, 0.3);
  for (auto& layer : net.bns)
    for (auto& b : layer.banks)
      for (int c = 0; c < b.channels(); ++c) {
        b.gamma.value[c] = static_cast<T>(u(rng));
        b.beta.value[c] = static_cast<T>(v(rng));
        b.running_mean[c] = static_cast<T>(v(rng));
        b.running_var[c] = static_cast<T>(u(rng));
      }
}

// Full network whose unselected channels are silenced through BN (gamma =
// beta = 0), so eval-mode outputs equal the sub-network's, joins included.
template <typename T>
spnet::Network<T> masked_copy(const spnet::Network<T>& net, const std::vector<std::vector<int>>& ids) {
  using namespace spnet;
  Network<T> m = net;
  const Graph& g = net.graph();
  for (std::size_t b = 0; b < g.bns().size(); ++b) {
    const int s = g.bns()[b].space;
    if (g.spaces()[s].kind == SpaceKind::join) continue;
    std::vector<char> keep(g.spaces()[s].size, 0);
    for (int id : ids[s]) keep[id] = 1;
    for (BnState<T>& bank : m.bns[b].banks)
      for (int p = 0; p < bank.channels(); ++p) {
        if (keep[net.order[s][p]]) continue;
        bank.gamma.value[p] = T(0);
        bank.beta.value[p] = T(0);
      }
  }
  return m;
}

inline std::vector<std::vector<int>> random_selection(const spnet::Graph& g, std::mt19937_64& rng) {
  std::vector<std::vector<int>> ids(g.space_count());
  for (std::size_t s = 0; s < ids.size(); ++s) {
    const int n = g.spaces()[s].size;
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    if (g.spaces()[s].prunable) {
      std::shuffle(all.begin(), all.end(), rng);
      all.resize(std::uniform_int_distribution<int>(1, n)(rng));
    }
    ids[s] = all;
  }
  return ids;
}

inline spnet::ChannelPermutation random_permutation(const spnet::Graph& g, std::mt19937_64& rng) {
  using namespace spnet;
  ChannelPermutation p = ChannelPermutation::identity(g);
  for (std::size_t s = 0; s < g.space_count(); ++s) {
    const SpaceKind k = g.spaces()[s].kind;
    if (k == SpaceKind::input || k == SpaceKind::linear) continue;
    std::shuffle(p.order[s].begin(), p.order[s].end(), rng);
  }
  return p;
}

/// Random gamma and beta, then running statistics taken from one
/// training-mode pass over random inputs, the state a trained network is in.
template <typename T>
void calibrate_bn(spnet::Network<T>& net, std::mt19937_64& rng, int batch = 64) {
  std::uniform_real_distribution<double> u(0.5, 1.5), v(-0.3, 0.3);
  for (auto& layer : net.bns)
    for (auto& b : layer.banks) {
      for (int c = 0; c < b.channels(); ++c) {
        b.gamma.value[c] = static_cast<T>(u(rng));
        b.beta.value[c] = static_cast<T>(v(rng));
      }
      b.momentum = 1.0;
    }
  const spnet::ModelSpec& s = net.spec();
  const Tensor<T> x = random_tensor<T>({batch, s.in_channels, s.in_h, s.in_w}, rng);
  for (std::size_t k = 0; k < net.bank_count(); ++k) {
    spnet::Executor<T>(net, spnet::full_view(net, static_cast<int>(k))).forward(x, true);
  }
  for (auto& layer : net.bns)
    for (auto& b : layer.banks) b.momentum = 0.1;
}

}  // namespace testutil
