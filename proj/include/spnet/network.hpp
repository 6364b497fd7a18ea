#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "spnet/architecture.hpp"
#include "spnet/graph.hpp"
#include "spnet/ops.hpp"

namespace spnet {

template <typename T>
struct ConvLayer {
  Param<T> weight;  // (out, in / groups, k, k)
  Param<T> bias;    // (out) when has_bias
  bool has_bias = false;
};

/// One BN layer; `banks` holds one private state per switchable width.
template <typename T>
struct BnLayer {
  std::vector<BnState<T>> banks;
};

template <typename T>
struct LinearLayer {
  Param<T> weight;  // (out, in_features)
  Param<T> bias;
  bool has_bias = true;
};

/// Materialized model: parameters laid out per the compiled graph at full
/// width, plus per-space channel orders and the embedded sub-network table.
///
/// `order[s][p]` is the original channel id stored at physical position p of
/// space s. It starts as the identity and is updated by scs_apply; residual
/// joins use it to line channels of the two paths up by original id.
template <typename T>
class Network {
 public:
  explicit Network(const ModelSpec& spec);

  const ModelSpec& spec() const { return graph_->spec(); }
  const Graph& graph() const { return *graph_; }
  std::shared_ptr<const Graph> graph_ptr() const { return graph_; }

  std::size_t bank_count() const { return bns.empty() ? 1 : bns.front().banks.size(); }
  /// Switchable BN: resizes every BN layer to `banks` private states, each a
  /// copy of the current bank 0.
  void set_bank_count(std::size_t banks);

  /// Every trainable parameter, all banks included.
  std::vector<Param<T>*> parameters();
  void zero_grad();

  /// Embedded sub-networks (one per width, the last is the full network) and
  /// the width list they correspond to. Empty until embed_architectures.
  const std::vector<PrunedArchitecture>& embedded() const { return embedded_; }
  const WidthList& widths() const { return widths_; }
  void set_embedded(WidthList widths, std::vector<PrunedArchitecture> archs);

  template <typename U>
  Network<U> cast() const;

  std::vector<ConvLayer<T>> convs;
  std::vector<BnLayer<T>> bns;
  std::vector<LinearLayer<T>> linears;
  std::vector<std::vector<int>> order;

 private:
  std::shared_ptr<const Graph> graph_;
  WidthList widths_;
  std::vector<PrunedArchitecture> embedded_;
};

/// He (fan-in) normal init for convs, N(0, 1/fan_in) for linears, zero
/// biases, BN gamma = 1 and beta = 0. Deterministic in `seed`.
template <typename T>
Network<T> build_model(const ModelSpec& spec, std::uint64_t seed);

/// Switchable batch norm: k private BN banks with identical initial values.
template <typename T>
void configure_switchable_bn(Network<T>& net, std::size_t banks) {
  net.set_bank_count(banks);
}

extern template class Network<float>;
extern template class Network<double>;

}  // namespace spnet
