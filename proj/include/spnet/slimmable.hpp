#pragma once

#include <span>
#include <vector>

#include "spnet/architecture.hpp"
#include "spnet/network.hpp"

namespace spnet {

/// Resolved channel selection of a sub-network. For every space it lists the
/// active physical positions in ascending order; join spaces hold the union
/// of their two inputs, looked up by original channel id.
struct SubNetworkView {
  std::vector<int> counts;
  std::vector<std::vector<int>> positions;
  std::vector<char> contiguous;      // positions == {0, ..., counts - 1}
  std::vector<JoinMetadata> joins;   // indexed by op; default for non-join ops
  int bank = 0;
  /// Pre-sort execution: activations live in full-width buffers at their
  /// original positions and every op index-gathers its inputs and weights.
  bool gather = false;
};

/// Prefix view: the first counts[s] positions of every non-join space.
template <typename T>
SubNetworkView slice_view(const Network<T>& net, const PrunedArchitecture& arch, int bank);

template <typename T>
SubNetworkView full_view(const Network<T>& net, int bank = 0);

/// View of the embedded architecture `index` using BN bank `index` when the
/// network has one bank per width, bank 0 otherwise.
template <typename T>
SubNetworkView embedded_view(const Network<T>& net, std::size_t index);

/// View over explicit original-id selections, one list per space. Entries for
/// join spaces are ignored (derived); input and linear spaces must be full.
/// A selection that keeps every channel runs as a plain full view.
template <typename T>
SubNetworkView gather_view(const Network<T>& net, const std::vector<std::vector<int>>& ids,
                           int bank);

/// The same selection executed over compact activations (trainable).
template <typename T>
SubNetworkView selection_view(const Network<T>& net, const std::vector<std::vector<int>>& ids,
                              int bank);

/// Counts of a prefix selection with join spaces replaced by their actual
/// union size under the network's channel orders.
template <typename T>
std::vector<int> resolve_counts(const Network<T>& net, const std::vector<int>& counts);

/// Runs one view of a network. Activations and caches are owned by the
/// executor, so concurrent read-only inference needs one executor per thread.
template <typename T>
class Executor {
 public:
  Executor(Network<T>& net, SubNetworkView view);

  /// Input is (batch, in_channels, h, w); returns (batch, classes, 1, 1).
  /// Training mode uses batch statistics and updates the active bank's
  /// running statistics for the active channels.
  const Tensor<T>& forward(const Tensor<T>& input, bool training);

  /// Accumulates parameter gradients from dL/dlogits. Requires the preceding
  /// forward to be a training-mode forward of a non-gather view.
  void backward(const Tensor<T>& grad_logits);

  const SubNetworkView& view() const { return view_; }

 private:
  struct Weights {
    const T* w = nullptr;
    std::size_t stride = 0;
    const T* bias = nullptr;
    bool copied = false;
    std::vector<T> wbuf;
    std::vector<T> bbuf;
  };

  const Tensor<T>& fetch(int slot, Tensor<T>& scratch);
  void store(int slot, Tensor<T>&& compact);
  Weights conv_weights(const GraphOp& op);
  Weights linear_weights(const GraphOp& op);
  void forward_op(std::size_t index, bool training);
  Tensor<T>& grad_of(int slot);

  Network<T>& net_;
  SubNetworkView view_;
  int batch_ = 0;
  bool trained_ = false;
  std::vector<Tensor<T>> values_;
  std::vector<Tensor<T>> grads_;
  std::vector<std::vector<double>> bn_mean_;
  std::vector<std::vector<double>> bn_var_;
  std::vector<std::vector<std::size_t>> argmax_;
  Tensor<T> scratch_a_;
  Tensor<T> scratch_b_;
};

template <typename T>
Tensor<T> predict(Network<T>& net, const SubNetworkView& view, const Tensor<T>& input);

/// Residual join over union-packed channels. main carries |index_main|
/// channels in index_main order, shortcut likewise; the result carries
/// |index_union| channels in index_union order.
template <typename T>
Tensor<T> zpm_join(const Tensor<T>& main, const Tensor<T>& shortcut, const JoinMetadata& meta);

/// Same join returned over all meta.channels original ids (unselected ids 0).
template <typename T>
Tensor<T> zpm_join_dense(const Tensor<T>& main, const Tensor<T>& shortcut,
                         const JoinMetadata& meta);

/// Descending stable sort of one score vector: returns positions.
std::vector<int> sort_by_score(std::span<const double> scores);

/// Per-space descending sort; spaces with an empty score vector keep the
/// identity. Throws std::invalid_argument on a length mismatch.
ChannelPermutation scs_compute(const Graph& graph,
                               const std::vector<std::vector<double>>& scores);

/// Reorders every space per `perm`: producing filters, depthwise filters,
/// BN parameters and statistics of all banks, consumer input columns and the
/// network's channel order. Full-width outputs are unchanged.
template <typename T>
void scs_apply(Network<T>& net, const ChannelPermutation& perm);

/// Channel sort for a network carrying embedded architectures. Spaces tied
/// through residual joins share one order (the chain root's under
/// prioritize_shortcut, the current one under uniform and none). Under zpm
/// every space sorts independently and join spaces are ordered so that each
/// embedded width's union is a prefix whenever the counts are nested.
/// `scores` is indexed by space and by current physical position.
template <typename T>
ChannelPermutation plan_channel_sort(const Network<T>& net,
                                     const std::vector<std::vector<double>>& scores,
                                     JoinPolicy policy);

}  // namespace spnet
