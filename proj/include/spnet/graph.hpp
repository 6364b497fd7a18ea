#pragma once

#include <string>
#include <vector>

#include "spnet/model_spec.hpp"

namespace spnet {

/// A channel space is the set of channels a tensor is laid out over. Every
/// non-depthwise conv and every linear layer opens a new space; depthwise
/// convs, BN, activations and pools stay in their input's space; every
/// residual join opens a join space over the same original channel ids as
/// its two inputs. Pruning, sorting and slicing all act per space.
enum class SpaceKind { input, conv, join, linear };

struct ChannelSpace {
  int size = 0;
  SpaceKind kind = SpaceKind::input;
  int producer = -1;   // op index; -1 for the network input
  int score_bn = -1;   // BN whose gamma ranks this space's channels
  bool prunable = false;
  int chain = -1;      // residual chain this space belongs to
};

enum class OpKind { conv, bn, activation, pool, linear, join };

struct GraphOp {
  OpKind kind = OpKind::conv;
  std::string name;
  int block = 0;
  int input = -1;     // value slot
  int shortcut = -1;  // join only
  int output = -1;    // value slot (always op index + 1)
  int in_space = -1;  // conv / linear input space; join main-path space
  int shortcut_space = -1;
  int space = -1;     // output space
  int param = -1;     // index into the conv / bn / linear table
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  int kernel = 1, stride = 1, padding = 0;
  bool depthwise = false;
  bool bias = false;
  Activation act = Activation::none;
  PoolKind pool = PoolKind::max;
};

struct ValueInfo {
  int space = 0;
  int h = 0;
  int w = 0;
};

struct ConvInfo {
  int op = -1;
  int in_channels = 0;   // full input channels (1 for depthwise)
  int out_channels = 0;
  int kernel = 1;
  bool depthwise = false;
  bool bias = false;
};

struct BnInfo {
  int op = -1;
  int space = -1;
  int channels = 0;
};

struct LinearInfo {
  int op = -1;
  int in_space = -1;
  int plane = 1;  // spatial positions per input channel in the flattened input
  int in_features = 0;
  int out_features = 0;
  bool bias = true;
};

/// Spaces tied together through residual joins. `root` is the conv space the
/// shortcut chain starts from; `spaces` lists every member (root, main-path
/// outputs, join spaces) in topological order.
struct ResidualChain {
  int root = -1;
  std::vector<int> spaces;
  std::vector<int> joins;  // op indices
};

class Graph {
 public:
  explicit Graph(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<GraphOp>& ops() const { return ops_; }
  const std::vector<ChannelSpace>& spaces() const { return spaces_; }
  const std::vector<ValueInfo>& values() const { return values_; }
  const std::vector<ConvInfo>& convs() const { return convs_; }
  const std::vector<BnInfo>& bns() const { return bns_; }
  const std::vector<LinearInfo>& linears() const { return linears_; }
  const std::vector<ResidualChain>& chains() const { return chains_; }

  int output_slot() const { return static_cast<int>(ops_.size()); }
  int output_space() const { return values_.back().space; }
  std::size_t space_count() const { return spaces_.size(); }

  /// Ops whose weights carry one input column (group) per channel of `space`:
  /// non-depthwise convs and linears that read it.
  std::vector<int> consumers(int space) const;
  /// Ops with per-channel parameters living in `space`: the producing conv,
  /// depthwise convs and BN layers.
  std::vector<int> channel_members(int space) const;
  /// Join ops reading `space` as their main or shortcut input.
  std::vector<int> join_readers(int space) const;

  /// Full-width channel count of every space.
  std::vector<int> full_counts() const;

 private:
  void build_chains();

  ModelSpec spec_;
  std::vector<GraphOp> ops_;
  std::vector<ChannelSpace> spaces_;
  std::vector<ValueInfo> values_;
  std::vector<ConvInfo> convs_;
  std::vector<BnInfo> bns_;
  std::vector<LinearInfo> linears_;
  std::vector<ResidualChain> chains_;
};

}  // namespace spnet
