#include "spnet/graph.hpp"

#include <algorithm>
#include <numeric>

namespace spnet {

namespace {

class Builder {
 public:
  Builder(const ModelSpec& spec, std::vector<GraphOp>& ops, std::vector<ChannelSpace>& spaces,
          std::vector<ValueInfo>& values, std::vector<ConvInfo>& convs, std::vector<BnInfo>& bns,
          std::vector<LinearInfo>& linears)
      : spec_(spec), ops_(ops), spaces_(spaces), values_(values), convs_(convs), bns_(bns),
        linears_(linears) {
    spaces_.push_back({spec.in_channels, SpaceKind::input, -1, -1, false, -1});
    values_.push_back({0, spec.in_h, spec.in_w});
  }

  int emit(const LayerSpec& l, int slot, int block) {
    const ValueInfo in = values_[slot];
    GraphOp op;
    op.block = block;
    op.input = slot;
    op.in_h = in.h;
    op.in_w = in.w;
    op.in_space = in.space;
    op.space = in.space;
    op.kernel = l.kernel;
    op.stride = l.stride;
    op.padding = l.padding;
    op.bias = l.bias;
    const int index = static_cast<int>(ops_.size());
    const int channels = spaces_[in.space].size;
    const std::string where = spec_.name + " block " + std::to_string(block);
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::depthwise_conv: {
        op.kind = OpKind::conv;
        op.depthwise = l.kind == LayerKind::depthwise_conv;
        op.name = where + (op.depthwise ? " dwconv" : " conv") + std::to_string(index);
        if (op.depthwise && l.out_channels != channels) {
          throw DimensionError(op.name + ": depthwise conv declares " +
                               std::to_string(l.out_channels) + " channels but receives " +
                               std::to_string(channels));
        }
        ConvGeometry g{channels, in.h, in.w, l.out_channels, l.kernel, l.stride, l.padding,
                       op.depthwise ? channels : 1};
        g.validate(op.name);
        op.out_h = g.out_h();
        op.out_w = g.out_w();
        op.param = static_cast<int>(convs_.size());
        if (!op.depthwise) {
          op.space = static_cast<int>(spaces_.size());
          spaces_.push_back({l.out_channels, SpaceKind::conv, index, -1, false, -1});
        }
        convs_.push_back({index, op.depthwise ? 1 : channels, l.out_channels, l.kernel,
                          op.depthwise, l.bias});
        break;
      }
      case LayerKind::bn: {
        op.kind = OpKind::bn;
        op.name = where + " bn" + std::to_string(index);
        op.out_h = in.h;
        op.out_w = in.w;
        op.param = static_cast<int>(bns_.size());
        bns_.push_back({index, in.space, channels});
        ChannelSpace& s = spaces_[in.space];
        const bool after_producer =
            slot > 0 && ops_[slot - 1].kind == OpKind::conv && !ops_[slot - 1].depthwise &&
            ops_[slot - 1].space == in.space;
        if (after_producer && s.score_bn < 0) {
          s.score_bn = op.param;
          s.prunable = true;
        }
        break;
      }
      case LayerKind::activation:
        op.kind = OpKind::activation;
        op.name = where + " act" + std::to_string(index);
        op.act = l.activation;
        op.out_h = in.h;
        op.out_w = in.w;
        break;
      case LayerKind::pool:
        op.kind = OpKind::pool;
        op.pool = l.pool;
        op.name = where + " pool" + std::to_string(index);
        if (l.pool == PoolKind::global_avg) {
          op.out_h = op.out_w = 1;
        } else {
          if (l.kernel > in.h + 2 * l.padding || l.kernel > in.w + 2 * l.padding) {
            throw DimensionError(op.name + ": window " + std::to_string(l.kernel) +
                                 " larger than input " + std::to_string(in.h) + "x" +
                                 std::to_string(in.w));
          }
          op.out_h = (in.h + 2 * l.padding - l.kernel) / l.stride + 1;
          op.out_w = (in.w + 2 * l.padding - l.kernel) / l.stride + 1;
        }
        break;
      case LayerKind::linear: {
        op.kind = OpKind::linear;
        op.name = where + " linear" + std::to_string(index);
        op.out_h = op.out_w = 1;
        op.param = static_cast<int>(linears_.size());
        op.space = static_cast<int>(spaces_.size());
        spaces_.push_back({l.out_channels, SpaceKind::linear, index, -1, false, -1});
        linears_.push_back({index, in.space, in.h * in.w, channels * in.h * in.w, l.out_channels,
                            l.bias});
        break;
      }
    }
    return push(std::move(op));
  }

  int join(int main, int shortcut, int block) {
    const ValueInfo& m = values_[main];
    const ValueInfo& s = values_[shortcut];
    GraphOp op;
    op.kind = OpKind::join;
    op.block = block;
    op.name = spec_.name + " block " + std::to_string(block) + " join";
    if (spaces_[m.space].size != spaces_[s.space].size || m.h != s.h || m.w != s.w) {
      throw DimensionError(op.name + ": main path (" + std::to_string(spaces_[m.space].size) +
                           "x" + std::to_string(m.h) + "x" + std::to_string(m.w) +
                           ") and shortcut (" + std::to_string(spaces_[s.space].size) + "x" +
                           std::to_string(s.h) + "x" + std::to_string(s.w) +
                           ") are incompatible");
    }
    op.input = main;
    op.shortcut = shortcut;
    op.in_space = m.space;
    op.shortcut_space = s.space;
    op.in_h = op.out_h = m.h;
    op.in_w = op.out_w = m.w;
    const int index = static_cast<int>(ops_.size());
    op.space = static_cast<int>(spaces_.size());
    spaces_.push_back({spaces_[m.space].size, SpaceKind::join, index, -1, false, -1});
    return push(std::move(op));
  }

 private:
  int push(GraphOp op) {
    op.output = static_cast<int>(ops_.size()) + 1;
    values_.push_back({op.space, op.out_h, op.out_w});
    ops_.push_back(std::move(op));
    return ops_.back().output;
  }

  const ModelSpec& spec_;
  std::vector<GraphOp>& ops_;
  std::vector<ChannelSpace>& spaces_;
  std::vector<ValueInfo>& values_;
  std::vector<ConvInfo>& convs_;
  std::vector<BnInfo>& bns_;
  std::vector<LinearInfo>& linears_;
};

}  // namespace

Graph::Graph(const ModelSpec& spec) : spec_(spec) {
  spec_.validate();
  Builder b(spec_, ops_, spaces_, values_, convs_, bns_, linears_);
  int slot = 0;
  for (std::size_t bi = 0; bi < spec_.blocks.size(); ++bi) {
    const BlockSpec& block = spec_.blocks[bi];
    const int block_in = slot;
    const int idx = static_cast<int>(bi);
    for (const LayerSpec& l : block.layers) {
      if (!l.follows_join) slot = b.emit(l, slot, idx);
    }
    if (block.has_join) {
      int shortcut = block_in;
      for (const LayerSpec& l : block.shortcut) shortcut = b.emit(l, shortcut, idx);
      slot = b.join(slot, shortcut, idx);
      for (const LayerSpec& l : block.layers) {
        if (l.follows_join) slot = b.emit(l, slot, idx);
      }
    }
  }
  if (ops_.empty() || ops_.back().kind != OpKind::linear) {
    throw DimensionError(spec_.name + ": model must end in a linear classifier");
  }
  if (spaces_[ops_.back().space].size != spec_.num_classes) {
    throw DimensionError(spec_.name + ": classifier has " +
                         std::to_string(spaces_[ops_.back().space].size) + " outputs but " +
                         std::to_string(spec_.num_classes) + " classes declared");
  }
  build_chains();
}

void Graph::build_chains() {
  std::vector<int> parent(spaces_.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  auto unite = [&](int a, int b) { parent[find(a)] = find(b); };
  std::vector<int> join_ops;
  for (std::size_t i = 0; i < ops_.size(); ++i) {
    const GraphOp& op = ops_[i];
    if (op.kind != OpKind::join) continue;
    unite(op.in_space, op.space);
    unite(op.shortcut_space, op.space);
    join_ops.push_back(static_cast<int>(i));
  }
  std::vector<int> chain_of_root(spaces_.size(), -1);
  for (int j : join_ops) {
    const int r = find(ops_[j].space);
    if (chain_of_root[r] < 0) {
      chain_of_root[r] = static_cast<int>(chains_.size());
      chains_.emplace_back();
    }
    chains_[chain_of_root[r]].joins.push_back(j);
  }
  for (std::size_t s = 0; s < spaces_.size(); ++s) {
    const int r = find(static_cast<int>(s));
    if (chain_of_root[r] >= 0) {
      spaces_[s].chain = chain_of_root[r];
      chains_[chain_of_root[r]].spaces.push_back(static_cast<int>(s));
    }
  }
  for (ResidualChain& c : chains_) {
    int root = ops_[c.joins.front()].shortcut_space;
    while (spaces_[root].kind == SpaceKind::join) root = ops_[spaces_[root].producer].shortcut_space;
    c.root = root;
  }
}

std::vector<int> Graph::consumers(int space) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < ops_.size(); ++i) {
    const GraphOp& op = ops_[i];
    if ((op.kind == OpKind::conv && !op.depthwise) || op.kind == OpKind::linear) {
      if (op.in_space == space) out.push_back(static_cast<int>(i));
    }
  }
  return out;
}

std::vector<int> Graph::channel_members(int space) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < ops_.size(); ++i) {
    const GraphOp& op = ops_[i];
    if ((op.kind == OpKind::conv || op.kind == OpKind::bn) && op.space == space) {
      out.push_back(static_cast<int>(i));
    }
  }
  return out;
}

std::vector<int> Graph::join_readers(int space) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < ops_.size(); ++i) {
    const GraphOp& op = ops_[i];
    if (op.kind == OpKind::join && (op.in_space == space || op.shortcut_space == space)) {
      out.push_back(static_cast<int>(i));
    }
  }
  return out;
}

std::vector<int> Graph::full_counts() const {
  std::vector<int> out(spaces_.size());
  for (std::size_t s = 0; s < spaces_.size(); ++s) out[s] = spaces_[s].size;
  return out;
}

}  // namespace spnet
