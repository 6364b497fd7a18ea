#include "spnet/slimmable.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace spnet {

namespace {

std::vector<int> inverse_of(const std::vector<int>& order) {
  std::vector<int> inv(order.size());
  for (std::size_t p = 0; p < order.size(); ++p) inv[order[p]] = static_cast<int>(p);
  return inv;
}

std::vector<int> iota_vec(int n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Completes a view from the positions of every non-join space.
template <typename T>
SubNetworkView build_view(const Network<T>& net, std::vector<std::vector<int>> positions,
                          int bank) {
  const Graph& g = net.graph();
  const auto& spaces = g.spaces();
  if (bank < 0 || static_cast<std::size_t>(bank) >= net.bank_count()) {
    throw std::out_of_range("BN bank " + std::to_string(bank) + " outside [0, " +
                            std::to_string(net.bank_count()) + ")");
  }
  SubNetworkView view;
  view.bank = bank;
  view.positions = std::move(positions);
  view.joins.resize(g.ops().size());
  for (std::size_t s = 0; s < spaces.size(); ++s) {
    if (spaces[s].kind == SpaceKind::join) continue;
    std::vector<int>& pos = view.positions[s];
    std::sort(pos.begin(), pos.end());
    if (pos.empty() || pos.front() < 0 || pos.back() >= spaces[s].size ||
        std::adjacent_find(pos.begin(), pos.end()) != pos.end()) {
      throw DimensionError("space " + std::to_string(s) + ": selection of " +
                           std::to_string(pos.size()) + " channels is not a valid subset of " +
                           std::to_string(spaces[s].size));
    }
    const bool fixed = spaces[s].kind == SpaceKind::input || spaces[s].kind == SpaceKind::linear;
    if (fixed && static_cast<int>(pos.size()) != spaces[s].size) {
      throw DimensionError("space " + std::to_string(s) + " cannot be pruned");
    }
  }
  for (std::size_t i = 0; i < g.ops().size(); ++i) {
    const GraphOp& op = g.ops()[i];
    if (op.kind != OpKind::join) continue;
    auto ids_of = [&](int s) {
      std::vector<int> ids;
      for (int p : view.positions[s]) ids.push_back(net.order[s][p]);
      return ids;
    };
    const JoinOrders orders{net.order[op.in_space], net.order[op.shortcut_space],
                            net.order[op.space]};
    JoinMetadata meta = build_join_metadata(spaces[op.space].size, ids_of(op.in_space),
                                            ids_of(op.shortcut_space), &orders);
    const std::vector<int> inv = inverse_of(net.order[op.space]);
    std::vector<int>& pos = view.positions[op.space];
    pos.clear();
    for (int id : meta.index_union) pos.push_back(inv[id]);
    view.joins[i] = std::move(meta);
  }
  view.counts.resize(spaces.size());
  view.contiguous.resize(spaces.size());
  for (std::size_t s = 0; s < spaces.size(); ++s) {
    const auto& pos = view.positions[s];
    view.counts[s] = static_cast<int>(pos.size());
    view.contiguous[s] = pos.back() == static_cast<int>(pos.size()) - 1;
  }
  return view;
}

template <typename T>
void permute_rows(Tensor<T>& t, const std::vector<int>& perm, std::size_t row) {
  if (t.empty()) return;
  std::vector<T> old = t.storage();
  for (std::size_t k = 0; k < perm.size(); ++k) {
    std::memcpy(t.data() + k * row, old.data() + perm[k] * row, row * sizeof(T));
  }
}

// Reorders `perm.size()` column blocks of width `block` inside each of `rows`.
template <typename T>
void permute_columns(Tensor<T>& t, const std::vector<int>& perm, std::size_t rows,
                     std::size_t block) {
  if (t.empty()) return;
  const std::size_t row = perm.size() * block;
  std::vector<T> tmp(row);
  for (std::size_t r = 0; r < rows; ++r) {
    T* base = t.data() + r * row;
    for (std::size_t k = 0; k < perm.size(); ++k) {
      std::memcpy(tmp.data() + k * block, base + perm[k] * block, block * sizeof(T));
    }
    std::memcpy(base, tmp.data(), row * sizeof(T));
  }
}

template <typename T>
void permute_param(Param<T>& p, const std::vector<int>& perm, std::size_t row) {
  permute_rows(p.value, perm, row);
  permute_rows(p.grad, perm, row);
}

}  // namespace

template <typename T>
SubNetworkView slice_view(const Network<T>& net, const PrunedArchitecture& arch, int bank) {
  const Graph& g = net.graph();
  validate_architecture(g, arch);
  std::vector<std::vector<int>> pos(g.space_count());
  for (std::size_t s = 0; s < pos.size(); ++s) {
    if (g.spaces()[s].kind != SpaceKind::join) pos[s] = iota_vec(arch.counts[s]);
  }
  return build_view(net, std::move(pos), bank);
}

template <typename T>
SubNetworkView full_view(const Network<T>& net, int bank) {
  PrunedArchitecture arch;
  arch.counts = net.graph().full_counts();
  return slice_view(net, arch, bank);
}

template <typename T>
SubNetworkView embedded_view(const Network<T>& net, std::size_t index) {
  if (index >= net.embedded().size()) {
    throw std::out_of_range("no embedded architecture " + std::to_string(index) + " (have " +
                            std::to_string(net.embedded().size()) + ")");
  }
  const int bank = net.bank_count() > index ? static_cast<int>(index) : 0;
  return slice_view(net, net.embedded()[index], bank);
}

template <typename T>
SubNetworkView selection_view(const Network<T>& net, const std::vector<std::vector<int>>& ids,
                              int bank) {
  const Graph& g = net.graph();
  if (ids.size() != g.space_count()) {
    throw DimensionError("selection covers " + std::to_string(ids.size()) + " spaces, graph has " +
                         std::to_string(g.space_count()));
  }
  std::vector<std::vector<int>> pos(g.space_count());
  for (std::size_t s = 0; s < pos.size(); ++s) {
    if (g.spaces()[s].kind == SpaceKind::join) continue;
    const std::vector<int> inv = inverse_of(net.order[s]);
    for (int id : ids[s]) {
      if (id < 0 || id >= g.spaces()[s].size) {
        throw DimensionError("space " + std::to_string(s) + ": channel id " + std::to_string(id) +
                             " out of range");
      }
      pos[s].push_back(inv[id]);
    }
  }
  return build_view(net, std::move(pos), bank);
}

template <typename T>
SubNetworkView gather_view(const Network<T>& net, const std::vector<std::vector<int>>& ids,
                           int bank) {
  SubNetworkView view = selection_view(net, ids, bank);
  // a full selection has nothing to gather
  const auto& spaces = net.graph().spaces();
  for (std::size_t s = 0; s < spaces.size(); ++s) {
    if (view.counts[s] < spaces[s].size) view.gather = true;
  }
  return view;
}

template <typename T>
std::vector<int> resolve_counts(const Network<T>& net, const std::vector<int>& counts) {
  PrunedArchitecture arch;
  arch.counts = counts;
  return slice_view(net, arch, 0).counts;
}

template <typename T>
Tensor<T> zpm_join_dense(const Tensor<T>& main, const Tensor<T>& shortcut,
                         const JoinMetadata& meta) {
  meta.validate();
  const Shape& ms = main.shape();
  const Shape& ss = shortcut.shape();
  if (ms.c != static_cast<int>(meta.index_main.size()) ||
      ss.c != static_cast<int>(meta.index_shortcut.size()) || ms.n != ss.n || ms.h != ss.h ||
      ms.w != ss.w) {
    throw DimensionError("zpm join: main " + ms.str() + " / shortcut " + ss.str() +
                         " do not match metadata (" + std::to_string(meta.index_main.size()) +
                         ", " + std::to_string(meta.index_shortcut.size()) + " channels)");
  }
  const std::size_t plane = ms.plane();
  Tensor<T> dense({ms.n, meta.channels, ms.h, ms.w});
  for (int n = 0; n < ms.n; ++n) {
    T* d = dense.data() + static_cast<std::size_t>(n) * meta.channels * plane;
    for (std::size_t k = 0; k < meta.index_main.size(); ++k) {
      const T* src = main.data() + (static_cast<std::size_t>(n) * ms.c + k) * plane;
      T* dst = d + meta.index_main[k] * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
    }
    for (std::size_t k = 0; k < meta.index_shortcut.size(); ++k) {
      const T* src = shortcut.data() + (static_cast<std::size_t>(n) * ss.c + k) * plane;
      T* dst = d + meta.index_shortcut[k] * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
    }
  }
  return dense;
}

template <typename T>
Tensor<T> zpm_join(const Tensor<T>& main, const Tensor<T>& shortcut, const JoinMetadata& meta) {
  const Tensor<T> dense = zpm_join_dense(main, shortcut, meta);
  const Shape& ms = main.shape();
  const std::size_t plane = ms.plane();
  const int u = static_cast<int>(meta.index_union.size());
  Tensor<T> out({ms.n, u, ms.h, ms.w});
  for (int n = 0; n < ms.n; ++n) {
    for (int k = 0; k < u; ++k) {
      std::memcpy(out.data() + (static_cast<std::size_t>(n) * u + k) * plane,
                  dense.data() +
                      (static_cast<std::size_t>(n) * meta.channels + meta.index_union[k]) * plane,
                  plane * sizeof(T));
    }
  }
  return out;
}

std::vector<int> sort_by_score(std::span<const double> scores) {
  std::vector<int> order = iota_vec(static_cast<int>(scores.size()));
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

ChannelPermutation scs_compute(const Graph& graph,
                               const std::vector<std::vector<double>>& scores) {
  if (scores.size() != graph.space_count()) {
    throw std::invalid_argument("scores cover " + std::to_string(scores.size()) +
                                " spaces, graph has " + std::to_string(graph.space_count()));
  }
  ChannelPermutation perm = ChannelPermutation::identity(graph);
  for (std::size_t s = 0; s < scores.size(); ++s) {
    if (scores[s].empty()) continue;
    if (static_cast<int>(scores[s].size()) != graph.spaces()[s].size) {
      throw std::invalid_argument("space " + std::to_string(s) + ": " +
                                  std::to_string(scores[s].size()) + " scores for " +
                                  std::to_string(graph.spaces()[s].size) + " channels");
    }
    perm.order[s] = sort_by_score(scores[s]);
  }
  return perm;
}

template <typename T>
void scs_apply(Network<T>& net, const ChannelPermutation& perm) {
  const Graph& g = net.graph();
  perm.validate(g);
  for (std::size_t s = 0; s < g.space_count(); ++s) {
    const std::vector<int>& p = perm.order[s];
    bool identity = true;
    for (std::size_t k = 0; k < p.size() && identity; ++k) identity = p[k] == static_cast<int>(k);
    if (identity) continue;
    const SpaceKind kind = g.spaces()[s].kind;
    if (kind == SpaceKind::input || kind == SpaceKind::linear) {
      throw std::invalid_argument("space " + std::to_string(s) +
                                  " (network input or classifier output) cannot be reordered");
    }
    const int space = static_cast<int>(s);
    for (const GraphOp& op : g.ops()) {
      if (op.kind == OpKind::conv) {
        ConvLayer<T>& c = net.convs[op.param];
        const Shape& ws = c.weight.value.shape();
        if (op.space == space) {
          permute_param(c.weight, p, static_cast<std::size_t>(ws.c) * ws.h * ws.w);
          if (c.has_bias) permute_param(c.bias, p, 1);
        }
        if (!op.depthwise && op.in_space == space) {
          const std::size_t kk = static_cast<std::size_t>(ws.h) * ws.w;
          permute_columns(c.weight.value, p, ws.n, kk);
          permute_columns(c.weight.grad, p, ws.n, kk);
        }
      } else if (op.kind == OpKind::bn && op.space == space) {
        for (BnState<T>& bank : net.bns[op.param].banks) {
          permute_param(bank.gamma, p, 1);
          permute_param(bank.beta, p, 1);
          permute_rows(bank.running_mean, p, 1);
          permute_rows(bank.running_var, p, 1);
        }
      } else if (op.kind == OpKind::linear && op.in_space == space) {
        LinearLayer<T>& l = net.linears[op.param];
        const std::size_t plane = g.linears()[op.param].plane;
        const std::size_t rows = l.weight.value.shape().n;
        permute_columns(l.weight.value, p, rows, plane);
        permute_columns(l.weight.grad, p, rows, plane);
      }
    }
    std::vector<int> old = net.order[s];
    for (std::size_t k = 0; k < p.size(); ++k) net.order[s][k] = old[p[k]];
  }
}

template <typename T>
ChannelPermutation plan_channel_sort(const Network<T>& net,
                                     const std::vector<std::vector<double>>& scores,
                                     JoinPolicy policy) {
  const Graph& g = net.graph();
  ChannelPermutation perm = scs_compute(g, scores);
  const auto& spaces = g.spaces();
  const std::size_t S = g.space_count();

  // Aligns space s to the given target order of original ids.
  auto align = [&](std::size_t s, const std::vector<int>& target_ids) {
    const std::vector<int> inv = inverse_of(net.order[s]);
    for (std::size_t k = 0; k < target_ids.size(); ++k) perm.order[s][k] = inv[target_ids[k]];
  };
  auto new_ids = [&](std::size_t s) {
    std::vector<int> ids(spaces[s].size);
    for (int k = 0; k < spaces[s].size; ++k) ids[k] = net.order[s][perm.order[s][k]];
    return ids;
  };

  if (policy != JoinPolicy::zpm) {
    for (const ResidualChain& chain : g.chains()) {
      if (policy != JoinPolicy::prioritize_shortcut) {
        perm.order[chain.root] = iota_vec(spaces[chain.root].size);
      }
      const std::vector<int> target = new_ids(chain.root);
      for (int s : chain.spaces) align(s, target);
    }
    return perm;
  }

  // Scores by original id; a join channel scores the max of its inputs.
  std::vector<std::vector<double>> id_score(S);
  for (std::size_t s = 0; s < S; ++s) {
    id_score[s].assign(spaces[s].size, 0.0);
    if (scores[s].empty()) continue;
    for (int p = 0; p < spaces[s].size; ++p) id_score[s][net.order[s][p]] = scores[s][p];
  }
  const auto& embedded = net.embedded();
  const std::size_t widths = embedded.size();
  // unions[s][i]: active ids of join space s at embedded width i.
  std::vector<std::vector<std::vector<bool>>> unions(S);
  for (const GraphOp& op : g.ops()) {
    if (op.kind != OpKind::join) continue;
    const int js = op.space;
    const int C = spaces[js].size;
    for (int id = 0; id < C; ++id) {
      id_score[js][id] = std::max(id_score[op.in_space][id], id_score[op.shortcut_space][id]);
    }
    auto active = [&](int s, std::size_t i) {
      if (spaces[s].kind == SpaceKind::join) return unions[s][i];
      std::vector<bool> a(spaces[s].size, false);
      const std::vector<int> ids = new_ids(s);
      for (int k = 0; k < embedded[i].counts[s]; ++k) a[ids[k]] = true;
      return a;
    };
    std::vector<int> entry(C, static_cast<int>(widths));
    unions[js].resize(widths);
    for (std::size_t i = 0; i < widths; ++i) {
      const std::vector<bool> am = active(op.in_space, i);
      const std::vector<bool> as = active(op.shortcut_space, i);
      unions[js][i].assign(C, false);
      for (int id = 0; id < C; ++id) {
        if (am[id] || as[id]) {
          unions[js][i][id] = true;
          entry[id] = std::min(entry[id], static_cast<int>(i));
        }
      }
    }
    std::vector<int> target = iota_vec(C);
    std::sort(target.begin(), target.end(), [&](int a, int b) {
      return std::make_tuple(entry[a], -id_score[js][a], a) <
             std::make_tuple(entry[b], -id_score[js][b], b);
    });
    align(js, target);
  }
  return perm;
}

#define SPNET_INSTANTIATE_SLIMMABLE(T)                                                        \
  template SubNetworkView slice_view<T>(const Network<T>&, const PrunedArchitecture&, int);  \
  template SubNetworkView full_view<T>(const Network<T>&, int);                              \
  template SubNetworkView embedded_view<T>(const Network<T>&, std::size_t);                  \
  template SubNetworkView gather_view<T>(const Network<T>&,                                  \
                                         const std::vector<std::vector<int>>&, int);         \
  template SubNetworkView selection_view<T>(const Network<T>&,                               \
                                            const std::vector<std::vector<int>>&, int);      \
  template std::vector<int> resolve_counts<T>(const Network<T>&, const std::vector<int>&);   \
  template Tensor<T> zpm_join<T>(const Tensor<T>&, const Tensor<T>&, const JoinMetadata&);   \
  template Tensor<T> zpm_join_dense<T>(const Tensor<T>&, const Tensor<T>&,                   \
                                       const JoinMetadata&);                                 \
  template void scs_apply<T>(Network<T>&, const ChannelPermutation&);                        \
  template ChannelPermutation plan_channel_sort<T>(                                          \
      const Network<T>&, const std::vector<std::vector<double>>&, JoinPolicy);

SPNET_INSTANTIATE_SLIMMABLE(float)
SPNET_INSTANTIATE_SLIMMABLE(double)

}  // namespace spnet
