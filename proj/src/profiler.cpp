#include "spnet/profiler.hpp"

#include <algorithm>

namespace spnet {

std::vector<int> width_counts(const Graph& graph, double width) {
  std::vector<int> counts = graph.full_counts();
  for (std::size_t s = 0; s < counts.size(); ++s) {
    if (graph.spaces()[s].kind == SpaceKind::conv) counts[s] = scaled_channels(counts[s], width);
  }
  derive_join_counts(graph, counts);
  return counts;
}

PrunedArchitecture width_architecture(const Graph& graph, double width) {
  PrunedArchitecture arch;
  arch.counts = width_counts(graph, width);
  arch.source_width = width;
  arch.flops = flops_count(graph, arch.counts);
  return arch;
}

void derive_join_counts(const Graph& graph, std::vector<int>& counts) {
  for (const GraphOp& op : graph.ops()) {
    if (op.kind == OpKind::join) {
      counts[op.space] = std::max(counts[op.in_space], counts[op.shortcut_space]);
    }
  }
}

std::int64_t param_count(const Graph& graph, const std::vector<int>& counts) {
  std::int64_t total = 0;
  for (const GraphOp& op : graph.ops()) {
    switch (op.kind) {
      case OpKind::conv: {
        const std::int64_t out = counts[op.space];
        const std::int64_t in = op.depthwise ? 1 : counts[op.in_space];
        total += out * in * op.kernel * op.kernel + (op.bias ? out : 0);
        break;
      }
      case OpKind::bn:
        total += 2 * static_cast<std::int64_t>(counts[op.space]);
        break;
      case OpKind::linear: {
        const LinearInfo& l = graph.linears()[op.param];
        const std::int64_t in = static_cast<std::int64_t>(counts[op.in_space]) * l.plane;
        const std::int64_t out = counts[op.space];
        total += in * out + (op.bias ? out : 0);
        break;
      }
      default:
        break;
    }
  }
  return total;
}

std::int64_t flops_count(const Graph& graph, const std::vector<int>& counts, JoinPolicy policy) {
  std::int64_t total = 0;
  for (const GraphOp& op : graph.ops()) {
    const std::int64_t plane = static_cast<std::int64_t>(op.out_h) * op.out_w;
    switch (op.kind) {
      case OpKind::conv: {
        const std::int64_t out = counts[op.space];
        const std::int64_t in = op.depthwise ? 1 : counts[op.in_space];
        total += out * in * op.kernel * op.kernel * plane;
        break;
      }
      case OpKind::linear: {
        const LinearInfo& l = graph.linears()[op.param];
        total += static_cast<std::int64_t>(counts[op.in_space]) * l.plane * counts[op.space];
        break;
      }
      case OpKind::join:
        if (policy == JoinPolicy::zpm) total += graph.spaces()[op.space].size * plane;
        break;
      default:
        break;
    }
  }
  return total;
}

std::int64_t param_count(const ModelSpec& spec, double width) {
  const Graph g(spec);
  return param_count(g, width_counts(g, width));
}

std::int64_t flops_count(const ModelSpec& spec, double width, JoinPolicy policy) {
  const Graph g(spec);
  return flops_count(g, width_counts(g, width), policy);
}

std::int64_t param_count(const ModelSpec& spec, const PrunedArchitecture& arch) {
  const Graph g(spec);
  validate_architecture(g, arch);
  return param_count(g, arch.counts);
}

std::int64_t flops_count(const ModelSpec& spec, const PrunedArchitecture& arch,
                         JoinPolicy policy) {
  const Graph g(spec);
  validate_architecture(g, arch);
  return flops_count(g, arch.counts, policy);
}

}  // namespace spnet
