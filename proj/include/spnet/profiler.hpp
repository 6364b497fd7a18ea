#pragma once

#include <cstdint>
#include <vector>

#include "spnet/architecture.hpp"
#include "spnet/graph.hpp"

namespace spnet {

/// Uniform width-w counts: every conv space becomes max(1, floor(w * N)),
/// input and linear spaces stay full, join spaces are derived.
std::vector<int> width_counts(const Graph& graph, double width);
PrunedArchitecture width_architecture(const Graph& graph, double width);

/// Join spaces over identically ordered inputs retain the union of two
/// prefixes, i.e. max(main, shortcut) channels.
void derive_join_counts(const Graph& graph, std::vector<int>& counts);

/// Exact parameter total: conv weights and biases, BN gamma and beta, linear
/// weights and biases. Running statistics are buffers, not parameters.
std::int64_t param_count(const Graph& graph, const std::vector<int>& counts);

/// Multiply-accumulate count of convs and linears. Under JoinPolicy::zpm each
/// join adds one elementwise add per full-width output element.
std::int64_t flops_count(const Graph& graph, const std::vector<int>& counts,
                         JoinPolicy policy = JoinPolicy::none);

std::int64_t param_count(const ModelSpec& spec, double width);
std::int64_t flops_count(const ModelSpec& spec, double width,
                         JoinPolicy policy = JoinPolicy::none);
std::int64_t param_count(const ModelSpec& spec, const PrunedArchitecture& arch);
std::int64_t flops_count(const ModelSpec& spec, const PrunedArchitecture& arch,
                         JoinPolicy policy = JoinPolicy::none);

}  // namespace spnet
