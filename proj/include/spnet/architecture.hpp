#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "spnet/graph.hpp"

namespace spnet {

/// How channel selections are reconciled where a shortcut joins a main path.
enum class JoinPolicy { uniform, prioritize_shortcut, zpm, none };

const char* to_string(JoinPolicy policy);
JoinPolicy join_policy_from_string(std::string_view s);

/// Strictly increasing width multipliers; the last entry is the full width.
struct WidthList {
  std::vector<double> widths;

  WidthList() = default;
  explicit WidthList(std::vector<double> w) : widths(std::move(w)) {}

  /// Parses "0.25,0.5,1.0".
  static WidthList parse(std::string_view text);
  /// Throws std::invalid_argument unless positive, strictly increasing and
  /// of at least `min_size` entries.
  void validate(std::size_t min_size = 2) const;

  std::size_t size() const { return widths.size(); }
  double operator[](std::size_t i) const { return widths[i]; }
  double full() const { return widths.back(); }
  std::string str() const;
  bool operator==(const WidthList&) const = default;
};

/// Retained channel count for every channel space of a graph (input and
/// classifier spaces included, join spaces derived from their inputs).
struct PrunedArchitecture {
  std::vector<int> counts;
  double source_width = 1.0;
  std::int64_t flops = 0;

  bool operator==(const PrunedArchitecture&) const = default;
};

/// Throws DimensionError unless 1 <= counts[s] <= size and non-prunable spaces
/// keep their full size.
void validate_architecture(const Graph& graph, const PrunedArchitecture& arch);

/// Per-space reordering: after applying, position k of space s holds the
/// channel previously at position order[s][k].
struct ChannelPermutation {
  std::vector<std::vector<int>> order;

  static ChannelPermutation identity(const Graph& graph);
  bool is_identity() const;
  /// Throws std::invalid_argument unless every entry is a bijection of the
  /// matching space size.
  void validate(const Graph& graph) const;
  ChannelPermutation inverse() const;
  bool operator==(const ChannelPermutation&) const = default;
};

/// Index bookkeeping for one residual join over `channels` original ids.
/// index_main[k] is the original id of the k-th main-path channel, and so on;
/// index_union lists the original ids of the joined output in output order.
struct JoinMetadata {
  int channels = 0;
  std::vector<bool> mask_main;
  std::vector<bool> mask_shortcut;
  std::vector<int> index_main;
  std::vector<int> index_shortcut;
  std::vector<int> index_union;

  /// True when both paths and the output are the same identity prefix, in
  /// which case the join is a plain elementwise add.
  bool is_plain_prefix() const;
  void validate() const;
  bool operator==(const JoinMetadata&) const = default;
};

/// Orders (position -> original id) of the three spaces meeting at a join.
struct JoinOrders {
  std::vector<int> main;
  std::vector<int> shortcut;
  std::vector<int> joined;
};

/// Builds join metadata from selections given as original channel ids.
/// Without orders, each path lists its selection in ascending id order and
/// so does the union; with orders, every list follows the given order.
JoinMetadata build_join_metadata(int channels, const std::vector<int>& selection_main,
                                 const std::vector<int>& selection_shortcut,
                                 const JoinOrders* orders = nullptr);

}  // namespace spnet
