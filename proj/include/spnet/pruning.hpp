#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "spnet/architecture.hpp"
#include "spnet/network.hpp"
#include "spnet/slimmable.hpp"

namespace spnet {

enum class ScoringMethod { bn_gamma, l1_norm };
enum class ScoreNormalization { none, per_layer_mean };

const char* to_string(ScoringMethod method);
ScoringMethod scoring_method_from_string(std::string_view s);

/// Per-space channel scores indexed by original channel id. Only prunable
/// spaces (a conv directly followed by BN) carry scores; the rest are empty.
/// A negative score marks a channel that can never be retained.
struct ChannelScores {
  ScoringMethod method = ScoringMethod::bn_gamma;
  ScoreNormalization normalization = ScoreNormalization::none;
  std::vector<std::vector<double>> scores;

  /// Same scores indexed by the network's current physical positions.
  std::vector<std::vector<double>> by_position(const std::vector<std::vector<int>>& order) const;
};

/// |gamma| of the BN following each prunable conv, from the widest bank.
template <typename T>
ChannelScores score_bn_gamma(const Network<T>& net);

/// Sum of absolute filter weights of each prunable conv.
template <typename T>
ChannelScores score_l1_norm(const Network<T>& net,
                            ScoreNormalization normalization = ScoreNormalization::per_layer_mean);

template <typename T>
ChannelScores score_channels(const Network<T>& net, ScoringMethod method);

/// Retained original ids per space plus the resulting architecture. Join
/// spaces hold the union of their inputs.
struct SelectionPlan {
  std::vector<std::vector<int>> selected;
  PrunedArchitecture arch;
  JoinPolicy policy = JoinPolicy::none;
  double threshold = 0.0;
  std::int64_t target_flops = 0;
  double gap = 0.0;               // (flops - target) / target
  std::int64_t granularity = 0;   // FLOPs step between the two plans around the target
  bool within_tolerance = true;
};

/// Keeps every channel scoring above `threshold` (a layer that empties keeps
/// its single best channel), then reconciles residual joins per `policy`.
SelectionPlan select_global(const Graph& graph, const ChannelScores& scores, double threshold,
                            JoinPolicy policy);

/// Rewrites the selections of every residual chain:
///   none                 every chain space keeps all channels
///   prioritize_shortcut  main paths take the shortcut's selection
///   uniform              every chain space takes the same prefix, sized by the
///                        rounded mean retained count of the chain's convs
///   zpm                  selections kept, joins take the union
/// Recomputes counts and FLOPs afterwards.
void apply_join_policy(const Graph& graph, SelectionPlan& plan, JoinPolicy policy);

/// Bisection over the sorted distinct scores for the threshold whose plan
/// FLOPs is closest to `target`. Throws std::invalid_argument when the target
/// exceeds the full FLOPs or lies below the all-floor plan beyond tolerance.
SelectionPlan prune_to_flops(const Graph& graph, const ChannelScores& scores,
                             std::int64_t target, double tolerance, JoinPolicy policy);

/// One scoring pass, every target thresholded from the same scores.
template <typename T>
std::vector<SelectionPlan> one_shot_prune(const Network<T>& base, ScoringMethod method,
                                          const std::vector<std::int64_t>& targets,
                                          double tolerance, JoinPolicy policy);

/// Fine-tunes the base on a sub-network view (for example a few epochs).
template <typename T>
using FinetuneFn = std::function<void(Network<T>&, const SubNetworkView&)>;

/// Ladder of decreasing targets: prune, fine-tune the pruned view, re-score
/// the surviving channels, repeat. Each rung only considers channels the
/// previous rung kept.
template <typename T>
std::vector<SelectionPlan> iterative_prune(Network<T>& base, ScoringMethod method,
                                           const std::vector<std::int64_t>& targets,
                                           const FinetuneFn<T>& finetune, double tolerance,
                                           JoinPolicy policy);

/// Trains a standalone network for `spec` (already width-scaled) as base
/// number `index`. Must be safe to call concurrently for different indices.
template <typename T>
using BaseTrainFn = std::function<Network<T>(const ModelSpec& spec, std::size_t index)>;

template <typename T>
struct MultiBaseResult {
  /// plans[i] prunes base i + 1 (width w_{i+2}) to the FLOPs of width w_{i+1}.
  std::vector<SelectionPlan> plans;
  std::vector<PrunedArchitecture> archs;
  /// bases[i] is the network trained at width w_{i+2}; the last is full width.
  std::vector<Network<T>> bases;
};

/// Multi-base pruning: k - 1 independent bases at widths w_2..w_k, base w_i
/// pruned to the FLOPs of the uniform w_{i-1} network. Bases train on
/// separate threads when `concurrent` is set; results do not depend on it.
template <typename T>
MultiBaseResult<T> multi_base_prune(const ModelSpec& spec, const WidthList& widths,
                                    const BaseTrainFn<T>& train, ScoringMethod method,
                                    double tolerance, JoinPolicy policy, bool concurrent);

/// Stores the per-width count tables in the network (no weight copies). A
/// list one shorter than the width list gets the full architecture appended.
template <typename T>
void embed_architectures(Network<T>& net, const WidthList& widths,
                         std::vector<PrunedArchitecture> archs, JoinPolicy policy);

/// Sorts the network's channels by its own scores so every embedded width
/// becomes a prefix; a network without embedded widths is left untouched and
/// the identity is returned.
template <typename T>
ChannelPermutation sort_channels(Network<T>& net, ScoringMethod method, JoinPolicy policy);

}  // namespace spnet
