#include "spnet/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <optional>
#include <stdexcept>
#include <thread>

#include "spnet/profiler.hpp"

namespace spnet {

const char* to_string(ScoringMethod method) {
  return method == ScoringMethod::bn_gamma ? "bn_gamma" : "l1_norm";
}

ScoringMethod scoring_method_from_string(std::string_view s) {
  if (s == "bn_gamma") return ScoringMethod::bn_gamma;
  if (s == "l1_norm") return ScoringMethod::l1_norm;
  throw std::invalid_argument("unknown scoring method '" + std::string(s) + "'");
}

std::vector<std::vector<double>> ChannelScores::by_position(
    const std::vector<std::vector<int>>& order) const {
  std::vector<std::vector<double>> out(scores.size());
  for (std::size_t s = 0; s < scores.size(); ++s) {
    if (scores[s].empty()) continue;
    out[s].resize(scores[s].size());
    for (std::size_t p = 0; p < scores[s].size(); ++p) out[s][p] = scores[s][order[s][p]];
  }
  return out;
}

template <typename T>
ChannelScores score_bn_gamma(const Network<T>& net) {
  const Graph& g = net.graph();
  ChannelScores out;
  out.method = ScoringMethod::bn_gamma;
  out.scores.resize(g.space_count());
  const std::size_t bank = net.bank_count() - 1;
  for (std::size_t s = 0; s < g.space_count(); ++s) {
    const ChannelSpace& sp = g.spaces()[s];
    if (sp.kind != SpaceKind::conv) continue;
    if (sp.score_bn < 0) {
      throw std::invalid_argument(g.ops()[sp.producer].name +
                                  " is not followed by batch norm; use l1_norm scoring");
    }
    const Tensor<T>& gamma = net.bns[sp.score_bn].banks[bank].gamma.value;
    out.scores[s].resize(sp.size);
    for (int p = 0; p < sp.size; ++p) {
      out.scores[s][net.order[s][p]] = std::abs(static_cast<double>(gamma[p]));
    }
  }
  return out;
}

template <typename T>
ChannelScores score_l1_norm(const Network<T>& net, ScoreNormalization normalization) {
  const Graph& g = net.graph();
  ChannelScores out;
  out.method = ScoringMethod::l1_norm;
  out.normalization = normalization;
  out.scores.resize(g.space_count());
  for (std::size_t s = 0; s < g.space_count(); ++s) {
    const ChannelSpace& sp = g.spaces()[s];
    if (!sp.prunable) continue;
    const Tensor<T>& w = net.convs[g.ops()[sp.producer].param].weight.value;
    const std::size_t row = w.size() / sp.size;
    std::vector<double>& sc = out.scores[s];
    sc.resize(sp.size);
    double total = 0.0;
    for (int p = 0; p < sp.size; ++p) {
      double sum = 0.0;
      for (std::size_t i = 0; i < row; ++i) sum += std::abs(static_cast<double>(w[p * row + i]));
      sc[net.order[s][p]] = sum;
      total += sum;
    }
    const double mean = total / sp.size;
    if (normalization == ScoreNormalization::per_layer_mean && mean > 0.0) {
      for (double& v : sc) v /= mean;
    }
  }
  return out;
}

template <typename T>
ChannelScores score_channels(const Network<T>& net, ScoringMethod method) {
  return method == ScoringMethod::bn_gamma ? score_bn_gamma(net) : score_l1_norm(net);
}

namespace {

std::vector<int> all_ids(int n) {
  std::vector<int> v(n);
  for (int i = 0; i < n; ++i) v[i] = i;
  return v;
}

std::vector<int> union_of(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

void finish_plan(const Graph& graph, SelectionPlan& plan) {
  for (const GraphOp& op : graph.ops()) {
    if (op.kind == OpKind::join) {
      plan.selected[op.space] = union_of(plan.selected[op.in_space], plan.selected[op.shortcut_space]);
    }
  }
  plan.arch.counts.resize(graph.space_count());
  for (std::size_t s = 0; s < graph.space_count(); ++s) {
    plan.arch.counts[s] = static_cast<int>(plan.selected[s].size());
  }
  plan.arch.flops = flops_count(graph, plan.arch.counts, plan.policy);
}

}  // namespace

SelectionPlan select_global(const Graph& graph, const ChannelScores& scores, double threshold,
                            JoinPolicy policy) {
  if (scores.scores.size() != graph.space_count()) {
    throw std::invalid_argument("scores do not match the graph");
  }
  SelectionPlan plan;
  plan.threshold = threshold;
  plan.selected.resize(graph.space_count());
  for (std::size_t s = 0; s < graph.space_count(); ++s) {
    const std::vector<double>& sc = scores.scores[s];
    const int n = graph.spaces()[s].size;
    if (sc.empty()) {
      plan.selected[s] = all_ids(n);
      continue;
    }
    if (static_cast<int>(sc.size()) != n) {
      throw std::invalid_argument("space " + std::to_string(s) + ": score count mismatch");
    }
    std::vector<int>& sel = plan.selected[s];
    for (int id = 0; id < n; ++id) {
      if (sc[id] >= 0.0 && sc[id] > threshold) sel.push_back(id);
    }
    if (sel.empty()) {
      sel.push_back(static_cast<int>(std::max_element(sc.begin(), sc.end()) - sc.begin()));
    }
  }
  apply_join_policy(graph, plan, policy);
  return plan;
}

void apply_join_policy(const Graph& graph, SelectionPlan& plan, JoinPolicy policy) {
  plan.policy = policy;
  const auto& spaces = graph.spaces();
  for (const ResidualChain& chain : graph.chains()) {
    switch (policy) {
      case JoinPolicy::none:
        for (int s : chain.spaces) plan.selected[s] = all_ids(spaces[s].size);
        break;
      case JoinPolicy::prioritize_shortcut:
        for (int j : chain.joins) {
          const GraphOp& op = graph.ops()[j];
          plan.selected[op.in_space] = plan.selected[op.shortcut_space];
          plan.selected[op.space] = plan.selected[op.shortcut_space];
        }
        break;
      case JoinPolicy::uniform: {
        double sum = 0.0;
        int members = 0;
        for (int s : chain.spaces) {
          if (spaces[s].kind != SpaceKind::conv) continue;
          sum += static_cast<double>(plan.selected[s].size());
          ++members;
        }
        const int size = spaces[chain.root].size;
        const int budget =
            members ? std::clamp(static_cast<int>(std::lround(sum / members)), 1, size) : size;
        for (int s : chain.spaces) plan.selected[s] = all_ids(budget);
        break;
      }
      case JoinPolicy::zpm:
        break;
    }
  }
  finish_plan(graph, plan);
}

SelectionPlan prune_to_flops(const Graph& graph, const ChannelScores& scores,
                             std::int64_t target, double tolerance, JoinPolicy policy) {
  if (target <= 0) throw std::invalid_argument("FLOPs target must be positive");
  const std::int64_t full = flops_count(graph, graph.full_counts(), policy);
  if (target > full) {
    throw std::invalid_argument("FLOPs target " + std::to_string(target) +
                                " exceeds the unpruned network's " + std::to_string(full));
  }
  std::vector<double> values;
  for (const auto& sc : scores.scores) {
    for (double v : sc) {
      if (v >= 0.0) values.push_back(v);
    }
  }
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  std::vector<double> cand;
  cand.push_back(!values.empty() && values.front() > 0.0 ? 0.0 : -0.5);
  cand.insert(cand.end(), values.begin(), values.end());

  auto plan_at = [&](std::size_t i) { return select_global(graph, scores, cand[i], policy); };
  auto finalize = [&](SelectionPlan p, std::int64_t step) {
    p.target_flops = target;
    p.gap = static_cast<double>(p.arch.flops - target) / static_cast<double>(target);
    p.granularity = step;
    p.within_tolerance = std::abs(p.gap) <= tolerance;
    return p;
  };

  SelectionPlan lo_plan = plan_at(0);
  if (lo_plan.arch.flops <= target) return finalize(std::move(lo_plan), 0);
  std::size_t lo = 0;
  std::size_t hi = cand.size() - 1;
  SelectionPlan hi_plan = plan_at(hi);
  if (hi_plan.arch.flops > target) {
    SelectionPlan p = finalize(std::move(hi_plan), 0);
    if (!p.within_tolerance) {
      throw std::invalid_argument("FLOPs target " + std::to_string(target) +
                                  " is below the minimum achievable " +
                                  std::to_string(p.arch.flops));
    }
    return p;
  }
  for (int iter = 0; iter < 40 && hi - lo > 1; ++iter) {
    const std::size_t mid = lo + (hi - lo) / 2;
    SelectionPlan p = plan_at(mid);
    if (p.arch.flops > target) {
      lo = mid;
      lo_plan = std::move(p);
    } else {
      hi = mid;
      hi_plan = std::move(p);
    }
  }
  const std::int64_t step = lo_plan.arch.flops - hi_plan.arch.flops;
  const std::int64_t over = lo_plan.arch.flops - target;
  const std::int64_t under = target - hi_plan.arch.flops;
  return finalize(over < under ? std::move(lo_plan) : std::move(hi_plan), step);
}

template <typename T>
std::vector<SelectionPlan> one_shot_prune(const Network<T>& base, ScoringMethod method,
                                          const std::vector<std::int64_t>& targets,
                                          double tolerance, JoinPolicy policy) {
  const ChannelScores scores = score_channels(base, method);
  std::vector<SelectionPlan> plans;
  for (std::int64_t t : targets) {
    plans.push_back(prune_to_flops(base.graph(), scores, t, tolerance, policy));
  }
  return plans;
}

template <typename T>
std::vector<SelectionPlan> iterative_prune(Network<T>& base, ScoringMethod method,
                                           const std::vector<std::int64_t>& targets,
                                           const FinetuneFn<T>& finetune, double tolerance,
                                           JoinPolicy policy) {
  const Graph& g = base.graph();
  std::vector<SelectionPlan> plans;
  std::vector<std::vector<int>> kept(g.space_count());
  for (std::size_t s = 0; s < kept.size(); ++s) kept[s] = all_ids(g.spaces()[s].size);
  for (std::size_t r = 0; r < targets.size(); ++r) {
    ChannelScores scores = score_channels(base, method);
    for (std::size_t s = 0; s < scores.scores.size(); ++s) {
      std::vector<double>& sc = scores.scores[s];
      if (sc.empty()) continue;
      std::vector<char> keep(sc.size(), 0);
      for (int id : kept[s]) keep[id] = 1;
      for (std::size_t id = 0; id < sc.size(); ++id) {
        if (!keep[id]) sc[id] = -1.0;
      }
    }
    SelectionPlan plan = prune_to_flops(g, scores, targets[r], tolerance, policy);
    kept = plan.selected;
    if (finetune) finetune(base, selection_view(base, plan.selected, 0));
    plans.push_back(std::move(plan));
  }
  return plans;
}

template <typename T>
MultiBaseResult<T> multi_base_prune(const ModelSpec& spec, const WidthList& widths,
                                    const BaseTrainFn<T>& train, ScoringMethod method,
                                    double tolerance, JoinPolicy policy, bool concurrent) {
  widths.validate(2);
  const std::size_t k = widths.size();
  std::vector<std::optional<Network<T>>> bases(k - 1);
  std::vector<std::exception_ptr> errors(k - 1);
  auto job = [&](std::size_t i) {
    try {
      bases[i].emplace(train(scale_width(spec, widths[i + 1]), i));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (concurrent) {
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < k - 1; ++i) workers.emplace_back(job, i);
    for (std::thread& t : workers) t.join();
  } else {
    for (std::size_t i = 0; i < k - 1; ++i) job(i);
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  MultiBaseResult<T> out;
  for (std::size_t i = 0; i < k - 1; ++i) {
    const Network<T>& base = *bases[i];
    const std::int64_t target = flops_count(spec, widths[i], policy);
    SelectionPlan plan =
        prune_to_flops(base.graph(), score_channels(base, method), target, tolerance, policy);
    plan.arch.source_width = widths[i];
    out.archs.push_back(plan.arch);
    out.plans.push_back(std::move(plan));
  }
  for (auto& b : bases) out.bases.push_back(std::move(*b));
  return out;
}

namespace {

template <typename T>
void refresh_embedded(Network<T>& net, const WidthList& widths,
                      std::vector<PrunedArchitecture> archs, JoinPolicy policy) {
  for (std::size_t i = 0; i < archs.size(); ++i) {
    archs[i].source_width = widths[i];
    archs[i].counts = resolve_counts(net, archs[i].counts);
    archs[i].flops = flops_count(net.graph(), archs[i].counts, policy);
  }
  net.set_embedded(widths, std::move(archs));
}

}  // namespace

template <typename T>
void embed_architectures(Network<T>& net, const WidthList& widths,
                         std::vector<PrunedArchitecture> archs, JoinPolicy policy) {
  widths.validate(1);
  const Graph& g = net.graph();
  if (archs.size() + 1 == widths.size()) {
    PrunedArchitecture full;
    full.counts = g.full_counts();
    archs.push_back(full);
  }
  if (archs.size() != widths.size()) {
    throw std::invalid_argument(std::to_string(archs.size()) + " architectures for " +
                                std::to_string(widths.size()) + " widths");
  }
  for (const PrunedArchitecture& a : archs) validate_architecture(g, a);
  refresh_embedded(net, widths, std::move(archs), policy);
}

template <typename T>
ChannelPermutation sort_channels(Network<T>& net, ScoringMethod method, JoinPolicy policy) {
  if (net.embedded().empty()) return ChannelPermutation::identity(net.graph());
  const ChannelScores scores = score_channels(net, method);
  const ChannelPermutation perm =
      plan_channel_sort(net, scores.by_position(net.order), policy);
  scs_apply(net, perm);
  refresh_embedded(net, net.widths(), net.embedded(), policy);
  return perm;
}

#define SPNET_INSTANTIATE_PRUNING(T)                                                           \
  template ChannelScores score_bn_gamma<T>(const Network<T>&);                                \
  template ChannelScores score_l1_norm<T>(const Network<T>&, ScoreNormalization);             \
  template ChannelScores score_channels<T>(const Network<T>&, ScoringMethod);                 \
  template std::vector<SelectionPlan> one_shot_prune<T>(                                      \
      const Network<T>&, ScoringMethod, const std::vector<std::int64_t>&, double, JoinPolicy); \
  template std::vector<SelectionPlan> iterative_prune<T>(                                     \
      Network<T>&, ScoringMethod, const std::vector<std::int64_t>&, const FinetuneFn<T>&,     \
      double, JoinPolicy);                                                                    \
  template MultiBaseResult<T> multi_base_prune<T>(const ModelSpec&, const WidthList&,         \
                                                  const BaseTrainFn<T>&, ScoringMethod,       \
                                                  double, JoinPolicy, bool);                  \
  template void embed_architectures<T>(Network<T>&, const WidthList&,                         \
                                       std::vector<PrunedArchitecture>, JoinPolicy);          \
  template ChannelPermutation sort_channels<T>(Network<T>&, ScoringMethod, JoinPolicy);

SPNET_INSTANTIATE_PRUNING(float)
SPNET_INSTANTIATE_PRUNING(double)

}  // namespace spnet
