#include "spnet/architecture.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>
#include <stdexcept>

namespace spnet {

const char* to_string(JoinPolicy policy) {
  switch (policy) {
    case JoinPolicy::uniform: return "uniform";
    case JoinPolicy::prioritize_shortcut: return "prioritize_shortcut";
    case JoinPolicy::zpm: return "zpm";
    case JoinPolicy::none: return "none";
  }
  return "?";
}

JoinPolicy join_policy_from_string(std::string_view s) {
  for (JoinPolicy p :
       {JoinPolicy::uniform, JoinPolicy::prioritize_shortcut, JoinPolicy::zpm, JoinPolicy::none}) {
    if (s == to_string(p)) return p;
  }
  throw std::invalid_argument("unknown join policy '" + std::string(s) + "'");
}

WidthList WidthList::parse(std::string_view text) {
  WidthList out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find(',', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string item(text.substr(pos, end - pos));
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) throw std::invalid_argument("width list: empty entry in '" + std::string(text) + "'");
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw std::invalid_argument("width list: bad number '" + item + "'");
    out.widths.push_back(v);
    pos = end + 1;
  }
  out.validate(1);
  return out;
}

void WidthList::validate(std::size_t min_size) const {
  if (widths.size() < min_size) {
    throw std::invalid_argument("width list needs at least " + std::to_string(min_size) +
                                " entries");
  }
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (!(widths[i] > 0.0)) throw std::invalid_argument("width list entries must be positive");
    if (i > 0 && !(widths[i] > widths[i - 1])) {
      throw std::invalid_argument("width list must be strictly increasing");
    }
  }
}

std::string WidthList::str() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "," : "") << widths[i];
  return os.str();
}

void validate_architecture(const Graph& graph, const PrunedArchitecture& arch) {
  const auto& spaces = graph.spaces();
  if (arch.counts.size() != spaces.size()) {
    throw DimensionError("architecture has " + std::to_string(arch.counts.size()) +
                         " counts for " + std::to_string(spaces.size()) + " channel spaces");
  }
  for (std::size_t s = 0; s < spaces.size(); ++s) {
    const int n = arch.counts[s];
    if (n < 1 || n > spaces[s].size) {
      throw DimensionError("architecture count " + std::to_string(n) + " for space " +
                           std::to_string(s) + " outside [1, " + std::to_string(spaces[s].size) +
                           "]");
    }
    const bool fixed = spaces[s].kind == SpaceKind::input || spaces[s].kind == SpaceKind::linear;
    if (fixed && n != spaces[s].size) {
      throw DimensionError("space " + std::to_string(s) + " cannot be pruned");
    }
  }
}

ChannelPermutation ChannelPermutation::identity(const Graph& graph) {
  ChannelPermutation p;
  for (const ChannelSpace& s : graph.spaces()) {
    std::vector<int> o(s.size);
    for (int i = 0; i < s.size; ++i) o[i] = i;
    p.order.push_back(std::move(o));
  }
  return p;
}

bool ChannelPermutation::is_identity() const {
  for (const auto& o : order) {
    for (std::size_t i = 0; i < o.size(); ++i) {
      if (o[i] != static_cast<int>(i)) return false;
    }
  }
  return true;
}

void ChannelPermutation::validate(const Graph& graph) const {
  if (order.size() != graph.space_count()) {
    throw std::invalid_argument("permutation covers " + std::to_string(order.size()) +
                                " spaces, graph has " + std::to_string(graph.space_count()));
  }
  for (std::size_t s = 0; s < order.size(); ++s) {
    const int n = graph.spaces()[s].size;
    if (static_cast<int>(order[s].size()) != n) {
      throw std::invalid_argument("permutation for space " + std::to_string(s) +
                                  " has wrong length");
    }
    std::vector<bool> seen(n, false);
    for (int v : order[s]) {
      if (v < 0 || v >= n || seen[v]) {
        throw std::invalid_argument("permutation for space " + std::to_string(s) +
                                    " is not a bijection");
      }
      seen[v] = true;
    }
  }
}

ChannelPermutation ChannelPermutation::inverse() const {
  ChannelPermutation inv;
  for (const auto& o : order) {
    std::vector<int> r(o.size());
    for (std::size_t k = 0; k < o.size(); ++k) r[o[k]] = static_cast<int>(k);
    inv.order.push_back(std::move(r));
  }
  return inv;
}

bool JoinMetadata::is_plain_prefix() const {
  if (index_main.size() != index_shortcut.size() || index_main.size() != index_union.size()) {
    return false;
  }
  for (std::size_t k = 0; k < index_main.size(); ++k) {
    const int id = static_cast<int>(k);
    if (index_main[k] != id || index_shortcut[k] != id || index_union[k] != id) return false;
  }
  return true;
}

void JoinMetadata::validate() const {
  auto check = [&](const std::vector<int>& idx, const std::vector<bool>* mask, const char* what) {
    for (int id : idx) {
      if (id < 0 || id >= channels) {
        throw std::out_of_range(std::string("join metadata: ") + what + " index " +
                                std::to_string(id) + " outside [0, " + std::to_string(channels) +
                                ")");
      }
      if (mask && !(*mask)[id]) {
        throw std::out_of_range(std::string("join metadata: ") + what + " index " +
                                std::to_string(id) + " not set in mask");
      }
    }
  };
  if (mask_main.size() != static_cast<std::size_t>(channels) ||
      mask_shortcut.size() != static_cast<std::size_t>(channels)) {
    throw std::out_of_range("join metadata: mask length mismatch");
  }
  check(index_main, &mask_main, "main");
  check(index_shortcut, &mask_shortcut, "shortcut");
  check(index_union, nullptr, "union");
  const auto pop = [](const std::vector<bool>& m) {
    return static_cast<std::size_t>(std::count(m.begin(), m.end(), true));
  };
  if (pop(mask_main) != index_main.size() || pop(mask_shortcut) != index_shortcut.size()) {
    throw std::out_of_range("join metadata: mask popcount differs from index length");
  }
}

JoinMetadata build_join_metadata(int channels, const std::vector<int>& selection_main,
                                 const std::vector<int>& selection_shortcut,
                                 const JoinOrders* orders) {
  JoinMetadata meta;
  meta.channels = channels;
  meta.mask_main.assign(channels, false);
  meta.mask_shortcut.assign(channels, false);
  for (int id : selection_main) meta.mask_main.at(id) = true;
  for (int id : selection_shortcut) meta.mask_shortcut.at(id) = true;
  std::vector<int> ascending(channels);
  for (int i = 0; i < channels; ++i) ascending[i] = i;
  auto collect = [&](const std::vector<int>& order, auto&& keep) {
    std::vector<int> out;
    for (int id : order) {
      if (keep(id)) out.push_back(id);
    }
    return out;
  };
  const std::vector<int>& om = orders ? orders->main : ascending;
  const std::vector<int>& os = orders ? orders->shortcut : ascending;
  const std::vector<int>& oj = orders ? orders->joined : ascending;
  meta.index_main = collect(om, [&](int id) { return meta.mask_main[id]; });
  meta.index_shortcut = collect(os, [&](int id) { return meta.mask_shortcut[id]; });
  meta.index_union =
      collect(oj, [&](int id) { return meta.mask_main[id] || meta.mask_shortcut[id]; });
  return meta;
}

}  // namespace spnet
