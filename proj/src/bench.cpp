#include "spnet/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "spnet/slimmable.hpp"

namespace spnet {

namespace {

void summarize(LatencyStat& s) {
  std::vector<double> v = s.samples_ms;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  s.median_ms = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  // nearest rank
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95_ms = v[std::max<std::size_t>(rank, 1) - 1];
}

double time_ms(Executor<float>& ex, const Tensor<float>& input) {
  const auto t0 = std::chrono::steady_clock::now();
  ex.forward(input, false);
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

}  // namespace

Network<float> unsort(const Network<float>& net) {
  Network<float> raw = net;
  ChannelPermutation perm;
  for (const std::vector<int>& o : net.order) {
    std::vector<int> inv(o.size());
    for (std::size_t p = 0; p < o.size(); ++p) inv[o[p]] = static_cast<int>(p);
    perm.order.push_back(std::move(inv));
  }
  scs_apply(raw, perm);
  return raw;
}

LatencyResult latency_bench(const Network<float>& sorted, std::size_t index,
                            const BenchConfig& config, std::uint64_t seed) {
  config.validate();
  if (index >= sorted.embedded().size()) {
    throw std::out_of_range("bench: no embedded architecture " + std::to_string(index));
  }
  Network<float> fast = sorted;
  Network<float> raw = unsort(sorted);
  const SubNetworkView sliced = embedded_view(fast, index);
  const auto& spaces = fast.graph().spaces();
  std::vector<std::vector<int>> ids(spaces.size());
  for (std::size_t s = 0; s < spaces.size(); ++s) {
    if (spaces[s].kind == SpaceKind::join) continue;
    for (int p : sliced.positions[s]) ids[s].push_back(fast.order[s][p]);
  }
  const SubNetworkView gathered = gather_view(raw, ids, sliced.bank);

  const ModelSpec& spec = fast.spec();
  Tensor<float> input({config.batch, spec.in_channels, spec.in_h, spec.in_w});
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (std::size_t i = 0; i < input.size(); ++i) input[i] = normal(rng);

  Executor<float> a(fast, sliced);
  Executor<float> b(raw, gathered);
  LatencyResult r;
  r.width = fast.widths()[index];
  r.batch = config.batch;
  r.warmup = config.warmup;
  r.timed = config.reps - config.warmup;
  {
    const Tensor<float>& ya = a.forward(input, false);
    const Tensor<float>& yb = b.forward(input, false);
    if (!(ya.shape() == yb.shape())) throw DimensionError("bench: output shapes differ");
    for (std::size_t i = 0; i < ya.size(); ++i) {
      r.max_abs_diff = std::max(r.max_abs_diff, static_cast<double>(std::fabs(ya[i] - yb[i])));
    }
    if (!(r.max_abs_diff <= 1e-5)) {
      throw NumericalError("bench: sliced and gathered outputs differ by " +
                           std::to_string(r.max_abs_diff));
    }
  }
  r.sliced.mode = "sliced";
  r.gather.mode = "gather";
  for (int it = 0; it < config.reps; ++it) {
    // alternate which path runs first so drift hits both alike
    double ta = 0.0;
    double tb = 0.0;
    if (it % 2 == 0) {
      ta = time_ms(a, input);
      tb = time_ms(b, input);
    } else {
      tb = time_ms(b, input);
      ta = time_ms(a, input);
    }
    if (it < config.warmup) continue;
    r.sliced.samples_ms.push_back(ta);
    r.gather.samples_ms.push_back(tb);
  }
  summarize(r.sliced);
  summarize(r.gather);
  return r;
}

std::string format_latency(const LatencyResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "width %.3g  batch %d  sliced median %.3f ms p95 %.3f ms  gather median %.3f ms "
                "p95 %.3f ms  ratio %.3f  (warmup %d, timed %d, max |diff| %.2g)",
                r.width, r.batch, r.sliced.median_ms, r.sliced.p95_ms, r.gather.median_ms,
                r.gather.p95_ms, r.ratio(), r.warmup, r.timed, r.max_abs_diff);
  return buf;
}

}  // namespace spnet
