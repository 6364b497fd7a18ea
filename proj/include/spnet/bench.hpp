#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spnet/config.hpp"
#include "spnet/network.hpp"

namespace spnet {

struct LatencyStat {
  std::string mode;  // "sliced" or "gather"
  double median_ms = 0.0;
  double p95_ms = 0.0;
  std::vector<double> samples_ms;
};

struct LatencyResult {
  double width = 1.0;
  int batch = 0;
  int warmup = 0;
  int timed = 0;
  double max_abs_diff = 0.0;
  LatencyStat sliced;
  LatencyStat gather;

  double ratio() const { return gather.median_ms / sliced.median_ms; }
};

/// Inference latency of embedded width `index` of a channel-sorted network,
/// executed as a contiguous prefix slice and as an index-gather over the
/// same channels in the unsorted layout. Outputs of both paths are checked
/// to agree within 1e-5 before timing; iterations alternate between the two.
LatencyResult latency_bench(const Network<float>& sorted, std::size_t index,
                            const BenchConfig& config, std::uint64_t seed = 1);

/// Copy of `net` with every channel order reset to the identity.
Network<float> unsort(const Network<float>& net);

std::string format_latency(const LatencyResult& r);

}  // namespace spnet
