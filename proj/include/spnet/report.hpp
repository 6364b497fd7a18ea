#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spnet/architecture.hpp"
#include "spnet/dataset.hpp"
#include "spnet/network.hpp"

namespace spnet {

struct ReportRow {
  double width = 1.0;
  std::int64_t params = 0;
  std::int64_t flops = 0;
  double error = -1.0;  // negative when not evaluated
};

/// One row per embedded width, counts from the profiler. Errors are filled
/// in when `data` is given.
std::vector<ReportRow> report_rows(Network<float>& net, JoinPolicy policy,
                                   const Dataset* data = nullptr);

/// "25.6M", "4.1G", "569M": one decimal below 100 of a unit, none above.
std::string format_count(std::int64_t n);

std::string render_report(const std::string& title, const std::vector<ReportRow>& rows);

}  // namespace spnet
