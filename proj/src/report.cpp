#include "spnet/report.hpp"

#include <cstdio>
#include <sstream>

#include "spnet/profiler.hpp"
#include "spnet/slimmable.hpp"
#include "spnet/training.hpp"

namespace spnet {

std::vector<ReportRow> report_rows(Network<float>& net, JoinPolicy policy, const Dataset* data) {
  if (net.embedded().empty()) throw std::invalid_argument("report: network has no embedded widths");
  std::vector<ReportRow> rows;
  for (std::size_t i = 0; i < net.embedded().size(); ++i) {
    const PrunedArchitecture& a = net.embedded()[i];
    ReportRow r;
    r.width = net.widths()[i];
    r.params = param_count(net.graph(), a.counts);
    r.flops = flops_count(net.graph(), a.counts, policy);
    if (data) r.error = evaluate(net, embedded_view(net, i), *data);
    rows.push_back(r);
  }
  return rows;
}

std::string format_count(std::int64_t n) {
  const char* units[] = {"", "K", "M", "G", "T"};
  double v = static_cast<double>(n);
  int u = 0;
  while (v >= 1000.0 && u < 4) {
    v /= 1000.0;
    ++u;
  }
  char buf[32];
  if (u == 0) std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(n));
  else if (v < 100.0) std::snprintf(buf, sizeof buf, "%.1f%s", v, units[u]);
  else std::snprintf(buf, sizeof buf, "%.0f%s", v, units[u]);
  return buf;
}

std::string render_report(const std::string& title, const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  if (!title.empty()) os << title << "\n";
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-8s %10s %10s %8s\n", "width", "params", "FLOPs", "error");
  os << buf;
  for (const ReportRow& r : rows) {
    char err[16] = "-";
    if (r.error >= 0.0) std::snprintf(err, sizeof err, "%.2f%%", 100.0 * r.error);
    std::snprintf(buf, sizeof buf, "%-8.4g %10s %10s %8s\n", r.width, format_count(r.params).c_str(),
                  format_count(r.flops).c_str(), err);
    os << buf;
  }
  return os.str();
}

}  // namespace spnet
