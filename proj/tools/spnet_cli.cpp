// spnet command line: train, prune, embed, sort and inspect slimmable networks.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "spnet/bench.hpp"
#include "spnet/checkpoint.hpp"
#include "spnet/config.hpp"
#include "spnet/model_spec.hpp"
#include "spnet/profiler.hpp"
#include "spnet/pruning.hpp"
#include "spnet/report.hpp"
#include "spnet/slimmable.hpp"
#include "spnet/training.hpp"

using namespace spnet;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::string in;
  std::string out;
};

RunConfig load_config(const std::string& path) {
  if (path.empty()) {
    RunConfig c;
    c.finalize();
    return c;
  }
  return parse_config(path);
}

// deterministic 80/20 split by index
std::pair<Dataset, Dataset> split(const Dataset& all) {
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < all.size(); ++i) (i % 5 == 4 ? test_idx : train_idx).push_back(i);
  auto take = [&](const std::vector<std::size_t>& idx) {
    Dataset d;
    d.num_classes = all.num_classes;
    d.images = all.batch<float>(idx);
    d.labels = all.batch_labels(idx);
    return d;
  };
  return {take(train_idx), take(test_idx)};
}

ModelSpec model_for(const RunConfig& cfg, const Dataset& data) {
  ModelSpec spec = zoo(cfg.model, data.num_classes);
  const Shape s = data.sample_shape();
  spec.in_channels = s.c;
  spec.in_h = s.h;
  spec.in_w = s.w;
  return spec;
}

void write_report(const RunConfig& cfg, const std::string& name, const TrainReport& r) {
  std::filesystem::create_directories(cfg.output_dir);
  const std::string path = (std::filesystem::path(cfg.output_dir) / name).string();
  r.write(path);
  std::cout << "training log: " << path << " (" << r.epochs_run << " epochs, " << r.wall_seconds
            << " s)\n";
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw std::invalid_argument(std::string("missing ") + flag);
}

json archs_to_json(const Network<float>& net) {
  json j;
  j["widths"] = net.widths().widths;
  j["archs"] = json::array();
  for (const PrunedArchitecture& a : net.embedded()) {
    j["archs"].push_back({{"source_width", a.source_width}, {"flops", a.flops}, {"counts", a.counts}});
  }
  return j;
}

void write_archs(const std::string& ckpt_path, const Network<float>& net) {
  const std::string path = ckpt_path + ".archs.json";
  std::ofstream(path) << archs_to_json(net).dump(2) << "\n";
  std::cout << "architectures: " << path << "\n";
}

void print_table(Network<float>& net, JoinPolicy policy, const Dataset* test) {
  std::cout << render_report(net.spec().name, report_rows(net, policy, test));
}

int cmd_train_base(const Common& c, double width) {
  const RunConfig cfg = load_config(c.config_path);
  require(c.out, "--out");
  const auto [train, test] = split(load_dataset(cfg.data));
  const ModelSpec spec = model_for(cfg, train);
  if (width <= 0.0) width = cfg.widths.full();
  auto [net, report] = train_individual<float>(spec, width, cfg.base, train);
  write_report(cfg, "train_base.tsv", report);
  std::cout << "width " << width << " test error " << evaluate(net, full_view(net), test) << "\n";
  save_checkpoint(c.out, net, cfg.digest);
  std::cout << "saved " << c.out << "\n";
  return 0;
}

int cmd_train_snet(const Common& c) {
  const RunConfig cfg = load_config(c.config_path);
  require(c.out, "--out");
  const auto [train, test] = split(load_dataset(cfg.data));
  Network<float> net = build_model<float>(model_for(cfg, train), cfg.seed);
  const TrainReport report = train_slimmable(net, cfg.base, train);
  write_report(cfg, "train_snet.tsv", report);
  std::vector<PrunedArchitecture> archs;
  for (double w : cfg.widths.widths) archs.push_back(width_architecture(net.graph(), w));
  embed_architectures(net, cfg.widths, archs, cfg.policy);
  print_table(net, cfg.policy, &test);
  save_checkpoint(c.out, net, cfg.digest);
  std::cout << "saved " << c.out << "\n";
  return 0;
}

int cmd_prune(const Common& c) {
  const RunConfig cfg = load_config(c.config_path);
  require(c.out, "--out");
  Network<float> net = [&] {
    if (!c.in.empty()) {
      // single base: every narrower width pruned from the same scores
      Network<float> base = load_checkpoint(c.in).net;
      std::vector<std::int64_t> targets;
      for (std::size_t i = 0; i + 1 < cfg.widths.size(); ++i) {
        targets.push_back(flops_count(base.spec(), cfg.widths[i], cfg.policy));
      }
      std::vector<PrunedArchitecture> archs;
      for (const SelectionPlan& p :
           one_shot_prune(base, cfg.method, targets, cfg.tolerance, cfg.policy)) {
        if (!p.within_tolerance) {
          std::cerr << "warning: pruned FLOPs off target by " << 100.0 * p.gap << "%\n";
        }
        archs.push_back(p.arch);
      }
      embed_architectures(base, cfg.widths, archs, cfg.policy);
      return base;
    }
    const auto [train, test] = split(load_dataset(cfg.data));
    const ModelSpec spec = model_for(cfg, train);
    BaseTrainFn<float> fn = [&](const ModelSpec& s, std::size_t index) {
      TrainingConfig tc = cfg.base;
      tc.seed = cfg.seed + index;
      return train_individual<float>(s, 1.0, tc, train).first;
    };
    MultiBaseResult<float> r =
        multi_base_prune(spec, cfg.widths, fn, cfg.method, cfg.tolerance, cfg.policy, cfg.concurrent);
    for (const SelectionPlan& p : r.plans) {
      if (!p.within_tolerance) {
        std::cerr << "warning: pruned FLOPs off target by " << 100.0 * p.gap << "%\n";
      }
    }
    Network<float> full = std::move(r.bases.back());
    embed_architectures(full, cfg.widths, r.archs, cfg.policy);
    return full;
  }();
  print_table(net, cfg.policy, nullptr);
  save_checkpoint(c.out, net, cfg.digest);
  write_archs(c.out, net);
  std::cout << "saved " << c.out << "\n";
  return 0;
}

int cmd_embed(const Common& c, const std::string& archs_path) {
  const RunConfig cfg = load_config(c.config_path);
  require(c.in, "--in");
  require(c.out, "--out");
  require(archs_path, "--archs");
  std::ifstream in(archs_path);
  if (!in) throw FormatError("cannot open " + archs_path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(archs_path + ": " + e.what());
  }
  Network<float> net = load_checkpoint(c.in).net;
  std::vector<PrunedArchitecture> archs;
  try {
    for (const json& a : j.at("archs")) {
      PrunedArchitecture p;
      p.counts = a.at("counts").get<std::vector<int>>();
      archs.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw FormatError(archs_path + ": " + e.what());
  }
  const WidthList widths =
      j.contains("widths") ? WidthList(j["widths"].get<std::vector<double>>()) : cfg.widths;
  embed_architectures(net, widths, archs, cfg.policy);
  print_table(net, cfg.policy, nullptr);
  save_checkpoint(c.out, net, cfg.digest);
  std::cout << "saved " << c.out << "\n";
  return 0;
}

int cmd_sort(const Common& c) {
  const RunConfig cfg = load_config(c.config_path);
  require(c.in, "--in");
  require(c.out, "--out");
  Network<float> net = load_checkpoint(c.in).net;
  const ChannelPermutation perm = sort_channels(net, cfg.method, cfg.policy);
  std::cout << (perm.is_identity() ? "channel order unchanged\n" : "channels sorted\n");
  save_checkpoint(c.out, net, cfg.digest);
  std::cout << "saved " << c.out << "\n";
  return 0;
}

int cmd_train_sp(const Common& c) {
  const RunConfig cfg = load_config(c.config_path);
  require(c.in, "--in");
  require(c.out, "--out");
  const auto [train, test] = split(load_dataset(cfg.data));
  Network<float> net = load_checkpoint(c.in).net;
  TrainingConfig tc = cfg.sp;
  tc.widths = net.widths();
  const TrainReport report = train_spnet(net, tc, train);
  write_report(cfg, "train_sp.tsv", report);
  print_table(net, cfg.policy, &test);
  save_checkpoint(c.out, net, cfg.digest);
  std::cout << "saved " << c.out << "\n";
  return 0;
}

int cmd_eval(const Common& c) {
  const RunConfig cfg = load_config(c.config_path);
  require(c.in, "--in");
  Network<float> net = load_checkpoint(c.in).net;
  const Dataset test = split(load_dataset(cfg.data)).second;
  if (net.embedded().empty()) {
    std::cout << "error " << evaluate(net, full_view(net), test) << "\n";
    return 0;
  }
  print_table(net, cfg.policy, &test);
  return 0;
}

int cmd_count(const std::string& model, double width, const std::string& policy, bool flops) {
  const ModelSpec spec = zoo(model);
  const std::int64_t n = flops ? flops_count(spec, width, join_policy_from_string(policy))
                               : param_count(spec, width);
  std::cout << n << " (" << format_count(n) << ")\n";
  return 0;
}

int cmd_bench(const Common& c, int index, int trials) {
  const RunConfig cfg = load_config(c.config_path);
  require(c.in, "--in");
  const Network<float> net = load_checkpoint(c.in).net;
  const std::size_t k = net.embedded().size();
  if (k == 0) throw std::invalid_argument("bench needs a checkpoint with embedded widths");
  std::vector<std::size_t> which;
  if (index >= 0) which.push_back(static_cast<std::size_t>(index));
  else for (std::size_t i = 0; i < k; ++i) which.push_back(i);
  for (std::size_t i : which) {
    for (int t = 0; t < trials; ++t) {
      std::cout << format_latency(latency_bench(net, i, cfg.bench, cfg.seed + t)) << "\n";
    }
  }
  return 0;
}

int cmd_report(const Common& c, bool with_eval) {
  const RunConfig cfg = load_config(c.config_path);
  require(c.in, "--in");
  Network<float> net = load_checkpoint(c.in).net;
  if (with_eval) {
    const Dataset test = split(load_dataset(cfg.data)).second;
    print_table(net, cfg.policy, &test);
  } else {
    print_table(net, cfg.policy, nullptr);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spnet: slimmable pruned networks"};
  app.require_subcommand(1);
  Common c;
  auto common = [&](CLI::App* sub, bool in, bool out) {
    sub->add_option("-c,--config", c.config_path, "run configuration file");
    if (in) sub->add_option("-i,--in", c.in, "input checkpoint");
    if (out) sub->add_option("-o,--out", c.out, "output checkpoint");
  };

  double base_width = 0.0;
  auto* train_base = app.add_subcommand("train-base", "train one standalone network");
  common(train_base, false, true);
  train_base->add_option("-w,--width", base_width, "width multiplier (default: widest)");

  auto* train_snet = app.add_subcommand("train-snet", "train a slimmable network with uniform widths");
  common(train_snet, false, true);

  auto* prune = app.add_subcommand(
      "prune", "prune bases to the FLOPs of each narrower width (multi-base unless --in)");
  common(prune, true, true);

  std::string archs_path;
  auto* embed = app.add_subcommand("embed", "embed architectures from JSON into a checkpoint");
  common(embed, true, true);
  embed->add_option("-a,--archs", archs_path, "architectures JSON")->check(CLI::ExistingFile);

  auto* sort = app.add_subcommand("sort", "sort channels so every embedded width is a prefix");
  common(sort, true, true);

  auto* train_sp = app.add_subcommand("train-sp", "train the embedded widths jointly");
  common(train_sp, true, true);

  auto* eval = app.add_subcommand("eval", "test error of every embedded width");
  common(eval, true, false);

  std::string model = "resnet50";
  double width = 1.0;
  std::string policy = "none";
  auto* flops = app.add_subcommand("flops", "count multiply-accumulates of a zoo model");
  auto* params = app.add_subcommand("params", "count parameters of a zoo model");
  for (CLI::App* sub : {flops, params}) {
    sub->add_option("-m,--model", model, "zoo model name")->capture_default_str();
    sub->add_option("-w,--width", width, "width multiplier")->capture_default_str();
  }
  flops->add_option("-p,--policy", policy, "join policy for residual adds")->capture_default_str();

  int bench_index = -1;
  int trials = 1;
  auto* bench = app.add_subcommand("bench", "sliced vs gathered inference latency");
  common(bench, true, false);
  bench->add_option("--index", bench_index, "embedded width index (default: all)");
  bench->add_option("--trials", trials, "repeat the measurement")->check(CLI::PositiveNumber);

  bool with_eval = false;
  auto* report = app.add_subcommand("report", "width / params / FLOPs table");
  common(report, true, false);
  report->add_flag("--eval", with_eval, "also evaluate test error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train_base) return cmd_train_base(c, base_width);
    if (*train_snet) return cmd_train_snet(c);
    if (*prune) return cmd_prune(c);
    if (*embed) return cmd_embed(c, archs_path);
    if (*sort) return cmd_sort(c);
    if (*train_sp) return cmd_train_sp(c);
    if (*eval) return cmd_eval(c);
    if (*flops) return cmd_count(model, width, policy, true);
    if (*params) return cmd_count(model, width, policy, false);
    if (*bench) return cmd_bench(c, bench_index, trials);
    if (*report) return cmd_report(c, with_eval);
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
