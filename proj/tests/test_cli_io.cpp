#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "spnet/bench.hpp"
#include "spnet/checkpoint.hpp"
#include "spnet/config.hpp"
#include "spnet/profiler.hpp"
#include "spnet/pruning.hpp"
#include "spnet/report.hpp"

using namespace spnet;
using namespace testutil;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::path(SPNET_TEST_TMP) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), b.size());
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

struct Run {
  int code;
  std::string out;
};

Run cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli.log";
  const std::string cmd = std::string("\"") + SPNET_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config parsing") {
  const RunConfig d = parse_config_text("");
  CHECK(d.model == "micro_vgg");
  CHECK(d.widths == WidthList({0.25, 0.5, 1.0}));
  CHECK(d.policy == JoinPolicy::zpm);
  CHECK(d.digest == 0);
  CHECK(parse_config_text("# only a comment\n\n").digest == 0);

  const RunConfig c = parse_config_text(
      "model = micro_resnet\n"
      "width_list = 0.25,0.5,1.0  # trailing comment\n"
      "[train]\n"
      "epochs = 3\n"
      "milestones = 1,2\n"
      "factors = 0.2\n"
      "[train_sp]\n"
      "kd_alpha = 0.5\n"
      "mode = scratch\n"
      "[prune]\n"
      "join_policy = prioritize_shortcut\n");
  CHECK(c.model == "micro_resnet");
  CHECK(c.widths.widths == std::vector<double>{0.25, 0.5, 1.0});
  CHECK(c.base.epochs == 3);
  CHECK(c.base.milestones == std::vector<int>{1, 2});
  CHECK(c.sp.kd.alpha == 0.5);
  CHECK(c.sp.mode == TrainMode::scratch);
  CHECK(c.base.widths == c.widths);
  CHECK(c.policy == JoinPolicy::prioritize_shortcut);
  CHECK(c.digest != 0);

  const std::string dup = error_of([] { parse_config_text("seed = 1\nmodel = x\nseed = 2\n", "run.cfg"); });
  CHECK(dup.find("run.cfg:3:") == 0);
  CHECK(dup.find("line 1") != std::string::npos);
  CHECK(error_of([] { parse_config_text("\nbogus = 1\n", "a"); }).find("a:2:1:") == 0);
  CHECK(error_of([] { parse_config_text("[train]\nepochs = ten\n", "a"); }).find("a:2:") == 0);
  CHECK(error_of([] { parse_config_text("[nope]\n", "a"); }).find("a:1:") == 0);
  CHECK_THROWS_AS(parse_config_text("width_list = 0.5,0.25\n"), FormatError);
  CHECK_THROWS_AS(parse_config_text("[bench]\nreps = 10\n"), FormatError);
  CHECK_THROWS_AS(parse_config("/nonexistent/run.cfg"), FormatError);
}

TEST_CASE("datasets") {
  const SyntheticSpec s{2, 512, 3, 32, 32, 1.0, 1.0, 7};
  const Dataset a = make_synthetic(s), b = make_synthetic(s);
  CHECK(a.bytes() == b.bytes());
  CHECK(a.labels == b.labels);
  CHECK(a.size() == 512);
  SyntheticSpec s2 = s;
  s2.seed = 8;
  CHECK(make_synthetic(s2).bytes() != a.bytes());

  const fs::path dir = scratch("datasets");
  std::vector<std::uint8_t> img, lab;
  put_be32(img, 0x00000803);
  put_be32(img, 2);
  put_be32(img, 2);
  put_be32(img, 3);
  for (int i = 0; i < 12; ++i) img.push_back(static_cast<std::uint8_t>(i * 20));
  put_be32(lab, 0x00000801);
  put_be32(lab, 2);
  lab.push_back(1);
  lab.push_back(0);
  write_bytes(dir / "img.idx", img);
  write_bytes(dir / "lab.idx", lab);
  const Dataset idx = load_idx((dir / "img.idx").string(), (dir / "lab.idx").string());
  CHECK(idx.images.shape() == Shape{2, 1, 2, 3});
  CHECK(idx.labels == std::vector<int>{1, 0});
  CHECK(idx.images[11] == doctest::Approx(220.0 / 255.0));
  // swapped files: the magic numbers do not match
  CHECK_THROWS_AS(load_idx((dir / "lab.idx").string(), (dir / "img.idx").string()), FormatError);
  img.pop_back();
  write_bytes(dir / "short.idx", img);
  CHECK_THROWS_AS(load_idx((dir / "short.idx").string(), (dir / "lab.idx").string()), FormatError);

  std::ofstream(dir / "ok.csv") << "0,0.1,0.2,0.3,0.4\n1,1,1,1,1\n";
  const Dataset csv = load_csv((dir / "ok.csv").string(), 1, 2, 2);
  CHECK(csv.size() == 2);
  CHECK(csv.images[2] == doctest::Approx(0.3));
  std::ofstream(dir / "bad.csv") << "0,0.1,0.2,0.3,0.4\n1,1,1,1,1\n1,2,3\n";
  const std::string e = error_of([&] { load_csv((dir / "bad.csv").string(), 1, 2, 2); });
  CHECK(e.find("row 3") != std::string::npos);
}

TEST_CASE("checkpoint round trip") {
  Network<float> net = build_model<float>(zoo("micro_resnet"), 3);
  std::mt19937_64 rng(3);
  randomize_bn(net, rng);
  const Graph& g = net.graph();
  std::vector<PrunedArchitecture> archs;
  for (double w : {0.25, 0.5}) archs.push_back(width_architecture(g, w));
  embed_architectures(net, WidthList({0.25, 0.5, 1.0}), archs, JoinPolicy::zpm);
  net.set_bank_count(3);
  std::mt19937_64 rng2(4);
  randomize_bn(net, rng2);
  sort_channels(net, ScoringMethod::bn_gamma, JoinPolicy::zpm);

  const std::vector<std::uint8_t> bytes = serialize_checkpoint(net, 42);
  const Checkpoint ck = deserialize_checkpoint(bytes);
  CHECK(ck.config_digest == 42);
  CHECK(serialize_checkpoint(ck.net, 42) == bytes);
  CHECK(ck.net.order == net.order);
  CHECK(ck.net.embedded() == net.embedded());
  REQUIRE(ck.joins.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(ck.joins[i] == embedded_view(net, i).joins);
  auto pa = net.parameters();
  auto pb = const_cast<Network<float>&>(ck.net).parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value.storage() == pb[i]->value.storage());

  const fs::path dir = scratch("checkpoint");
  save_checkpoint((dir / "a.ckpt").string(), net, 42);
  CHECK(read_bytes(dir / "a.ckpt") == bytes);
  CHECK(serialize_checkpoint(load_checkpoint((dir / "a.ckpt").string()).net, 42) == bytes);

  std::vector<std::uint8_t> v2 = bytes;
  v2[8] = 2;
  const std::string e = error_of([&] { deserialize_checkpoint(v2); });
  CHECK(e.find("version 2") != std::string::npos);
  std::vector<std::uint8_t> magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(magic), FormatError);
  std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 3);
  CHECK_THROWS_AS(deserialize_checkpoint(cut), FormatError);
  std::vector<std::uint8_t> extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(deserialize_checkpoint(extra), FormatError);
}

TEST_CASE("latency bench") {
  BenchConfig bad;
  bad.reps = 10;
  bad.warmup = 10;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.warmup = 5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  Network<float> net = build_model<float>(zoo("micro_resnet"), 5);
  std::mt19937_64 rng(5);
  randomize_bn(net, rng);
  std::vector<PrunedArchitecture> archs{width_architecture(net.graph(), 0.5)};
  embed_architectures(net, WidthList({0.5, 1.0}), archs, JoinPolicy::zpm);
  sort_channels(net, ScoringMethod::bn_gamma, JoinPolicy::zpm);
  BenchConfig cfg;
  cfg.batch = 8;
  cfg.reps = 16;
  const LatencyResult full = latency_bench(net, 1, cfg);
  CHECK(full.timed == 6);
  CHECK(full.sliced.samples_ms.size() == 6);
  // same sums in a different channel order
  CHECK(full.max_abs_diff <= 1e-5);
  // full width gathers nothing; both paths are the same computation
  CHECK(full.ratio() > 0.5);
  CHECK(full.ratio() < 2.0);
  const LatencyResult half = latency_bench(net, 0, cfg);
  CHECK(half.max_abs_diff <= 1e-5);
  CHECK(half.gather.p95_ms >= half.gather.median_ms);
  CHECK(format_latency(half).find("gather") != std::string::npos);
  CHECK_THROWS_AS(latency_bench(net, 2, cfg), std::out_of_range);
  CHECK(unsort(net).order == ChannelPermutation::identity(net.graph()).order);
}

TEST_CASE("report matches the profiler") {
  Network<float> net = build_model<float>(zoo("micro_resnet"), 6);
  const Graph& g = net.graph();
  std::vector<PrunedArchitecture> archs;
  for (double w : {0.25, 0.5}) archs.push_back(width_architecture(g, w));
  embed_architectures(net, WidthList({0.25, 0.5, 1.0}), archs, JoinPolicy::zpm);
  const std::vector<ReportRow> rows = report_rows(net, JoinPolicy::zpm);
  REQUIRE(rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const std::vector<int> counts = net.embedded()[i].counts;
    CHECK(rows[i].flops == flops_count(g, counts, JoinPolicy::zpm));
    CHECK(rows[i].params == param_count(g, counts));
    CHECK(rows[i].error < 0);
  }
  CHECK(rows[2].flops == flops_count(net.spec(), 1.0, JoinPolicy::zpm));

  CHECK(format_count(25557032) == "25.6M");
  CHECK(format_count(4089184256LL) == "4.1G");
  CHECK(format_count(568740000) == "569M");
  CHECK(format_count(999) == "999");
  const std::string table = render_report("t", rows);
  CHECK(table.find("FLOPs") != std::string::npos);
  CHECK(std::count(table.begin(), table.end(), '\n') == 5);
}

TEST_CASE("cli") {
  const fs::path dir = scratch("cli");
  Run r = cli("flops --model resnet50 --width 1.0", dir);
  CHECK(r.code == 0);
  CHECK(r.out.find("(4.1G)") != std::string::npos);
  r = cli("params --model resnet50", dir);
  CHECK(r.out.find("(25.6M)") != std::string::npos);
  CHECK(cli("no-such-command", dir).code == 2);
  CHECK(cli("flops --bogus", dir).code == 2);
  CHECK(cli("", dir).code == 2);
  CHECK(cli("--help", dir).code == 0);

  std::ofstream(dir / "bad.cfg") << "model = micro_vgg\nwhat = 1\n";
  r = cli("eval -c \"" + (dir / "bad.cfg").string() + "\" -i x", dir);
  CHECK(r.code == 3);
  CHECK(r.out.find("bad.cfg:2:1") != std::string::npos);

  const fs::path cfg = dir / "run.cfg";
  std::ofstream(cfg) << "model = micro_vgg\n"
                        "width_list = 0.5,1.0\n"
                        "output_dir = " << (dir / "out").string() << "\n"
                        "[data]\nclasses = 2\nsamples = 160\nseparation = 1.5\n"
                        "[train]\nepochs = 3\nbatch_size = 32\nlr = 0.05\n"
                        "[train_sp]\nepochs = 3\nbatch_size = 32\nlr = 0.05\n"
                        "[prune]\njoin_policy = none\ntolerance = 0.05\n";
  const std::string c = "-c \"" + cfg.string() + "\" ";
  auto p = [&](const char* n) { return "\"" + (dir / n).string() + "\""; };

  // sort without embedded widths keeps the checkpoint as it is
  r = cli("train-base " + c + "-o " + p("base.ckpt"), dir);
  REQUIRE_MESSAGE(r.code == 0, r.out);
  r = cli("sort " + c + "-i " + p("base.ckpt") + " -o " + p("base_sorted.ckpt"), dir);
  CHECK(r.code == 0);
  CHECK(r.out.find("unchanged") != std::string::npos);
  CHECK(read_bytes(dir / "base.ckpt") == read_bytes(dir / "base_sorted.ckpt"));

  r = cli("prune " + c + "-o " + p("pruned.ckpt"), dir);
  REQUIRE_MESSAGE(r.code == 0, r.out);
  CHECK(fs::exists(dir / "pruned.ckpt.archs.json"));
  r = cli("sort " + c + "-i " + p("pruned.ckpt") + " -o " + p("sorted.ckpt"), dir);
  REQUIRE_MESSAGE(r.code == 0, r.out);
  r = cli("train-sp " + c + "-i " + p("sorted.ckpt") + " -o " + p("sp.ckpt"), dir);
  REQUIRE_MESSAGE(r.code == 0, r.out);
  CHECK(fs::exists(dir / "out" / "train_sp.tsv"));
  r = cli("eval " + c + "-i " + p("sp.ckpt"), dir);
  REQUIRE_MESSAGE(r.code == 0, r.out);
  // header, column names and one row per width
  std::istringstream lines(r.out);
  std::string line;
  int rows = 0;
  while (std::getline(lines, line)) rows += line.rfind("0.5 ", 0) == 0 || line.rfind("1 ", 0) == 0;
  CHECK(rows == 2);
  CHECK(r.out.find('%') != std::string::npos);

  const Checkpoint sp = load_checkpoint((dir / "sp.ckpt").string());
  CHECK(sp.net.embedded().size() == 2);
  const std::vector<std::uint8_t> text = read_bytes(cfg);
  CHECK(sp.config_digest == fnv1a(std::string(text.begin(), text.end())));

  std::ofstream(dir / "bench.cfg") << "[bench]\nbatch = 4\nreps = 12\n";
  r = cli("bench -c " + p("bench.cfg") + " -i " + p("sp.ckpt") + " --index 0", dir);
  CHECK(r.code == 0);
  r = cli("report -i " + p("sp.ckpt"), dir);
  CHECK(r.code == 0);
  CHECK(r.out.find("FLOPs") != std::string::npos);
  CHECK(cli("eval " + c + "-i " + p("missing.ckpt"), dir).code != 0);
}
