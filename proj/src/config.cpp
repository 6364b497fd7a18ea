#include "spnet/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace spnet {

void BenchConfig::validate() const {
  if (batch < 1) throw std::invalid_argument("bench batch must be >= 1");
  if (warmup < 10) throw std::invalid_argument("bench needs at least 10 warm-up iterations");
  if (reps < warmup + 1) {
    throw std::invalid_argument("bench reps (" + std::to_string(reps) +
                                ") must exceed warmup (" + std::to_string(warmup) + ")");
  }
}

RunConfig::RunConfig() { sp.mode = TrainMode::finetune; }

void RunConfig::finalize() {
  widths.validate(2);
  base.widths = widths;
  sp.widths = widths;
  base.seed = seed;
  sp.seed = seed;
  base.validate();
  sp.validate();
  bench.validate();
  if (!(tolerance > 0.0)) throw std::invalid_argument("prune tolerance must be positive");
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// thrown by setters, rewrapped with the location
struct BadValue {
  std::string what;
};

double to_double(std::string_view v) {
  double x = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw BadValue{"expected a number, got '" + std::string(v) + "'"};
  }
  return x;
}

long long to_int(std::string_view v) {
  long long x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw BadValue{"expected an integer, got '" + std::string(v) + "'"};
  }
  return x;
}

int to_int32(std::string_view v) {
  const long long x = to_int(v);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    throw BadValue{"integer out of range: " + std::string(v)};
  }
  return static_cast<int>(x);
}

bool to_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw BadValue{"expected a boolean, got '" + std::string(v) + "'"};
}

std::vector<std::string_view> split(std::string_view v) {
  std::vector<std::string_view> out;
  if (trim(v).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    out.push_back(trim(v.substr(start, comma == std::string_view::npos ? v.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename F>
auto wrap(F&& f, std::string_view v) {
  try {
    return f(v);
  } catch (const BadValue&) {
    throw;
  } catch (const std::exception& e) {
    throw BadValue{e.what()};
  }
}

using Setter = std::function<void(RunConfig&, std::string_view)>;

void add_training_keys(std::map<std::string, Setter>& keys, const std::string& section,
                       TrainingConfig RunConfig::*member, bool sp) {
  auto field = [member](RunConfig& c) -> TrainingConfig& { return c.*member; };
  keys[section + ".epochs"] = [field](RunConfig& c, std::string_view v) { field(c).epochs = to_int32(v); };
  keys[section + ".batch_size"] = [field](RunConfig& c, std::string_view v) {
    field(c).batch_size = to_int32(v);
  };
  keys[section + ".lr"] = [field](RunConfig& c, std::string_view v) { field(c).lr = to_double(v); };
  keys[section + ".milestones"] = [field](RunConfig& c, std::string_view v) {
    field(c).milestones.clear();
    for (auto s : split(v)) field(c).milestones.push_back(to_int32(s));
  };
  keys[section + ".factors"] = [field](RunConfig& c, std::string_view v) {
    field(c).factors.clear();
    for (auto s : split(v)) field(c).factors.push_back(to_double(s));
  };
  keys[section + ".momentum"] = [field](RunConfig& c, std::string_view v) {
    field(c).momentum = to_double(v);
  };
  keys[section + ".nesterov"] = [field](RunConfig& c, std::string_view v) {
    field(c).nesterov = to_bool(v);
  };
  keys[section + ".weight_decay"] = [field](RunConfig& c, std::string_view v) {
    field(c).weight_decay = to_double(v);
  };
  keys[section + ".sparsity"] = [field](RunConfig& c, std::string_view v) {
    field(c).sparsity = to_double(v);
  };
  keys[section + ".stop_at_train_accuracy"] = [field](RunConfig& c, std::string_view v) {
    field(c).stop_at_train_accuracy = to_double(v);
  };
  if (!sp) return;
  keys[section + ".mode"] = [field](RunConfig& c, std::string_view v) {
    field(c).mode = wrap([](std::string_view s) { return train_mode_from_string(s); }, v);
  };
  keys[section + ".kd"] = [field](RunConfig& c, std::string_view v) { field(c).kd.enabled = to_bool(v); };
  keys[section + ".kd_temperature"] = [field](RunConfig& c, std::string_view v) {
    field(c).kd.temperature = to_double(v);
  };
  keys[section + ".kd_alpha"] = [field](RunConfig& c, std::string_view v) {
    field(c).kd.alpha = to_double(v);
  };
}

const std::map<std::string, Setter>& key_table() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> k;
    k["model"] = [](RunConfig& c, std::string_view v) { c.model = std::string(v); };
    k["width_list"] = [](RunConfig& c, std::string_view v) {
      c.widths = wrap([](std::string_view s) { return WidthList::parse(s); }, v);
    };
    k["seed"] = [](RunConfig& c, std::string_view v) {
      const long long s = to_int(v);
      if (s < 0) throw BadValue{"seed must be >= 0"};
      c.seed = static_cast<std::uint64_t>(s);
    };
    k["output_dir"] = [](RunConfig& c, std::string_view v) { c.output_dir = std::string(v); };

    k["data.source"] = [](RunConfig& c, std::string_view v) {
      if (v == "synthetic") c.data.kind = DatasetSource::Kind::synthetic;
      else if (v == "idx") c.data.kind = DatasetSource::Kind::idx;
      else if (v == "csv") c.data.kind = DatasetSource::Kind::csv;
      else throw BadValue{"unknown data source '" + std::string(v) + "'"};
    };
    k["data.classes"] = [](RunConfig& c, std::string_view v) { c.data.synthetic.classes = to_int32(v); };
    k["data.samples"] = [](RunConfig& c, std::string_view v) { c.data.synthetic.samples = to_int32(v); };
    k["data.channels"] = [](RunConfig& c, std::string_view v) { c.data.synthetic.channels = to_int32(v); };
    k["data.height"] = [](RunConfig& c, std::string_view v) { c.data.synthetic.height = to_int32(v); };
    k["data.width"] = [](RunConfig& c, std::string_view v) { c.data.synthetic.width = to_int32(v); };
    k["data.separation"] = [](RunConfig& c, std::string_view v) {
      c.data.synthetic.separation = to_double(v);
    };
    k["data.noise"] = [](RunConfig& c, std::string_view v) { c.data.synthetic.noise = to_double(v); };
    k["data.seed"] = [](RunConfig& c, std::string_view v) {
      c.data.synthetic.seed = static_cast<std::uint64_t>(to_int(v));
    };
    k["data.images"] = [](RunConfig& c, std::string_view v) { c.data.images_path = std::string(v); };
    k["data.labels"] = [](RunConfig& c, std::string_view v) { c.data.labels_path = std::string(v); };

    add_training_keys(k, "train", &RunConfig::base, false);
    add_training_keys(k, "train_sp", &RunConfig::sp, true);

    k["prune.method"] = [](RunConfig& c, std::string_view v) {
      c.method = wrap([](std::string_view s) { return scoring_method_from_string(s); }, v);
    };
    k["prune.join_policy"] = [](RunConfig& c, std::string_view v) {
      c.policy = wrap([](std::string_view s) { return join_policy_from_string(s); }, v);
    };
    k["prune.tolerance"] = [](RunConfig& c, std::string_view v) { c.tolerance = to_double(v); };
    k["prune.concurrent"] = [](RunConfig& c, std::string_view v) { c.concurrent = to_bool(v); };

    k["bench.batch"] = [](RunConfig& c, std::string_view v) { c.bench.batch = to_int32(v); };
    k["bench.reps"] = [](RunConfig& c, std::string_view v) { c.bench.reps = to_int32(v); };
    k["bench.warmup"] = [](RunConfig& c, std::string_view v) { c.bench.warmup = to_int32(v); };
    return k;
  }();
  return table;
}

}  // namespace

RunConfig parse_config_text(std::string_view text, const std::string& name) {
  RunConfig config;
  const auto& keys = key_table();
  std::map<std::string, int> seen;
  std::string section;
  int line_no = 0;
  std::size_t pos = 0;
  auto fail = [&](std::size_t col, const std::string& msg) {
    throw FormatError(name + ":" + std::to_string(line_no) + ":" + std::to_string(col) + ": " + msg);
  };
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view raw = text.substr(pos, nl == text.npos ? text.npos : nl - pos);
    pos = nl == text.npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const auto hash = raw.find('#');
    std::string_view line = trim(hash == raw.npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::size_t col = static_cast<std::size_t>(line.data() - raw.data()) + 1;
    if (line.front() == '[') {
      if (line.back() != ']') fail(col, "unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section.empty()) fail(col, "empty section name");
      const bool known = std::any_of(keys.begin(), keys.end(),
                                     [&](const auto& k) { return k.first.rfind(section + ".", 0) == 0; });
      if (!known) fail(col, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == line.npos) fail(col, "expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (key.empty()) fail(col, "missing key");
    const std::string full = section.empty() ? key : section + "." + key;
    const auto it = keys.find(full);
    if (it == keys.end()) fail(col, "unknown key '" + full + "'");
    if (auto prev = seen.find(full); prev != seen.end()) {
      fail(col, "duplicate key '" + full + "' (first set on line " + std::to_string(prev->second) + ")");
    }
    seen[full] = line_no;
    try {
      it->second(config, value);
    } catch (const BadValue& e) {
      fail(col + (value.data() - line.data()), "bad value for '" + full + "': " + e.what);
    }
  }
  try {
    config.finalize();
  } catch (const std::invalid_argument& e) {
    throw FormatError(name + ": " + e.what());
  }
  config.digest = seen.empty() ? 0 : fnv1a(text);
  return config;
}

RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace spnet
