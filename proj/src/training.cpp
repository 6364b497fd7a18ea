#include "spnet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "spnet/profiler.hpp"

namespace spnet {

const char* to_string(TrainMode mode) {
  return mode == TrainMode::scratch ? "scratch" : "finetune";
}

TrainMode train_mode_from_string(std::string_view s) {
  if (s == "scratch") return TrainMode::scratch;
  if (s == "finetune") return TrainMode::finetune;
  throw std::invalid_argument("unknown training mode '" + std::string(s) + "'");
}

void TrainingConfig::validate() const {
  widths.validate(1);
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (sparsity < 0.0) throw std::invalid_argument("sparsity rate must be >= 0");
  if (kd.alpha < 0.0 || kd.alpha > 1.0) throw std::invalid_argument("kd alpha must be in [0, 1]");
  if (!(kd.temperature > 0.0)) throw std::invalid_argument("kd temperature must be positive");
  for (std::size_t i = 1; i < milestones.size(); ++i) {
    if (milestones[i] <= milestones[i - 1]) {
      throw std::invalid_argument("milestones must be strictly increasing");
    }
  }
  if (!factors.empty() && factors.size() != 1 && factors.size() != milestones.size()) {
    throw std::invalid_argument("need one factor per milestone or a single shared factor");
  }
  if (!milestones.empty() && factors.empty()) {
    throw std::invalid_argument("milestones given without a decay factor");
  }
  if (stop_at_train_accuracy < 0.0 || stop_at_train_accuracy > 1.0) {
    throw std::invalid_argument("stop_at_train_accuracy must be in [0, 1]");
  }
}

double lr_at(int epoch, const TrainingConfig& config) {
  double lr = config.lr;
  for (std::size_t i = 0; i < config.milestones.size(); ++i) {
    if (epoch >= config.milestones[i]) lr *= config.factors.size() == 1 ? config.factors[0] : config.factors[i];
  }
  return lr;
}

std::string TrainReport::to_tsv() const {
  std::ostringstream os;
  os << "epoch\twidth_index\twidth\tloss\terror\tlr\tseconds\n";
  os << std::setprecision(9);
  for (const TrainRecord& r : records) {
    os << r.epoch << '\t' << r.width_index << '\t' << r.width << '\t' << r.loss << '\t' << r.error
       << '\t' << r.lr << '\t' << std::setprecision(4) << r.seconds << std::setprecision(9)
       << '\n';
  }
  return os.str();
}

void TrainReport::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_tsv();
}

std::vector<TrainRecord> TrainReport::last_epoch() const {
  std::vector<TrainRecord> out;
  for (const TrainRecord& r : records) {
    if (r.epoch == epochs_run - 1) out.push_back(r);
  }
  return out;
}

template <typename T>
double sparsity_loss(Network<T>& net, double lambda, int bank, bool accumulate_grad) {
  if (bank < 0 || static_cast<std::size_t>(bank) >= net.bank_count()) {
    throw std::out_of_range("BN bank " + std::to_string(bank) + " not present");
  }
  const Graph& g = net.graph();
  double total = 0.0;
  for (const ChannelSpace& s : g.spaces()) {
    if (!s.prunable) continue;
    BnState<T>& st = net.bns[s.score_bn].banks[bank];
    for (std::size_t c = 0; c < st.gamma.value.size(); ++c) {
      const T v = st.gamma.value[c];
      total += std::abs(static_cast<double>(v));
      if (accumulate_grad && lambda != 0.0) {
        const T sign = v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
        st.gamma.grad[c] += static_cast<T>(lambda) * sign;
      }
    }
    if (accumulate_grad && lambda != 0.0) st.gamma.touched = true;
  }
  return lambda * total;
}

namespace {

std::vector<double> log_softmax(const double* z, int classes, double temperature) {
  std::vector<double> out(classes);
  double mx = z[0] / temperature;
  for (int c = 1; c < classes; ++c) mx = std::max(mx, z[c] / temperature);
  double sum = 0.0;
  for (int c = 0; c < classes; ++c) sum += std::exp(z[c] / temperature - mx);
  const double lz = mx + std::log(sum);
  for (int c = 0; c < classes; ++c) out[c] = z[c] / temperature - lz;
  return out;
}

template <typename T>
int argmax_row(const T* row, int classes) {
  return static_cast<int>(std::max_element(row, row + classes) - row);
}

}  // namespace

template <typename T>
double inplace_kd_loss(const T* student, const T* teacher, int batch, int classes,
                       std::span<const int> labels, double temperature, double alpha, T* grad) {
  std::vector<T> ce_grad(static_cast<std::size_t>(batch) * classes);
  const double ce = cross_entropy(student, batch, classes, labels, grad ? ce_grad.data() : nullptr);
  double kl = 0.0;
  std::vector<double> zs(classes), zt(classes);
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < classes; ++c) {
      zs[c] = static_cast<double>(student[b * classes + c]);
      zt[c] = static_cast<double>(teacher[b * classes + c]);
    }
    const std::vector<double> ls = log_softmax(zs.data(), classes, temperature);
    const std::vector<double> lt = log_softmax(zt.data(), classes, temperature);
    for (int c = 0; c < classes; ++c) {
      const double pt = std::exp(lt[c]);
      kl += pt * (lt[c] - ls[c]);
      if (grad) {
        const double g = alpha * temperature * (std::exp(ls[c]) - pt) / batch;
        grad[b * classes + c] = static_cast<T>(g + (1.0 - alpha) * ce_grad[b * classes + c]);
      }
    }
  }
  kl /= batch;
  return alpha * temperature * temperature * kl + (1.0 - alpha) * ce;
}

namespace {

template <typename T>
void check_data(const Network<T>& net, const Dataset& data) {
  const ModelSpec& spec = net.spec();
  const Shape& s = data.images.shape();
  if (s.c != spec.in_channels || s.h != spec.in_h || s.w != spec.in_w) {
    throw DimensionError("dataset samples " + data.sample_shape().str() + " do not fit " +
                         spec.name + " input (" + std::to_string(spec.in_channels) + "x" +
                         std::to_string(spec.in_h) + "x" + std::to_string(spec.in_w) + ")");
  }
  for (int y : data.labels) {
    if (y < 0 || y >= spec.num_classes) {
      throw DimensionError("label " + std::to_string(y) + " outside the " +
                           std::to_string(spec.num_classes) + " classes of " + spec.name);
    }
  }
}

// Shared joint-width loop. views are ordered by ascending width; the last is the
// widest and, with kd set, the teacher.
template <typename T>
void run_training(Network<T>& net, const std::vector<SubNetworkView>& views,
                  const std::vector<double>& widths, const TrainingConfig& config,
                  const Dataset& data, bool kd, TrainReport& report) {
  config.validate();
  check_data(net, data);
  const auto start = std::chrono::steady_clock::now();
  const int k = static_cast<int>(views.size());
  const int classes = net.spec().num_classes;
  std::vector<Executor<T>> executors;
  for (const SubNetworkView& v : views) executors.emplace_back(net, v);
  std::vector<Param<T>*> params = net.parameters();
  SgdState<T> state;
  SgdConfig sgd{config.lr, config.momentum, config.nesterov, config.weight_decay};
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const int sparsity_bank = views.back().bank;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    sgd.lr = lr_at(epoch, config);
    std::vector<double> loss_sum(k, 0.0);
    std::vector<std::size_t> wrong(k, 0);
    std::size_t seen = 0;
    int batches = 0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      const std::size_t count = std::min<std::size_t>(config.batch_size, order.size() - first);
      if (count < 2 && batches > 0) break;  // batch statistics need two samples
      const std::span<const std::size_t> idx(order.data() + first, count);
      const Tensor<T> x = data.batch<T>(idx);
      const std::vector<int> labels = data.batch_labels(idx);
      const int b = static_cast<int>(count);
      Tensor<T> teacher;
      for (int i = k - 1; i >= 0; --i) {
        const Tensor<T>& logits = executors[i].forward(x, true);
        Tensor<T> grad(logits.shape());
        double loss = 0.0;
        if (kd && i != k - 1) {
          loss = inplace_kd_loss(logits.data(), teacher.data(), b, classes, labels,
                                 config.kd.temperature, config.kd.alpha, grad.data());
        } else {
          loss = cross_entropy(logits.data(), b, classes, labels, grad.data());
        }
        if (kd && i == k - 1) teacher = logits;
        for (int n = 0; n < b; ++n) {
          if (argmax_row(logits.data() + n * classes, classes) != labels[n]) ++wrong[i];
        }
        loss_sum[i] += loss * b;
        executors[i].backward(grad);
      }
      if (config.sparsity > 0.0) sparsity_loss(net, config.sparsity, sparsity_bank, true);
      sgd_step<T>(params, sgd, state);
      seen += count;
      ++batches;
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    for (int i = 0; i < k; ++i) {
      TrainRecord r;
      r.epoch = epoch;
      r.width_index = i;
      r.width = widths[i];
      r.loss = seen ? loss_sum[i] / seen : 0.0;
      r.error = seen ? static_cast<double>(wrong[i]) / seen : 0.0;
      r.lr = sgd.lr;
      r.seconds = secs;
      report.records.push_back(r);
    }
    report.epochs_run = epoch + 1;
    if (config.stop_at_train_accuracy > 0.0) {
      bool done = true;
      for (int i = 0; i < k && done; ++i) {
        done = 1.0 - evaluate(net, views[i], data) >= config.stop_at_train_accuracy;
      }
      if (done) break;
    }
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

template <typename T>
void ensure_banks(Network<T>& net, std::size_t k) {
  if (net.bank_count() == k) return;
  if (net.bank_count() != 1) {
    throw std::invalid_argument("network has " + std::to_string(net.bank_count()) +
                                " BN banks for " + std::to_string(k) + " widths");
  }
  configure_switchable_bn(net, k);
}

}  // namespace

template <typename T>
std::pair<Network<T>, TrainReport> train_individual(const ModelSpec& spec, double width,
                                                    const TrainingConfig& config,
                                                    const Dataset& data) {
  Network<T> net = build_model<T>(scale_width(spec, width), config.seed);
  TrainReport report;
  run_training(net, {full_view(net)}, {width}, config, data, false, report);
  return {std::move(net), std::move(report)};
}

template <typename T>
TrainReport train_slimmable(Network<T>& net, const TrainingConfig& config, const Dataset& data) {
  config.validate();
  const WidthList& w = config.widths;
  ensure_banks(net, w.size());
  std::vector<SubNetworkView> views;
  for (std::size_t i = 0; i < w.size(); ++i) {
    views.push_back(slice_view(net, width_architecture(net.graph(), w[i]), static_cast<int>(i)));
  }
  TrainReport report;
  run_training(net, views, w.widths, config, data, false, report);
  return report;
}

template <typename T>
TrainReport train_spnet(Network<T>& net, const TrainingConfig& config, const Dataset& data) {
  if (net.embedded().empty()) {
    throw std::invalid_argument("train_spnet needs embedded architectures (run embed first)");
  }
  const std::size_t k = net.embedded().size();
  ensure_banks(net, k);
  if (config.mode == TrainMode::scratch) {
    const Network<T> fresh = build_model<T>(net.spec(), config.seed);
    for (std::size_t i = 0; i < net.convs.size(); ++i) net.convs[i] = fresh.convs[i];
    for (std::size_t i = 0; i < net.linears.size(); ++i) net.linears[i] = fresh.linears[i];
    for (std::size_t i = 0; i < net.bns.size(); ++i) {
      for (BnState<T>& bank : net.bns[i].banks) bank = fresh.bns[i].banks.front();
    }
  }
  std::vector<SubNetworkView> views;
  for (std::size_t i = 0; i < k; ++i) views.push_back(embedded_view(net, i));
  TrainReport report;
  report.archs = net.embedded();
  run_training(net, views, net.widths().widths, config, data, config.kd.enabled, report);
  return report;
}

template <typename T>
double evaluate(Network<T>& net, const SubNetworkView& view, const Dataset& data,
                int batch_size) {
  check_data(net, data);
  if (data.size() == 0) return 0.0;
  Executor<T> ex(net, view);
  const int classes = net.spec().num_classes;
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::size_t wrong = 0;
  for (std::size_t first = 0; first < idx.size(); first += batch_size) {
    const std::size_t count = std::min<std::size_t>(batch_size, idx.size() - first);
    const std::span<const std::size_t> part(idx.data() + first, count);
    const Tensor<T>& logits = ex.forward(data.batch<T>(part), false);
    for (std::size_t n = 0; n < count; ++n) {
      if (argmax_row(logits.data() + n * classes, classes) != data.labels[first + n]) ++wrong;
    }
  }
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

template <typename T>
double loss_and_grad(Network<T>& net, const SubNetworkView& view, const Tensor<T>& input,
                     std::span<const int> labels, bool backward) {
  Executor<T> ex(net, view);
  const Tensor<T>& logits = ex.forward(input, true);
  const int classes = net.spec().num_classes;
  if (!backward) return cross_entropy(logits.data(), input.shape().n, classes, labels, static_cast<T*>(nullptr));
  net.zero_grad();
  Tensor<T> grad(logits.shape());
  const double loss = cross_entropy(logits.data(), input.shape().n, classes, labels, grad.data());
  ex.backward(grad);
  return loss;
}

double finite_difference_grad(Network<double>& net, const SubNetworkView& view,
                              std::size_t param_index, std::size_t element,
                              const Tensor<double>& input, std::span<const int> labels,
                              double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  std::vector<Param<double>*> params = net.parameters();
  Param<double>& p = *params.at(param_index);
  const double v = p.value.storage().at(element);
  p.value[element] = v + epsilon;
  const double up = loss_and_grad(net, view, input, labels, false);
  p.value[element] = v - epsilon;
  const double down = loss_and_grad(net, view, input, labels, false);
  p.value[element] = v;
  return (up - down) / (2.0 * epsilon);
}

#define SPNET_INSTANTIATE_TRAINING(T)                                                          \
  template double sparsity_loss<T>(Network<T>&, double, int, bool);                           \
  template double inplace_kd_loss<T>(const T*, const T*, int, int, std::span<const int>,      \
                                     double, double, T*);                                     \
  template std::pair<Network<T>, TrainReport> train_individual<T>(                            \
      const ModelSpec&, double, const TrainingConfig&, const Dataset&);                       \
  template TrainReport train_slimmable<T>(Network<T>&, const TrainingConfig&, const Dataset&); \
  template TrainReport train_spnet<T>(Network<T>&, const TrainingConfig&, const Dataset&);     \
  template double evaluate<T>(Network<T>&, const SubNetworkView&, const Dataset&, int);       \
  template double loss_and_grad<T>(Network<T>&, const SubNetworkView&, const Tensor<T>&,      \
                                   std::span<const int>, bool);

SPNET_INSTANTIATE_TRAINING(float)
SPNET_INSTANTIATE_TRAINING(double)

}  // namespace spnet
