#include <doctest.h>

#include "helpers.hpp"
#include "spnet/profiler.hpp"
#include "spnet/pruning.hpp"
#include "spnet/slimmable.hpp"
#include "spnet/training.hpp"

using namespace spnet;
using namespace testutil;

namespace {

TrainingConfig plain_sgd(std::vector<double> widths, int batch) {
  TrainingConfig c;
  c.widths = WidthList(std::move(widths));
  c.epochs = 1;
  c.batch_size = batch;
  c.lr = 1.0;
  c.momentum = 0.0;
  c.nesterov = false;
  c.weight_decay = 0.0;
  c.kd.enabled = false;
  return c;
}

template <typename T>
std::vector<std::vector<double>> values(Network<T>& net) {
  std::vector<std::vector<double>> out;
  for (Param<T>* p : net.parameters()) out.push_back(flat(p->value));
  return out;
}

template <typename T>
std::vector<std::vector<double>> grads(Network<T>& net) {
  std::vector<std::vector<double>> out;
  for (Param<T>* p : net.parameters()) out.push_back(flat(p->grad));
  return out;
}

std::vector<double> concat(const std::vector<std::vector<double>>& v) {
  std::vector<double> out;
  for (const auto& x : v) out.insert(out.end(), x.begin(), x.end());
  return out;
}

std::vector<std::size_t> range(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

double mean_abs_gamma(Network<float>& net) {
  double s = 0;
  std::size_t n = 0;
  for (const ChannelSpace& sp : net.graph().spaces()) {
    if (!sp.prunable) continue;
    const auto& g = net.bns[sp.score_bn].banks[0].gamma.value;
    for (std::size_t c = 0; c < g.size(); ++c, ++n) s += std::fabs(g[c]);
  }
  return s / n;
}

ModelSpec two_channel_spec() {
  ModelSpec s;
  s.name = "two";
  s.in_channels = 1;
  s.in_h = s.in_w = 4;
  s.num_classes = 2;
  BlockSpec b;
  b.layers = {LayerSpec::conv(2, 3, 1, 1), LayerSpec::bn(), LayerSpec::act(Activation::relu),
              LayerSpec::global_avg_pool(), LayerSpec::linear(2)};
  s.blocks.push_back(b);
  return s;
}

}  // namespace

TEST_CASE("sparsity loss") {
  Network<double> net = build_model<double>(two_channel_spec(), 1);
  auto& gamma = net.bns[0].banks[0].gamma;
  gamma.value[0] = 0.0;
  gamma.value[1] = 0.0;
  CHECK(sparsity_loss(net, 0.1, 0) == 0.0);
  gamma.value[0] = 1.0;
  gamma.value[1] = -2.0;
  net.zero_grad();
  CHECK(sparsity_loss(net, 0.1, 0) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(gamma.grad[0] == doctest::Approx(0.1));
  CHECK(gamma.grad[1] == doctest::Approx(-0.1));
  gamma.value[0] = 0.0;
  net.zero_grad();
  sparsity_loss(net, 0.1, 0);
  CHECK(gamma.grad[0] == 0.0);
  CHECK_THROWS_AS(sparsity_loss(net, 0.1, 3), std::out_of_range);

  // the extra gamma gradient is exactly lambda * sign, checked against central differences
  Network<double> m = build_model<double>(zoo("micro_vgg", 4), 2);
  std::mt19937_64 rng(2);
  randomize_bn(m, rng);
  const Tensor<double> x = random_tensor<double>({4, 3, 32, 32}, rng);
  const std::vector<int> y = {0, 1, 2, 3};
  const SubNetworkView v = full_view(m);
  const double lambda = 0.05;
  loss_and_grad(m, v, x, y);
  sparsity_loss(m, lambda, 0);
  auto& g0 = m.bns[0].banks[0].gamma;
  for (std::size_t c = 0; c < 4; ++c) {
    const double keep = g0.value[c];
    auto total = [&](double at) {
      g0.value[c] = at;
      const double l = loss_and_grad(m, v, x, y, false) + sparsity_loss(m, lambda, 0, false);
      g0.value[c] = keep;
      return l;
    };
    const double num = (total(keep + 1e-6) - total(keep - 1e-6)) / 2e-6;
    CHECK(std::fabs(num - g0.grad[c]) <= 1e-4 * std::max(1.0, std::fabs(num)));
  }
}

TEST_CASE("learning rate schedule") {
  TrainingConfig c;
  c.lr = 0.1;
  c.milestones = {60, 90, 110};
  c.factors = {0.2};
  CHECK(lr_at(0, c) == doctest::Approx(0.1));
  CHECK(lr_at(59, c) == doctest::Approx(0.1));
  CHECK(lr_at(95, c) == doctest::Approx(0.004));
  CHECK(lr_at(200, c) == doctest::Approx(0.1 * 0.2 * 0.2 * 0.2));
  c.factors = {0.5, 0.1, 0.1};
  CHECK(lr_at(95, c) == doctest::Approx(0.005));

  TrainingConfig bad;
  bad.milestones = {5, 5};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = TrainingConfig();
  bad.kd.alpha = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = TrainingConfig();
  bad.kd.temperature = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = TrainingConfig();
  bad.sparsity = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("inplace kd loss") {
  const std::vector<int> labels = {2, 0};
  const std::vector<double> s = {0.3, -1.2, 2.0, 1.5, 0.1, -0.4};
  const std::vector<double> t = {1.0, 0.5, -0.7, 0.2, 0.9, 0.0};
  std::vector<double> ce_grad(6), grad(6);
  const double ce = cross_entropy(s.data(), 2, 3, labels, ce_grad.data());

  CHECK(inplace_kd_loss(s.data(), t.data(), 2, 3, labels, 1.0, 0.0, grad.data()) == doctest::Approx(ce));
  for (int i = 0; i < 6; ++i) CHECK(grad[i] == doctest::Approx(ce_grad[i]));
  CHECK(inplace_kd_loss(s.data(), s.data(), 2, 3, labels, 2.0, 0.9, grad.data()) ==
        doctest::Approx(0.1 * ce).epsilon(1e-12));

  // direct evaluation at T = 2
  const double T = 2.0, a = 0.7;
  double kl = 0;
  for (int b = 0; b < 2; ++b) {
    double zs = 0, zt = 0;
    for (int c = 0; c < 3; ++c) {
      zs += std::exp(s[b * 3 + c] / T);
      zt += std::exp(t[b * 3 + c] / T);
    }
    for (int c = 0; c < 3; ++c) {
      const double p = std::exp(t[b * 3 + c] / T) / zt, q = std::exp(s[b * 3 + c] / T) / zs;
      kl += p * std::log(p / q);
    }
  }
  const double expect = a * T * T * kl / 2 + (1 - a) * ce;
  CHECK(std::fabs(inplace_kd_loss(s.data(), t.data(), 2, 3, labels, T, a, grad.data()) - expect) <= 1e-6);

  // gradient against central differences
  std::vector<double> x = s;
  const std::vector<double> num = numeric_grad(x, [&] {
    return inplace_kd_loss(x.data(), t.data(), 2, 3, labels, T, a, static_cast<double*>(nullptr));
  });
  CHECK(rel_error(num, grad) <= 1e-6);
}

TEST_CASE("gradient stacking") {
  const Dataset data = make_synthetic({4, 16, 3, 32, 32, 1.0, 1.0, 3});
  const std::vector<double> widths = {0.25, 0.5, 1.0};
  for (const std::string& name : {"micro_vgg", "micro_resnet"}) {
    CAPTURE(name);
    Network<double> net = build_model<double>(zoo(name, 4), 5);
    configure_switchable_bn(net, widths.size());
    Network<double> ref = net;

    // oracle: each width's gradient computed on its own, then summed
    const std::vector<std::size_t> idx = range(data.size());
    const Tensor<double> x = data.batch<double>(idx);
    const std::vector<int> y = data.batch_labels(idx);
    std::vector<double> sum;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      Network<double> tmp = ref;
      loss_and_grad(tmp, slice_view(tmp, width_architecture(tmp.graph(), widths[i]), static_cast<int>(i)), x, y);
      const std::vector<double> gi = concat(grads(tmp));
      if (sum.empty()) sum.assign(gi.size(), 0.0);
      for (std::size_t j = 0; j < gi.size(); ++j) sum[j] += gi[j];
    }
    // one full batch, lr 1, no momentum: the update is minus the stacked gradient
    const std::vector<double> before = concat(values(net));
    train_slimmable(net, plain_sgd(widths, static_cast<int>(data.size())), data);
    const std::vector<double> after = concat(values(net));
    std::vector<double> step(before.size());
    for (std::size_t j = 0; j < step.size(); ++j) step[j] = before[j] - after[j];
    CHECK(rel_error(step, sum) <= 1e-6);
  }
}

TEST_CASE("training basics") {
  const Dataset data = make_synthetic({2, 64, 3, 32, 32, 1.0, 1.0, 5});
  TrainingConfig c;
  c.widths = WidthList({1.0});
  c.batch_size = 16;
  c.epochs = 0;
  auto [net0, rep0] = train_individual<float>(zoo("micro_vgg"), 0.5, c, data);
  Network<float> fresh = build_model<float>(scale_width(zoo("micro_vgg"), 0.5), c.seed);
  CHECK(concat(values(net0)) == concat(values(fresh)));
  CHECK(rep0.records.empty());

  c.epochs = 2;
  auto [a, ra] = train_individual<float>(zoo("micro_vgg"), 0.5, c, data);
  auto [b, rb] = train_individual<float>(zoo("micro_vgg"), 0.5, c, data);
  CHECK(concat(values(a)) == concat(values(b)));
  CHECK(ra.records.back().loss == rb.records.back().loss);
  CHECK(ra.records.size() == 2);
  CHECK(ra.to_tsv().find("epoch") == 0);
  c.seed = 2;
  auto [d, rd] = train_individual<float>(zoo("micro_vgg"), 0.5, c, data);
  CHECK(concat(values(a)) != concat(values(d)));

  const Dataset wrong = make_synthetic({2, 8, 1, 32, 32, 1.0, 1.0, 5});
  CHECK_THROWS_AS(train_individual<float>(zoo("micro_vgg"), 0.5, c, wrong), DimensionError);
  Network<float> bare = build_model<float>(zoo("micro_vgg"), 1);
  CHECK_THROWS_AS(train_spnet(bare, c, data), std::invalid_argument);
}

TEST_CASE("one width of slimmable training is individual training") {
  const Dataset data = make_synthetic({2, 48, 3, 32, 32, 1.0, 1.0, 6});
  TrainingConfig c;
  c.widths = WidthList({1.0});
  c.epochs = 2;
  c.batch_size = 16;
  Network<float> net = build_model<float>(zoo("micro_vgg"), c.seed);
  train_slimmable(net, c, data);
  auto [ind, rep] = train_individual<float>(zoo("micro_vgg"), 1.0, c, data);
  CHECK(concat(values(net)) == concat(values(ind)));
}

TEST_CASE("evaluate") {
  // random labels: an untrained net is right about one time in ten
  Dataset data = make_synthetic({10, 2000, 3, 32, 32, 1.0, 1.0, 9});
  std::mt19937_64 rng(9);
  for (int& y : data.labels) y = std::uniform_int_distribution<int>(0, 9)(rng);
  Network<float> net = build_model<float>(zoo("micro_vgg"), 3);
  const double err = evaluate(net, full_view(net), data);
  CHECK(std::fabs(err - 0.9) <= 0.05);
  // the widest slice is the unsliced network
  CHECK(evaluate(net, slice_view(net, width_architecture(net.graph(), 1.0), 0), data) == err);
  // labels set to the predictions give zero error
  Dataset small = make_synthetic({10, 40, 3, 32, 32, 1.0, 1.0, 9});
  const Tensor<float> logits = predict(net, full_view(net), small.images);
  for (std::size_t n = 0; n < small.size(); ++n) {
    const float* row = logits.data() + n * 10;
    small.labels[n] = static_cast<int>(std::max_element(row, row + 10) - row);
  }
  CHECK(evaluate(net, full_view(net), small, 7) == 0.0);
}

TEST_CASE("slimmable training learns at every width") {
  const Dataset data = make_synthetic({2, 256, 3, 32, 32, 1.5, 1.0, 11});
  TrainingConfig c;
  c.widths = WidthList({0.25, 0.5, 1.0});
  c.epochs = 10;
  c.batch_size = 32;
  c.lr = 0.05;
  Network<float> net = build_model<float>(zoo("micro_vgg", 2), 4);
  const TrainReport r = train_slimmable(net, c, data);
  REQUIRE(r.records.size() == 30);
  for (int w = 0; w < 3; ++w) {
    CAPTURE(w);
    auto window = [&](int from) {
      double s = 0;
      for (int e = from; e < from + 3; ++e) s += r.records[e * 3 + w].loss;
      return s;
    };
    CHECK(window(7) < window(0));
    CHECK(1.0 - evaluate(net, slice_view(net, width_architecture(net.graph(), c.widths[w]), w), data) >= 0.95);
  }
}

TEST_CASE("individual training smoke test") {
  const Dataset data = make_synthetic({2, 256, 3, 32, 32, 1.5, 1.0, 12});
  TrainingConfig c;
  c.widths = WidthList({1.0});
  c.epochs = 50;
  c.batch_size = 32;
  c.lr = 0.05;
  c.sparsity = 1e-4;
  c.stop_at_train_accuracy = 0.95;
  auto [net, rep] = train_individual<float>(zoo("micro_vgg", 2), 1.0, c, data);
  CHECK(rep.epochs_run <= 50);
  CHECK(1.0 - evaluate(net, full_view(net), data) >= 0.95);
}

TEST_CASE("sp-net training with kd") {
  const Dataset data = make_synthetic({3, 48, 3, 32, 32, 1.0, 1.0, 13});
  const WidthList widths({0.25, 0.5, 1.0});
  Network<double> base = build_model<double>(zoo("micro_vgg", 3), 6);
  std::vector<PrunedArchitecture> archs;
  for (double w : {0.25, 0.5}) archs.push_back(width_architecture(base.graph(), w));
  embed_architectures(base, widths, archs, JoinPolicy::none);
  REQUIRE(base.embedded().size() == 3);

  // without kd, uniform embedded widths train exactly like slimmable training
  TrainingConfig c = plain_sgd(widths.widths, 16);
  c.lr = 0.05;
  c.momentum = 0.9;
  c.nesterov = true;
  c.weight_decay = 1e-4;
  c.epochs = 2;
  c.mode = TrainMode::finetune;
  Network<double> sp = base, sl = base;
  const TrainReport rs = train_spnet(sp, c, data);
  train_slimmable(sl, c, data);
  CHECK(concat(values(sp)) == concat(values(sl)));
  CHECK(rs.archs.size() == 3);

  // teacher detachment: alpha only moves the students. The widest bank is
  // touched by the widest width alone, so its update must not depend on alpha.
  TrainingConfig k = plain_sgd(widths.widths, static_cast<int>(data.size()));
  k.lr = 0.1;
  k.kd.enabled = true;
  k.mode = TrainMode::finetune;
  k.kd.alpha = 0.9;
  Network<double> a = base;
  train_spnet(a, k, data);
  k.kd.alpha = 0.0;
  Network<double> b = base;
  train_spnet(b, k, data);
  bool student_moved = false;
  for (std::size_t l = 0; l < a.bns.size(); ++l) {
    CHECK(flat(a.bns[l].banks[2].gamma.value) == flat(b.bns[l].banks[2].gamma.value));
    CHECK(flat(a.bns[l].banks[2].beta.value) == flat(b.bns[l].banks[2].beta.value));
    if (flat(a.bns[l].banks[0].gamma.value) != flat(b.bns[l].banks[0].gamma.value)) student_moved = true;
  }
  CHECK(student_moved);

  // scratch mode re-initializes weights but keeps the architectures
  Network<double> trained = base;
  train_spnet(trained, c, data);
  TrainingConfig z = c;
  z.epochs = 0;
  z.mode = TrainMode::scratch;
  z.seed = 6;
  train_spnet(trained, z, data);
  CHECK(flat(trained.convs[0].weight.value) == flat(base.convs[0].weight.value));
  CHECK(trained.embedded() == base.embedded());
}

TEST_CASE("sparsity pushes gamma mass toward zero") {
  const Dataset data = make_synthetic({2, 128, 3, 32, 32, 1.0, 1.0, 14});
  TrainingConfig c;
  c.widths = WidthList({1.0});
  c.epochs = 4;
  c.batch_size = 16;
  c.lr = 0.05;
  auto [plain, rp] = train_individual<float>(zoo("micro_vgg", 2), 1.0, c, data);
  c.sparsity = 2.0;
  auto [sparse, rs] = train_individual<float>(zoo("micro_vgg", 2), 1.0, c, data);
  CHECK(mean_abs_gamma(sparse) < mean_abs_gamma(plain));
  auto below = [](Network<float>& n) {
    const ChannelScores s = score_bn_gamma(n);
    std::size_t k = 0;
    for (const auto& layer : s.scores)
      for (double v : layer) k += v < 0.1;
    return k;
  };
  CHECK(below(sparse) > below(plain));
}

TEST_CASE("micro_resnet loss gradient against finite differences") {
  Network<double> net = build_model<double>(zoo("micro_resnet", 3), 8);
  std::mt19937_64 rng(8);
  randomize_bn(net, rng);
  const Tensor<double> x = random_tensor<double>({3, 3, 32, 32}, rng);
  const std::vector<int> y = {0, 2, 1};
  const SubNetworkView v = full_view(net);
  loss_and_grad(net, v, x, y);
  const std::vector<std::vector<double>> g = grads(net);
  std::vector<double> an, num;
  const std::size_t np = net.parameters().size();
  for (std::size_t p = 0; p < np; p += 3) {
    const std::size_t n = g[p].size();
    for (std::size_t e : {std::size_t{0}, n / 2, n - 1}) {
      an.push_back(g[p][e]);
      // ReLU kinks sit within 1e-5 of some entries here, so the step stays small
      num.push_back(finite_difference_grad(net, v, p, e, x, y, 1e-7));
    }
  }
  CHECK(rel_error(num, an) <= 1e-4);
  CHECK_THROWS_AS(finite_difference_grad(net, v, 0, 0, x, y, 0.0), std::invalid_argument);
}
