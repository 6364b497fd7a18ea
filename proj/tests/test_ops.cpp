#include <doctest.h>

#include <numeric>

#include "fd_checks.hpp"
#include "helpers.hpp"
#include "spnet/ops.hpp"
#include "spnet/optim.hpp"

using namespace spnet;
using namespace testutil;

TEST_CASE("conv2d: ones and identity kernels") {
  Tensor<float> x({1, 1, 3, 3}, 1.0f), w({1, 1, 3, 3}, 1.0f);
  const Tensor<float> y = conv2d<float>(x, w, nullptr, 1, 0, 1);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y[0] == doctest::Approx(9.0));

  std::mt19937_64 rng(1);
  const Tensor<float> in = random_tensor<float>({2, 1, 5, 5}, rng);
  Tensor<float> id({1, 1, 3, 3});
  id.at(0, 0, 1, 1) = 1.0f;
  CHECK(max_abs_diff(conv2d<float>(in, id, nullptr, 1, 1, 1), in) == 0.0);
}

TEST_CASE("conv2d matches a naive loop") {
  std::mt19937_64 rng(2);
  const Tensor<double> x = random_tensor<double>({2, 4, 8, 8}, rng);
  const Tensor<double> w = random_tensor<double>({6, 4, 3, 3}, rng);
  CHECK(max_abs_diff(conv2d<double>(x, w, nullptr, 1, 0, 1), naive_conv(x, w, nullptr, 1, 0, 1)) <= 1e-6);

  // strided, padded, biased and grouped variants
  std::vector<double> b(6);
  for (double& v : b) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  const Tensor<double> bt({6, 1, 1, 1}, b);
  CHECK(max_abs_diff(conv2d(x, w, &bt, 2, 1, 1), naive_conv(x, w, &b, 2, 1, 1)) <= 1e-6);
  const Tensor<double> wg = random_tensor<double>({6, 2, 3, 3}, rng);
  CHECK(max_abs_diff(conv2d<double>(x, wg, nullptr, 1, 1, 2), naive_conv(x, wg, nullptr, 1, 1, 2)) <= 1e-6);
  const Tensor<double> wd = random_tensor<double>({4, 1, 3, 3}, rng);
  CHECK(max_abs_diff(conv2d<double>(x, wd, nullptr, 2, 1, 4), naive_conv(x, wd, nullptr, 2, 1, 4)) <= 1e-6);
}

TEST_CASE("conv2d rejects mismatched channels") {
  Tensor<float> x({1, 3, 4, 4}), w({2, 4, 3, 3});
  CHECK_THROWS_AS(conv2d<float>(x, w, nullptr, 1, 0, 1, "conv7"), DimensionError);
  try {
    conv2d<float>(x, w, nullptr, 1, 0, 1, "conv7");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("conv7") != std::string::npos);
  }
}

TEST_CASE("batchnorm identity, zero gamma and batch statistics") {
  std::mt19937_64 rng(3);
  const Tensor<double> x = random_tensor<double>({64, 3, 2, 2}, rng, -2, 3);
  BnState<double> st(3);
  const Tensor<double> y = batchnorm(x, st, false);
  CHECK(max_abs_diff(x, y) <= 1e-4);

  st.gamma.value[1] = 0.0;
  st.beta.value[1] = 0.7;
  const Tensor<double> z = batchnorm(x, st, false);
  for (int n = 0; n < 64; ++n) CHECK(z.at(n, 1, 1, 0) == doctest::Approx(0.7));

  BnState<double> t(3);
  const double gamma[3] = {0.5, 2.0, 1.3}, beta[3] = {-1.0, 0.2, 0.0};
  for (int c = 0; c < 3; ++c) {
    t.gamma.value[c] = gamma[c];
    t.beta.value[c] = beta[c];
  }
  const Tensor<double> out = batchnorm(x, t, true);
  for (int c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    const int count = 64 * 4;
    for (int n = 0; n < 64; ++n)
      for (int i = 0; i < 4; ++i) m += out.at(n, c, i / 2, i % 2);
    m /= count;
    for (int n = 0; n < 64; ++n)
      for (int i = 0; i < 4; ++i) v += std::pow(out.at(n, c, i / 2, i % 2) - m, 2);
    v /= count;
    CHECK(std::fabs(m - beta[c]) <= 1e-4);
    CHECK(std::fabs(v - gamma[c] * gamma[c]) <= 1e-4 * std::max(1.0, gamma[c] * gamma[c]));
  }
  // running stats moved toward the batch statistics
  CHECK(t.running_mean[0] != 0.0);
}

TEST_CASE("activations") {
  const float in[4] = {-1.0f, 2.0f, 7.0f, 3.0f};
  float out[4];
  activation_forward(in, 4, Activation::relu, out);
  CHECK(out[0] == 0.0f);
  CHECK(out[1] == 2.0f);
  activation_forward(in, 4, Activation::relu6, out);
  CHECK(out[2] == 6.0f);
  const float gy[4] = {1, 1, 1, 1};
  float gx[4] = {0, 0, 0, 0};
  activation_backward(in, gy, 4, Activation::relu6, gx);
  CHECK(gx[2] == 0.0f);
  CHECK(gx[3] == 1.0f);
}

TEST_CASE("pooling") {
  Tensor<float> c({2, 3, 4, 4}, 2.5f);
  const Tensor<float> g = pool(c, PoolKind::global_avg);
  CHECK(g.shape() == Shape{2, 3, 1, 1});
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(2.5));

  Tensor<float> q({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  CHECK(pool(q, PoolKind::max, 2, 2)[0] == 4.0f);

  std::mt19937_64 rng(4);
  const Tensor<double> x = random_tensor<double>({2, 3, 7, 7}, rng);
  const Tensor<double> y = pool(x, PoolKind::max, 3, 2, 1);
  const int oh = (7 + 2 - 3) / 2 + 1;
  REQUIRE(y.shape() == Shape{2, 3, oh, oh});
  double worst = 0.0;
  for (int n = 0; n < 2; ++n)
    for (int ch = 0; ch < 3; ++ch)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < oh; ++j) {
          double m = -INFINITY;
          for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
              const int r = i * 2 + a - 1, s = j * 2 + b - 1;
              if (r >= 0 && r < 7 && s >= 0 && s < 7) m = std::max(m, x.at(n, ch, r, s));
            }
          worst = std::max(worst, std::fabs(m - y.at(n, ch, i, j)));
        }
  CHECK(worst <= 1e-6);
  CHECK_THROWS_AS(pool(q, PoolKind::max, 3, 1), DimensionError);
}

TEST_CASE("linear") {
  std::mt19937_64 rng(5);
  const Tensor<double> x = random_tensor<double>({3, 4, 1, 1}, rng);
  Tensor<double> eye({4, 4, 1, 1});
  for (int i = 0; i < 4; ++i) eye.at(i, i, 0, 0) = 1.0;
  CHECK(max_abs_diff(linear<double>(x, eye, nullptr), x) == 0.0);

  const Tensor<double> zero({2, 4, 1, 1});
  const Tensor<double> b({2, 1, 1, 1}, std::vector<double>{0.5, -1.5});
  const Tensor<double> yb = linear(x, zero, &b);
  CHECK(yb.at(1, 0, 0, 0) == 0.5);
  CHECK(yb.at(2, 1, 0, 0) == -1.5);

  const Tensor<double> w = random_tensor<double>({5, 4, 1, 1}, rng);
  const Tensor<double> y = linear<double>(x, w, nullptr);
  double worst = 0.0;
  for (int n = 0; n < 3; ++n)
    for (int o = 0; o < 5; ++o) {
      double s = 0;
      for (int i = 0; i < 4; ++i) s += w.at(o, i, 0, 0) * x.at(n, i, 0, 0);
      worst = std::max(worst, std::fabs(s - y.at(n, o, 0, 0)));
    }
  CHECK(worst <= 1e-6);
  CHECK_THROWS_AS(linear<double>(x, Tensor<double>({2, 3, 1, 1}), nullptr), DimensionError);
}

TEST_CASE("cross entropy") {
  const double uniform[5] = {0.3, 0.3, 0.3, 0.3, 0.3};
  const int label0[1] = {2};
  CHECK(cross_entropy(uniform, 1, 5, std::span<const int>(label0), static_cast<double*>(nullptr)) ==
        doctest::Approx(std::log(5.0)));
  const double sure[3] = {0.0, 200.0, 0.0};
  const int label1[1] = {1};
  CHECK(cross_entropy(sure, 1, 3, std::span<const int>(label1), static_cast<double*>(nullptr)) <
        1e-12);

  const double z[6] = {0.2, -1.1, 0.7, 1.5, 0.1, -0.4};
  const int labels[2] = {2, 0};
  double expect = 0.0;
  for (int n = 0; n < 2; ++n) {
    const double* r = z + 3 * n;
    expect -= std::log(std::exp(r[labels[n]]) / (std::exp(r[0]) + std::exp(r[1]) + std::exp(r[2])));
  }
  expect /= 2;
  CHECK(std::fabs(cross_entropy(z, 2, 3, std::span<const int>(labels), static_cast<double*>(nullptr)) -
                  expect) <= 1e-6);
  const int bad[1] = {3};
  CHECK_THROWS(cross_entropy(z, 1, 3, std::span<const int>(bad), static_cast<double*>(nullptr)));
}

namespace {

struct Sgd {
  Param<double> p{Tensor<double>::vector(1, 1.0), ParamRole::conv_weight};
  SgdState<double> state;

  double step(double g, const SgdConfig& c) {
    const double before = p.value[0];
    p.grad[0] = g;
    p.touched = true;
    Param<double>* ps[1] = {&p};
    sgd_step(std::span<Param<double>* const>(ps), c, state);
    return before - p.value[0];
  }
};

}  // namespace

TEST_CASE("sgd: vanilla, momentum unrolled by hand, weight decay") {
  Sgd plain;
  CHECK(plain.step(0.5, {0.1, 0.0, false, 0.0}) == doctest::Approx(0.05));

  // buf1 = g, buf2 = 0.9 g + g: heavy ball moves 1.9 g on the second step
  Sgd heavy;
  CHECK(heavy.step(1.0, {1.0, 0.9, false, 0.0}) == doctest::Approx(1.0));
  CHECK(heavy.step(1.0, {1.0, 0.9, false, 0.0}) == doctest::Approx(1.9));

  // nesterov looks one buffer ahead: g + 0.9 g, then g + 0.9 (1.9 g)
  Sgd nest;
  CHECK(nest.step(1.0, {1.0, 0.9, true, 0.0}) == doctest::Approx(1.9));
  CHECK(nest.step(1.0, {1.0, 0.9, true, 0.0}) == doctest::Approx(2.71));

  // decay is added to the gradient before the momentum buffer
  Sgd wd;
  const SgdConfig c{0.1, 0.9, true, 0.01};
  const double d1 = 0.3 + 0.01 * 1.0;
  const double buf1 = d1;
  const double p1 = 1.0 - 0.1 * (d1 + 0.9 * buf1);
  CHECK(wd.step(0.3, c) == doctest::Approx(1.0 - p1));
  const double d2 = 0.3 + 0.01 * p1;
  const double buf2 = 0.9 * buf1 + d2;
  const double p2 = p1 - 0.1 * (d2 + 0.9 * buf2);
  CHECK(wd.step(0.3, c) == doctest::Approx(p1 - p2));
  CHECK(wd.p.grad[0] == 0.0);
}

TEST_CASE("finite differences: every op, 10 random instances each") {
  std::mt19937_64 rng(11);
  CHECK(kernel_fd_worst(rng, 10) <= 1e-4);
}

TEST_CASE("finite differences: linear regression toy") {
  // loss = mean (w.x + b - t)^2 through linear kernels, gradient by hand
  std::mt19937_64 rng(12);
  std::vector<double> x = rand_vec(8 * 3, rng), w = rand_vec(3, rng), b = {0.1};
  const std::vector<double> t = rand_vec(8, rng);
  auto f = [&] {
    std::vector<double> y(8);
    linear_forward(x.data(), 8, 3, 1, w.data(), 3, b.data(), y.data());
    double s = 0;
    for (int i = 0; i < 8; ++i) s += (y[i] - t[i]) * (y[i] - t[i]);
    return s / 8;
  };
  std::vector<double> y(8), gy(8);
  linear_forward(x.data(), 8, 3, 1, w.data(), 3, b.data(), y.data());
  for (int i = 0; i < 8; ++i) gy[i] = 2 * (y[i] - t[i]) / 8;
  std::vector<double> gw(3), gb(1);
  linear_backward(x.data(), 8, 3, 1, w.data(), 3, gy.data(), static_cast<double*>(nullptr),
                  gw.data(), gb.data());
  CHECK(rel_error(gw, numeric_grad(w, f)) <= 1e-6);
  CHECK(rel_error(gb, numeric_grad(b, f)) <= 1e-6);

  // at the exact solution the numeric gradient vanishes
  std::vector<double> x1 = {1.0, 2.0}, w1 = {3.0};
  auto zero_loss = [&] {
    double s = 0;
    for (double xi : x1) s += std::pow(w1[0] * xi - 3.0 * xi, 2);
    return s;
  };
  CHECK(std::fabs(numeric_grad(w1, zero_loss)[0]) <= 1e-8);
}
