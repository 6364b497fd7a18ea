#include "spnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace spnet {

void ConvGeometry::validate(std::string_view layer) const {
  auto fail = [&](const std::string& what) {
    throw DimensionError(std::string(layer) + ": " + what);
  };
  if (stride < 1) fail("stride must be >= 1");
  if (kernel < 1) fail("kernel must be >= 1");
  if (groups < 1 || in_channels % groups != 0 || out_channels % groups != 0) {
    fail("groups=" + std::to_string(groups) + " must divide in_channels=" +
         std::to_string(in_channels) + " and out_channels=" + std::to_string(out_channels));
  }
  if (in_h + 2 * padding < kernel || in_w + 2 * padding < kernel) {
    fail("kernel " + std::to_string(kernel) + " larger than padded input " +
         std::to_string(in_h) + "x" + std::to_string(in_w));
  }
}

namespace {

// col has shape (cin * k * k, oh * ow).
template <typename T>
void im2col(const T* x, int cin, int h, int w, int k, int stride, int pad, int oh, int ow, T* col) {
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < cin; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * h * w;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        T* row = col + (static_cast<std::size_t>(c) * k * k + kh * k + kw) * p;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride - pad + kh;
          T* dst = row + static_cast<std::size_t>(y) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * w;
          for (int xo = 0; xo < ow; ++xo) {
            const int ix = xo * stride - pad + kw;
            dst[xo] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int cin, int h, int w, int k, int stride, int pad, int oh, int ow,
                T* gx) {
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < cin; ++c) {
    T* gc = gx + static_cast<std::size_t>(c) * h * w;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        const T* row = col + (static_cast<std::size_t>(c) * k * k + kh * k + kw) * p;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride - pad + kh;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + static_cast<std::size_t>(y) * ow;
          T* dst = gc + static_cast<std::size_t>(iy) * w;
          for (int xo = 0; xo < ow; ++xo) {
            const int ix = xo * stride - pad + kw;
            if (ix >= 0 && ix < w) dst[ix] += src[xo];
          }
        }
      }
    }
  }
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  // Eight fixed lanes, folded in a fixed order.
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  for (; i < n; ++i) acc[0] += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <typename T>
void depthwise_forward(const T* x, int batch, const ConvGeometry& g, const T* w,
                       std::size_t filter_stride, const T* bias, T* y) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < g.in_channels; ++c) {
      const T* xc = x + (static_cast<std::size_t>(n) * g.in_channels + c) * g.in_h * g.in_w;
      T* yc = y + (static_cast<std::size_t>(n) * g.out_channels + c) * oh * ow;
      const T* wc = w + c * filter_stride;
      const T b = bias ? bias[c] : T(0);
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          T acc = b;
          for (int kh = 0; kh < k; ++kh) {
            const int iy = oy * g.stride - g.padding + kh;
            if (iy < 0 || iy >= g.in_h) continue;
            for (int kw = 0; kw < k; ++kw) {
              const int ix = ox * g.stride - g.padding + kw;
              if (ix < 0 || ix >= g.in_w) continue;
              acc += wc[kh * k + kw] * xc[iy * g.in_w + ix];
            }
          }
          yc[oy * ow + ox] = acc;
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward(const T* x, int batch, const ConvGeometry& g, const T* w,
                        std::size_t filter_stride, const T* gy, T* gx, T* gw, T* gbias) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < g.in_channels; ++c) {
      const T* xc = x + (static_cast<std::size_t>(n) * g.in_channels + c) * g.in_h * g.in_w;
      const T* gyc = gy + (static_cast<std::size_t>(n) * g.out_channels + c) * oh * ow;
      T* gxc = gx ? gx + (static_cast<std::size_t>(n) * g.in_channels + c) * g.in_h * g.in_w
                  : nullptr;
      const T* wc = w + c * filter_stride;
      T* gwc = gw ? gw + c * filter_stride : nullptr;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const T go = gyc[oy * ow + ox];
          if (gbias) gbias[c] += go;
          for (int kh = 0; kh < k; ++kh) {
            const int iy = oy * g.stride - g.padding + kh;
            if (iy < 0 || iy >= g.in_h) continue;
            for (int kw = 0; kw < k; ++kw) {
              const int ix = ox * g.stride - g.padding + kw;
              if (ix < 0 || ix >= g.in_w) continue;
              if (gwc) gwc[kh * k + kw] += go * xc[iy * g.in_w + ix];
              if (gxc) gxc[iy * g.in_w + ix] += go * wc[kh * k + kw];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const T* x, int batch, const ConvGeometry& g, const T* w,
                    std::size_t filter_stride, const T* bias, T* y) {
  if (g.groups == g.in_channels && g.groups == g.out_channels && g.groups > 1) {
    depthwise_forward(x, batch, g, w, filter_stride, bias, y);
    return;
  }
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  const int cin_g = g.in_channels / g.groups;
  const int cout_g = g.out_channels / g.groups;
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
  const std::size_t rows = g.filter_size();
  std::vector<T> col(rows * p);
  for (int n = 0; n < batch; ++n) {
    for (int grp = 0; grp < g.groups; ++grp) {
      const T* xg =
          x + (static_cast<std::size_t>(n) * g.in_channels + grp * cin_g) * g.in_h * g.in_w;
      im2col(xg, cin_g, g.in_h, g.in_w, k, g.stride, g.padding, oh, ow, col.data());
      int o = 0;
      // Four output rows share each column row load.
      for (; o + 4 <= cout_g; o += 4) {
        const int oc = grp * cout_g + o;
        T* y0 = y + (static_cast<std::size_t>(n) * g.out_channels + oc) * p;
        T* y1 = y0 + p;
        T* y2 = y1 + p;
        T* y3 = y2 + p;
        std::fill(y0, y0 + p, bias ? bias[oc] : T(0));
        std::fill(y1, y1 + p, bias ? bias[oc + 1] : T(0));
        std::fill(y2, y2 + p, bias ? bias[oc + 2] : T(0));
        std::fill(y3, y3 + p, bias ? bias[oc + 3] : T(0));
        const T* w0 = w + oc * filter_stride;
        const T* w1 = w0 + filter_stride;
        const T* w2 = w1 + filter_stride;
        const T* w3 = w2 + filter_stride;
        for (std::size_t r = 0; r < rows; ++r) {
          const T a0 = w0[r], a1 = w1[r], a2 = w2[r], a3 = w3[r];
          const T* cr = col.data() + r * p;
          for (std::size_t i = 0; i < p; ++i) {
            const T v = cr[i];
            y0[i] += a0 * v;
            y1[i] += a1 * v;
            y2[i] += a2 * v;
            y3[i] += a3 * v;
          }
        }
      }
      for (; o < cout_g; ++o) {
        const int oc = grp * cout_g + o;
        T* yo = y + (static_cast<std::size_t>(n) * g.out_channels + oc) * p;
        std::fill(yo, yo + p, bias ? bias[oc] : T(0));
        const T* wo = w + oc * filter_stride;
        for (std::size_t r = 0; r < rows; ++r) {
          const T a = wo[r];
          const T* cr = col.data() + r * p;
          for (std::size_t i = 0; i < p; ++i) yo[i] += a * cr[i];
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward(const T* x, int batch, const ConvGeometry& g, const T* w,
                     std::size_t filter_stride, const T* gy, T* gx, T* gw, T* gbias) {
  if (g.groups == g.in_channels && g.groups == g.out_channels && g.groups > 1) {
    depthwise_backward(x, batch, g, w, filter_stride, gy, gx, gw, gbias);
    return;
  }
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  const int cin_g = g.in_channels / g.groups;
  const int cout_g = g.out_channels / g.groups;
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
  const std::size_t rows = g.filter_size();
  std::vector<T> col(rows * p);
  std::vector<T> gcol(gx ? rows * p : 0);
  for (int n = 0; n < batch; ++n) {
    for (int grp = 0; grp < g.groups; ++grp) {
      const T* gyg = gy + (static_cast<std::size_t>(n) * g.out_channels + grp * cout_g) * p;
      if (gbias) {
        for (int o = 0; o < cout_g; ++o) {
          const T* go = gyg + static_cast<std::size_t>(o) * p;
          T s = T(0);
          for (std::size_t i = 0; i < p; ++i) s += go[i];
          gbias[grp * cout_g + o] += s;
        }
      }
      if (gw) {
        const T* xg =
            x + (static_cast<std::size_t>(n) * g.in_channels + grp * cin_g) * g.in_h * g.in_w;
        im2col(xg, cin_g, g.in_h, g.in_w, k, g.stride, g.padding, oh, ow, col.data());
        for (int o = 0; o < cout_g; ++o) {
          const T* go = gyg + static_cast<std::size_t>(o) * p;
          T* gwo = gw + (grp * cout_g + o) * filter_stride;
          for (std::size_t r = 0; r < rows; ++r) gwo[r] += dot(go, col.data() + r * p, p);
        }
      }
      if (gx) {
        std::fill(gcol.begin(), gcol.end(), T(0));
        for (int o = 0; o < cout_g; ++o) {
          const T* go = gyg + static_cast<std::size_t>(o) * p;
          const T* wo = w + (grp * cout_g + o) * filter_stride;
          for (std::size_t r = 0; r < rows; ++r) {
            const T a = wo[r];
            T* gr = gcol.data() + r * p;
            for (std::size_t i = 0; i < p; ++i) gr[i] += a * go[i];
          }
        }
        T* gxg = gx + (static_cast<std::size_t>(n) * g.in_channels + grp * cin_g) * g.in_h * g.in_w;
        col2im_add(gcol.data(), cin_g, g.in_h, g.in_w, k, g.stride, g.padding, oh, ow, gxg);
      }
    }
  }
}

template <typename T>
void linear_forward(const T* x, int batch, int in_features, int out_features, const T* w,
                    std::size_t row_stride, const T* bias, T* y) {
  for (int n = 0; n < batch; ++n) {
    const T* xn = x + static_cast<std::size_t>(n) * in_features;
    for (int o = 0; o < out_features; ++o) {
      const T* wo = w + o * row_stride;
      T acc = bias ? bias[o] : T(0);
      for (int i = 0; i < in_features; ++i) acc += wo[i] * xn[i];
      y[static_cast<std::size_t>(n) * out_features + o] = acc;
    }
  }
}

template <typename T>
void linear_backward(const T* x, int batch, int in_features, int out_features, const T* w,
                     std::size_t row_stride, const T* gy, T* gx, T* gw, T* gbias) {
  for (int n = 0; n < batch; ++n) {
    const T* xn = x + static_cast<std::size_t>(n) * in_features;
    T* gxn = gx ? gx + static_cast<std::size_t>(n) * in_features : nullptr;
    for (int o = 0; o < out_features; ++o) {
      const T go = gy[static_cast<std::size_t>(n) * out_features + o];
      if (gbias) gbias[o] += go;
      const T* wo = w + o * row_stride;
      if (gw) {
        T* gwo = gw + o * row_stride;
        for (int i = 0; i < in_features; ++i) gwo[i] += go * xn[i];
      }
      if (gxn) {
        for (int i = 0; i < in_features; ++i) gxn[i] += go * wo[i];
      }
    }
  }
}

template <typename T>
void batchnorm_forward_train(const T* x, int batch, int channels, std::size_t plane,
                             const T* gamma, const T* beta, double eps, T* y,
                             std::vector<double>& batch_mean, std::vector<double>& batch_var) {
  batch_mean.assign(channels, 0.0);
  batch_var.assign(channels, 0.0);
  const double m = static_cast<double>(batch) * plane;
  for (int c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (int n = 0; n < batch; ++n) {
      const T* xc = x + (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) sum += xc[i];
    }
    const double mean = sum / m;
    double sq = 0.0;
    for (int n = 0; n < batch; ++n) {
      const T* xc = x + (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = xc[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / m;
    if (!(var + eps > 0.0)) {
      throw NumericalError("batchnorm: non-positive variance on channel " + std::to_string(c));
    }
    batch_mean[c] = mean;
    batch_var[c] = var;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    const double scale = gamma[c] * inv_std;
    const double shift = beta[c] - mean * scale;
    for (int n = 0; n < batch; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        y[off + i] = static_cast<T>(x[off + i] * scale + shift);
      }
    }
  }
}

template <typename T>
void batchnorm_forward_eval(const T* x, int batch, int channels, std::size_t plane,
                            const T* gamma, const T* beta, const T* running_mean,
                            const T* running_var, double eps, T* y) {
  for (int c = 0; c < channels; ++c) {
    const double denom = static_cast<double>(running_var[c]) + eps;
    if (!(denom > 0.0)) {
      throw NumericalError("batchnorm: non-positive running variance on channel " +
                           std::to_string(c));
    }
    const double scale = gamma[c] / std::sqrt(denom);
    const double shift = beta[c] - running_mean[c] * scale;
    for (int n = 0; n < batch; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        y[off + i] = static_cast<T>(x[off + i] * scale + shift);
      }
    }
  }
}

template <typename T>
void batchnorm_backward_train(const T* x, const T* gy, int batch, int channels,
                              std::size_t plane, const T* gamma,
                              const std::vector<double>& batch_mean,
                              const std::vector<double>& batch_var, double eps, T* gx,
                              T* ggamma, T* gbeta) {
  const double m = static_cast<double>(batch) * plane;
  for (int c = 0; c < channels; ++c) {
    const double mean = batch_mean[c];
    const double inv_std = 1.0 / std::sqrt(batch_var[c] + eps);
    double sum_gy = 0.0, sum_gy_xhat = 0.0;
    for (int n = 0; n < batch; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xhat = (x[off + i] - mean) * inv_std;
        sum_gy += gy[off + i];
        sum_gy_xhat += gy[off + i] * xhat;
      }
    }
    if (ggamma) ggamma[c] += static_cast<T>(sum_gy_xhat);
    if (gbeta) gbeta[c] += static_cast<T>(sum_gy);
    if (!gx) continue;
    const double k = gamma[c] * inv_std / m;
    for (int n = 0; n < batch; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xhat = (x[off + i] - mean) * inv_std;
        gx[off + i] += static_cast<T>(k * (m * gy[off + i] - sum_gy - xhat * sum_gy_xhat));
      }
    }
  }
}

template <typename T>
void update_running_stats(T* running_mean, T* running_var, const std::vector<double>& batch_mean,
                          const std::vector<double>& batch_var, std::size_t samples_per_channel,
                          double momentum) {
  const double m = static_cast<double>(samples_per_channel);
  const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
  for (std::size_t c = 0; c < batch_mean.size(); ++c) {
    running_mean[c] =
        static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * batch_mean[c]);
    running_var[c] =
        static_cast<T>((1.0 - momentum) * running_var[c] + momentum * batch_var[c] * unbias);
  }
}

template <typename T>
void activation_forward(const T* x, std::size_t n, Activation kind, T* y) {
  switch (kind) {
    case Activation::none:
      std::copy(x, x + n, y);
      return;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      return;
    case Activation::relu6:
      for (std::size_t i = 0; i < n; ++i) y[i] = std::min(std::max(x[i], T(0)), T(6));
      return;
  }
}

template <typename T>
void activation_backward(const T* x, const T* gy, std::size_t n, Activation kind, T* gx) {
  switch (kind) {
    case Activation::none:
      for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i];
      return;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) {
        if (x[i] > T(0)) gx[i] += gy[i];
      }
      return;
    case Activation::relu6:
      for (std::size_t i = 0; i < n; ++i) {
        if (x[i] > T(0) && x[i] < T(6)) gx[i] += gy[i];
      }
      return;
  }
}

template <typename T>
void maxpool_forward(const T* x, int batch, int channels, int h, int w, int window, int stride,
                     int padding, T* y, std::vector<std::size_t>& argmax) {
  const int oh = (h + 2 * padding - window) / stride + 1;
  const int ow = (w + 2 * padding - window) / stride + 1;
  argmax.resize(static_cast<std::size_t>(batch) * channels * oh * ow);
  std::size_t out = 0;
  for (int nc = 0; nc < batch * channels; ++nc) {
    const std::size_t base = static_cast<std::size_t>(nc) * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      const int y0 = std::max(oy * stride - padding, 0);
      const int y1 = std::min(oy * stride - padding + window, h);
      for (int ox = 0; ox < ow; ++ox, ++out) {
        const int x0 = std::max(ox * stride - padding, 0);
        const int x1 = std::min(ox * stride - padding + window, w);
        std::size_t best = base + static_cast<std::size_t>(y0) * w + x0;
        T best_v = x[best];
        for (int iy = y0; iy < y1; ++iy) {
          for (int ix = x0; ix < x1; ++ix) {
            const std::size_t idx = base + static_cast<std::size_t>(iy) * w + ix;
            if (x[idx] > best_v) {
              best_v = x[idx];
              best = idx;
            }
          }
        }
        y[out] = best_v;
        argmax[out] = best;
      }
    }
  }
}

template <typename T>
void maxpool_backward(const T* gy, std::size_t out_count, const std::vector<std::size_t>& argmax,
                      T* gx) {
  for (std::size_t i = 0; i < out_count; ++i) gx[argmax[i]] += gy[i];
}

template <typename T>
void global_avgpool_forward(const T* x, int batch, int channels, std::size_t plane, T* y) {
  for (int nc = 0; nc < batch * channels; ++nc) {
    const T* xc = x + static_cast<std::size_t>(nc) * plane;
    T sum = T(0);
    for (std::size_t i = 0; i < plane; ++i) sum += xc[i];
    y[nc] = sum / static_cast<T>(plane);
  }
}

template <typename T>
void global_avgpool_backward(const T* gy, int batch, int channels, std::size_t plane, T* gx) {
  for (int nc = 0; nc < batch * channels; ++nc) {
    const T g = gy[nc] / static_cast<T>(plane);
    T* gc = gx + static_cast<std::size_t>(nc) * plane;
    for (std::size_t i = 0; i < plane; ++i) gc[i] += g;
  }
}

template <typename T>
std::vector<double> softmax(const T* logits, int batch, int classes, double temperature) {
  std::vector<double> out(static_cast<std::size_t>(batch) * classes);
  for (int n = 0; n < batch; ++n) {
    const T* row = logits + static_cast<std::size_t>(n) * classes;
    double* o = out.data() + static_cast<std::size_t>(n) * classes;
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < classes; ++c) mx = std::max(mx, row[c] / temperature);
    double sum = 0.0;
    for (int c = 0; c < classes; ++c) {
      o[c] = std::exp(row[c] / temperature - mx);
      sum += o[c];
    }
    for (int c = 0; c < classes; ++c) o[c] /= sum;
  }
  return out;
}

template <typename T>
double cross_entropy(const T* logits, int batch, int classes, std::span<const int> labels,
                     T* grad) {
  if (labels.size() != static_cast<std::size_t>(batch)) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(batch));
  }
  double loss = 0.0;
  for (int n = 0; n < batch; ++n) {
    const int y = labels[n];
    if (y < 0 || y >= classes) {
      throw DimensionError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                           std::to_string(classes) + ")");
    }
    const T* row = logits + static_cast<std::size_t>(n) * classes;
    double mx = row[0];
    for (int c = 1; c < classes; ++c) mx = std::max<double>(mx, row[c]);
    double sum = 0.0;
    for (int c = 0; c < classes; ++c) sum += std::exp(row[c] - mx);
    const double log_z = mx + std::log(sum);
    loss += log_z - row[y];
    if (grad) {
      T* g = grad + static_cast<std::size_t>(n) * classes;
      for (int c = 0; c < classes; ++c) {
        const double p = std::exp(row[c] - log_z);
        g[c] = static_cast<T>((p - (c == y ? 1.0 : 0.0)) / batch);
      }
    }
  }
  return loss / batch;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 int stride, int padding, int groups, std::string_view layer) {
  const Shape& s = input.shape();
  const Shape& ws = weight.shape();
  if (ws.h != ws.w) throw DimensionError(std::string(layer) + ": non-square kernel");
  ConvGeometry g{s.c, s.h, s.w, ws.n, ws.h, stride, padding, groups};
  g.validate(layer);
  if (ws.c * groups != s.c) {
    throw DimensionError(std::string(layer) + ": input has " + std::to_string(s.c) +
                         " channels but weight expects " + std::to_string(ws.c) + " x groups " +
                         std::to_string(groups));
  }
  if (bias && bias->size() != static_cast<std::size_t>(ws.n)) {
    throw DimensionError(std::string(layer) + ": bias length mismatch");
  }
  Tensor<T> out({s.n, ws.n, g.out_h(), g.out_w()});
  conv2d_forward(input.data(), s.n, g, weight.data(), g.filter_size(),
                 bias ? bias->data() : nullptr, out.data());
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 std::string_view layer) {
  const Shape& s = input.shape();
  const int features = s.c * s.h * s.w;
  const Shape& ws = weight.shape();
  if (ws.c * ws.h * ws.w != features) {
    throw DimensionError(std::string(layer) + ": input has " + std::to_string(features) +
                         " features but weight expects " + std::to_string(ws.c * ws.h * ws.w));
  }
  if (bias && bias->size() != static_cast<std::size_t>(ws.n)) {
    throw DimensionError(std::string(layer) + ": bias length mismatch");
  }
  Tensor<T> out({s.n, ws.n, 1, 1});
  linear_forward(input.data(), s.n, features, ws.n, weight.data(),
                 static_cast<std::size_t>(features), bias ? bias->data() : nullptr, out.data());
  return out;
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, BnState<T>& state, bool training) {
  const Shape& s = input.shape();
  if (s.c != state.channels()) {
    throw DimensionError("batchnorm: input has " + std::to_string(s.c) +
                         " channels, state has " + std::to_string(state.channels()));
  }
  Tensor<T> out(s);
  if (training) {
    std::vector<double> mean, var;
    batchnorm_forward_train(input.data(), s.n, s.c, s.plane(), state.gamma.value.data(),
                            state.beta.value.data(), state.eps, out.data(), mean, var);
    update_running_stats(state.running_mean.data(), state.running_var.data(), mean, var,
                         static_cast<std::size_t>(s.n) * s.plane(), state.momentum);
  } else {
    batchnorm_forward_eval(input.data(), s.n, s.c, s.plane(), state.gamma.value.data(),
                           state.beta.value.data(), state.running_mean.data(),
                           state.running_var.data(), state.eps, out.data());
  }
  return out;
}

template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation kind) {
  Tensor<T> out(input.shape());
  activation_forward(input.data(), input.size(), kind, out.data());
  return out;
}

template <typename T>
Tensor<T> pool(const Tensor<T>& input, PoolKind kind, int window, int stride, int padding) {
  const Shape& s = input.shape();
  if (kind == PoolKind::global_avg) {
    Tensor<T> out({s.n, s.c, 1, 1});
    global_avgpool_forward(input.data(), s.n, s.c, s.plane(), out.data());
    return out;
  }
  if (window < 1 || stride < 1) throw DimensionError("pool: window and stride must be >= 1");
  if (padding < 0 || 2 * padding >= window + 1) throw DimensionError("pool: bad padding");
  if (window > s.h + 2 * padding || window > s.w + 2 * padding) {
    throw DimensionError("pool: window " + std::to_string(window) + " larger than input " +
                         std::to_string(s.h) + "x" + std::to_string(s.w));
  }
  Tensor<T> out({s.n, s.c, (s.h + 2 * padding - window) / stride + 1,
                 (s.w + 2 * padding - window) / stride + 1});
  std::vector<std::size_t> argmax;
  maxpool_forward(input.data(), s.n, s.c, s.h, s.w, window, stride, padding, out.data(), argmax);
  return out;
}

#define SPNET_INSTANTIATE_OPS(T)                                                                 \
  template void conv2d_forward<T>(const T*, int, const ConvGeometry&, const T*, std::size_t,     \
                                  const T*, T*);                                                 \
  template void conv2d_backward<T>(const T*, int, const ConvGeometry&, const T*, std::size_t,    \
                                   const T*, T*, T*, T*);                                        \
  template void linear_forward<T>(const T*, int, int, int, const T*, std::size_t, const T*, T*); \
  template void linear_backward<T>(const T*, int, int, int, const T*, std::size_t, const T*, T*, \
                                   T*, T*);                                                      \
  template void batchnorm_forward_train<T>(const T*, int, int, std::size_t, const T*, const T*,  \
                                           double, T*, std::vector<double>&,                     \
                                           std::vector<double>&);                                \
  template void batchnorm_forward_eval<T>(const T*, int, int, std::size_t, const T*, const T*,   \
                                          const T*, const T*, double, T*);                       \
  template void batchnorm_backward_train<T>(const T*, const T*, int, int, std::size_t, const T*, \
                                            const std::vector<double>&,                          \
                                            const std::vector<double>&, double, T*, T*, T*);     \
  template void update_running_stats<T>(T*, T*, const std::vector<double>&,                      \
                                        const std::vector<double>&, std::size_t, double);        \
  template void activation_forward<T>(const T*, std::size_t, Activation, T*);                    \
  template void activation_backward<T>(const T*, const T*, std::size_t, Activation, T*);         \
  template void maxpool_forward<T>(const T*, int, int, int, int, int, int, int, T*,              \
                                   std::vector<std::size_t>&);                                   \
  template void maxpool_backward<T>(const T*, std::size_t, const std::vector<std::size_t>&, T*); \
  template void global_avgpool_forward<T>(const T*, int, int, std::size_t, T*);                  \
  template void global_avgpool_backward<T>(const T*, int, int, std::size_t, T*);                 \
  template std::vector<double> softmax<T>(const T*, int, int, double);                           \
  template double cross_entropy<T>(const T*, int, int, std::span<const int>, T*);                \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, int, int,   \
                               int, std::string_view);                                           \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,             \
                               std::string_view);                                                \
  template Tensor<T> batchnorm<T>(const Tensor<T>&, BnState<T>&, bool);                          \
  template Tensor<T> activation<T>(const Tensor<T>&, Activation);                                \
  template Tensor<T> pool<T>(const Tensor<T>&, PoolKind, int, int, int);

SPNET_INSTANTIATE_OPS(float)
SPNET_INSTANTIATE_OPS(double)

}  // namespace spnet
