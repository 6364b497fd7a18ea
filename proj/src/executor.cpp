#include <cstring>
#include <stdexcept>

#include "spnet/slimmable.hpp"

namespace spnet {

namespace {

template <typename T>
void gather_rows(const T* src, const std::vector<int>& rows, std::size_t row, std::vector<T>& out) {
  out.resize(rows.size() * row);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::memcpy(out.data() + k * row, src + rows[k] * row, row * sizeof(T));
  }
}

template <typename T>
void scatter_add_rows(const T* src, const std::vector<int>& rows, std::size_t row, T* dst) {
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const T* s = src + k * row;
    T* d = dst + rows[k] * row;
    for (std::size_t i = 0; i < row; ++i) d[i] += s[i];
  }
}

// Selected rows, and within each row the selected column blocks.
template <typename T>
void gather_block(const T* src, const std::vector<int>& rows, const std::vector<int>& cols,
                  std::size_t row_stride, std::size_t block, std::vector<T>& out) {
  out.resize(rows.size() * cols.size() * block);
  T* d = out.data();
  for (int r : rows) {
    const T* s = src + r * row_stride;
    for (int c : cols) {
      std::memcpy(d, s + c * block, block * sizeof(T));
      d += block;
    }
  }
}

template <typename T>
void scatter_add_block(const T* src, const std::vector<int>& rows, const std::vector<int>& cols,
                       std::size_t row_stride, std::size_t block, T* dst) {
  for (int r : rows) {
    T* d = dst + r * row_stride;
    for (int c : cols) {
      for (std::size_t i = 0; i < block; ++i) d[c * block + i] += src[i];
      src += block;
    }
  }
}

// For every union channel, the index of its source in the main and shortcut
// channel lists (-1 when absent).
void join_maps(const JoinMetadata& meta, std::vector<int>& from_main, std::vector<int>& from_sc) {
  std::vector<int> pm(meta.channels, -1);
  std::vector<int> ps(meta.channels, -1);
  for (std::size_t k = 0; k < meta.index_main.size(); ++k) pm[meta.index_main[k]] = static_cast<int>(k);
  for (std::size_t k = 0; k < meta.index_shortcut.size(); ++k) {
    ps[meta.index_shortcut[k]] = static_cast<int>(k);
  }
  from_main.resize(meta.index_union.size());
  from_sc.resize(meta.index_union.size());
  for (std::size_t k = 0; k < meta.index_union.size(); ++k) {
    from_main[k] = pm[meta.index_union[k]];
    from_sc[k] = ps[meta.index_union[k]];
  }
}

}  // namespace

template <typename T>
Executor<T>::Executor(Network<T>& net, SubNetworkView view) : net_(net), view_(std::move(view)) {
  const Graph& g = net_.graph();
  if (view_.counts.size() != g.space_count() || view_.joins.size() != g.ops().size()) {
    throw DimensionError("view does not belong to network " + g.spec().name);
  }
  if (view_.bank < 0 || static_cast<std::size_t>(view_.bank) >= net_.bank_count()) {
    throw std::out_of_range("BN bank " + std::to_string(view_.bank) + " not present");
  }
  const std::size_t slots = g.ops().size() + 1;
  values_.resize(slots);
  grads_.resize(slots);
  bn_mean_.resize(g.ops().size());
  bn_var_.resize(g.ops().size());
  argmax_.resize(g.ops().size());
}

template <typename T>
const Tensor<T>& Executor<T>::fetch(int slot, Tensor<T>& scratch) {
  if (!view_.gather) return values_[slot];
  const ValueInfo& v = net_.graph().values()[slot];
  const Tensor<T>& full = values_[slot];
  const std::vector<int>& pos = view_.positions[v.space];
  const int n = static_cast<int>(pos.size());
  const std::size_t plane = full.shape().plane();
  scratch.resize({batch_, n, v.h, v.w});
  for (int b = 0; b < batch_; ++b) {
    const T* src = full.data() + static_cast<std::size_t>(b) * full.shape().c * plane;
    T* dst = scratch.data() + static_cast<std::size_t>(b) * n * plane;
    for (int k = 0; k < n; ++k) {
      std::memcpy(dst + k * plane, src + pos[k] * plane, plane * sizeof(T));
    }
  }
  return scratch;
}

template <typename T>
void Executor<T>::store(int slot, Tensor<T>&& compact) {
  if (!view_.gather) {
    values_[slot] = std::move(compact);
    return;
  }
  const ValueInfo& v = net_.graph().values()[slot];
  const int full_c = net_.graph().spaces()[v.space].size;
  const std::vector<int>& pos = view_.positions[v.space];
  const int n = static_cast<int>(pos.size());
  const std::size_t plane = compact.shape().plane();
  Tensor<T>& full = values_[slot];
  if (full.shape() != Shape{batch_, full_c, v.h, v.w}) full = Tensor<T>({batch_, full_c, v.h, v.w});
  full.fill(T(0));
  for (int b = 0; b < batch_; ++b) {
    const T* src = compact.data() + static_cast<std::size_t>(b) * n * plane;
    T* dst = full.data() + static_cast<std::size_t>(b) * full_c * plane;
    for (int k = 0; k < n; ++k) {
      std::memcpy(dst + pos[k] * plane, src + k * plane, plane * sizeof(T));
    }
  }
}

template <typename T>
typename Executor<T>::Weights Executor<T>::conv_weights(const GraphOp& op) {
  const ConvLayer<T>& c = net_.convs[op.param];
  const Shape& ws = c.weight.value.shape();
  const std::size_t kk = static_cast<std::size_t>(ws.h) * ws.w;
  const std::vector<int>& out = view_.positions[op.space];
  Weights w;
  if (op.depthwise) {
    w.stride = kk;
    if (view_.contiguous[op.space] && !view_.gather) {
      w.w = c.weight.value.data();
    } else {
      gather_rows(c.weight.value.data(), out, kk, w.wbuf);
      w.w = w.wbuf.data();
      w.copied = true;
    }
  } else {
    const std::vector<int>& in = view_.positions[op.in_space];
    if (view_.contiguous[op.space] && view_.contiguous[op.in_space] && !view_.gather) {
      w.w = c.weight.value.data();
      w.stride = static_cast<std::size_t>(ws.c) * kk;
    } else {
      gather_block(c.weight.value.data(), out, in, static_cast<std::size_t>(ws.c) * kk, kk,
                   w.wbuf);
      w.w = w.wbuf.data();
      w.stride = in.size() * kk;
      w.copied = true;
    }
  }
  if (c.has_bias) {
    if (view_.contiguous[op.space] && !view_.gather) {
      w.bias = c.bias.value.data();
    } else {
      gather_rows(c.bias.value.data(), out, 1, w.bbuf);
      w.bias = w.bbuf.data();
    }
  }
  return w;
}

template <typename T>
typename Executor<T>::Weights Executor<T>::linear_weights(const GraphOp& op) {
  const LinearLayer<T>& l = net_.linears[op.param];
  const LinearInfo& info = net_.graph().linears()[op.param];
  const std::vector<int>& out = view_.positions[op.space];
  const std::vector<int>& in = view_.positions[op.in_space];
  Weights w;
  if (view_.contiguous[op.in_space] && view_.contiguous[op.space] && !view_.gather) {
    w.w = l.weight.value.data();
    w.stride = info.in_features;
  } else {
    gather_block(l.weight.value.data(), out, in, info.in_features, info.plane, w.wbuf);
    w.w = w.wbuf.data();
    w.stride = in.size() * info.plane;
    w.copied = true;
  }
  if (l.has_bias) {
    if (view_.contiguous[op.space] && !view_.gather) {
      w.bias = l.bias.value.data();
    } else {
      gather_rows(l.bias.value.data(), out, 1, w.bbuf);
      w.bias = w.bbuf.data();
    }
  }
  return w;
}

template <typename T>
const Tensor<T>& Executor<T>::forward(const Tensor<T>& input, bool training) {
  const Graph& g = net_.graph();
  const ModelSpec& spec = g.spec();
  const Shape& s = input.shape();
  if (s.c != spec.in_channels || s.h != spec.in_h || s.w != spec.in_w || s.n < 1) {
    throw DimensionError(spec.name + ": input " + s.str() + " does not match (N, " +
                         std::to_string(spec.in_channels) + ", " + std::to_string(spec.in_h) +
                         ", " + std::to_string(spec.in_w) + ")");
  }
  batch_ = s.n;
  values_[0] = input;
  for (std::size_t i = 0; i < g.ops().size(); ++i) forward_op(i, training);
  trained_ = training;
  return values_.back();
}

template <typename T>
void Executor<T>::forward_op(std::size_t index, bool training) {
  const GraphOp& op = net_.graph().ops()[index];
  const int n_out = view_.counts[op.space];
  switch (op.kind) {
    case OpKind::conv: {
      const Tensor<T>& x = fetch(op.input, scratch_a_);
      const int n_in = view_.counts[op.in_space];
      const ConvGeometry geo{n_in, op.in_h, op.in_w, n_out, op.kernel, op.stride, op.padding,
                             op.depthwise ? n_in : 1};
      const Weights w = conv_weights(op);
      Tensor<T> y({batch_, n_out, op.out_h, op.out_w});
      conv2d_forward(x.data(), batch_, geo, w.w, w.stride, w.bias, y.data());
      store(op.output, std::move(y));
      break;
    }
    case OpKind::bn: {
      const Tensor<T>& x = fetch(op.input, scratch_a_);
      BnState<T>& st = net_.bns[op.param].banks[view_.bank];
      const std::vector<int>& pos = view_.positions[op.space];
      const bool direct = view_.contiguous[op.space] && !view_.gather;
      std::vector<T> gamma, beta, rm, rv;
      const T* pg = st.gamma.value.data();
      const T* pb = st.beta.value.data();
      if (!direct) {
        gather_rows(st.gamma.value.data(), pos, 1, gamma);
        gather_rows(st.beta.value.data(), pos, 1, beta);
        pg = gamma.data();
        pb = beta.data();
      }
      const std::size_t plane = static_cast<std::size_t>(op.out_h) * op.out_w;
      Tensor<T> y(x.shape());
      if (training) {
        batchnorm_forward_train(x.data(), batch_, n_out, plane, pg, pb, st.eps, y.data(),
                                bn_mean_[index], bn_var_[index]);
        const std::size_t samples = static_cast<std::size_t>(batch_) * plane;
        if (direct) {
          update_running_stats(st.running_mean.data(), st.running_var.data(), bn_mean_[index],
                               bn_var_[index], samples, st.momentum);
        } else {
          gather_rows(st.running_mean.data(), pos, 1, rm);
          gather_rows(st.running_var.data(), pos, 1, rv);
          update_running_stats(rm.data(), rv.data(), bn_mean_[index], bn_var_[index], samples,
                               st.momentum);
          for (std::size_t k = 0; k < pos.size(); ++k) {
            st.running_mean[pos[k]] = rm[k];
            st.running_var[pos[k]] = rv[k];
          }
        }
      } else {
        const T* pm = st.running_mean.data();
        const T* pv = st.running_var.data();
        if (!direct) {
          gather_rows(st.running_mean.data(), pos, 1, rm);
          gather_rows(st.running_var.data(), pos, 1, rv);
          pm = rm.data();
          pv = rv.data();
        }
        batchnorm_forward_eval(x.data(), batch_, n_out, plane, pg, pb, pm, pv, st.eps, y.data());
      }
      store(op.output, std::move(y));
      break;
    }
    case OpKind::activation: {
      const Tensor<T>& x = fetch(op.input, scratch_a_);
      Tensor<T> y(x.shape());
      activation_forward(x.data(), x.size(), op.act, y.data());
      store(op.output, std::move(y));
      break;
    }
    case OpKind::pool: {
      const Tensor<T>& x = fetch(op.input, scratch_a_);
      Tensor<T> y({batch_, n_out, op.out_h, op.out_w});
      if (op.pool == PoolKind::max) {
        maxpool_forward(x.data(), batch_, n_out, op.in_h, op.in_w, op.kernel, op.stride,
                        op.padding, y.data(), argmax_[index]);
      } else {
        global_avgpool_forward(x.data(), batch_, n_out,
                               static_cast<std::size_t>(op.in_h) * op.in_w, y.data());
      }
      store(op.output, std::move(y));
      break;
    }
    case OpKind::linear: {
      const Tensor<T>& x = fetch(op.input, scratch_a_);
      const LinearInfo& info = net_.graph().linears()[op.param];
      const int in_features = view_.counts[op.in_space] * info.plane;
      const Weights w = linear_weights(op);
      Tensor<T> y({batch_, n_out, 1, 1});
      linear_forward(x.data(), batch_, in_features, n_out, w.w, w.stride, w.bias, y.data());
      store(op.output, std::move(y));
      break;
    }
    case OpKind::join: {
      const Tensor<T>& xm = fetch(op.input, scratch_a_);
      const Tensor<T>& xs = fetch(op.shortcut, scratch_b_);
      const JoinMetadata& meta = view_.joins[index];
      Tensor<T> y({batch_, n_out, op.out_h, op.out_w});
      if (meta.is_plain_prefix() && !view_.gather) {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = xm[i] + xs[i];
      } else {
        std::vector<int> fm, fs;
        join_maps(meta, fm, fs);
        const std::size_t plane = static_cast<std::size_t>(op.out_h) * op.out_w;
        const std::size_t cm = xm.shape().c;
        const std::size_t cs = xs.shape().c;
        for (int b = 0; b < batch_; ++b) {
          for (int k = 0; k < n_out; ++k) {
            T* d = y.data() + (static_cast<std::size_t>(b) * n_out + k) * plane;
            const T* a = fm[k] >= 0 ? xm.data() + (b * cm + fm[k]) * plane : nullptr;
            const T* c = fs[k] >= 0 ? xs.data() + (b * cs + fs[k]) * plane : nullptr;
            if (a && c) {
              for (std::size_t i = 0; i < plane; ++i) d[i] = a[i] + c[i];
            } else if (a || c) {
              std::memcpy(d, a ? a : c, plane * sizeof(T));
            }
          }
        }
      }
      store(op.output, std::move(y));
      break;
    }
  }
}

template <typename T>
Tensor<T>& Executor<T>::grad_of(int slot) {
  Tensor<T>& g = grads_[slot];
  if (g.empty()) g = Tensor<T>(values_[slot].shape());
  return g;
}

template <typename T>
void Executor<T>::backward(const Tensor<T>& grad_logits) {
  if (view_.gather) throw std::logic_error("backward is not available for gather-mode views");
  if (!trained_) throw std::logic_error("backward requires a training-mode forward");
  const Graph& g = net_.graph();
  if (grad_logits.shape() != values_.back().shape()) {
    throw DimensionError("logit gradient " + grad_logits.shape().str() + " does not match " +
                         values_.back().shape().str());
  }
  for (Tensor<T>& t : grads_) t = Tensor<T>();
  grads_.back() = grad_logits;
  for (std::size_t idx = g.ops().size(); idx-- > 0;) {
    const GraphOp& op = g.ops()[idx];
    const Tensor<T>& gy = grads_[op.output];
    if (gy.empty()) continue;
    const Tensor<T>& x = values_[op.input];
    T* gx = op.input == 0 ? nullptr : grad_of(op.input).data();
    const int n_out = view_.counts[op.space];
    switch (op.kind) {
      case OpKind::conv: {
        ConvLayer<T>& c = net_.convs[op.param];
        const int n_in = view_.counts[op.in_space];
        const ConvGeometry geo{n_in, op.in_h, op.in_w, n_out, op.kernel, op.stride, op.padding,
                               op.depthwise ? n_in : 1};
        const Weights w = conv_weights(op);
        const std::vector<int>& out = view_.positions[op.space];
        std::vector<T> gw, gb;
        T* pgw = c.weight.grad.data();
        T* pgb = c.has_bias ? c.bias.grad.data() : nullptr;
        if (w.copied) {
          gw.assign(w.wbuf.size(), T(0));
          pgw = gw.data();
        }
        if (c.has_bias && w.bias != c.bias.value.data()) {
          gb.assign(out.size(), T(0));
          pgb = gb.data();
        }
        conv2d_backward(x.data(), batch_, geo, w.w, w.stride, gy.data(), gx, pgw, pgb);
        if (w.copied) {
          const Shape& ws = c.weight.value.shape();
          const std::size_t kk = static_cast<std::size_t>(ws.h) * ws.w;
          if (op.depthwise) {
            scatter_add_rows(gw.data(), out, kk, c.weight.grad.data());
          } else {
            scatter_add_block(gw.data(), out, view_.positions[op.in_space],
                              static_cast<std::size_t>(ws.c) * kk, kk, c.weight.grad.data());
          }
        }
        if (!gb.empty()) scatter_add_rows(gb.data(), out, 1, c.bias.grad.data());
        c.weight.touched = true;
        if (c.has_bias) c.bias.touched = true;
        break;
      }
      case OpKind::bn: {
        BnState<T>& st = net_.bns[op.param].banks[view_.bank];
        const std::vector<int>& pos = view_.positions[op.space];
        const std::size_t plane = static_cast<std::size_t>(op.out_h) * op.out_w;
        if (view_.contiguous[op.space]) {
          batchnorm_backward_train(x.data(), gy.data(), batch_, n_out, plane,
                                   st.gamma.value.data(), bn_mean_[idx], bn_var_[idx], st.eps, gx,
                                   st.gamma.grad.data(), st.beta.grad.data());
        } else {
          std::vector<T> gamma, gg(pos.size(), T(0)), gbeta(pos.size(), T(0));
          gather_rows(st.gamma.value.data(), pos, 1, gamma);
          batchnorm_backward_train(x.data(), gy.data(), batch_, n_out, plane, gamma.data(),
                                   bn_mean_[idx], bn_var_[idx], st.eps, gx, gg.data(),
                                   gbeta.data());
          scatter_add_rows(gg.data(), pos, 1, st.gamma.grad.data());
          scatter_add_rows(gbeta.data(), pos, 1, st.beta.grad.data());
        }
        st.gamma.touched = true;
        st.beta.touched = true;
        break;
      }
      case OpKind::activation:
        if (gx) activation_backward(x.data(), gy.data(), x.size(), op.act, gx);
        break;
      case OpKind::pool:
        if (!gx) break;
        if (op.pool == PoolKind::max) {
          maxpool_backward(gy.data(), gy.size(), argmax_[idx], gx);
        } else {
          global_avgpool_backward(gy.data(), batch_, n_out,
                                  static_cast<std::size_t>(op.in_h) * op.in_w, gx);
        }
        break;
      case OpKind::linear: {
        LinearLayer<T>& l = net_.linears[op.param];
        const LinearInfo& info = g.linears()[op.param];
        const int in_features = view_.counts[op.in_space] * info.plane;
        const Weights w = linear_weights(op);
        std::vector<T> gw;
        T* pgw = l.weight.grad.data();
        if (w.copied) {
          gw.assign(w.wbuf.size(), T(0));
          pgw = gw.data();
        }
        std::vector<T> gb;
        T* pgb = l.has_bias ? l.bias.grad.data() : nullptr;
        if (l.has_bias && w.bias != l.bias.value.data()) {
          gb.assign(n_out, T(0));
          pgb = gb.data();
        }
        linear_backward(x.data(), batch_, in_features, n_out, w.w, w.stride, gy.data(), gx, pgw,
                        pgb);
        if (w.copied) {
          scatter_add_block(gw.data(), view_.positions[op.space], view_.positions[op.in_space],
                            info.in_features, info.plane, l.weight.grad.data());
        }
        if (!gb.empty()) scatter_add_rows(gb.data(), view_.positions[op.space], 1, l.bias.grad.data());
        l.weight.touched = true;
        if (l.has_bias) l.bias.touched = true;
        break;
      }
      case OpKind::join: {
        const JoinMetadata& meta = view_.joins[idx];
        std::vector<int> fm, fs;
        join_maps(meta, fm, fs);
        const std::size_t plane = static_cast<std::size_t>(op.out_h) * op.out_w;
        T* gs = op.shortcut == 0 ? nullptr : grad_of(op.shortcut).data();
        const std::size_t cm = values_[op.input].shape().c;
        const std::size_t cs = values_[op.shortcut].shape().c;
        for (int b = 0; b < batch_; ++b) {
          for (int k = 0; k < n_out; ++k) {
            const T* src = gy.data() + (static_cast<std::size_t>(b) * n_out + k) * plane;
            if (gx && fm[k] >= 0) {
              T* d = gx + (b * cm + fm[k]) * plane;
              for (std::size_t i = 0; i < plane; ++i) d[i] += src[i];
            }
            if (gs && fs[k] >= 0) {
              T* d = gs + (b * cs + fs[k]) * plane;
              for (std::size_t i = 0; i < plane; ++i) d[i] += src[i];
            }
          }
        }
        break;
      }
    }
  }
}

template <typename T>
Tensor<T> predict(Network<T>& net, const SubNetworkView& view, const Tensor<T>& input) {
  Executor<T> ex(net, view);
  return ex.forward(input, false);
}

template class Executor<float>;
template class Executor<double>;
template Tensor<float> predict<float>(Network<float>&, const SubNetworkView&, const Tensor<float>&);
template Tensor<double> predict<double>(Network<double>&, const SubNetworkView&,
                                        const Tensor<double>&);

}  // namespace spnet
