// Dense-array layers with hand-written backward passes: 1-D convolution,
// batch normalization, ReLU, max pooling, inverted dropout, and LSTM.
// All sequence tensors are [T, channels] for one example; batch structure
// exists only where an operation is defined across examples (batchnorm).
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "walsnet/common.hpp"
#include "walsnet/tensor.hpp"

namespace walsnet {

// ---------------------------------------------------------------------------
// 1-D convolution, valid padding, stride 1.

template <class Real>
struct Conv1d {
  Tensor<Real> kernel;  // [out_channels, r, in_channels]
  Tensor<Real> bias;    // [out_channels]

  std::size_t out_channels() const { return kernel.shape[0]; }
  std::size_t width() const { return kernel.shape[1]; }
  std::size_t in_channels() const { return kernel.shape[2]; }

  // [T, D_in] -> [T - r + 1, D_out]
  Tensor<Real> forward(const Tensor<Real>& x) const {
    const std::size_t T = x.shape[0], r = width(), din = in_channels(), dout = out_channels();
    if (x.shape[1] != din) throw ConfigError("conv input channel mismatch");
    if (T < r) throw ConfigError("sequence too short");
    Tensor<Real> y({T - r + 1, dout});
    for (std::size_t t = 0; t + r <= T; ++t) {
      Real* yt = y.row(t);
      for (std::size_t o = 0; o < dout; ++o) yt[o] = bias.data[o];
      for (std::size_t j = 0; j < r; ++j) {
        const Real* xt = x.row(t + j);
        for (std::size_t o = 0; o < dout; ++o) {
          const Real* k = &kernel.at(o, j, 0);
          Real acc = 0;
          for (std::size_t i = 0; i < din; ++i) acc += k[i] * xt[i];
          yt[o] += acc;
        }
      }
    }
    return y;
  }

  // Accumulates into d_kernel / d_bias; returns gradient w.r.t. x.
  Tensor<Real> backward(const Tensor<Real>& x, const Tensor<Real>& d_y, Tensor<Real>& d_kernel,
                        Tensor<Real>& d_bias) const {
    const std::size_t T = x.shape[0], r = width(), din = in_channels(), dout = out_channels();
    Tensor<Real> d_x(x.shape);
    for (std::size_t t = 0; t + r <= T; ++t) {
      const Real* g = d_y.row(t);
      for (std::size_t o = 0; o < dout; ++o) d_bias.data[o] += g[o];
      for (std::size_t j = 0; j < r; ++j) {
        const Real* xt = x.row(t + j);
        Real* dxt = d_x.row(t + j);
        for (std::size_t o = 0; o < dout; ++o) {
          const Real go = g[o];
          if (go == Real(0)) continue;
          const Real* k = &kernel.at(o, j, 0);
          Real* dk = &d_kernel.at(o, j, 0);
          for (std::size_t i = 0; i < din; ++i) {
            dk[i] += go * xt[i];
            dxt[i] += go * k[i];
          }
        }
      }
    }
    return d_x;
  }
};

// ---------------------------------------------------------------------------
// Batch normalization over channels. Train mode normalizes with the batch's
// population statistics across every valid position of every sequence in the
// batch and updates running stats; infer mode uses the running stats alone.

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

template <class Real>
struct BatchNorm {
  Tensor<Real> gamma, beta;              // trainable, [C]
  Tensor<Real> running_mean, running_var;  // updated in train forward, [C]

  std::size_t channels() const { return gamma.shape[0]; }
};

template <class Real>
struct BnCache {
  Tensor<Real> mean;     // [C]
  Tensor<Real> inv_std;  // [C], 1/sqrt(var + eps)
  std::size_t count = 0;  // total positions normalized
};

// xs and ys are parallel per-example sequences [T_i, C].
template <class Real>
BnCache<Real> batchnorm_forward_train(BatchNorm<Real>& bn, const std::vector<Tensor<Real>>& xs,
                                      std::vector<Tensor<Real>>& ys) {
  const std::size_t C = bn.channels();
  BnCache<Real> cache;
  cache.mean = Tensor<Real>({C});
  cache.inv_std = Tensor<Real>({C});
  std::vector<long double> sum(C, 0), sumsq(C, 0);
  std::size_t count = 0;
  for (const auto& x : xs) {
    for (std::size_t t = 0; t < x.shape[0]; ++t) {
      const Real* row = x.row(t);
      for (std::size_t c = 0; c < C; ++c) {
        sum[c] += row[c];
        sumsq[c] += static_cast<long double>(row[c]) * row[c];
      }
      ++count;
    }
  }
  if (count == 0) throw ConfigError("batchnorm over empty batch");
  cache.count = count;
  for (std::size_t c = 0; c < C; ++c) {
    const long double m = sum[c] / count;
    const long double v = std::max<long double>(0, sumsq[c] / count - m * m);
    cache.mean.data[c] = static_cast<Real>(m);
    cache.inv_std.data[c] = static_cast<Real>(1.0L / std::sqrt(v + kBnEps));
    bn.running_mean.data[c] = static_cast<Real>((1 - kBnMomentum) * bn.running_mean.data[c] +
                                               kBnMomentum * static_cast<double>(m));
    bn.running_var.data[c] = static_cast<Real>((1 - kBnMomentum) * bn.running_var.data[c] +
                                              kBnMomentum * static_cast<double>(v));
  }
  ys.resize(xs.size());
  for (std::size_t e = 0; e < xs.size(); ++e) {
    const auto& x = xs[e];
    ys[e] = Tensor<Real>(x.shape);
    for (std::size_t t = 0; t < x.shape[0]; ++t) {
      const Real* xr = x.row(t);
      Real* yr = ys[e].row(t);
      for (std::size_t c = 0; c < C; ++c)
        yr[c] = bn.gamma.data[c] * (xr[c] - cache.mean.data[c]) * cache.inv_std.data[c] +
                bn.beta.data[c];
    }
  }
  return cache;
}

template <class Real>
Tensor<Real> batchnorm_forward_infer(const BatchNorm<Real>& bn, const Tensor<Real>& x) {
  const std::size_t C = bn.channels();
  Tensor<Real> y(x.shape);
  std::vector<Real> scale(C), shift(C);
  for (std::size_t c = 0; c < C; ++c) {
    const Real inv = Real(1) / static_cast<Real>(
                                  std::sqrt(static_cast<double>(bn.running_var.data[c]) + kBnEps));
    scale[c] = bn.gamma.data[c] * inv;
    shift[c] = bn.beta.data[c] - bn.running_mean.data[c] * scale[c];
  }
  for (std::size_t t = 0; t < x.shape[0]; ++t) {
    const Real* xr = x.row(t);
    Real* yr = y.row(t);
    for (std::size_t c = 0; c < C; ++c) yr[c] = scale[c] * xr[c] + shift[c];
  }
  return y;
}

// Train-mode backward through the batch statistics. d_xs is filled with the
// gradients w.r.t. each input sequence; gamma/beta gradients accumulate.
template <class Real>
void batchnorm_backward_train(const BatchNorm<Real>& bn, const std::vector<Tensor<Real>>& xs,
                              const std::vector<Tensor<Real>>& d_ys, const BnCache<Real>& cache,
                              std::vector<Tensor<Real>>& d_xs, Tensor<Real>& d_gamma,
                              Tensor<Real>& d_beta) {
  const std::size_t C = bn.channels();
  const Real n = static_cast<Real>(cache.count);
  // Accumulate sum(dy * xhat) and sum(dy) per channel.
  std::vector<Real> sum_dy(C, Real(0)), sum_dy_xhat(C, Real(0));
  for (std::size_t e = 0; e < xs.size(); ++e) {
    const auto& x = xs[e];
    const auto& dy = d_ys[e];
    for (std::size_t t = 0; t < x.shape[0]; ++t) {
      const Real* xr = x.row(t);
      const Real* gr = dy.row(t);
      for (std::size_t c = 0; c < C; ++c) {
        const Real xhat = (xr[c] - cache.mean.data[c]) * cache.inv_std.data[c];
        sum_dy[c] += gr[c];
        sum_dy_xhat[c] += gr[c] * xhat;
      }
    }
  }
  for (std::size_t c = 0; c < C; ++c) {
    d_gamma.data[c] += sum_dy_xhat[c];
    d_beta.data[c] += sum_dy[c];
  }
  // dx = (gamma * inv_std / n) * (n*dy - sum_dy - xhat * sum_dy_xhat)
  d_xs.resize(xs.size());
  for (std::size_t e = 0; e < xs.size(); ++e) {
    const auto& x = xs[e];
    const auto& dy = d_ys[e];
    d_xs[e] = Tensor<Real>(x.shape);
    for (std::size_t t = 0; t < x.shape[0]; ++t) {
      const Real* xr = x.row(t);
      const Real* gr = dy.row(t);
      Real* dr = d_xs[e].row(t);
      for (std::size_t c = 0; c < C; ++c) {
        const Real xhat = (xr[c] - cache.mean.data[c]) * cache.inv_std.data[c];
        dr[c] = bn.gamma.data[c] * cache.inv_std.data[c] / n *
                (n * gr[c] - sum_dy[c] - xhat * sum_dy_xhat[c]);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// ReLU.

template <class Real>
Tensor<Real> relu(const Tensor<Real>& x) {
  Tensor<Real> y(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > Real(0) ? x.data[i] : Real(0);
  return y;
}

template <class Real>
Tensor<Real> relu_backward(const Tensor<Real>& x, const Tensor<Real>& d_y) {
  Tensor<Real> d_x(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    d_x.data[i] = x.data[i] > Real(0) ? d_y.data[i] : Real(0);
  return d_x;
}

// ---------------------------------------------------------------------------
// Max pooling, window 2, stride 2, trailing odd element dropped.
// Ties route the gradient to the lowest index.

template <class Real>
struct PoolCache {
  std::vector<std::size_t> argmax;  // flattened [T_out, C] input-row index
};

template <class Real>
Tensor<Real> maxpool2(const Tensor<Real>& x, PoolCache<Real>& cache) {
  const std::size_t T = x.shape[0], C = x.shape[1];
  if (T < 2) throw ConfigError("sequence too short");
  const std::size_t To = T / 2;
  Tensor<Real> y({To, C});
  cache.argmax.assign(To * C, 0);
  for (std::size_t t = 0; t < To; ++t) {
    const Real* a = x.row(2 * t);
    const Real* b = x.row(2 * t + 1);
    Real* yr = y.row(t);
    for (std::size_t c = 0; c < C; ++c) {
      if (b[c] > a[c]) {
        yr[c] = b[c];
        cache.argmax[t * C + c] = 2 * t + 1;
      } else {
        yr[c] = a[c];
        cache.argmax[t * C + c] = 2 * t;
      }
    }
  }
  return y;
}

template <class Real>
Tensor<Real> maxpool2_backward(const Tensor<Real>& x, const Tensor<Real>& d_y,
                               const PoolCache<Real>& cache) {
  const std::size_t C = x.shape[1];
  Tensor<Real> d_x(x.shape);
  for (std::size_t t = 0; t < d_y.shape[0]; ++t) {
    const Real* gr = d_y.row(t);
    for (std::size_t c = 0; c < C; ++c) d_x.at(cache.argmax[t * C + c], c) += gr[c];
  }
  return d_x;
}

// ---------------------------------------------------------------------------
// Inverted dropout. The mask is a pure function of the seed, so replaying a
// step reproduces it without serialized RNG state.

template <class Real>
struct DropoutMask {
  std::vector<Real> scale;  // 0 or 1/(1-p) per element
};

template <class Real>
Tensor<Real> dropout_forward(const Tensor<Real>& x, double p, bool train, std::uint64_t seed,
                             DropoutMask<Real>* mask_out) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must be in [0, 1)");
  if (!train || p == 0.0) {
    if (mask_out) mask_out->scale.assign(x.data.size(), Real(1));
    return x;
  }
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - p));
  Tensor<Real> y(x.shape);
  std::mt19937_64 rng(seed);
  DropoutMask<Real> mask;
  mask.scale.resize(x.data.size());
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    // Uniform in [0,1) from the top 53 bits; drop iff u < p.
    const double u = static_cast<double>(rng() >> 11) * 0x1p-53;
    mask.scale[i] = u < p ? Real(0) : keep_scale;
    y.data[i] = x.data[i] * mask.scale[i];
  }
  if (mask_out) *mask_out = std::move(mask);
  return y;
}

template <class Real>
Tensor<Real> dropout_backward(const Tensor<Real>& d_y, const DropoutMask<Real>& mask) {
  Tensor<Real> d_x(d_y.shape);
  for (std::size_t i = 0; i < d_y.data.size(); ++i) d_x.data[i] = d_y.data[i] * mask.scale[i];
  return d_x;
}

// ---------------------------------------------------------------------------
// LSTM, one direction. Gate layout in the 4H dimension: input, forget,
// candidate, output. Zero initial hidden and cell state.

template <class Real>
struct LstmDir {
  Tensor<Real> W;  // [4H, D]
  Tensor<Real> U;  // [4H, H]
  Tensor<Real> b;  // [4H]

  std::size_t hidden() const { return U.shape[1]; }
  std::size_t input_dim() const { return W.shape[1]; }
};

template <class Real>
struct LstmCache {
  // All [T, H], indexed by processing order (step 0 first).
  Tensor<Real> i, f, g, o, c, tanh_c, h;
};

namespace detail {

template <class Real>
inline Real sigmoid(Real x) {
  return x >= Real(0) ? Real(1) / (Real(1) + std::exp(-x))
                      : Real(1) - Real(1) / (Real(1) + std::exp(x));
}

}  // namespace detail

// Runs the cell over steps 0..T-1 of x taken in `order` (a permutation of row
// indices). cache rows are in processing order.
template <class Real>
void lstm_forward(const LstmDir<Real>& p, const Tensor<Real>& x,
                  const std::vector<std::size_t>& order, LstmCache<Real>& cache) {
  const std::size_t T = order.size(), H = p.hidden(), D = p.input_dim();
  if (T == 0) throw ConfigError("empty sequence");
  if (x.shape[1] != D) throw ConfigError("lstm input dim mismatch");
  for (Tensor<Real>* m : {&cache.i, &cache.f, &cache.g, &cache.o, &cache.c, &cache.tanh_c, &cache.h})
    *m = Tensor<Real>({T, H});
  std::vector<Real> a(4 * H);
  for (std::size_t s = 0; s < T; ++s) {
    const Real* xt = x.row(order[s]);
    const Real* h_prev = s ? cache.h.row(s - 1) : nullptr;
    const Real* c_prev = s ? cache.c.row(s - 1) : nullptr;
    for (std::size_t r = 0; r < 4 * H; ++r) {
      Real acc = p.b.data[r];
      const Real* wr = p.W.row(r);
      for (std::size_t k = 0; k < D; ++k) acc += wr[k] * xt[k];
      if (h_prev) {
        const Real* ur = p.U.row(r);
        for (std::size_t k = 0; k < H; ++k) acc += ur[k] * h_prev[k];
      }
      a[r] = acc;
    }
    Real* ci = cache.i.row(s);
    Real* cf = cache.f.row(s);
    Real* cg = cache.g.row(s);
    Real* co = cache.o.row(s);
    Real* cc = cache.c.row(s);
    Real* ctc = cache.tanh_c.row(s);
    Real* ch = cache.h.row(s);
    for (std::size_t k = 0; k < H; ++k) {
      ci[k] = detail::sigmoid(a[k]);
      cf[k] = detail::sigmoid(a[H + k]);
      cg[k] = std::tanh(a[2 * H + k]);
      co[k] = detail::sigmoid(a[3 * H + k]);
      cc[k] = ci[k] * cg[k] + (c_prev ? cf[k] * c_prev[k] : Real(0));
      ctc[k] = std::tanh(cc[k]);
      ch[k] = co[k] * ctc[k];
    }
  }
}

// d_h_steps [T, H] holds gradients w.r.t. cache.h rows (processing order).
// Returns gradient w.r.t. x (original row order); accumulates d_W/d_U/d_b.
template <class Real>
Tensor<Real> lstm_backward(const LstmDir<Real>& p, const Tensor<Real>& x,
                           const std::vector<std::size_t>& order, const LstmCache<Real>& cache,
                           const Tensor<Real>& d_h_steps, Tensor<Real>& d_W, Tensor<Real>& d_U,
                           Tensor<Real>& d_b) {
  const std::size_t T = order.size(), H = p.hidden(), D = p.input_dim();
  Tensor<Real> d_x(x.shape);
  std::vector<Real> d_h(H, Real(0)), d_c(H, Real(0)), da(4 * H), d_h_prev(H);
  for (std::size_t s = T; s-- > 0;) {
    const Real* gh = d_h_steps.row(s);
    for (std::size_t k = 0; k < H; ++k) d_h[k] += gh[k];
    const Real* ci = cache.i.row(s);
    const Real* cf = cache.f.row(s);
    const Real* cg = cache.g.row(s);
    const Real* co = cache.o.row(s);
    const Real* ctc = cache.tanh_c.row(s);
    const Real* c_prev = s ? cache.c.row(s - 1) : nullptr;
    for (std::size_t k = 0; k < H; ++k) {
      const Real d_o = d_h[k] * ctc[k];
      const Real d_ck = d_c[k] + d_h[k] * co[k] * (Real(1) - ctc[k] * ctc[k]);
      const Real d_i = d_ck * cg[k];
      const Real d_g = d_ck * ci[k];
      const Real d_f = c_prev ? d_ck * c_prev[k] : Real(0);
      da[k] = d_i * ci[k] * (Real(1) - ci[k]);
      da[H + k] = d_f * cf[k] * (Real(1) - cf[k]);
      da[2 * H + k] = d_g * (Real(1) - cg[k] * cg[k]);
      da[3 * H + k] = d_o * co[k] * (Real(1) - co[k]);
      d_c[k] = d_ck * cf[k];  // flows to c_{s-1}
    }
    const Real* xt = x.row(order[s]);
    Real* dxt = d_x.row(order[s]);
    const Real* h_prev = s ? cache.h.row(s - 1) : nullptr;
    std::fill(d_h_prev.begin(), d_h_prev.end(), Real(0));
    for (std::size_t r = 0; r < 4 * H; ++r) {
      const Real g = da[r];
      d_b.data[r] += g;
      Real* dwr = d_W.row(r);
      const Real* wr = p.W.row(r);
      if (g != Real(0)) {
        for (std::size_t k = 0; k < D; ++k) {
          dwr[k] += g * xt[k];
          dxt[k] += g * wr[k];
        }
        if (h_prev) {
          Real* dur = d_U.row(r);
          const Real* ur = p.U.row(r);
          for (std::size_t k = 0; k < H; ++k) {
            dur[k] += g * h_prev[k];
            d_h_prev[k] += g * ur[k];
          }
        }
      }
    }
    d_h = d_h_prev;
    if (s == 0) std::fill(d_c.begin(), d_c.end(), Real(0));
  }
  return d_x;
}

// ---------------------------------------------------------------------------
// Bidirectional LSTM layer: forward direction reads 0..T-1, backward
// direction reads T-1..0; outputs concatenate per original position to 2H.

template <class Real>
struct BiLstm {
  LstmDir<Real> fwd, bwd;
};

template <class Real>
struct BiLstmCache {
  LstmCache<Real> fwd, bwd;
  std::vector<std::size_t> fwd_order, bwd_order;
};

template <class Real>
Tensor<Real> bilstm_forward(const BiLstm<Real>& p, const Tensor<Real>& x,
                            BiLstmCache<Real>& cache) {
  const std::size_t T = x.shape[0], H = p.fwd.hidden();
  if (T == 0) throw ConfigError("empty sequence");
  cache.fwd_order.resize(T);
  cache.bwd_order.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    cache.fwd_order[t] = t;
    cache.bwd_order[t] = T - 1 - t;
  }
  lstm_forward(p.fwd, x, cache.fwd_order, cache.fwd);
  lstm_forward(p.bwd, x, cache.bwd_order, cache.bwd);
  Tensor<Real> y({T, 2 * H});
  for (std::size_t t = 0; t < T; ++t) {
    const Real* hf = cache.fwd.h.row(t);          // step t reads position t
    const Real* hb = cache.bwd.h.row(T - 1 - t);  // step T-1-t reads position t
    Real* yr = y.row(t);
    for (std::size_t k = 0; k < H; ++k) {
      yr[k] = hf[k];
      yr[H + k] = hb[k];
    }
  }
  return y;
}

template <class Real>
Tensor<Real> bilstm_backward(const BiLstm<Real>& p, const Tensor<Real>& x,
                             const BiLstmCache<Real>& cache, const Tensor<Real>& d_y,
                             BiLstm<Real>& d_p) {
  const std::size_t T = x.shape[0], H = p.fwd.hidden();
  Tensor<Real> d_h_fwd({T, H}), d_h_bwd({T, H});
  for (std::size_t t = 0; t < T; ++t) {
    const Real* gr = d_y.row(t);
    Real* gf = d_h_fwd.row(t);
    Real* gb = d_h_bwd.row(T - 1 - t);
    for (std::size_t k = 0; k < H; ++k) {
      gf[k] = gr[k];
      gb[k] = gr[H + k];
    }
  }
  Tensor<Real> d_x =
      lstm_backward(p.fwd, x, cache.fwd_order, cache.fwd, d_h_fwd, d_p.fwd.W, d_p.fwd.U, d_p.fwd.b);
  Tensor<Real> d_x2 =
      lstm_backward(p.bwd, x, cache.bwd_order, cache.bwd, d_h_bwd, d_p.bwd.W, d_p.bwd.U, d_p.bwd.b);
  for (std::size_t idx = 0; idx < d_x.data.size(); ++idx) d_x.data[idx] += d_x2.data[idx];
  return d_x;
}

}  // namespace walsnet
