#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <vector>

#include "ugcn/errors.hpp"
#include "ugcn/rng.hpp"
#include "ugcn/tensor.hpp"

namespace ugcn {

enum class Mode { kTrain, kEval };

namespace detail {

// Views a rank-3 [C,T,N] or rank-4 [B,C,T,N] tensor as batched.
struct Btn {
  std::size_t b, c, t, n;
  bool batched;
};

inline Btn as_btn(const Tensor& x, const char* who) {
  if (x.rank() == 3) return {1, x.shape[0], x.shape[1], x.shape[2], false};
  if (x.rank() == 4)
    return {x.shape[0], x.shape[1], x.shape[2], x.shape[3], true};
  throw ShapeMismatch(std::string(who) + ": expected rank 3 or 4, got " +
                      x.shape_str());
}

inline std::vector<std::size_t> btn_shape(const Btn& s, std::size_t c,
                                          std::size_t t) {
  if (s.batched) return {s.b, c, t, s.n};
  return {c, t, s.n};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

inline Var add(Tape& tp, Var a, Var b) {
  const Tensor& av = tp.val(a);
  const Tensor& bv = tp.val(b);
  if (!av.same_shape(bv))
    throw ShapeMismatch("add: " + av.shape_str() + " vs " + bv.shape_str());
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
  bool ng = tp.needs_grad(a) || tp.needs_grad(b);
  return tp.node(std::move(out), ng, [a, b](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i];
    }
  });
}

inline Var mul(Tape& tp, Var a, Var b) {
  const Tensor& av = tp.val(a);
  const Tensor& bv = tp.val(b);
  if (!av.same_shape(bv))
    throw ShapeMismatch("mul: " + av.shape_str() + " vs " + bv.shape_str());
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
  bool ng = tp.needs_grad(a) || tp.needs_grad(b);
  return tp.node(std::move(out), ng, [a, b](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& av2 = t.val(a);
    const Tensor& bv2 = t.val(b);
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga.data[i] += g.data[i] * bv2.data[i];
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i)
        gb.data[i] += g.data[i] * av2.data[i];
    }
  });
}

inline Var relu(Tape& tp, Var x) {
  const Tensor& xv = tp.val(x);
  Tensor out = xv;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return tp.node(std::move(out), tp.needs_grad(x), [x](Tape& t, Var self) {
    if (!t.needs_grad(x)) return;
    const Tensor& g = t.grad(self);
    const Tensor& xv2 = t.val(x);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv2.data[i] > 0.0) gx.data[i] += g.data[i];
  });
}

inline Var sum_all(Tape& tp, Var x) {
  const Tensor& xv = tp.val(x);
  double s = 0.0;
  for (double v : xv.data) s += v;
  Tensor out = Tensor::from({1}, {s});
  return tp.node(std::move(out), tp.needs_grad(x), [x](Tape& t, Var self) {
    if (!t.needs_grad(x)) return;
    const double g = t.grad(self).data[0];
    Tensor& gx = t.grad(x);
    for (double& v : gx.data) v += g;
  });
}

// ---------------------------------------------------------------------------
// matmul: [m,k] x [k,n] -> [m,n]; dA = dC B^T, dB = A^T dC

inline Var matmul(Tape& tp, Var a, Var b) {
  const Tensor& av = tp.val(a);
  const Tensor& bv = tp.val(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0])
    throw ShapeMismatch("matmul: " + av.shape_str() + " x " + bv.shape_str());
  const std::size_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av.at(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += aip * bv.at(p, j);
    }
  bool ng = tp.needs_grad(a) || tp.needs_grad(b);
  return tp.node(std::move(out), ng, [a, b, m, k, n](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& av2 = t.val(a);
    const Tensor& bv2 = t.val(b);
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g.at(i, j);
          if (gij == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p)
            ga.at(i, p) += gij * bv2.at(p, j);
        }
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av2.at(i, p);
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j)
            gb.at(p, j) += aip * g.at(i, j);
        }
    }
  });
}

// ---------------------------------------------------------------------------
// temporal convolution along t, per joint column, zero same-padding.
// x: [B,C,T,N] (or [C,T,N]), w: [C_out,C_in,K_t], bias: [C_out], stride 1|2.
// T' = ceil(T/stride).

inline Var temporal_conv(Tape& tp, Var x, Var w, Var bias, std::size_t stride) {
  const Tensor& xv = tp.val(x);
  const Tensor& wv = tp.val(w);
  const Tensor& bv = tp.val(bias);
  const auto s = detail::as_btn(xv, "temporal_conv");
  if (wv.rank() != 3)
    throw ShapeMismatch("temporal_conv: kernel must be rank 3, got " +
                        wv.shape_str());
  const std::size_t co = wv.shape[0], ci = wv.shape[1], kt = wv.shape[2];
  if (kt % 2 == 0)
    throw EvenKernel("temporal kernel size " + std::to_string(kt));
  if (ci != s.c)
    throw ShapeMismatch("temporal_conv: input channels " +
                        std::to_string(s.c) + " vs kernel " +
                        std::to_string(ci));
  if (bv.rank() != 1 || bv.shape[0] != co)
    throw ShapeMismatch("temporal_conv: bias " + bv.shape_str());
  if (stride != 1 && stride != 2)
    throw ShapeMismatch("temporal_conv: stride must be 1 or 2");
  const std::size_t pad = kt / 2;
  const std::size_t to = (s.t + stride - 1) / stride;

  Tensor out(detail::btn_shape(s, co, to));
  const std::size_t xcs = s.t * s.n;           // channel stride in x
  const std::size_t xbs = s.c * xcs;           // batch stride in x
  const std::size_t ocs = to * s.n;
  const std::size_t obs = co * ocs;
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t oc = 0; oc < co; ++oc) {
      const double bias_v = bv.data[oc];
      double* orow = out.data.data() + b * obs + oc * ocs;
      for (std::size_t tt = 0; tt < to; ++tt)
        for (std::size_t n = 0; n < s.n; ++n) orow[tt * s.n + n] = bias_v;
      for (std::size_t ic = 0; ic < ci; ++ic) {
        const double* xrow = xv.data.data() + b * xbs + ic * xcs;
        for (std::size_t k = 0; k < kt; ++k) {
          const double wkk = wv.at(oc, ic, k);
          if (wkk == 0.0) continue;
          for (std::size_t tt = 0; tt < to; ++tt) {
            const long ti = static_cast<long>(tt * stride + k) -
                            static_cast<long>(pad);
            if (ti < 0 || ti >= static_cast<long>(s.t)) continue;
            const double* xr = xrow + static_cast<std::size_t>(ti) * s.n;
            double* orr = orow + tt * s.n;
            for (std::size_t n = 0; n < s.n; ++n) orr[n] += wkk * xr[n];
          }
        }
      }
    }

  bool ng = tp.needs_grad(x) || tp.needs_grad(w) || tp.needs_grad(bias);
  return tp.node(std::move(out), ng, [=](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv2 = t.val(x);
    const Tensor& wv2 = t.val(w);
    if (t.needs_grad(bias)) {
      Tensor& gb = t.grad(bias);
      for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t oc = 0; oc < co; ++oc) {
          const double* grow = g.data.data() + b * obs + oc * ocs;
          double acc = 0.0;
          for (std::size_t i = 0; i < ocs; ++i) acc += grow[i];
          gb.data[oc] += acc;
        }
    }
    const bool gx = t.needs_grad(x), gw = t.needs_grad(w);
    if (!gx && !gw) return;
    Tensor* gxp = gx ? &t.grad(x) : nullptr;
    Tensor* gwp = gw ? &t.grad(w) : nullptr;
    for (std::size_t b = 0; b < s.b; ++b)
      for (std::size_t oc = 0; oc < co; ++oc) {
        const double* grow = g.data.data() + b * obs + oc * ocs;
        for (std::size_t ic = 0; ic < ci; ++ic) {
          const double* xrow = xv2.data.data() + b * xbs + ic * xcs;
          for (std::size_t k = 0; k < kt; ++k) {
            const double wkk = wv2.at(oc, ic, k);
            double wacc = 0.0;
            for (std::size_t tt = 0; tt < to; ++tt) {
              const long ti = static_cast<long>(tt * stride + k) -
                              static_cast<long>(pad);
              if (ti < 0 || ti >= static_cast<long>(s.t)) continue;
              const std::size_t tiu = static_cast<std::size_t>(ti);
              const double* grr = grow + tt * s.n;
              if (gx) {
                double* gxr = gxp->data.data() + b * xbs + ic * xcs + tiu * s.n;
                for (std::size_t n = 0; n < s.n; ++n) gxr[n] += wkk * grr[n];
              }
              if (gw) {
                const double* xr = xrow + tiu * s.n;
                for (std::size_t n = 0; n < s.n; ++n) wacc += xr[n] * grr[n];
              }
            }
            if (gw) gwp->at(oc, ic, k) += wacc;
          }
        }
      }
  });
}

// ---------------------------------------------------------------------------
// pointwise (1x1) channel mixing: x [.,C,T,N], w [C',C], optional bias [C'].

inline Var pointwise_conv(Tape& tp, Var x, Var w, Var bias = Var{}) {
  const Tensor& xv = tp.val(x);
  const Tensor& wv = tp.val(w);
  const auto s = detail::as_btn(xv, "pointwise_conv");
  if (wv.rank() != 2 || wv.shape[1] != s.c)
    throw ShapeMismatch("pointwise_conv: weight " + wv.shape_str() +
                        " vs input channels " + std::to_string(s.c));
  const std::size_t co = wv.shape[0];
  const bool has_bias = bias.valid();
  if (has_bias) {
    const Tensor& bv = tp.val(bias);
    if (bv.rank() != 1 || bv.shape[0] != co)
      throw ShapeMismatch("pointwise_conv: bias " + bv.shape_str());
  }
  const std::size_t tn = s.t * s.n;
  Tensor out(detail::btn_shape(s, co, s.t));
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t oc = 0; oc < co; ++oc) {
      double* orow = out.data.data() + (b * co + oc) * tn;
      if (has_bias) {
        const double bvv = tp.val(bias).data[oc];
        for (std::size_t i = 0; i < tn; ++i) orow[i] = bvv;
      }
      for (std::size_t ic = 0; ic < s.c; ++ic) {
        const double wv_ = wv.at(oc, ic);
        if (wv_ == 0.0) continue;
        const double* xrow = xv.data.data() + (b * s.c + ic) * tn;
        for (std::size_t i = 0; i < tn; ++i) orow[i] += wv_ * xrow[i];
      }
    }
  bool ng = tp.needs_grad(x) || tp.needs_grad(w) ||
            (has_bias && tp.needs_grad(bias));
  return tp.node(std::move(out), ng, [=](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv2 = t.val(x);
    const Tensor& wv2 = t.val(w);
    if (has_bias && t.needs_grad(bias)) {
      Tensor& gb = t.grad(bias);
      for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t oc = 0; oc < co; ++oc) {
          const double* grow = g.data.data() + (b * co + oc) * tn;
          double acc = 0.0;
          for (std::size_t i = 0; i < tn; ++i) acc += grow[i];
          gb.data[oc] += acc;
        }
    }
    for (std::size_t b = 0; b < s.b; ++b)
      for (std::size_t oc = 0; oc < co; ++oc) {
        const double* grow = g.data.data() + (b * co + oc) * tn;
        for (std::size_t ic = 0; ic < s.c; ++ic) {
          if (t.needs_grad(x)) {
            const double wv_ = wv2.at(oc, ic);
            double* gxr = t.grad(x).data.data() + (b * s.c + ic) * tn;
            for (std::size_t i = 0; i < tn; ++i) gxr[i] += wv_ * grow[i];
          }
          if (t.needs_grad(w)) {
            const double* xrow = xv2.data.data() + (b * s.c + ic) * tn;
            double acc = 0.0;
            for (std::size_t i = 0; i < tn; ++i) acc += xrow[i] * grow[i];
            t.grad(w).at(oc, ic) += acc;
          }
        }
      }
  });
}

// ---------------------------------------------------------------------------
// batch normalization over B,T,N per channel. x must be [B,C,T,N].

struct BatchNormState {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
  double momentum = 0.1;
  double epsilon = 1e-5;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(Tensor({channels}, 0.0)),
        running_var(Tensor({channels}, 1.0)) {}
};

inline Var batch_norm(Tape& tp, Var x, Var gamma, Var beta,
                      BatchNormState& state, Mode mode,
                      bool update_running = true) {
  const Tensor& xv = tp.val(x);
  if (xv.rank() != 4)
    throw ShapeMismatch("batch_norm: expected [B,C,T,N], got " +
                        xv.shape_str());
  const std::size_t B = xv.shape[0], C = xv.shape[1], T = xv.shape[2],
                    N = xv.shape[3];
  const Tensor& gv = tp.val(gamma);
  const Tensor& bv = tp.val(beta);
  if (gv.shape != std::vector<std::size_t>{C} || bv.shape != gv.shape)
    throw ShapeMismatch("batch_norm: gamma/beta must be [C]");
  const std::size_t tn = T * N;
  const std::size_t m = B * tn;  // samples per channel
  const double eps = state.epsilon;

  std::vector<double> mean(C, 0.0), inv_std(C, 0.0);
  if (mode == Mode::kTrain) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* row = xv.data.data() + (b * C + c) * tn;
        for (std::size_t i = 0; i < tn; ++i) s += row[i];
      }
      const double mu = s / static_cast<double>(m);
      double vs = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* row = xv.data.data() + (b * C + c) * tn;
        for (std::size_t i = 0; i < tn; ++i) {
          const double d = row[i] - mu;
          vs += d * d;
        }
      }
      const double var = vs / static_cast<double>(m);
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + eps);
      if (update_running) {
        state.running_mean.data[c] =
            (1.0 - state.momentum) * state.running_mean.data[c] +
            state.momentum * mu;
        state.running_var.data[c] =
            (1.0 - state.momentum) * state.running_var.data[c] +
            state.momentum * var;
      }
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean.data[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var.data[c] + eps);
    }
  }

  Tensor out(xv.shape);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const double* row = xv.data.data() + (b * C + c) * tn;
      double* orow = out.data.data() + (b * C + c) * tn;
      const double mu = mean[c], is = inv_std[c], ga = gv.data[c],
                   be = bv.data[c];
      for (std::size_t i = 0; i < tn; ++i)
        orow[i] = ga * (row[i] - mu) * is + be;
    }

  bool ng = tp.needs_grad(x) || tp.needs_grad(gamma) || tp.needs_grad(beta);
  const bool train = mode == Mode::kTrain;
  return tp.node(std::move(out), ng, [=](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv2 = t.val(x);
    const Tensor& gv2 = t.val(gamma);
    for (std::size_t c = 0; c < C; ++c) {
      const double mu = mean[c], is = inv_std[c];
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* grow = g.data.data() + (b * C + c) * tn;
        const double* xrow = xv2.data.data() + (b * C + c) * tn;
        for (std::size_t i = 0; i < tn; ++i) {
          sum_dy += grow[i];
          sum_dy_xhat += grow[i] * (xrow[i] - mu) * is;
        }
      }
      if (t.needs_grad(beta)) t.grad(beta).data[c] += sum_dy;
      if (t.needs_grad(gamma)) t.grad(gamma).data[c] += sum_dy_xhat;
      if (t.needs_grad(x)) {
        Tensor& gx = t.grad(x);
        const double ga = gv2.data[c];
        const double md = static_cast<double>(m);
        for (std::size_t b = 0; b < B; ++b) {
          const double* grow = g.data.data() + (b * C + c) * tn;
          const double* xrow = xv2.data.data() + (b * C + c) * tn;
          double* gxr = gx.data.data() + (b * C + c) * tn;
          if (train) {
            for (std::size_t i = 0; i < tn; ++i) {
              const double xhat = (xrow[i] - mu) * is;
              gxr[i] += ga * is / md *
                        (md * grow[i] - sum_dy - xhat * sum_dy_xhat);
            }
          } else {
            for (std::size_t i = 0; i < tn; ++i) gxr[i] += ga * is * grow[i];
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// dropout with inverted scaling; mask is drawn from the supplied stream so the
// result is a pure function of (seed, call ordinal).

inline Var dropout(Tape& tp, Var x, double rate, Mode mode, Rng stream) {
  if (rate < 0.0 || rate >= 1.0)
    throw RateOutOfRange("dropout rate " + std::to_string(rate));
  if (mode == Mode::kEval || rate == 0.0) {
    const Tensor& xv = tp.val(x);
    Tensor out = xv;
    return tp.node(std::move(out), tp.needs_grad(x), [x](Tape& t, Var self) {
      if (!t.needs_grad(x)) return;
      const Tensor& g = t.grad(self);
      Tensor& gx = t.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i];
    });
  }
  const Tensor& xv = tp.val(x);
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(xv.size());
  Tensor out = xv;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double kept = stream.next_uniform() >= rate ? keep_scale : 0.0;
    (*mask)[i] = kept;
    out.data[i] *= kept;
  }
  return tp.node(std::move(out), tp.needs_grad(x), [x, mask](Tape& t, Var self) {
    if (!t.needs_grad(x)) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      gx.data[i] += g.data[i] * (*mask)[i];
  });
}

// ---------------------------------------------------------------------------
// linear time resampling with endpoint alignment; x [.,C,T,N] -> [.,C,new_t,N]

inline Var time_resample(Tape& tp, Var x, std::size_t new_t) {
  const Tensor& xv = tp.val(x);
  const auto s = detail::as_btn(xv, "time_resample");
  if (new_t < 1) throw ShapeMismatch("time_resample: new_t must be >= 1");
  // output frame i reads source frames lo/hi with weights (1-f, f)
  std::vector<std::size_t> lo(new_t), hi(new_t);
  std::vector<double> frac(new_t);
  for (std::size_t i = 0; i < new_t; ++i) {
    double pos = 0.0;
    if (new_t > 1)
      pos = static_cast<double>(i) * static_cast<double>(s.t - 1) /
            static_cast<double>(new_t - 1);
    std::size_t l = static_cast<std::size_t>(pos);
    if (l >= s.t - 1 && s.t > 1) l = s.t - 2;
    if (s.t == 1) l = 0;
    std::size_t h = std::min(l + 1, s.t - 1);
    lo[i] = l;
    hi[i] = h;
    frac[i] = pos - static_cast<double>(l);
  }
  Tensor out(detail::btn_shape(s, s.c, new_t));
  const std::size_t bc = s.b * s.c;
  for (std::size_t r = 0; r < bc; ++r) {
    const double* xrow = xv.data.data() + r * s.t * s.n;
    double* orow = out.data.data() + r * new_t * s.n;
    for (std::size_t i = 0; i < new_t; ++i) {
      const double f = frac[i];
      const double* a = xrow + lo[i] * s.n;
      const double* b = xrow + hi[i] * s.n;
      double* o = orow + i * s.n;
      for (std::size_t n = 0; n < s.n; ++n)
        o[n] = (1.0 - f) * a[n] + f * b[n];
    }
  }
  return tp.node(std::move(out), tp.needs_grad(x),
                 [x, s, new_t, lo, hi, frac, bc](Tape& t, Var self) {
                   if (!t.needs_grad(x)) return;
                   const Tensor& g = t.grad(self);
                   Tensor& gx = t.grad(x);
                   for (std::size_t r = 0; r < bc; ++r) {
                     double* gxr = gx.data.data() + r * s.t * s.n;
                     const double* grow = g.data.data() + r * new_t * s.n;
                     for (std::size_t i = 0; i < new_t; ++i) {
                       const double f = frac[i];
                       const double* go = grow + i * s.n;
                       double* a = gxr + lo[i] * s.n;
                       double* b = gxr + hi[i] * s.n;
                       for (std::size_t n = 0; n < s.n; ++n) {
                         a[n] += (1.0 - f) * go[n];
                         b[n] += f * go[n];
                       }
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// keep frames 0, stride, 2*stride, ... (residual path for strided blocks)

inline Var subsample_time(Tape& tp, Var x, std::size_t stride) {
  const Tensor& xv = tp.val(x);
  const auto s = detail::as_btn(xv, "subsample_time");
  const std::size_t to = (s.t + stride - 1) / stride;
  Tensor out(detail::btn_shape(s, s.c, to));
  const std::size_t bc = s.b * s.c;
  for (std::size_t r = 0; r < bc; ++r)
    for (std::size_t i = 0; i < to; ++i) {
      const double* src = xv.data.data() + (r * s.t + i * stride) * s.n;
      double* dst = out.data.data() + (r * to + i) * s.n;
      std::copy(src, src + s.n, dst);
    }
  return tp.node(std::move(out), tp.needs_grad(x),
                 [x, s, stride, to, bc](Tape& t, Var self) {
                   if (!t.needs_grad(x)) return;
                   const Tensor& g = t.grad(self);
                   Tensor& gx = t.grad(x);
                   for (std::size_t r = 0; r < bc; ++r)
                     for (std::size_t i = 0; i < to; ++i) {
                       const double* src = g.data.data() + (r * to + i) * s.n;
                       double* dst =
                           gx.data.data() + (r * s.t + i * stride) * s.n;
                       for (std::size_t n = 0; n < s.n; ++n) dst[n] += src[n];
                     }
                 });
}

// ---------------------------------------------------------------------------
// concatenate along the channel axis (rank must match across inputs)

inline Var concat_channels(Tape& tp, const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeMismatch("concat_channels: no inputs");
  auto s0 = detail::as_btn(tp.val(xs[0]), "concat_channels");
  std::size_t ctot = 0;
  std::vector<std::size_t> channels;
  bool ng = false;
  for (Var v : xs) {
    auto s = detail::as_btn(tp.val(v), "concat_channels");
    if (s.b != s0.b || s.t != s0.t || s.n != s0.n ||
        s.batched != s0.batched)
      throw ShapeMismatch("concat_channels: incompatible " +
                          tp.val(v).shape_str());
    channels.push_back(s.c);
    ctot += s.c;
    ng = ng || tp.needs_grad(v);
  }
  const std::size_t tn = s0.t * s0.n;
  Tensor out(detail::btn_shape(s0, ctot, s0.t));
  for (std::size_t b = 0; b < s0.b; ++b) {
    std::size_t coff = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const Tensor& xv = tp.val(xs[k]);
      const std::size_t ck = channels[k];
      std::copy(xv.data.data() + b * ck * tn, xv.data.data() + (b + 1) * ck * tn,
                out.data.data() + (b * ctot + coff) * tn);
      coff += ck;
    }
  }
  auto xs_copy = xs;
  return tp.node(std::move(out), ng,
                 [xs_copy, channels, s0, ctot, tn](Tape& t, Var self) {
                   const Tensor& g = t.grad(self);
                   for (std::size_t b = 0; b < s0.b; ++b) {
                     std::size_t coff = 0;
                     for (std::size_t k = 0; k < xs_copy.size(); ++k) {
                       const std::size_t ck = channels[k];
                       if (t.needs_grad(xs_copy[k])) {
                         Tensor& gx = t.grad(xs_copy[k]);
                         const double* src =
                             g.data.data() + (b * ctot + coff) * tn;
                         double* dst = gx.data.data() + b * ck * tn;
                         for (std::size_t i = 0; i < ck * tn; ++i)
                           dst[i] += src[i];
                       }
                       coff += ck;
                     }
                   }
                 });
}

}  // namespace ugcn
