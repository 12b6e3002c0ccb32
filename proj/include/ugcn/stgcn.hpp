#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "ugcn/ops.hpp"
#include "ugcn/rng.hpp"
#include "ugcn/tensor.hpp"
#include "ugcn/topology.hpp"

namespace ugcn {

// y = sum over the three partitions of W_j X A_j, per batch and time slice.
// x: [B,C,T,N] or [C,T,N]; weights: three [C',C] Vars.
inline Var spatial_graph_conv(Tape& tp, Var x, const PartitionedAdjacency& adj,
                              const std::array<Var, 3>& weights) {
  const Tensor& xv = tp.val(x);
  const auto s = detail::as_btn(xv, "spatial_graph_conv");
  if (s.n != adj.n)
    throw ShapeMismatch("spatial_graph_conv: input joints " +
                        std::to_string(s.n) + " vs adjacency " +
                        std::to_string(adj.n));
  const Tensor& w0 = tp.val(weights[0]);
  if (w0.rank() != 2 || w0.shape[1] != s.c)
    throw ShapeMismatch("spatial_graph_conv: weight " + w0.shape_str() +
                        " vs input channels " + std::to_string(s.c));
  const std::size_t co = w0.shape[0];
  for (int j = 1; j < 3; ++j)
    if (tp.val(weights[j]).shape != w0.shape)
      throw ShapeMismatch("spatial_graph_conv: partition weights disagree");

  const std::size_t N = s.n, C = s.c;
  Tensor out(detail::btn_shape(s, co, s.t));
  std::vector<double> xa(C * N);
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t t = 0; t < s.t; ++t) {
      // slice X: [C,N] with row stride T*N inside x
      const double* xs = xv.data.data() + (b * C) * s.t * N + t * N;
      double* ys = out.data.data() + (b * co) * s.t * N + t * N;
      for (int j = 0; j < 3; ++j) {
        const Tensor& A = adj.parts[static_cast<std::size_t>(j)];
        const Tensor& W = tp.val(weights[static_cast<std::size_t>(j)]);
        // XA
        std::fill(xa.begin(), xa.end(), 0.0);
        for (std::size_t c = 0; c < C; ++c) {
          const double* xr = xs + c * s.t * N;
          double* xar = xa.data() + c * N;
          for (std::size_t m = 0; m < N; ++m) {
            const double xm = xr[m];
            if (xm == 0.0) continue;
            const double* ar = A.data.data() + m * N;
            for (std::size_t n = 0; n < N; ++n) xar[n] += xm * ar[n];
          }
        }
        // W (XA)
        for (std::size_t o = 0; o < co; ++o) {
          double* yr = ys + o * s.t * N;
          const double* wr = W.data.data() + o * C;
          for (std::size_t c = 0; c < C; ++c) {
            const double wv = wr[c];
            if (wv == 0.0) continue;
            const double* xar = xa.data() + c * N;
            for (std::size_t n = 0; n < N; ++n) yr[n] += wv * xar[n];
          }
        }
      }
    }

  bool ng = tp.needs_grad(x);
  for (Var w : weights) ng = ng || tp.needs_grad(w);
  const PartitionedAdjacency* adjp = &adj;
  return tp.node(std::move(out), ng, [=](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv2 = t.val(x);
    std::vector<double> ga(co * N);  // G A^T
    for (std::size_t b = 0; b < s.b; ++b)
      for (std::size_t tt = 0; tt < s.t; ++tt) {
        const double* xs = xv2.data.data() + (b * C) * s.t * N + tt * N;
        const double* gs = g.data.data() + (b * co) * s.t * N + tt * N;
        for (int j = 0; j < 3; ++j) {
          const Tensor& A = adjp->parts[static_cast<std::size_t>(j)];
          const Var wj = weights[static_cast<std::size_t>(j)];
          const Tensor& W = t.val(wj);
          // M = G A^T : M[o,m] = sum_n G[o,n] A[m,n]
          std::fill(ga.begin(), ga.end(), 0.0);
          for (std::size_t o = 0; o < co; ++o) {
            const double* gr = gs + o * s.t * N;
            double* mr = ga.data() + o * N;
            for (std::size_t m = 0; m < N; ++m) {
              const double* ar = A.data.data() + m * N;
              double acc = 0.0;
              for (std::size_t n = 0; n < N; ++n) acc += gr[n] * ar[n];
              mr[m] = acc;
            }
          }
          if (t.needs_grad(wj)) {
            Tensor& gw = t.grad(wj);
            for (std::size_t o = 0; o < co; ++o) {
              const double* mr = ga.data() + o * N;
              for (std::size_t c = 0; c < C; ++c) {
                const double* xr = xs + c * s.t * N;
                double acc = 0.0;
                for (std::size_t m = 0; m < N; ++m) acc += mr[m] * xr[m];
                gw.at(o, c) += acc;
              }
            }
          }
          if (t.needs_grad(x)) {
            Tensor& gx = t.grad(x);
            double* gxs = gx.data.data() + (b * C) * s.t * N + tt * N;
            for (std::size_t c = 0; c < C; ++c) {
              double* gxr = gxs + c * s.t * N;
              for (std::size_t o = 0; o < co; ++o) {
                const double wv = W.at(o, c);
                if (wv == 0.0) continue;
                const double* mr = ga.data() + o * N;
                for (std::size_t m = 0; m < N; ++m) gxr[m] += wv * mr[m];
              }
            }
          }
        }
      }
  });
}

// The fundamental unit: partitioned spatial graph convolution, temporal
// convolution, normalization, activation, dropout and a residual path.
// Pipeline: sgc -> bn -> relu -> tconv(stride) -> bn -> dropout -> +res -> relu.
struct STGCNBlock {
  std::size_t c_in = 0, c_out = 0;
  std::size_t temporal_kernel = 3;
  std::size_t stride = 1;
  double dropout_rate = 0.0;

  std::array<Tensor, 3> spatial_w;  // each [c_out, c_in]
  Tensor temp_w;                    // [c_out, c_out, K_t]
  Tensor temp_b;                    // [c_out]
  Tensor bn1_gamma, bn1_beta, bn2_gamma, bn2_beta;
  BatchNormState bn1, bn2;
  Tensor res_w;  // [c_out, c_in], only when projection needed

  bool needs_projection() const { return c_in != c_out || stride != 1; }

  STGCNBlock() = default;
  STGCNBlock(std::size_t cin, std::size_t cout, std::size_t kt,
             std::size_t str, double drop, Rng init)
      : c_in(cin), c_out(cout), temporal_kernel(kt), stride(str),
        dropout_rate(drop), bn1(cout), bn2(cout) {
    if (kt % 2 == 0) throw EvenKernel("temporal kernel " + std::to_string(kt));
    if (str != 1 && str != 2)
      throw ShapeMismatch("stride must be 1 or 2, got " + std::to_string(str));
    auto uniform_fill = [&](Tensor& t, std::size_t fan_in, Rng r) {
      const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double& v : t.data) v = r.next_uniform(-limit, limit);
    };
    for (int j = 0; j < 3; ++j) {
      spatial_w[static_cast<std::size_t>(j)] = Tensor({cout, cin});
      uniform_fill(spatial_w[static_cast<std::size_t>(j)], cin,
                   init.split(10 + static_cast<std::uint64_t>(j)));
    }
    temp_w = Tensor({cout, cout, kt});
    uniform_fill(temp_w, cout * kt, init.split(20));
    temp_b = Tensor({cout});
    bn1_gamma = Tensor({cout}, 1.0);
    bn1_beta = Tensor({cout});
    bn2_gamma = Tensor({cout}, 1.0);
    bn2_beta = Tensor({cout});
    if (needs_projection()) {
      res_w = Tensor({cout, cin});
      uniform_fill(res_w, cin, init.split(30));
    }
  }

  Var forward(Tape& tp, Var x, const PartitionedAdjacency& adj, Mode mode,
              Rng dropout_stream, bool update_running = true) {
    std::array<Var, 3> w{tp.leaf(spatial_w[0]), tp.leaf(spatial_w[1]),
                         tp.leaf(spatial_w[2])};
    Var y = spatial_graph_conv(tp, x, adj, w);
    y = batch_norm(tp, y, tp.leaf(bn1_gamma), tp.leaf(bn1_beta), bn1, mode,
                   update_running);
    y = relu(tp, y);
    y = temporal_conv(tp, y, tp.leaf(temp_w), tp.leaf(temp_b), stride);
    y = batch_norm(tp, y, tp.leaf(bn2_gamma), tp.leaf(bn2_beta), bn2, mode,
                   update_running);
    y = dropout(tp, y, dropout_rate, mode, dropout_stream);
    Var res = x;
    if (needs_projection()) {
      res = pointwise_conv(tp, res, tp.leaf(res_w));
      if (stride != 1) res = subsample_time(tp, res, stride);
    }
    y = add(tp, y, res);
    return relu(tp, y);
  }

  // Enumerates parameters and norm statistics for optimizers and
  // serialization. fn(name, tensor&, trainable).
  template <typename F>
  void visit_params(const std::string& prefix, F&& fn) {
    for (int j = 0; j < 3; ++j)
      fn(prefix + ".spatial_w" + std::to_string(j),
         spatial_w[static_cast<std::size_t>(j)], true);
    fn(prefix + ".temp_w", temp_w, true);
    fn(prefix + ".temp_b", temp_b, true);
    fn(prefix + ".bn1_gamma", bn1_gamma, true);
    fn(prefix + ".bn1_beta", bn1_beta, true);
    fn(prefix + ".bn2_gamma", bn2_gamma, true);
    fn(prefix + ".bn2_beta", bn2_beta, true);
    fn(prefix + ".bn1_rmean", bn1.running_mean, false);
    fn(prefix + ".bn1_rvar", bn1.running_var, false);
    fn(prefix + ".bn2_rmean", bn2.running_mean, false);
    fn(prefix + ".bn2_rvar", bn2.running_var, false);
    if (needs_projection()) fn(prefix + ".res_w", res_w, true);
  }
};

}  // namespace ugcn
