#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "ugcn/data.hpp"
#include "ugcn/model.hpp"
#include "ugcn/ops.hpp"
#include "ugcn/tensor.hpp"

namespace ugcn {

// ---------------------------------------------------------------------------
// MPJPE: mean per-joint position error after subtracting each sequence's own
// root joint per frame, in millimeters. Exact norm; the loss path below uses
// a smoothed norm instead.

inline double mpjpe(const PoseSequence& pred, const PoseSequence& gt,
                    std::size_t root) {
  if (pred.frames != gt.frames || pred.joints != gt.joints)
    throw ShapeMismatch("mpjpe: sequence shapes differ");
  if (root >= pred.joints)
    throw ShapeMismatch("mpjpe: root " + std::to_string(root) +
                        " out of range");
  double acc = 0.0;
  for (std::size_t t = 0; t < pred.frames; ++t) {
    const Vec3 pr = pred.joint(t, root);
    const Vec3 gr = gt.joint(t, root);
    for (std::size_t i = 0; i < pred.joints; ++i) {
      const Vec3 d = (pred.joint(t, i) - pr) - (gt.joint(t, i) - gr);
      acc += d.norm();
    }
  }
  return acc / static_cast<double>(pred.frames * pred.joints);
}

// Differentiable MPJPE on network tensors [B,3,T,N]. The norm is smoothed as
// sqrt(d^2 + eps) to keep the gradient finite at zero distance.
inline Var mpjpe_loss(Tape& tp, Var pred, const Tensor& gt, std::size_t root,
                      double eps = 1e-12) {
  const Tensor& pv = tp.val(pred);
  if (pv.rank() != 4 || pv.shape[1] != 3)
    throw ShapeMismatch("mpjpe_loss: expected [B,3,T,N], got " +
                        pv.shape_str());
  if (!pv.same_shape(gt))
    throw ShapeMismatch("mpjpe_loss: prediction " + pv.shape_str() +
                        " vs ground truth " + gt.shape_str());
  const std::size_t B = pv.shape[0], T = pv.shape[2], N = pv.shape[3];
  if (root >= N)
    throw ShapeMismatch("mpjpe_loss: root out of range");
  const double scale = 1.0 / static_cast<double>(B * T * N);

  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < N; ++i) {
        double d2 = eps;
        for (std::size_t c = 0; c < 3; ++c) {
          const double d = (pv.at(b, c, t, i) - pv.at(b, c, t, root)) -
                           (gt.at(b, c, t, i) - gt.at(b, c, t, root));
          d2 += d * d;
        }
        total += std::sqrt(d2);
      }
  Tensor out = Tensor::from({1}, {total * scale});
  auto gt_copy = std::make_shared<Tensor>(gt);
  return tp.node(std::move(out), tp.needs_grad(pred),
                 [pred, gt_copy, root, eps, B, T, N, scale](Tape& t, Var self) {
                   if (!t.needs_grad(pred)) return;
                   const double g0 = t.grad(self).data[0] * scale;
                   const Tensor& pv2 = t.val(pred);
                   const Tensor& gtv = *gt_copy;
                   Tensor& gp = t.grad(pred);
                   for (std::size_t b = 0; b < B; ++b)
                     for (std::size_t tt = 0; tt < T; ++tt) {
                       double d2s[3];
                       for (std::size_t i = 0; i < N; ++i) {
                         double d2 = eps;
                         for (std::size_t c = 0; c < 3; ++c) {
                           const double d =
                               (pv2.at(b, c, tt, i) - pv2.at(b, c, tt, root)) -
                               (gtv.at(b, c, tt, i) - gtv.at(b, c, tt, root));
                           d2s[c] = d;
                           d2 += d * d;
                         }
                         const double inv = g0 / std::sqrt(d2);
                         for (std::size_t c = 0; c < 3; ++c) {
                           const double gd = d2s[c] * inv;
                           gp.at(b, c, tt, i) += gd;
                           gp.at(b, c, tt, root) -= gd;
                         }
                       }
                     }
                 });
}

// ---------------------------------------------------------------------------
// training

struct Hyperparams {
  std::size_t batch_size = 256;
  std::size_t epochs = 110;
  double learning_rate = 0.01;
  double momentum = 0.9;
  // learning rate multiplied by 0.1 when these epoch fractions are reached
  double decay_at_1 = 0.6;
  double decay_at_2 = 0.85;
  // global-norm gradient clipping; the residual head emits millimeter-scale
  // corrections, so early gradients can be orders of magnitude above their
  // steady-state size. 0 disables.
  double clip_norm = 15.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size < 1) throw ConfigInvalid("batch_size must be >= 1");
    if (epochs < 1) throw ConfigInvalid("epochs must be >= 1");
    if (learning_rate < 0) throw ConfigInvalid("learning_rate must be >= 0");
    if (momentum < 0 || momentum >= 1)
      throw ConfigInvalid("momentum must be in [0,1)");
    if (clip_norm < 0) throw ConfigInvalid("clip_norm must be >= 0");
  }

  static Hyperparams paper_profile() { return Hyperparams{}; }
  static Hyperparams desk_profile() {
    Hyperparams hp;
    hp.batch_size = 8;
    hp.epochs = 200;
    return hp;
  }
};

struct Dataset {
  std::vector<PoseSequence> inputs;
  std::vector<PoseSequence> targets;

  std::size_t size() const { return inputs.size(); }

  void check(std::size_t time_factor) const {
    if (inputs.empty()) throw EmptyDataset("dataset has no sequences");
    if (inputs.size() != targets.size())
      throw ShapeMismatch("inputs/targets count mismatch");
    const std::size_t T = inputs.front().frames;
    const std::size_t N = inputs.front().joints;
    if (T % time_factor != 0)
      throw BadTemporalLength("T=" + std::to_string(T) +
                              " not divisible by " +
                              std::to_string(time_factor));
    for (std::size_t i = 0; i < inputs.size(); ++i)
      if (inputs[i].frames != T || inputs[i].joints != N ||
          targets[i].frames != T || targets[i].joints != N)
        throw ShapeMismatch("sequence " + std::to_string(i) +
                            " disagrees on T or N");
  }
};

// Directory layout produced by the synth command: input_%04d.skl paired with
// gt_%04d.skl, indices contiguous from 0.
inline Dataset load_dataset_dir(const std::string& dir) {
  Dataset data;
  char name[64];
  for (std::size_t i = 0;; ++i) {
    std::snprintf(name, sizeof name, "/input_%04zu.skl", i);
    const std::string in_path = dir + name;
    std::snprintf(name, sizeof name, "/gt_%04zu.skl", i);
    const std::string gt_path = dir + name;
    std::ifstream probe(in_path, std::ios::binary);
    if (!probe) break;
    probe.close();
    data.inputs.push_back(read_skl(in_path));
    data.targets.push_back(read_skl(gt_path));
  }
  if (data.inputs.empty())
    throw EmptyDataset("no input_*.skl files under " + dir);
  return data;
}

struct EpochStat {
  std::size_t epoch = 0;       // 1-based
  double train_loss_mm = 0.0;  // smoothed-MPJPE training loss
  double val_mpjpe_mm = -1.0;  // exact metric; negative when absent
};

namespace detail {

// stacks the selected sequences into [B,3,T,N]
inline Tensor stack_batch(const std::vector<PoseSequence>& seqs,
                          const std::vector<std::size_t>& idx) {
  const std::size_t T = seqs[idx[0]].frames, N = seqs[idx[0]].joints;
  Tensor x({idx.size(), 3, T, N});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const PoseSequence& s = seqs[idx[b]];
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t c = 0; c < 3; ++c)
          x.at(b, c, t, i) = s.at(t, i, c);
  }
  return x;
}

}  // namespace detail

// SGD with momentum on the smoothed MPJPE loss. Deterministic batching and
// dropout from hp.seed; a checkpoint is written each epoch when
// checkpoint_dir is non-empty.
inline std::vector<EpochStat> train(UGCNModel& model, const Dataset& data,
                                    const Hyperparams& hp,
                                    const std::string& checkpoint_dir = "",
                                    const Dataset* val = nullptr) {
  hp.validate();
  data.check(model.config().time_factor());
  const auto root = static_cast<std::size_t>(model.topology().root);

  // gather trainable tensors once; velocities align by index
  std::vector<Tensor*> params;
  model.visit_params([&](const std::string&, Tensor& t, bool trainable) {
    if (trainable) params.push_back(&t);
  });
  std::vector<std::vector<double>> velocity(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    velocity[i].assign(params[i]->size(), 0.0);

  const std::size_t d1 =
      static_cast<std::size_t>(hp.decay_at_1 * static_cast<double>(hp.epochs));
  const std::size_t d2 =
      static_cast<std::size_t>(hp.decay_at_2 * static_cast<double>(hp.epochs));

  Rng base(hp.seed);
  std::vector<EpochStat> history;
  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    double lr = hp.learning_rate;
    if (epoch >= d1) lr *= 0.1;
    if (epoch >= d2) lr *= 0.1;

    // seeded shuffle of sequence order
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle = base.split(1000 + epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle.next_index(i)]);

    double loss_sum = 0.0;
    std::size_t batch_count = 0;
    for (std::size_t start = 0; start < order.size();
         start += hp.batch_size) {
      const std::size_t end = std::min(start + hp.batch_size, order.size());
      std::vector<std::size_t> idx(order.begin() + static_cast<long>(start),
                                   order.begin() + static_cast<long>(end));
      Tensor xb = detail::stack_batch(data.inputs, idx);
      Tensor yb = detail::stack_batch(data.targets, idx);

      for (Tensor* p : params) {
        p->requires_grad = true;
        p->zero_grad();
      }
      Tape tp;
      Var x = tp.constant(std::move(xb));
      Rng drop = base.split(((epoch + 1) << 20) + batch_count);
      Var pred = model.forward(tp, x, Mode::kTrain, drop, true);
      Var loss = mpjpe_loss(tp, pred, yb, root);
      loss_sum += tp.val(loss).data[0];
      tp.backward(loss);

      if (hp.clip_norm > 0) {
        double sq = 0.0;
        for (const Tensor* p : params)
          for (std::size_t k = 0; k < p->size(); ++k)
            sq += p->grad[k] * p->grad[k];
        const double norm = std::sqrt(sq);
        if (norm > hp.clip_norm) {
          const double s = hp.clip_norm / norm;
          for (Tensor* p : params)
            for (std::size_t k = 0; k < p->size(); ++k) p->grad[k] *= s;
        }
      }

      for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor* p = params[i];
        for (std::size_t k = 0; k < p->size(); ++k) {
          velocity[i][k] =
              hp.momentum * velocity[i][k] - lr * p->grad[k];
          p->data[k] += velocity[i][k];
        }
      }
      ++batch_count;
    }

    EpochStat stat;
    stat.epoch = epoch + 1;
    stat.train_loss_mm = loss_sum / static_cast<double>(batch_count);
    if (val) {
      double v = 0.0;
      for (std::size_t i = 0; i < val->size(); ++i) {
        Tensor x = detail::stack_batch(val->inputs, {i});
        Tensor r = model.refine(x);
        // drop the batch axis
        Tensor r3 = Tensor::from({3, r.shape[2], r.shape[3]}, r.data);
        v += mpjpe(PoseSequence::from_tensor(r3), val->targets[i], root);
      }
      stat.val_mpjpe_mm = v / static_cast<double>(val->size());
    }
    history.push_back(stat);
    if (!checkpoint_dir.empty())
      model.save_weights(checkpoint_dir + "/checkpoint.ugcw");
  }
  return history;
}

inline void write_history(const std::vector<EpochStat>& history,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << "epoch,loss_mm,val_mpjpe_mm\n";
  char buf[96];
  for (const EpochStat& s : history) {
    if (s.val_mpjpe_mm >= 0)
      std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", s.epoch,
                    s.train_loss_mm, s.val_mpjpe_mm);
    else
      std::snprintf(buf, sizeof buf, "%zu,%.9g,\n", s.epoch, s.train_loss_mm);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// evaluation

struct GroupStat {
  std::string group;
  std::size_t count = 0;
  double baseline_mpjpe_mm = 0.0;  // input vs ground truth
  double refined_mpjpe_mm = 0.0;   // model output vs ground truth
};

struct EvalReport {
  std::vector<GroupStat> groups;
  std::size_t total_count = 0;
  double overall_baseline_mm = 0.0;
  double overall_refined_mm = 0.0;
};

// Per-group and overall MPJPE with an input-vs-ground-truth baseline column.
// Sequences may be sharded across threads; per-sequence results are reduced
// in index order so the report does not depend on the thread count.
inline EvalReport evaluate(UGCNModel& model, const Dataset& data,
                           std::size_t threads = 1) {
  data.check(model.config().time_factor());
  const auto root = static_cast<std::size_t>(model.topology().root);
  const std::size_t n = data.size();
  std::vector<double> base_err(n), ref_err(n);

  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      Tensor x = detail::stack_batch(data.inputs, {i});
      Tensor r = model.refine(x);
      Tensor r3 = Tensor::from({3, r.shape[2], r.shape[3]}, r.data);
      ref_err[i] =
          mpjpe(PoseSequence::from_tensor(r3), data.targets[i], root);
      base_err[i] = mpjpe(data.inputs[i], data.targets[i], root);
    }
  };
  if (threads <= 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t lo = t * chunk, hi = std::min(lo + chunk, n);
      if (lo < hi) pool.emplace_back(work, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  // group in first-appearance order
  EvalReport rep;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& g = data.targets[i].label;
    auto [it, inserted] = index.try_emplace(g, rep.groups.size());
    if (inserted) rep.groups.push_back(GroupStat{g, 0, 0.0, 0.0});
    GroupStat& gs = rep.groups[it->second];
    ++gs.count;
    gs.baseline_mpjpe_mm += base_err[i];
    gs.refined_mpjpe_mm += ref_err[i];
    rep.overall_baseline_mm += base_err[i];
    rep.overall_refined_mm += ref_err[i];
  }
  rep.total_count = n;
  for (GroupStat& g : rep.groups) {
    g.baseline_mpjpe_mm /= static_cast<double>(g.count);
    g.refined_mpjpe_mm /= static_cast<double>(g.count);
  }
  rep.overall_baseline_mm /= static_cast<double>(n);
  rep.overall_refined_mm /= static_cast<double>(n);
  return rep;
}

inline void write_report_csv(const EvalReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << "group,count,baseline_mpjpe_mm,refined_mpjpe_mm\n";
  char buf[160];
  for (const GroupStat& g : rep.groups) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.9g,%.9g\n", g.group.c_str(),
                  g.count, g.baseline_mpjpe_mm, g.refined_mpjpe_mm);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "overall,%zu,%.9g,%.9g\n", rep.total_count,
                rep.overall_baseline_mm, rep.overall_refined_mm);
  out << buf;
}

inline std::string format_report(const EvalReport& rep) {
  std::string s = "group            count  baseline(mm)  refined(mm)\n";
  char buf[160];
  for (const GroupStat& g : rep.groups) {
    std::snprintf(buf, sizeof buf, "%-16s %5zu  %12.3f  %11.3f\n",
                  g.group.c_str(), g.count, g.baseline_mpjpe_mm,
                  g.refined_mpjpe_mm);
    s += buf;
  }
  std::snprintf(buf, sizeof buf, "%-16s %5zu  %12.3f  %11.3f\n", "overall",
                rep.total_count, rep.overall_baseline_mm,
                rep.overall_refined_mm);
  s += buf;
  return s;
}

}  // namespace ugcn
