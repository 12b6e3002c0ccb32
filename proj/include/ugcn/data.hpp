#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ugcn/errors.hpp"
#include "ugcn/io_util.hpp"
#include "ugcn/kinematics.hpp"
#include "ugcn/rng.hpp"
#include "ugcn/tensor.hpp"
#include "ugcn/topology.hpp"

namespace ugcn {

// T x N x 3 joint positions in millimeters, frame-major, with an optional
// visibility mask (1 = observed) and an optional group/action label.
struct PoseSequence {
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::vector<double> positions;     // frames*joints*3
  std::vector<std::uint8_t> mask;    // frames*joints, empty when dense
  std::string label;

  PoseSequence() = default;
  PoseSequence(std::size_t t, std::size_t n)
      : frames(t), joints(n), positions(t * n * 3, 0.0) {}

  double& at(std::size_t t, std::size_t i, std::size_t c) {
    return positions[(t * joints + i) * 3 + c];
  }
  double at(std::size_t t, std::size_t i, std::size_t c) const {
    return positions[(t * joints + i) * 3 + c];
  }
  bool has_mask() const { return !mask.empty(); }
  bool visible(std::size_t t, std::size_t i) const {
    return mask.empty() || mask[t * joints + i] != 0;
  }

  Vec3 joint(std::size_t t, std::size_t i) const {
    return {at(t, i, 0), at(t, i, 1), at(t, i, 2)};
  }
  void set_joint(std::size_t t, std::size_t i, const Vec3& v) {
    at(t, i, 0) = v.x;
    at(t, i, 1) = v.y;
    at(t, i, 2) = v.z;
  }

  // network layout [3,T,N]
  Tensor to_tensor() const {
    Tensor x({3, frames, joints});
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t i = 0; i < joints; ++i)
        for (std::size_t c = 0; c < 3; ++c)
          x.at(c, t, i) = at(t, i, c);
    return x;
  }

  static PoseSequence from_tensor(const Tensor& x) {
    if (x.rank() != 3 || x.shape[0] != 3)
      throw ShapeMismatch("from_tensor: expected [3,T,N], got " +
                          x.shape_str());
    PoseSequence s(x.shape[1], x.shape[2]);
    for (std::size_t t = 0; t < s.frames; ++t)
      for (std::size_t i = 0; i < s.joints; ++i)
        for (std::size_t c = 0; c < 3; ++c) s.at(t, i, c) = x.at(c, t, i);
    return s;
  }
};

// ---------------------------------------------------------------------------
// synthetic motion: FK over smooth swing-only sinusoidal joint rotations

struct SynthConfig {
  std::size_t sequences = 8;
  std::size_t frames = 64;
  std::size_t harmonics = 3;
  double amp_min = 0.1;        // radians
  double amp_max = 0.5;        // radians; harmonics * amp_max must stay < pi
  double freq_min = 0.5;       // cycles per sequence
  double freq_max = 2.0;
  double root_amp_mm = 150.0;  // root translation sinusoid amplitude bound
  double noise_sigma = 20.0;   // mm, isotropic Gaussian on the input copy
  std::uint64_t seed = 1;
  std::string label = "synth";

  void validate(std::size_t time_factor = 16) const {
    if (sequences < 1) throw ConfigInvalid("sequences must be >= 1");
    if (frames < 1 || frames % time_factor != 0)
      throw ConfigInvalid("frames must be a positive multiple of " +
                          std::to_string(time_factor));
    if (noise_sigma < 0) throw ConfigInvalid("noise_sigma must be >= 0");
    if (harmonics < 1) throw ConfigInvalid("harmonics must be >= 1");
    if (amp_min < 0 || amp_max < amp_min)
      throw ConfigInvalid("amplitude bounds must satisfy 0 <= min <= max");
    if (freq_max < freq_min) throw ConfigInvalid("freq bounds out of order");
    if (static_cast<double>(harmonics) * amp_max >= 3.141592653589793)
      throw ConfigInvalid("harmonics * amp_max must stay below pi");
  }
};

struct SynthDataset {
  RestPose rest;
  std::vector<PoseSequence> inputs;        // ground truth + noise
  std::vector<PoseSequence> ground_truth;
};

// Rest pose drawn deterministically from the seed: random bone directions,
// bone lengths uniform in [100, 400] mm, root at the origin.
inline RestPose synth_rest_pose(const SkeletonTopology& topo, Rng rng) {
  const std::size_t n = topo.joint_count();
  RestPose rest;
  rest.positions.assign(n, Vec3{});
  for (std::size_t k : topo.topological_order()) {
    if (topo.parents[k] < 0) continue;
    const auto p = static_cast<std::size_t>(topo.parents[k]);
    Vec3 dir;
    do {
      dir = {rng.next_uniform(-1, 1), rng.next_uniform(-1, 1),
             rng.next_uniform(-1, 1)};
    } while (dir.norm() < 1e-3);
    const double len = rng.next_uniform(100.0, 400.0);
    rest.positions[k] = rest.positions[p] + dir.normalized() * len;
  }
  return rest;
}

inline SynthDataset generate_synthetic(const SynthConfig& cfg,
                                       const SkeletonTopology& topo) {
  cfg.validate();
  const std::size_t n = topo.joint_count();
  const std::size_t T = cfg.frames;
  Rng base(cfg.seed);
  SynthDataset ds;
  ds.rest = synth_rest_pose(topo, base.split(0));

  const double two_pi = 6.283185307179586476925286766559;
  for (std::size_t s = 0; s < cfg.sequences; ++s) {
    Rng seq_rng = base.split(1 + s);
    // per-joint swing axis and harmonic parameters
    std::vector<Vec3> axes(n);
    std::vector<std::vector<double>> amp(n), freq(n), phase(n);
    for (std::size_t k = 0; k < n; ++k) {
      if (topo.parents[k] < 0) continue;
      const Vec3 b = ds.rest.bone(topo, k).normalized();
      Vec3 r;
      Vec3 ax;
      do {
        r = {seq_rng.next_uniform(-1, 1), seq_rng.next_uniform(-1, 1),
             seq_rng.next_uniform(-1, 1)};
        ax = b.cross(r);
      } while (ax.norm() < 1e-3);
      axes[k] = ax.normalized();
      for (std::size_t h = 0; h < cfg.harmonics; ++h) {
        const double a = seq_rng.next_uniform(cfg.amp_min, cfg.amp_max);
        amp[k].push_back(seq_rng.next_uniform() < 0.5 ? a : -a);
        freq[k].push_back(seq_rng.next_uniform(cfg.freq_min, cfg.freq_max));
        phase[k].push_back(seq_rng.next_uniform(0.0, two_pi));
      }
    }
    Vec3 root_amp{seq_rng.next_uniform(-cfg.root_amp_mm, cfg.root_amp_mm),
                  seq_rng.next_uniform(-cfg.root_amp_mm, cfg.root_amp_mm),
                  seq_rng.next_uniform(-cfg.root_amp_mm, cfg.root_amp_mm)};
    Vec3 root_phase{seq_rng.next_uniform(0.0, two_pi),
                    seq_rng.next_uniform(0.0, two_pi),
                    seq_rng.next_uniform(0.0, two_pi)};

    PoseSequence gt(T, n);
    gt.label = cfg.label;
    for (std::size_t t = 0; t < T; ++t) {
      const double tau = static_cast<double>(t) / static_cast<double>(T);
      RotationSet rot;
      rot.rotations.assign(n, Mat3::identity());
      for (std::size_t k = 0; k < n; ++k) {
        if (topo.parents[k] < 0) continue;
        double theta = 0.0;
        for (std::size_t h = 0; h < cfg.harmonics; ++h)
          theta += amp[k][h] *
                   std::sin(two_pi * freq[k][h] * tau + phase[k][h]);
        rot.rotations[k] = axis_angle(axes[k], theta);
      }
      rot.root_translation = {
          root_amp.x * std::sin(two_pi * tau + root_phase.x),
          root_amp.y * std::sin(two_pi * tau + root_phase.y),
          root_amp.z * std::sin(two_pi * tau + root_phase.z)};
      const Pose q = forward_kinematics(topo, ds.rest, rot);
      for (std::size_t i = 0; i < n; ++i) gt.set_joint(t, i, q.positions[i]);
    }

    PoseSequence input = gt;
    if (cfg.noise_sigma > 0.0) {
      Rng noise = base.split(100000 + s);
      for (double& v : input.positions)
        v += cfg.noise_sigma * noise.next_normal();
    }
    ds.ground_truth.push_back(std::move(gt));
    ds.inputs.push_back(std::move(input));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// occlusion simulation: hide exactly floor(rate * T * (N-1)) non-root cells,
// chosen by a seeded shuffle; the root stays visible.

inline PoseSequence apply_occlusion(const PoseSequence& seq,
                                    const SkeletonTopology& topo, double rate,
                                    std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0)
    throw RateOutOfRange("occlusion rate " + std::to_string(rate));
  PoseSequence out = seq;
  out.mask.assign(seq.frames * seq.joints, 1);
  std::vector<std::size_t> cells;
  const auto root = static_cast<std::size_t>(topo.root);
  for (std::size_t t = 0; t < seq.frames; ++t)
    for (std::size_t i = 0; i < seq.joints; ++i)
      if (i != root) cells.push_back(t * seq.joints + i);
  const auto hide = static_cast<std::size_t>(
      rate * static_cast<double>(seq.frames * (seq.joints - 1)));
  Rng rng(seed);
  for (std::size_t i = cells.size(); i > 1; --i) {
    const std::size_t j = rng.next_index(i);
    std::swap(cells[i - 1], cells[j]);
  }
  for (std::size_t k = 0; k < hide; ++k) {
    const std::size_t cell = cells[k];
    out.mask[cell] = 0;
    out.positions[cell * 3 + 0] = 0.0;
    out.positions[cell * 3 + 1] = 0.0;
    out.positions[cell * 3 + 2] = 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// per-joint per-coordinate linear interpolation across hidden frames; leading
// and trailing gaps hold the nearest visible value.

inline PoseSequence interpolate_missing(const PoseSequence& seq) {
  if (!seq.has_mask()) return seq;
  PoseSequence out = seq;
  for (std::size_t i = 0; i < seq.joints; ++i) {
    std::vector<std::size_t> vis;
    for (std::size_t t = 0; t < seq.frames; ++t)
      if (seq.visible(t, i)) vis.push_back(t);
    if (vis.empty())
      throw JointNeverVisible("joint " + std::to_string(i) +
                              " has no visible frame");
    for (std::size_t t = 0; t < seq.frames; ++t) {
      if (seq.visible(t, i)) continue;
      // nearest visible frames before and after t
      auto it = std::lower_bound(vis.begin(), vis.end(), t);
      if (it == vis.begin()) {
        for (std::size_t c = 0; c < 3; ++c)
          out.at(t, i, c) = seq.at(vis.front(), i, c);
      } else if (it == vis.end()) {
        for (std::size_t c = 0; c < 3; ++c)
          out.at(t, i, c) = seq.at(vis.back(), i, c);
      } else {
        const std::size_t hi = *it;
        const std::size_t lo = *(it - 1);
        const double f = static_cast<double>(t - lo) /
                         static_cast<double>(hi - lo);
        for (std::size_t c = 0; c < 3; ++c)
          out.at(t, i, c) =
              (1.0 - f) * seq.at(lo, i, c) + f * seq.at(hi, i, c);
      }
    }
  }
  out.mask.clear();
  return out;
}

// ---------------------------------------------------------------------------
// .skl binary format, little-endian:
//   magic "SKL1", version u32 = 1, T u32, N u32, flags u8 (bit 0: mask),
//   label length u16 + bytes, positions T*N*3 float32 (frame, joint, xyz),
//   then mask T*N bytes when flagged.

inline void write_skl(const PoseSequence& seq, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out.write("SKL1", 4);
  detail::write_le<std::uint32_t>(out, 1);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(seq.frames));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(seq.joints));
  detail::write_le<std::uint8_t>(out, seq.has_mask() ? 1 : 0);
  detail::write_le<std::uint16_t>(out,
                                  static_cast<std::uint16_t>(seq.label.size()));
  out.write(seq.label.data(), static_cast<std::streamsize>(seq.label.size()));
  for (double v : seq.positions)
    detail::write_le<float>(out, static_cast<float>(v));
  if (seq.has_mask())
    out.write(reinterpret_cast<const char*>(seq.mask.data()),
              static_cast<std::streamsize>(seq.mask.size()));
  if (!out) throw FormatError("write failed for " + path);
}

inline PoseSequence read_skl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::uint64_t off = 0;
  char magic[4];
  detail::read_bytes(in, magic, 4, off, "magic");
  if (std::string(magic, 4) != "SKL1")
    throw FormatError("bad magic at offset 0");
  const auto version = detail::read_le<std::uint32_t>(in, off, "version");
  if (version != 1)
    throw FormatError("unsupported version " + std::to_string(version) +
                      " at offset 4");
  const auto T = detail::read_le<std::uint32_t>(in, off, "frame count");
  const auto N = detail::read_le<std::uint32_t>(in, off, "joint count");
  const auto flags = detail::read_le<std::uint8_t>(in, off, "flags");
  const auto llen = detail::read_le<std::uint16_t>(in, off, "label length");
  PoseSequence seq(T, N);
  seq.label.assign(llen, '\0');
  if (llen) detail::read_bytes(in, seq.label.data(), llen, off, "label");
  for (double& v : seq.positions)
    v = static_cast<double>(detail::read_le<float>(in, off, "position"));
  if (flags & 1) {
    seq.mask.assign(static_cast<std::size_t>(T) * N, 0);
    detail::read_bytes(in, reinterpret_cast<char*>(seq.mask.data()),
                       seq.mask.size(), off, "mask");
  }
  return seq;
}

// ---------------------------------------------------------------------------
// generic text-table importer: T rows of 3N columns (x,y,z per joint, mm),
// comma or whitespace separated

inline PoseSequence import_table(const std::string& path, std::size_t T,
                                 std::size_t N) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  PoseSequence seq(T, N);
  std::string line;
  std::size_t row = 0;
  while (row < T && std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    for (char& ch : line)
      if (ch == ',') ch = ' ';
    std::istringstream ls(line);
    for (std::size_t col = 0; col < 3 * N; ++col) {
      double v;
      if (!(ls >> v))
        throw ParseError("row " + std::to_string(row + 1) + " column " +
                         std::to_string(col + 1) + ": missing or bad number");
      seq.positions[row * N * 3 + col] = v;
    }
    double extra;
    if (ls >> extra)
      throw ParseError("row " + std::to_string(row + 1) + ": more than " +
                       std::to_string(3 * N) + " columns");
    ++row;
  }
  if (row < T)
    throw ParseError("expected " + std::to_string(T) + " rows, found " +
                     std::to_string(row));
  return seq;
}

inline void write_table(const PoseSequence& seq, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  char buf[64];
  for (std::size_t t = 0; t < seq.frames; ++t) {
    for (std::size_t c = 0; c < seq.joints * 3; ++c) {
      std::snprintf(buf, sizeof buf, "%.12g", seq.positions[t * seq.joints * 3 + c]);
      if (c) out << ",";
      out << buf;
    }
    out << "\n";
  }
}

}  // namespace ugcn
