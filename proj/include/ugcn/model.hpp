#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ugcn/io_util.hpp"
#include "ugcn/ops.hpp"
#include "ugcn/rng.hpp"
#include "ugcn/stgcn.hpp"
#include "ugcn/tensor.hpp"
#include "ugcn/topology.hpp"

namespace ugcn {

// Architectural hyperparameters of the 3D-UGCN: a nine-module down-sampling
// encoder (stride 2 at the even ordinals, x16 overall), a four-module
// up-sampling decoder and multi-scale fusion to a 3-channel refinement head.
struct ModelConfig {
  std::size_t joints = 17;
  std::size_t input_channels = 3;
  std::vector<std::size_t> encoder_channels = {16,  32,  64,  128, 256,
                                               256, 256, 256, 256};
  std::vector<std::size_t> stride2_ordinals = {2, 4, 6, 8};  // 1-indexed
  std::vector<std::size_t> decoder_channels = {128, 64, 32, 16};
  std::size_t temporal_kernel = 3;
  double dropout = 0.05;
  std::size_t fusion_width = 16;
  bool fusion_concat = false;
  bool residual_output = true;
  std::uint64_t seed = 1;

  // overall temporal down-sampling factor (product of encoder strides)
  std::size_t time_factor() const {
    std::size_t f = 1;
    for (std::size_t i = 0; i < stride2_ordinals.size(); ++i) f *= 2;
    return f;
  }

  void validate() const {
    if (joints < 1) throw ConfigInvalid("joints must be >= 1");
    if (input_channels != 3)
      throw ConfigInvalid("input_channels must be 3 (x,y,z)");
    if (encoder_channels.size() != 9)
      throw ConfigInvalid("encoder_channels must have 9 entries, got " +
                          std::to_string(encoder_channels.size()));
    if (decoder_channels.size() != 4)
      throw ConfigInvalid("decoder_channels must have 4 entries, got " +
                          std::to_string(decoder_channels.size()));
    if (time_factor() != 16)
      throw ConfigInvalid("product of encoder strides must be 16 (got " +
                          std::to_string(time_factor()) + ")");
    std::vector<std::size_t> ord = stride2_ordinals;
    std::sort(ord.begin(), ord.end());
    if (std::adjacent_find(ord.begin(), ord.end()) != ord.end())
      throw ConfigInvalid("stride2_ordinals must be distinct");
    for (std::size_t o : ord)
      if (o < 1 || o > 9 || o % 2 != 0)
        throw ConfigInvalid("stride2 ordinal " + std::to_string(o) +
                            " must be even and in 1..9");
    if (temporal_kernel % 2 == 0)
      throw ConfigInvalid("temporal_kernel must be odd");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigInvalid("dropout must be in [0,1)");
    for (std::size_t c : encoder_channels)
      if (c < 1) throw ConfigInvalid("encoder channel must be >= 1");
    for (std::size_t c : decoder_channels)
      if (c < 1) throw ConfigInvalid("decoder channel must be >= 1");
    if (fusion_width < 1) throw ConfigInvalid("fusion_width must be >= 1");
  }
};

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += " ";
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace detail

// Key/value text form used by config files and manifests.
inline std::string write_model_config(const ModelConfig& cfg) {
  std::ostringstream out;
  out << "joints " << cfg.joints << "\n";
  out << "input_channels " << cfg.input_channels << "\n";
  out << "encoder_channels " << detail::join_sizes(cfg.encoder_channels)
      << "\n";
  out << "stride2_ordinals " << detail::join_sizes(cfg.stride2_ordinals)
      << "\n";
  out << "decoder_channels " << detail::join_sizes(cfg.decoder_channels)
      << "\n";
  out << "temporal_kernel " << cfg.temporal_kernel << "\n";
  out << "dropout " << cfg.dropout << "\n";
  out << "fusion_width " << cfg.fusion_width << "\n";
  out << "fusion_concat " << (cfg.fusion_concat ? 1 : 0) << "\n";
  out << "residual_output " << (cfg.residual_output ? 1 : 0) << "\n";
  out << "seed " << cfg.seed << "\n";
  return out.str();
}

inline ModelConfig parse_model_config(std::istream& in) {
  ModelConfig cfg;
  std::string line;
  int lineno = 0;
  auto sizes = [](std::istringstream& ls) {
    std::vector<std::size_t> v;
    std::size_t x;
    while (ls >> x) v.push_back(x);
    return v;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "joints") ls >> cfg.joints;
    else if (key == "input_channels") ls >> cfg.input_channels;
    else if (key == "encoder_channels") cfg.encoder_channels = sizes(ls);
    else if (key == "stride2_ordinals") cfg.stride2_ordinals = sizes(ls);
    else if (key == "decoder_channels") cfg.decoder_channels = sizes(ls);
    else if (key == "temporal_kernel") ls >> cfg.temporal_kernel;
    else if (key == "dropout") ls >> cfg.dropout;
    else if (key == "fusion_width") ls >> cfg.fusion_width;
    else if (key == "fusion_concat") { int b = 0; ls >> b; cfg.fusion_concat = b != 0; }
    else if (key == "residual_output") { int b = 0; ls >> b; cfg.residual_output = b != 0; }
    else if (key == "seed") ls >> cfg.seed;
    else
      throw ParseError("config line " + std::to_string(lineno) +
                       ": unknown key '" + key + "'");
    if (ls.fail() && !ls.eof())
      throw ParseError("config line " + std::to_string(lineno) +
                       ": bad value for '" + key + "'");
  }
  return cfg;
}

inline ModelConfig read_model_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config file " + path);
  return parse_model_config(in);
}

class UGCNModel {
 public:
  UGCNModel(ModelConfig cfg, SkeletonTopology topo)
      : cfg_(std::move(cfg)), topo_(std::move(topo)) {
    cfg_.validate();
    if (topo_.joint_count() != cfg_.joints)
      throw ConfigInvalid("topology has " +
                          std::to_string(topo_.joint_count()) +
                          " joints, config says " + std::to_string(cfg_.joints));
    adj_ = spatial_adjacency(topo_);
    Rng init(cfg_.seed);

    in_bn_gamma_ = Tensor({cfg_.input_channels}, 1.0);
    in_bn_beta_ = Tensor({cfg_.input_channels});
    in_bn_ = BatchNormState(cfg_.input_channels);

    std::size_t cin = cfg_.input_channels;
    for (std::size_t i = 0; i < 9; ++i) {
      const std::size_t cout = cfg_.encoder_channels[i];
      const std::size_t stride = is_stride2(i + 1) ? 2 : 1;
      encoder_.emplace_back(cin, cout, cfg_.temporal_kernel, stride,
                            cfg_.dropout, init.split(1000 + i));
      cin = cout;
    }
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t cout = cfg_.decoder_channels[i];
      decoder_.emplace_back(cin, cout, cfg_.temporal_kernel, 1, cfg_.dropout,
                            init.split(2000 + i));
      cin = cout;
    }
    // skip projections: encoder feature at the matching scale -> decoder width
    const auto enc_skip = encoder_skip_channels();
    auto uniform_fill = [&](Tensor& t, std::size_t fan_in, Rng r) {
      const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double& v : t.data) v = r.next_uniform(-limit, limit);
    };
    for (std::size_t i = 0; i < 4; ++i) {
      skip_w_[i] = Tensor({cfg_.decoder_channels[i], enc_skip[i]});
      uniform_fill(skip_w_[i], enc_skip[i], init.split(3000 + i));
      fuse_w_[i] = Tensor({cfg_.fusion_width, cfg_.decoder_channels[i]});
      uniform_fill(fuse_w_[i], cfg_.decoder_channels[i], init.split(4000 + i));
    }
    const std::size_t head_in =
        cfg_.fusion_concat ? 4 * cfg_.fusion_width : cfg_.fusion_width;
    head_w_ = Tensor({3, head_in});
    uniform_fill(head_w_, head_in, init.split(5000));
    head_b_ = Tensor({3});
  }

  const ModelConfig& config() const { return cfg_; }
  const SkeletonTopology& topology() const { return topo_; }
  const PartitionedAdjacency& adjacency() const { return adj_; }

  std::size_t param_count() {
    std::size_t n = 0;
    visit_params([&](const std::string&, Tensor& t, bool trainable) {
      if (trainable) n += t.size();
    });
    return n;
  }

  // x: [B,3,T,N], 16 | T. encoder_scales, when given, receives the time
  // length after each of the nine encoder blocks.
  Var forward(Tape& tp, Var x, Mode mode, Rng dropout_stream = Rng(0),
              bool update_running = true,
              std::vector<std::size_t>* encoder_scales = nullptr) {
    const Tensor& xv = tp.val(x);
    if (xv.rank() != 4 || xv.shape[1] != cfg_.input_channels)
      throw ShapeMismatch("forward: expected [B,3,T,N], got " +
                          xv.shape_str());
    const std::size_t T = xv.shape[2];
    if (T % cfg_.time_factor() != 0)
      throw BadTemporalLength("T=" + std::to_string(T) +
                              " is not divisible by " +
                              std::to_string(cfg_.time_factor()));
    if (xv.shape[3] != cfg_.joints)
      throw ShapeMismatch("forward: joints " + std::to_string(xv.shape[3]) +
                          " vs config " + std::to_string(cfg_.joints));

    Var y = batch_norm(tp, x, tp.leaf(in_bn_gamma_), tp.leaf(in_bn_beta_),
                       in_bn_, mode, update_running);

    // encoder; remember the latest feature at each time scale for skips
    std::map<std::size_t, Var> by_scale;
    std::size_t cur_t = T;
    by_scale[cur_t] = y;
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      y = encoder_[i].forward(tp, y, adj_, mode,
                              dropout_stream.split(10 + i), update_running);
      cur_t = tp.val(y).shape[2];
      by_scale[cur_t] = y;
      if (encoder_scales) encoder_scales->push_back(cur_t);
    }

    // decoder: block, x2 resample, add projected encoder feature
    std::vector<Var> fusion_inputs;
    Var d = y;
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      d = decoder_[i].forward(tp, d, adj_, mode, dropout_stream.split(50 + i),
                              update_running);
      cur_t *= 2;
      d = time_resample(tp, d, cur_t);
      auto it = by_scale.find(cur_t);
      if (it == by_scale.end())
        throw ShapeMismatch("no encoder feature at time scale " +
                            std::to_string(cur_t));
      Var skip = pointwise_conv(tp, it->second, tp.leaf(skip_w_[i]));
      d = add(tp, d, skip);
      fusion_inputs.push_back(d);
    }

    // fusion: resample every scale to T, project, combine
    std::vector<Var> fused;
    for (std::size_t i = 0; i < fusion_inputs.size(); ++i) {
      Var f = time_resample(tp, fusion_inputs[i], T);
      fused.push_back(pointwise_conv(tp, f, tp.leaf(fuse_w_[i])));
    }
    Var emb;
    if (cfg_.fusion_concat) {
      emb = concat_channels(tp, fused);
    } else {
      emb = fused[0];
      for (std::size_t i = 1; i < fused.size(); ++i)
        emb = add(tp, emb, fused[i]);
    }
    Var out = pointwise_conv(tp, emb, tp.leaf(head_w_), tp.leaf(head_b_));
    if (cfg_.residual_output) {
      // Denormalize the correction back to coordinate scale with the same
      // per-channel statistics the input norm uses (batch std in training,
      // running std in eval); treated as a constant like the running stats.
      // Without this the head works against normalized O(1) features and
      // millimeter-scale corrections take thousands of steps to grow.
      const Tensor& xcur = tp.val(x);  // xv may dangle after tape growth
      const std::size_t C = cfg_.input_channels;
      Tensor scale({C, C});
      const std::size_t tn = T * cfg_.joints;
      const std::size_t m = xcur.shape[0] * tn;
      for (std::size_t c = 0; c < C; ++c) {
        double var = 0.0;
        if (mode == Mode::kTrain) {
          double mean = 0.0;
          for (std::size_t b = 0; b < xcur.shape[0]; ++b) {
            const double* row = xcur.data.data() + (b * C + c) * tn;
            for (std::size_t i = 0; i < tn; ++i) mean += row[i];
          }
          mean /= static_cast<double>(m);
          for (std::size_t b = 0; b < xcur.shape[0]; ++b) {
            const double* row = xcur.data.data() + (b * C + c) * tn;
            for (std::size_t i = 0; i < tn; ++i) {
              const double d = row[i] - mean;
              var += d * d;
            }
          }
          var /= static_cast<double>(m);
        } else {
          var = in_bn_.running_var.data[c];
        }
        scale.at(c, c) = std::sqrt(var + in_bn_.epsilon);
      }
      out = pointwise_conv(tp, out, tp.constant(std::move(scale)));
      out = add(tp, out, x);
    }
    return out;
  }

  // Eval-mode forward without gradients.
  Tensor refine(const Tensor& x) {
    Tape tp;
    Tensor input = x;
    input.requires_grad = false;
    Var xv = tp.constant(std::move(input));
    Var out = forward(tp, xv, Mode::kEval, Rng(0), false);
    return tp.val(out);
  }

  template <typename F>
  void visit_params(F&& fn) {
    fn("in_bn.gamma", in_bn_gamma_, true);
    fn("in_bn.beta", in_bn_beta_, true);
    fn("in_bn.rmean", in_bn_.running_mean, false);
    fn("in_bn.rvar", in_bn_.running_var, false);
    for (std::size_t i = 0; i < encoder_.size(); ++i)
      encoder_[i].visit_params("enc" + std::to_string(i + 1), fn);
    for (std::size_t i = 0; i < decoder_.size(); ++i)
      decoder_[i].visit_params("dec" + std::to_string(i + 1), fn);
    for (std::size_t i = 0; i < 4; ++i) {
      fn("skip" + std::to_string(i + 1) + ".w", skip_w_[i], true);
      fn("fuse" + std::to_string(i + 1) + ".w", fuse_w_[i], true);
    }
    fn("head.w", head_w_, true);
    fn("head.b", head_b_, true);
  }

  // Zeroing the head makes residual forward the identity on coordinates.
  void zero_head() {
    std::fill(head_w_.data.begin(), head_w_.data.end(), 0.0);
    std::fill(head_b_.data.begin(), head_b_.data.end(), 0.0);
  }

  void save_weights(const std::string& path) {
    std::vector<std::pair<std::string, const Tensor*>> entries;
    visit_params([&](const std::string& name, Tensor& t, bool) {
      entries.emplace_back(name, &t);
    });
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out.write("UGCW", 4);
    detail::write_le<std::uint32_t>(out, 1);
    detail::write_le<std::uint32_t>(out,
                                    static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
      detail::write_le<std::uint16_t>(out,
                                      static_cast<std::uint16_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::write_le<std::uint8_t>(out,
                                     static_cast<std::uint8_t>(t->rank()));
      for (std::size_t e : t->shape)
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
      for (double v : t->data) detail::write_le<double>(out, v);
    }
    if (!out) throw FormatError("write failed for " + path);
  }

  void load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::uint64_t off = 0;
    char magic[4];
    detail::read_bytes(in, magic, 4, off, "magic");
    if (std::string(magic, 4) != "UGCW")
      throw FormatError("bad magic at offset 0");
    const auto version = detail::read_le<std::uint32_t>(in, off, "version");
    if (version != 1)
      throw FormatError("unsupported version " + std::to_string(version));
    const auto count = detail::read_le<std::uint32_t>(in, off, "tensor count");
    std::map<std::string, Tensor> loaded;
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto nlen = detail::read_le<std::uint16_t>(in, off, "name length");
      std::string name(nlen, '\0');
      detail::read_bytes(in, name.data(), nlen, off, "name");
      const auto rank = detail::read_le<std::uint8_t>(in, off, "rank");
      std::vector<std::size_t> shape;
      for (std::uint8_t r = 0; r < rank; ++r)
        shape.push_back(detail::read_le<std::uint32_t>(in, off, "extent"));
      Tensor t(shape);
      for (double& v : t.data) v = detail::read_le<double>(in, off, "value");
      loaded.emplace(std::move(name), std::move(t));
    }
    // apply in name order so the first mismatch reported is deterministic
    std::vector<std::pair<std::string, Tensor*>> targets;
    visit_params([&](const std::string& name, Tensor& t, bool) {
      targets.emplace_back(name, &t);
    });
    std::sort(targets.begin(), targets.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [name, t] : targets) {
      auto it = loaded.find(name);
      if (it == loaded.end())
        throw ConfigMismatch("tensor '" + name + "' missing from " + path);
      if (it->second.shape != t->shape)
        throw ConfigMismatch("tensor '" + name + "' has shape " +
                             it->second.shape_str() + ", expected " +
                             t->shape_str());
      t->data = std::move(it->second.data);
      loaded.erase(it);
    }
    if (!loaded.empty())
      throw ConfigMismatch("unexpected tensor '" + loaded.begin()->first +
                           "' in " + path);
  }

 private:
  bool is_stride2(std::size_t ordinal) const {
    return std::find(cfg_.stride2_ordinals.begin(),
                     cfg_.stride2_ordinals.end(),
                     ordinal) != cfg_.stride2_ordinals.end();
  }

  // encoder channel width feeding each decoder skip (scales T/8,T/4,T/2,T)
  std::vector<std::size_t> encoder_skip_channels() const {
    // time length after each encoder block, then the channel of the last
    // block at each scale; the input-BN feature covers scale T
    std::vector<std::size_t> chan(4, 0);
    std::size_t cur = 16;  // work in units of T/16
    std::map<std::size_t, std::size_t> by_scale;  // scale units -> channels
    by_scale[16] = cfg_.input_channels;
    std::size_t t = 16;
    for (std::size_t i = 0; i < 9; ++i) {
      if (is_stride2(i + 1)) t /= 2;
      by_scale[t] = cfg_.encoder_channels[i];
    }
    (void)cur;
    // decoder steps reach scales 2,4,8,16 (in T/16 units)
    const std::size_t want[4] = {2, 4, 8, 16};
    for (std::size_t i = 0; i < 4; ++i) {
      auto it = by_scale.find(want[i]);
      if (it == by_scale.end())
        throw ConfigInvalid("no encoder feature at 1/" +
                            std::to_string(16 / want[i]) + " time scale");
      chan[i] = it->second;
    }
    return chan;
  }

  ModelConfig cfg_;
  SkeletonTopology topo_;
  PartitionedAdjacency adj_;

  Tensor in_bn_gamma_, in_bn_beta_;
  BatchNormState in_bn_;
  std::vector<STGCNBlock> encoder_;
  std::vector<STGCNBlock> decoder_;
  std::array<Tensor, 4> skip_w_;
  std::array<Tensor, 4> fuse_w_;
  Tensor head_w_, head_b_;
};

// Laptop-sized channel schedule for desk-scale runs; same shape laws as the
// full model.
inline ModelConfig desk_model_config(std::size_t joints = 17) {
  ModelConfig cfg;
  cfg.joints = joints;
  cfg.encoder_channels = {8, 16, 16, 32, 32, 32, 32, 32, 32};
  cfg.decoder_channels = {32, 16, 16, 8};
  cfg.fusion_width = 8;
  cfg.dropout = 0.0;  // desk runs overfit tiny datasets on purpose
  return cfg;
}

inline UGCNModel build_model(const ModelConfig& cfg,
                             const SkeletonTopology& topo) {
  return UGCNModel(cfg, topo);
}

inline UGCNModel load_weights(const std::string& path, const ModelConfig& cfg,
                              const SkeletonTopology& topo) {
  UGCNModel model(cfg, topo);
  model.load_weights(path);
  return model;
}

}  // namespace ugcn
