// Command-line entry point tying every module into reproducible workflows.
// Exit codes: 0 success, 1 validation error, 2 I/O or format error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ugcn/data.hpp"
#include "ugcn/gradcheck.hpp"
#include "ugcn/kin_io.hpp"
#include "ugcn/kinematics.hpp"
#include "ugcn/manifest.hpp"
#include "ugcn/model.hpp"
#include "ugcn/ops.hpp"
#include "ugcn/stgcn.hpp"
#include "ugcn/topology.hpp"
#include "ugcn/train.hpp"

namespace fs = std::filesystem;
using namespace ugcn;

namespace {

SkeletonTopology load_topology(const std::string& path) {
  if (path.empty()) return h36m17_topology();
  return read_topology_file(path);
}

std::string default_config_path(const std::string& weights) {
  return (fs::path(weights).parent_path() / "config.cfg").string();
}

ModelConfig resolve_model_config(const std::string& config_path,
                                 const std::string& profile,
                                 std::size_t joints) {
  if (!config_path.empty()) return read_model_config_file(config_path);
  if (profile == "paper") {
    ModelConfig cfg;
    cfg.joints = joints;
    return cfg;
  }
  return desk_model_config(joints);
}

std::string seq_path(const std::string& dir, const char* stem, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "/%s_%04zu.skl", stem, i);
  return dir + buf;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& out_dir, std::size_t sequences,
              std::size_t frames, std::uint64_t seed, double sigma,
              double occlude, const std::string& label,
              const std::string& topology_path) {
  WallClock clock;
  SkeletonTopology topo = load_topology(topology_path);
  SynthConfig cfg;
  cfg.sequences = sequences;
  cfg.frames = frames;
  cfg.noise_sigma = sigma;
  cfg.seed = seed;
  cfg.label = label;
  SynthDataset ds = generate_synthetic(cfg, topo);

  fs::create_directories(out_dir);
  RunManifest man;
  man.command = "synth";
  man.seed = seed;
  man.config = {{"sequences", std::to_string(sequences)},
                {"frames", std::to_string(frames)},
                {"sigma", std::to_string(sigma)},
                {"occlude", std::to_string(occlude)},
                {"label", label},
                {"topology", topology_path.empty() ? "h36m17" : topology_path}};
  for (std::size_t i = 0; i < sequences; ++i) {
    PoseSequence input = ds.inputs[i];
    if (occlude > 0.0) {
      const std::uint64_t cell_seed = Rng::mix(seed ^ (0xcc00u + i));
      PoseSequence occ = apply_occlusion(input, topo, occlude, cell_seed);
      const std::string occ_path = seq_path(out_dir, "occ", i);
      write_skl(occ, occ_path);
      man.outputs.push_back(occ_path);
      input = interpolate_missing(occ);
    }
    const std::string in_path = seq_path(out_dir, "input", i);
    const std::string gt_path = seq_path(out_dir, "gt", i);
    write_skl(input, in_path);
    write_skl(ds.ground_truth[i], gt_path);
    man.outputs.push_back(in_path);
    man.outputs.push_back(gt_path);
  }
  man.duration_seconds = clock.seconds();
  man.write(out_dir + "/manifest.json");
  std::cout << "wrote " << sequences << " sequence pairs to " << out_dir
            << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out_dir,
              const std::string& config_path, const std::string& val_dir,
              const std::string& profile, const std::string& topology_path,
              std::size_t epochs, double lr, std::size_t batch,
              std::uint64_t seed, bool epochs_set, bool lr_set,
              bool batch_set) {
  WallClock clock;
  SkeletonTopology topo = load_topology(topology_path);
  Dataset data = load_dataset_dir(data_dir);
  ModelConfig mcfg =
      resolve_model_config(config_path, profile, topo.joint_count());
  mcfg.joints = topo.joint_count();

  Hyperparams hp = profile == "paper" ? Hyperparams::paper_profile()
                                      : Hyperparams::desk_profile();
  if (epochs_set) hp.epochs = epochs;
  if (lr_set) hp.learning_rate = lr;
  if (batch_set) hp.batch_size = batch;
  hp.seed = seed;
  mcfg.seed = seed;

  UGCNModel model(mcfg, topo);
  std::cout << "model parameters: " << model.param_count() << "\n";

  fs::create_directories(out_dir);
  Dataset val;
  const Dataset* val_ptr = nullptr;
  if (!val_dir.empty()) {
    val = load_dataset_dir(val_dir);
    val_ptr = &val;
  }
  auto history = train(model, data, hp, out_dir, val_ptr);
  model.save_weights(out_dir + "/final.ugcw");
  write_history(history, out_dir + "/history.csv");
  {
    std::ofstream cf(out_dir + "/config.cfg");
    cf << write_model_config(mcfg);
  }
  RunManifest man;
  man.command = "train";
  man.seed = seed;
  man.config = {{"data", data_dir},
                {"profile", profile},
                {"epochs", std::to_string(hp.epochs)},
                {"lr", std::to_string(hp.learning_rate)},
                {"batch", std::to_string(hp.batch_size)},
                {"config", config_path},
                {"topology", topology_path.empty() ? "h36m17" : topology_path}};
  man.inputs = {data_dir};
  man.outputs = {out_dir + "/final.ugcw", out_dir + "/history.csv",
                 out_dir + "/config.cfg"};
  man.duration_seconds = clock.seconds();
  man.write(out_dir + "/manifest.json");
  std::cout << "epoch 1 loss " << history.front().train_loss_mm
            << " mm, final loss " << history.back().train_loss_mm << " mm\n";
  return 0;
}

int cmd_refine(const std::string& weights, const std::string& in_path,
               const std::string& out_path, std::string config_path,
               const std::string& topology_path) {
  WallClock clock;
  SkeletonTopology topo = load_topology(topology_path);
  if (config_path.empty()) config_path = default_config_path(weights);
  ModelConfig mcfg = read_model_config_file(config_path);
  UGCNModel model = load_weights(weights, mcfg, topo);
  PoseSequence seq = read_skl(in_path);
  if (seq.has_mask()) seq = interpolate_missing(seq);
  Tensor x = seq.to_tensor();
  Tensor xb = Tensor::from({1, 3, seq.frames, seq.joints}, x.data);
  Tensor r = model.refine(xb);
  PoseSequence out = PoseSequence::from_tensor(
      Tensor::from({3, seq.frames, seq.joints}, r.data));
  out.label = seq.label;
  write_skl(out, out_path);
  RunManifest man;
  man.command = "refine";
  man.config = {{"weights", weights}, {"config", config_path}};
  man.inputs = {in_path, weights};
  man.outputs = {out_path};
  man.duration_seconds = clock.seconds();
  man.write(out_path + ".manifest.json");
  return 0;
}

int cmd_eval(const std::string& weights, const std::string& data_dir,
             const std::string& report_path, std::string config_path,
             const std::string& topology_path, const std::string& group_by,
             std::size_t threads) {
  WallClock clock;
  if (group_by != "label")
    throw ConfigInvalid("group-by supports only 'label'");
  SkeletonTopology topo = load_topology(topology_path);
  if (config_path.empty()) config_path = default_config_path(weights);
  ModelConfig mcfg = read_model_config_file(config_path);
  UGCNModel model = load_weights(weights, mcfg, topo);
  Dataset data = load_dataset_dir(data_dir);
  EvalReport rep = evaluate(model, data, threads);
  write_report_csv(rep, report_path);
  std::cout << format_report(rep);
  RunManifest man;
  man.command = "eval";
  man.config = {{"weights", weights},
                {"data", data_dir},
                {"group_by", group_by},
                {"threads", std::to_string(threads)}};
  man.inputs = {weights, data_dir};
  man.outputs = {report_path};
  man.duration_seconds = clock.seconds();
  man.write(report_path + ".manifest.json");
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  Rng rng(seed);
  auto rand_tensor = [&](std::vector<std::size_t> shape, Rng r) {
    Tensor t(shape);
    for (double& v : t.data) v = r.next_uniform(-1.0, 1.0);
    return t;
  };
  struct Check {
    const char* name;
    double error;
    double threshold;
  };
  std::vector<Check> checks;

  {
    std::vector<Tensor> in = {rand_tensor({4, 5}, rng.split(1)),
                              rand_tensor({5, 3}, rng.split(2))};
    double e = grad_check(
        [](Tape& tp, std::vector<Tensor>& xs) {
          return sum_all(tp, matmul(tp, tp.leaf(xs[0]), tp.leaf(xs[1])));
        },
        in);
    checks.push_back({"matmul", e, 1e-6});
  }
  {
    std::vector<Tensor> in = {rand_tensor({2, 3, 8, 4}, rng.split(3)),
                              rand_tensor({5, 3, 3}, rng.split(4)),
                              rand_tensor({5}, rng.split(5))};
    double e = grad_check(
        [](Tape& tp, std::vector<Tensor>& xs) {
          return sum_all(tp, temporal_conv(tp, tp.leaf(xs[0]), tp.leaf(xs[1]),
                                           tp.leaf(xs[2]), 2));
        },
        in);
    checks.push_back({"temporal_conv", e, 1e-4});
  }
  {
    std::vector<Tensor> in = {rand_tensor({2, 4, 6, 3}, rng.split(6)),
                              rand_tensor({4}, rng.split(7)),
                              rand_tensor({4}, rng.split(8))};
    // a plain sum of squares is invariant to the input after normalization,
    // so weight the output elementwise to keep the input gradient alive
    Tensor w = rand_tensor({2, 4, 6, 3}, rng.split(99));
    double e = grad_check(
        [&w](Tape& tp, std::vector<Tensor>& xs) {
          BatchNormState st(4);
          Var y = batch_norm(tp, tp.leaf(xs[0]), tp.leaf(xs[1]),
                             tp.leaf(xs[2]), st, Mode::kTrain, false);
          return sum_all(tp, mul(tp, y, tp.constant(w)));
        },
        in);
    checks.push_back({"batch_norm", e, 1e-4});
  }
  {
    SkeletonTopology topo = build_topology({-1, 0, 1, 1});
    PartitionedAdjacency adj = spatial_adjacency(topo);
    std::vector<Tensor> in = {rand_tensor({3, 5, 4}, rng.split(9)),
                              rand_tensor({2, 3}, rng.split(10)),
                              rand_tensor({2, 3}, rng.split(11)),
                              rand_tensor({2, 3}, rng.split(12))};
    double e = grad_check(
        [&adj](Tape& tp, std::vector<Tensor>& xs) {
          std::array<Var, 3> w{tp.leaf(xs[1]), tp.leaf(xs[2]),
                               tp.leaf(xs[3])};
          Var y = spatial_graph_conv(tp, tp.leaf(xs[0]), adj, w);
          return sum_all(tp, mul(tp, y, y));
        },
        in);
    checks.push_back({"spatial_graph_conv", e, 1e-4});
  }
  {
    SkeletonTopology topo = build_topology({-1, 0, 0});
    PartitionedAdjacency adj = spatial_adjacency(topo);
    STGCNBlock block(3, 4, 3, 2, 0.0, Rng(seed).split(77));
    std::vector<Tensor> in = {rand_tensor({1, 3, 8, 3}, rng.split(13))};
    double e = grad_check(
        [&](Tape& tp, std::vector<Tensor>& xs) {
          Var y = block.forward(tp, tp.leaf(xs[0]), adj, Mode::kTrain,
                                Rng(1), false);
          return sum_all(tp, mul(tp, y, y));
        },
        in);
    checks.push_back({"stgcn_block", e, 1e-4});
  }

  bool ok = true;
  for (const Check& c : checks) {
    const bool pass = c.error < c.threshold;
    ok = ok && pass;
    std::printf("%-20s max rel error %.3e  (threshold %.0e)  %s\n", c.name,
                c.error, c.threshold, pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

int cmd_graph_dump(const std::string& topology_path,
                   const std::string& out_path) {
  SkeletonTopology topo = load_topology(topology_path);
  const std::string text = graph_dump(spatial_adjacency(topo));
  if (out_path.empty()) {
    std::cout << text;
  } else {
    std::ofstream out(out_path);
    if (!out) throw FormatError("cannot open " + out_path + " for writing");
    out << text;
  }
  return 0;
}

int cmd_kin_fk(const std::string& topology_path, const std::string& rest_path,
               const std::string& rot_path, const std::string& out_path) {
  SkeletonTopology topo = load_topology(topology_path);
  Pose rest_pose = read_pose_file(rest_path);
  RestPose rest{rest_pose.positions};
  RotationSet rot = read_rotation_file(rot_path);
  Pose q = forward_kinematics(topo, rest, rot);
  write_pose_file(q, out_path);
  return 0;
}

int cmd_kin_ik(const std::string& topology_path, const std::string& rest_path,
               const std::string& pose_path, const std::string& out_path) {
  SkeletonTopology topo = load_topology(topology_path);
  Pose rest_pose = read_pose_file(rest_path);
  RestPose rest{rest_pose.positions};
  Pose observed = read_pose_file(pose_path);
  RotationSet rot = inverse_kinematics_swing(topo, rest, observed);
  write_rotation_file(rot, out_path);
  return 0;
}

int cmd_import(const std::string& in_path, std::size_t frames,
               std::size_t joints, const std::string& label,
               const std::string& out_path) {
  PoseSequence seq = import_table(in_path, frames, joints);
  seq.label = label;
  write_skl(seq, out_path);
  RunManifest man;
  man.command = "import";
  man.config = {{"frames", std::to_string(frames)},
                {"joints", std::to_string(joints)}};
  man.inputs = {in_path};
  man.outputs = {out_path};
  man.write(out_path + ".manifest.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D skeleton sequence refinement toolkit"};
  app.require_subcommand(1);

  std::string topology_path;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out, synth_label = "synth";
  std::size_t synth_sequences = 8, synth_frames = 64;
  double synth_sigma = 20.0, synth_occlude = 0.0;
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--sequences", synth_sequences);
  synth->add_option("--frames", synth_frames);
  synth->add_option("--seed", seed);
  synth->add_option("--sigma", synth_sigma);
  synth->add_option("--occlude", synth_occlude);
  synth->add_option("--label", synth_label);
  synth->add_option("--topology", topology_path);

  // train
  auto* tr = app.add_subcommand("train", "train a refinement model");
  std::string tr_data, tr_out, tr_config, tr_val, profile = "desk";
  std::size_t tr_epochs = 0, tr_batch = 0;
  double tr_lr = 0.0;
  tr->add_option("--data", tr_data)->required();
  tr->add_option("--out", tr_out)->required();
  tr->add_option("--config", tr_config);
  tr->add_option("--val-data", tr_val);
  tr->add_option("--profile", profile)
      ->check(CLI::IsMember({"desk", "paper"}));
  auto* opt_epochs = tr->add_option("--epochs", tr_epochs);
  auto* opt_lr = tr->add_option("--lr", tr_lr);
  auto* opt_batch = tr->add_option("--batch", tr_batch);
  tr->add_option("--seed", seed);
  tr->add_option("--topology", topology_path);
  tr->add_option("--threads", threads);

  // refine
  auto* rf = app.add_subcommand("refine", "refine one pose sequence");
  std::string rf_weights, rf_in, rf_out, rf_config;
  rf->add_option("--weights", rf_weights)->required();
  rf->add_option("--in", rf_in)->required();
  rf->add_option("--out", rf_out)->required();
  rf->add_option("--config", rf_config);
  rf->add_option("--topology", topology_path);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a model on a dataset");
  std::string ev_weights, ev_data, ev_report, ev_config, group_by = "label";
  ev->add_option("--weights", ev_weights)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--report", ev_report)->required();
  ev->add_option("--config", ev_config);
  ev->add_option("--group-by", group_by);
  ev->add_option("--threads", threads);
  ev->add_option("--topology", topology_path);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference audit");
  gc->add_option("--seed", seed);

  // graph-dump
  auto* gd = app.add_subcommand("graph-dump", "print partitioned adjacency");
  std::string gd_out;
  gd->add_option("--topology", topology_path);
  gd->add_option("--out", gd_out);

  // kin
  auto* kin = app.add_subcommand("kin", "kinematics utilities");
  kin->require_subcommand(1);
  std::string kin_rest, kin_rot, kin_pose, kin_out;
  auto* fk = kin->add_subcommand("fk", "forward kinematics");
  fk->add_option("--topology", topology_path);
  fk->add_option("--rest", kin_rest)->required();
  fk->add_option("--rot", kin_rot)->required();
  fk->add_option("--out", kin_out)->required();
  auto* ik = kin->add_subcommand("ik", "swing-only inverse kinematics");
  ik->add_option("--topology", topology_path);
  ik->add_option("--rest", kin_rest)->required();
  ik->add_option("--pose", kin_pose)->required();
  ik->add_option("--out", kin_out)->required();

  // import
  auto* im = app.add_subcommand("import", "import a text table as .skl");
  std::string im_in, im_out, im_label;
  std::size_t im_frames = 0, im_joints = 0;
  im->add_option("--in", im_in)->required();
  im->add_option("--frames", im_frames)->required();
  im->add_option("--joints", im_joints)->required();
  im->add_option("--out", im_out)->required();
  im->add_option("--label", im_label);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*synth)
      return cmd_synth(synth_out, synth_sequences, synth_frames, seed,
                       synth_sigma, synth_occlude, synth_label, topology_path);
    if (*tr)
      return cmd_train(tr_data, tr_out, tr_config, tr_val, profile,
                       topology_path, tr_epochs, tr_lr, tr_batch, seed,
                       opt_epochs->count() > 0, opt_lr->count() > 0,
                       opt_batch->count() > 0);
    if (*rf) return cmd_refine(rf_weights, rf_in, rf_out, rf_config, topology_path);
    if (*ev)
      return cmd_eval(ev_weights, ev_data, ev_report, ev_config, topology_path,
                      group_by, threads);
    if (*gc) return cmd_gradcheck(seed);
    if (*gd) return cmd_graph_dump(topology_path, gd_out);
    if (*fk) return cmd_kin_fk(topology_path, kin_rest, kin_rot, kin_out);
    if (*ik) return cmd_kin_ik(topology_path, kin_rest, kin_pose, kin_out);
    if (*im) return cmd_import(im_in, im_frames, im_joints, im_label, im_out);
  } catch (const FormatError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
