#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "ugcn/data.hpp"

using namespace ugcn;
using test_helpers::same_bytes;
using test_helpers::temp_dir;

TEST_CASE("pose sequence tensor round trip") {
  PoseSequence s(3, 2);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < 2; ++i)
      s.set_joint(t, i, {double(t), double(i), double(t + i)});
  Tensor x = s.to_tensor();
  REQUIRE(x.shape == std::vector<std::size_t>{3, 3, 2});
  CHECK(x.at(0, 2, 1) == 2.0);  // x coord, frame 2, joint 1
  CHECK(x.at(1, 0, 1) == 1.0);
  PoseSequence back = PoseSequence::from_tensor(x);
  CHECK(back.positions == s.positions);
  CHECK_THROWS_AS(PoseSequence::from_tensor(Tensor({2, 3, 2})), ShapeMismatch);
}

TEST_CASE("synthetic motion: determinism, bone lengths, noise scale") {
  SkeletonTopology topo = h36m17_topology();
  SynthConfig cfg;
  cfg.sequences = 3;
  cfg.frames = 32;
  cfg.seed = 5;

  SynthDataset a = generate_synthetic(cfg, topo);
  SynthDataset b = generate_synthetic(cfg, topo);
  REQUIRE(a.inputs.size() == 3);
  REQUIRE(a.ground_truth.size() == 3);
  for (std::size_t s = 0; s < 3; ++s) {
    CHECK(a.inputs[s].positions == b.inputs[s].positions);  // bitwise
    CHECK(a.ground_truth[s].positions == b.ground_truth[s].positions);
    CHECK(a.ground_truth[s].label == "synth");
  }

  SynthConfig other = cfg;
  other.seed = 6;
  SynthDataset c = generate_synthetic(other, topo);
  CHECK(a.ground_truth[0].positions != c.ground_truth[0].positions);

  // ground truth is rigid: bone lengths match the rest pose in every frame
  for (const PoseSequence& gt : a.ground_truth)
    for (std::size_t t = 0; t < gt.frames; ++t)
      for (std::size_t k = 0; k < topo.joint_count(); ++k) {
        if (topo.parents[k] < 0) continue;
        const auto p = static_cast<std::size_t>(topo.parents[k]);
        const double want = a.rest.bone(topo, k).norm();
        const double got = (gt.joint(t, k) - gt.joint(t, p)).norm();
        CHECK(std::abs(got - want) / want < 1e-9);
      }

  // input = ground truth + noise with roughly the configured sigma
  double sq = 0.0;
  std::size_t cnt = 0;
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < a.inputs[s].positions.size(); ++i) {
      const double d = a.inputs[s].positions[i] - a.ground_truth[s].positions[i];
      sq += d * d;
      ++cnt;
    }
  const double sigma = std::sqrt(sq / static_cast<double>(cnt));
  CHECK(sigma == Catch::Approx(cfg.noise_sigma).epsilon(0.1));

  SynthConfig noiseless = cfg;
  noiseless.noise_sigma = 0.0;
  SynthDataset d = generate_synthetic(noiseless, topo);
  CHECK(d.inputs[0].positions == d.ground_truth[0].positions);

  SynthConfig bad = cfg;
  bad.frames = 30;  // not a multiple of 16
  CHECK_THROWS_AS(generate_synthetic(bad, topo), ConfigInvalid);
}

TEST_CASE("occlusion hides the exact count and never the root") {
  SkeletonTopology topo = h36m17_topology();
  SynthConfig cfg;
  cfg.sequences = 1;
  cfg.frames = 32;
  SynthDataset ds = generate_synthetic(cfg, topo);
  const PoseSequence& seq = ds.inputs[0];

  const double rate = 0.25;
  PoseSequence occ = apply_occlusion(seq, topo, rate, 9);
  REQUIRE(occ.has_mask());
  std::size_t hidden = 0;
  for (std::size_t t = 0; t < occ.frames; ++t)
    for (std::size_t i = 0; i < occ.joints; ++i) {
      if (!occ.visible(t, i)) {
        ++hidden;
        CHECK(i != static_cast<std::size_t>(topo.root));
        CHECK(occ.joint(t, i).norm() == 0.0);
      } else {
        CHECK(occ.joint(t, i).x == seq.joint(t, i).x);
      }
    }
  const auto want = static_cast<std::size_t>(
      rate * static_cast<double>(seq.frames * (seq.joints - 1)));
  CHECK(hidden == want);

  PoseSequence occ2 = apply_occlusion(seq, topo, rate, 9);
  CHECK(occ2.mask == occ.mask);  // seeded shuffle is deterministic
  PoseSequence occ3 = apply_occlusion(seq, topo, rate, 10);
  CHECK(occ3.mask != occ.mask);

  PoseSequence none = apply_occlusion(seq, topo, 0.0, 9);
  for (std::size_t t = 0; t < none.frames; ++t)
    for (std::size_t i = 0; i < none.joints; ++i) CHECK(none.visible(t, i));
  CHECK_THROWS_AS(apply_occlusion(seq, topo, 1.0, 9), RateOutOfRange);
  CHECK_THROWS_AS(apply_occlusion(seq, topo, -0.1, 9), RateOutOfRange);
}

TEST_CASE("interpolation fills gaps linearly and holds the ends") {
  PoseSequence s(5, 2);
  // joint 1 visible at frames 1 and 4 only; values 10 and 40 on x
  for (std::size_t t = 0; t < 5; ++t) {
    s.set_joint(t, 0, {1, 2, 3});
    s.set_joint(t, 1, {0, 0, 0});
  }
  s.set_joint(1, 1, {10, -10, 5});
  s.set_joint(4, 1, {40, -40, 20});
  s.mask.assign(10, 1);
  for (std::size_t t : {0u, 2u, 3u}) s.mask[t * 2 + 1] = 0;

  PoseSequence out = interpolate_missing(s);
  CHECK(!out.has_mask());
  CHECK(out.joint(0, 1).x == 10.0);   // leading hold
  CHECK(out.joint(2, 1).x == Catch::Approx(20.0));
  CHECK(out.joint(3, 1).x == Catch::Approx(30.0));
  CHECK(out.joint(2, 1).y == Catch::Approx(-20.0));
  CHECK(out.joint(3, 1).z == Catch::Approx(15.0));
  CHECK(out.joint(0, 0).x == 1.0);  // untouched joint

  // trailing hold
  PoseSequence tail = s;
  tail.mask.assign(10, 1);
  tail.mask[4 * 2 + 1] = 0;
  PoseSequence out2 = interpolate_missing(tail);
  CHECK(out2.joint(4, 1).x == s.joint(3, 1).x);

  // dense sequence passes through
  PoseSequence dense(2, 1);
  CHECK(interpolate_missing(dense).positions == dense.positions);

  PoseSequence never(3, 1);
  never.mask.assign(3, 0);
  CHECK_THROWS_AS(interpolate_missing(never), JointNeverVisible);
}

TEST_CASE("occlusion then interpolation round trip on synthetic data") {
  SkeletonTopology topo = h36m17_topology();
  SynthConfig cfg;
  cfg.sequences = 1;
  cfg.frames = 32;
  cfg.noise_sigma = 0.0;
  SynthDataset ds = generate_synthetic(cfg, topo);
  PoseSequence occ = apply_occlusion(ds.ground_truth[0], topo, 0.2, 3);
  PoseSequence fix = interpolate_missing(occ);
  // interpolation should land far closer to the truth than the zeroed input
  double err_fix = 0, err_occ = 0;
  for (std::size_t i = 0; i < fix.positions.size(); ++i) {
    err_fix += std::abs(fix.positions[i] - ds.ground_truth[0].positions[i]);
    err_occ += std::abs(occ.positions[i] - ds.ground_truth[0].positions[i]);
  }
  CHECK(err_fix < 0.2 * err_occ);
}

TEST_CASE(".skl round trip preserves values, mask and label") {
  const std::string dir = temp_dir("skl");
  SkeletonTopology topo = h36m17_topology();
  SynthConfig cfg;
  cfg.sequences = 1;
  cfg.frames = 16;
  SynthDataset ds = generate_synthetic(cfg, topo);
  PoseSequence seq = apply_occlusion(ds.inputs[0], topo, 0.1, 4);
  seq.label = "walking";

  write_skl(seq, dir + "/a.skl");
  PoseSequence back = read_skl(dir + "/a.skl");
  CHECK(back.frames == seq.frames);
  CHECK(back.joints == seq.joints);
  CHECK(back.label == "walking");
  CHECK(back.mask == seq.mask);
  // float32 storage: values match to single precision
  for (std::size_t i = 0; i < seq.positions.size(); ++i)
    CHECK(back.positions[i] ==
          static_cast<double>(static_cast<float>(seq.positions[i])));

  // write(read(file)) is byte-identical
  write_skl(back, dir + "/b.skl");
  CHECK(same_bytes(dir + "/a.skl", dir + "/b.skl"));

  // maskless file has no mask bytes
  PoseSequence dense = ds.ground_truth[0];
  write_skl(dense, dir + "/d.skl");
  CHECK(!read_skl(dir + "/d.skl").has_mask());
}

TEST_CASE(".skl malformed files") {
  const std::string dir = temp_dir("skl_bad");
  {
    std::ofstream out(dir + "/magic.skl", std::ios::binary);
    out << "XXXXrest";
  }
  CHECK_THROWS_AS(read_skl(dir + "/magic.skl"), FormatError);
  CHECK_THROWS_AS(read_skl(dir + "/missing.skl"), FormatError);

  PoseSequence s(2, 2);
  write_skl(s, dir + "/ok.skl");
  const auto bytes = test_helpers::read_file_bytes(dir + "/ok.skl");
  {
    std::ofstream out(dir + "/trunc.skl", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 5));
  }
  try {
    read_skl(dir + "/trunc.skl");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    // the message names a byte offset
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
}

TEST_CASE("table import and export") {
  const std::string dir = temp_dir("table");
  {
    std::ofstream out(dir + "/p.csv");
    out << "# comment line\n";
    out << "1,2,3,4,5,6\n";
    out << "7 8 9 10 11 12\n";  // whitespace also accepted
  }
  PoseSequence s = import_table(dir + "/p.csv", 2, 2);
  CHECK(s.joint(0, 0).x == 1.0);
  CHECK(s.joint(0, 1).z == 6.0);
  CHECK(s.joint(1, 1).x == 10.0);

  write_table(s, dir + "/out.csv");
  PoseSequence back = import_table(dir + "/out.csv", 2, 2);
  CHECK(back.positions == s.positions);

  {
    std::ofstream out(dir + "/short.csv");
    out << "1,2,3,4,5\n1,2,3,4,5,6\n";
  }
  try {
    import_table(dir + "/short.csv", 2, 2);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 1") != std::string::npos);
    CHECK(msg.find("column 6") != std::string::npos);
  }
  {
    std::ofstream out(dir + "/extra.csv");
    out << "1,2,3,4,5,6,7\n1,2,3,4,5,6\n";
  }
  CHECK_THROWS_AS(import_table(dir + "/extra.csv", 2, 2), ParseError);
  {
    std::ofstream out(dir + "/rows.csv");
    out << "1,2,3,4,5,6\n";
  }
  CHECK_THROWS_AS(import_table(dir + "/rows.csv", 2, 2), ParseError);
  {
    std::ofstream out(dir + "/alpha.csv");
    out << "1,2,x,4,5,6\n1,2,3,4,5,6\n";
  }
  CHECK_THROWS_AS(import_table(dir + "/alpha.csv", 2, 2), ParseError);
  CHECK_THROWS_AS(import_table(dir + "/none.csv", 2, 2), FormatError);
}
