#include "meshodom/pipeline.hpp"

#include <gtest/gtest.h>

#include "meshodom/evalkit.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace meshodom {
namespace {

namespace fs = std::filesystem;

// A light sensor model keeps the end-to-end tests quick while still painting
// every wall of the scene.
SynthSpec light_box_spec(int frames) {
  SynthSpec spec;
  spec.scene = SceneKind::box;
  spec.path = PathKind::line;
  spec.frames = frames;
  spec.lidar.rings = 8;
  spec.lidar.azimuth_step_deg = 3.0;
  return spec;
}

RunConfig small_config() {
  RunConfig cfg;
  cfg.map_capacity = std::size_t{1} << 20;
  cfg.directory_capacity = std::size_t{1} << 14;
  cfg.deletion = false;
  return cfg;
}

// ---------------------------------------------------------------------------
// Configuration plumbing

TEST(ApplyConfig, RoundTripsEveryKnownKey) {
  const std::map<std::string, std::string> kv = {
      {"resolution", "0.2"},
      {"map_capacity", "4096"},
      {"probe_strategy", "quadratic"},
      {"probe_budget", "7"},
      {"knn", "12"},
      {"feature_cell", "0.3"},
      {"curvature_threshold", "0.05"},
      {"range_min", "0.8"},
      {"range_max", "55"},
      {"fusion_h", "0.07"},
      {"fusion_lambda_n", "0.3"},
      {"fusion_cube", "5"},
      {"weight_floor", "0.001"},
      {"block_size", "1.6"},
      {"w_extract", "0.75"},
      {"alpha", "0.1"},
      {"directory_capacity", "2048"},
      {"search_cell", "0.4"},
      {"cos_threshold", "0.9"},
      {"max_p2m", "0.5"},
      {"icp_iterations", "15"},
      {"icp_eps", "1e-6"},
      {"min_correspondences", "40"},
      {"max_halvings", "6"},
      {"deletion", "false"},
      {"retire_radius", "35"},
      {"min_age", "9"},
      {"maintain_every", "4"},
      {"threads", "3"},
      {"max_frames", "123"},
  };

  RunConfig cfg;
  apply_config(cfg, kv);
  EXPECT_DOUBLE_EQ(cfg.resolution, 0.2);
  EXPECT_EQ(cfg.map_capacity, 4096u);
  EXPECT_EQ(cfg.strategy, ProbeStrategy::quadratic);
  EXPECT_EQ(cfg.probe_budget, 7);
  EXPECT_EQ(cfg.knn, 12);
  EXPECT_DOUBLE_EQ(cfg.feature_cell, 0.3);
  EXPECT_DOUBLE_EQ(cfg.curvature_threshold, 0.05);
  EXPECT_DOUBLE_EQ(cfg.range_min, 0.8);
  EXPECT_DOUBLE_EQ(cfg.range_max, 55.0);
  EXPECT_DOUBLE_EQ(cfg.fusion_h, 0.07);
  EXPECT_DOUBLE_EQ(cfg.fusion_lambda_n, 0.3);
  EXPECT_EQ(cfg.fusion_cube, 5);
  EXPECT_DOUBLE_EQ(cfg.weight_floor, 0.001);
  EXPECT_DOUBLE_EQ(cfg.block_size, 1.6);
  EXPECT_DOUBLE_EQ(cfg.w_extract, 0.75);
  EXPECT_DOUBLE_EQ(cfg.alpha, 0.1);
  EXPECT_EQ(cfg.directory_capacity, 2048u);
  EXPECT_DOUBLE_EQ(cfg.search_cell, 0.4);
  EXPECT_DOUBLE_EQ(cfg.cos_threshold, 0.9);
  EXPECT_DOUBLE_EQ(cfg.max_p2m, 0.5);
  EXPECT_EQ(cfg.icp_iterations, 15);
  EXPECT_DOUBLE_EQ(cfg.icp_eps, 1e-6);
  EXPECT_EQ(cfg.min_correspondences, 40);
  EXPECT_EQ(cfg.max_halvings, 6);
  EXPECT_FALSE(cfg.deletion);
  EXPECT_DOUBLE_EQ(cfg.retire_radius, 35.0);
  EXPECT_EQ(cfg.min_age, 9u);
  EXPECT_EQ(cfg.maintain_every, 4);
  EXPECT_EQ(cfg.threads, 3);
  EXPECT_EQ(cfg.max_frames, 123);
  cfg.validate();  // the values above form a coherent config
}

TEST(ApplyConfig, RejectsUnknownKeysAndMalformedValues) {
  RunConfig cfg;
  EXPECT_THROW(apply_config(cfg, {{"banana", "1"}}), io_error);
  EXPECT_THROW(apply_config(cfg, {{"resolution", "abc"}}), io_error);
  EXPECT_THROW(apply_config(cfg, {{"resolution", "0.1xyz"}}), io_error);
  EXPECT_THROW(apply_config(cfg, {{"knn", "7.5"}}), io_error);
  EXPECT_THROW(apply_config(cfg, {{"deletion", "maybe"}}), io_error);
  EXPECT_THROW(apply_config(cfg, {{"probe_strategy", "cuckoo"}}), io_error);
}

TEST(RunConfigValidate, RejectsIncoherentSettings) {
  auto broken = [](auto mutate) {
    RunConfig cfg;
    mutate(cfg);
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
  };
  broken([](RunConfig& c) { c.resolution = 0.0; });
  broken([](RunConfig& c) { c.block_size = c.resolution / 2; });
  broken([](RunConfig& c) { c.fusion_cube = 4; });
  broken([](RunConfig& c) { c.threads = 0; });
  broken([](RunConfig& c) { c.range_min = c.range_max; });
  broken([](RunConfig& c) { c.min_correspondences = 5; });
  broken([](RunConfig& c) { c.alpha = 1.5; });
  RunConfig ok;
  EXPECT_NO_THROW(ok.validate());
}

// ---------------------------------------------------------------------------
// Scan sources

TEST(BinDirSource, ReplaysFilesInLexicographicOrder) {
  const fs::path dir =
      fs::temp_directory_path() / "meshodom_pipeline_bindir";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_scan_bin(dir / "000002.bin", {Vec3(2, 0, 0)});
  write_scan_bin(dir / "000000.bin", {Vec3(0, 0, 0)});
  write_scan_bin(dir / "000001.bin", {Vec3(1, 0, 0)});
  { std::ofstream(dir / "notes.txt") << "ignored"; }

  const BinDirSource source(dir);
  ASSERT_EQ(source.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto scan = source.scan(i);
    ASSERT_EQ(scan.size(), 1u);
    EXPECT_DOUBLE_EQ(scan[0].x(), static_cast<double>(i));
  }
  fs::remove_all(dir);
}

TEST(BinDirSource, MissingOrEmptyDirectoriesThrow) {
  EXPECT_THROW(BinDirSource("/nonexistent/meshodom"), io_error);

  const fs::path dir = fs::temp_directory_path() / "meshodom_pipeline_empty";
  fs::remove_all(dir);
  fs::create_directories(dir);
  EXPECT_THROW(BinDirSource{dir}, io_error);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Mapping-only replay

TEST(PipelineRun, MappingReplayKeepsTheProvidedPosesVerbatim) {
  const SyntheticSource source(light_box_spec(8));
  const Trajectory gt = source.poses();
  const RunConfig cfg = small_config();

  const RunOutput run = run_pipeline(cfg, source, &gt);
  ASSERT_EQ(run.trajectory.size(), gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    EXPECT_EQ(run.trajectory[i].translation, gt[i].translation);
    EXPECT_EQ(run.trajectory[i].rotation, gt[i].rotation);
  }
  EXPECT_FALSE(run.degraded);
  EXPECT_GT(run.voxels, 1000u);
  EXPECT_GT(run.mesh.triangles.size(), 100u);
  EXPECT_EQ(run.dropped, 0u);
  for (std::size_t i = 0; i < run.frames.size(); ++i) {
    EXPECT_EQ(run.frames[i].frame, static_cast<int>(i));
    EXPECT_TRUE(run.frames[i].odometry.converged);
    EXPECT_GT(run.frames[i].oriented_points, 100u);
  }
}

TEST(PipelineRun, MaxFramesCapsTheReplayAndShortOverridesThrow) {
  const SyntheticSource source(light_box_spec(6));
  const Trajectory gt = source.poses();

  RunConfig cfg = small_config();
  cfg.max_frames = 3;
  const RunOutput run = run_pipeline(cfg, source, &gt);
  EXPECT_EQ(run.frames.size(), 3u);
  EXPECT_EQ(run.trajectory.size(), 3u);

  const Trajectory too_short(gt.begin(), gt.begin() + 4);
  EXPECT_THROW(run_pipeline(cfg, source, &too_short),
               std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Odometry in the loop

TEST(PipelineRun, TracksANoiseFreeWalkThroughTheBox) {
  SynthSpec spec = light_box_spec(12);
  spec.lidar.rings = 16;
  spec.lidar.azimuth_step_deg = 1.8;
  const SyntheticSource source(spec);

  const RunConfig cfg = small_config();
  const RunOutput run = run_pipeline(cfg, source);

  EXPECT_FALSE(run.degraded);
  for (std::size_t i = 1; i < run.frames.size(); ++i) {
    EXPECT_FALSE(run.frames[i].odometry.fallback);
    EXPECT_FALSE(run.frames[i].odometry.degenerate);
    EXPECT_GE(run.frames[i].odometry.correspondences,
              static_cast<std::size_t>(cfg.min_correspondences));
  }

  // The scans are exact, so the estimate should recover the walk to a few
  // millimeters (the trajectories live in different frames; the metric
  // aligns them rigidly first).
  const double ate = ate_rmse(run.trajectory, source.poses());
  EXPECT_LT(ate, 0.005);
}

// ---------------------------------------------------------------------------
// Determinism

TEST(PipelineRun, RepeatRunsAndThreadCountsAreBitwiseIdentical) {
  const SyntheticSource source(light_box_spec(6));
  const Trajectory gt = source.poses();
  RunConfig cfg = small_config();

  const RunOutput a = run_pipeline(cfg, source, &gt);
  const RunOutput b = run_pipeline(cfg, source, &gt);
  cfg.threads = 4;
  const RunOutput c = run_pipeline(cfg, source, &gt);

  for (const RunOutput* other : {&b, &c}) {
    ASSERT_EQ(other->trajectory.size(), a.trajectory.size());
    for (std::size_t i = 0; i < a.trajectory.size(); ++i) {
      EXPECT_EQ(other->trajectory[i].translation, a.trajectory[i].translation);
      EXPECT_EQ(other->trajectory[i].rotation, a.trajectory[i].rotation);
    }
    ASSERT_EQ(other->mesh.vertices.size(), a.mesh.vertices.size());
    ASSERT_EQ(other->mesh.triangles.size(), a.mesh.triangles.size());
    for (std::size_t i = 0; i < a.mesh.vertices.size(); ++i)
      EXPECT_EQ(other->mesh.vertices[i], a.mesh.vertices[i]);
    for (std::size_t i = 0; i < a.mesh.triangles.size(); ++i)
      EXPECT_EQ(other->mesh.triangles[i], a.mesh.triangles[i]);
    EXPECT_EQ(other->voxels, a.voxels);
  }
}

// ---------------------------------------------------------------------------
// Maintenance

TEST(PipelineRun, MaintenanceRetiresFarVoxelsButTheMeshSurvives) {
  SynthSpec spec;
  spec.scene = SceneKind::corridor;
  spec.path = PathKind::line;
  spec.frames = 30;
  spec.corridor_length = 60.0;
  spec.line_step = 1.0;
  spec.lidar.rings = 8;
  spec.lidar.azimuth_step_deg = 3.0;
  const SyntheticSource source(spec);
  const Trajectory gt = source.poses();

  RunConfig cfg;
  cfg.resolution = 0.2;
  cfg.map_capacity = std::size_t{1} << 18;
  cfg.directory_capacity = std::size_t{1} << 12;
  cfg.deletion = true;
  cfg.retire_radius = 8.0;
  cfg.min_age = 3;
  cfg.maintain_every = 5;

  Pipeline pipeline(cfg);
  std::size_t deleted_total = 0;
  std::size_t peak_voxels = 0, peak_directory = 0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const FrameStats st = pipeline.process_scan(source.scan(i), gt[i]);
    deleted_total += st.deleted_voxels;
    peak_voxels = std::max(peak_voxels, st.store_voxels);
    peak_directory = std::max(peak_directory, pipeline.directory().size());
  }

  EXPECT_GT(deleted_total, 1000u);
  EXPECT_LT(pipeline.store().size(), peak_voxels);
  EXPECT_LT(pipeline.directory().size(), peak_directory);
  EXPECT_FALSE(pipeline.degraded());

  // Retirement frees map memory, not the reconstructed surface: the mesh
  // still spans (nearly) the whole corridor walked so far.
  const TriangleMesh mesh = pipeline.mesh();
  ASSERT_GT(mesh.triangles.size(), 0u);
  double xmin = 1e300, xmax = -1e300;
  for (const auto& v : mesh.vertices) {
    xmin = std::min(xmin, v.x());
    xmax = std::max(xmax, v.x());
  }
  EXPECT_LT(xmin, 4.0);
  EXPECT_GT(xmax, 24.0);
}

// ---------------------------------------------------------------------------
// Degradation flag

TEST(PipelineRun, SparseScanFallsBackToThePredictionAndFlagsTheRun) {
  const SyntheticSource source(light_box_spec(2));
  RunConfig cfg = small_config();

  Pipeline pipeline(cfg);
  pipeline.process_scan(source.scan(0));
  ASSERT_FALSE(pipeline.degraded());

  // A tiny planar patch: normals are fine, but far fewer correspondences
  // than the odometry stage requires.
  std::vector<Vec3> sparse;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      sparse.emplace_back(3.0, -0.1 + 0.05 * i, 1.0 + 0.05 * j);

  const FrameStats st = pipeline.process_scan(sparse);
  EXPECT_TRUE(st.odometry.fallback);
  EXPECT_TRUE(pipeline.degraded());
  // The fallback pose is the constant-velocity prediction, which after a
  // single identity frame is the identity again.
  EXPECT_EQ(st.odometry.pose.translation, Vec3(0, 0, 0));
  EXPECT_EQ(st.odometry.pose.rotation, Mat3::Identity());
}

}  // namespace
}  // namespace meshodom
