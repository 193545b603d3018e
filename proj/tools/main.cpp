// meshodom command-line front end.
//
// Verbs:
//   run        odometry + meshing over a scan directory or a synthetic scene
//   synth      write a synthetic dataset (scans, poses, reference mesh)
//   eval-traj  trajectory metrics: segment drift and absolute error
//   eval-mesh  mesh quality metrics against a reference surface
//   bench      voxel-store integration micro-benchmark
//
// Exit codes: 0 success, 1 usage error, 2 input/data error, 3 completed but
// degraded (odometry fell back or went degenerate on some frame).

#include <CLI11.hpp>

#include "meshodom/meshodom.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace meshodom;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDegraded = 3;

struct SynthFlags {
  std::string scene = "box";
  std::string path;  // empty = scene default
  SynthSpec spec;

  void attach(CLI::App* cmd) {
    cmd->add_option("--scene", scene, "Scene: box, corridor, spheres")
        ->check(CLI::IsMember({"box", "corridor", "spheres"}));
    cmd->add_option("--path", path, "Trajectory: circle, line")
        ->check(CLI::IsMember({"circle", "line"}));
    cmd->add_option("--frames", spec.frames, "Number of scans");
    cmd->add_option("--noise", spec.noise_sigma, "Range noise sigma (m)");
    cmd->add_option("--seed", spec.seed, "Dataset seed");
    cmd->add_option("--rings", spec.lidar.rings, "Beam rings");
    cmd->add_option("--az-step", spec.lidar.azimuth_step_deg,
                    "Azimuth step (deg)");
    cmd->add_option("--circle-radius", spec.circle_radius,
                    "Circle path radius (m)");
    cmd->add_option("--line-step", spec.line_step,
                    "Line path advance per frame (m)");
    cmd->add_option("--sensor-height", spec.sensor_height,
                    "Sensor height above the floor (m)");
    cmd->add_option("--box-half", spec.box_half, "Box room half-extent (m)");
    cmd->add_option("--box-height", spec.box_height, "Box room height (m)");
    cmd->add_option("--corridor-length", spec.corridor_length,
                    "Corridor length (m)");
    cmd->add_option("--corridor-width", spec.corridor_width,
                    "Corridor width (m)");
    cmd->add_option("--corridor-height", spec.corridor_height,
                    "Corridor height (m)");
    cmd->add_option("--spheres", spec.sphere_count, "Sphere count");
    cmd->add_option("--ground-extent", spec.ground_extent,
                    "Sphere-field ground half-extent (m)");
    cmd->add_option("--gt-mesh-res", spec.gt_mesh_resolution,
                    "Reference mesh tessellation (m)");
  }

  SynthSpec resolve() const {
    SynthSpec s = spec;
    if (scene == "box") s.scene = SceneKind::box;
    else if (scene == "corridor") s.scene = SceneKind::corridor;
    else s.scene = SceneKind::spheres;
    if (path.empty())
      s.path = s.scene == SceneKind::box ? PathKind::circle : PathKind::line;
    else
      s.path = path == "circle" ? PathKind::circle : PathKind::line;
    return s;
  }
};

std::map<std::string, std::string> parse_overrides(
    const std::vector<std::string>& sets) {
  std::map<std::string, std::string> kv;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      throw io_error("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return kv;
}

void write_report(const fs::path& path, const KvReport& kv) {
  std::ofstream out(path);
  out << render_kv(kv);
  if (!out) throw io_error("cannot write report: " + path.string());
}

// --------------------------------------------------------------------------
// run

int cmd_run(const std::string& dataset, const SynthFlags& synth_flags,
            bool use_synth, bool use_gt_poses, const std::string& gt_poses,
            const std::string& config_file,
            const std::vector<std::string>& sets, const std::string& out_dir,
            bool verbose, bool write_obj) {
  RunConfig cfg;
  if (!config_file.empty()) apply_config(cfg, read_config_file(config_file));
  apply_config(cfg, parse_overrides(sets));
  cfg.validate();

  std::unique_ptr<ScanSource> source;
  Trajectory gt;
  bool have_gt = false;
  if (use_synth) {
    auto s = std::make_unique<SyntheticSource>(synth_flags.resolve());
    gt = s->poses();
    have_gt = true;
    source = std::move(s);
  } else {
    source = std::make_unique<BinDirSource>(dataset);
    if (!gt_poses.empty()) {
      gt = read_trajectory(gt_poses);
      have_gt = true;
    }
  }
  if (use_gt_poses && !have_gt)
    throw io_error("--use-gt-poses needs a synthetic source or --gt-poses");
  // Anchor the run at the reference's first pose so trajectory and mesh come
  // out in the reference frame (ATE/drift are alignment-invariant either way,
  // but mesh comparison against a reference surface is not).
  if (have_gt && !gt.empty()) cfg.initial_pose = gt.front();

  fs::create_directories(out_dir);
  const auto t0 = std::chrono::steady_clock::now();
  const RunOutput run = run_pipeline(cfg, *source,
                                     use_gt_poses ? &gt : nullptr,
                                     verbose ? &std::cerr : nullptr);
  const double total_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  write_trajectory(fs::path(out_dir) / "trajectory.txt", run.trajectory);
  write_mesh_ply(fs::path(out_dir) / "mesh.ply", run.mesh);
  if (write_obj) write_mesh_obj(fs::path(out_dir) / "mesh.obj", run.mesh);

  double ms_max = 0.0, ms_sum = 0.0;
  std::size_t deleted = 0;
  for (const auto& f : run.frames) {
    ms_max = std::max(ms_max, f.ms_total);
    ms_sum += f.ms_total;
    deleted += f.deleted_voxels;
  }

  KvReport kv{
      {"frames", std::to_string(run.frames.size())},
      {"total_s", format_double(total_s)},
      {"mean_ms_per_frame",
       format_double(run.frames.empty() ? 0.0
                                        : ms_sum / double(run.frames.size()))},
      {"max_ms_per_frame", format_double(ms_max)},
      {"voxels", std::to_string(run.voxels)},
      {"deleted_voxels", std::to_string(deleted)},
      {"triangles", std::to_string(run.mesh.triangles.size())},
      {"vertices", std::to_string(run.mesh.vertices.size())},
      {"insert_attempts", std::to_string(run.insert_attempts)},
      {"dropped", std::to_string(run.dropped)},
      {"dropout_percent", format_double(run.dropout_percent)},
      {"degraded", run.degraded ? "true" : "false"},
  };

  if (have_gt && !run.trajectory.empty()) {
    Trajectory gt_cut(gt.begin(),
                      gt.begin() + static_cast<std::ptrdiff_t>(
                                       run.trajectory.size()));
    kv.emplace_back("ate_rmse_m",
                    format_double(ate_rmse(run.trajectory, gt_cut)));
    try {
      const auto rel = relative_errors(run.trajectory, gt_cut);
      for (auto& [k, v] : to_kv(rel)) kv.emplace_back(k, v);
    } catch (const eval_error&) {
      // Path shorter than the smallest evaluation segment; ATE suffices.
    }
    std::ofstream svg(fs::path(out_dir) / "trajectory.svg");
    svg << svg_trajectory_overlay(run.trajectory, gt_cut);
  }

  write_report(fs::path(out_dir) / "report.txt", kv);
  std::cout << render_kv(kv);
  return run.degraded ? kExitDegraded : kExitOk;
}

// --------------------------------------------------------------------------
// synth

int cmd_synth(const SynthFlags& flags, const std::string& out_dir) {
  const SynthSpec spec = flags.resolve();
  const Scene scene = make_scene(spec);

  const fs::path root(out_dir);
  fs::create_directories(root / "scans");

  Trajectory poses;
  for (int f = 0; f < spec.frames; ++f) {
    const PoseSE3 pose = ground_truth_pose(spec, f);
    poses.push_back(pose);
    const auto points = generate_scan(scene, spec, pose, f);
    std::ostringstream name;
    name.width(6);
    name.fill('0');
    name << f;
    write_scan_bin(root / "scans" / (name.str() + ".bin"), points);
  }
  write_trajectory(root / "gt_poses.txt", poses);
  write_mesh_ply(root / "gt_mesh.ply", ground_truth_mesh(scene, spec));

  std::cout << "scans: " << spec.frames << "\n"
            << "dataset: " << root.string() << "\n";
  return kExitOk;
}

// --------------------------------------------------------------------------
// eval verbs

int cmd_eval_traj(const std::string& est_path, const std::string& gt_path,
                  const std::string& report, const std::string& svg) {
  const Trajectory est = read_trajectory(est_path);
  const Trajectory gt = read_trajectory(gt_path);

  KvReport kv{{"ate_rmse_m", format_double(ate_rmse(est, gt))}};
  for (auto& [k, v] : to_kv(relative_errors(est, gt))) kv.emplace_back(k, v);

  if (!svg.empty()) {
    std::ofstream out(svg);
    out << svg_trajectory_overlay(est, gt);
    if (!out) throw io_error("cannot write svg: " + svg);
  }
  if (!report.empty()) write_report(report, kv);
  std::cout << render_kv(kv);
  return kExitOk;
}

int cmd_eval_mesh(const std::string& pred_path, const std::string& gt_path,
                  std::size_t samples, double tau_cm, std::uint64_t seed,
                  const std::string& report) {
  const TriangleMesh pred = read_mesh_ply(pred_path);
  const TriangleMesh gt = read_mesh_ply(gt_path);
  const KvReport kv = to_kv(mesh_metrics(pred, gt, samples, tau_cm, seed));
  if (!report.empty()) write_report(report, kv);
  std::cout << render_kv(kv);
  return kExitOk;
}

// --------------------------------------------------------------------------
// bench

int cmd_bench(std::size_t voxels, std::size_t points, std::size_t capacity,
              const std::string& strategy, std::uint64_t seed) {
  const auto parsed = parse_probe_strategy(strategy);
  if (!parsed) throw io_error("unknown strategy: " + strategy);

  VoxelHashMap store(capacity, *parsed, 0.1);
  store.set_phase(StorePhase::integrate);

  // Resident population: a solid cube of keys, inserted in scan order.
  const auto side = static_cast<std::int32_t>(
      std::ceil(std::cbrt(static_cast<double>(voxels))));
  std::size_t placed = 0;
  for (std::int32_t z = 0; z < side && placed < voxels; ++z)
    for (std::int32_t y = 0; y < side && placed < voxels; ++y)
      for (std::int32_t x = 0; x < side && placed < voxels; ++x) {
        store.get_or_insert_update(VoxelKey{x, y, z},
                                   [](VoxelData& v, bool) {
                                     v.sdf = 0.0;
                                     v.weight = 1.0;
                                     v.last_frame = 0;
                                   });
        ++placed;
      }

  // Measured workload: full cube-update integrations over a scan-sized
  // working set — a fixed sub-region of the resident population, identical
  // across population sizes (a scan touches its own neighbourhood, not the
  // whole historical map). Growing the resident map around an unchanged
  // update sequence isolates the cost's dependence on map size.
  std::mt19937_64 rng(seed);
  const std::int32_t w = std::min<std::int32_t>(40, side);
  std::uniform_int_distribution<std::int32_t> pick(0, w - 1);
  std::vector<OrientedPoint> workload(points);
  for (auto& op : workload) {
    const VoxelKey k{pick(rng), pick(rng), pick(rng)};
    op.position = store.center_of(k);
    op.normal = Vec3(0, 0, 1);
  }

  // One unmeasured pass settles first-touch inserts and the cache; the
  // reported figure is the best of three measured passes, which strips
  // scheduler noise from what is a deterministic workload.
  FusionParams fp;
  FusionStats total;
  double total_ms = std::numeric_limits<double>::infinity();
  for (int pass = 0; pass < 4; ++pass) {
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& op : workload) {
      const FusionStats s = integrate_point(store, op, 1, fp);
      total.voxel_updates += s.voxel_updates;
      total.fresh_voxels += s.fresh_voxels;
      total.dropped += s.dropped;
    }
    const double pass_ms = std::chrono::duration<double, std::milli>(
                               std::chrono::steady_clock::now() - t0)
                               .count();
    if (pass > 0) total_ms = std::min(total_ms, pass_ms);
  }
  store.set_phase(StorePhase::idle);

  const KvReport kv{
      {"strategy", strategy},
      {"capacity", std::to_string(capacity)},
      {"resident_voxels", std::to_string(placed)},
      {"points", std::to_string(points)},
      {"total_ms", format_double(total_ms)},
      {"per_point_us",
       format_double(points == 0 ? 0.0 : 1000.0 * total_ms / double(points))},
      {"voxel_updates", std::to_string(total.voxel_updates)},
      {"fresh_voxels", std::to_string(total.fresh_voxels)},
      {"dropped", std::to_string(total.dropped)},
      {"load_factor", format_double(store.load_factor())},
      {"dropout_percent", format_double(store.dropout_ratio())},
  };
  std::cout << render_kv(kv);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR odometry and incremental meshing"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Run odometry + meshing");
  std::string dataset, gt_poses, config_file, out_dir = "out";
  std::vector<std::string> sets;
  bool use_synth = false, use_gt_poses = false, verbose = false,
       write_obj = false;
  SynthFlags run_synth;
  auto* dopt = run->add_option("--dataset", dataset,
                               "Directory of .bin scans");
  run->add_flag("--synth", use_synth, "Use a synthetic scene instead");
  run_synth.attach(run);
  run->add_option("--gt-poses", gt_poses,
                  "Reference trajectory for evaluation (and --use-gt-poses)");
  run->add_flag("--use-gt-poses", use_gt_poses,
                "Mapping-only replay at the reference poses");
  run->add_option("--config", config_file, "key=value config file");
  run->add_option("--set", sets, "Config override key=value (repeatable)");
  run->add_option("--out", out_dir, "Output directory");
  run->add_flag("--verbose", verbose, "Per-frame progress on stderr");
  run->add_flag("--obj", write_obj, "Also export mesh.obj");
  dopt->excludes("--synth");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  SynthFlags synth_flags;
  std::string synth_out = "dataset";
  synth_flags.attach(synth);
  synth->add_option("--out", synth_out, "Output directory");

  // eval-traj
  auto* etraj = app.add_subcommand("eval-traj", "Trajectory metrics");
  std::string est_path, gt_path, traj_report, traj_svg;
  etraj->add_option("--est", est_path, "Estimated trajectory")->required();
  etraj->add_option("--gt", gt_path, "Reference trajectory")->required();
  etraj->add_option("--report", traj_report, "Write metrics to this file");
  etraj->add_option("--svg", traj_svg, "Write a top-down overlay SVG");

  // eval-mesh
  auto* emesh = app.add_subcommand("eval-mesh", "Mesh quality metrics");
  std::string pred_path, mesh_gt_path, mesh_report;
  std::size_t samples = 200000;
  double tau_cm = 10.0;
  std::uint64_t mesh_seed = 7;
  emesh->add_option("--pred", pred_path, "Reconstructed mesh (.ply)")
      ->required();
  emesh->add_option("--gt", mesh_gt_path, "Reference mesh (.ply)")->required();
  emesh->add_option("--samples", samples, "Surface samples per side");
  emesh->add_option("--tau-cm", tau_cm, "Inlier distance (cm)");
  emesh->add_option("--seed", mesh_seed, "Sampling seed");
  emesh->add_option("--report", mesh_report, "Write metrics to this file");

  // bench
  auto* bench = app.add_subcommand("bench", "Voxel-store micro-benchmark");
  std::size_t bench_voxels = 100000, bench_points = 20000,
              bench_capacity = std::size_t{1} << 24;
  std::string bench_strategy = "linear";
  std::uint64_t bench_seed = 1;
  bench->add_option("--voxels", bench_voxels, "Resident voxel count");
  bench->add_option("--points", bench_points, "Points to integrate");
  bench->add_option("--capacity", bench_capacity, "Store capacity (slots)");
  bench->add_option("--strategy", bench_strategy,
                    "linear, quadratic, robin_hood");
  bench->add_option("--seed", bench_seed, "Workload seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (run->parsed()) {
      if (!use_synth && dataset.empty())
        throw io_error("run needs --dataset or --synth");
      return cmd_run(dataset, run_synth, use_synth, use_gt_poses, gt_poses,
                     config_file, sets, out_dir, verbose, write_obj);
    }
    if (synth->parsed()) return cmd_synth(synth_flags, synth_out);
    if (etraj->parsed())
      return cmd_eval_traj(est_path, gt_path, traj_report, traj_svg);
    if (emesh->parsed())
      return cmd_eval_mesh(pred_path, mesh_gt_path, samples, tau_cm,
                           mesh_seed, mesh_report);
    if (bench->parsed())
      return cmd_bench(bench_voxels, bench_points, bench_capacity,
                       bench_strategy, bench_seed);
  } catch (const io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const eval_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
