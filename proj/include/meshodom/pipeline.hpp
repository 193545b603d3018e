#pragma once

// End-to-end odometry-and-meshing pipeline. Each scan runs through normal
// estimation, point-to-mesh alignment against the live facet index, weighted
// SDF fusion into the voxel store, incremental block re-polygonisation, and
// (periodically) retirement of voxels far behind the sensor. The mesh itself
// is never un-built: retirement frees map memory while the extracted surface
// and its facet index stay queryable.

#include "meshodom/evalkit.hpp"
#include "meshodom/features.hpp"
#include "meshodom/fusion.hpp"
#include "meshodom/geometry.hpp"
#include "meshodom/hashstore.hpp"
#include "meshodom/io.hpp"
#include "meshodom/meshing.hpp"
#include "meshodom/odometry.hpp"
#include "meshodom/parallel.hpp"
#include "meshodom/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace meshodom {

// ---------------------------------------------------------------------------
// Configuration

struct RunConfig {
  // Voxel store.
  double resolution = 0.1;
  std::size_t map_capacity = std::size_t{1} << 22;
  ProbeStrategy strategy = ProbeStrategy::linear;
  int probe_budget = 10;

  // Feature extraction.
  int knn = 10;
  double feature_cell = 0.2;
  double curvature_threshold = 0.1;
  double range_min = 1.0;
  double range_max = 100.0;

  // Fusion.
  double fusion_h = 0.05;
  double fusion_lambda_n = 0.2;
  int fusion_cube = 3;
  double weight_floor = 1e-4;

  // Meshing.
  double block_size = 2.0;  // block footprint edge length (m)
  double w_extract = 0.5;
  double alpha = 0.05;
  std::size_t directory_capacity = std::size_t{1} << 16;

  // Odometry.
  double search_cell = 0.2;
  double cos_threshold = 0.98;
  double max_p2m = 1.0;
  int icp_iterations = 30;
  double icp_eps = 1e-5;
  int min_correspondences = 30;
  int max_halvings = 4;

  // Maintenance.
  bool deletion = true;
  double retire_radius = 50.0;
  std::uint32_t min_age = 20;
  int maintain_every = 10;

  int threads = 1;
  int max_frames = -1;  // <0 means all available scans

  // Pose of the first frame. Odometry is relative, so the estimate is
  // anchored here; supplying a reference trajectory's first pose puts the
  // whole run (trajectory and mesh) in the reference frame.
  std::optional<PoseSE3> initial_pose;

  void validate() const {
    auto fail = [](const std::string& what) {
      throw std::invalid_argument("config: " + what);
    };
    if (!(resolution > 0.0)) fail("resolution must be positive");
    if (map_capacity < 64) fail("map_capacity must be at least 64");
    if (probe_budget < 1) fail("probe_budget must be at least 1");
    if (knn < 3) fail("knn must be at least 3");
    if (!(feature_cell > 0.0)) fail("feature_cell must be positive");
    if (!(range_min >= 0.0) || !(range_max > range_min))
      fail("range gate must satisfy 0 <= range_min < range_max");
    if (!(fusion_h > 0.0)) fail("fusion_h must be positive");
    if (fusion_cube < 1 || fusion_cube % 2 == 0)
      fail("fusion_cube must be odd and positive");
    if (!(weight_floor >= 0.0)) fail("weight_floor must be non-negative");
    if (!(block_size >= resolution))
      fail("block_size must be at least one voxel");
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must be in [0, 1]");
    if (!(search_cell > 0.0)) fail("search_cell must be positive");
    if (!(cos_threshold >= 0.0 && cos_threshold <= 1.0))
      fail("cos_threshold must be in [0, 1]");
    if (!(max_p2m > 0.0)) fail("max_p2m must be positive");
    if (icp_iterations < 1) fail("icp_iterations must be at least 1");
    if (min_correspondences < 6)
      fail("min_correspondences must be at least 6");
    if (!(retire_radius > 0.0)) fail("retire_radius must be positive");
    if (maintain_every < 1) fail("maintain_every must be at least 1");
    if (threads < 1) fail("threads must be at least 1");
  }
};

namespace detail {

inline double config_double(const std::string& key, const std::string& val) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(val, &used);
  } catch (const std::exception&) {
    throw io_error("config key '" + key + "': not a number: '" + val + "'");
  }
  if (used != val.size())
    throw io_error("config key '" + key + "': trailing junk in '" + val + "'");
  return out;
}

inline long long config_int(const std::string& key, const std::string& val) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(val, &used);
  } catch (const std::exception&) {
    throw io_error("config key '" + key + "': not an integer: '" + val + "'");
  }
  if (used != val.size())
    throw io_error("config key '" + key + "': trailing junk in '" + val + "'");
  return out;
}

inline bool config_bool(const std::string& key, const std::string& val) {
  if (val == "true" || val == "1" || val == "on" || val == "yes") return true;
  if (val == "false" || val == "0" || val == "off" || val == "no")
    return false;
  throw io_error("config key '" + key + "': not a boolean: '" + val + "'");
}

}  // namespace detail

// Applies flat key=value settings (from a config file or command-line
// overrides) onto `cfg`. Unknown keys are an error so typos fail loudly.
inline void apply_config(RunConfig& cfg,
                         const std::map<std::string, std::string>& kv) {
  using detail::config_bool;
  using detail::config_double;
  using detail::config_int;
  for (const auto& [key, val] : kv) {
    if (key == "resolution") cfg.resolution = config_double(key, val);
    else if (key == "map_capacity")
      cfg.map_capacity = static_cast<std::size_t>(config_int(key, val));
    else if (key == "probe_strategy") {
      const auto s = parse_probe_strategy(val);
      if (!s) throw io_error("config key 'probe_strategy': unknown value '" +
                             val + "'");
      cfg.strategy = *s;
    }
    else if (key == "probe_budget")
      cfg.probe_budget = static_cast<int>(config_int(key, val));
    else if (key == "knn") cfg.knn = static_cast<int>(config_int(key, val));
    else if (key == "feature_cell") cfg.feature_cell = config_double(key, val);
    else if (key == "curvature_threshold")
      cfg.curvature_threshold = config_double(key, val);
    else if (key == "range_min") cfg.range_min = config_double(key, val);
    else if (key == "range_max") cfg.range_max = config_double(key, val);
    else if (key == "fusion_h") cfg.fusion_h = config_double(key, val);
    else if (key == "fusion_lambda_n")
      cfg.fusion_lambda_n = config_double(key, val);
    else if (key == "fusion_cube")
      cfg.fusion_cube = static_cast<int>(config_int(key, val));
    else if (key == "weight_floor") cfg.weight_floor = config_double(key, val);
    else if (key == "block_size") cfg.block_size = config_double(key, val);
    else if (key == "w_extract") cfg.w_extract = config_double(key, val);
    else if (key == "alpha") cfg.alpha = config_double(key, val);
    else if (key == "directory_capacity")
      cfg.directory_capacity = static_cast<std::size_t>(config_int(key, val));
    else if (key == "search_cell") cfg.search_cell = config_double(key, val);
    else if (key == "cos_threshold")
      cfg.cos_threshold = config_double(key, val);
    else if (key == "max_p2m") cfg.max_p2m = config_double(key, val);
    else if (key == "icp_iterations")
      cfg.icp_iterations = static_cast<int>(config_int(key, val));
    else if (key == "icp_eps") cfg.icp_eps = config_double(key, val);
    else if (key == "min_correspondences")
      cfg.min_correspondences = static_cast<int>(config_int(key, val));
    else if (key == "max_halvings")
      cfg.max_halvings = static_cast<int>(config_int(key, val));
    else if (key == "deletion") cfg.deletion = config_bool(key, val);
    else if (key == "retire_radius")
      cfg.retire_radius = config_double(key, val);
    else if (key == "min_age")
      cfg.min_age = static_cast<std::uint32_t>(config_int(key, val));
    else if (key == "maintain_every")
      cfg.maintain_every = static_cast<int>(config_int(key, val));
    else if (key == "threads")
      cfg.threads = static_cast<int>(config_int(key, val));
    else if (key == "max_frames")
      cfg.max_frames = static_cast<int>(config_int(key, val));
    else
      throw io_error("config: unknown key '" + key + "'");
  }
}

// ---------------------------------------------------------------------------
// Scan sources

class ScanSource {
 public:
  virtual ~ScanSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::vector<Vec3> scan(std::size_t index) const = 0;
};

// Directory of .bin scans, replayed in lexicographic filename order.
class BinDirSource : public ScanSource {
 public:
  explicit BinDirSource(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
      throw io_error("scan directory not found: " + dir.string());
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".bin")
        files_.push_back(e.path());
    }
    std::sort(files_.begin(), files_.end());
    if (files_.empty())
      throw io_error("no .bin scans in " + dir.string());
  }

  std::size_t size() const override { return files_.size(); }
  std::vector<Vec3> scan(std::size_t index) const override {
    return read_scan_bin(files_.at(index));
  }
  const std::vector<std::filesystem::path>& files() const { return files_; }

 private:
  std::vector<std::filesystem::path> files_;
};

// Scans generated on the fly from an analytic scene; also exposes the exact
// poses they were rendered from.
class SyntheticSource : public ScanSource {
 public:
  explicit SyntheticSource(const SynthSpec& spec)
      : spec_(spec), scene_(make_scene(spec)) {}

  std::size_t size() const override {
    return static_cast<std::size_t>(spec_.frames);
  }
  std::vector<Vec3> scan(std::size_t index) const override {
    return generate_scan(scene_, spec_, pose(index), static_cast<int>(index));
  }
  PoseSE3 pose(std::size_t index) const {
    return ground_truth_pose(spec_, static_cast<int>(index));
  }
  Trajectory poses() const {
    Trajectory t;
    for (std::size_t i = 0; i < size(); ++i) t.push_back(pose(i));
    return t;
  }
  const Scene& scene() const { return scene_; }
  const SynthSpec& spec() const { return spec_; }

 private:
  SynthSpec spec_;
  Scene scene_;
};

// ---------------------------------------------------------------------------
// Per-frame bookkeeping

struct FrameStats {
  int frame = 0;
  std::size_t raw_points = 0;
  std::size_t oriented_points = 0;
  std::size_t planar_points = 0;
  OdometryResult odometry;
  FusionStats fusion;
  std::size_t blocks_extracted = 0;
  std::size_t live_triangles = 0;
  std::size_t store_voxels = 0;
  std::size_t deleted_voxels = 0;
  double ms_features = 0.0;
  double ms_odometry = 0.0;
  double ms_fusion = 0.0;
  double ms_meshing = 0.0;
  double ms_maintain = 0.0;
  double ms_total = 0.0;
};

struct RunOutput {
  Trajectory trajectory;
  TriangleMesh mesh;
  std::vector<FrameStats> frames;
  bool degraded = false;  // any fallback or degenerate solve after frame 0

  // Final voxel-store counters.
  std::size_t voxels = 0;
  std::uint64_t insert_attempts = 0;
  std::uint64_t dropped = 0;
  double dropout_percent = 0.0;
};

// ---------------------------------------------------------------------------
// Pipeline

class Pipeline {
 public:
  explicit Pipeline(const RunConfig& cfg)
      : cfg_(cfg),
        store_(cfg.map_capacity, cfg.strategy, cfg.resolution,
               cfg.probe_budget),
        directory_(cfg.directory_capacity, ProbeStrategy::robin_hood),
        index_(cfg.search_cell) {
    cfg_.validate();
    const int bv = std::max(
        1, static_cast<int>(std::round(cfg.block_size / cfg.resolution)));
    mesh_params_.block_vx = bv;
    mesh_params_.block_vy = bv;
    mesh_params_.w_extract = cfg.w_extract;
    mesh_params_.alpha = cfg.alpha;
  }

  // Runs one scan (sensor-frame points) through the full loop. When
  // `pose_override` is given the odometry stage is skipped and the scan is
  // integrated at that pose (mapping-only replay).
  FrameStats process_scan(const std::vector<Vec3>& raw,
                          const std::optional<PoseSE3>& pose_override =
                              std::nullopt) {
    using clock = std::chrono::steady_clock;
    const auto ms_since = [](clock::time_point t0) {
      return std::chrono::duration<double, std::milli>(clock::now() - t0)
          .count();
    };
    const auto frame_start = clock::now();

    FrameStats st;
    st.frame = frame_;
    st.raw_points = raw.size();

    // Normals and curvature, in the sensor frame.
    auto t0 = clock::now();
    NormalEstimationParams np;
    np.k = cfg_.knn;
    np.cell_size = cfg_.feature_cell;
    np.range_min = cfg_.range_min;
    np.range_max = cfg_.range_max;
    np.sensor_origin = Vec3::Zero();
    np.threads = cfg_.threads;
    const OrientedPointCloud oriented = estimate_normals(raw, np);
    const OrientedPointCloud planar =
        select_planar(oriented, cfg_.curvature_threshold);
    st.oriented_points = oriented.size();
    st.planar_points = planar.size();
    st.ms_features = ms_since(t0);

    // Pose: override > anchored first frame > point-to-mesh alignment.
    t0 = clock::now();
    PoseSE3 pose;
    if (pose_override) {
      pose = *pose_override;
      st.odometry.pose = pose;
      st.odometry.converged = true;
    } else if (frame_ == 0 || index_.size() == 0) {
      pose = frame_ == 0
                 ? cfg_.initial_pose.value_or(PoseSE3::identity())
                 : prediction();
      st.odometry.pose = pose;
      st.odometry.fallback = frame_ != 0;
    } else {
      OdometryConfig oc;
      oc.cos_threshold = cfg_.cos_threshold;
      oc.max_p2m = cfg_.max_p2m;
      oc.search_cell = cfg_.search_cell;
      oc.max_iterations = cfg_.icp_iterations;
      oc.convergence_eps = cfg_.icp_eps;
      oc.min_correspondences = cfg_.min_correspondences;
      oc.max_halvings = cfg_.max_halvings;
      oc.threads = cfg_.threads;
      st.odometry = solve_icp(planar, index_, prediction(), oc);
      pose = st.odometry.pose;
    }
    poses_.push_back(pose);
    if (frame_ > 0 && (st.odometry.fallback || st.odometry.degenerate))
      degraded_ = true;
    st.ms_odometry = ms_since(t0);

    // Fuse the oriented scan; every touched voxel is reported to the block
    // directory so the mesher knows what changed and how tall each block is.
    t0 = clock::now();
    FusionParams fp;
    fp.h = cfg_.fusion_h;
    fp.lambda_n = cfg_.fusion_lambda_n;
    fp.l = cfg_.fusion_cube;
    fp.w_min = cfg_.weight_floor;
    fp.threads = cfg_.threads;
    store_.set_phase(StorePhase::integrate);
    st.fusion = integrate_scan(
        store_, oriented, pose, static_cast<std::uint32_t>(frame_), fp,
        [&](int, const VoxelKey& key, bool fresh) {
          register_update(directory_, block_of(key, mesh_params_), key.z,
                          fresh);
        });
    store_.set_phase(StorePhase::idle);
    st.ms_fusion = ms_since(t0);

    // Re-polygonise dirty blocks once enough of the map has changed.
    t0 = clock::now();
    store_.set_phase(StorePhase::extract);
    const ExtractionPlan plan = plan_extraction(
        directory_, {}, cfg_.alpha, static_cast<std::uint32_t>(frame_));
    st.blocks_extracted = extract_and_merge(plan.blocks);
    store_.set_phase(StorePhase::idle);
    st.live_triangles = mesh_.live_triangles();
    st.ms_meshing = ms_since(t0);

    // Retire voxels far behind the sensor, flushing their blocks to the mesh
    // first so the surface outlives the map memory.
    t0 = clock::now();
    if (cfg_.deletion && frame_ > 0 && frame_ % cfg_.maintain_every == 0)
      st.deleted_voxels = maintain(pose);
    st.ms_maintain = ms_since(t0);

    st.store_voxels = store_.size();
    st.ms_total = ms_since(frame_start);
    ++frame_;
    return st;
  }

  const Trajectory& trajectory() const { return poses_; }
  VoxelHashMap& store() { return store_; }
  const VoxelHashMap& store() const { return store_; }
  BlockDirectory& directory() { return directory_; }
  const MeshMap& mesh_map() const { return mesh_; }
  TriangleMesh mesh() const { return mesh_.to_mesh(); }
  const PlaneIndex& plane_index() const { return index_; }
  int frame() const { return frame_; }
  bool degraded() const { return degraded_; }
  const RunConfig& config() const { return cfg_; }

 private:
  PoseSE3 prediction() const {
    const std::size_t n = poses_.size();
    if (n == 0) return PoseSE3::identity();
    if (n == 1) return poses_[0];
    return predict_pose(poses_[n - 1], poses_[n - 2]);
  }

  // Extracts the given blocks (in parallel), swaps the fragments into the
  // mesh in deterministic block order, and keeps the facet index in sync.
  std::size_t extract_and_merge(const std::vector<BlockKey>& blocks) {
    if (blocks.empty()) return 0;
    std::vector<MeshFragment> fragments(blocks.size());
    parallel_chunks(blocks.size(), 1, cfg_.threads,
                    [&](std::size_t, std::size_t begin, std::size_t end) {
                      for (std::size_t i = begin; i < end; ++i) {
                        const auto entry = directory_.find(blocks[i]);
                        if (!entry) continue;
                        fragments[i] = extract_block(
                            store_, blocks[i], entry->value.z_min,
                            entry->value.z_max, mesh_params_);
                      }
                    });
    for (auto& frag : fragments) {
      const auto delta = mesh_.replace_block(frag);
      for (int id : delta.removed) index_.remove(id);
      for (int id : delta.added)
        index_.add(id, mesh_.facet_centroid(id), mesh_.facet(id).normal);
    }
    return blocks.size();
  }

  std::size_t maintain(const PoseSE3& pose) {
    // Flush every block that is about to lose voxels, so the last surface
    // estimate is in the mesh before the SDF data goes away.
    std::vector<BlockKey> doomed;
    store_.for_each([&](const Voxel& v) {
      if (VoxelHashMap::expired(v.key, v.data, store_.resolution(), pose,
                                static_cast<std::uint32_t>(frame_),
                                cfg_.retire_radius, cfg_.min_age))
        doomed.push_back(block_of(v.key, mesh_params_));
    });
    if (doomed.empty()) return 0;
    std::sort(doomed.begin(), doomed.end());
    doomed.erase(std::unique(doomed.begin(), doomed.end(),
                             [](const BlockKey& a, const BlockKey& b) {
                               return a == b;
                             }),
                 doomed.end());

    store_.set_phase(StorePhase::extract);
    const ExtractionPlan flush = plan_extraction(
        directory_, doomed, 1e300, static_cast<std::uint32_t>(frame_));
    extract_and_merge(flush.blocks);

    store_.set_phase(StorePhase::maintain);
    const std::size_t removed = store_.delete_expired(
        pose, static_cast<std::uint32_t>(frame_), cfg_.retire_radius,
        cfg_.min_age, [&](const Voxel& v) {
          directory_.get_or_insert_update(
              block_of(v.key, mesh_params_),
              [](VoxelBlock& b, bool) { --b.voxel_count; });
        });
    store_.set_phase(StorePhase::idle);

    // Blocks whose voxels are all gone leave the directory; their facets
    // stay in the mesh. (Remaining blocks keep their old z bounds, which is
    // only ever an over-estimate.)
    directory_.erase_if(
        [](const BlockDirectory::Entry& e) { return e.value.voxel_count <= 0; },
        [](const BlockDirectory::Entry&) {});
    return removed;
  }

  RunConfig cfg_;
  VoxelHashMap store_;
  BlockDirectory directory_;
  MeshMap mesh_;
  PlaneIndex index_;
  MeshingParams mesh_params_;
  Trajectory poses_;
  int frame_ = 0;
  bool degraded_ = false;
};

// Replays a source through a fresh pipeline. When `pose_overrides` is given
// (one pose per scan) the run is mapping-only. `log`, when non-null, gets a
// one-line progress report per frame.
inline RunOutput run_pipeline(const RunConfig& cfg, const ScanSource& source,
                              const Trajectory* pose_overrides = nullptr,
                              std::ostream* log = nullptr) {
  if (pose_overrides && pose_overrides->size() < source.size())
    throw std::invalid_argument("pose overrides shorter than scan source");
  Pipeline pipeline(cfg);
  std::size_t n = source.size();
  if (cfg.max_frames >= 0)
    n = std::min(n, static_cast<std::size_t>(cfg.max_frames));

  RunOutput out;
  out.frames.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::optional<PoseSE3> forced;
    if (pose_overrides) forced = (*pose_overrides)[i];
    const FrameStats st = pipeline.process_scan(source.scan(i), forced);
    if (log) {
      (*log) << "frame " << st.frame << ": points=" << st.oriented_points
             << " corr=" << st.odometry.correspondences
             << " rms=" << st.odometry.rms
             << " voxels=" << st.store_voxels
             << " tris=" << st.live_triangles << " ms=" << st.ms_total
             << (st.odometry.fallback ? " [fallback]" : "")
             << (st.odometry.degenerate ? " [degenerate]" : "") << "\n";
    }
    out.frames.push_back(st);
  }
  out.trajectory = pipeline.trajectory();
  out.mesh = pipeline.mesh();
  out.degraded = pipeline.degraded();
  out.voxels = pipeline.store().size();
  out.insert_attempts = pipeline.store().attempt_count();
  out.dropped = pipeline.store().dropped_count();
  out.dropout_percent = pipeline.store().dropout_ratio();
  return out;
}

}  // namespace meshodom
