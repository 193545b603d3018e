#pragma once

// Passive SDF fusion: every measured point stamps a projective signed
// distance into the l^3 cube of voxels around it, blended by a hybrid weight
// that combines proximity and normal agreement. Voxels keep a running
// weighted mean that is algebraically identical to the batch weighted
// average of all increments they ever received.

#include "meshodom/features.hpp"
#include "meshodom/geometry.hpp"
#include "meshodom/hashstore.hpp"
#include "meshodom/parallel.hpp"

#include <atomic>
#include <cmath>
#include <cstdint>

namespace meshodom {

struct FusionParams {
  double h = 0.05;        // Gaussian bandwidth of the proximity term (m^2)
  double lambda_n = 0.2;  // weight of the normal-agreement term
  int l = 3;              // influence cube edge, in voxels (odd)
  double w_min = 1e-4;    // floor keeping weights positive and W monotone
  int threads = 1;
};

struct FusionStats {
  std::size_t points = 0;
  std::size_t voxel_updates = 0;
  std::size_t fresh_voxels = 0;
  std::size_t dropped = 0;
};

// One running-mean step (the whole fusion algebra lives here): given the
// accumulated (sdf, weight) and a new increment (d, w), returns the state
// after folding it in. Equivalent to the batch weighted mean over all
// increments seen so far.
inline void running_update(double& sdf, double& weight, double d, double w) {
  sdf += w * (d - sdf) / (weight + w);
  weight += w;
}

// Signed projective distance and hybrid weight of point (p, n_p) at a voxel
// with centre v and current normal n_v. d is measured along the *point*
// normal; the weight couples a Gaussian of the Euclidean distance with the
// alignment of the two normals.
inline std::pair<double, double> point_increment(const Vec3& v, const Vec3& p,
                                                 const Vec3& n_p,
                                                 const Vec3& n_v, double h,
                                                 double lambda_n) {
  const Vec3 off = v - p;
  const double d = n_p.dot(off);
  const double w = std::exp(-off.squaredNorm() / h) + lambda_n * n_p.dot(n_v);
  return {d, w};
}

namespace detail {

// Applies one world-frame point to the store; returns per-voxel outcomes via
// the registrar. This must be called by exactly one thread per voxel key per
// point (owner sharding guarantees it), so per-key update order equals point
// order and fused values are bit-identical for any thread count.
template <class Registrar>
inline void fuse_point(VoxelHashMap& store, const Vec3& p, const Vec3& n,
                       std::uint32_t frame, const FusionParams& params,
                       int tid, int nthreads, bool shard, FusionStats& stats,
                       Registrar&& registrar) {
  const Vec3 res = store.resolution();
  const VoxelKey base = voxelize(p, res);
  const int half = params.l / 2;
  for (int dz = -half; dz <= half; ++dz) {
    for (int dy = -half; dy <= half; ++dy) {
      for (int dx = -half; dx <= half; ++dx) {
        const VoxelKey key{base.x + dx, base.y + dy, base.z + dz};
        if (shard &&
            static_cast<int>(store.home_slot(key) %
                             static_cast<std::size_t>(nthreads)) != tid)
          continue;
        const Vec3 center = voxel_center(key, res);
        bool was_fresh = false;
        const auto result = store.get_or_insert_update(
            key, [&](VoxelData& vox, bool fresh) {
              was_fresh = fresh;
              const Vec3 n_v =
                  fresh || vox.weight <= 0.0
                      ? n
                      : vox.normal.cast<double>().normalized();
              auto [d, w] =
                  point_increment(center, p, n, n_v, params.h, params.lambda_n);
              if (w < params.w_min) w = params.w_min;
              const double w_prev = vox.weight;
              running_update(vox.sdf, vox.weight, d, w);
              Vec3 blended = w_prev * n_v + w * n;
              const double len = blended.norm();
              if (len > 1e-12)
                vox.normal = (blended / len).cast<float>();
              else if (fresh)
                vox.normal = n.cast<float>();
              vox.last_frame = frame;
            });
        if (result.outcome == InsertOutcome::dropped) {
          ++stats.dropped;
        } else {
          ++stats.voxel_updates;
          if (was_fresh) ++stats.fresh_voxels;
          registrar(tid, key, was_fresh);
        }
      }
    }
  }
}

struct NullRegistrar {
  void operator()(int, const VoxelKey&, bool) const {}
};

}  // namespace detail

// Serial single-point entry, mainly for tests and small tools.
template <class Registrar = detail::NullRegistrar>
inline FusionStats integrate_point(VoxelHashMap& store,
                                   const OrientedPoint& point,
                                   std::uint32_t frame,
                                   const FusionParams& params,
                                   Registrar&& registrar = {}) {
  FusionStats stats;
  stats.points = 1;
  detail::fuse_point(store, point.position, point.normal, frame, params, 0, 1,
                     false, stats, registrar);
  return stats;
}

// Fuses a sensor-frame cloud posed at `pose` into the store. Sensor-to-world
// transforms are applied once per point up front. With threads > 1 the work
// is owner-sharded: every thread walks all points but only applies updates
// to voxels whose home slot it owns, preserving per-voxel update order.
template <class Registrar = detail::NullRegistrar>
inline FusionStats integrate_scan(VoxelHashMap& store,
                                  const OrientedPointCloud& cloud,
                                  const PoseSE3& pose, std::uint32_t frame,
                                  const FusionParams& params,
                                  Registrar&& registrar = {}) {
  FusionStats total;
  total.points = cloud.points.size();
  if (cloud.points.empty()) return total;

  std::vector<Vec3> positions(cloud.points.size());
  std::vector<Vec3> normals(cloud.points.size());
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    positions[i] = pose * cloud.points[i].position;
    normals[i] = pose.rotation * cloud.points[i].normal;
  }

  const int nthreads = clamp_threads(params.threads);
  if (nthreads == 1) {
    for (std::size_t i = 0; i < positions.size(); ++i)
      detail::fuse_point(store, positions[i], normals[i], frame, params, 0, 1,
                         false, total, registrar);
    return total;
  }

  std::vector<FusionStats> partial(static_cast<std::size_t>(nthreads));
  run_sharded(nthreads, [&](int tid) {
    FusionStats& mine = partial[static_cast<std::size_t>(tid)];
    for (std::size_t i = 0; i < positions.size(); ++i)
      detail::fuse_point(store, positions[i], normals[i], frame, params, tid,
                         nthreads, true, mine, registrar);
  });
  for (const auto& p : partial) {
    total.voxel_updates += p.voxel_updates;
    total.fresh_voxels += p.fresh_voxels;
    total.dropped += p.dropped;
  }
  return total;
}

}  // namespace meshodom
