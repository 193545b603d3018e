#pragma once

// Per-scan preprocessing: range gating, k-nearest-neighbour normal
// estimation through the covariance eigendecomposition, curvature scoring
// and planar-point selection.

#include "meshodom/geometry.hpp"
#include "meshodom/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <unordered_map>
#include <vector>

namespace meshodom {

struct OrientedPoint {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::Zero();
  double curvature = 0.0;
};

struct OrientedPointCloud {
  std::vector<OrientedPoint> points;
  Vec3 sensor_origin = Vec3::Zero();

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct NormalEstimationParams {
  int k = 10;                 // neighbourhood size, including the query point
  double cell_size = 0.2;     // search-grid pitch; ~2x the map resolution
  double range_min = 1.0;     // returns closer than this are sensor clutter
  double range_max = 100.0;
  Vec3 sensor_origin = Vec3::Zero();
  int threads = 1;
};

namespace detail {

// 21-bit biased packing of a grid cell into one map key; covers +-1e6 cells.
inline std::uint64_t pack_cell(std::int32_t x, std::int32_t y,
                               std::int32_t z) {
  const std::uint64_t bias = 1u << 20;
  return ((static_cast<std::uint64_t>(x) + bias) & 0x1FFFFF) |
         (((static_cast<std::uint64_t>(y) + bias) & 0x1FFFFF) << 21) |
         (((static_cast<std::uint64_t>(z) + bias) & 0x1FFFFF) << 42);
}

struct NeighborGrid {
  double cell = 0.2;
  std::unordered_map<std::uint64_t, std::vector<int>> cells;

  void build(const std::vector<Vec3>& pts, double cell_size) {
    cell = cell_size;
    cells.clear();
    cells.reserve(pts.size());
    for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
      const auto& p = pts[static_cast<std::size_t>(i)];
      cells[pack_cell(floor_div_coord(p.x(), cell),
                      floor_div_coord(p.y(), cell),
                      floor_div_coord(p.z(), cell))]
          .push_back(i);
    }
  }

  // Indices of the k nearest points to q (the query itself included when it
  // is a member of the cloud). Expanding Chebyshev rings with a conservative
  // stopping bound; candidate order is deterministic.
  void knn(const std::vector<Vec3>& pts, const Vec3& q, int k,
           std::vector<std::pair<double, int>>& out) const {
    out.clear();
    const std::int32_t cx = floor_div_coord(q.x(), cell);
    const std::int32_t cy = floor_div_coord(q.y(), cell);
    const std::int32_t cz = floor_div_coord(q.z(), cell);
    constexpr int kMaxRing = 16;
    for (int ring = 0; ring <= kMaxRing; ++ring) {
      for (std::int32_t dz = -ring; dz <= ring; ++dz) {
        for (std::int32_t dy = -ring; dy <= ring; ++dy) {
          for (std::int32_t dx = -ring; dx <= ring; ++dx) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring)
              continue;
            const auto it =
                cells.find(pack_cell(cx + dx, cy + dy, cz + dz));
            if (it == cells.end()) continue;
            for (int idx : it->second) {
              const double d2 =
                  (pts[static_cast<std::size_t>(idx)] - q).squaredNorm();
              out.emplace_back(d2, idx);
            }
          }
        }
      }
      if (static_cast<int>(out.size()) >= k) {
        std::nth_element(out.begin(), out.begin() + (k - 1), out.end());
        const double kth = std::sqrt(out[static_cast<std::size_t>(k - 1)].first);
        // Any point in an unvisited ring is at least (ring)*cell away from
        // every point of the centre cell.
        if (static_cast<double>(ring) * cell >= kth) break;
      }
    }
    const int keep = std::min<int>(k, static_cast<int>(out.size()));
    std::partial_sort(out.begin(), out.begin() + keep, out.end());
    out.resize(static_cast<std::size_t>(keep));
  }
};

}  // namespace detail

// Estimates one unit normal and a curvature score per surviving point.
// Points are dropped when outside the range gate, when fewer than five
// neighbours exist, or when the neighbourhood is degenerate (collinear or
// coincident samples). Normals are oriented toward the sensor origin.
inline OrientedPointCloud estimate_normals(const std::vector<Vec3>& raw,
                                           const NormalEstimationParams& params) {
  OrientedPointCloud cloud;
  cloud.sensor_origin = params.sensor_origin;
  if (raw.empty()) return cloud;

  std::vector<Vec3> gated;
  gated.reserve(raw.size());
  for (const auto& p : raw) {
    const double r = (p - params.sensor_origin).norm();
    if (r < params.range_min || r > params.range_max) continue;
    gated.push_back(p);
  }
  if (gated.empty()) return cloud;

  detail::NeighborGrid grid;
  grid.build(gated, params.cell_size);

  const int k = std::max(3, params.k);
  std::vector<OrientedPoint> results(gated.size());
  std::vector<std::uint8_t> keep(gated.size(), 0);

  parallel_chunks(
      gated.size(), 256, params.threads,
      [&](std::size_t, std::size_t begin, std::size_t end) {
        std::vector<std::pair<double, int>> nbrs;
        nbrs.reserve(64);
        for (std::size_t i = begin; i < end; ++i) {
          const Vec3& q = gated[i];
          grid.knn(gated, q, k, nbrs);
          if (static_cast<int>(nbrs.size()) < 5) continue;

          Vec3 mean = Vec3::Zero();
          for (const auto& [d2, idx] : nbrs)
            mean += gated[static_cast<std::size_t>(idx)];
          mean /= static_cast<double>(nbrs.size());

          Mat3 cov = Mat3::Zero();
          for (const auto& [d2, idx] : nbrs) {
            const Vec3 d = gated[static_cast<std::size_t>(idx)] - mean;
            cov += d * d.transpose();
          }
          cov /= static_cast<double>(nbrs.size());

          Eigen::SelfAdjointEigenSolver<Mat3> eig;
          eig.computeDirect(cov);
          Vec3 evals = eig.eigenvalues();  // ascending
          Mat3 evecs = eig.eigenvectors();
          // The closed-form solver smears coinciding roots by ~sqrt(eps),
          // which both blurs the normal direction (two smallest coincide)
          // and lifts the middle eigenvalue of rank-one neighbourhoods
          // above the collinearity gate; fall back to the iterative path.
          if (evals[2] > 0.0 && ((evals[1] - evals[0]) < 1e-12 * evals[2] ||
                                 evals[1] < 1e-7 * evals[2])) {
            eig.compute(cov);
            evals = eig.eigenvalues();
            evecs = eig.eigenvectors();
          }

          const double total = evals[0] + evals[1] + evals[2];
          if (!(total > 0.0)) continue;                 // coincident points
          if (evals[1] <= 1e-9 * evals[2]) continue;    // collinear spread

          Vec3 n = evecs.col(0);
          const double nn = n.norm();
          if (nn < 1e-12) continue;
          n /= nn;
          if (n.dot(params.sensor_origin - q) < 0.0) n = -n;

          OrientedPoint op;
          op.position = q;
          op.normal = n;
          op.curvature =
              std::clamp(std::max(evals[0], 0.0) / total, 0.0, 1.0 / 3.0);
          results[i] = op;
          keep[i] = 1;
        }
      });

  cloud.points.reserve(gated.size());
  for (std::size_t i = 0; i < gated.size(); ++i)
    if (keep[i]) cloud.points.push_back(results[i]);
  return cloud;
}

// Keeps points whose curvature is strictly below the threshold; input order
// is preserved.
inline OrientedPointCloud select_planar(const OrientedPointCloud& cloud,
                                        double curvature_threshold) {
  OrientedPointCloud out;
  out.sensor_origin = cloud.sensor_origin;
  out.points.reserve(cloud.points.size());
  for (const auto& p : cloud.points)
    if (p.curvature < curvature_threshold) out.points.push_back(p);
  return out;
}

}  // namespace meshodom
