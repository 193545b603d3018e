#pragma once

// Frame-to-mesh registration. Each planar point is associated to the
// nearest mesh facet that agrees with its normal, and the pose is refined by
// Gauss-Newton on the point-to-plane residual of those facets, starting from
// a constant-velocity prediction. Degeneracy (ill-conditioned normal
// equations) and association starvation are reported, never papered over.

#include "meshodom/features.hpp"
#include "meshodom/geometry.hpp"
#include "meshodom/meshing.hpp"
#include "meshodom/parallel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

namespace meshodom {

using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

struct OdometryConfig {
  double cos_threshold = 0.98;  // |n_point . n_facet| gate
  double max_p2m = 1.0;         // association distance gate (m)
  double search_cell = 0.2;     // anchor-grid pitch (m)
  int max_iterations = 30;
  double convergence_eps = 1e-5;
  int min_correspondences = 30;
  int max_halvings = 4;        // step damping attempts per iteration
  double condition_limit = 1e12;
  int threads = 1;
};

// Uniform-grid index over facet anchors (centroids) with their normals.
// Lookup expands Chebyshev shells of cells around the query until the
// nearest normal-compatible anchor is provably found.
class PlaneIndex {
 public:
  struct Plane {
    Vec3 anchor = Vec3::Zero();
    Vec3 normal = Vec3::Zero();
    std::uint64_t cell = 0;
    bool live = false;
  };

  explicit PlaneIndex(double cell_size = 0.2) : cell_(cell_size) {}

  double cell_size() const { return cell_; }
  std::size_t size() const { return live_; }

  void add(int id, const Vec3& anchor, const Vec3& normal) {
    if (id >= static_cast<int>(planes_.size()))
      planes_.resize(static_cast<std::size_t>(id) + 1);
    Plane& pl = planes_[static_cast<std::size_t>(id)];
    if (pl.live) remove(id);
    pl.anchor = anchor;
    pl.normal = normal;
    pl.cell = cell_of(anchor);
    pl.live = true;
    grid_[pl.cell].push_back(id);
    ++live_;
  }

  void remove(int id) {
    if (id < 0 || id >= static_cast<int>(planes_.size())) return;
    Plane& pl = planes_[static_cast<std::size_t>(id)];
    if (!pl.live) return;
    auto& bucket = grid_[pl.cell];
    for (std::size_t i = 0; i < bucket.size(); ++i) {
      if (bucket[i] == id) {
        bucket[i] = bucket.back();
        bucket.pop_back();
        break;
      }
    }
    if (bucket.empty()) grid_.erase(pl.cell);
    pl.live = false;
    --live_;
  }

  void clear() {
    planes_.clear();
    grid_.clear();
    live_ = 0;
  }

  struct Hit {
    int id = -1;
    Vec3 anchor = Vec3::Zero();
    Vec3 normal = Vec3::Zero();
    double p2m = 0.0;  // signed plane distance at query time
  };

  // Nearest (by anchor distance) live plane whose normal passes the cosine
  // gate, provided its plane distance is within max_p2m. Ties on distance
  // break by ascending id, so the result is order-independent.
  std::optional<Hit> nearest_compatible(const Vec3& q, const Vec3& n_q,
                                        double cos_threshold,
                                        double max_p2m) const {
    const std::int32_t cx = floor_div_coord(q.x(), cell_);
    const std::int32_t cy = floor_div_coord(q.y(), cell_);
    const std::int32_t cz = floor_div_coord(q.z(), cell_);
    const int max_ring =
        static_cast<int>(std::ceil(max_p2m / cell_)) + 1;

    int best_id = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (int ring = 0; ring <= max_ring; ++ring) {
      if (best_id >= 0) {
        // Cells in ring r are at least (r-1)*cell away from q.
        const double reach = static_cast<double>(ring - 1) * cell_;
        if (reach > 0.0 && reach * reach >= best_d2) break;
      }
      for (std::int32_t dz = -ring; dz <= ring; ++dz) {
        for (std::int32_t dy = -ring; dy <= ring; ++dy) {
          for (std::int32_t dx = -ring; dx <= ring; ++dx) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring)
              continue;
            const auto it =
                grid_.find(pack(cx + dx, cy + dy, cz + dz));
            if (it == grid_.end()) continue;
            for (int id : it->second) {
              const Plane& pl = planes_[static_cast<std::size_t>(id)];
              if (std::abs(n_q.dot(pl.normal)) < cos_threshold) continue;
              const double d2 = (pl.anchor - q).squaredNorm();
              if (d2 < best_d2 || (d2 == best_d2 && id < best_id)) {
                best_d2 = d2;
                best_id = id;
              }
            }
          }
        }
      }
    }
    if (best_id < 0) return std::nullopt;
    const Plane& pl = planes_[static_cast<std::size_t>(best_id)];
    const double p2m = pl.normal.dot(q - pl.anchor);
    if (std::abs(p2m) > max_p2m) return std::nullopt;
    Hit hit;
    hit.id = best_id;
    hit.anchor = pl.anchor;
    hit.normal = pl.normal;
    hit.p2m = p2m;
    return hit;
  }

 private:
  static std::uint64_t pack(std::int32_t x, std::int32_t y, std::int32_t z) {
    return detail::pack_cell(x, y, z);
  }
  std::uint64_t cell_of(const Vec3& p) const {
    return pack(floor_div_coord(p.x(), cell_),
                floor_div_coord(p.y(), cell_),
                floor_div_coord(p.z(), cell_));
  }

  double cell_;
  std::vector<Plane> planes_;
  std::unordered_map<std::uint64_t, std::vector<int>> grid_;
  std::size_t live_ = 0;
};

struct Correspondence {
  int point = -1;
  int facet = -1;
  Vec3 anchor = Vec3::Zero();
  Vec3 normal = Vec3::Zero();
  double residual = 0.0;
};

// Associates each point of the posed cloud to a facet under the dual gate.
// Points and normals are given in the sensor frame; `pose` maps them to the
// map frame.
inline std::vector<Correspondence> associate(
    const OrientedPointCloud& cloud, const PoseSE3& pose,
    const PlaneIndex& index, const OdometryConfig& cfg) {
  std::vector<std::optional<Correspondence>> slots(cloud.points.size());
  parallel_chunks(
      cloud.points.size(), 1024, cfg.threads,
      [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
          const Vec3 q = pose * cloud.points[i].position;
          const Vec3 n_q = pose.rotation * cloud.points[i].normal;
          const auto hit = index.nearest_compatible(
              q, n_q, cfg.cos_threshold, cfg.max_p2m);
          if (!hit) continue;
          Correspondence c;
          c.point = static_cast<int>(i);
          c.facet = hit->id;
          c.anchor = hit->anchor;
          c.normal = hit->normal;
          c.residual = hit->p2m;
          slots[i] = c;
        }
      });
  std::vector<Correspondence> out;
  out.reserve(cloud.points.size());
  for (const auto& s : slots)
    if (s) out.push_back(*s);
  return out;
}

struct OdometryResult {
  PoseSE3 pose;             // map_T_sensor
  bool converged = false;
  bool degenerate = false;  // normal equations ill-conditioned
  bool fallback = false;    // too few correspondences; pose is the prediction
  int iterations = 0;
  std::size_t correspondences = 0;
  double rms = 0.0;
  double condition = 0.0;
};

// Jacobian row of the point-to-plane residual n.(T q - a) w.r.t. a left
// increment Exp(xi) T: translational part n, rotational part (q x n) with q
// the point in the map frame.
inline Vec6 p2m_jacobian_row(const Vec3& q_map, const Vec3& n) {
  Vec6 j;
  j.head<3>() = n;
  j.tail<3>() = q_map.cross(n);
  return j;
}

namespace detail {

struct NormalEq {
  Mat6 h = Mat6::Zero();
  Vec6 g = Vec6::Zero();
  double sse = 0.0;
  std::size_t rows = 0;
};

inline NormalEq accumulate(const OrientedPointCloud& cloud,
                           const std::vector<Correspondence>& matches,
                           const PoseSE3& pose, int threads) {
  return chunked_reduce<NormalEq>(
      matches.size(), 1024, threads, NormalEq{},
      [&](std::size_t begin, std::size_t end) {
        NormalEq p;
        for (std::size_t i = begin; i < end; ++i) {
          const Correspondence& m = matches[i];
          const Vec3 q =
              pose * cloud.points[static_cast<std::size_t>(m.point)].position;
          const double e = m.normal.dot(q - m.anchor);
          const Vec6 j = p2m_jacobian_row(q, m.normal);
          p.h.noalias() += j * j.transpose();
          p.g.noalias() += j * e;
          p.sse += e * e;
          ++p.rows;
        }
        return p;
      },
      [](NormalEq a, const NormalEq& b) {
        a.h += b.h;
        a.g += b.g;
        a.sse += b.sse;
        a.rows += b.rows;
        return a;
      });
}

inline double sse_at(const OrientedPointCloud& cloud,
                     const std::vector<Correspondence>& matches,
                     const PoseSE3& pose, int threads) {
  struct Acc {
    double sse = 0.0;
  };
  return chunked_reduce<double>(
      matches.size(), 1024, threads, 0.0,
      [&](std::size_t begin, std::size_t end) {
        double s = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
          const Correspondence& m = matches[i];
          const Vec3 q =
              pose * cloud.points[static_cast<std::size_t>(m.point)].position;
          const double e = m.normal.dot(q - m.anchor);
          s += e * e;
        }
        return s;
      },
      [](double a, double b) { return a + b; });
}

}  // namespace detail

// Registers the planar cloud (sensor frame) against the facet index,
// starting from `prediction`. Re-associates at every iteration; each
// Gauss-Newton step is halved until the residual (on the step's own
// correspondences) does not increase.
inline OdometryResult solve_icp(const OrientedPointCloud& cloud,
                                const PlaneIndex& index,
                                const PoseSE3& prediction,
                                const OdometryConfig& cfg) {
  OdometryResult result;
  result.pose = prediction;

  PoseSE3 t = prediction;
  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    result.iterations = iter + 1;
    const auto matches = associate(cloud, t, index, cfg);
    result.correspondences = matches.size();
    if (matches.size() <
        static_cast<std::size_t>(cfg.min_correspondences)) {
      result.fallback = true;
      result.pose = prediction;
      result.rms = 0.0;
      return result;
    }

    const auto eq = detail::accumulate(cloud, matches, t, cfg.threads);
    result.rms = std::sqrt(eq.sse / static_cast<double>(eq.rows));

    Eigen::SelfAdjointEigenSolver<Mat6> eig(eq.h);
    const double lmin = eig.eigenvalues()(0);
    const double lmax = eig.eigenvalues()(5);
    result.condition = lmin > 0.0 ? lmax / lmin
                                  : std::numeric_limits<double>::infinity();
    if (!(lmin > 0.0) || result.condition > cfg.condition_limit) {
      result.degenerate = true;
      result.pose = t;
      return result;
    }

    const Vec6 delta = eq.h.ldlt().solve(-eq.g);

    double scale = 1.0;
    bool accepted = false;
    PoseSE3 t_next = t;
    double sse_next = eq.sse;
    for (int h = 0; h <= cfg.max_halvings; ++h) {
      const PoseSE3 candidate = compose(exp_se3(scale * delta), t);
      const double sse_cand =
          detail::sse_at(cloud, matches, candidate, cfg.threads);
      if (sse_cand <= eq.sse) {
        t_next = candidate;
        sse_next = sse_cand;
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) {
      // No step length reduces the residual: converged to the precision the
      // correspondences support.
      result.converged = true;
      result.pose = t;
      result.rms = std::sqrt(eq.sse / static_cast<double>(eq.rows));
      return result;
    }

    t = t_next;
    if ((scale * delta).norm() < cfg.convergence_eps) {
      result.converged = true;
      break;
    }
    (void)sse_next;
  }

  result.pose = t;
  const auto matches = associate(cloud, t, index, cfg);
  if (!matches.empty()) {
    const auto eq = detail::accumulate(cloud, matches, t, cfg.threads);
    result.rms = std::sqrt(eq.sse / static_cast<double>(eq.rows));
    result.correspondences = matches.size();
  }
  return result;
}

// Constant-velocity prediction: previous pose advanced by the last
// inter-frame motion.
inline PoseSE3 predict_pose(const PoseSE3& prev, const PoseSE3& prev2) {
  return compose(prev, compose(prev2.inverse(), prev));
}

}  // namespace meshodom
