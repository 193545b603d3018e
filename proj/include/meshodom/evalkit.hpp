#pragma once

// Trajectory and surface quality metrics. Relative odometry errors follow
// the standard segment-based protocol (100..800 m segments, every 10th
// start frame); absolute trajectory error aligns with a closed-form SE(3)
// fit first. Mesh quality compares area-uniform surface samples against the
// exact point-to-triangle distance of the other mesh.

#include "meshodom/features.hpp"
#include "meshodom/geometry.hpp"
#include "meshodom/meshing.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace meshodom {

using Trajectory = std::vector<PoseSE3>;

class eval_error : public std::runtime_error {
 public:
  explicit eval_error(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Relative (drift) errors

struct RelativeErrors {
  double translation_percent = 0.0;   // mean over segments, in %
  double rotation_deg_per_100m = 0.0;
  std::size_t segments = 0;
};

namespace detail {

inline std::vector<double> path_distances(const Trajectory& t) {
  std::vector<double> d(t.size(), 0.0);
  for (std::size_t i = 1; i < t.size(); ++i)
    d[i] = d[i - 1] + (t[i].translation - t[i - 1].translation).norm();
  return d;
}

inline std::ptrdiff_t first_past(const std::vector<double>& dist,
                                 std::size_t start, double len) {
  for (std::size_t i = start; i < dist.size(); ++i)
    if (dist[i] > dist[start] + len) return static_cast<std::ptrdiff_t>(i);
  return -1;
}

inline double rotation_angle(const Mat3& r) {
  return so3_log(r).norm();
}

}  // namespace detail

// Segment-based relative errors of `est` against `gt` (same length, same
// frame indexing). Throws eval_error when the ground-truth path is too
// short to form a single 100 m segment.
inline RelativeErrors relative_errors(const Trajectory& est,
                                      const Trajectory& gt) {
  if (est.size() != gt.size())
    throw eval_error("trajectory length mismatch: est " +
                     std::to_string(est.size()) + " vs gt " +
                     std::to_string(gt.size()));
  if (gt.size() < 2) throw eval_error("trajectory too short to evaluate");

  const auto dist = detail::path_distances(gt);
  constexpr int kStep = 10;
  constexpr double kLengths[] = {100, 200, 300, 400, 500, 600, 700, 800};

  double t_sum = 0.0, r_sum = 0.0;
  std::size_t n = 0;
  for (std::size_t first = 0; first < gt.size();
       first += static_cast<std::size_t>(kStep)) {
    for (double len : kLengths) {
      const std::ptrdiff_t last = detail::first_past(dist, first, len);
      if (last < 0) break;
      const auto j = static_cast<std::size_t>(last);
      const PoseSE3 gt_rel = compose(gt[first].inverse(), gt[j]);
      const PoseSE3 est_rel = compose(est[first].inverse(), est[j]);
      const PoseSE3 err = compose(est_rel.inverse(), gt_rel);
      t_sum += err.translation.norm() / len;
      r_sum += detail::rotation_angle(err.rotation) / len;
      ++n;
    }
  }
  if (n == 0)
    throw eval_error(
        "trajectory too short: no 100 m segment in the ground truth");

  RelativeErrors out;
  out.segments = n;
  out.translation_percent = 100.0 * t_sum / static_cast<double>(n);
  out.rotation_deg_per_100m =
      (r_sum / static_cast<double>(n)) * (180.0 / M_PI) * 100.0;
  return out;
}

// ---------------------------------------------------------------------------
// Absolute trajectory error

// RMSE of position residuals after the best rigid (no-scale) alignment of
// est onto gt.
inline double ate_rmse(const Trajectory& est, const Trajectory& gt) {
  if (est.size() != gt.size())
    throw eval_error("trajectory length mismatch: est " +
                     std::to_string(est.size()) + " vs gt " +
                     std::to_string(gt.size()));
  if (est.empty()) throw eval_error("empty trajectory");

  Eigen::Matrix3Xd src(3, est.size()), dst(3, gt.size());
  for (std::size_t i = 0; i < est.size(); ++i) {
    src.col(static_cast<Eigen::Index>(i)) = est[i].translation;
    dst.col(static_cast<Eigen::Index>(i)) = gt[i].translation;
  }
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, false);
  const Mat3 r = t.topLeftCorner<3, 3>();
  const Vec3 p = t.topRightCorner<3, 1>();

  double sse = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const Vec3 res = dst.col(static_cast<Eigen::Index>(i)) -
                     (r * src.col(static_cast<Eigen::Index>(i)) + p);
    sse += res.squaredNorm();
  }
  return std::sqrt(sse / static_cast<double>(est.size()));
}

// ---------------------------------------------------------------------------
// Surface sampling and exact mesh distance

// Area-uniform deterministic surface sampling (fixed seed => fixed points).
inline std::vector<Vec3> sample_mesh_surface(const TriangleMesh& mesh,
                                             std::size_t count,
                                             std::uint64_t seed) {
  std::vector<Vec3> samples;
  if (mesh.triangles.empty() || count == 0) return samples;

  std::vector<double> cum(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    total += 0.5 *
             (mesh.vertices[static_cast<std::size_t>(t[1])] -
              mesh.vertices[static_cast<std::size_t>(t[0])])
                 .cross(mesh.vertices[static_cast<std::size_t>(t[2])] -
                        mesh.vertices[static_cast<std::size_t>(t[0])])
                 .norm();
    cum[i] = total;
  }
  if (total <= 0.0) return samples;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  samples.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const double pick = uni(rng) * total;
    const auto it = std::lower_bound(cum.begin(), cum.end(), pick);
    const std::size_t ti = static_cast<std::size_t>(
        std::min<std::ptrdiff_t>(it - cum.begin(),
                                 static_cast<std::ptrdiff_t>(cum.size()) - 1));
    const auto& t = mesh.triangles[ti];
    const Vec3& a = mesh.vertices[static_cast<std::size_t>(t[0])];
    const Vec3& b = mesh.vertices[static_cast<std::size_t>(t[1])];
    const Vec3& c = mesh.vertices[static_cast<std::size_t>(t[2])];
    const double r1 = std::sqrt(uni(rng));
    const double r2 = uni(rng);
    samples.push_back((1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c);
  }
  return samples;
}

// Exact point-to-mesh distance with a uniform grid over triangle bounding
// boxes and ring-by-ring lower-bound termination.
class MeshDistanceIndex {
 public:
  explicit MeshDistanceIndex(const TriangleMesh& mesh) : mesh_(&mesh) {
    double area = 0.0;
    for (const auto& t : mesh.triangles)
      area += 0.5 *
              (mesh.vertices[static_cast<std::size_t>(t[1])] -
               mesh.vertices[static_cast<std::size_t>(t[0])])
                  .cross(mesh.vertices[static_cast<std::size_t>(t[2])] -
                         mesh.vertices[static_cast<std::size_t>(t[0])])
                  .norm();
    const double mean_tri =
        mesh.triangles.empty()
            ? 0.1
            : area / static_cast<double>(mesh.triangles.size());
    cell_ = std::clamp(2.0 * std::sqrt(std::max(mean_tri, 1e-12)), 0.05, 2.0);

    for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
      const auto& t = mesh.triangles[i];
      const Vec3& a = mesh.vertices[static_cast<std::size_t>(t[0])];
      const Vec3& b = mesh.vertices[static_cast<std::size_t>(t[1])];
      const Vec3& c = mesh.vertices[static_cast<std::size_t>(t[2])];
      const Vec3 lo = a.cwiseMin(b).cwiseMin(c);
      const Vec3 hi = a.cwiseMax(b).cwiseMax(c);
      for (std::int32_t z = floor_div_coord(lo.z(), cell_);
           z <= floor_div_coord(hi.z(), cell_); ++z)
        for (std::int32_t y = floor_div_coord(lo.y(), cell_);
             y <= floor_div_coord(hi.y(), cell_); ++y)
          for (std::int32_t x = floor_div_coord(lo.x(), cell_);
               x <= floor_div_coord(hi.x(), cell_); ++x) {
            grid_[detail::pack_cell(x, y, z)].push_back(
                static_cast<int>(i));
            cmin_[0] = std::min(cmin_[0], x);
            cmin_[1] = std::min(cmin_[1], y);
            cmin_[2] = std::min(cmin_[2], z);
            cmax_[0] = std::max(cmax_[0], x);
            cmax_[1] = std::max(cmax_[1], y);
            cmax_[2] = std::max(cmax_[2], z);
          }
    }
    stamp_.assign(mesh.triangles.size(), 0);
  }

  double distance(const Vec3& p) const {
    if (mesh_->triangles.empty())
      return std::numeric_limits<double>::infinity();
    ++query_;
    const std::int32_t cx = floor_div_coord(p.x(), cell_);
    const std::int32_t cy = floor_div_coord(p.y(), cell_);
    const std::int32_t cz = floor_div_coord(p.z(), cell_);
    // Once a ring covers the whole occupied cell box every triangle has
    // been tested, so the search never runs past this bound.
    int ring_bound = 0;
    ring_bound = std::max(ring_bound, std::max(std::abs(cx - cmin_[0]),
                                               std::abs(cmax_[0] - cx)));
    ring_bound = std::max(ring_bound, std::max(std::abs(cy - cmin_[1]),
                                               std::abs(cmax_[1] - cy)));
    ring_bound = std::max(ring_bound, std::max(std::abs(cz - cmin_[2]),
                                               std::abs(cmax_[2] - cz)));

    double best = std::numeric_limits<double>::infinity();
    for (int ring = 0; ring <= ring_bound; ++ring) {
      // Any triangle living only in ring r cells is at least (r-1)*cell_
      // from p; once that lower bound exceeds the best hit, stop.
      if (best < std::numeric_limits<double>::infinity() &&
          static_cast<double>(ring - 1) * cell_ > best)
        break;
      for (std::int32_t dz = -ring; dz <= ring; ++dz) {
        for (std::int32_t dy = -ring; dy <= ring; ++dy) {
          for (std::int32_t dx = -ring; dx <= ring; ++dx) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring)
              continue;
            const auto it =
                grid_.find(detail::pack_cell(cx + dx, cy + dy, cz + dz));
            if (it == grid_.end()) continue;
            for (int ti : it->second) {
              if (stamp_[static_cast<std::size_t>(ti)] == query_) continue;
              stamp_[static_cast<std::size_t>(ti)] = query_;
              const auto& t = mesh_->triangles[static_cast<std::size_t>(ti)];
              const double d = point_triangle_distance(
                  p, mesh_->vertices[static_cast<std::size_t>(t[0])],
                  mesh_->vertices[static_cast<std::size_t>(t[1])],
                  mesh_->vertices[static_cast<std::size_t>(t[2])]);
              best = std::min(best, d);
            }
          }
        }
      }
    }
    return best;
  }

 private:
  const TriangleMesh* mesh_;
  double cell_ = 0.25;
  std::unordered_map<std::uint64_t, std::vector<int>> grid_;
  std::int32_t cmin_[3] = {std::numeric_limits<std::int32_t>::max(),
                           std::numeric_limits<std::int32_t>::max(),
                           std::numeric_limits<std::int32_t>::max()};
  std::int32_t cmax_[3] = {std::numeric_limits<std::int32_t>::min(),
                           std::numeric_limits<std::int32_t>::min(),
                           std::numeric_limits<std::int32_t>::min()};
  mutable std::vector<std::uint64_t> stamp_;
  mutable std::uint64_t query_ = 0;
};

// ---------------------------------------------------------------------------
// Mesh metrics

struct MeshMetrics {
  double accuracy_cm = 0.0;        // mean pred-sample -> gt distance
  double completion_cm = 0.0;      // mean gt-sample -> pred distance
  double chamfer_l1_cm = 0.0;      // mean of the two
  double completion_ratio = 0.0;   // % of gt samples within tau
  double f_score = 0.0;            // harmonic mean of precision/recall at tau
  double tau_cm = 10.0;
  std::size_t samples = 0;
};

inline MeshMetrics mesh_metrics(const TriangleMesh& pred,
                                const TriangleMesh& gt, std::size_t samples,
                                double tau_cm, std::uint64_t seed) {
  if (pred.triangles.empty()) throw eval_error("predicted mesh is empty");
  if (gt.triangles.empty()) throw eval_error("ground-truth mesh is empty");

  const auto p_samples = sample_mesh_surface(pred, samples, seed);
  const auto g_samples = sample_mesh_surface(gt, samples, seed ^ 0x9e3779b9ull);
  const MeshDistanceIndex gt_index(gt);
  const MeshDistanceIndex pred_index(pred);
  const double tau = tau_cm / 100.0;

  double acc_sum = 0.0;
  std::size_t precise = 0;
  for (const auto& p : p_samples) {
    const double d = gt_index.distance(p);
    acc_sum += d;
    if (d < tau) ++precise;
  }
  double comp_sum = 0.0;
  std::size_t complete = 0;
  for (const auto& g : g_samples) {
    const double d = pred_index.distance(g);
    comp_sum += d;
    if (d < tau) ++complete;
  }

  MeshMetrics m;
  m.samples = samples;
  m.tau_cm = tau_cm;
  m.accuracy_cm = 100.0 * acc_sum / static_cast<double>(p_samples.size());
  m.completion_cm = 100.0 * comp_sum / static_cast<double>(g_samples.size());
  m.chamfer_l1_cm = 0.5 * (m.accuracy_cm + m.completion_cm);
  const double precision =
      static_cast<double>(precise) / static_cast<double>(p_samples.size());
  const double recall =
      static_cast<double>(complete) / static_cast<double>(g_samples.size());
  m.completion_ratio = 100.0 * recall;
  m.f_score = (precision + recall) > 0.0
                  ? 100.0 * 2.0 * precision * recall / (precision + recall)
                  : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Reports

using KvReport = std::vector<std::pair<std::string, std::string>>;

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

inline KvReport to_kv(const RelativeErrors& r) {
  return {{"rel_translation_percent", format_double(r.translation_percent)},
          {"rel_rotation_deg_per_100m", format_double(r.rotation_deg_per_100m)},
          {"segments", std::to_string(r.segments)}};
}

inline KvReport to_kv(const MeshMetrics& m) {
  return {{"accuracy_cm", format_double(m.accuracy_cm)},
          {"completion_cm", format_double(m.completion_cm)},
          {"chamfer_l1_cm", format_double(m.chamfer_l1_cm)},
          {"completion_ratio_percent", format_double(m.completion_ratio)},
          {"f_score_percent", format_double(m.f_score)},
          {"tau_cm", format_double(m.tau_cm)},
          {"samples", std::to_string(m.samples)}};
}

inline std::string render_kv(const KvReport& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += ": ";
    out += v;
    out += '\n';
  }
  return out;
}

// Top-down (XY) overlay of the two trajectories as a standalone SVG.
inline std::string svg_trajectory_overlay(const Trajectory& est,
                                          const Trajectory& gt) {
  constexpr double kSize = 800.0, kPad = 40.0;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto* t : {&est, &gt}) {
    for (const auto& p : *t) {
      xmin = std::min(xmin, p.translation.x());
      xmax = std::max(xmax, p.translation.x());
      ymin = std::min(ymin, p.translation.y());
      ymax = std::max(ymax, p.translation.y());
    }
  }
  if (xmin > xmax) {
    xmin = ymin = -1;
    xmax = ymax = 1;
  }
  const double span = std::max({xmax - xmin, ymax - ymin, 1e-6});
  const double scale = (kSize - 2 * kPad) / span;
  auto sx = [&](double x) { return kPad + (x - xmin) * scale; };
  auto sy = [&](double y) { return kSize - kPad - (y - ymin) * scale; };

  auto polyline = [&](const Trajectory& t, const char* color) {
    std::ostringstream os;
    os << "  <polyline fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"1.5\" points=\"";
    os.precision(2);
    os << std::fixed;
    for (const auto& p : t)
      os << sx(p.translation.x()) << ',' << sy(p.translation.y()) << ' ';
    os << "\"/>\n";
    return os.str();
  };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" "
         "height=\"800\" viewBox=\"0 0 800 800\">\n";
  svg += "  <rect width=\"800\" height=\"800\" fill=\"white\"/>\n";
  svg += polyline(gt, "#888888");
  svg += polyline(est, "#1f77b4");
  svg += "  <text x=\"48\" y=\"28\" font-family=\"sans-serif\" "
         "font-size=\"14\" fill=\"#888888\">ground truth</text>\n";
  svg += "  <text x=\"160\" y=\"28\" font-family=\"sans-serif\" "
         "font-size=\"14\" fill=\"#1f77b4\">estimate</text>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace meshodom
