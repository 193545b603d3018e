#pragma once

// Synthetic LiDAR datasets with exact ground truth: analytic scenes (box
// room, corridor, sphere field over a ground plane) sampled by a spinning
// multi-ring range model along closed-form trajectories. Range noise is
// Gaussian along the ray and fully seeded, so a dataset is reproducible
// bit-for-bit from its spec.

#include "meshodom/geometry.hpp"
#include "meshodom/meshing.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace meshodom {

enum class SceneKind { box, corridor, spheres };
enum class PathKind { circle, line };

struct LidarModel {
  int rings = 32;
  double azimuth_step_deg = 0.9;
  double elev_min_deg = -24.0;
  double elev_max_deg = 4.0;
  double range_min = 0.5;
  double range_max = 60.0;
};

struct SynthSpec {
  SceneKind scene = SceneKind::box;
  PathKind path = PathKind::circle;
  int frames = 50;
  double noise_sigma = 0.0;  // meters, along the ray
  std::uint64_t seed = 1;
  LidarModel lidar;

  // Trajectory shape.
  double circle_radius = 4.0;
  double sensor_height = 1.2;
  double line_step = 0.25;   // meters per frame along +x
  double line_start_x = 2.0;

  // Scene dimensions.
  double box_half = 8.0;          // box room: [-half, half]^2
  double box_height = 3.0;
  double corridor_length = 40.0;  // corridor: [0, length] x [-w/2, w/2]
  double corridor_width = 2.5;
  double corridor_height = 2.0;
  double ground_extent = 30.0;    // sphere field ground patch half-size
  int sphere_count = 10;

  double gt_mesh_resolution = 0.25;
};

struct RayHit {
  double t = 0.0;
  Vec3 normal = Vec3::Zero();  // oriented toward the ray origin's side
};

struct Scene {
  SceneKind kind = SceneKind::box;
  Vec3 bmin = Vec3::Zero();  // box/corridor interior
  Vec3 bmax = Vec3::Zero();
  std::vector<std::pair<Vec3, double>> spheres;
  double ground_extent = 30.0;

  // First surface hit of the ray o + t*d (d unit), t > 0.
  std::optional<RayHit> raycast(const Vec3& o, const Vec3& d) const {
    if (kind == SceneKind::box || kind == SceneKind::corridor) {
      // Origin is inside the axis-aligned interior; the first exit face is
      // the hit, with its inward normal.
      double best = std::numeric_limits<double>::infinity();
      Vec3 normal = Vec3::Zero();
      for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-12) continue;
        const double face = d[a] > 0.0 ? bmax[a] : bmin[a];
        const double t = (face - o[a]) / d[a];
        if (t > 0.0 && t < best) {
          best = t;
          normal = Vec3::Zero();
          normal[a] = d[a] > 0.0 ? -1.0 : 1.0;
        }
      }
      if (!std::isfinite(best)) return std::nullopt;
      return RayHit{best, normal};
    }

    // Sphere field: ground plane plus spheres; nearest positive hit wins.
    double best = std::numeric_limits<double>::infinity();
    Vec3 normal = Vec3::Zero();
    if (d.z() < -1e-12) {
      const double t = -o.z() / d.z();
      const Vec3 p = o + t * d;
      if (t > 0.0 && std::abs(p.x()) <= ground_extent &&
          std::abs(p.y()) <= ground_extent) {
        best = t;
        normal = Vec3(0, 0, 1);
      }
    }
    for (const auto& [c, r] : spheres) {
      const Vec3 oc = o - c;
      const double b = oc.dot(d);
      const double disc = b * b - (oc.squaredNorm() - r * r);
      if (disc < 0.0) continue;
      const double sq = std::sqrt(disc);
      double t = -b - sq;
      if (t <= 1e-9) t = -b + sq;
      if (t <= 1e-9 || t >= best) continue;
      best = t;
      normal = (o + t * d - c) / r;
    }
    if (!std::isfinite(best)) return std::nullopt;
    return RayHit{best, normal};
  }
};

namespace detail {

// Regular grid over the rectangle corner + u*eu + v*ev, u in [0,nu], split
// into triangles wound so their normals face along `outward`.
inline void append_grid(TriangleMesh& mesh, const Vec3& corner, const Vec3& eu,
                        const Vec3& ev, int nu, int nv, const Vec3& outward) {
  const int base = static_cast<int>(mesh.vertices.size());
  for (int v = 0; v <= nv; ++v)
    for (int u = 0; u <= nu; ++u)
      mesh.vertices.push_back(corner +
                              (static_cast<double>(u) / nu) * eu +
                              (static_cast<double>(v) / nv) * ev);
  const bool flip = eu.cross(ev).dot(outward) < 0.0;
  for (int v = 0; v < nv; ++v) {
    for (int u = 0; u < nu; ++u) {
      const int i00 = base + v * (nu + 1) + u;
      const int i10 = i00 + 1;
      const int i01 = i00 + (nu + 1);
      const int i11 = i01 + 1;
      if (!flip) {
        mesh.triangles.push_back({i00, i10, i11});
        mesh.triangles.push_back({i00, i11, i01});
      } else {
        mesh.triangles.push_back({i00, i11, i10});
        mesh.triangles.push_back({i00, i01, i11});
      }
    }
  }
}

inline void append_box_interior(TriangleMesh& mesh, const Vec3& lo,
                                const Vec3& hi, double res) {
  const Vec3 d = hi - lo;
  const int nx = std::max(1, static_cast<int>(std::round(d.x() / res)));
  const int ny = std::max(1, static_cast<int>(std::round(d.y() / res)));
  const int nz = std::max(1, static_cast<int>(std::round(d.z() / res)));
  const Vec3 ex(d.x(), 0, 0), ey(0, d.y(), 0), ez(0, 0, d.z());
  // Floor/ceiling, then the four walls; normals point into the interior.
  append_grid(mesh, lo, ex, ey, nx, ny, Vec3(0, 0, 1));
  append_grid(mesh, Vec3(lo.x(), lo.y(), hi.z()), ex, ey, nx, ny,
              Vec3(0, 0, -1));
  append_grid(mesh, lo, ex, ez, nx, nz, Vec3(0, 1, 0));
  append_grid(mesh, Vec3(lo.x(), hi.y(), lo.z()), ex, ez, nx, nz,
              Vec3(0, -1, 0));
  append_grid(mesh, lo, ey, ez, ny, nz, Vec3(1, 0, 0));
  append_grid(mesh, Vec3(hi.x(), lo.y(), lo.z()), ey, ez, ny, nz,
              Vec3(-1, 0, 0));
}

inline void append_sphere(TriangleMesh& mesh, const Vec3& c, double r,
                          int slices = 32, int stacks = 16) {
  const int base = static_cast<int>(mesh.vertices.size());
  for (int s = 0; s <= stacks; ++s) {
    const double phi = M_PI * static_cast<double>(s) / stacks;
    for (int q = 0; q <= slices; ++q) {
      const double th = 2.0 * M_PI * static_cast<double>(q) / slices;
      mesh.vertices.push_back(
          c + r * Vec3(std::sin(phi) * std::cos(th),
                       std::sin(phi) * std::sin(th), std::cos(phi)));
    }
  }
  for (int s = 0; s < stacks; ++s) {
    for (int q = 0; q < slices; ++q) {
      const int i00 = base + s * (slices + 1) + q;
      const int i10 = i00 + 1;
      const int i01 = i00 + (slices + 1);
      const int i11 = i01 + 1;
      if (s > 0) mesh.triangles.push_back({i00, i10, i11});
      if (s + 1 < stacks) mesh.triangles.push_back({i00, i11, i01});
    }
  }
}

}  // namespace detail

inline Scene make_scene(const SynthSpec& spec) {
  Scene scene;
  scene.kind = spec.scene;
  switch (spec.scene) {
    case SceneKind::box:
      scene.bmin = Vec3(-spec.box_half, -spec.box_half, 0.0);
      scene.bmax = Vec3(spec.box_half, spec.box_half, spec.box_height);
      break;
    case SceneKind::corridor:
      scene.bmin = Vec3(0.0, -spec.corridor_width / 2, 0.0);
      scene.bmax =
          Vec3(spec.corridor_length, spec.corridor_width / 2,
               spec.corridor_height);
      break;
    case SceneKind::spheres: {
      scene.ground_extent = spec.ground_extent;
      std::mt19937_64 rng(spec.seed * 7919 + 3);
      std::uniform_real_distribution<double> pos(-0.6 * spec.ground_extent,
                                                 0.6 * spec.ground_extent);
      std::uniform_real_distribution<double> rad(0.6, 1.4);
      while (static_cast<int>(scene.spheres.size()) < spec.sphere_count) {
        const Vec3 c(pos(rng), pos(rng), 0.0);
        const double r = rad(rng);
        bool ok = c.head<2>().norm() > 4.0;  // keep the start pose clear
        for (const auto& [oc, orr] : scene.spheres)
          ok = ok && (c - oc).head<2>().norm() > (r + orr + 1.5);
        if (ok) scene.spheres.emplace_back(Vec3(c.x(), c.y(), r), r);
      }
      break;
    }
  }
  return scene;
}

inline PoseSE3 ground_truth_pose(const SynthSpec& spec, int frame) {
  PoseSE3 pose;
  if (spec.path == PathKind::circle) {
    const double phi =
        2.0 * M_PI * static_cast<double>(frame) / std::max(1, spec.frames);
    const double yaw = phi + M_PI / 2.0;
    pose.rotation = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
    pose.translation = Vec3(spec.circle_radius * std::cos(phi),
                            spec.circle_radius * std::sin(phi),
                            spec.sensor_height);
  } else {
    pose.rotation = Mat3::Identity();
    pose.translation =
        Vec3(spec.line_start_x + spec.line_step * frame, 0.0,
             spec.sensor_height);
  }
  return pose;
}

// One sensor-frame scan from `pose`. Rays sweep all azimuths for each ring;
// misses and ranges outside the gate produce no point.
inline std::vector<Vec3> generate_scan(const Scene& scene,
                                       const SynthSpec& spec,
                                       const PoseSE3& pose, int frame) {
  std::vector<Vec3> points;
  const auto& li = spec.lidar;
  const int azimuths =
      static_cast<int>(std::round(360.0 / li.azimuth_step_deg));
  points.reserve(static_cast<std::size_t>(li.rings) *
                 static_cast<std::size_t>(azimuths) / 2);
  std::mt19937_64 rng(spec.seed ^
                      (0x9e3779b97f4a7c15ull *
                       static_cast<std::uint64_t>(frame + 1)));
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);

  for (int r = 0; r < li.rings; ++r) {
    const double elev_deg =
        li.rings == 1
            ? li.elev_min_deg
            : li.elev_min_deg + (li.elev_max_deg - li.elev_min_deg) *
                                    static_cast<double>(r) / (li.rings - 1);
    const double elev = elev_deg * M_PI / 180.0;
    const double ce = std::cos(elev), se = std::sin(elev);
    for (int a = 0; a < azimuths; ++a) {
      const double az = 2.0 * M_PI * static_cast<double>(a) / azimuths;
      const Vec3 dir_sensor(ce * std::cos(az), ce * std::sin(az), se);
      const Vec3 dir_world = pose.rotation * dir_sensor;
      const auto hit = scene.raycast(pose.translation, dir_world);
      if (!hit) continue;
      double range = hit->t;
      if (spec.noise_sigma > 0.0) range += noise(rng);
      if (range < li.range_min || range > li.range_max) continue;
      points.push_back(range * dir_sensor);
    }
  }
  return points;
}

inline TriangleMesh ground_truth_mesh(const Scene& scene,
                                      const SynthSpec& spec) {
  TriangleMesh mesh;
  const double res = spec.gt_mesh_resolution;
  if (scene.kind == SceneKind::box || scene.kind == SceneKind::corridor) {
    detail::append_box_interior(mesh, scene.bmin, scene.bmax, res);
  } else {
    const double e = scene.ground_extent;
    const int n = std::max(1, static_cast<int>(std::round(2 * e / res)));
    detail::append_grid(mesh, Vec3(-e, -e, 0), Vec3(2 * e, 0, 0),
                        Vec3(0, 2 * e, 0), n, n, Vec3(0, 0, 1));
    for (const auto& [c, r] : scene.spheres) detail::append_sphere(mesh, c, r);
  }
  mesh.recompute_normals();
  return mesh;
}

}  // namespace meshodom
