#pragma once

// Rigid-body pose algebra, voxel indexing and small geometric kernels shared
// by every other module. Poses are kept as an explicit rotation matrix plus
// translation; the exponential/log maps are exact (Rodrigues together with the
// SO(3) left Jacobian acting on the translational part).

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <cmath>
#include <cstdint>

namespace meshodom {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
// Twist layout: [translational; rotational].
using Twist6 = Eigen::Matrix<double, 6, 1>;

inline Mat3 skew(const Vec3& w) {
  Mat3 s;
  s << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
  return s;
}

inline Mat3 so3_exp(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const Mat3 wx = skew(w);
  double a, b;  // R = I + a*wx + b*wx^2
  if (theta2 < 1e-12) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * wx + b * wx * wx;
}

// Left Jacobian of SO(3): exp(w) t for a twist applies J_l(w) to the
// translational part.
inline Mat3 so3_left_jacobian(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const Mat3 wx = skew(w);
  double b, c;  // J = I + b*wx + c*wx^2
  if (theta2 < 1e-12) {
    b = 0.5 - theta2 / 24.0;
    c = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    const double theta = std::sqrt(theta2);
    b = (1.0 - std::cos(theta)) / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3::Identity() + b * wx + c * wx * wx;
}

inline Mat3 so3_left_jacobian_inv(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const Mat3 wx = skew(w);
  double c;  // J^-1 = I - wx/2 + c*wx^2
  if (theta2 < 1e-12) {
    c = 1.0 / 12.0 + theta2 / 720.0;
  } else {
    const double theta = std::sqrt(theta2);
    c = 1.0 / theta2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  return Mat3::Identity() - 0.5 * wx + c * wx * wx;
}

inline Vec3 so3_log(const Mat3& r) {
  const double tr = r.trace();
  const double cos_theta = std::clamp((tr - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  const Vec3 v(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  if (theta < 1e-7) {
    // w = vee(R - R^T)/2 to first order.
    return 0.5 * v * (1.0 + theta * theta / 6.0);
  }
  if (theta > M_PI - 1e-5) {
    // Near pi the antisymmetric part vanishes; recover the axis from the
    // dominant diagonal of (R + I)/2 and fix signs from the off-diagonals.
    Mat3 s = 0.5 * (r + Mat3::Identity());
    int k = 0;
    if (s(1, 1) > s(k, k)) k = 1;
    if (s(2, 2) > s(k, k)) k = 2;
    Vec3 axis;
    axis[k] = std::sqrt(std::max(s(k, k), 0.0));
    const double denom = 2.0 * axis[k];
    axis[(k + 1) % 3] = (s(k, (k + 1) % 3) + s((k + 1) % 3, k)) / denom;
    axis[(k + 2) % 3] = (s(k, (k + 2) % 3) + s((k + 2) % 3, k)) / denom;
    axis.normalize();
    // Resolve the overall sign against the antisymmetric part (may be tiny
    // but its sign is still meaningful away from exactly pi).
    if (axis.dot(v) < 0.0) axis = -axis;
    return theta * axis;
  }
  return (theta / (2.0 * std::sin(theta))) * v;
}

// Nearest rotation in Frobenius norm (polar factor via SVD, det corrected).
inline Mat3 orthonormalized(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 fix = Mat3::Identity();
    fix(2, 2) = -1.0;
    r = svd.matrixU() * fix * svd.matrixV().transpose();
  }
  return r;
}

struct PoseSE3 {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  // Compositions since the rotation was last re-orthonormalized. Round-off
  // drift per compose is ~machine epsilon, so renormalizing every 64
  // compositions keeps the orthonormality error orders of magnitude below
  // the 1e-9 budget.
  int composition_age = 0;

  static PoseSE3 identity() { return PoseSE3{}; }

  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }

  PoseSE3 inverse() const {
    PoseSE3 out;
    out.rotation = rotation.transpose();
    out.translation = -(out.rotation * translation);
    out.composition_age = composition_age;
    return out;
  }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  double orthonormality_error() const {
    return (rotation * rotation.transpose() - Mat3::Identity()).norm();
  }
};

inline constexpr int kRenormalizeEvery = 64;

inline PoseSE3 compose(const PoseSE3& a, const PoseSE3& b) {
  PoseSE3 out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  out.composition_age = a.composition_age + b.composition_age + 1;
  if (out.composition_age >= kRenormalizeEvery) {
    out.rotation = orthonormalized(out.rotation);
    out.composition_age = 0;
  }
  return out;
}

inline Vec3 transform_point(const PoseSE3& t, const Vec3& p) { return t * p; }

inline PoseSE3 exp_se3(const Twist6& xi) {
  const Vec3 v = xi.head<3>();
  const Vec3 w = xi.tail<3>();
  PoseSE3 out;
  out.rotation = so3_exp(w);
  out.translation = so3_left_jacobian(w) * v;
  return out;
}

inline Twist6 log_se3(const PoseSE3& t) {
  const Vec3 w = so3_log(t.rotation);
  Twist6 xi;
  xi.head<3>() = so3_left_jacobian_inv(w) * t.translation;
  xi.tail<3>() = w;
  return xi;
}

// ---------------------------------------------------------------------------
// Voxel indexing

struct VoxelKey {
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t z = 0;

  bool operator==(const VoxelKey&) const = default;
};

inline std::int32_t floor_div_coord(double v, double res) {
  return static_cast<std::int32_t>(std::floor(v / res));
}

inline VoxelKey voxelize(const Vec3& p, const Vec3& resolution) {
  return VoxelKey{floor_div_coord(p.x(), resolution.x()),
                  floor_div_coord(p.y(), resolution.y()),
                  floor_div_coord(p.z(), resolution.z())};
}

inline VoxelKey voxelize(const Vec3& p, double resolution) {
  return voxelize(p, Vec3(resolution, resolution, resolution));
}

// Center of cell k spans [k*r, (k+1)*r) in each axis.
inline Vec3 voxel_center(const VoxelKey& k, const Vec3& resolution) {
  return Vec3((k.x + 0.5) * resolution.x(), (k.y + 0.5) * resolution.y(),
              (k.z + 0.5) * resolution.z());
}

inline Vec3 voxel_center(const VoxelKey& k, double resolution) {
  return voxel_center(k, Vec3(resolution, resolution, resolution));
}

// ---------------------------------------------------------------------------
// Triangles

// Closest point on triangle (a,b,c) to p; Voronoi-region walk, exact for all
// vertex/edge/face cases.
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a,
                                      const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return a + v * ab;
  }

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return a + w * ac;
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return b + w * (c - b);
  }

  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom;
  const double w = vc * denom;
  return a + v * ab + w * ac;
}

inline double point_triangle_distance(const Vec3& p, const Vec3& a,
                                      const Vec3& b, const Vec3& c) {
  return (p - closest_point_on_triangle(p, a, b, c)).norm();
}

}  // namespace meshodom
