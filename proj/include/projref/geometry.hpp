// Rigid transforms, Euler parameterization, pinhole projection and the
// scalar pose/reprojection error metrics used throughout the toolkit.
#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace projref {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

struct PixelCoord {
  double u = 0.0;
  double v = 0.0;
};

/// Pinhole intrinsics with optional skew and two-term radial distortion.
/// Distortion defaults to zero; it is carried through projection but all
/// synthetic rigs leave it off.
struct Intrinsics {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  double skew = 0.0;
  double k1 = 0.0, k2 = 0.0;
  int width = 0, height = 0;

  Mat3 matrix() const {
    Mat3 k;
    k << fx, skew, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  bool contains(const PixelCoord& p) const {
    return p.u >= 0.0 && p.u < width && p.v >= 0.0 && p.v < height;
  }

  /// Back-projected ray direction for a pixel (unit z, pinhole, no distortion).
  Vec3 ray(const PixelCoord& p) const {
    double yn = (p.v - cy) / fy;
    double xn = (p.u - cx - skew * yn) / fx;
    return Vec3(xn, yn, 1.0);
  }
};

/// X_b = R * X_a + t, mapping frame A points into frame B.
struct RigidTransform {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 operator*(const Vec3& x) const { return R * x + t; }

  RigidTransform operator*(const RigidTransform& o) const {
    return {R * o.R, R * o.t + t};
  }

  RigidTransform inverse() const { return {R.transpose(), -(R.transpose() * t)}; }

  static RigidTransform identity() { return {}; }
};

inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) { return a * b; }
inline RigidTransform invert(const RigidTransform& t) { return t.inverse(); }

inline bool is_rotation(const Mat3& r, double tol = 1e-9) {
  return (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < tol &&
         std::abs(r.determinant() - 1.0) < tol;
}

inline Mat3 rot_x(double a) {
  double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

inline Mat3 rot_y(double a) {
  double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

inline Mat3 rot_z(double a) {
  double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

/// 6-DoF pose as roll/pitch/yaw (radians) plus translation (meters).
struct EulerPose {
  double roll = 0.0, pitch = 0.0, yaw = 0.0;
  double tx = 0.0, ty = 0.0, tz = 0.0;

  Vec6 vec() const {
    Vec6 v;
    v << roll, pitch, yaw, tx, ty, tz;
    return v;
  }

  static EulerPose from_vec(const Vec6& v) { return {v[0], v[1], v[2], v[3], v[4], v[5]}; }

  Vec3 translation() const { return Vec3(tx, ty, tz); }
};

/// R = Rz(yaw) * Ry(pitch) * Rx(roll).
inline Mat3 euler_to_rotation(const EulerPose& p) {
  return rot_z(p.yaw) * rot_y(p.pitch) * rot_x(p.roll);
}

/// Recovers roll/pitch/yaw from R = Rz*Ry*Rx. Valid away from |pitch| = pi/2.
inline EulerPose rotation_to_euler(const Mat3& r, const Vec3& t = Vec3::Zero()) {
  EulerPose p;
  p.pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  if (std::abs(r(2, 0)) < 1.0 - 1e-12) {
    p.roll = std::atan2(r(2, 1), r(2, 2));
    p.yaw = std::atan2(r(1, 0), r(0, 0));
  } else {
    // gimbal lock: fold yaw into roll
    p.roll = std::atan2(-r(1, 2), r(1, 1));
    p.yaw = 0.0;
  }
  p.tx = t.x();
  p.ty = t.y();
  p.tz = t.z();
  return p;
}

inline RigidTransform pose_to_transform(const EulerPose& p) {
  return {euler_to_rotation(p), p.translation()};
}

inline EulerPose transform_to_pose(const RigidTransform& t) {
  return rotation_to_euler(t.R, t.t);
}

/// Derivatives of euler_to_rotation with respect to (roll, pitch, yaw).
inline std::array<Mat3, 3> euler_rotation_derivatives(const EulerPose& p) {
  static const Mat3 gen_x = (Mat3() << 0, 0, 0, 0, 0, -1, 0, 1, 0).finished();
  static const Mat3 gen_y = (Mat3() << 0, 0, 1, 0, 0, 0, -1, 0, 0).finished();
  static const Mat3 gen_z = (Mat3() << 0, -1, 0, 1, 0, 0, 0, 0, 0).finished();
  Mat3 rx = rot_x(p.roll), ry = rot_y(p.pitch), rz = rot_z(p.yaw);
  return {rz * ry * rx * gen_x, rz * ry * gen_y * rx, rz * gen_z * ry * rx};
}

/// Projects a 3D point (frame of T's domain) through T and intrinsics K.
/// Returns nullopt when the transformed depth is <= 1e-12 (behind camera);
/// the caller must drop the point.
inline std::optional<PixelCoord> project(const Intrinsics& k, const RigidTransform& t,
                                         const Vec3& x) {
  Vec3 p = t * x;
  if (p.z() <= 1e-12) return std::nullopt;
  double xn = p.x() / p.z();
  double yn = p.y() / p.z();
  double r2 = xn * xn + yn * yn;
  double d = 1.0 + k.k1 * r2 + k.k2 * r2 * r2;
  double xd = xn * d, yd = yn * d;
  return PixelCoord{k.fx * xd + k.skew * yd + k.cx, k.fy * yd + k.cy};
}

/// Jacobian of the projected pixel with respect to the transformed 3D point.
inline Eigen::Matrix<double, 2, 3> projection_point_jacobian(const Intrinsics& k, const Vec3& p) {
  double z = p.z();
  double xn = p.x() / z, yn = p.y() / z;
  double r2 = xn * xn + yn * yn;
  double d = 1.0 + k.k1 * r2 + k.k2 * r2 * r2;
  double dd = k.k1 + 2.0 * k.k2 * r2;  // d(dist)/d(r2)
  // d(xd,yd)/d(xn,yn)
  Eigen::Matrix2d jd;
  jd << d + 2.0 * xn * xn * dd, 2.0 * xn * yn * dd, 2.0 * xn * yn * dd, d + 2.0 * yn * yn * dd;
  Eigen::Matrix<double, 2, 3> jn;
  jn << 1.0 / z, 0.0, -xn / z, 0.0, 1.0 / z, -yn / z;
  Eigen::Matrix2d ka;
  ka << k.fx, k.skew, 0.0, k.fy;
  return ka * jd * jn;
}

/// Euclidean translation error in millimeters.
inline double translation_error_mm(const Vec3& est, const Vec3& ref) {
  return (est - ref).norm() * 1000.0;
}

/// Geodesic SO(3) distance in radians; the acos argument is clamped to
/// absorb floating-point overshoot of the trace.
inline double rotation_geodesic_rad(const Mat3& est, const Mat3& ref) {
  double c = ((ref.transpose() * est).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

/// Geodesic rotation error in milliradians.
inline double rotation_error_mrad(const Mat3& est, const Mat3& ref) {
  return rotation_geodesic_rad(est, ref) * 1000.0;
}

/// RMS pixel distance between observed and predicted coordinates.
/// Throws on empty or mismatched input.
inline double rms_reprojection_px(std::span<const PixelCoord> observed,
                                  std::span<const PixelCoord> predicted) {
  if (observed.empty() || observed.size() != predicted.size())
    throw std::invalid_argument("rms_reprojection_px: empty or mismatched input");
  double acc = 0.0;
  for (size_t i = 0; i < observed.size(); ++i) {
    double du = observed[i].u - predicted[i].u;
    double dv = observed[i].v - predicted[i].v;
    acc += du * du + dv * dv;
  }
  return std::sqrt(acc / double(observed.size()));
}

inline constexpr double kTranslationBound = 2.0;  // meters

/// Smooth elementwise bound t = t_max * tanh(t~), range (-t_max, t_max).
inline Vec3 bounded_translation(const Vec3& unconstrained) {
  return kTranslationBound * unconstrained.array().tanh();
}

/// d(bounded)/d(unconstrained), diagonal terms.
inline Vec3 bounded_translation_derivative(const Vec3& unconstrained) {
  Eigen::Array3d th = unconstrained.array().tanh();
  return kTranslationBound * (1.0 - th * th);
}

/// Inverse of bounded_translation for |t| < t_max.
inline Vec3 unbound_translation(const Vec3& t) {
  return (t / kTranslationBound).array().atanh();
}

/// Chordal mean of rotations: arithmetic matrix mean projected to SO(3).
inline Mat3 chordal_mean_rotation(std::span<const Mat3> rs) {
  Mat3 m = Mat3::Zero();
  for (const auto& r : rs) m += r;
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() > 0 ? 1.0 : -1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

}  // namespace projref
