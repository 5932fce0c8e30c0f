#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ctsfm {

using Vector2d = Eigen::Vector2d;
using Vector3d = Eigen::Vector3d;
using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix2d = Eigen::Matrix2d;
using Matrix3d = Eigen::Matrix3d;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

/// Below this rotation angle exp/log switch to second-order Taylor
/// coefficients.
inline constexpr double kSmallAngle = 1e-8;
/// log_map refuses rotations whose angle is within this distance of pi.
inline constexpr double kPiBranchMargin = 1e-6;
/// Rotation drift bound that triggers re-orthonormalization.
inline constexpr double kOrthonormalityTolerance = 1e-9;

/// Tangent vector of SE(3). Ordering is fixed across the library as
/// (rho; phi): the translational block comes first, the rotational second.
class Twist {
 public:
  Twist() : v_(Vector6d::Zero()) {}
  explicit Twist(const Vector6d& v) : v_(v) {}
  Twist(const Vector3d& rho, const Vector3d& phi) {
    v_ << rho, phi;
  }

  static Twist zero() { return Twist(); }

  auto rho() const { return v_.head<3>(); }
  auto phi() const { return v_.tail<3>(); }
  auto rho() { return v_.head<3>(); }
  auto phi() { return v_.tail<3>(); }

  const Vector6d& vector() const { return v_; }
  Vector6d& vector() { return v_; }

  Twist operator+(const Twist& o) const { return Twist(v_ + o.v_); }
  Twist operator-(const Twist& o) const { return Twist(v_ - o.v_); }
  Twist operator-() const { return Twist(-v_); }
  Twist operator*(double s) const { return Twist(v_ * s); }

 private:
  Vector6d v_;
};

inline Twist operator*(double s, const Twist& t) { return t * s; }

/// Rigid transform stored as rotation matrix plus translation.
class SE3Pose {
 public:
  SE3Pose() : rotation_(Matrix3d::Identity()), translation_(Vector3d::Zero()) {}
  SE3Pose(const Matrix3d& rotation, const Vector3d& translation);

  static SE3Pose identity() { return SE3Pose(); }
  static SE3Pose from_quaternion(const Eigen::Quaterniond& q,
                                 const Vector3d& translation);

  const Matrix3d& rotation() const { return rotation_; }
  const Vector3d& translation() const { return translation_; }

  Eigen::Quaterniond quaternion() const;
  Eigen::Matrix4d matrix() const;

  SE3Pose inverse() const;
  Vector3d operator*(const Vector3d& point) const {
    return rotation_ * point + translation_;
  }

  /// Ad(T) for the (rho; phi) ordering: [[R, t^ R], [0, R]].
  Matrix6d adjoint() const;

  /// Projects the rotation back onto SO(3) (polar decomposition) when
  /// ||R^T R - I||_inf exceeds kOrthonormalityTolerance.
  void normalize();

 private:
  Matrix3d rotation_;
  Vector3d translation_;
};

Matrix3d skew(const Vector3d& v);

Matrix3d so3_exp(const Vector3d& phi);
/// Throws kBranchAmbiguity within kPiBranchMargin of pi.
Vector3d so3_log(const Matrix3d& rotation);

/// Left Jacobian of SO(3); its inverse.
Matrix3d so3_left_jacobian(const Vector3d& phi);
Matrix3d so3_left_jacobian_inverse(const Vector3d& phi);

SE3Pose exp_map(const Twist& v);
Twist log_map(const SE3Pose& p);

SE3Pose compose(const SE3Pose& a, const SE3Pose& b);
inline SE3Pose operator*(const SE3Pose& a, const SE3Pose& b) {
  return compose(a, b);
}
inline SE3Pose inverse(const SE3Pose& p) { return p.inverse(); }

/// log(base^-1 * target): target expressed in the tangent space at base.
Twist local_coordinates(const SE3Pose& base, const SE3Pose& target);
/// base * exp(delta).
SE3Pose retract(const SE3Pose& base, const Twist& delta);

/// Left/right Jacobians of SE(3) and their inverses, (rho; phi) ordering.
///   exp(v + dv) ~= exp(J_l(v) dv) exp(v) ~= exp(v) exp(J_r(v) dv)
Matrix6d se3_left_jacobian(const Twist& v);
Matrix6d se3_right_jacobian(const Twist& v);
Matrix6d se3_left_jacobian_inverse(const Twist& v);
Matrix6d se3_right_jacobian_inverse(const Twist& v);

/// Small adjoint ad(v) = [[phi^, rho^], [0, phi^]].
Matrix6d se3_ad(const Twist& v);

/// Max absolute deviation of the pose from identity (rotation and translation).
double distance_to_identity(const SE3Pose& p);

}  // namespace ctsfm
