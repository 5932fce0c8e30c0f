#include "ctsfm/lie.hpp"

#include <Eigen/SVD>
#include <cmath>

#include "ctsfm/errors.hpp"

namespace ctsfm {

namespace {

// Closed-form SE(3) Jacobian coefficients lose precision to cancellation at
// small angles; below this the power series of ad is summed instead.
constexpr double kJacobianSeriesAngle = 0.2;
constexpr int kJacobianSeriesTerms = 16;

struct RodriguesCoefficients {
  double a;  // sin(t)/t
  double b;  // (1 - cos(t))/t^2
  double c;  // (t - sin(t))/t^3
};

RodriguesCoefficients rodrigues(double theta) {
  const double t2 = theta * theta;
  if (theta < kSmallAngle) {
    return {1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0};
  }
  const double s = std::sin(theta);
  const double half = std::sin(0.5 * theta);
  return {s / theta, 2.0 * half * half / t2, (theta - s) / (t2 * theta)};
}

// (1/t^2) * (1 - (t sin t) / (2 (1 - cos t))), the phi^2 coefficient of
// the inverse left Jacobian of SO(3).
double inverse_jacobian_coefficient(double theta) {
  const double t2 = theta * theta;
  if (theta < kSmallAngle) {
    return 1.0 / 12.0 + t2 / 720.0;
  }
  const double half = 0.5 * theta;
  return (1.0 - half * std::cos(half) / std::sin(half)) / t2;
}

bool all_finite(const Vector6d& v) { return v.allFinite(); }

Matrix6d jacobian_series(const Twist& v) {
  const Matrix6d ad = se3_ad(v);
  Matrix6d sum = Matrix6d::Identity();
  Matrix6d term = Matrix6d::Identity();
  for (int n = 1; n < kJacobianSeriesTerms; ++n) {
    term = term * ad / static_cast<double>(n + 1);
    sum += term;
  }
  return sum;
}

Matrix3d se3_q_block(const Vector3d& rho, const Vector3d& phi) {
  const double theta = phi.norm();
  const double t2 = theta * theta;
  const double s = std::sin(theta);
  const double c = std::cos(theta);
  const Matrix3d rx = skew(rho);
  const Matrix3d px = skew(phi);
  const Matrix3d pr = px * rx;
  const Matrix3d rp = rx * px;
  const Matrix3d prp = pr * px;
  const double c1 = (theta - s) / (t2 * theta);
  const double c2 = (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2);
  const double c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t2 * t2 * theta);
  return 0.5 * rx + c1 * (pr + rp + prp) + c2 * (px * pr + rp * px - 3.0 * prp) +
         c3 * (prp * px + px * prp);
}

}  // namespace

SE3Pose::SE3Pose(const Matrix3d& rotation, const Vector3d& translation)
    : rotation_(rotation), translation_(translation) {}

SE3Pose SE3Pose::from_quaternion(const Eigen::Quaterniond& q,
                                 const Vector3d& translation) {
  return SE3Pose(q.normalized().toRotationMatrix(), translation);
}

Eigen::Quaterniond SE3Pose::quaternion() const {
  Eigen::Quaterniond q(rotation_);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return q;
}

Eigen::Matrix4d SE3Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

SE3Pose SE3Pose::inverse() const {
  const Matrix3d rt = rotation_.transpose();
  return SE3Pose(rt, -(rt * translation_));
}

Matrix6d SE3Pose::adjoint() const {
  Matrix6d ad = Matrix6d::Zero();
  ad.topLeftCorner<3, 3>() = rotation_;
  ad.topRightCorner<3, 3>() = skew(translation_) * rotation_;
  ad.bottomRightCorner<3, 3>() = rotation_;
  return ad;
}

void SE3Pose::normalize() {
  const Matrix3d drift = rotation_.transpose() * rotation_ - Matrix3d::Identity();
  if (drift.cwiseAbs().maxCoeff() <= kOrthonormalityTolerance) return;
  Eigen::JacobiSVD<Matrix3d> svd(rotation_, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Matrix3d u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  rotation_ = r;
}

Matrix3d skew(const Vector3d& v) {
  Matrix3d m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Matrix3d so3_exp(const Vector3d& phi) {
  const auto k = rodrigues(phi.norm());
  const Matrix3d px = skew(phi);
  return Matrix3d::Identity() + k.a * px + k.b * px * px;
}

Vector3d so3_log(const Matrix3d& rotation) {
  const double cos_theta = 0.5 * (rotation.trace() - 1.0);
  const Vector3d w(0.5 * (rotation(2, 1) - rotation(1, 2)),
                   0.5 * (rotation(0, 2) - rotation(2, 0)),
                   0.5 * (rotation(1, 0) - rotation(0, 1)));
  const double sin_theta = w.norm();
  const double theta = std::atan2(sin_theta, cos_theta);
  if (theta > M_PI - kPiBranchMargin) {
    fail(ErrorCode::kBranchAmbiguity,
         "log_map: rotation angle within 1e-6 of pi is ambiguous");
  }
  if (theta < kSmallAngle) {
    return (1.0 + theta * theta / 6.0) * w;
  }
  return (theta / sin_theta) * w;
}

Matrix3d so3_left_jacobian(const Vector3d& phi) {
  const auto k = rodrigues(phi.norm());
  const Matrix3d px = skew(phi);
  return Matrix3d::Identity() + k.b * px + k.c * px * px;
}

Matrix3d so3_left_jacobian_inverse(const Vector3d& phi) {
  const double d = inverse_jacobian_coefficient(phi.norm());
  const Matrix3d px = skew(phi);
  return Matrix3d::Identity() - 0.5 * px + d * px * px;
}

SE3Pose exp_map(const Twist& v) {
  if (!all_finite(v.vector())) {
    fail(ErrorCode::kInvalidArgument, "exp_map: non-finite twist");
  }
  const Vector3d phi = v.phi();
  const auto k = rodrigues(phi.norm());
  const Matrix3d px = skew(phi);
  const Matrix3d px2 = px * px;
  const Matrix3d r = Matrix3d::Identity() + k.a * px + k.b * px2;
  const Matrix3d jac = Matrix3d::Identity() + k.b * px + k.c * px2;
  return SE3Pose(r, jac * v.rho());
}

Twist log_map(const SE3Pose& p) {
  const Vector3d phi = so3_log(p.rotation());
  const Vector3d rho = so3_left_jacobian_inverse(phi) * p.translation();
  return Twist(rho, phi);
}

SE3Pose compose(const SE3Pose& a, const SE3Pose& b) {
  SE3Pose out(a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation());
  out.normalize();
  return out;
}

Twist local_coordinates(const SE3Pose& base, const SE3Pose& target) {
  return log_map(compose(base.inverse(), target));
}

SE3Pose retract(const SE3Pose& base, const Twist& delta) {
  return compose(base, exp_map(delta));
}

Matrix6d se3_ad(const Twist& v) {
  Matrix6d ad = Matrix6d::Zero();
  const Matrix3d px = skew(v.phi());
  ad.topLeftCorner<3, 3>() = px;
  ad.topRightCorner<3, 3>() = skew(v.rho());
  ad.bottomRightCorner<3, 3>() = px;
  return ad;
}

Matrix6d se3_left_jacobian(const Twist& v) {
  const Vector3d phi = v.phi();
  if (phi.norm() < kJacobianSeriesAngle) {
    return jacobian_series(v);
  }
  Matrix6d jl = Matrix6d::Zero();
  const Matrix3d j = so3_left_jacobian(phi);
  jl.topLeftCorner<3, 3>() = j;
  jl.bottomRightCorner<3, 3>() = j;
  jl.topRightCorner<3, 3>() = se3_q_block(v.rho(), phi);
  return jl;
}

Matrix6d se3_right_jacobian(const Twist& v) { return se3_left_jacobian(-v); }

Matrix6d se3_left_jacobian_inverse(const Twist& v) {
  const Vector3d phi = v.phi();
  Matrix3d q;
  Matrix3d j_inv;
  if (phi.norm() < kJacobianSeriesAngle) {
    const Matrix6d jl = jacobian_series(v);
    q = jl.topRightCorner<3, 3>();
    j_inv = jl.topLeftCorner<3, 3>().inverse();
  } else {
    q = se3_q_block(v.rho(), phi);
    j_inv = so3_left_jacobian_inverse(phi);
  }
  Matrix6d out = Matrix6d::Zero();
  out.topLeftCorner<3, 3>() = j_inv;
  out.bottomRightCorner<3, 3>() = j_inv;
  out.topRightCorner<3, 3>() = -j_inv * q * j_inv;
  return out;
}

Matrix6d se3_right_jacobian_inverse(const Twist& v) {
  return se3_left_jacobian_inverse(-v);
}

double distance_to_identity(const SE3Pose& p) {
  return std::max((p.rotation() - Matrix3d::Identity()).cwiseAbs().maxCoeff(),
                  p.translation().cwiseAbs().maxCoeff());
}

}  // namespace ctsfm
