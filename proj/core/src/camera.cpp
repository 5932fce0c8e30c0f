#include "ctsfm/camera.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ctsfm/errors.hpp"

namespace ctsfm {

namespace {

constexpr double kMinBaseline = 1e-6;
constexpr double kMinRayAngle = 0.1 * M_PI / 180.0;

Eigen::Matrix<double, 2, 3> projection_derivative(const Vector3d& pc,
                                                  const CameraIntrinsics& k) {
  const double inv_z = 1.0 / pc.z();
  const double inv_z2 = inv_z * inv_z;
  Eigen::Matrix<double, 2, 3> d;
  d << k.fx * inv_z, 0.0, -k.fx * pc.x() * inv_z2,
       0.0, k.fy * inv_z, -k.fy * pc.y() * inv_z2;
  return d;
}

Vector3d world_ray(const SE3Pose& world_to_camera, const Vector2d& pixel,
                   const CameraIntrinsics& k) {
  return (world_to_camera.rotation().transpose() * k.back_project(pixel)).normalized();
}

Vector3d camera_center(const SE3Pose& world_to_camera) {
  return -(world_to_camera.rotation().transpose() * world_to_camera.translation());
}

}  // namespace

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "intrinsics: focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    fail(ErrorCode::kInvalidArgument, "intrinsics: sensor size must be positive");
  }
  if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height) {
    fail(ErrorCode::kInvalidArgument, "intrinsics: principal point outside the sensor");
  }
}

bool CameraIntrinsics::contains(const Vector2d& pixel) const {
  return pixel.x() >= 0.0 && pixel.y() >= 0.0 && pixel.x() < width &&
         pixel.y() < height;
}

Vector3d CameraIntrinsics::back_project(const Vector2d& pixel) const {
  return Vector3d((pixel.x() - cx) / fx, (pixel.y() - cy) / fy, 1.0);
}

Vector2d project(const SE3Pose& world_to_camera, const Vector3d& landmark,
                 const CameraIntrinsics& k) {
  const Vector3d pc = world_to_camera * landmark;
  if (!(pc.z() > kMinDepth)) {
    fail(ErrorCode::kBehindCamera, "project: point behind the camera");
  }
  return Vector2d(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
}

ProjectionJacobians project_jacobians(const SE3Pose& world_to_camera,
                                      const Vector3d& landmark,
                                      const CameraIntrinsics& k) {
  const Vector3d pc = world_to_camera * landmark;
  if (!(pc.z() > kMinDepth)) {
    fail(ErrorCode::kBehindCamera, "project_jacobians: point behind the camera");
  }
  const Eigen::Matrix<double, 2, 3> dpi = projection_derivative(pc, k);
  const Matrix3d& r = world_to_camera.rotation();
  ProjectionJacobians jac;
  jac.pose.leftCols<3>() = dpi * r;
  jac.pose.rightCols<3>() = -dpi * r * skew(landmark);
  jac.landmark = dpi * r;
  return jac;
}

Triangulation triangulate(const SE3Pose& world_to_camera_a,
                          const SE3Pose& world_to_camera_b, const Vector2d& z_a,
                          const Vector2d& z_b, const CameraIntrinsics& k) {
  const Vector3d ca = camera_center(world_to_camera_a);
  const Vector3d cb = camera_center(world_to_camera_b);
  if ((ca - cb).norm() < kMinBaseline) {
    fail(ErrorCode::kLowParallax, "triangulate: baseline below 1e-6 m");
  }
  const Vector3d da = world_ray(world_to_camera_a, z_a, k);
  const Vector3d db = world_ray(world_to_camera_b, z_b, k);
  const double cos_angle = std::clamp(da.dot(db), -1.0, 1.0);
  const double angle = std::acos(cos_angle);
  if (angle < kMinRayAngle) {
    fail(ErrorCode::kLowParallax, "triangulate: rays are nearly parallel");
  }
  // Closest points ca + s da and cb + u db.
  const Vector3d w0 = ca - cb;
  const double b = cos_angle;
  const double d = da.dot(w0);
  const double e = db.dot(w0);
  const double denom = 1.0 - b * b;
  const double s = (b * e - d) / denom;
  const double u = (e - b * d) / denom;
  Triangulation out;
  out.point = 0.5 * ((ca + s * da) + (cb + u * db));
  out.parallax = angle;
  if ((world_to_camera_a * out.point).z() <= kMinDepth ||
      (world_to_camera_b * out.point).z() <= kMinDepth) {
    fail(ErrorCode::kCheirality, "triangulate: point behind a camera");
  }
  return out;
}

Vector3d intersect_rays(std::span<const SE3Pose> world_to_camera,
                        std::span<const Vector2d> pixels, const CameraIntrinsics& k) {
  if (world_to_camera.size() != pixels.size() || pixels.size() < 2) {
    fail(ErrorCode::kInvalidArgument, "intersect_rays: need at least two rays");
  }
  Matrix3d a = Matrix3d::Zero();
  Vector3d rhs = Vector3d::Zero();
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const Vector3d d = world_ray(world_to_camera[i], pixels[i], k);
    const Matrix3d proj = Matrix3d::Identity() - d * d.transpose();
    a += proj;
    rhs += proj * camera_center(world_to_camera[i]);
  }
  Eigen::LDLT<Matrix3d> ldlt(a);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() < 1e-12 * a.trace()) {
    fail(ErrorCode::kLowParallax, "intersect_rays: rays are parallel");
  }
  return ldlt.solve(rhs);
}

double mean_reprojection_error(std::span<const SE3Pose> world_to_camera,
                               std::span<const Vector2d> pixels,
                               const CameraIntrinsics& k, const Vector3d& point) {
  double sum = 0.0;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const Vector3d pc = world_to_camera[i] * point;
    if (!(pc.z() > kMinDepth)) return std::numeric_limits<double>::infinity();
    sum += (project(world_to_camera[i], point, k) - pixels[i]).norm();
  }
  return pixels.empty() ? 0.0 : sum / static_cast<double>(pixels.size());
}

PointFit refine_point(std::span<const SE3Pose> world_to_camera,
                      std::span<const Vector2d> pixels, const CameraIntrinsics& k,
                      const Vector3d& initial, int max_iterations) {
  Vector3d point = initial;
  for (int it = 0; it < max_iterations; ++it) {
    Matrix3d h = Matrix3d::Zero();
    Vector3d g = Vector3d::Zero();
    bool in_front = true;
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      const Vector3d pc = world_to_camera[i] * point;
      if (!(pc.z() > kMinDepth)) {
        in_front = false;
        break;
      }
      const Vector2d r = project(world_to_camera[i], point, k) - pixels[i];
      const Eigen::Matrix<double, 2, 3> j =
          projection_derivative(pc, k) * world_to_camera[i].rotation();
      h += j.transpose() * j;
      g += j.transpose() * r;
    }
    if (!in_front) break;
    Eigen::LDLT<Matrix3d> ldlt(h);
    if (ldlt.info() != Eigen::Success) break;
    const Vector3d step = -ldlt.solve(g);
    if (!step.allFinite()) break;
    point += step;
    if (step.norm() < 1e-12 * (1.0 + point.norm())) break;
  }
  return {point, mean_reprojection_error(world_to_camera, pixels, k, point)};
}

SE3Pose refine_pose(const SE3Pose& world_to_camera, std::span<const Vector3d> landmarks,
                    std::span<const Vector2d> pixels, const CameraIntrinsics& k,
                    int max_iterations) {
  SE3Pose pose = world_to_camera;
  for (int it = 0; it < max_iterations; ++it) {
    Matrix6d h = Matrix6d::Zero();
    Vector6d g = Vector6d::Zero();
    int used = 0;
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      if (!((pose * landmarks[i]).z() > kMinDepth)) continue;
      const Vector2d r = project(pose, landmarks[i], k) - pixels[i];
      const auto jac = project_jacobians(pose, landmarks[i], k);
      h += jac.pose.transpose() * jac.pose;
      g += jac.pose.transpose() * r;
      ++used;
    }
    if (used < 3) break;
    Eigen::LDLT<Matrix6d> ldlt(h);
    if (ldlt.info() != Eigen::Success) break;
    const Vector6d step = -ldlt.solve(g);
    if (!step.allFinite()) break;
    pose = retract(pose, Twist(step));
    if (step.cwiseAbs().maxCoeff() < 1e-12) break;
  }
  return pose;
}

}  // namespace ctsfm
