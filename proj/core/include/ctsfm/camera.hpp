#pragma once

#include <span>

#include "ctsfm/lie.hpp"

namespace ctsfm {

/// Points closer than this to the image plane are treated as behind the camera.
inline constexpr double kMinDepth = 1e-3;

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  /// Throws kInvalidArgument unless fx, fy > 0 and the principal point lies on
  /// the sensor.
  void validate() const;
  bool contains(const Vector2d& pixel) const;
  /// Unnormalized ray (x, y, 1) in the camera frame.
  Vector3d back_project(const Vector2d& pixel) const;
};

/// Pinhole projection of a world point through a world-to-camera pose.
/// Throws kBehindCamera when the camera-frame depth is <= kMinDepth.
Vector2d project(const SE3Pose& world_to_camera, const Vector3d& landmark,
                 const CameraIntrinsics& k);

/// Derivatives of `project` for the perturbation world_to_camera * exp(delta)
/// and for an additive landmark update.
struct ProjectionJacobians {
  Eigen::Matrix<double, 2, 6> pose;
  Eigen::Matrix<double, 2, 3> landmark;
};

ProjectionJacobians project_jacobians(const SE3Pose& world_to_camera,
                                      const Vector3d& landmark,
                                      const CameraIntrinsics& k);

struct Triangulation {
  Vector3d point;
  /// Angle between the two viewing rays, radians.
  double parallax = 0.0;
};

/// Midpoint of the common perpendicular of two back-projected rays.
/// kLowParallax for baselines below 1e-6 m or rays within 0.1 deg;
/// kCheirality if the point lies behind either camera.
Triangulation triangulate(const SE3Pose& world_to_camera_a,
                          const SE3Pose& world_to_camera_b, const Vector2d& z_a,
                          const Vector2d& z_b, const CameraIntrinsics& k);

/// Least-squares intersection of N rays (sum of squared perpendicular
/// distances). Requires at least two non-parallel rays.
Vector3d intersect_rays(std::span<const SE3Pose> world_to_camera,
                        std::span<const Vector2d> pixels, const CameraIntrinsics& k);

struct PointFit {
  Vector3d point;
  /// Mean pixel reprojection error; +inf if the point is behind any camera.
  double mean_error = 0.0;
};

/// Landmark-only Gauss-Newton with fixed cameras.
PointFit refine_point(std::span<const SE3Pose> world_to_camera,
                      std::span<const Vector2d> pixels, const CameraIntrinsics& k,
                      const Vector3d& initial, int max_iterations = 10);

/// Mean reprojection error of a point; +inf if behind any camera.
double mean_reprojection_error(std::span<const SE3Pose> world_to_camera,
                               std::span<const Vector2d> pixels,
                               const CameraIntrinsics& k, const Vector3d& point);

/// Pose-only Gauss-Newton against fixed landmarks (camera resection).
SE3Pose refine_pose(const SE3Pose& world_to_camera, std::span<const Vector3d> landmarks,
                    std::span<const Vector2d> pixels, const CameraIntrinsics& k,
                    int max_iterations = 10);

}  // namespace ctsfm
