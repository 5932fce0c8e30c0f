#pragma once

#include <Eigen/Core>
#include <random>

#include "ctsfm/camera.hpp"
#include "ctsfm/gp_motion.hpp"
#include "ctsfm/lie.hpp"

namespace ctsfm::testing {

inline Vector3d random_vector(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Vector3d(u(rng), u(rng), u(rng));
}

/// Rotation angle uniform below `max_angle`.
inline Twist random_twist(std::mt19937_64& rng, double trans_scale, double max_angle) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector3d axis(n(rng), n(rng), n(rng));
  axis.normalize();
  std::uniform_real_distribution<double> a(0.0, max_angle);
  return Twist(random_vector(rng, trans_scale), axis * a(rng));
}

inline SE3Pose random_pose(std::mt19937_64& rng, double trans_scale = 2.0,
                           double max_angle = 3.0) {
  return exp_map(random_twist(rng, trans_scale, max_angle));
}

/// Relative error ||a - b|| / max(||b||, floor).
inline double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                             double floor = 1e-6) {
  return (a - b).norm() / std::max(b.norm(), floor);
}

/// Central differences of f over `dim` tangent coordinates.
template <typename F>
Eigen::MatrixXd numeric_jacobian(F f, int dim, double h = 1e-6) {
  Eigen::MatrixXd j;
  for (int i = 0; i < dim; ++i) {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(dim);
    d(i) = h;
    const Eigen::VectorXd plus = f(d);
    const Eigen::VectorXd minus = f(-d);
    if (i == 0) j.resize(plus.size(), dim);
    j.col(i) = (plus - minus) / (2.0 * h);
  }
  return j;
}

inline CameraIntrinsics test_camera() {
  CameraIntrinsics k;
  k.fx = 900.0;
  k.fy = 900.0;
  k.cx = 640.0;
  k.cy = 360.0;
  k.width = 1280;
  k.height = 720;
  return k;
}

}  // namespace ctsfm::testing
