#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <vector>

#include <Eigen/SVD>

#include "ctsfm/camera.hpp"
#include "ctsfm/errors.hpp"
#include "test_support.hpp"

namespace ctsfm {
namespace {

using testing::numeric_jacobian;
using testing::random_pose;
using testing::relative_error;
using testing::test_camera;

// World point in front of the camera at depth in [1, 5].
Vector3d visible_point(std::mt19937_64& rng, const SE3Pose& world_to_camera,
                       const CameraIntrinsics& k) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Vector2d pixel(u(rng) * k.width, u(rng) * k.height);
  const double depth = 1.0 + 4.0 * u(rng);
  return world_to_camera.inverse() * (k.back_project(pixel) * depth);
}

TEST(Intrinsics, Validation) {
  CameraIntrinsics k = test_camera();
  EXPECT_NO_THROW(k.validate());
  k.fx = 0.0;
  EXPECT_THROW(k.validate(), Error);
  k = test_camera();
  k.cx = 1280.0;
  EXPECT_THROW(k.validate(), Error);
}

TEST(Project, PrincipalPointAndDirectFormula) {
  const CameraIntrinsics k = test_camera();
  const Vector2d c = project(SE3Pose::identity(), Vector3d(0, 0, 1), k);
  EXPECT_EQ(c, Vector2d(k.cx, k.cy));
  CameraIntrinsics simple;
  simple.fx = simple.fy = 100.0;
  simple.cx = simple.cy = 0.0;
  simple.width = simple.height = 100;
  const Vector2d z = project(SE3Pose::identity(), Vector3d(1, 0, 2), simple);
  EXPECT_LT((z - Vector2d(50, 0)).norm(), 1e-15);
}

TEST(Project, MatchesIndependentTransformThenDivide) {
  std::mt19937_64 rng(1);
  const CameraIntrinsics k = test_camera();
  for (int i = 0; i < 1000; ++i) {
    const SE3Pose pose = random_pose(rng);
    const Vector3d l = visible_point(rng, pose, k);
    const Eigen::Vector4d h = pose.matrix() * Eigen::Vector4d(l.x(), l.y(), l.z(), 1.0);
    Eigen::Matrix3d kmat;
    kmat << k.fx, 0, k.cx, 0, k.fy, k.cy, 0, 0, 1;
    const Vector3d uvw = kmat * h.head<3>();
    const Vector2d oracle = uvw.head<2>() / uvw.z();
    ASSERT_LT((project(pose, l, k) - oracle).norm(), 1e-9);
  }
}

TEST(Project, BehindCamera) {
  const CameraIntrinsics k = test_camera();
  try {
    project(SE3Pose::identity(), Vector3d(0, 0, 1e-3), k);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBehindCamera);
  }
  EXPECT_THROW(project_jacobians(SE3Pose::identity(), Vector3d(0, 0, -1), k), Error);
}

TEST(ProjectJacobians, MatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  const CameraIntrinsics k = test_camera();
  for (int i = 0; i < 1000; ++i) {
    const SE3Pose pose = random_pose(rng);
    const Vector3d l = visible_point(rng, pose, k);
    const ProjectionJacobians jac = project_jacobians(pose, l, k);
    const auto fp = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
      return project(retract(pose, Twist(Vector6d(d))), l, k);
    };
    const auto fl = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
      return project(pose, l + Vector3d(d), k);
    };
    ASSERT_LT(relative_error(jac.pose, numeric_jacobian(fp, 6)), 1e-5) << i;
    ASSERT_LT(relative_error(jac.landmark, numeric_jacobian(fl, 3)), 1e-5) << i;
  }
}

TEST(ProjectJacobians, AxialTranslationOfOnAxisPoint) {
  const CameraIntrinsics k = test_camera();
  const ProjectionJacobians jac = project_jacobians(SE3Pose::identity(), Vector3d(0, 0, 3), k);
  EXPECT_LT(jac.pose.col(2).norm(), 1e-15);
}

TEST(ProjectJacobians, LandmarkBlockHasRankTwo) {
  std::mt19937_64 rng(3);
  const CameraIntrinsics k = test_camera();
  const SE3Pose pose = random_pose(rng);
  const Vector3d l = visible_point(rng, pose, k);
  Eigen::JacobiSVD<Eigen::Matrix<double, 2, 3>> svd(project_jacobians(pose, l, k).landmark);
  EXPECT_GT(svd.singularValues()(1), 1e-6 * svd.singularValues()(0));
}

TEST(Project, GaugeCovariance) {
  std::mt19937_64 rng(4);
  const CameraIntrinsics k = test_camera();
  for (int i = 0; i < 100; ++i) {
    const SE3Pose pose = random_pose(rng);
    const Vector3d l = visible_point(rng, pose, k);
    const SE3Pose g = random_pose(rng);  // world' = g * world
    const Vector2d a = project(pose, l, k);
    const Vector2d b = project(pose * g.inverse(), g * l, k);
    ASSERT_LT((a - b).norm(), 1e-10);
  }
}

TEST(Triangulate, NoiseFreeRecoversPoint) {
  std::mt19937_64 rng(5);
  const CameraIntrinsics k = test_camera();
  for (int i = 0; i < 200; ++i) {
    const SE3Pose a = random_pose(rng, 1.0, 0.3);
    const SE3Pose b = a * exp_map(Twist(Vector3d(0.3, 0.05, 0.0), Vector3d(0.0, 0.05, 0.0)));
    const Vector3d l = visible_point(rng, a, k);
    if ((b * l).z() < 0.5) continue;
    const Triangulation t = triangulate(a, b, project(a, l, k), project(b, l, k), k);
    ASSERT_LT((t.point - l).norm(), 1e-9) << i;
    ASSERT_LT((project(a, t.point, k) - project(a, l, k)).norm(), 1e-7);
    ASSERT_GT(t.parallax, 0.0);
  }
}

TEST(Triangulate, DegenerateInputs) {
  const CameraIntrinsics k = test_camera();
  const SE3Pose p = SE3Pose::identity();
  try {
    triangulate(p, p, Vector2d(600, 300), Vector2d(600, 300), k);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kLowParallax);
  }
  // Diverging rays intersect behind the cameras.
  const SE3Pose q(Matrix3d::Identity(), Vector3d(-0.2, 0, 0));
  const Vector2d za(k.cx - 100.0, k.cy);
  const Vector2d zb(k.cx + 100.0, k.cy);
  try {
    triangulate(p, q, za, zb, k);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCheirality);
  }
}

TEST(Triangulate, NoisyMonteCarloAccuracy) {
  // 0.5 px noise, 0.2 m baseline, 2 m depth.
  std::mt19937_64 rng(6);
  const CameraIntrinsics k = test_camera();
  std::normal_distribution<double> noise(0.0, 0.5);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  std::vector<double> errors;
  for (int i = 0; i < 1000; ++i) {
    const SE3Pose a = SE3Pose::identity();
    const SE3Pose b(Matrix3d::Identity(), Vector3d(-0.2, 0, 0));
    const Vector3d l(u(rng), u(rng) * 0.6, 2.0);
    const Vector2d za = project(a, l, k) + Vector2d(noise(rng), noise(rng));
    const Vector2d zb = project(b, l, k) + Vector2d(noise(rng), noise(rng));
    errors.push_back((triangulate(a, b, za, zb, k).point - l).norm());
  }
  std::sort(errors.begin(), errors.end());
  EXPECT_LT(errors[949], 0.05) << "95th percentile " << errors[949];
}

TEST(IntersectRays, MatchesTriangulationAndRejectsParallel) {
  std::mt19937_64 rng(7);
  const CameraIntrinsics k = test_camera();
  std::vector<SE3Pose> poses;
  std::vector<Vector2d> pixels;
  const Vector3d l(0.2, -0.1, 3.0);
  for (int i = 0; i < 5; ++i) {
    const SE3Pose p(Matrix3d::Identity(), Vector3d(-0.1 * i, 0.02 * i, 0.0));
    poses.push_back(p);
    pixels.push_back(project(p, l, k));
  }
  EXPECT_LT((intersect_rays(poses, pixels, k) - l).norm(), 1e-9);
  const std::vector<SE3Pose> same(2, SE3Pose::identity());
  const std::vector<Vector2d> px(2, Vector2d(640, 360));
  EXPECT_THROW(intersect_rays(same, px, k), Error);
}

TEST(RefinePoint, ReducesReprojectionError) {
  const CameraIntrinsics k = test_camera();
  std::vector<SE3Pose> poses;
  std::vector<Vector2d> pixels;
  const Vector3d l(0.2, -0.1, 3.0);
  for (int i = 0; i < 5; ++i) {
    const SE3Pose p(Matrix3d::Identity(), Vector3d(-0.1 * i, 0.02 * i, 0.0));
    poses.push_back(p);
    pixels.push_back(project(p, l, k));
  }
  const PointFit fit = refine_point(poses, pixels, k, l + Vector3d(0.05, -0.03, 0.2));
  EXPECT_LT((fit.point - l).norm(), 1e-8);
  EXPECT_LT(fit.mean_error, 1e-6);
}

}  // namespace
}  // namespace ctsfm
