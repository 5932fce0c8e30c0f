#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <sstream>
#include <vector>

#include "ctsfm/errors.hpp"
#include "ctsfm/factor_graph.hpp"
#include "test_support.hpp"

namespace ctsfm {
namespace {

using testing::numeric_jacobian;
using testing::random_vector;
using testing::relative_error;
using testing::test_camera;

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::kIo;
}

const Twist kTwist(Vector3d(0.4, -0.1, 0.05), Vector3d(0.05, 0.2, -0.1));

SE3Pose pose_at(double t) { return exp_map(kTwist * t); }

EventObservation observe(double t, const Vector3d& landmark, TrackId id = 0) {
  EventObservation e;
  e.timestamp = t;
  e.pixel = project(pose_at(t).inverse(), landmark, test_camera());
  e.track_id = id;
  return e;
}

/// Noise-free constant-twist scene: knots at 0, 0.5, 1.0 and landmarks in front.
struct Scene {
  FactorGraph graph{test_camera(), WnoaPrior::isotropic(1.0, 1.0)};
  Values values;

  explicit Scene(int landmarks = 6, int events_per_landmark = 5, bool gauges = true) {
    for (int i = 0; i < 3; ++i) {
      ControlState s;
      s.timestamp = 0.5 * i;
      s.pose = pose_at(s.timestamp);
      s.velocity = kTwist;
      values.states.push_back(s);
    }
    std::mt19937_64 rng(7);
    for (int j = 0; j < landmarks; ++j) {
      values.landmarks.push_back(Vector3d(0, 0, 6) + random_vector(rng, 1.5));
    }
    graph.add_gp_prior(0, 1, values);
    graph.add_gp_prior(1, 2, values);
    for (int j = 0; j < landmarks; ++j) {
      for (int k = 0; k < events_per_landmark; ++k) {
        const double t = 0.02 + 0.96 * k / std::max(1, events_per_landmark - 1);
        const std::size_t left = t < 0.5 ? 0 : 1;
        graph.add_reprojection(observe(t, values.landmarks[j], j), j, left, left + 1, values);
      }
    }
    if (gauges) {
      PosePrior p;
      p.state = 0;
      p.mean = values.states[0].pose;
      p.sqrt_information = Matrix6d::Identity() * std::sqrt(kGaugeInformation);
      graph.add_gauge(p);
      ScalePrior s;
      s.state_a = 0;
      s.state_b = 2;
      s.distance = (values.states[2].pose.translation() - values.states[0].pose.translation()).norm();
      s.sqrt_information = std::sqrt(kGaugeInformation);
      graph.add_gauge(s);
    }
  }
};

Values perturbed(const Values& v, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Values out = v;
  for (auto& s : out.states) {
    Vector12d d;
    for (int i = 0; i < 12; ++i) d(i) = n(rng);
    s = perturb(s, d);
  }
  for (auto& l : out.landmarks) l += Vector3d(n(rng), n(rng), n(rng)) * 10.0;
  return out;
}

TEST(ReprojectionFactor, ZeroResidualOnNoiseFreeData) {
  Scene scene;
  for (const auto& f : scene.graph.reprojections()) {
    const auto lin = linearize_reprojection(f, scene.values, test_camera());
    ASSERT_TRUE(lin.valid);
    EXPECT_LT(lin.residual.norm(), 1e-8);
  }
  EXPECT_LT(total_cost(scene.graph, scene.values), 1e-12);
}

TEST(ReprojectionFactor, AtLeftKnotUsesLeftPose) {
  Scene scene(1, 1, false);
  const std::size_t idx =
      scene.graph.add_reprojection(observe(0.5, scene.values.landmarks[0]), 0, 1, 2, scene.values);
  const SE3Pose p = reprojection_camera_pose(scene.graph.reprojections()[idx], scene.values);
  EXPECT_LT(log_map(p.inverse() * scene.values.states[1].pose).vector().norm(), 1e-12);
}

void check_jacobians(const ReprojectionFactor& f, const Values& base) {
  const auto k = test_camera();
  const auto lin = linearize_reprojection(f, base, k);
  ASSERT_TRUE(lin.valid);
  const auto residual_with = [&](const Values& v) {
    return Eigen::VectorXd(linearize_reprojection(f, v, k).residual);
  };
  const Eigen::MatrixXd d_left = numeric_jacobian(
      [&](const Eigen::VectorXd& d) {
        Values v = base;
        v.states[f.left_state] = perturb(v.states[f.left_state], d);
        return residual_with(v);
      },
      12);
  EXPECT_LT(relative_error(lin.d_left, d_left), 1e-5);
  if (f.right_state) {
    const Eigen::MatrixXd d_right = numeric_jacobian(
        [&](const Eigen::VectorXd& d) {
          Values v = base;
          v.states[*f.right_state] = perturb(v.states[*f.right_state], d);
          return residual_with(v);
        },
        12);
    EXPECT_LT(relative_error(lin.d_right, d_right), 1e-5);
  } else {
    EXPECT_TRUE(lin.d_right.isZero(0.0));
  }
  const Eigen::MatrixXd d_l = numeric_jacobian(
      [&](const Eigen::VectorXd& d) {
        Values v = base;
        v.landmarks[f.landmark] += d;
        return residual_with(v);
      },
      3);
  EXPECT_LT(relative_error(lin.d_landmark, d_l), 1e-6);
}

TEST(ReprojectionFactor, InterpolatedJacobiansMatchFiniteDifferences) {
  Scene scene;
  const Values v = perturbed(scene.values, 0.02, 3);
  for (std::size_t i = 0; i < scene.graph.reprojections().size(); i += 3) {
    check_jacobians(scene.graph.reprojections()[i], v);
  }
}

TEST(ReprojectionFactor, ExtrapolatedJacobiansMatchFiniteDifferences) {
  Scene scene(2, 1, false);
  const std::size_t idx = scene.graph.add_reprojection(observe(1.2, scene.values.landmarks[0]),
                                                       0, 2, std::nullopt, scene.values);
  const auto& f = scene.graph.reprojections()[idx];
  EXPECT_LT(linearize_reprojection(f, scene.values, test_camera()).residual.norm(), 1e-8);
  check_jacobians(f, perturbed(scene.values, 0.02, 5));
}

TEST(ReprojectionFactor, RebracketKeepsResidual) {
  Scene scene(2, 1, false);
  const auto e = observe(0.7, scene.values.landmarks[1]);
  const std::size_t idx = scene.graph.add_reprojection(e, 1, 1, std::nullopt, scene.values);
  scene.graph.rebracket_reprojection(idx, 1, 2, scene.values);
  const auto& f = scene.graph.reprojections()[idx];
  ASSERT_TRUE(f.right_state.has_value());
  EXPECT_EQ(*f.right_state, 2u);
  EXPECT_LT(linearize_reprojection(f, scene.values, test_camera()).residual.norm(), 1e-8);
}

TEST(ReprojectionFactor, RejectsEventOutsideBracket) {
  Scene scene(1, 1, false);
  EXPECT_EQ(code_of([&] {
              scene.graph.add_reprojection(observe(0.7, scene.values.landmarks[0]), 0, 0, 1,
                                           scene.values);
            }),
            ErrorCode::kInvalidArgument);
}

TEST(ReprojectionFactor, BehindCameraIsInvalid) {
  Scene scene(1, 1, false);
  Values v = scene.values;
  v.landmarks[0] = Vector3d(0, 0, -5);
  const auto lin = linearize_reprojection(scene.graph.reprojections()[0], v, test_camera());
  EXPECT_FALSE(lin.valid);
  EXPECT_FALSE(reprojection_error(scene.graph, 0, v).has_value());
}

// Gradient oracle: b = -grad(cost) by central differences over the tangent step.
TEST(Assembly, RhsIsNegativeCostGradient) {
  Scene scene;
  const Values v = perturbed(scene.values, 1e-3, 11);
  const SolveScope scope = make_scope(scene.graph, v);
  const SparseBlockSystem system = assemble(scene.graph, v, scope);
  const int n = scope.layout.total_dim();
  Eigen::VectorXd grad(n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
    const double h = 1e-7;
    d(i) = h;
    grad(i) = (total_cost(scene.graph, apply_step(v, scope, d)) -
               total_cost(scene.graph, apply_step(v, scope, -d))) /
              (2 * h);
  }
  EXPECT_LT(relative_error(system.rhs(), -grad), 1e-4);
}

// Hessian oracle: at a zero-residual point the Gauss-Newton matrix equals the
// true Hessian of the cost.
TEST(Assembly, MatrixMatchesDenseHessianAtOptimum) {
  Scene scene(4, 4, true);
  const Values& v = scene.values;
  const SolveScope scope = make_scope(scene.graph, v);
  const Eigen::MatrixXd a = assemble(scene.graph, v, scope).to_dense();
  const int n = scope.layout.total_dim();
  ASSERT_EQ(n, 3 * kStateDim + 4 * kLandmarkDim);
  const double h = 1e-4;
  const auto cost = [&](const Eigen::VectorXd& d) {
    return total_cost(scene.graph, apply_step(v, scope, d));
  };
  Eigen::MatrixXd hess(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      Eigen::VectorXd di = Eigen::VectorXd::Zero(n), dj = Eigen::VectorXd::Zero(n);
      di(i) = h;
      dj(j) = h;
      hess(i, j) = (cost(di + dj) - cost(di - dj) - cost(dj - di) + cost(-di - dj)) / (4 * h * h);
      hess(j, i) = hess(i, j);
    }
  }
  EXPECT_LT(relative_error(a, hess), 1e-4);
  EXPECT_LT((a - a.transpose()).cwiseAbs().maxCoeff(), 1e-9 * a.cwiseAbs().maxCoeff());
}

TEST(Assembly, WarmCacheMatchesBatchAtLinearizationPoint) {
  Scene scene;
  const Values v = perturbed(scene.values, 1e-3, 13);
  const SolveScope scope = make_scope(scene.graph, v);
  LinearizationCache cache(1e-3);
  const Eigen::MatrixXd batch = assemble(scene.graph, v, scope).to_dense();
  const Eigen::MatrixXd warm = assemble(scene.graph, v, scope, &cache).to_dense();
  EXPECT_LT(relative_error(warm, batch), 1e-12);
  const std::size_t first = cache.linearizations();
  EXPECT_GT(first, 0u);
  assemble(scene.graph, v, scope, &cache);
  EXPECT_EQ(cache.linearizations(), first);
}

TEST(Assembly, WithoutGaugeIsRankDeficient) {
  Scene scene(6, 5, false);
  const SolveScope scope = make_scope(scene.graph, scene.values);
  const SparseBlockSystem system = assemble(scene.graph, scene.values, scope);
  EXPECT_EQ(code_of([&] { solve_normal_equations(system); }), ErrorCode::kRankDeficient);
}

TEST(Assembly, ScopeSkipsFrozenAndUnobservedVariables) {
  Scene scene(3, 2, true);
  scene.values.landmarks.push_back(Vector3d(0, 0, 4));
  const SolveScope scope = make_scope(scene.graph, scene.values, {true, false, false}, {});
  EXPECT_EQ(scope.state_block[0], -1);
  EXPECT_GE(scope.state_block[1], 0);
  EXPECT_EQ(scope.landmark_block[3], -1);
  EXPECT_EQ(scope.layout.total_dim(), 2 * kStateDim + 3 * kLandmarkDim);
}

TEST(GaussNewton, RecoversNoiseFreeSolution) {
  Scene scene;
  Values v = perturbed(scene.values, 5e-3, 17);
  const double start = total_cost(scene.graph, v);
  const GaussNewtonReport report = gauss_newton(scene.graph, v);
  EXPECT_TRUE(report.converged);
  EXPECT_DOUBLE_EQ(report.initial_cost, start);
  EXPECT_LT(report.final_cost, 1e-10);
  for (std::size_t i = 1; i < report.cost_trace.size(); ++i) {
    EXPECT_LE(report.cost_trace[i], report.cost_trace[i - 1]);
  }
  for (std::size_t i = 0; i < v.states.size(); ++i) {
    EXPECT_LT(state_difference(scene.values.states[i], v.states[i]).norm(), 1e-6);
  }
  for (std::size_t j = 0; j < v.landmarks.size(); ++j) {
    EXPECT_LT((v.landmarks[j] - scene.values.landmarks[j]).norm(), 1e-6);
  }
}

TEST(GaussNewton, ZeroIterationsAtOptimum) {
  Scene scene;
  Values v = scene.values;
  const GaussNewtonReport report = gauss_newton(scene.graph, v);
  EXPECT_TRUE(report.converged);
  EXPECT_LE(report.iterations, 1);
}

TEST(GaussNewton, InactiveFactorsDropOut) {
  Scene scene;
  Values v = scene.values;
  v.landmarks[0] += Vector3d(0.5, 0, 0);
  const double before = total_cost(scene.graph, v);
  for (std::size_t i = 0; i < scene.graph.reprojections().size(); ++i) {
    if (scene.graph.reprojections()[i].landmark == 0) scene.graph.set_reprojection_active(i, false);
  }
  EXPECT_LT(total_cost(scene.graph, v), before);
  EXPECT_LT(total_cost(scene.graph, v), 1e-12);
  EXPECT_EQ(make_scope(scene.graph, v).landmark_block[0], -1);
}

TEST(FactorGraph, DumpIsDeterministic) {
  Scene a, b;
  std::ostringstream da, db;
  a.graph.dump(da, a.values);
  b.graph.dump(db, b.values);
  EXPECT_EQ(da.str(), db.str());
  EXPECT_FALSE(da.str().empty());
}

TEST(FactorGraph, GpPriorRequiresConsecutiveKnots) {
  Scene scene(1, 1, false);
  EXPECT_EQ(code_of([&] { scene.graph.add_gp_prior(0, 2, scene.values); }),
            ErrorCode::kInvalidArgument);
}

}  // namespace
}  // namespace ctsfm
