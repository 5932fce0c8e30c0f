#include "ctsfm/initializer.hpp"

#include <limits>
#include <random>

#include "ctsfm/errors.hpp"
#include "ctsfm/factor_graph.hpp"

namespace ctsfm {

GroundTruthInitializer::GroundTruthInitializer(PoseSource source, double translation_sigma,
                                               double rotation_sigma, std::uint64_t seed)
    : source_(std::move(source)),
      translation_sigma_(translation_sigma),
      rotation_sigma_(rotation_sigma),
      seed_(seed) {}

TwoViewEstimate GroundTruthInitializer::estimate(const TwoViewProblem& problem,
                                                 const CameraIntrinsics&) {
  TwoViewEstimate out;
  out.pose0 = source_(problem.t0);
  const SE3Pose truth1 = source_(problem.t1);
  out.baseline = (truth1.translation() - out.pose0.translation()).norm();
  std::mt19937_64 rng(seed_);
  std::normal_distribution<double> n(0.0, 1.0);
  Vector6d d;
  for (int i = 0; i < 3; ++i) d(i) = translation_sigma_ * n(rng);
  for (int i = 3; i < 6; ++i) d(i) = rotation_sigma_ * n(rng);
  out.pose1 = retract(truth1, Twist(d));
  return out;
}

RandomDepthInitializer::RandomDepthInitializer(double depth, double jitter, std::uint64_t seed)
    : depth_(depth), jitter_(jitter), seed_(seed) {}

TwoViewEstimate RandomDepthInitializer::estimate(const TwoViewProblem& problem,
                                                 const CameraIntrinsics& intrinsics) {
  const std::size_t n = problem.pixels0.size();
  if (n < 6 || problem.pixels1.size() != n) {
    fail(ErrorCode::kInvalidArgument, "random-depth initializer: need >= 6 correspondences");
  }
  if (!(problem.t1 > problem.t0)) {
    fail(ErrorCode::kInvalidArgument, "random-depth initializer: views must be time-ordered");
  }
  const double sqrt_gauge = std::sqrt(kGaugeInformation);
  const Vector3d directions[] = {Vector3d::UnitX(),  -Vector3d::UnitX(), Vector3d::UnitY(),
                                 -Vector3d::UnitY(), Vector3d::UnitZ(),  -Vector3d::UnitZ()};

  std::mt19937_64 rng(seed_);
  std::uniform_real_distribution<double> jitter(-jitter_, jitter_);
  std::vector<Vector3d> initial_points(n);
  for (std::size_t i = 0; i < n; ++i) {
    initial_points[i] = intrinsics.back_project(problem.pixels0[i]) * (depth_ + jitter(rng));
  }

  double best_cost = std::numeric_limits<double>::infinity();
  TwoViewEstimate best;
  for (const Vector3d& dir : directions) {
    FactorGraph graph(intrinsics, WnoaPrior::isotropic(1.0, 1.0));
    Values values;
    ControlState x0;
    x0.timestamp = problem.t0;
    ControlState x1;
    x1.timestamp = problem.t1;
    x1.pose = SE3Pose(Matrix3d::Identity(), dir);
    values.states = {x0, x1};
    values.landmarks = initial_points;
    for (std::size_t i = 0; i < n; ++i) {
      EventObservation e0{problem.pixels0[i], problem.t0, 1, static_cast<TrackId>(i)};
      EventObservation e1{problem.pixels1[i], problem.t1, 1, static_cast<TrackId>(i)};
      graph.add_reprojection(e0, i, 0, std::nullopt, values);
      graph.add_reprojection(e1, i, 1, std::nullopt, values);
    }
    graph.add_gauge(PosePrior{0, SE3Pose::identity(), sqrt_gauge * Matrix6d::Identity()});
    graph.add_gauge(ScalePrior{0, 1, 1.0, sqrt_gauge});
    graph.add_gauge(VelocityPrior{0, Twist::zero(), Matrix6d::Identity()});
    graph.add_gauge(VelocityPrior{1, Twist::zero(), Matrix6d::Identity()});
    try {
      GaussNewtonConfig config;
      config.max_iterations = 100;
      gauss_newton(graph, values, config);
    } catch (const Error&) {
      continue;
    }
    // Candidates with points behind either camera are mirror solutions.
    bool in_front = true;
    for (const auto& l : values.landmarks) {
      in_front = in_front && (values.states[0].pose.inverse() * l).z() > kMinDepth &&
                 (values.states[1].pose.inverse() * l).z() > kMinDepth;
    }
    if (!in_front) continue;
    const double cost = total_cost(graph, values);
    if (cost < best_cost) {
      best_cost = cost;
      best.pose0 = values.states[0].pose;
      best.pose1 = values.states[1].pose;
      best.baseline = 1.0;
    }
  }
  if (!std::isfinite(best_cost)) {
    fail(ErrorCode::kBootstrapFailure, "random-depth initializer: no candidate converged");
  }
  return best;
}

}  // namespace ctsfm
