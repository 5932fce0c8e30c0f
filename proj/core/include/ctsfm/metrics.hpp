#pragma once

#include <vector>

#include "ctsfm/event_sim.hpp"

namespace ctsfm {

enum class Alignment { kNone, kSE3 };

struct TrajectoryErrors {
  double ate = 0.0;  // m, RMSE of aligned translations
  double rpe = 0.0;  // m, RMSE of relative translation error over `delta`
  std::size_t samples = 0;
  /// Applied to the estimate: aligned = alignment * estimate.
  SE3Pose alignment;
};

/// Pose at t by geodesic interpolation between the bracketing samples.
/// Samples must be time-sorted; t must lie inside their span.
SE3Pose interpolate_samples(const std::vector<TrajectorySample>& samples, double t);

/// Rigid transform minimizing sum || R a_i + t - b_i ||^2 (Horn/Umeyama,
/// no scale).
SE3Pose align_points(const std::vector<Vector3d>& from, const std::vector<Vector3d>& to);

/// ATE and RPE of `estimate` against the ground-truth samples inside the
/// estimate's time span. Throws kNoOverlap when fewer than two ground-truth
/// samples fall inside that span.
TrajectoryErrors trajectory_errors(const std::vector<TrajectorySample>& estimate,
                                   const std::vector<TrajectorySample>& ground_truth,
                                   Alignment alignment = Alignment::kSE3,
                                   double delta = 0.1);

/// Total translational length of a sampled trajectory.
double path_length(const std::vector<TrajectorySample>& samples);

}  // namespace ctsfm
