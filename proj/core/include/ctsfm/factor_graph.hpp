#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <variant>
#include <vector>

#include "ctsfm/camera.hpp"
#include "ctsfm/event.hpp"
#include "ctsfm/gp_motion.hpp"
#include "ctsfm/sparse_system.hpp"

namespace ctsfm {

inline constexpr int kStateDim = 12;
inline constexpr int kLandmarkDim = 3;

/// Default pixel noise sigma (px) for reprojection factors.
inline constexpr double kDefaultPixelSigma = 0.5;
/// Information per unit of the anchoring gauge priors.
inline constexpr double kGaugeInformation = 1e8;

enum class VariableKind { kControlState, kLandmark };

struct VariableIndex {
  VariableKind kind = VariableKind::kControlState;
  std::size_t ordinal = 0;

  static VariableIndex state(std::size_t i) { return {VariableKind::kControlState, i}; }
  static VariableIndex landmark(std::size_t i) { return {VariableKind::kLandmark, i}; }
  auto operator<=>(const VariableIndex&) const = default;
};

/// X = [x_1 .. x_M, l_1 .. l_L]. States are time-ordered.
struct Values {
  std::vector<ControlState> states;
  std::vector<Vector3d> landmarks;

  TrajectoryGP trajectory(const WnoaPrior& prior) const;
};

/// Per-event likelihood term. The camera pose at the event time is the GP
/// interpolation between `left_state` and `right_state`; without a right
/// state the pose is the constant-velocity extrapolation of `left_state`.
struct ReprojectionFactor {
  EventObservation event;
  std::size_t landmark = 0;
  std::size_t left_state = 0;
  std::optional<std::size_t> right_state;
  Matrix2d pixel_noise = Matrix2d::Identity() * kDefaultPixelSigma * kDefaultPixelSigma;
  bool active = true;

  // Derived at construction from the knot timestamps and the prior.
  Eigen::Matrix<double, 6, 12> lambda_top = Eigen::Matrix<double, 6, 12>::Zero();
  Eigen::Matrix<double, 6, 12> psi_top = Eigen::Matrix<double, 6, 12>::Zero();
  Matrix2d sqrt_information = Matrix2d::Identity() / kDefaultPixelSigma;
  std::uint64_t revision = 0;
};

struct GpPriorFactor {
  std::size_t left_state = 0;
  std::size_t right_state = 0;
  Matrix12d information = Matrix12d::Identity();
  Matrix12d sqrt_information = Matrix12d::Identity();
};

struct PosePrior {
  std::size_t state = 0;
  SE3Pose mean;
  Matrix6d sqrt_information = Matrix6d::Identity();
};

struct VelocityPrior {
  std::size_t state = 0;
  Twist mean;
  Matrix6d sqrt_information = Matrix6d::Identity();
};

struct PointPrior {
  std::size_t landmark = 0;
  Vector3d mean = Vector3d::Zero();
  Matrix3d sqrt_information = Matrix3d::Identity();
};

/// Fixes monocular scale: || p_b - p_a || = distance for the camera centres
/// of two states.
struct ScalePrior {
  std::size_t state_a = 0;
  std::size_t state_b = 0;
  double distance = 1.0;
  double sqrt_information = 1.0;
};

using GaugePriorFactor = std::variant<PosePrior, VelocityPrior, PointPrior, ScalePrior>;

/// Reprojection residual z - h(x(t_k), l) and its Jacobians. Invalid when the
/// landmark is behind the interpolated camera.
struct ReprojectionLinearization {
  bool valid = false;
  Vector2d residual = Vector2d::Zero();
  Eigen::Matrix<double, 2, 12> d_left = Eigen::Matrix<double, 2, 12>::Zero();
  Eigen::Matrix<double, 2, 12> d_right = Eigen::Matrix<double, 2, 12>::Zero();
  Eigen::Matrix<double, 2, 3> d_landmark = Eigen::Matrix<double, 2, 3>::Zero();
};

class FactorGraph {
 public:
  FactorGraph(CameraIntrinsics intrinsics, WnoaPrior prior);

  const CameraIntrinsics& intrinsics() const { return intrinsics_; }
  const WnoaPrior& prior() const { return prior_; }

  /// Consecutive knots only (right = left + 1).
  std::size_t add_gp_prior(std::size_t left, std::size_t right, const Values& values);

  /// Requires t_left <= t_event <= t_right (t_left <= t_event when extrapolating).
  std::size_t add_reprojection(const EventObservation& event, std::size_t landmark,
                               std::size_t left, std::optional<std::size_t> right,
                               const Values& values,
                               std::optional<Matrix2d> pixel_noise = std::nullopt);

  /// Re-brackets an existing reprojection factor (e.g. an extrapolating factor
  /// once the next knot exists).
  void rebracket_reprojection(std::size_t index, std::size_t left,
                              std::optional<std::size_t> right, const Values& values);

  std::size_t add_gauge(GaugePriorFactor factor);

  void set_reprojection_active(std::size_t index, bool active);

  const std::vector<GpPriorFactor>& gp_priors() const { return gp_priors_; }
  const std::vector<ReprojectionFactor>& reprojections() const { return reprojections_; }
  const std::vector<GaugePriorFactor>& gauges() const { return gauges_; }

  std::size_t active_reprojection_count() const;

  /// Deterministic text dump, one line per variable/factor.
  void dump(std::ostream& out, const Values& values) const;

 private:
  void build_operators(ReprojectionFactor& f, const Values& values) const;

  CameraIntrinsics intrinsics_;
  WnoaPrior prior_;
  std::vector<GpPriorFactor> gp_priors_;
  std::vector<ReprojectionFactor> reprojections_;
  std::vector<GaugePriorFactor> gauges_;
  std::uint64_t next_revision_ = 1;
};

ReprojectionLinearization linearize_reprojection(const ReprojectionFactor& f,
                                                 const Values& values,
                                                 const CameraIntrinsics& k);

/// Pose of the camera (camera-to-world) at the event time of `f`.
SE3Pose reprojection_camera_pose(const ReprojectionFactor& f, const Values& values);

/// Whitened residual norm of a gauge prior and its Jacobians with respect to
/// the touched variables (in the order returned by `gauge_variables`).
std::vector<VariableIndex> gauge_variables(const GaugePriorFactor& f);

/// Negative log posterior up to a constant: 0.5 * sum of squared whitened
/// residuals over active factors.
double total_cost(const FactorGraph& graph, const Values& values);

/// Pixel reprojection error (unwhitened) of a factor; nullopt if behind camera.
std::optional<double> reprojection_error(const FactorGraph& graph, std::size_t factor,
                                         const Values& values);

/// Which variables take part in a solve, and their block ids.
struct SolveScope {
  std::vector<int> state_block;     // -1 = not in the system
  std::vector<int> landmark_block;  // -1 = not in the system
  BlockLayout layout;
};

/// Free variables: non-frozen states, and non-frozen landmarks that carry at
/// least one active factor.
SolveScope make_scope(const FactorGraph& graph, const Values& values,
                      const std::vector<bool>& frozen_states = {},
                      const std::vector<bool>& frozen_landmarks = {});

class LinearizationCache;

/// A = P^-1 + J^T R^-1 J and b = -J^T R^-1 r over all active factors.
SparseBlockSystem assemble(const FactorGraph& graph, const Values& values,
                           const SolveScope& scope, LinearizationCache* cache = nullptr);

/// As `assemble`; batch-mode linearizations are added to `batch_count`.
SparseBlockSystem assemble_counted(const FactorGraph& graph, const Values& values,
                                   const SolveScope& scope, LinearizationCache* cache,
                                   std::size_t* batch_count);

/// Applies a solved step: poses by retraction, velocities and landmarks
/// additively.
Values apply_step(const Values& values, const SolveScope& scope, const Eigen::VectorXd& step);

/// Cached linearizations for warm (incremental) solves. A variable is
/// relinearized when it drifts more than `relinearize_threshold` (tangent
/// inf-norm) from its linearization point; factors touching only settled
/// variables reuse their cached Jacobians with a first-order residual update.
class LinearizationCache {
 public:
  explicit LinearizationCache(double relinearize_threshold = 1e-3)
      : threshold_(relinearize_threshold) {}

  double relinearize_threshold() const { return threshold_; }
  /// Total factor linearizations performed through this cache.
  std::size_t linearizations() const { return linearizations_; }
  void reset_counter() { linearizations_ = 0; }
  void clear();
  /// Forces every factor to be relinearized on next use.
  void invalidate() { force_all_ = true; }

 private:
  friend SparseBlockSystem assemble_counted(const FactorGraph&, const Values&,
                                            const SolveScope&, LinearizationCache*,
                                            std::size_t*);

  struct Reprojection {
    std::uint64_t revision = 0;
    bool valid = false;
    Vector2d residual = Vector2d::Zero();  // whitened
    Eigen::Matrix<double, 2, 27> jacobian = Eigen::Matrix<double, 2, 27>::Zero();
  };
  struct Prior {
    bool valid = false;
    Vector12d residual = Vector12d::Zero();  // whitened
    Eigen::Matrix<double, 12, 24> jacobian = Eigen::Matrix<double, 12, 24>::Zero();
  };

  double threshold_;
  bool force_all_ = false;
  std::size_t linearizations_ = 0;
  std::vector<ControlState> state_points_;
  std::vector<bool> state_known_;
  std::vector<Vector3d> landmark_points_;
  std::vector<bool> landmark_known_;
  std::vector<Reprojection> reprojections_;
  std::vector<Prior> priors_;
};

struct GaussNewtonConfig {
  int max_iterations = 50;
  double abs_tol = 1e-10;
  double rel_tol = 1e-8;
};

struct GaussNewtonReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  /// Cost after each accepted iteration, starting with the initial cost.
  std::vector<double> cost_trace;
  std::size_t linearizations = 0;
};

struct SolveOptions {
  std::vector<bool> frozen_states;
  std::vector<bool> frozen_landmarks;
  /// Warm mode when set; batch (relinearize everything) otherwise.
  LinearizationCache* cache = nullptr;
};

/// Gauss-Newton over the manifold. On three consecutive iterations that fail
/// to decrease the cost, `values` is reset to the best iterate and kDivergence
/// is thrown.
GaussNewtonReport gauss_newton(const FactorGraph& graph, Values& values,
                               const GaussNewtonConfig& config = {},
                               const SolveOptions& options = {});

}  // namespace ctsfm
