#pragma once

#include <Eigen/Cholesky>
#include <atomic>
#include <cstddef>
#include <span>
#include <vector>

#include "ctsfm/lie.hpp"

namespace ctsfm {

using Vector12d = Eigen::Matrix<double, 12, 1>;
using Matrix12d = Eigen::Matrix<double, 12, 12>;

/// A GP knot. `pose` maps camera coordinates into the world frame
/// (camera-to-world); `velocity` is the body-frame twist rate.
struct ControlState {
  double timestamp = 0.0;
  SE3Pose pose;
  Twist velocity;
};

/// White-noise-on-acceleration power spectral density Qc.
class WnoaPrior {
 public:
  /// Diagonal Qc, (translational; rotational) ordering.
  explicit WnoaPrior(const Vector6d& diagonal);
  explicit WnoaPrior(const Matrix6d& qc);

  static WnoaPrior isotropic(double translational, double rotational);

  const Matrix6d& qc() const { return qc_; }
  bool is_diagonal() const { return diagonal_; }

 private:
  Matrix6d qc_;
  bool diagonal_;
};

/// Phi(dt) = [[I, dt I], [0, I]]. Throws on negative dt.
Matrix12d transition(double dt);

/// Q(dt) = [[dt^3/3 Qc, dt^2/2 Qc], [dt^2/2 Qc, dt Qc]]. Requires dt > 0.
Matrix12d process_covariance(double dt, const WnoaPrior& prior);

/// Q(dt)^-1, through a Cholesky factorization of the time-normalized block
/// form. Requires dt > 0.
Matrix12d process_information(double dt, const WnoaPrior& prior);

/// U with U^T U = Q(dt)^-1 (whitening for prior residuals).
Matrix12d process_information_sqrt(double dt, const WnoaPrior& prior);

struct InterpolationOperators {
  Matrix12d lambda;
  Matrix12d psi;
};

/// Lambda(tau), Psi(tau) for a query bracketed by knots at s_l and s_r.
InterpolationOperators interpolation_operators(double s_l, double tau, double s_r,
                                               const WnoaPrior& prior);

/// gamma(x; base) = (log(base.pose^-1 x.pose), x.velocity).
Vector12d local_state(const SE3Pose& base, const ControlState& x);

/// Tangent-space update of a state: pose by retraction, velocity additively.
ControlState perturb(const ControlState& x, const Vector12d& delta);

/// Inverse of perturb: delta such that perturb(a, delta) == b.
Vector12d state_difference(const ControlState& a, const ControlState& b);

struct PriorResidual {
  Vector12d residual;
  Matrix12d information;
};

/// WNOA error between consecutive knots, in the tangent space at x_i:
///   e = gamma(x_j; x_i) - Phi(dt) gamma(x_i; x_i)
PriorResidual gp_prior_residual(const ControlState& xi, const ControlState& xj,
                                const WnoaPrior& prior);

/// d e / d(delta_i, delta_j) for the residual above, perturbations as in
/// `perturb`.
struct PriorJacobians {
  Matrix12d left;
  Matrix12d right;
};
PriorJacobians gp_prior_jacobians(const ControlState& xi, const ControlState& xj);

/// Mean of the WNOA process moved forward from `last` to tau.
ControlState extrapolate_state(const ControlState& last, double tau);

/// Time-ordered knots plus the WNOA prior. Interpolation reads exactly the two
/// bracketing knots; `knot_reads()` exposes that for instrumentation.
///
/// Queries are safe to run concurrently; append/set require exclusive access.
class TrajectoryGP {
 public:
  explicit TrajectoryGP(WnoaPrior prior);
  TrajectoryGP(const TrajectoryGP& other);
  TrajectoryGP& operator=(const TrajectoryGP& other);

  const WnoaPrior& prior() const { return prior_; }

  /// Timestamp must be strictly greater than the last knot's.
  void append(const ControlState& knot);
  void set_knot(std::size_t index, const ControlState& knot);

  std::size_t size() const { return knots_.size(); }
  bool empty() const { return knots_.empty(); }
  const ControlState& knot(std::size_t i) const { return knots_[i]; }
  const ControlState& front() const { return knots_.front(); }
  const ControlState& back() const { return knots_.back(); }
  std::span<const ControlState> knots() const { return knots_; }
  std::span<const double> timestamps() const { return times_; }

  /// Index l of the left knot with t_l <= tau <= t_{l+1}. Throws kOutOfRange
  /// outside [front, back].
  std::size_t bracket(double tau) const;

  ControlState interpolate(double tau) const;
  /// Interpolation with a caller-supplied bracket, skipping the search.
  ControlState interpolate_in(std::size_t left, double tau) const;
  ControlState extrapolate(double tau) const;

  std::size_t knot_reads() const { return reads_.load(std::memory_order_relaxed); }
  void reset_knot_reads() { reads_.store(0, std::memory_order_relaxed); }

 private:
  WnoaPrior prior_;
  std::vector<ControlState> knots_;
  std::vector<double> times_;
  mutable std::atomic<std::size_t> reads_{0};
};

}  // namespace ctsfm
