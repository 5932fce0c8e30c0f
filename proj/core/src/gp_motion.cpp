#include "ctsfm/gp_motion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ctsfm/errors.hpp"

namespace ctsfm {

namespace {

constexpr double kMinInterval = 1e-12;

using Matrix2 = Eigen::Matrix2d;

// Q(dt) = S (M (x) Qc) S with S = diag(dt^{3/2} I, dt^{1/2} I) and
// M = [[1/3, 1/2], [1/2, 1]]. The factorization works on M (x) Qc, which is
// independent of dt.
Matrix12d normalized_block(const WnoaPrior& prior) {
  Matrix12d m;
  const Matrix6d& qc = prior.qc();
  m << qc / 3.0, qc / 2.0, qc / 2.0, qc;
  return m;
}

Matrix12d raw_covariance(double dt, const WnoaPrior& prior) {
  const double dt2 = dt * dt;
  const Matrix6d& qc = prior.qc();
  Matrix12d q;
  q << (dt2 * dt / 3.0) * qc, (dt2 / 2.0) * qc, (dt2 / 2.0) * qc, dt * qc;
  return q;
}

void require_positive(double dt, const char* what) {
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    fail(ErrorCode::kInvalidArgument,
         std::string(what) + ": dt must be positive, got " + std::to_string(dt));
  }
}

Eigen::LLT<Matrix12d> normalized_factor(const WnoaPrior& prior) {
  Eigen::LLT<Matrix12d> llt(normalized_block(prior));
  if (llt.info() != Eigen::Success) {
    fail(ErrorCode::kInvalidArgument, "WNOA prior: Qc is not positive definite");
  }
  return llt;
}

}  // namespace

WnoaPrior::WnoaPrior(const Vector6d& diagonal)
    : qc_(diagonal.asDiagonal()), diagonal_(true) {
  if (!(diagonal.array() > 0.0).all() || !diagonal.allFinite()) {
    fail(ErrorCode::kInvalidArgument, "WNOA prior: Qc diagonal must be positive");
  }
}

WnoaPrior::WnoaPrior(const Matrix6d& qc) : qc_(qc), diagonal_(false) {
  if (!qc.allFinite() || (qc - qc.transpose()).cwiseAbs().maxCoeff() > 1e-12 * qc.norm()) {
    fail(ErrorCode::kInvalidArgument, "WNOA prior: Qc must be symmetric");
  }
  Eigen::LLT<Matrix6d> llt(qc);
  if (llt.info() != Eigen::Success) {
    fail(ErrorCode::kInvalidArgument, "WNOA prior: Qc is not positive definite");
  }
  diagonal_ = qc.isDiagonal();
}

WnoaPrior WnoaPrior::isotropic(double translational, double rotational) {
  Vector6d d;
  d << Vector3d::Constant(translational), Vector3d::Constant(rotational);
  return WnoaPrior(d);
}

Matrix12d transition(double dt) {
  if (dt < 0.0 || !std::isfinite(dt)) {
    fail(ErrorCode::kInvalidArgument, "transition: dt must be non-negative");
  }
  Matrix12d phi = Matrix12d::Identity();
  phi.topRightCorner<6, 6>() = dt * Matrix6d::Identity();
  return phi;
}

Matrix12d process_covariance(double dt, const WnoaPrior& prior) {
  require_positive(dt, "process_covariance");
  return raw_covariance(dt, prior);
}

Matrix12d process_information(double dt, const WnoaPrior& prior) {
  require_positive(dt, "process_information");
  const Matrix12d inner = normalized_factor(prior).solve(Matrix12d::Identity());
  Vector12d s_inv;
  s_inv << Vector6d::Constant(1.0 / (dt * std::sqrt(dt))),
      Vector6d::Constant(1.0 / std::sqrt(dt));
  return s_inv.asDiagonal() * inner * s_inv.asDiagonal();
}

Matrix12d process_information_sqrt(double dt, const WnoaPrior& prior) {
  require_positive(dt, "process_information_sqrt");
  // inner = L L^T  =>  inner^-1 = L^-T L^-1, so U = L^-1 S^-1.
  const Eigen::LLT<Matrix12d> llt = normalized_factor(prior);
  const Matrix12d l_inv =
      llt.matrixL().solve(Matrix12d::Identity());
  Vector12d s_inv;
  s_inv << Vector6d::Constant(1.0 / (dt * std::sqrt(dt))),
      Vector6d::Constant(1.0 / std::sqrt(dt));
  return l_inv * s_inv.asDiagonal();
}

InterpolationOperators interpolation_operators(double s_l, double tau, double s_r,
                                               const WnoaPrior& prior) {
  if (!(s_r - s_l >= kMinInterval)) {
    fail(ErrorCode::kDegenerateInterval,
         "interpolation_operators: bracketing interval is degenerate");
  }
  if (tau < s_l || tau > s_r) {
    fail(ErrorCode::kInvalidArgument,
         "interpolation_operators: tau outside [s_l, s_r]");
  }
  const double to_left = tau - s_l;
  const double to_right = s_r - tau;
  const double span = s_r - s_l;
  InterpolationOperators ops;
  const Matrix12d q_tau = raw_covariance(to_left, prior);
  const Matrix12d q_span_inv = process_information(span, prior);
  ops.psi = q_tau * transition(to_right).transpose() * q_span_inv;
  ops.lambda = transition(to_left) - ops.psi * transition(span);
  return ops;
}

Vector12d local_state(const SE3Pose& base, const ControlState& x) {
  Vector12d g;
  g << local_coordinates(base, x.pose).vector(), x.velocity.vector();
  return g;
}

ControlState perturb(const ControlState& x, const Vector12d& delta) {
  ControlState out;
  out.timestamp = x.timestamp;
  out.pose = retract(x.pose, Twist(Vector6d(delta.head<6>())));
  out.velocity = Twist(Vector6d(x.velocity.vector() + delta.tail<6>()));
  return out;
}

Vector12d state_difference(const ControlState& a, const ControlState& b) {
  Vector12d d;
  d << local_coordinates(a.pose, b.pose).vector(),
      b.velocity.vector() - a.velocity.vector();
  return d;
}

PriorResidual gp_prior_residual(const ControlState& xi, const ControlState& xj,
                                const WnoaPrior& prior) {
  const double dt = xj.timestamp - xi.timestamp;
  if (!(dt > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "gp_prior_residual: knots must be time-ordered");
  }
  PriorResidual out;
  Vector12d gamma_i;
  gamma_i << Vector6d::Zero(), xi.velocity.vector();
  out.residual = local_state(xi.pose, xj) - transition(dt) * gamma_i;
  out.information = process_information(dt, prior);
  return out;
}

PriorJacobians gp_prior_jacobians(const ControlState& xi, const ControlState& xj) {
  const double dt = xj.timestamp - xi.timestamp;
  if (!(dt > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "gp_prior_jacobians: knots must be time-ordered");
  }
  const Twist xi_ij = local_coordinates(xi.pose, xj.pose);
  PriorJacobians jac;
  jac.left.setZero();
  jac.right.setZero();
  jac.left.topLeftCorner<6, 6>() = -se3_left_jacobian_inverse(xi_ij);
  jac.left.topRightCorner<6, 6>() = -dt * Matrix6d::Identity();
  jac.left.bottomRightCorner<6, 6>() = -Matrix6d::Identity();
  jac.right.topLeftCorner<6, 6>() = se3_right_jacobian_inverse(xi_ij);
  jac.right.bottomRightCorner<6, 6>() = Matrix6d::Identity();
  return jac;
}

ControlState extrapolate_state(const ControlState& last, double tau) {
  if (tau < last.timestamp) {
    fail(ErrorCode::kInvalidArgument, "extrapolate: tau precedes the last knot");
  }
  if (tau == last.timestamp) return last;
  ControlState out;
  out.timestamp = tau;
  out.pose = retract(last.pose, (tau - last.timestamp) * last.velocity);
  out.velocity = last.velocity;
  return out;
}

TrajectoryGP::TrajectoryGP(WnoaPrior prior) : prior_(std::move(prior)) {}

TrajectoryGP::TrajectoryGP(const TrajectoryGP& other)
    : prior_(other.prior_), knots_(other.knots_), times_(other.times_) {}

TrajectoryGP& TrajectoryGP::operator=(const TrajectoryGP& other) {
  if (this != &other) {
    prior_ = other.prior_;
    knots_ = other.knots_;
    times_ = other.times_;
    reads_.store(0, std::memory_order_relaxed);
  }
  return *this;
}

void TrajectoryGP::append(const ControlState& knot) {
  if (!std::isfinite(knot.timestamp) || !knot.velocity.vector().allFinite()) {
    fail(ErrorCode::kInvalidArgument, "TrajectoryGP::append: non-finite knot");
  }
  if (!times_.empty() && !(knot.timestamp > times_.back())) {
    fail(ErrorCode::kInvalidArgument,
         "TrajectoryGP::append: knot timestamps must be strictly increasing");
  }
  knots_.push_back(knot);
  times_.push_back(knot.timestamp);
}

void TrajectoryGP::set_knot(std::size_t index, const ControlState& knot) {
  if (knot.timestamp != times_.at(index)) {
    fail(ErrorCode::kInvalidArgument, "TrajectoryGP::set_knot: timestamp is immutable");
  }
  knots_[index] = knot;
}

std::size_t TrajectoryGP::bracket(double tau) const {
  if (knots_.empty() || tau < times_.front() || tau > times_.back()) {
    fail(ErrorCode::kOutOfRange, "TrajectoryGP: query time outside the knot range");
  }
  if (knots_.size() == 1) return 0;
  auto it = std::upper_bound(times_.begin(), times_.end(), tau);
  std::size_t right = static_cast<std::size_t>(it - times_.begin());
  if (right >= times_.size()) right = times_.size() - 1;
  return right - 1;
}

ControlState TrajectoryGP::interpolate(double tau) const {
  const std::size_t left = bracket(tau);
  if (times_[left] == tau) {
    reads_.fetch_add(1, std::memory_order_relaxed);
    return knots_[left];
  }
  if (left + 1 < times_.size() && times_[left + 1] == tau) {
    reads_.fetch_add(1, std::memory_order_relaxed);
    return knots_[left + 1];
  }
  return interpolate_in(left, tau);
}

ControlState TrajectoryGP::interpolate_in(std::size_t left, double tau) const {
  const ControlState& xl = knots_[left];
  const ControlState& xr = knots_[left + 1];
  reads_.fetch_add(2, std::memory_order_relaxed);

  const InterpolationOperators ops =
      interpolation_operators(xl.timestamp, tau, xr.timestamp, prior_);
  Vector12d gamma_l;
  gamma_l << Vector6d::Zero(), xl.velocity.vector();
  const Vector12d gamma_r = local_state(xl.pose, xr);
  const Vector12d gamma = ops.lambda * gamma_l + ops.psi * gamma_r;

  ControlState out;
  out.timestamp = tau;
  out.pose = retract(xl.pose, Twist(Vector6d(gamma.head<6>())));
  out.velocity = Twist(Vector6d(gamma.tail<6>()));
  return out;
}

ControlState TrajectoryGP::extrapolate(double tau) const {
  if (knots_.empty()) {
    fail(ErrorCode::kOutOfRange, "TrajectoryGP::extrapolate: no knots");
  }
  reads_.fetch_add(1, std::memory_order_relaxed);
  return extrapolate_state(knots_.back(), tau);
}

}  // namespace ctsfm
