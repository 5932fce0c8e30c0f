#include "ctsfm/factor_graph.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>

#include "ctsfm/errors.hpp"

namespace ctsfm {

namespace {

using Matrix2x12 = Eigen::Matrix<double, 2, 12>;

// Quantities shared by every reprojection factor inside one knot interval.
struct IntervalTerms {
  bool has_right = false;
  Vector12d gamma_left = Vector12d::Zero();
  Vector12d gamma_right = Vector12d::Zero();
  Matrix6d left_pose_to_xi_r = Matrix6d::Zero();   // d xi_r / d delta_l
  Matrix6d right_pose_to_xi_r = Matrix6d::Zero();  // d xi_r / d delta_r
};

IntervalTerms interval_terms(const ControlState& left, const ControlState* right) {
  IntervalTerms t;
  t.gamma_left.tail<6>() = left.velocity.vector();
  if (right != nullptr) {
    t.has_right = true;
    const Twist xi_r = local_coordinates(left.pose, right->pose);
    t.gamma_right << xi_r.vector(), right->velocity.vector();
    t.left_pose_to_xi_r = -se3_left_jacobian_inverse(xi_r);
    t.right_pose_to_xi_r = se3_right_jacobian_inverse(xi_r);
  }
  return t;
}

Twist interpolated_offset(const ReprojectionFactor& f, const IntervalTerms& t) {
  Vector6d xi = f.lambda_top * t.gamma_left;
  if (t.has_right) xi += f.psi_top * t.gamma_right;
  return Twist(xi);
}

ReprojectionLinearization linearize_with(const ReprojectionFactor& f, const Values& values,
                                         const CameraIntrinsics& k, const IntervalTerms& t) {
  ReprojectionLinearization out;
  const ControlState& left = values.states[f.left_state];
  const Twist xi = interpolated_offset(f, t);
  const SE3Pose offset = exp_map(xi);
  const SE3Pose camera_to_world = left.pose * offset;
  const SE3Pose world_to_camera = camera_to_world.inverse();
  const Vector3d& landmark = values.landmarks[f.landmark];
  if (!((world_to_camera * landmark).z() > kMinDepth)) return out;

  out.valid = true;
  out.residual = f.event.pixel - project(world_to_camera, landmark, k);
  const ProjectionJacobians pj = project_jacobians(world_to_camera, landmark, k);
  // h as a function of a right perturbation eps of the camera-to-world pose.
  const Eigen::Matrix<double, 2, 6> dh_deps = -pj.pose * camera_to_world.adjoint();
  const Eigen::Matrix<double, 2, 6> dh_dxi = dh_deps * se3_right_jacobian(xi);

  Matrix2x12 dh_left;
  dh_left.leftCols<6>() = dh_deps * offset.inverse().adjoint();
  dh_left.rightCols<6>() = dh_dxi * f.lambda_top.rightCols<6>();
  Matrix2x12 dh_right = Matrix2x12::Zero();
  if (t.has_right) {
    const Eigen::Matrix<double, 2, 6> dh_dxir = dh_dxi * f.psi_top.leftCols<6>();
    dh_left.leftCols<6>() += dh_dxir * t.left_pose_to_xi_r;
    dh_right.leftCols<6>() = dh_dxir * t.right_pose_to_xi_r;
    dh_right.rightCols<6>() = dh_dxi * f.psi_top.rightCols<6>();
  }
  out.d_left = -dh_left;
  out.d_right = -dh_right;
  out.d_landmark = -pj.landmark;
  return out;
}

IntervalTerms terms_for(const ReprojectionFactor& f, const Values& values) {
  const ControlState* right = f.right_state ? &values.states[*f.right_state] : nullptr;
  return interval_terms(values.states[f.left_state], right);
}

struct GaugeLinearization {
  Eigen::VectorXd residual;  // whitened
  std::vector<VariableIndex> variables;
  std::vector<Eigen::MatrixXd> jacobians;  // whitened, one per variable
};

GaugeLinearization linearize_gauge(const GaugePriorFactor& factor, const Values& values) {
  GaugeLinearization out;
  std::visit(
      [&](const auto& g) {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, PosePrior>) {
          const Twist r = local_coordinates(g.mean, values.states[g.state].pose);
          out.residual = g.sqrt_information * r.vector();
          Eigen::MatrixXd j = Eigen::MatrixXd::Zero(6, kStateDim);
          j.leftCols(6) = g.sqrt_information * se3_right_jacobian_inverse(r);
          out.variables = {VariableIndex::state(g.state)};
          out.jacobians = {j};
        } else if constexpr (std::is_same_v<T, VelocityPrior>) {
          out.residual =
              g.sqrt_information * (values.states[g.state].velocity - g.mean).vector();
          Eigen::MatrixXd j = Eigen::MatrixXd::Zero(6, kStateDim);
          j.rightCols(6) = g.sqrt_information;
          out.variables = {VariableIndex::state(g.state)};
          out.jacobians = {j};
        } else if constexpr (std::is_same_v<T, PointPrior>) {
          out.residual = g.sqrt_information * (values.landmarks[g.landmark] - g.mean);
          out.variables = {VariableIndex::landmark(g.landmark)};
          out.jacobians = {Eigen::MatrixXd(g.sqrt_information)};
        } else {
          const SE3Pose& a = values.states[g.state_a].pose;
          const SE3Pose& b = values.states[g.state_b].pose;
          const Vector3d d = b.translation() - a.translation();
          const double n = d.norm();
          out.residual = Eigen::VectorXd::Constant(1, g.sqrt_information * (n - g.distance));
          const Vector3d u = n > 0.0 ? Vector3d(d / n) : Vector3d::Zero();
          Eigen::MatrixXd ja = Eigen::MatrixXd::Zero(1, kStateDim);
          Eigen::MatrixXd jb = Eigen::MatrixXd::Zero(1, kStateDim);
          ja.leftCols(3) = -g.sqrt_information * u.transpose() * a.rotation();
          jb.leftCols(3) = g.sqrt_information * u.transpose() * b.rotation();
          out.variables = {VariableIndex::state(g.state_a), VariableIndex::state(g.state_b)};
          out.jacobians = {ja, jb};
        }
      },
      factor);
  return out;
}

Matrix2d whitening_for(const Matrix2d& covariance) {
  if (!covariance.allFinite() ||
      (covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12 * covariance.norm()) {
    fail(ErrorCode::kInvalidArgument, "reprojection factor: pixel noise must be symmetric");
  }
  Eigen::LLT<Matrix2d> llt(covariance.inverse());
  if (Eigen::LLT<Matrix2d>(covariance).info() != Eigen::Success ||
      llt.info() != Eigen::Success) {
    fail(ErrorCode::kInvalidArgument, "reprojection factor: pixel noise must be SPD");
  }
  return llt.matrixU();
}

int block_of(const SolveScope& scope, const VariableIndex& v) {
  return v.kind == VariableKind::kControlState ? scope.state_block[v.ordinal]
                                               : scope.landmark_block[v.ordinal];
}

// Adds J_a^T J_b and -J_a^T r for every pair of in-scope variables of one
// whitened factor.
void accumulate(SparseBlockSystem& system, const std::vector<int>& blocks,
                const std::vector<Eigen::MatrixXd>& jacobians, const Eigen::VectorXd& residual) {
  for (std::size_t a = 0; a < blocks.size(); ++a) {
    if (blocks[a] < 0) continue;
    system.add_rhs(blocks[a], -jacobians[a].transpose() * residual);
    for (std::size_t b = 0; b <= a; ++b) {
      if (blocks[b] < 0) continue;
      system.add_block(blocks[a], blocks[b], jacobians[a].transpose() * jacobians[b]);
    }
  }
}

void accumulate_reprojection(SparseBlockSystem& system, const SolveScope& scope,
                             const ReprojectionFactor& f, const Vector2d& residual,
                             const Eigen::Matrix<double, 2, 27>& jacobian) {
  const int bl = scope.state_block[f.left_state];
  const int br = f.right_state ? scope.state_block[*f.right_state] : -1;
  const int bm = scope.landmark_block[f.landmark];
  const auto jl = jacobian.leftCols<12>();
  const auto jr = jacobian.middleCols<12>(12);
  const auto jm = jacobian.rightCols<3>();
  if (bl >= 0) {
    system.add_rhs(bl, -jl.transpose() * residual);
    system.add_block(bl, bl, jl.transpose() * jl);
  }
  if (br >= 0) {
    system.add_rhs(br, -jr.transpose() * residual);
    system.add_block(br, br, jr.transpose() * jr);
    if (bl >= 0) system.add_block(br, bl, jr.transpose() * jl);
  }
  if (bm >= 0) {
    system.add_rhs(bm, -jm.transpose() * residual);
    system.add_block(bm, bm, jm.transpose() * jm);
    if (bl >= 0) system.add_block(bm, bl, jm.transpose() * jl);
    if (br >= 0) system.add_block(bm, br, jm.transpose() * jr);
  }
}

void accumulate_prior(SparseBlockSystem& system, const SolveScope& scope,
                      const GpPriorFactor& p, const Vector12d& residual,
                      const Eigen::Matrix<double, 12, 24>& jacobian) {
  const int bl = scope.state_block[p.left_state];
  const int br = scope.state_block[p.right_state];
  const auto jl = jacobian.leftCols<12>();
  const auto jr = jacobian.rightCols<12>();
  if (bl >= 0) {
    system.add_rhs(bl, -jl.transpose() * residual);
    system.add_block(bl, bl, jl.transpose() * jl);
  }
  if (br >= 0) {
    system.add_rhs(br, -jr.transpose() * residual);
    system.add_block(br, br, jr.transpose() * jr);
    if (bl >= 0) system.add_block(br, bl, jr.transpose() * jl);
  }
}

Eigen::Matrix<double, 2, 27> whitened_jacobian(const ReprojectionFactor& f,
                                               const ReprojectionLinearization& lin) {
  Eigen::Matrix<double, 2, 27> j;
  j.leftCols<12>() = f.sqrt_information * lin.d_left;
  j.middleCols<12>(12) = f.sqrt_information * lin.d_right;
  j.rightCols<3>() = f.sqrt_information * lin.d_landmark;
  return j;
}

void linearize_prior(const GpPriorFactor& p, const Values& values, const WnoaPrior& prior,
                     Vector12d& residual, Eigen::Matrix<double, 12, 24>& jacobian) {
  const ControlState& xi = values.states[p.left_state];
  const ControlState& xj = values.states[p.right_state];
  (void)prior;
  Vector12d gamma_i;
  gamma_i << Vector6d::Zero(), xi.velocity.vector();
  const Vector12d e =
      local_state(xi.pose, xj) - transition(xj.timestamp - xi.timestamp) * gamma_i;
  const PriorJacobians jac = gp_prior_jacobians(xi, xj);
  residual = p.sqrt_information * e;
  jacobian.leftCols<12>() = p.sqrt_information * jac.left;
  jacobian.rightCols<12>() = p.sqrt_information * jac.right;
}

void print_vector(std::ostream& out, const Eigen::Ref<const Eigen::VectorXd>& v) {
  char buf[40];
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", v(i));
    out << (i == 0 ? "" : " ") << buf;
  }
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

TrajectoryGP Values::trajectory(const WnoaPrior& prior) const {
  TrajectoryGP gp(prior);
  for (const auto& s : states) gp.append(s);
  return gp;
}

FactorGraph::FactorGraph(CameraIntrinsics intrinsics, WnoaPrior prior)
    : intrinsics_(intrinsics), prior_(std::move(prior)) {
  intrinsics_.validate();
}

std::size_t FactorGraph::add_gp_prior(std::size_t left, std::size_t right,
                                      const Values& values) {
  if (right != left + 1 || right >= values.states.size()) {
    fail(ErrorCode::kInvalidArgument, "add_gp_prior: knots must be consecutive");
  }
  const double dt = values.states[right].timestamp - values.states[left].timestamp;
  if (!(dt > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "add_gp_prior: knots must be time-ordered");
  }
  GpPriorFactor p;
  p.left_state = left;
  p.right_state = right;
  p.information = process_information(dt, prior_);
  p.sqrt_information = process_information_sqrt(dt, prior_);
  gp_priors_.push_back(p);
  return gp_priors_.size() - 1;
}

void FactorGraph::build_operators(ReprojectionFactor& f, const Values& values) const {
  if (f.left_state >= values.states.size() || f.landmark >= values.landmarks.size()) {
    fail(ErrorCode::kInvalidArgument, "reprojection factor: unknown variable");
  }
  const double s_l = values.states[f.left_state].timestamp;
  const double tau = f.event.timestamp;
  if (f.right_state) {
    if (*f.right_state != f.left_state + 1 || *f.right_state >= values.states.size()) {
      fail(ErrorCode::kInvalidArgument, "reprojection factor: knots must be consecutive");
    }
    const double s_r = values.states[*f.right_state].timestamp;
    const InterpolationOperators ops = interpolation_operators(s_l, tau, s_r, prior_);
    f.lambda_top = ops.lambda.topRows<6>();
    f.psi_top = ops.psi.topRows<6>();
  } else {
    if (tau < s_l) {
      fail(ErrorCode::kInvalidArgument, "reprojection factor: event precedes its knot");
    }
    f.lambda_top = transition(tau - s_l).topRows<6>();
    f.psi_top.setZero();
  }
  f.revision = next_revision_;
}

std::size_t FactorGraph::add_reprojection(const EventObservation& event, std::size_t landmark,
                                          std::size_t left, std::optional<std::size_t> right,
                                          const Values& values,
                                          std::optional<Matrix2d> pixel_noise) {
  ReprojectionFactor f;
  f.event = event;
  f.landmark = landmark;
  f.left_state = left;
  f.right_state = right;
  if (pixel_noise) f.pixel_noise = *pixel_noise;
  f.sqrt_information = whitening_for(f.pixel_noise);
  build_operators(f, values);
  ++next_revision_;
  reprojections_.push_back(f);
  return reprojections_.size() - 1;
}

void FactorGraph::rebracket_reprojection(std::size_t index, std::size_t left,
                                         std::optional<std::size_t> right,
                                         const Values& values) {
  ReprojectionFactor f = reprojections_.at(index);
  f.left_state = left;
  f.right_state = right;
  build_operators(f, values);
  ++next_revision_;
  reprojections_[index] = f;
}

std::size_t FactorGraph::add_gauge(GaugePriorFactor factor) {
  gauges_.push_back(std::move(factor));
  return gauges_.size() - 1;
}

void FactorGraph::set_reprojection_active(std::size_t index, bool active) {
  reprojections_.at(index).active = active;
}

std::size_t FactorGraph::active_reprojection_count() const {
  return static_cast<std::size_t>(std::count_if(
      reprojections_.begin(), reprojections_.end(), [](const auto& f) { return f.active; }));
}

void FactorGraph::dump(std::ostream& out, const Values& values) const {
  // Grammar, one record per line:
  //   state <i> <t> <qw qx qy qz> <px py pz> <v1..v6>
  //   landmark <i> <x y z>
  //   gp_prior <i> <j>
  //   reprojection <n> <landmark> <left> <right|-> <t> <u v> <active 0|1>
  //   pose_prior <i> | velocity_prior <i> | point_prior <i> | scale_prior <i> <j> <d>
  for (std::size_t i = 0; i < values.states.size(); ++i) {
    const ControlState& s = values.states[i];
    const Eigen::Quaterniond q = s.pose.quaternion();
    out << "state " << i << ' ' << format_double(s.timestamp) << ' ';
    print_vector(out, Eigen::Vector4d(q.w(), q.x(), q.y(), q.z()));
    out << ' ';
    print_vector(out, s.pose.translation());
    out << ' ';
    print_vector(out, s.velocity.vector());
    out << '\n';
  }
  for (std::size_t i = 0; i < values.landmarks.size(); ++i) {
    out << "landmark " << i << ' ';
    print_vector(out, values.landmarks[i]);
    out << '\n';
  }
  for (const auto& p : gp_priors_) {
    out << "gp_prior " << p.left_state << ' ' << p.right_state << '\n';
  }
  for (std::size_t n = 0; n < reprojections_.size(); ++n) {
    const auto& f = reprojections_[n];
    out << "reprojection " << n << ' ' << f.landmark << ' ' << f.left_state << ' '
        << (f.right_state ? std::to_string(*f.right_state) : std::string("-")) << ' '
        << format_double(f.event.timestamp) << ' ';
    print_vector(out, f.event.pixel);
    out << ' ' << (f.active ? 1 : 0) << '\n';
  }
  for (const auto& g : gauges_) {
    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, PosePrior>) {
            out << "pose_prior " << p.state << '\n';
          } else if constexpr (std::is_same_v<T, VelocityPrior>) {
            out << "velocity_prior " << p.state << '\n';
          } else if constexpr (std::is_same_v<T, PointPrior>) {
            out << "point_prior " << p.landmark << '\n';
          } else {
            out << "scale_prior " << p.state_a << ' ' << p.state_b << ' '
                << format_double(p.distance) << '\n';
          }
        },
        g);
  }
}

ReprojectionLinearization linearize_reprojection(const ReprojectionFactor& f,
                                                 const Values& values,
                                                 const CameraIntrinsics& k) {
  return linearize_with(f, values, k, terms_for(f, values));
}

SE3Pose reprojection_camera_pose(const ReprojectionFactor& f, const Values& values) {
  return values.states[f.left_state].pose * exp_map(interpolated_offset(f, terms_for(f, values)));
}

std::vector<VariableIndex> gauge_variables(const GaugePriorFactor& f) {
  return std::visit(
      [](const auto& g) -> std::vector<VariableIndex> {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, PointPrior>) {
          return {VariableIndex::landmark(g.landmark)};
        } else if constexpr (std::is_same_v<T, ScalePrior>) {
          return {VariableIndex::state(g.state_a), VariableIndex::state(g.state_b)};
        } else {
          return {VariableIndex::state(g.state)};
        }
      },
      f);
}

double total_cost(const FactorGraph& graph, const Values& values) {
  double cost = 0.0;
  for (const auto& p : graph.gp_priors()) {
    const PriorResidual r =
        gp_prior_residual(values.states[p.left_state], values.states[p.right_state], graph.prior());
    cost += 0.5 * r.residual.dot(p.information * r.residual);
  }
  std::size_t cached_left = std::numeric_limits<std::size_t>::max();
  IntervalTerms terms;
  for (const auto& f : graph.reprojections()) {
    if (!f.active) continue;
    if (f.left_state != cached_left || !f.right_state) {
      terms = terms_for(f, values);
      cached_left = f.right_state ? f.left_state : std::numeric_limits<std::size_t>::max();
    }
    const SE3Pose world_to_camera =
        (values.states[f.left_state].pose * exp_map(interpolated_offset(f, terms))).inverse();
    const Vector3d& l = values.landmarks[f.landmark];
    if (!((world_to_camera * l).z() > kMinDepth)) continue;
    const Vector2d r = f.sqrt_information * (f.event.pixel - project(world_to_camera, l, graph.intrinsics()));
    cost += 0.5 * r.squaredNorm();
  }
  for (const auto& g : graph.gauges()) {
    cost += 0.5 * linearize_gauge(g, values).residual.squaredNorm();
  }
  return cost;
}

std::optional<double> reprojection_error(const FactorGraph& graph, std::size_t factor,
                                         const Values& values) {
  const auto& f = graph.reprojections().at(factor);
  const SE3Pose world_to_camera = reprojection_camera_pose(f, values).inverse();
  const Vector3d& l = values.landmarks[f.landmark];
  if (!((world_to_camera * l).z() > kMinDepth)) return std::nullopt;
  return (f.event.pixel - project(world_to_camera, l, graph.intrinsics())).norm();
}

SolveScope make_scope(const FactorGraph& graph, const Values& values,
                      const std::vector<bool>& frozen_states,
                      const std::vector<bool>& frozen_landmarks) {
  SolveScope scope;
  scope.state_block.assign(values.states.size(), -1);
  scope.landmark_block.assign(values.landmarks.size(), -1);
  std::vector<bool> constrained(values.landmarks.size(), false);
  for (const auto& f : graph.reprojections()) {
    if (f.active) constrained[f.landmark] = true;
  }
  for (const auto& g : graph.gauges()) {
    if (const auto* p = std::get_if<PointPrior>(&g)) constrained[p->landmark] = true;
  }
  for (std::size_t i = 0; i < values.states.size(); ++i) {
    if (i < frozen_states.size() && frozen_states[i]) continue;
    scope.state_block[i] = scope.layout.add_block(
        kStateDim, "control_state " + std::to_string(i) + " (t=" +
                       format_double(values.states[i].timestamp) + ")");
  }
  for (std::size_t i = 0; i < values.landmarks.size(); ++i) {
    if (!constrained[i] || (i < frozen_landmarks.size() && frozen_landmarks[i])) continue;
    scope.landmark_block[i] =
        scope.layout.add_block(kLandmarkDim, "landmark " + std::to_string(i));
  }
  return scope;
}

void LinearizationCache::clear() {
  force_all_ = false;
  state_points_.clear();
  state_known_.clear();
  landmark_points_.clear();
  landmark_known_.clear();
  reprojections_.clear();
  priors_.clear();
}

namespace {

void assemble_gauges(SparseBlockSystem& system, const FactorGraph& graph, const Values& values,
                     const SolveScope& scope) {
  for (const auto& g : graph.gauges()) {
    const GaugeLinearization lin = linearize_gauge(g, values);
    std::vector<int> blocks;
    for (const auto& v : lin.variables) blocks.push_back(block_of(scope, v));
    accumulate(system, blocks, lin.jacobians, lin.residual);
  }
}

}  // namespace

SparseBlockSystem assemble(const FactorGraph& graph, const Values& values,
                           const SolveScope& scope, LinearizationCache* cache) {
  return assemble_counted(graph, values, scope, cache, nullptr);
}

SparseBlockSystem assemble_counted(const FactorGraph& graph, const Values& values,
                                   const SolveScope& scope, LinearizationCache* cache,
                                   std::size_t* batch_count) {
  SparseBlockSystem system(scope.layout);
  const CameraIntrinsics& k = graph.intrinsics();

  if (cache == nullptr) {
    for (const auto& p : graph.gp_priors()) {
      Vector12d r;
      Eigen::Matrix<double, 12, 24> j;
      linearize_prior(p, values, graph.prior(), r, j);
      accumulate_prior(system, scope, p, r, j);
      if (batch_count) ++*batch_count;
    }
    std::size_t cached_left = std::numeric_limits<std::size_t>::max();
    IntervalTerms terms;
    for (const auto& f : graph.reprojections()) {
      if (!f.active) continue;
      if (f.left_state != cached_left || !f.right_state) {
        terms = terms_for(f, values);
        cached_left = f.right_state ? f.left_state : std::numeric_limits<std::size_t>::max();
      }
      const ReprojectionLinearization lin = linearize_with(f, values, k, terms);
      if (batch_count) ++*batch_count;
      if (!lin.valid) continue;
      accumulate_reprojection(system, scope, f, f.sqrt_information * lin.residual,
                              whitened_jacobian(f, lin));
    }
    assemble_gauges(system, graph, values, scope);
    return system;
  }

  // Warm path: move linearization points only for variables that drifted.
  LinearizationCache& c = *cache;
  const bool force = c.force_all_;
  c.force_all_ = false;
  const std::size_t ns = values.states.size();
  const std::size_t nl = values.landmarks.size();
  c.state_points_.resize(ns);
  c.state_known_.resize(ns, false);
  c.landmark_points_.resize(nl, Vector3d::Zero());
  c.landmark_known_.resize(nl, false);
  std::vector<bool> state_moved(ns, false);
  std::vector<bool> landmark_moved(nl, false);
  std::vector<Vector12d> state_delta(ns, Vector12d::Zero());
  std::vector<Vector3d> landmark_delta(nl, Vector3d::Zero());
  for (std::size_t i = 0; i < ns; ++i) {
    if (c.state_known_[i] && !force) {
      const Vector12d d = state_difference(c.state_points_[i], values.states[i]);
      if (d.cwiseAbs().maxCoeff() <= c.threshold_) {
        state_delta[i] = d;
        continue;
      }
    }
    c.state_points_[i] = values.states[i];
    c.state_known_[i] = true;
    state_moved[i] = true;
  }
  for (std::size_t i = 0; i < nl; ++i) {
    if (c.landmark_known_[i] && !force) {
      const Vector3d d = values.landmarks[i] - c.landmark_points_[i];
      if (d.cwiseAbs().maxCoeff() <= c.threshold_) {
        landmark_delta[i] = d;
        continue;
      }
    }
    c.landmark_points_[i] = values.landmarks[i];
    c.landmark_known_[i] = true;
    landmark_moved[i] = true;
  }
  Values points;
  points.states = c.state_points_;
  points.landmarks = c.landmark_points_;

  c.priors_.resize(graph.gp_priors().size());
  for (std::size_t n = 0; n < graph.gp_priors().size(); ++n) {
    const auto& p = graph.gp_priors()[n];
    auto& entry = c.priors_[n];
    if (!entry.valid || state_moved[p.left_state] || state_moved[p.right_state]) {
      linearize_prior(p, points, graph.prior(), entry.residual, entry.jacobian);
      entry.valid = true;
      ++c.linearizations_;
    }
    Eigen::Matrix<double, 24, 1> delta;
    delta << state_delta[p.left_state], state_delta[p.right_state];
    accumulate_prior(system, scope, p, entry.residual + entry.jacobian * delta, entry.jacobian);
  }

  c.reprojections_.resize(graph.reprojections().size());
  std::size_t cached_left = std::numeric_limits<std::size_t>::max();
  IntervalTerms terms;
  for (std::size_t n = 0; n < graph.reprojections().size(); ++n) {
    const auto& f = graph.reprojections()[n];
    if (!f.active) continue;
    auto& entry = c.reprojections_[n];
    const bool moved = state_moved[f.left_state] ||
                       (f.right_state && state_moved[*f.right_state]) ||
                       landmark_moved[f.landmark];
    if (entry.revision != f.revision || moved) {
      if (f.left_state != cached_left || !f.right_state) {
        terms = terms_for(f, points);
        cached_left = f.right_state ? f.left_state : std::numeric_limits<std::size_t>::max();
      }
      const ReprojectionLinearization lin = linearize_with(f, points, k, terms);
      entry.revision = f.revision;
      entry.valid = lin.valid;
      if (lin.valid) {
        entry.residual = f.sqrt_information * lin.residual;
        entry.jacobian = whitened_jacobian(f, lin);
      }
      ++c.linearizations_;
    }
    if (!entry.valid) continue;
    Eigen::Matrix<double, 27, 1> delta;
    delta << state_delta[f.left_state],
        (f.right_state ? state_delta[*f.right_state] : Vector12d::Zero()),
        landmark_delta[f.landmark];
    accumulate_reprojection(system, scope, f, entry.residual + entry.jacobian * delta,
                            entry.jacobian);
  }
  assemble_gauges(system, graph, values, scope);
  return system;
}

Values apply_step(const Values& values, const SolveScope& scope, const Eigen::VectorXd& step) {
  Values out = values;
  const BlockLayout& layout = scope.layout;
  for (std::size_t i = 0; i < values.states.size(); ++i) {
    const int b = scope.state_block[i];
    if (b < 0) continue;
    out.states[i] = perturb(values.states[i], step.segment<kStateDim>(layout.offset(b)));
  }
  for (std::size_t i = 0; i < values.landmarks.size(); ++i) {
    const int b = scope.landmark_block[i];
    if (b < 0) continue;
    out.landmarks[i] += step.segment<kLandmarkDim>(layout.offset(b));
  }
  return out;
}

GaussNewtonReport gauss_newton(const FactorGraph& graph, Values& values,
                               const GaussNewtonConfig& config, const SolveOptions& options) {
  constexpr int kMaxFailures = 3;
  constexpr int kHalvings = 4;

  const SolveScope scope =
      make_scope(graph, values, options.frozen_states, options.frozen_landmarks);
  GaussNewtonReport report;
  double cost = total_cost(graph, values);
  report.initial_cost = cost;
  report.final_cost = cost;
  report.cost_trace.push_back(cost);
  if (scope.layout.total_dim() == 0) {
    report.converged = true;
    return report;
  }

  const std::size_t cache_start = options.cache ? options.cache->linearizations() : 0;
  std::size_t batch_count = 0;
  int failures = 0;
  for (int it = 1; it <= config.max_iterations; ++it) {
    report.iterations = it;
    const SparseBlockSystem system = assemble_counted(graph, values, scope, options.cache, &batch_count);
    const Eigen::VectorXd step = solve_normal_equations(system);
    if (!step.allFinite()) {
      fail(ErrorCode::kDivergence, "gauss_newton: non-finite step");
    }
    if (step.cwiseAbs().maxCoeff() < config.abs_tol) {
      report.converged = true;
      break;
    }
    double alpha = 1.0;
    double best_trial = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int h = 0; h < kHalvings; ++h, alpha *= 0.5) {
      Values trial = apply_step(values, scope, alpha * step);
      const double trial_cost = total_cost(graph, trial);
      best_trial = std::min(best_trial, trial_cost);
      if (trial_cost <= cost) {
        const double decrease = cost - trial_cost;
        values = std::move(trial);
        cost = trial_cost;
        report.cost_trace.push_back(cost);
        accepted = true;
        if (decrease <= config.rel_tol * cost || step.cwiseAbs().maxCoeff() * alpha < config.abs_tol) {
          report.converged = true;
        }
        break;
      }
    }
    if (report.converged) break;
    if (accepted) {
      failures = 0;
      continue;
    }
    // Increases within the convergence tolerance are round-off at the optimum.
    if (best_trial - cost <= config.rel_tol * std::max(cost, 1e-300)) {
      report.converged = true;
      break;
    }
    if (options.cache) options.cache->invalidate();
    if (++failures >= kMaxFailures) {
      report.final_cost = cost;
      fail(ErrorCode::kDivergence, "gauss_newton: cost increased for " +
                                       std::to_string(kMaxFailures) +
                                       " consecutive iterations");
    }
  }
  report.final_cost = cost;
  report.linearizations = options.cache ? options.cache->linearizations() - cache_start
                                        : batch_count;
  return report;
}

}  // namespace ctsfm
