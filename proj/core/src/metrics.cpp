#include "ctsfm/metrics.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

#include "ctsfm/errors.hpp"

namespace ctsfm {

SE3Pose interpolate_samples(const std::vector<TrajectorySample>& samples, double t) {
  if (samples.empty() || t < samples.front().timestamp || t > samples.back().timestamp) {
    fail(ErrorCode::kOutOfRange, "interpolate_samples: time outside the sampled span");
  }
  auto it = std::upper_bound(samples.begin(), samples.end(), t,
                             [](double v, const TrajectorySample& s) { return v < s.timestamp; });
  if (it == samples.end()) return samples.back().pose;
  const auto& right = *it;
  const auto& left = *(it - 1);
  const double span = right.timestamp - left.timestamp;
  if (span <= 0.0) return left.pose;
  const double a = (t - left.timestamp) / span;
  if (a == 0.0) return left.pose;
  return retract(left.pose, local_coordinates(left.pose, right.pose) * a);
}

SE3Pose align_points(const std::vector<Vector3d>& from, const std::vector<Vector3d>& to) {
  const std::size_t n = from.size();
  if (n == 0 || to.size() != n) {
    fail(ErrorCode::kInvalidArgument, "align_points: need matching non-empty point sets");
  }
  Vector3d mf = Vector3d::Zero();
  Vector3d mt = Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mf += from[i];
    mt += to[i];
  }
  mf /= static_cast<double>(n);
  mt /= static_cast<double>(n);
  Matrix3d cov = Matrix3d::Zero();
  for (std::size_t i = 0; i < n; ++i) cov += (to[i] - mt) * (from[i] - mf).transpose();
  Eigen::JacobiSVD<Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3d s = Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) s(2, 2) = -1.0;
  const Matrix3d r = svd.matrixU() * s * svd.matrixV().transpose();
  return SE3Pose(r, mt - r * mf);
}

TrajectoryErrors trajectory_errors(const std::vector<TrajectorySample>& estimate,
                                   const std::vector<TrajectorySample>& ground_truth,
                                   Alignment alignment, double delta) {
  if (estimate.empty()) fail(ErrorCode::kNoOverlap, "trajectory_errors: empty estimate");
  const double lo = estimate.front().timestamp;
  const double hi = estimate.back().timestamp;
  std::vector<const TrajectorySample*> gt;
  for (const auto& s : ground_truth) {
    if (s.timestamp >= lo && s.timestamp <= hi) gt.push_back(&s);
  }
  if (gt.size() < 2) {
    fail(ErrorCode::kNoOverlap, "trajectory_errors: estimate and ground truth do not overlap");
  }
  std::vector<SE3Pose> est(gt.size());
  std::vector<Vector3d> pe(gt.size());
  std::vector<Vector3d> pg(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    est[i] = interpolate_samples(estimate, gt[i]->timestamp);
    pe[i] = est[i].translation();
    pg[i] = gt[i]->pose.translation();
  }
  TrajectoryErrors out;
  out.samples = gt.size();
  if (alignment == Alignment::kSE3) out.alignment = align_points(pe, pg);
  double sq = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    est[i] = out.alignment * est[i];
    sq += (est[i].translation() - pg[i]).squaredNorm();
  }
  out.ate = std::sqrt(sq / static_cast<double>(gt.size()));

  // Pairs (i, j) with t_j the first sample at least delta after t_i.
  double rsq = 0.0;
  std::size_t pairs = 0;
  std::size_t j = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double target = gt[i]->timestamp + delta - 1e-9;
    j = std::max(j, i + 1);
    while (j < gt.size() && gt[j]->timestamp < target) ++j;
    if (j >= gt.size()) break;
    const SE3Pose rel_est = est[i].inverse() * est[j];
    const SE3Pose rel_gt = gt[i]->pose.inverse() * gt[j]->pose;
    rsq += (rel_gt.inverse() * rel_est).translation().squaredNorm();
    ++pairs;
  }
  out.rpe = pairs > 0 ? std::sqrt(rsq / static_cast<double>(pairs)) : 0.0;
  return out;
}

double path_length(const std::vector<TrajectorySample>& samples) {
  double len = 0.0;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    len += (samples[i].pose.translation() - samples[i - 1].pose.translation()).norm();
  }
  return len;
}

}  // namespace ctsfm
