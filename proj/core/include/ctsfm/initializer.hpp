#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ctsfm/camera.hpp"

namespace ctsfm {

/// Matched pixels of the same scene points seen at two times.
struct TwoViewProblem {
  double t0 = 0.0;
  double t1 = 0.0;
  std::vector<Vector2d> pixels0;
  std::vector<Vector2d> pixels1;
};

struct TwoViewEstimate {
  SE3Pose pose0;  // camera-to-world at t0
  SE3Pose pose1;  // camera-to-world at t1
  /// Target of the scale prior ||p1 - p0||.
  double baseline = 1.0;
};

/// Relative-pose initialization for bootstrapping a monocular map.
class TwoViewInitializer {
 public:
  virtual ~TwoViewInitializer() = default;
  virtual TwoViewEstimate estimate(const TwoViewProblem& problem,
                                   const CameraIntrinsics& intrinsics) = 0;
  virtual std::string name() const = 0;
};

/// Reads both poses from a ground-truth source, optionally perturbing the
/// second one. The baseline is the true camera displacement.
class GroundTruthInitializer : public TwoViewInitializer {
 public:
  using PoseSource = std::function<SE3Pose(double)>;

  explicit GroundTruthInitializer(PoseSource source, double translation_sigma = 0.0,
                                  double rotation_sigma = 0.0, std::uint64_t seed = 0);

  TwoViewEstimate estimate(const TwoViewProblem& problem,
                           const CameraIntrinsics& intrinsics) override;
  std::string name() const override { return "ground_truth"; }

 private:
  PoseSource source_;
  double translation_sigma_;
  double rotation_sigma_;
  std::uint64_t seed_;
};

/// Gauss-Newton from landmarks placed at a nominal depth along the first
/// view's rays. The first pose is the identity and the baseline is unit
/// length, so the result is defined up to a similarity.
class RandomDepthInitializer : public TwoViewInitializer {
 public:
  explicit RandomDepthInitializer(double depth = 2.0, double jitter = 0.2,
                                  std::uint64_t seed = 0);

  TwoViewEstimate estimate(const TwoViewProblem& problem,
                           const CameraIntrinsics& intrinsics) override;
  std::string name() const override { return "random_depth"; }

 private:
  double depth_;
  double jitter_;
  std::uint64_t seed_;
};

}  // namespace ctsfm
