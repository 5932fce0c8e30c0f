#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ctsfm/camera.hpp"
#include "ctsfm/event.hpp"
#include "ctsfm/factor_graph.hpp"
#include "ctsfm/gp_motion.hpp"
#include "ctsfm/initializer.hpp"

namespace ctsfm {

enum class MotionKind { kConstantTwist, kFigureEight, kDeceleratingLine, kSweep };

std::string_view motion_kind_name(MotionKind kind);
std::optional<MotionKind> parse_motion_kind(std::string_view name);

/// Analytic ground-truth motion. Poses are camera-to-world; the camera looks
/// along +z (x right, y down).
struct MotionSpec {
  MotionKind kind = MotionKind::kFigureEight;
  double duration = 10.0;
  /// kConstantTwist: body twist held for the whole duration (circle when it
  /// mixes translation with rotation, straight line without rotation).
  Twist twist = Twist(Vector3d(0.3, 0.0, 0.0), Vector3d(0.0, 0.0, 0.5));
  /// kFigureEight / kSweep: lateral amplitude (m) and loop period (s).
  double amplitude = 0.8;
  double period = 4.0;
  /// kFigureEight / kSweep: the camera keeps this point on its optical axis.
  Vector3d look_at = Vector3d(0.0, 0.0, 8.0);
  /// kDeceleratingLine: speed v0 exp(-t / decay_time) along `direction`.
  double initial_speed = 1.0;
  double decay_time = 1.0;
  Vector3d direction = Vector3d(1.0, 0.0, 0.0);
};

class GroundTruthMotion {
 public:
  explicit GroundTruthMotion(MotionSpec spec);

  const MotionSpec& spec() const { return spec_; }
  double duration() const { return spec_.duration; }
  SE3Pose pose(double t) const;
  /// Body-frame twist rate.
  Twist velocity(double t) const;
  ControlState state(double t) const;

 private:
  MotionSpec spec_;
};

struct TrajectorySample {
  double timestamp = 0.0;
  SE3Pose pose;  // camera-to-world
};

struct SimScenario {
  MotionSpec motion;
  CameraIntrinsics intrinsics;
  std::size_t landmark_count = 30;
  /// Landmarks are back-projected from random pixels of the first view at a
  /// depth drawn uniformly from this range.
  double landmark_depth_min = 2.5;
  double landmark_depth_max = 4.0;
  /// Explicit landmarks override the random draw when non-empty.
  std::vector<Vector3d> landmarks;
  double pixel_noise_sigma = 0.5;
  double event_threshold_px = 1.0;
  double outlier_track_fraction = 0.0;
  std::uint64_t seed = 1;
  /// Ground-truth sampling rate (Hz).
  double ground_truth_rate = 200.0;
  /// Time step of the crossing search.
  double sample_step = 1e-4;

  /// Throws kSchema naming the offending field.
  void validate() const;
};

CameraIntrinsics default_intrinsics();

struct SimulationResult {
  std::vector<EventObservation> events;  // globally time-sorted
  std::vector<TrajectorySample> ground_truth;
  std::vector<Vector3d> landmarks;  // indexed by track id
  std::vector<TrackId> outlier_tracks;
};

/// Geometric event model: a track fires whenever the noise-free projection of
/// its landmark has moved event_threshold_px since the track's last event.
/// Throws kEmptyStream when no landmark is ever in front of the camera.
SimulationResult generate_events(const SimScenario& scenario);

/// Ground-truth poses for the landmarks of a scenario, as `generate_events`
/// would draw them.
std::vector<Vector3d> scenario_landmarks(const SimScenario& scenario);

struct BatchConfig {
  enum class Mode { kFixedDuration, kFixedCount };
  Mode mode = Mode::kFixedDuration;
  double duration = 0.1;
  std::size_t count = 1000;
  /// Frames with fewer tracks are unusable.
  std::size_t min_tracks = 8;
};

struct FrameObservation {
  TrackId track = 0;
  Vector2d mean_pixel = Vector2d::Zero();
  std::size_t event_count = 0;
  /// RMS distance of the track's events from their mean (blur proxy).
  double spread = 0.0;
};

struct EventFrame {
  double t_begin = 0.0;
  double t_end = 0.0;
  /// Mean event timestamp; window centre for empty frames.
  double timestamp = 0.0;
  std::size_t event_count = 0;
  std::vector<FrameObservation> observations;  // sorted by track id
  bool usable = false;

  /// Mean per-track spread (0 for empty frames).
  double mean_spread() const;
};

/// Throws kEmptyStream for an empty stream.
std::vector<EventFrame> batch_events(const std::vector<EventObservation>& stream,
                                     const BatchConfig& config);

struct FrameBaConfig {
  double pixel_sigma = 0.5;
  double min_parallax_deg = 1.0;
  double outlier_avg_reproj_px = 3.0;
  GaussNewtonConfig gn;
};

struct FrameBaResult {
  std::vector<TrajectorySample> poses;  // one per usable frame
  std::vector<Vector3d> landmarks;
  std::vector<TrackId> landmark_tracks;
  std::size_t usable_frames = 0;
  std::size_t unusable_frames = 0;
  std::size_t demoted_tracks = 0;
  GaussNewtonReport report;
  double mean_reprojection_error = 0.0;
};

/// Reprojection-only bundle adjustment over frame-averaged tracks: one
/// zero-velocity state per usable frame, no GP factors, gauge fixed as in the
/// asynchronous engine. Throws kUnderdetermined with fewer than two usable
/// frames.
FrameBaResult frame_based_ba(const std::vector<EventFrame>& frames,
                             const CameraIntrinsics& intrinsics,
                             TwoViewInitializer& initializer,
                             const FrameBaConfig& config = {});

}  // namespace ctsfm
