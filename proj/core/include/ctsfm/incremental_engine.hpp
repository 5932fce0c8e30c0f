#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <vector>

#include "ctsfm/camera.hpp"
#include "ctsfm/event.hpp"
#include "ctsfm/factor_graph.hpp"
#include "ctsfm/gp_motion.hpp"
#include "ctsfm/initializer.hpp"

namespace ctsfm {

enum class SolveTrigger { kPerEvent, kPerState, kPerNEvents };

std::string_view solve_trigger_name(SolveTrigger trigger);
std::optional<SolveTrigger> parse_solve_trigger(std::string_view name);

struct EngineConfig {
  double state_insertion_period = 0.05;
  double outlier_avg_reproj_px = 3.0;
  /// Solves that end with fewer active tracks are counted in the stats.
  std::size_t min_active_tracks = 20;
  SolveTrigger solve_trigger = SolveTrigger::kPerState;
  /// Events between solves for kPerNEvents.
  std::size_t solve_every_n = 100;
  /// Fixed-lag window in states; 0 keeps every state free.
  std::size_t window_states = 0;
  double pixel_sigma = kDefaultPixelSigma;
  /// WNOA power spectral density (translational, rotational).
  double qc_translation = 1.0;
  double qc_rotation = 1.0;
  double relinearize_threshold = 1e-3;
  std::size_t bootstrap_min_tracks = 8;
  double bootstrap_min_parallax_deg = 1.0;
  GaussNewtonConfig gn;

  /// Throws kInvalidArgument naming the offending field.
  void validate() const;
  WnoaPrior prior() const;
};

enum class TrackStatus { kActive, kOutlier, kTerminated };

struct EventTrack {
  TrackId id = 0;
  std::vector<EventObservation> events;
  std::optional<std::size_t> landmark;
  TrackStatus status = TrackStatus::kActive;
  /// Reprojection factor per attached event, in event order.
  std::vector<std::size_t> factors;
  /// Events [0, attached) have factors.
  std::size_t attached = 0;
};

enum class ResolveMode { kWarm, kBatch };

struct EngineStats {
  std::size_t events = 0;
  std::size_t solves = 0;
  std::size_t iterations = 0;
  std::size_t linearizations = 0;
  std::size_t low_track_solves = 0;
  std::size_t demoted_tracks = 0;
  std::size_t divergences = 0;
  /// Cost after each accepted iteration of every solve, in order.
  std::vector<double> cost_trace;
};

struct IngestResult {
  bool bootstrapped = false;
  std::optional<std::size_t> inserted_state;
  std::optional<std::size_t> factor;
  bool solved = false;
  std::vector<TrackId> demoted;
};

/// Online continuous-time SfM over labeled event tracks.
///
/// Knots are inserted at event timestamps once an event is more than
/// `state_insertion_period` past the last knot. Events beyond the last knot
/// wait for the next knot, except in per-event mode where they are attached
/// immediately as extrapolating factors and re-bracketed later.
///
/// Single writer; `trajectory()` returns a snapshot of the last solve.
class IncrementalEngine {
 public:
  IncrementalEngine(CameraIntrinsics intrinsics, EngineConfig config,
                    TwoViewInitializer& initializer);

  const EngineConfig& config() const { return config_; }
  const CameraIntrinsics& intrinsics() const { return intrinsics_; }

  /// kMonotonicity for a timestamp older than the last one ingested;
  /// kUnsupportedInput for an event without a track id.
  IngestResult ingest(const EventObservation& event);

  /// Solves any factors added since the last solve and removes outliers.
  GaussNewtonReport finish();

  /// New knot at t_c from GP extrapolation, chained by a GP prior factor.
  std::size_t insert_control_state(double t_c);

  /// Demotes tracks whose mean reprojection error exceeds the threshold.
  std::vector<TrackId> remove_outlier_tracks();

  /// Zero iterations when nothing changed since the last solve.
  GaussNewtonReport resolve(ResolveMode mode = ResolveMode::kWarm);

  bool bootstrapped() const { return bootstrapped_; }
  const FactorGraph& graph() const { return graph_; }
  const Values& values() const { return values_; }
  /// Initial guess of every variable as first inserted.
  const Values& initial_values() const { return initial_values_; }
  TrajectoryGP trajectory() const;
  const std::map<TrackId, EventTrack>& tracks() const { return tracks_; }
  const EngineStats& stats() const { return stats_; }
  std::size_t active_track_count() const;
  LinearizationCache& cache() { return cache_; }

  /// Text checkpoint: config, intrinsics, the ingested stream and the
  /// current estimate. `load_checkpoint` replays the stream and restores the
  /// estimate.
  void save_checkpoint(std::ostream& out) const;
  static IncrementalEngine load_checkpoint(std::istream& in, TwoViewInitializer& initializer);

 private:
  bool try_bootstrap(double t_c);
  void attach_event(EventTrack& track, std::size_t event_index);
  void attach_ready_events();
  void initialize_pending_tracks(bool demote_failures);
  bool initialize_track(EventTrack& track, bool demote_on_failure);
  void demote(EventTrack& track);
  SolveOptions solve_options();
  std::size_t add_landmark(const Vector3d& point);

  CameraIntrinsics intrinsics_;
  EngineConfig config_;
  TwoViewInitializer* initializer_;
  FactorGraph graph_;
  Values values_;
  Values initial_values_;
  LinearizationCache cache_;
  std::map<TrackId, EventTrack> tracks_;
  std::vector<EventObservation> stream_;
  /// Extrapolating factors waiting for their right knot: (track, event index).
  std::vector<std::pair<TrackId, std::size_t>> extrapolating_;
  EngineStats stats_;
  std::optional<double> first_time_;
  std::optional<double> last_time_;
  double next_bootstrap_attempt_ = 0.0;
  bool bootstrapped_ = false;
  bool dirty_ = false;
  bool finished_ = false;
  std::size_t events_since_solve_ = 0;
};

}  // namespace ctsfm
