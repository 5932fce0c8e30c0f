#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ctsfm/event_sim.hpp"
#include "ctsfm/incremental_engine.hpp"
#include "ctsfm/io.hpp"
#include "ctsfm/metrics.hpp"

namespace ctsfm {

/// Which two-view initializer a run uses. kAuto picks ground truth when it
/// is available and random depth otherwise.
enum class InitializerKind { kAuto, kGroundTruth, kRandomDepth };

struct RunConfig {
  std::optional<std::filesystem::path> scenario;
  std::optional<std::filesystem::path> events;
  std::optional<std::filesystem::path> ground_truth;
  /// Overrides the scenario seed.
  std::optional<std::uint64_t> seed;
  /// Camera for event-file input.
  CameraIntrinsics intrinsics = default_intrinsics();
  EngineConfig engine;
  BatchConfig batch;
  FrameBaConfig baseline;
  InitializerKind initializer = InitializerKind::kAuto;
  std::filesystem::path output_dir;

  /// kSchema unless exactly one input source is set.
  void validate() const;
};

/// Relative paths in the file resolve against `base_dir`. Validates the result.
RunConfig run_config_from_key_values(const KeyValues& kv,
                                     const std::filesystem::path& base_dir = {});

struct RunInput {
  std::vector<EventObservation> events;
  std::optional<std::vector<TrajectorySample>> ground_truth;
  CameraIntrinsics intrinsics;
};

RunInput load_run_input(const RunConfig& config);

std::unique_ptr<TwoViewInitializer> make_initializer(InitializerKind kind, const RunInput& input);

struct RunReport {
  std::string mode;
  std::string initializer;
  bool has_metrics = false;
  double rpe = 0.0;
  double ate = 0.0;
  double path_length = 0.0;
  double mean_reprojection_error = 0.0;
  std::size_t knot_count = 0;
  std::size_t event_count = 0;
  std::size_t solve_count = 0;
  std::size_t iterations = 0;
  std::size_t demoted_tracks = 0;
  std::size_t usable_frames = 0;
  std::size_t unusable_frames = 0;
  std::size_t low_track_solves = 0;
  double gt_begin = 0.0;
  double gt_end = 0.0;
  std::size_t gt_samples = 0;
  double wall_time = 0.0;
  /// Accepted-iteration costs, one list per solve.
  std::vector<std::vector<double>> cost_trace;
};

/// One `key = value` per line.
void write_report(std::ostream& out, const RunReport& report);
RunReport read_report(std::istream& in);

struct RunResult {
  RunReport report;
  /// Estimate written to disk (ground-truth timestamps and knots for the
  /// asynchronous run; frame timestamps for the baseline).
  std::vector<TrajectorySample> trajectory;
};

/// Streams every event through the incremental engine, then finishes it.
/// kBootstrapFailure if the map never initializes.
RunResult run_async(const RunInput& input, const EngineConfig& config,
                    TwoViewInitializer& initializer);

RunResult run_baseline(const RunInput& input, const BatchConfig& batch,
                       const FrameBaConfig& config, TwoViewInitializer& initializer);

/// Side-by-side table of two reports. kNoOverlap when their ground-truth
/// spans differ.
std::string comparison_table(const RunReport& a, const RunReport& b);

/// `t,x_est,y_est,z_est,x_gt,y_gt,z_gt` for every ground-truth sample inside
/// the estimate's span, estimate SE(3)-aligned to the ground truth.
void write_comparison_csv(std::ostream& out, const std::vector<TrajectorySample>& estimate,
                          const std::vector<TrajectorySample>& ground_truth);

}  // namespace ctsfm
