#include "ctsfm/incremental_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

#include "ctsfm/errors.hpp"

namespace ctsfm {

namespace {

constexpr std::size_t kMinTrackEvents = 3;
/// Events used to triangulate a new track (evenly subsampled).
constexpr std::size_t kTriangulationSamples = 40;
/// Two first-view pixels closer than this count as the same scene point.
constexpr double kDistinctPixelPx = 5.0;

double ray_angle_deg(const Vector3d& a, const Vector3d& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b)) * 180.0 / std::numbers::pi;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v[v.size() / 2];
}

}  // namespace

std::string_view solve_trigger_name(SolveTrigger trigger) {
  switch (trigger) {
    case SolveTrigger::kPerEvent: return "per_event";
    case SolveTrigger::kPerState: return "per_state";
    case SolveTrigger::kPerNEvents: return "per_n_events";
  }
  return "unknown";
}

std::optional<SolveTrigger> parse_solve_trigger(std::string_view name) {
  for (SolveTrigger t : {SolveTrigger::kPerEvent, SolveTrigger::kPerState, SolveTrigger::kPerNEvents}) {
    if (solve_trigger_name(t) == name) return t;
  }
  return std::nullopt;
}

void EngineConfig::validate() const {
  const auto require = [](bool ok, const char* field) {
    if (!ok) fail(ErrorCode::kInvalidArgument, std::string("engine config: invalid ") + field);
  };
  require(state_insertion_period > 0.0, "state_insertion_period");
  require(outlier_avg_reproj_px > 0.0, "outlier_avg_reproj_px");
  require(solve_every_n > 0, "solve_every_n");
  require(pixel_sigma > 0.0, "pixel_sigma");
  require(qc_translation > 0.0, "qc_translation");
  require(qc_rotation > 0.0, "qc_rotation");
  require(relinearize_threshold >= 0.0, "relinearize_threshold");
  require(bootstrap_min_tracks >= 2, "bootstrap_min_tracks");
  require(bootstrap_min_parallax_deg >= 0.0, "bootstrap_min_parallax_deg");
  require(window_states == 0 || window_states >= 2, "window_states");
  require(gn.max_iterations > 0, "gn.max_iterations");
}

WnoaPrior EngineConfig::prior() const {
  return WnoaPrior::isotropic(qc_translation, qc_rotation);
}

IncrementalEngine::IncrementalEngine(CameraIntrinsics intrinsics, EngineConfig config,
                                     TwoViewInitializer& initializer)
    : intrinsics_(intrinsics),
      config_((config.validate(), config)),
      initializer_(&initializer),
      graph_(intrinsics, config.prior()),
      cache_(config.relinearize_threshold) {
  intrinsics_.validate();
}

TrajectoryGP IncrementalEngine::trajectory() const { return values_.trajectory(graph_.prior()); }

std::size_t IncrementalEngine::active_track_count() const {
  std::size_t n = 0;
  for (const auto& [id, t] : tracks_) {
    n += t.status == TrackStatus::kActive && t.landmark.has_value();
  }
  return n;
}

IngestResult IncrementalEngine::ingest(const EventObservation& event) {
  if (!event.track_id) {
    fail(ErrorCode::kUnsupportedInput, "ingest: event without a track id");
  }
  if (!std::isfinite(event.timestamp) || !event.pixel.allFinite()) {
    fail(ErrorCode::kInvalidArgument, "ingest: non-finite event");
  }
  if (last_time_ && event.timestamp < *last_time_) {
    fail(ErrorCode::kMonotonicity, "ingest: timestamp " + std::to_string(event.timestamp) +
                                       " precedes " + std::to_string(*last_time_));
  }
  EventTrack& track = tracks_[*event.track_id];
  track.id = *event.track_id;
  if (!track.events.empty() && event.timestamp <= track.events.back().timestamp) {
    fail(ErrorCode::kMonotonicity, "ingest: repeated timestamp in track " +
                                       std::to_string(track.id));
  }
  track.events.push_back(event);
  stream_.push_back(event);
  last_time_ = event.timestamp;
  ++stats_.events;

  IngestResult result;
  const double t = event.timestamp;
  if (!first_time_) {
    first_time_ = t;
    next_bootstrap_attempt_ = t + config_.state_insertion_period;
  }
  if (!bootstrapped_) {
    if (t >= next_bootstrap_attempt_) {
      next_bootstrap_attempt_ = t + config_.state_insertion_period;
      if (try_bootstrap(t)) {
        result.bootstrapped = true;
        result.solved = true;
      }
    }
    return result;
  }

  const double last_knot = values_.states.back().timestamp;
  const bool per_event = config_.solve_trigger == SolveTrigger::kPerEvent;
  if (t > last_knot + config_.state_insertion_period) {
    result.inserted_state = insert_control_state(t);
    attach_ready_events();
    initialize_pending_tracks(true);
    if (track.landmark && track.status == TrackStatus::kActive && !track.factors.empty() &&
        track.attached == track.events.size()) {
      result.factor = track.factors.back();
    }
    if (config_.solve_trigger == SolveTrigger::kPerState) {
      resolve(ResolveMode::kWarm);
      result.demoted = remove_outlier_tracks();
      if (!result.demoted.empty()) resolve(ResolveMode::kWarm);
      result.solved = true;
      return result;
    }
  } else if (track.landmark && track.status == TrackStatus::kActive &&
             (t <= last_knot || per_event)) {
    // Earlier events of the track are already attached or still pending.
    if (track.attached + 1 == track.events.size()) {
      attach_event(track, track.attached);
      result.factor = track.factors.back();
    }
  }

  ++events_since_solve_;
  const bool due = per_event || (config_.solve_trigger == SolveTrigger::kPerNEvents &&
                                 events_since_solve_ >= config_.solve_every_n);
  if (due) {
    resolve(ResolveMode::kWarm);
    result.demoted = remove_outlier_tracks();
    if (!result.demoted.empty()) resolve(ResolveMode::kWarm);
    result.solved = true;
  }
  return result;
}

GaussNewtonReport IncrementalEngine::finish() {
  if (!bootstrapped_) {
    fail(ErrorCode::kBootstrapFailure, "bootstrap never succeeded within the stream");
  }
  if (last_time_ && *last_time_ > values_.states.back().timestamp) {
    insert_control_state(*last_time_);
    attach_ready_events();
    initialize_pending_tracks(true);
  }
  GaussNewtonReport report = resolve(ResolveMode::kWarm);
  if (!remove_outlier_tracks().empty()) report = resolve(ResolveMode::kWarm);
  finished_ = true;
  return report;
}

std::size_t IncrementalEngine::insert_control_state(double t_c) {
  if (!bootstrapped_) {
    fail(ErrorCode::kInvalidArgument, "insert_control_state: engine not bootstrapped");
  }
  const ControlState& last = values_.states.back();
  if (!(t_c > last.timestamp)) {
    fail(ErrorCode::kOutOfRange, "insert_control_state: t_c must follow the last knot");
  }
  values_.states.push_back(extrapolate_state(last, t_c));
  initial_values_.states.push_back(values_.states.back());
  const std::size_t index = values_.states.size() - 1;
  graph_.add_gp_prior(index - 1, index, values_);
  dirty_ = true;
  return index;
}

void IncrementalEngine::attach_event(EventTrack& track, std::size_t event_index) {
  const EventObservation& e = track.events[event_index];
  const auto& states = values_.states;
  const Matrix2d noise = Matrix2d::Identity() * config_.pixel_sigma * config_.pixel_sigma;
  std::size_t left = states.size() - 1;
  std::optional<std::size_t> right;
  if (e.timestamp <= states.back().timestamp) {
    const auto it = std::upper_bound(states.begin(), states.end(), e.timestamp,
                                     [](double v, const ControlState& s) { return v < s.timestamp; });
    left = static_cast<std::size_t>(it - states.begin()) - 1;
    if (left + 1 == states.size()) --left;
    right = left + 1;
  } else {
    extrapolating_.emplace_back(track.id, event_index);
  }
  track.factors.push_back(
      graph_.add_reprojection(e, *track.landmark, left, right, values_, noise));
  track.attached = event_index + 1;
  dirty_ = true;
}

void IncrementalEngine::attach_ready_events() {
  const double last_knot = values_.states.back().timestamp;
  // Extrapolating factors that now have a right knot.
  std::vector<std::pair<TrackId, std::size_t>> still;
  for (const auto& [id, idx] : extrapolating_) {
    EventTrack& track = tracks_.at(id);
    const EventObservation& e = track.events[idx];
    if (e.timestamp > last_knot) {
      still.emplace_back(id, idx);
      continue;
    }
    const auto& states = values_.states;
    const auto it = std::upper_bound(states.begin(), states.end(), e.timestamp,
                                     [](double v, const ControlState& s) { return v < s.timestamp; });
    std::size_t left = static_cast<std::size_t>(it - states.begin()) - 1;
    if (left + 1 == states.size()) --left;
    // Every event of a track gets its factor in order, so factors[i] is event i.
    const std::size_t factor = track.factors[idx];
    graph_.rebracket_reprojection(factor, left, left + 1, values_);
    dirty_ = true;
  }
  extrapolating_ = std::move(still);
  for (auto& [id, track] : tracks_) {
    if (!track.landmark || track.status != TrackStatus::kActive) continue;
    while (track.attached < track.events.size() &&
           track.events[track.attached].timestamp <= last_knot) {
      attach_event(track, track.attached);
    }
  }
}

std::size_t IncrementalEngine::add_landmark(const Vector3d& point) {
  values_.landmarks.push_back(point);
  initial_values_.landmarks.push_back(point);
  return values_.landmarks.size() - 1;
}

bool IncrementalEngine::initialize_track(EventTrack& track, bool demote_on_failure) {
  if (track.landmark || track.status != TrackStatus::kActive) return false;
  const double last_knot = values_.states.back().timestamp;
  const double first_knot = values_.states.front().timestamp;
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < track.events.size(); ++i) {
    const double t = track.events[i].timestamp;
    if (t >= first_knot && t <= last_knot) usable.push_back(i);
  }
  if (usable.size() < kMinTrackEvents) return false;

  const TrajectoryGP gp = trajectory();
  const auto w2c_at = [&](std::size_t i) { return gp.interpolate(track.events[i].timestamp).pose.inverse(); };
  const std::size_t first = usable.front();
  const std::size_t last = usable.back();
  const SE3Pose ca = w2c_at(first);
  const SE3Pose cb = w2c_at(last);
  const Vector3d ray_a = ca.rotation().transpose() * intrinsics_.back_project(track.events[first].pixel);
  const Vector3d ray_b = cb.rotation().transpose() * intrinsics_.back_project(track.events[last].pixel);
  if (ray_angle_deg(ray_a, ray_b) < config_.bootstrap_min_parallax_deg) return false;

  std::vector<SE3Pose> cams;
  std::vector<Vector2d> pixels;
  const std::size_t step = std::max<std::size_t>(1, usable.size() / kTriangulationSamples);
  for (std::size_t k = 0; k < usable.size(); k += step) {
    cams.push_back(w2c_at(usable[k]));
    pixels.push_back(track.events[usable[k]].pixel);
  }
  if (step > 1) {
    cams.push_back(cb);
    pixels.push_back(track.events[last].pixel);
  }

  std::optional<Vector3d> guess;
  try {
    guess = triangulate(ca, cb, track.events[first].pixel, track.events[last].pixel, intrinsics_).point;
  } catch (const Error&) {
    try {
      guess = intersect_rays(cams, pixels, intrinsics_);
    } catch (const Error&) {
    }
  }
  double error = std::numeric_limits<double>::infinity();
  Vector3d point = Vector3d::Zero();
  if (guess) {
    const PointFit fit = refine_point(cams, pixels, intrinsics_, *guess);
    error = fit.mean_error;
    point = fit.point;
  }
  if (!(error <= config_.outlier_avg_reproj_px)) {
    if (demote_on_failure) demote(track);
    return false;
  }
  track.landmark = add_landmark(point);
  const bool per_event = config_.solve_trigger == SolveTrigger::kPerEvent;
  while (track.attached < track.events.size() &&
         (per_event || track.events[track.attached].timestamp <= last_knot)) {
    attach_event(track, track.attached);
  }
  return true;
}

void IncrementalEngine::initialize_pending_tracks(bool demote_failures) {
  for (auto& [id, track] : tracks_) initialize_track(track, demote_failures);
}

void IncrementalEngine::demote(EventTrack& track) {
  if (track.status == TrackStatus::kOutlier) return;
  track.status = TrackStatus::kOutlier;
  for (std::size_t f : track.factors) graph_.set_reprojection_active(f, false);
  std::erase_if(extrapolating_, [&](const auto& p) { return p.first == track.id; });
  ++stats_.demoted_tracks;
  dirty_ = dirty_ || !track.factors.empty();
}

std::vector<TrackId> IncrementalEngine::remove_outlier_tracks() {
  std::vector<TrackId> demoted;
  for (auto& [id, track] : tracks_) {
    if (track.status != TrackStatus::kActive || track.factors.empty()) continue;
    double sum = 0.0;
    for (std::size_t f : track.factors) {
      const auto err = reprojection_error(graph_, f, values_);
      sum += err ? *err : std::numeric_limits<double>::infinity();
    }
    if (!(sum / static_cast<double>(track.factors.size()) <= config_.outlier_avg_reproj_px)) {
      demote(track);
      demoted.push_back(id);
    }
  }
  return demoted;
}

SolveOptions IncrementalEngine::solve_options() {
  SolveOptions options;
  const std::size_t n = values_.states.size();
  if (config_.window_states == 0 || n <= config_.window_states) return options;
  const std::size_t first_free = n - config_.window_states;
  options.frozen_states.assign(n, false);
  for (std::size_t i = 0; i < first_free; ++i) options.frozen_states[i] = true;
  std::vector<bool> touched(values_.landmarks.size(), false);
  for (const auto& f : graph_.reprojections()) {
    if (!f.active) continue;
    const bool in_window = f.left_state >= first_free || (f.right_state && *f.right_state >= first_free);
    if (in_window) touched[f.landmark] = true;
  }
  options.frozen_landmarks.assign(values_.landmarks.size(), false);
  for (std::size_t i = 0; i < touched.size(); ++i) options.frozen_landmarks[i] = !touched[i];
  return options;
}

GaussNewtonReport IncrementalEngine::resolve(ResolveMode mode) {
  GaussNewtonReport report;
  if (!bootstrapped_) return report;
  if (!dirty_) {
    report.initial_cost = report.final_cost = total_cost(graph_, values_);
    report.cost_trace.push_back(report.final_cost);
    report.converged = true;
    return report;
  }
  SolveOptions options = solve_options();
  if (mode == ResolveMode::kWarm) options.cache = &cache_;
  try {
    report = gauss_newton(graph_, values_, config_.gn, options);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kDivergence) ++stats_.divergences;
    throw;
  }
  dirty_ = false;
  events_since_solve_ = 0;
  ++stats_.solves;
  stats_.iterations += static_cast<std::size_t>(report.iterations);
  stats_.linearizations += report.linearizations;
  stats_.cost_trace.insert(stats_.cost_trace.end(), report.cost_trace.begin(), report.cost_trace.end());
  if (active_track_count() < config_.min_active_tracks) ++stats_.low_track_solves;
  return report;
}

bool IncrementalEngine::try_bootstrap(double t_c) {
  const double t0 = *first_time_;
  std::vector<const EventTrack*> candidates;
  std::vector<double> parallax;
  for (const auto& [id, track] : tracks_) {
    if (track.status != TrackStatus::kActive || track.events.size() < 2) continue;
    if (track.events.front().timestamp > t0 + config_.state_insertion_period) continue;
    if (track.events.back().timestamp < t_c - config_.state_insertion_period) continue;
    candidates.push_back(&track);
    parallax.push_back(ray_angle_deg(intrinsics_.back_project(track.events.front().pixel),
                                     intrinsics_.back_project(track.events.back().pixel)));
  }
  if (candidates.size() < config_.bootstrap_min_tracks ||
      median(parallax) <= config_.bootstrap_min_parallax_deg) {
    return false;
  }
  // Tracks of one scene point give no structure.
  std::vector<Vector2d> distinct;
  for (const EventTrack* c : candidates) {
    const Vector2d& z = c->events.front().pixel;
    if (std::none_of(distinct.begin(), distinct.end(),
                     [&](const Vector2d& d) { return (d - z).norm() < kDistinctPixelPx; })) {
      distinct.push_back(z);
    }
  }
  if (distinct.size() < config_.bootstrap_min_tracks) return false;

  TwoViewProblem problem;
  problem.t0 = t0;
  problem.t1 = t_c;
  for (const EventTrack* c : candidates) {
    problem.pixels0.push_back(c->events.front().pixel);
    problem.pixels1.push_back(c->events.back().pixel);
  }
  TwoViewEstimate estimate;
  try {
    estimate = initializer_->estimate(problem, intrinsics_);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kBootstrapFailure) return false;
    throw;
  }

  const Twist velocity = log_map(estimate.pose0.inverse() * estimate.pose1) * (1.0 / (t_c - t0));
  values_.states = {ControlState{t0, estimate.pose0, velocity},
                    ControlState{t_c, estimate.pose1, velocity}};
  values_.landmarks.clear();
  initial_values_ = values_;
  graph_.add_gp_prior(0, 1, values_);
  const double sqrt_gauge = std::sqrt(kGaugeInformation);
  graph_.add_gauge(PosePrior{0, estimate.pose0, sqrt_gauge * Matrix6d::Identity()});
  graph_.add_gauge(ScalePrior{0, 1, estimate.baseline, sqrt_gauge});
  bootstrapped_ = true;

  initialize_pending_tracks(false);
  if (active_track_count() < config_.bootstrap_min_tracks) {
    // Not enough structure yet: roll back and keep accumulating.
    graph_ = FactorGraph(intrinsics_, config_.prior());
    values_ = Values{};
    initial_values_ = Values{};
    cache_.clear();
    extrapolating_.clear();
    for (auto& [id, track] : tracks_) {
      track.landmark.reset();
      track.factors.clear();
      track.attached = 0;
    }
    bootstrapped_ = false;
    return false;
  }
  dirty_ = true;
  resolve(ResolveMode::kBatch);
  // Tracks rejected against the rough initial trajectory get a second chance.
  const std::size_t before = values_.landmarks.size();
  initialize_pending_tracks(true);
  if (values_.landmarks.size() != before) resolve(ResolveMode::kBatch);
  if (!remove_outlier_tracks().empty()) resolve(ResolveMode::kBatch);
  return true;
}

void IncrementalEngine::save_checkpoint(std::ostream& out) const {
  char buf[512];
  out << "ctsfm-checkpoint 1\n";
  const auto& c = config_;
  std::snprintf(buf, sizeof buf,
                "config %.17g %.17g %zu %s %zu %zu %.17g %.17g %.17g %.17g %zu %.17g %d %.17g %.17g\n",
                c.state_insertion_period, c.outlier_avg_reproj_px, c.min_active_tracks,
                std::string(solve_trigger_name(c.solve_trigger)).c_str(), c.solve_every_n,
                c.window_states, c.pixel_sigma, c.qc_translation, c.qc_rotation,
                c.relinearize_threshold, c.bootstrap_min_tracks, c.bootstrap_min_parallax_deg,
                c.gn.max_iterations, c.gn.abs_tol, c.gn.rel_tol);
  out << buf;
  std::snprintf(buf, sizeof buf, "intrinsics %.17g %.17g %.17g %.17g %d %d\n", intrinsics_.fx,
                intrinsics_.fy, intrinsics_.cx, intrinsics_.cy, intrinsics_.width,
                intrinsics_.height);
  out << buf;
  out << "finished " << (finished_ ? 1 : 0) << '\n';
  out << "events " << stream_.size() << '\n';
  for (const auto& e : stream_) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %d %lld\n", e.timestamp, e.pixel.x(),
                  e.pixel.y(), e.polarity, static_cast<long long>(*e.track_id));
    out << buf;
  }
  out << "states " << values_.states.size() << '\n';
  for (const auto& x : values_.states) {
    const Eigen::Quaterniond q = x.pose.quaternion();
    const Vector3d& p = x.pose.translation();
    const Vector6d& v = x.velocity.vector();
    std::snprintf(buf, sizeof buf,
                  "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  x.timestamp, q.w(), q.x(), q.y(), q.z(), p.x(), p.y(), p.z(), v(0), v(1), v(2),
                  v(3), v(4), v(5));
    out << buf;
  }
  out << "landmarks " << values_.landmarks.size() << '\n';
  for (const auto& l : values_.landmarks) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", l.x(), l.y(), l.z());
    out << buf;
  }
}

IncrementalEngine IncrementalEngine::load_checkpoint(std::istream& in,
                                                     TwoViewInitializer& initializer) {
  const auto bad = [](const std::string& what) -> void {
    fail(ErrorCode::kSchema, "checkpoint: " + what);
  };
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "ctsfm-checkpoint" || version != 1) bad("unrecognized header");
  std::string key;
  EngineConfig c;
  std::string trigger;
  in >> key >> c.state_insertion_period >> c.outlier_avg_reproj_px >> c.min_active_tracks >>
      trigger >> c.solve_every_n >> c.window_states >> c.pixel_sigma >> c.qc_translation >>
      c.qc_rotation >> c.relinearize_threshold >> c.bootstrap_min_tracks >>
      c.bootstrap_min_parallax_deg >> c.gn.max_iterations >> c.gn.abs_tol >> c.gn.rel_tol;
  if (!in || key != "config") bad("malformed config line");
  const auto parsed = parse_solve_trigger(trigger);
  if (!parsed) bad("unknown solve trigger '" + trigger + "'");
  c.solve_trigger = *parsed;
  CameraIntrinsics k;
  in >> key >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height;
  if (!in || key != "intrinsics") bad("malformed intrinsics line");
  int finished = 0;
  in >> key >> finished;
  if (!in || key != "finished") bad("missing finished flag");
  std::size_t n = 0;
  in >> key >> n;
  if (!in || key != "events") bad("missing event block");
  IncrementalEngine engine(k, c, initializer);
  for (std::size_t i = 0; i < n; ++i) {
    EventObservation e;
    long long track = 0;
    in >> e.timestamp >> e.pixel.x() >> e.pixel.y() >> e.polarity >> track;
    if (!in) bad("truncated event block");
    e.track_id = track;
    engine.ingest(e);
  }
  if (finished) engine.finish();
  in >> key >> n;
  if (!in || key != "states" || n != engine.values_.states.size()) bad("state block mismatch");
  for (auto& x : engine.values_.states) {
    double qw, qx, qy, qz;
    Vector3d p;
    Vector6d v;
    in >> x.timestamp >> qw >> qx >> qy >> qz >> p.x() >> p.y() >> p.z();
    for (int j = 0; j < 6; ++j) in >> v(j);
    x.pose = SE3Pose::from_quaternion(Eigen::Quaterniond(qw, qx, qy, qz), p);
    x.velocity = Twist(v);
  }
  in >> key >> n;
  if (!in || key != "landmarks" || n != engine.values_.landmarks.size()) bad("landmark block mismatch");
  for (auto& l : engine.values_.landmarks) in >> l.x() >> l.y() >> l.z();
  if (!in) bad("truncated estimate");
  return engine;
}

}  // namespace ctsfm
