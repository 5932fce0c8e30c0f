#include "ctsfm/event_sim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

#include "ctsfm/errors.hpp"

namespace ctsfm {

namespace {

constexpr double kVelocityStep = 1e-5;

// Camera-to-world rotation whose optical axis points from p to target.
Matrix3d look_at(const Vector3d& p, const Vector3d& target) {
  const Vector3d z = (target - p).normalized();
  const Vector3d x = Vector3d::UnitY().cross(z).normalized();
  const Vector3d y = z.cross(x);
  Matrix3d r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

void require(bool ok, const char* field, const std::string& rule) {
  if (!ok) fail(ErrorCode::kSchema, std::string("scenario field '") + field + "': " + rule);
}

}  // namespace

std::string_view motion_kind_name(MotionKind kind) {
  switch (kind) {
    case MotionKind::kConstantTwist: return "constant_twist";
    case MotionKind::kFigureEight: return "figure_eight";
    case MotionKind::kDeceleratingLine: return "decelerating_line";
    case MotionKind::kSweep: return "sweep";
  }
  return "unknown";
}

std::optional<MotionKind> parse_motion_kind(std::string_view name) {
  for (MotionKind k : {MotionKind::kConstantTwist, MotionKind::kFigureEight,
                       MotionKind::kDeceleratingLine, MotionKind::kSweep}) {
    if (motion_kind_name(k) == name) return k;
  }
  if (name == "circle") return MotionKind::kConstantTwist;
  return std::nullopt;
}

GroundTruthMotion::GroundTruthMotion(MotionSpec spec) : spec_(std::move(spec)) {}

SE3Pose GroundTruthMotion::pose(double t) const {
  const double w = 2.0 * std::numbers::pi / spec_.period;
  const double a = spec_.amplitude;
  switch (spec_.kind) {
    case MotionKind::kConstantTwist:
      return exp_map(spec_.twist * t);
    case MotionKind::kFigureEight: {
      const Vector3d p(a * std::sin(w * t), 0.5 * a * std::sin(2.0 * w * t), 0.0);
      return SE3Pose(look_at(p, spec_.look_at), p);
    }
    case MotionKind::kDeceleratingLine: {
      const double s = spec_.initial_speed * spec_.decay_time *
                       (1.0 - std::exp(-t / spec_.decay_time));
      return SE3Pose(Matrix3d::Identity(), spec_.direction.normalized() * s);
    }
    case MotionKind::kSweep: {
      // Back-and-forth arc with a small vertical lift at the turnarounds.
      const double sx = std::sin(w * t);
      const Vector3d p(a * sx, -0.15 * a * sx * sx, 0.1 * a * (1.0 - std::cos(w * t)));
      return SE3Pose(look_at(p, spec_.look_at), p);
    }
  }
  return SE3Pose::identity();
}

Twist GroundTruthMotion::velocity(double t) const {
  switch (spec_.kind) {
    case MotionKind::kConstantTwist:
      return spec_.twist;
    case MotionKind::kDeceleratingLine:
      return Twist(spec_.direction.normalized() * spec_.initial_speed *
                       std::exp(-t / spec_.decay_time),
                   Vector3d::Zero());
    default: {
      const double h = kVelocityStep;
      return log_map(pose(t - h).inverse() * pose(t + h)) * (0.5 / h);
    }
  }
}

ControlState GroundTruthMotion::state(double t) const {
  ControlState x;
  x.timestamp = t;
  x.pose = pose(t);
  x.velocity = velocity(t);
  return x;
}

CameraIntrinsics default_intrinsics() {
  CameraIntrinsics k;
  k.fx = 900.0;
  k.fy = 900.0;
  k.cx = 640.0;
  k.cy = 360.0;
  k.width = 1280;
  k.height = 720;
  return k;
}

void SimScenario::validate() const {
  try {
    intrinsics.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kSchema, std::string("scenario field 'intrinsics': ") + e.what());
  }
  require(std::isfinite(motion.duration) && motion.duration > 0.0, "duration", "must be > 0");
  require(motion.period > 0.0, "period", "must be > 0");
  require(motion.amplitude >= 0.0, "amplitude", "must be >= 0");
  require(motion.decay_time > 0.0, "decay_time", "must be > 0");
  require(motion.direction.norm() > 0.0, "direction", "must be nonzero");
  require(motion.twist.vector().allFinite(), "twist", "must be finite");
  require(landmarks.empty() ? landmark_count > 0 : true, "landmark_count", "must be > 0");
  require(landmark_depth_min > 0.0, "landmark_depth_min", "must be > 0");
  require(landmark_depth_max >= landmark_depth_min, "landmark_depth_max",
          "must be >= landmark_depth_min");
  require(pixel_noise_sigma >= 0.0, "pixel_noise_sigma", "must be >= 0");
  require(event_threshold_px > 0.0, "event_threshold_px", "must be > 0");
  require(outlier_track_fraction >= 0.0 && outlier_track_fraction <= 1.0,
          "outlier_track_fraction", "must lie in [0, 1]");
  require(ground_truth_rate > 0.0, "ground_truth_rate", "must be > 0");
  require(sample_step > 0.0 && sample_step < motion.duration, "sample_step",
          "must lie in (0, duration)");
}

std::vector<Vector3d> scenario_landmarks(const SimScenario& scenario) {
  if (!scenario.landmarks.empty()) return scenario.landmarks;
  std::mt19937_64 rng(scenario.seed);
  const auto& k = scenario.intrinsics;
  std::uniform_real_distribution<double> u(0.1 * k.width, 0.9 * k.width);
  std::uniform_real_distribution<double> v(0.1 * k.height, 0.9 * k.height);
  std::uniform_real_distribution<double> depth(scenario.landmark_depth_min,
                                               scenario.landmark_depth_max);
  const SE3Pose t0 = GroundTruthMotion(scenario.motion).pose(0.0);
  std::vector<Vector3d> out;
  out.reserve(scenario.landmark_count);
  for (std::size_t i = 0; i < scenario.landmark_count; ++i) {
    const Vector2d px(u(rng), v(rng));
    out.push_back(t0 * (k.back_project(px) * depth(rng)));
  }
  return out;
}

SimulationResult generate_events(const SimScenario& scenario) {
  scenario.validate();
  const GroundTruthMotion motion(scenario.motion);
  const auto& k = scenario.intrinsics;
  SimulationResult result;
  result.landmarks = scenario_landmarks(scenario);
  const std::size_t n_landmarks = result.landmarks.size();

  const double duration = scenario.motion.duration;
  const auto steps = static_cast<std::size_t>(std::floor(duration / scenario.sample_step));
  std::vector<double> times(steps + 1);
  std::vector<SE3Pose> world_to_camera(steps + 1);
  for (std::size_t s = 0; s <= steps; ++s) {
    times[s] = std::min(duration, static_cast<double>(s) * scenario.sample_step);
    world_to_camera[s] = motion.pose(times[s]).inverse();
  }
  const auto image_of = [&](const SE3Pose& w2c, const Vector3d& l) -> std::optional<Vector2d> {
    const Vector3d pc = w2c * l;
    if (pc.z() <= kMinDepth) return std::nullopt;
    const Vector2d px(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
    if (!k.contains(px)) return std::nullopt;
    return px;
  };

  const auto gt_count = static_cast<std::size_t>(std::floor(duration * scenario.ground_truth_rate)) + 1;
  for (std::size_t i = 0; i < gt_count; ++i) {
    const double t = std::min(duration, static_cast<double>(i) / scenario.ground_truth_rate);
    result.ground_truth.push_back({t, motion.pose(t)});
  }

  // Outlier tracks: a seeded shuffle picks round(fraction * L) of them.
  std::mt19937_64 outlier_rng(scenario.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(n_landmarks);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), outlier_rng);
  const auto n_outliers = static_cast<std::size_t>(
      std::lround(scenario.outlier_track_fraction * static_cast<double>(n_landmarks)));
  std::vector<bool> is_outlier(n_landmarks, false);
  for (std::size_t i = 0; i < n_outliers; ++i) {
    is_outlier[order[i]] = true;
    result.outlier_tracks.push_back(static_cast<TrackId>(order[i]));
  }
  std::sort(result.outlier_tracks.begin(), result.outlier_tracks.end());

  std::mt19937_64 noise_rng(scenario.seed + 0x5bd1e995ULL);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> uniform_u(0.0, std::nextafter(k.width, 0.0));
  std::uniform_real_distribution<double> uniform_v(0.0, std::nextafter(k.height, 0.0));
  const double thr = scenario.event_threshold_px;
  bool ever_visible = false;

  for (std::size_t li = 0; li < n_landmarks; ++li) {
    const Vector3d& l = result.landmarks[li];
    std::optional<Vector2d> reference;
    for (std::size_t s = 0; s <= steps; ++s) {
      const auto px = image_of(world_to_camera[s], l);
      if (!px) {
        reference.reset();
        continue;
      }
      ever_visible = true;
      if (!reference) {
        reference = px;
        continue;
      }
      double t_lo = times[s - 1];
      // A fast step can cross the threshold more than once.
      while ((*px - *reference).norm() >= thr) {
        double lo = t_lo;
        double hi = times[s];
        for (int it = 0; it < 40; ++it) {
          const double mid = 0.5 * (lo + hi);
          const auto pm = image_of(motion.pose(mid).inverse(), l);
          if (pm && (*pm - *reference).norm() < thr) {
            lo = mid;
          } else {
            hi = mid;
          }
        }
        const double tc = hi;
        const auto crossing = image_of(motion.pose(tc).inverse(), l);
        const Vector2d z = crossing ? *crossing : *px;
        const Vector2d d = z - *reference;
        EventObservation e;
        e.timestamp = tc;
        e.track_id = static_cast<TrackId>(li);
        e.polarity = (std::abs(d.x()) >= std::abs(d.y()) ? d.x() : d.y()) >= 0.0 ? 1 : -1;
        if (is_outlier[li]) {
          e.pixel = Vector2d(uniform_u(noise_rng), uniform_v(noise_rng));
        } else {
          Vector2d noisy = z + scenario.pixel_noise_sigma * Vector2d(noise(noise_rng), noise(noise_rng));
          noisy.x() = std::clamp(noisy.x(), 0.0, std::nextafter(k.width, 0.0));
          noisy.y() = std::clamp(noisy.y(), 0.0, std::nextafter(k.height, 0.0));
          e.pixel = noisy;
        }
        result.events.push_back(e);
        reference = z;
        t_lo = tc;
      }
    }
  }
  if (!ever_visible) {
    fail(ErrorCode::kEmptyStream, "no landmark is ever in front of the camera");
  }
  std::stable_sort(result.events.begin(), result.events.end(),
                   [](const EventObservation& a, const EventObservation& b) {
                     if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
                     return *a.track_id < *b.track_id;
                   });
  return result;
}

double EventFrame::mean_spread() const {
  if (observations.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& o : observations) sum += o.spread;
  return sum / static_cast<double>(observations.size());
}

namespace {

EventFrame make_frame(std::span<const EventObservation> events, double t_begin, double t_end,
                      std::size_t min_tracks) {
  EventFrame f;
  f.t_begin = t_begin;
  f.t_end = t_end;
  f.event_count = events.size();
  if (events.empty()) {
    f.timestamp = 0.5 * (t_begin + t_end);
    return f;
  }
  struct Acc {
    Vector2d sum = Vector2d::Zero();
    double sq = 0.0;
    std::size_t n = 0;
  };
  std::map<TrackId, Acc> acc;
  double t_sum = 0.0;
  for (const auto& e : events) {
    auto& a = acc[*e.track_id];
    a.sum += e.pixel;
    a.sq += e.pixel.squaredNorm();
    ++a.n;
    t_sum += e.timestamp;
  }
  f.timestamp = t_sum / static_cast<double>(events.size());
  for (const auto& [track, a] : acc) {
    FrameObservation o;
    o.track = track;
    o.event_count = a.n;
    o.mean_pixel = a.sum / static_cast<double>(a.n);
    const double var = a.sq / static_cast<double>(a.n) - o.mean_pixel.squaredNorm();
    o.spread = std::sqrt(std::max(0.0, var));
    f.observations.push_back(o);
  }
  f.usable = f.observations.size() >= min_tracks;
  return f;
}

}  // namespace

std::vector<EventFrame> batch_events(const std::vector<EventObservation>& stream,
                                     const BatchConfig& config) {
  if (stream.empty()) fail(ErrorCode::kEmptyStream, "batch_events: empty stream");
  for (const auto& e : stream) {
    if (!e.track_id) {
      fail(ErrorCode::kUnsupportedInput, "batch_events: events need track ids");
    }
  }
  std::vector<EventFrame> frames;
  const std::span<const EventObservation> all(stream);
  if (config.mode == BatchConfig::Mode::kFixedDuration) {
    if (!(config.duration > 0.0)) {
      fail(ErrorCode::kInvalidArgument, "batch_events: duration must be > 0");
    }
    const double t0 = stream.front().timestamp;
    const double span = stream.back().timestamp - t0;
    const auto n = static_cast<std::size_t>(std::floor(span / config.duration)) + 1;
    std::size_t begin = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double tb = t0 + static_cast<double>(i) * config.duration;
      const double te = tb + config.duration;
      std::size_t end = begin;
      while (end < stream.size() && (stream[end].timestamp < te || i + 1 == n)) ++end;
      frames.push_back(make_frame(all.subspan(begin, end - begin), tb, te, config.min_tracks));
      begin = end;
    }
  } else {
    if (config.count == 0) fail(ErrorCode::kInvalidArgument, "batch_events: count must be > 0");
    for (std::size_t begin = 0; begin < stream.size(); begin += config.count) {
      const std::size_t len = std::min(config.count, stream.size() - begin);
      const auto slice = all.subspan(begin, len);
      frames.push_back(make_frame(slice, slice.front().timestamp, slice.back().timestamp,
                                  config.min_tracks));
    }
  }
  return frames;
}

namespace {

double median_parallax_deg(const EventFrame& a, const EventFrame& b, const CameraIntrinsics& k,
                           std::vector<std::pair<const FrameObservation*, const FrameObservation*>>* common) {
  std::vector<double> angles;
  std::size_t j = 0;
  for (const auto& oa : a.observations) {
    while (j < b.observations.size() && b.observations[j].track < oa.track) ++j;
    if (j == b.observations.size()) break;
    if (b.observations[j].track != oa.track) continue;
    const Vector3d ra = k.back_project(oa.mean_pixel).normalized();
    const Vector3d rb = k.back_project(b.observations[j].mean_pixel).normalized();
    angles.push_back(std::atan2(ra.cross(rb).norm(), ra.dot(rb)) * 180.0 / std::numbers::pi);
    if (common) common->emplace_back(&oa, &b.observations[j]);
  }
  if (angles.empty()) return 0.0;
  std::nth_element(angles.begin(), angles.begin() + angles.size() / 2, angles.end());
  return angles[angles.size() / 2];
}

}  // namespace

FrameBaResult frame_based_ba(const std::vector<EventFrame>& frames,
                             const CameraIntrinsics& intrinsics,
                             TwoViewInitializer& initializer, const FrameBaConfig& config) {
  FrameBaResult result;
  std::vector<const EventFrame*> usable;
  for (const auto& f : frames) {
    if (f.usable) {
      usable.push_back(&f);
    } else {
      ++result.unusable_frames;
    }
  }
  result.usable_frames = usable.size();
  if (usable.size() < 2) {
    fail(ErrorCode::kUnderdetermined, "frame_based_ba: fewer than two usable frames (" +
                                          std::to_string(usable.size()) + ")");
  }

  // Bootstrap pair: first usable frame and the first with enough parallax.
  std::size_t partner = 0;
  double best_parallax = -1.0;
  for (std::size_t i = 1; i < usable.size(); ++i) {
    const double p = median_parallax_deg(*usable[0], *usable[i], intrinsics, nullptr);
    if (p > best_parallax) {
      best_parallax = p;
      partner = i;
    }
    if (p > config.min_parallax_deg) break;
  }
  std::vector<std::pair<const FrameObservation*, const FrameObservation*>> common;
  median_parallax_deg(*usable[0], *usable[partner], intrinsics, &common);
  TwoViewProblem problem;
  problem.t0 = usable[0]->timestamp;
  problem.t1 = usable[partner]->timestamp;
  for (const auto& [oa, ob] : common) {
    problem.pixels0.push_back(oa->mean_pixel);
    problem.pixels1.push_back(ob->mean_pixel);
  }
  const TwoViewEstimate init = initializer.estimate(problem, intrinsics);

  std::vector<SE3Pose> w2c(usable.size());
  std::vector<bool> posed(usable.size(), false);
  w2c[0] = init.pose0.inverse();
  w2c[partner] = init.pose1.inverse();
  posed[0] = posed[partner] = true;

  std::map<TrackId, Vector3d> points;
  for (const auto& [oa, ob] : common) {
    try {
      const auto tri = triangulate(w2c[0], w2c[partner], oa->mean_pixel, ob->mean_pixel, intrinsics);
      points[oa->track] = tri.point;
    } catch (const Error&) {
    }
  }

  // Per-track observations across usable frames: (frame, pixel).
  std::map<TrackId, std::vector<std::pair<std::size_t, Vector2d>>> seen;
  for (std::size_t i = 0; i < usable.size(); ++i) {
    for (const auto& o : usable[i]->observations) seen[o.track].emplace_back(i, o.mean_pixel);
  }
  const auto triangulate_track = [&](TrackId track) {
    std::vector<SE3Pose> cams;
    std::vector<Vector2d> px;
    for (const auto& [fi, z] : seen[track]) {
      if (!posed[fi]) continue;
      cams.push_back(w2c[fi]);
      px.push_back(z);
    }
    if (cams.size() < 2) return;
    try {
      const Vector3d guess = intersect_rays(cams, px, intrinsics);
      const PointFit fit = refine_point(cams, px, intrinsics, guess);
      if (std::isfinite(fit.mean_error)) points[track] = fit.point;
    } catch (const Error&) {
    }
  };

  SE3Pose previous = w2c[0];
  for (std::size_t i = 1; i < usable.size(); ++i) {
    if (!posed[i]) {
      std::vector<Vector3d> lms;
      std::vector<Vector2d> px;
      for (const auto& o : usable[i]->observations) {
        auto it = points.find(o.track);
        if (it == points.end()) continue;
        lms.push_back(it->second);
        px.push_back(o.mean_pixel);
      }
      w2c[i] = lms.size() >= 6 ? refine_pose(previous, lms, px, intrinsics, 20) : previous;
      posed[i] = true;
    }
    previous = w2c[i];
    for (const auto& o : usable[i]->observations) {
      if (!points.contains(o.track)) triangulate_track(o.track);
    }
  }

  FactorGraph graph(intrinsics, WnoaPrior::isotropic(1.0, 1.0));
  Values values;
  for (std::size_t i = 0; i < usable.size(); ++i) {
    ControlState x;
    x.timestamp = usable[i]->timestamp;
    x.pose = w2c[i].inverse();
    values.states.push_back(x);
  }
  std::map<TrackId, std::size_t> landmark_of;
  for (const auto& [track, p] : points) {
    landmark_of[track] = values.landmarks.size();
    values.landmarks.push_back(p);
    result.landmark_tracks.push_back(track);
  }
  const Matrix2d noise = Matrix2d::Identity() * config.pixel_sigma * config.pixel_sigma;
  std::map<TrackId, std::vector<std::size_t>> factors_of;
  for (std::size_t i = 0; i < usable.size(); ++i) {
    for (const auto& o : usable[i]->observations) {
      auto it = landmark_of.find(o.track);
      if (it == landmark_of.end()) continue;
      EventObservation e;
      e.pixel = o.mean_pixel;
      e.timestamp = usable[i]->timestamp;
      e.track_id = o.track;
      factors_of[o.track].push_back(
          graph.add_reprojection(e, it->second, i, std::nullopt, values, noise));
    }
  }
  const double sqrt_gauge = std::sqrt(kGaugeInformation);
  graph.add_gauge(PosePrior{0, init.pose0, sqrt_gauge * Matrix6d::Identity()});
  graph.add_gauge(ScalePrior{0, partner, init.baseline, sqrt_gauge});
  for (std::size_t i = 0; i < usable.size(); ++i) {
    graph.add_gauge(VelocityPrior{i, Twist::zero(), sqrt_gauge * Matrix6d::Identity()});
  }

  GaussNewtonReport report = gauss_newton(graph, values, config.gn);
  bool changed = false;
  for (const auto& [track, fs] : factors_of) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t f : fs) {
      const auto err = reprojection_error(graph, f, values);
      sum += err ? *err : std::numeric_limits<double>::infinity();
      ++n;
    }
    if (n > 0 && !(sum / static_cast<double>(n) <= config.outlier_avg_reproj_px)) {
      for (std::size_t f : fs) graph.set_reprojection_active(f, false);
      ++result.demoted_tracks;
      changed = true;
    }
  }
  if (changed) {
    const GaussNewtonReport second = gauss_newton(graph, values, config.gn);
    report.iterations += second.iterations;
    report.final_cost = second.final_cost;
    report.converged = second.converged;
    report.cost_trace.insert(report.cost_trace.end(), second.cost_trace.begin() + 1,
                             second.cost_trace.end());
    report.linearizations += second.linearizations;
  }
  result.report = report;

  double err_sum = 0.0;
  std::size_t err_n = 0;
  for (std::size_t f = 0; f < graph.reprojections().size(); ++f) {
    if (!graph.reprojections()[f].active) continue;
    if (const auto err = reprojection_error(graph, f, values)) {
      err_sum += *err;
      ++err_n;
    }
  }
  result.mean_reprojection_error = err_n > 0 ? err_sum / static_cast<double>(err_n) : 0.0;
  for (const auto& x : values.states) result.poses.push_back({x.timestamp, x.pose});
  for (std::size_t i = 0; i < values.landmarks.size(); ++i) {
    result.landmarks.push_back(values.landmarks[i]);
  }
  return result;
}

}  // namespace ctsfm
