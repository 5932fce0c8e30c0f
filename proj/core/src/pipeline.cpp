#include "ctsfm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "ctsfm/errors.hpp"

namespace ctsfm {

namespace {

const char* const kRunKeys[] = {
    "scenario", "events", "ground_truth", "seed", "output_dir", "initializer",
    "fx", "fy", "cx", "cy", "width", "height",
    "state_insertion_period", "outlier_avg_reproj_px", "min_active_tracks", "solve_trigger",
    "solve_every_n", "window_states", "pixel_sigma", "qc_translation", "qc_rotation",
    "relinearize_threshold", "bootstrap_min_tracks", "bootstrap_min_parallax_deg",
    "max_iterations", "batch_mode", "batch_duration", "batch_count", "batch_min_tracks"};

std::filesystem::path resolve_path(const std::string& value, const std::filesystem::path& base) {
  const std::filesystem::path p(value);
  return p.is_absolute() || base.empty() ? p : base / p;
}

std::string format(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_number(const std::string& key, const std::string& value) {
  KeyValues kv{{key, value}};
  return kv_double(kv, key, 0.0);
}

double mean_active_reprojection_error(const FactorGraph& graph, const Values& values) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t f = 0; f < graph.reprojections().size(); ++f) {
    if (!graph.reprojections()[f].active) continue;
    if (const auto e = reprojection_error(graph, f, values)) {
      sum += *e;
      ++n;
    }
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

void fill_ground_truth_fields(RunReport& report, const RunInput& input,
                              const std::vector<TrajectorySample>& estimate) {
  if (!input.ground_truth || input.ground_truth->empty()) return;
  const auto& gt = *input.ground_truth;
  report.gt_begin = gt.front().timestamp;
  report.gt_end = gt.back().timestamp;
  report.gt_samples = gt.size();
  const TrajectoryErrors errors = trajectory_errors(estimate, gt);
  report.has_metrics = true;
  report.ate = errors.ate;
  report.rpe = errors.rpe;
  std::vector<TrajectorySample> overlap;
  for (const auto& s : gt) {
    if (s.timestamp >= estimate.front().timestamp && s.timestamp <= estimate.back().timestamp) {
      overlap.push_back(s);
    }
  }
  report.path_length = path_length(overlap);
}

}  // namespace

void RunConfig::validate() const {
  if (scenario.has_value() == events.has_value()) {
    fail(ErrorCode::kSchema, "run config: exactly one of 'scenario' and 'events' must be set");
  }
  if (scenario && ground_truth) {
    fail(ErrorCode::kSchema, "run config field 'ground_truth': only valid with 'events' input");
  }
  engine.validate();
}

RunConfig run_config_from_key_values(const KeyValues& kv, const std::filesystem::path& base_dir) {
  for (const auto& [key, value] : kv) {
    if (std::find(std::begin(kRunKeys), std::end(kRunKeys), key) == std::end(kRunKeys)) {
      fail(ErrorCode::kSchema, "config field '" + key + "': unknown key");
    }
  }
  RunConfig c;
  if (const auto it = kv.find("scenario"); it != kv.end()) c.scenario = resolve_path(it->second, base_dir);
  if (const auto it = kv.find("events"); it != kv.end()) c.events = resolve_path(it->second, base_dir);
  if (const auto it = kv.find("ground_truth"); it != kv.end()) {
    c.ground_truth = resolve_path(it->second, base_dir);
  }
  if (const auto it = kv.find("output_dir"); it != kv.end()) c.output_dir = resolve_path(it->second, base_dir);
  if (kv.contains("seed")) c.seed = kv_size(kv, "seed", 0);
  if (const auto it = kv.find("initializer"); it != kv.end()) {
    if (it->second == "auto") {
      c.initializer = InitializerKind::kAuto;
    } else if (it->second == "ground_truth") {
      c.initializer = InitializerKind::kGroundTruth;
    } else if (it->second == "random_depth") {
      c.initializer = InitializerKind::kRandomDepth;
    } else {
      fail(ErrorCode::kSchema, "config field 'initializer': unknown initializer '" + it->second + "'");
    }
  }
  auto& k = c.intrinsics;
  k.fx = kv_double(kv, "fx", k.fx);
  k.fy = kv_double(kv, "fy", k.fy);
  k.cx = kv_double(kv, "cx", k.cx);
  k.cy = kv_double(kv, "cy", k.cy);
  k.width = static_cast<int>(kv_size(kv, "width", static_cast<std::size_t>(k.width)));
  k.height = static_cast<int>(kv_size(kv, "height", static_cast<std::size_t>(k.height)));

  auto& e = c.engine;
  e.state_insertion_period = kv_double(kv, "state_insertion_period", e.state_insertion_period);
  e.outlier_avg_reproj_px = kv_double(kv, "outlier_avg_reproj_px", e.outlier_avg_reproj_px);
  e.min_active_tracks = kv_size(kv, "min_active_tracks", e.min_active_tracks);
  if (const auto it = kv.find("solve_trigger"); it != kv.end()) {
    const auto t = parse_solve_trigger(it->second);
    if (!t) fail(ErrorCode::kSchema, "config field 'solve_trigger': unknown trigger '" + it->second + "'");
    e.solve_trigger = *t;
  }
  e.solve_every_n = kv_size(kv, "solve_every_n", e.solve_every_n);
  e.window_states = kv_size(kv, "window_states", e.window_states);
  e.pixel_sigma = kv_double(kv, "pixel_sigma", e.pixel_sigma);
  e.qc_translation = kv_double(kv, "qc_translation", e.qc_translation);
  e.qc_rotation = kv_double(kv, "qc_rotation", e.qc_rotation);
  e.relinearize_threshold = kv_double(kv, "relinearize_threshold", e.relinearize_threshold);
  e.bootstrap_min_tracks = kv_size(kv, "bootstrap_min_tracks", e.bootstrap_min_tracks);
  e.bootstrap_min_parallax_deg =
      kv_double(kv, "bootstrap_min_parallax_deg", e.bootstrap_min_parallax_deg);
  e.gn.max_iterations = static_cast<int>(kv_size(kv, "max_iterations",
                                                 static_cast<std::size_t>(e.gn.max_iterations)));
  c.baseline.pixel_sigma = e.pixel_sigma;
  c.baseline.outlier_avg_reproj_px = e.outlier_avg_reproj_px;
  c.baseline.min_parallax_deg = e.bootstrap_min_parallax_deg;
  c.baseline.gn = e.gn;

  if (const auto it = kv.find("batch_mode"); it != kv.end()) {
    if (it->second == "fixed_duration") {
      c.batch.mode = BatchConfig::Mode::kFixedDuration;
    } else if (it->second == "fixed_count") {
      c.batch.mode = BatchConfig::Mode::kFixedCount;
    } else {
      fail(ErrorCode::kSchema, "config field 'batch_mode': unknown mode '" + it->second + "'");
    }
  }
  c.batch.duration = kv_double(kv, "batch_duration", c.batch.duration);
  c.batch.count = kv_size(kv, "batch_count", c.batch.count);
  c.batch.min_tracks = kv_size(kv, "batch_min_tracks", c.batch.min_tracks);
  if (!(c.batch.duration > 0.0)) fail(ErrorCode::kSchema, "config field 'batch_duration': must be > 0");
  if (c.batch.count == 0) fail(ErrorCode::kSchema, "config field 'batch_count': must be > 0");
  c.validate();
  return c;
}

RunInput load_run_input(const RunConfig& config) {
  config.validate();
  RunInput input;
  if (config.scenario) {
    SimScenario scenario = scenario_from_key_values(load_key_values(*config.scenario));
    if (config.seed) scenario.seed = *config.seed;
    SimulationResult sim = generate_events(scenario);
    input.events = std::move(sim.events);
    input.ground_truth = std::move(sim.ground_truth);
    input.intrinsics = scenario.intrinsics;
  } else {
    input.events = load_events(*config.events);
    if (config.ground_truth) input.ground_truth = load_trajectory(*config.ground_truth);
    input.intrinsics = config.intrinsics;
  }
  if (input.events.empty()) fail(ErrorCode::kEmptyStream, "input stream has no events");
  for (const auto& e : input.events) {
    if (!e.track_id) {
      fail(ErrorCode::kUnsupportedInput,
           "events without track ids: feature tracking on raw events is not supported");
    }
  }
  return input;
}

std::unique_ptr<TwoViewInitializer> make_initializer(InitializerKind kind, const RunInput& input) {
  const bool has_gt = input.ground_truth && input.ground_truth->size() >= 2;
  if (kind == InitializerKind::kGroundTruth && !has_gt) {
    fail(ErrorCode::kInvalidArgument, "ground-truth initializer requires ground truth");
  }
  if (kind == InitializerKind::kRandomDepth || !has_gt) {
    return std::make_unique<RandomDepthInitializer>();
  }
  auto gt = std::make_shared<std::vector<TrajectorySample>>(*input.ground_truth);
  return std::make_unique<GroundTruthInitializer>([gt](double t) {
    const double clamped = std::clamp(t, gt->front().timestamp, gt->back().timestamp);
    return interpolate_samples(*gt, clamped);
  });
}

void write_report(std::ostream& out, const RunReport& r) {
  out << "mode = " << r.mode << '\n';
  out << "initializer = " << r.initializer << '\n';
  out << "has_metrics = " << (r.has_metrics ? 1 : 0) << '\n';
  out << "rpe = " << format(r.rpe) << '\n';
  out << "ate = " << format(r.ate) << '\n';
  out << "path_length = " << format(r.path_length) << '\n';
  out << "mean_reprojection_error = " << format(r.mean_reprojection_error) << '\n';
  out << "knot_count = " << r.knot_count << '\n';
  out << "event_count = " << r.event_count << '\n';
  out << "solve_count = " << r.solve_count << '\n';
  out << "iterations = " << r.iterations << '\n';
  out << "demoted_tracks = " << r.demoted_tracks << '\n';
  out << "usable_frames = " << r.usable_frames << '\n';
  out << "unusable_frames = " << r.unusable_frames << '\n';
  out << "low_track_solves = " << r.low_track_solves << '\n';
  out << "gt_begin = " << format(r.gt_begin) << '\n';
  out << "gt_end = " << format(r.gt_end) << '\n';
  out << "gt_samples = " << r.gt_samples << '\n';
  out << "wall_time = " << format(r.wall_time) << '\n';
  out << "cost_trace =";
  for (std::size_t s = 0; s < r.cost_trace.size(); ++s) {
    if (s > 0) out << " ;";
    for (double c : r.cost_trace[s]) out << ' ' << format(c);
  }
  out << '\n';
}

RunReport read_report(std::istream& in) {
  const KeyValues kv = read_key_values(in);
  RunReport r;
  const auto get = [&](const std::string& key) -> const std::string* {
    const auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (const auto* v = get("mode")) r.mode = *v;
  if (const auto* v = get("initializer")) r.initializer = *v;
  r.has_metrics = kv_size(kv, "has_metrics", 0) != 0;
  r.rpe = kv_double(kv, "rpe", 0.0);
  r.ate = kv_double(kv, "ate", 0.0);
  r.path_length = kv_double(kv, "path_length", 0.0);
  r.mean_reprojection_error = kv_double(kv, "mean_reprojection_error", 0.0);
  r.knot_count = kv_size(kv, "knot_count", 0);
  r.event_count = kv_size(kv, "event_count", 0);
  r.solve_count = kv_size(kv, "solve_count", 0);
  r.iterations = kv_size(kv, "iterations", 0);
  r.demoted_tracks = kv_size(kv, "demoted_tracks", 0);
  r.usable_frames = kv_size(kv, "usable_frames", 0);
  r.unusable_frames = kv_size(kv, "unusable_frames", 0);
  r.low_track_solves = kv_size(kv, "low_track_solves", 0);
  r.gt_begin = kv_double(kv, "gt_begin", 0.0);
  r.gt_end = kv_double(kv, "gt_end", 0.0);
  r.gt_samples = kv_size(kv, "gt_samples", 0);
  r.wall_time = kv_double(kv, "wall_time", 0.0);
  if (const auto* v = get("cost_trace")) {
    std::istringstream ss(*v);
    std::string tok;
    r.cost_trace.emplace_back();
    while (ss >> tok) {
      if (tok == ";") {
        r.cost_trace.emplace_back();
      } else {
        r.cost_trace.back().push_back(parse_number("cost_trace", tok));
      }
    }
    if (r.cost_trace.size() == 1 && r.cost_trace.front().empty()) r.cost_trace.clear();
  }
  return r;
}

RunResult run_async(const RunInput& input, const EngineConfig& config,
                    TwoViewInitializer& initializer) {
  const auto start = std::chrono::steady_clock::now();
  IncrementalEngine engine(input.intrinsics, config, initializer);
  for (const auto& e : input.events) engine.ingest(e);
  engine.finish();
  const TrajectoryGP gp = engine.trajectory();

  RunResult result;
  std::vector<TrajectorySample> at_gt;
  std::vector<double> times;
  for (const auto& k : gp.knots()) times.push_back(k.timestamp);
  if (input.ground_truth) {
    for (const auto& s : *input.ground_truth) {
      if (s.timestamp >= gp.front().timestamp && s.timestamp <= gp.back().timestamp) {
        at_gt.push_back({s.timestamp, gp.interpolate(s.timestamp).pose});
        times.push_back(s.timestamp);
      }
    }
  }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  for (double t : times) result.trajectory.push_back({t, gp.interpolate(t).pose});

  RunReport& r = result.report;
  r.mode = "async";
  r.initializer = initializer.name();
  r.knot_count = gp.size();
  r.event_count = input.events.size();
  r.solve_count = engine.stats().solves;
  r.iterations = engine.stats().iterations;
  r.demoted_tracks = engine.stats().demoted_tracks;
  r.low_track_solves = engine.stats().low_track_solves;
  r.mean_reprojection_error = mean_active_reprojection_error(engine.graph(), engine.values());
  // Split the concatenated trace at each solve's initial cost.
  const auto& trace = engine.stats().cost_trace;
  std::vector<double> current;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (i > 0 && trace[i] > trace[i - 1]) {
      r.cost_trace.push_back(std::move(current));
      current.clear();
    }
    current.push_back(trace[i]);
  }
  if (!current.empty()) r.cost_trace.push_back(std::move(current));
  if (!at_gt.empty()) fill_ground_truth_fields(r, input, at_gt);
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

RunResult run_baseline(const RunInput& input, const BatchConfig& batch,
                       const FrameBaConfig& config, TwoViewInitializer& initializer) {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<EventFrame> frames = batch_events(input.events, batch);
  const FrameBaResult ba = frame_based_ba(frames, input.intrinsics, initializer, config);
  RunResult result;
  result.trajectory = ba.poses;
  RunReport& r = result.report;
  r.mode = "baseline";
  r.initializer = initializer.name();
  r.knot_count = ba.poses.size();
  r.event_count = input.events.size();
  r.solve_count = ba.demoted_tracks > 0 ? 2 : 1;
  r.iterations = static_cast<std::size_t>(ba.report.iterations);
  r.demoted_tracks = ba.demoted_tracks;
  r.usable_frames = ba.usable_frames;
  r.unusable_frames = ba.unusable_frames;
  r.mean_reprojection_error = ba.mean_reprojection_error;
  std::vector<double> current;
  for (std::size_t i = 0; i < ba.report.cost_trace.size(); ++i) {
    if (i > 0 && ba.report.cost_trace[i] > ba.report.cost_trace[i - 1]) {
      r.cost_trace.push_back(std::move(current));
      current.clear();
    }
    current.push_back(ba.report.cost_trace[i]);
  }
  if (!current.empty()) r.cost_trace.push_back(std::move(current));
  fill_ground_truth_fields(r, input, ba.poses);
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::string comparison_table(const RunReport& a, const RunReport& b) {
  if (a.gt_samples != b.gt_samples || std::abs(a.gt_begin - b.gt_begin) > 1e-9 ||
      std::abs(a.gt_end - b.gt_end) > 1e-9) {
    fail(ErrorCode::kNoOverlap, "compare: reports were evaluated on different ground-truth spans");
  }
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-26s %18s %18s %18s\n", "metric", "a", "b", "b - a");
  out << buf;
  std::snprintf(buf, sizeof buf, "%-26s %18s %18s %18s\n", "mode", a.mode.c_str(), b.mode.c_str(), "");
  out << buf;
  const auto row = [&](const char* name, double va, double vb) {
    std::snprintf(buf, sizeof buf, "%-26s %18.9g %18.9g %18.9g\n", name, va, vb, vb - va);
    out << buf;
  };
  row("rpe_m", a.rpe, b.rpe);
  row("ate_m", a.ate, b.ate);
  row("mean_reprojection_px", a.mean_reprojection_error, b.mean_reprojection_error);
  row("knot_count", static_cast<double>(a.knot_count), static_cast<double>(b.knot_count));
  row("event_count", static_cast<double>(a.event_count), static_cast<double>(b.event_count));
  row("solve_count", static_cast<double>(a.solve_count), static_cast<double>(b.solve_count));
  row("demoted_tracks", static_cast<double>(a.demoted_tracks), static_cast<double>(b.demoted_tracks));
  row("unusable_frames", static_cast<double>(a.unusable_frames), static_cast<double>(b.unusable_frames));
  row("wall_time_s", a.wall_time, b.wall_time);
  return out.str();
}

void write_comparison_csv(std::ostream& out, const std::vector<TrajectorySample>& estimate,
                          const std::vector<TrajectorySample>& ground_truth) {
  const TrajectoryErrors errors = trajectory_errors(estimate, ground_truth);
  out << "t,x_est,y_est,z_est,x_gt,y_gt,z_gt\n";
  char buf[256];
  for (const auto& g : ground_truth) {
    if (g.timestamp < estimate.front().timestamp || g.timestamp > estimate.back().timestamp) continue;
    const Vector3d e = (errors.alignment * interpolate_samples(estimate, g.timestamp)).translation();
    const Vector3d& p = g.pose.translation();
    const int n = std::snprintf(buf, sizeof buf, "%.9f,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                                g.timestamp, e.x(), e.y(), e.z(), p.x(), p.y(), p.z());
    out.write(buf, n);
  }
}

}  // namespace ctsfm
