#include "ctsfm/io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ctsfm/errors.hpp"

namespace ctsfm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool skip_line(const std::string& line) {
  const std::string t = trim(line);
  return t.empty() || t.front() == '#';
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

bool parse_double(const std::string& s, double& v) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  return ec == std::errc() && ptr == end;
}

bool parse_int(const std::string& s, long long& v) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  return ec == std::errc() && ptr == end;
}

[[noreturn]] void line_error(const char* what, std::size_t line, const std::string& detail) {
  fail(ErrorCode::kSchema, std::string(what) + " line " + std::to_string(line) + ": " + detail);
}

}  // namespace

void write_events(std::ostream& out, const std::vector<EventObservation>& events) {
  char buf[128];
  for (const auto& e : events) {
    int n = std::snprintf(buf, sizeof buf, "%.12f %.9f %.9f %d", e.timestamp, e.pixel.x(),
                          e.pixel.y(), e.polarity);
    out.write(buf, n);
    if (e.track_id) {
      n = std::snprintf(buf, sizeof buf, " %lld", static_cast<long long>(*e.track_id));
      out.write(buf, n);
    }
    out.put('\n');
  }
}

std::vector<EventObservation> read_events(std::istream& in) {
  std::vector<EventObservation> events;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (skip_line(line)) continue;
    const auto tok = split(line);
    if (tok.size() != 4 && tok.size() != 5) {
      line_error("events", number, "expected 4 or 5 columns, got " + std::to_string(tok.size()));
    }
    EventObservation e;
    long long polarity = 0;
    if (!parse_double(tok[0], e.timestamp) || !parse_double(tok[1], e.pixel.x()) ||
        !parse_double(tok[2], e.pixel.y()) || !parse_int(tok[3], polarity)) {
      line_error("events", number, "malformed number");
    }
    if (polarity != 0 && polarity != 1 && polarity != -1) {
      line_error("events", number, "polarity must be -1, 0 or 1");
    }
    e.polarity = polarity == 1 ? 1 : -1;
    if (tok.size() == 5) {
      long long track = 0;
      if (!parse_int(tok[4], track)) line_error("events", number, "malformed track id");
      e.track_id = track;
    }
    events.push_back(e);
  }
  return events;
}

void write_trajectory(std::ostream& out, const std::vector<TrajectorySample>& samples) {
  char buf[256];
  for (const auto& s : samples) {
    const Eigen::Quaterniond q = s.pose.quaternion();
    const Vector3d& p = s.pose.translation();
    const int n = std::snprintf(buf, sizeof buf, "%.9f %.12g %.12g %.12g %.12g %.12g %.12g %.12g\n",
                                s.timestamp, p.x(), p.y(), p.z(), q.x(), q.y(), q.z(), q.w());
    out.write(buf, n);
  }
}

std::vector<TrajectorySample> read_trajectory(std::istream& in) {
  std::vector<TrajectorySample> samples;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (skip_line(line)) continue;
    const auto tok = split(line);
    if (tok.size() != 8) {
      line_error("trajectory", number, "expected 8 columns, got " + std::to_string(tok.size()));
    }
    double v[8];
    for (int i = 0; i < 8; ++i) {
      if (!parse_double(tok[i], v[i])) line_error("trajectory", number, "malformed number");
    }
    const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (!(q.norm() > 0.0)) line_error("trajectory", number, "zero quaternion");
    if (!samples.empty() && !(v[0] > samples.back().timestamp)) {
      line_error("trajectory", number, "timestamps must increase");
    }
    samples.push_back({v[0], SE3Pose::from_quaternion(q.normalized(), Vector3d(v[1], v[2], v[3]))});
  }
  return samples;
}

KeyValues read_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    line = line.substr(0, line.find('#'));
    if (skip_line(line)) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) line_error("config", number, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) line_error("config", number, "empty key");
    if (!kv.emplace(key, value).second) line_error("config", number, "duplicate key '" + key + "'");
  }
  return kv;
}

void write_key_values(std::ostream& out, const KeyValues& kv) {
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

double kv_double(const KeyValues& kv, const std::string& key, double fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  double v = 0.0;
  if (!parse_double(it->second, v)) {
    fail(ErrorCode::kSchema, "config field '" + key + "': expected a number, got '" + it->second + "'");
  }
  return v;
}

std::size_t kv_size(const KeyValues& kv, const std::string& key, std::size_t fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  long long v = 0;
  if (!parse_int(it->second, v) || v < 0) {
    fail(ErrorCode::kSchema,
         "config field '" + key + "': expected a non-negative integer, got '" + it->second + "'");
  }
  return static_cast<std::size_t>(v);
}

std::vector<double> kv_doubles(const KeyValues& kv, const std::string& key, std::size_t count,
                               const std::vector<double>& fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const auto tok = split(it->second);
  std::vector<double> out(tok.size());
  bool ok = tok.size() == count;
  for (std::size_t i = 0; ok && i < tok.size(); ++i) ok = parse_double(tok[i], out[i]);
  if (!ok) {
    fail(ErrorCode::kSchema, "config field '" + key + "': expected " + std::to_string(count) +
                                 " numbers, got '" + it->second + "'");
  }
  return out;
}

namespace {

const char* const kScenarioKeys[] = {
    "seed", "motion", "duration", "twist", "amplitude", "period", "look_at",
    "initial_speed", "decay_time", "direction", "landmark_count", "landmark_depth_min",
    "landmark_depth_max", "pixel_noise_sigma", "event_threshold_px", "outlier_track_fraction",
    "ground_truth_rate", "sample_step", "fx", "fy", "cx", "cy", "width", "height"};

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_vector(std::initializer_list<double> v) {
  std::string s;
  for (double x : v) {
    if (!s.empty()) s += ' ';
    s += format_double(x);
  }
  return s;
}

}  // namespace

SimScenario scenario_from_key_values(const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    if (std::find(std::begin(kScenarioKeys), std::end(kScenarioKeys), key) == std::end(kScenarioKeys)) {
      fail(ErrorCode::kSchema, "config field '" + key + "': unknown key");
    }
  }
  SimScenario s;
  s.intrinsics = default_intrinsics();
  s.seed = kv_size(kv, "seed", s.seed);
  if (const auto it = kv.find("motion"); it != kv.end()) {
    const auto kind = parse_motion_kind(it->second);
    if (!kind) fail(ErrorCode::kSchema, "config field 'motion': unknown motion '" + it->second + "'");
    s.motion.kind = *kind;
  }
  auto& m = s.motion;
  m.duration = kv_double(kv, "duration", m.duration);
  const auto tw = kv_doubles(kv, "twist", 6, {m.twist.vector().begin(), m.twist.vector().end()});
  m.twist = Twist(Vector6d(tw.data()));
  m.amplitude = kv_double(kv, "amplitude", m.amplitude);
  m.period = kv_double(kv, "period", m.period);
  const auto la = kv_doubles(kv, "look_at", 3, {m.look_at.x(), m.look_at.y(), m.look_at.z()});
  m.look_at = Vector3d(la[0], la[1], la[2]);
  m.initial_speed = kv_double(kv, "initial_speed", m.initial_speed);
  m.decay_time = kv_double(kv, "decay_time", m.decay_time);
  const auto dir = kv_doubles(kv, "direction", 3, {m.direction.x(), m.direction.y(), m.direction.z()});
  m.direction = Vector3d(dir[0], dir[1], dir[2]);
  s.landmark_count = kv_size(kv, "landmark_count", s.landmark_count);
  s.landmark_depth_min = kv_double(kv, "landmark_depth_min", s.landmark_depth_min);
  s.landmark_depth_max = kv_double(kv, "landmark_depth_max", s.landmark_depth_max);
  s.pixel_noise_sigma = kv_double(kv, "pixel_noise_sigma", s.pixel_noise_sigma);
  s.event_threshold_px = kv_double(kv, "event_threshold_px", s.event_threshold_px);
  s.outlier_track_fraction = kv_double(kv, "outlier_track_fraction", s.outlier_track_fraction);
  s.ground_truth_rate = kv_double(kv, "ground_truth_rate", s.ground_truth_rate);
  s.sample_step = kv_double(kv, "sample_step", s.sample_step);
  auto& k = s.intrinsics;
  k.fx = kv_double(kv, "fx", k.fx);
  k.fy = kv_double(kv, "fy", k.fy);
  k.cx = kv_double(kv, "cx", k.cx);
  k.cy = kv_double(kv, "cy", k.cy);
  k.width = static_cast<int>(kv_size(kv, "width", static_cast<std::size_t>(k.width)));
  k.height = static_cast<int>(kv_size(kv, "height", static_cast<std::size_t>(k.height)));
  s.validate();
  return s;
}

KeyValues scenario_to_key_values(const SimScenario& s) {
  const auto& m = s.motion;
  const Vector6d& tw = m.twist.vector();
  return {
      {"seed", std::to_string(s.seed)},
      {"motion", std::string(motion_kind_name(m.kind))},
      {"duration", format_double(m.duration)},
      {"twist", format_vector({tw(0), tw(1), tw(2), tw(3), tw(4), tw(5)})},
      {"amplitude", format_double(m.amplitude)},
      {"period", format_double(m.period)},
      {"look_at", format_vector({m.look_at.x(), m.look_at.y(), m.look_at.z()})},
      {"initial_speed", format_double(m.initial_speed)},
      {"decay_time", format_double(m.decay_time)},
      {"direction", format_vector({m.direction.x(), m.direction.y(), m.direction.z()})},
      {"landmark_count", std::to_string(s.landmark_count)},
      {"landmark_depth_min", format_double(s.landmark_depth_min)},
      {"landmark_depth_max", format_double(s.landmark_depth_max)},
      {"pixel_noise_sigma", format_double(s.pixel_noise_sigma)},
      {"event_threshold_px", format_double(s.event_threshold_px)},
      {"outlier_track_fraction", format_double(s.outlier_track_fraction)},
      {"ground_truth_rate", format_double(s.ground_truth_rate)},
      {"sample_step", format_double(s.sample_step)},
      {"fx", format_double(s.intrinsics.fx)},
      {"fy", format_double(s.intrinsics.fy)},
      {"cx", format_double(s.intrinsics.cx)},
      {"cy", format_double(s.intrinsics.cy)},
      {"width", std::to_string(s.intrinsics.width)},
      {"height", std::to_string(s.intrinsics.height)},
  };
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) fail(ErrorCode::kIo, "write to '" + path.string() + "' failed");
}

std::vector<EventObservation> load_events(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  return read_events(in);
}

void save_events(const std::filesystem::path& path, const std::vector<EventObservation>& events) {
  std::ostringstream out;
  write_events(out, events);
  write_text_file(path, out.str());
}

std::vector<TrajectorySample> load_trajectory(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  return read_trajectory(in);
}

void save_trajectory(const std::filesystem::path& path,
                     const std::vector<TrajectorySample>& samples) {
  std::ostringstream out;
  write_trajectory(out, samples);
  write_text_file(path, out.str());
}

KeyValues load_key_values(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  return read_key_values(in);
}

}  // namespace ctsfm
