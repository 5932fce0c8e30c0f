#include <gtest/gtest.h>

#include <filesystem>
#include <functional>
#include <sstream>

#include "ctsfm/errors.hpp"
#include "ctsfm/io.hpp"
#include "ctsfm/metrics.hpp"

namespace ctsfm {
namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::kIo;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

TEST(EventIo, RoundTrip) {
  SimScenario s;
  s.intrinsics = default_intrinsics();
  s.motion.duration = 0.5;
  const auto events = generate_events(s).events;
  std::stringstream ss;
  write_events(ss, events);
  const auto back = read_events(ss);
  ASSERT_EQ(back.size(), events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    EXPECT_NEAR(back[i].timestamp, events[i].timestamp, 1e-12);
    EXPECT_NEAR((back[i].pixel - events[i].pixel).norm(), 0.0, 1e-8);
    EXPECT_EQ(back[i].polarity, events[i].polarity);
    EXPECT_EQ(back[i].track_id, events[i].track_id);
  }
}

TEST(EventIo, OptionalTrackAndZeroPolarity) {
  std::istringstream in("# comment\n\n0.5 10 20 0\n0.6 11 21 1 7\n");
  const auto events = read_events(in);
  ASSERT_EQ(events.size(), 2u);
  EXPECT_EQ(events[0].polarity, -1);
  EXPECT_FALSE(events[0].track_id.has_value());
  EXPECT_EQ(events[1].track_id, 7);
}

TEST(EventIo, MalformedLineNamesLine) {
  std::istringstream in("0.5 10 20 1\n0.6 abc 21 1\n");
  const std::string msg = message_of([&] { read_events(in); });
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  std::istringstream extra("0.5 10 20 1 3 9\n");
  EXPECT_EQ(code_of([&] { read_events(extra); }), ErrorCode::kSchema);
}

TEST(TrajectoryIo, RoundTrip) {
  std::vector<TrajectorySample> traj;
  for (int i = 0; i < 20; ++i) {
    const double t = 0.05 * i;
    traj.push_back({t, exp_map(Twist(Vector3d(t, -t, 0.5 * t), Vector3d(0.1 * t, 0.3 * t, 0)))});
  }
  std::stringstream ss;
  write_trajectory(ss, traj);
  const auto back = read_trajectory(ss);
  ASSERT_EQ(back.size(), traj.size());
  EXPECT_LT(trajectory_errors(back, traj, Alignment::kNone).ate, 1e-9);
}

TEST(TrajectoryIo, RejectsNonIncreasingTime) {
  std::istringstream in("0.1 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 0 1\n");
  EXPECT_EQ(code_of([&] { read_trajectory(in); }), ErrorCode::kSchema);
}

TEST(KeyValueIo, ParsesCommentsAndRejectsDuplicates) {
  std::istringstream in("a = 1  # trailing\n# full\n b=two words \n");
  const KeyValues kv = read_key_values(in);
  EXPECT_EQ(kv.at("a"), "1");
  EXPECT_EQ(kv.at("b"), "two words");
  std::istringstream dup("a = 1\na = 2\n");
  EXPECT_EQ(code_of([&] { read_key_values(dup); }), ErrorCode::kSchema);
  std::istringstream bad("just text\n");
  EXPECT_EQ(code_of([&] { read_key_values(bad); }), ErrorCode::kSchema);
}

TEST(KeyValueIo, TypedAccessorsNameKey) {
  const KeyValues kv{{"x", "1.5"}, {"n", "-3"}, {"v", "1 2"}};
  EXPECT_DOUBLE_EQ(kv_double(kv, "x", 0.0), 1.5);
  EXPECT_DOUBLE_EQ(kv_double(kv, "missing", 4.0), 4.0);
  EXPECT_NE(message_of([&] { kv_size(kv, "n", 0); }).find("'n'"), std::string::npos);
  EXPECT_EQ(code_of([&] { kv_doubles(kv, "v", 3, {}); }), ErrorCode::kSchema);
}

TEST(ScenarioIo, RoundTrip) {
  SimScenario s;
  s.intrinsics = default_intrinsics();
  s.motion.kind = MotionKind::kDeceleratingLine;
  s.motion.decay_time = 0.7;
  s.seed = 99;
  s.outlier_track_fraction = 0.1;
  const SimScenario back = scenario_from_key_values(scenario_to_key_values(s));
  EXPECT_EQ(back.motion.kind, s.motion.kind);
  EXPECT_DOUBLE_EQ(back.motion.decay_time, 0.7);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_DOUBLE_EQ(back.outlier_track_fraction, 0.1);
  EXPECT_EQ(scenario_to_key_values(back), scenario_to_key_values(s));
}

TEST(ScenarioIo, SchemaErrors) {
  EXPECT_NE(message_of([] { scenario_from_key_values({{"bogus", "1"}}); }).find("bogus"),
            std::string::npos);
  EXPECT_NE(message_of([] { scenario_from_key_values({{"motion", "spiral"}}); }).find("motion"),
            std::string::npos);
  EXPECT_NE(message_of([] { scenario_from_key_values({{"duration", "-2"}}); }).find("duration"),
            std::string::npos);
  EXPECT_EQ(code_of([] { scenario_from_key_values({{"twist", "1 2"}}); }), ErrorCode::kSchema);
}

TEST(FileIo, MissingFileIsIoError) {
  EXPECT_EQ(code_of([] { load_events("/nonexistent/events.txt"); }), ErrorCode::kIo);
}

TEST(FileIo, SaveAndLoad) {
  const auto dir = std::filesystem::temp_directory_path() / "ctsfm_test_io";
  std::filesystem::create_directories(dir);
  std::vector<TrajectorySample> traj{{0.0, SE3Pose()}, {0.1, SE3Pose()}};
  save_trajectory(dir / "t.txt", traj);
  EXPECT_EQ(load_trajectory(dir / "t.txt").size(), 2u);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace ctsfm
