#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <sstream>

#include "ctsfm/errors.hpp"
#include "ctsfm/event_sim.hpp"
#include "ctsfm/incremental_engine.hpp"
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

struct Fixture {
  SimScenario scenario;
  SimulationResult sim;
  GroundTruthMotion motion;
  GroundTruthInitializer initializer;

  explicit Fixture(double duration = 1.5, double noise = 0.0, double outliers = 0.0,
                   std::uint64_t seed = 4)
      : scenario(make_scenario(duration, noise, outliers, seed)),
        sim(generate_events(scenario)),
        motion(scenario.motion),
        initializer([this](double t) { return motion.pose(t); }) {}

  static SimScenario make_scenario(double duration, double noise, double outliers,
                                   std::uint64_t seed) {
    SimScenario s;
    s.motion.kind = MotionKind::kConstantTwist;
    s.motion.duration = duration;
    s.intrinsics = default_intrinsics();
    s.pixel_noise_sigma = noise;
    s.outlier_track_fraction = outliers;
    s.seed = seed;
    return s;
  }

  double ate(const IncrementalEngine& engine) const {
    const TrajectoryGP gp = engine.trajectory();
    std::vector<TrajectorySample> est;
    for (const auto& s : sim.ground_truth) {
      if (s.timestamp >= gp.front().timestamp && s.timestamp <= gp.back().timestamp) {
        est.push_back({s.timestamp, gp.interpolate(s.timestamp).pose});
      }
    }
    return trajectory_errors(est, sim.ground_truth).ate;
  }
};

void run_all(IncrementalEngine& engine, const std::vector<EventObservation>& events) {
  for (const auto& e : events) engine.ingest(e);
  engine.finish();
}

TEST(EngineConfig, Validation) {
  EngineConfig c;
  c.state_insertion_period = 0.0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::kInvalidArgument);
  c = EngineConfig{};
  c.pixel_sigma = -1.0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::kInvalidArgument);
  EXPECT_NO_THROW(EngineConfig{}.validate());
}

TEST(EngineConfig, SolveTriggerNames) {
  for (SolveTrigger t : {SolveTrigger::kPerEvent, SolveTrigger::kPerState, SolveTrigger::kPerNEvents}) {
    EXPECT_EQ(parse_solve_trigger(solve_trigger_name(t)), t);
  }
  EXPECT_FALSE(parse_solve_trigger("sometimes").has_value());
}

TEST(IncrementalEngine, RejectsUntrackedEvent) {
  Fixture f;
  IncrementalEngine engine(f.scenario.intrinsics, EngineConfig{}, f.initializer);
  EventObservation e = f.sim.events.front();
  e.track_id.reset();
  EXPECT_EQ(code_of([&] { engine.ingest(e); }), ErrorCode::kUnsupportedInput);
}

TEST(IncrementalEngine, RejectsTimeGoingBackwards) {
  Fixture f;
  IncrementalEngine engine(f.scenario.intrinsics, EngineConfig{}, f.initializer);
  engine.ingest(f.sim.events[10]);
  EXPECT_EQ(code_of([&] { engine.ingest(f.sim.events[0]); }), ErrorCode::kMonotonicity);
}

TEST(IncrementalEngine, InsertsKnotsAtPeriod) {
  Fixture f;
  EngineConfig config;
  IncrementalEngine engine(f.scenario.intrinsics, config, f.initializer);
  run_all(engine, f.sim.events);
  ASSERT_TRUE(engine.bootstrapped());
  const auto& states = engine.values().states;
  ASSERT_GT(states.size(), 20u);
  // The first gap is the bootstrap baseline; the last knot closes the stream.
  for (std::size_t i = 2; i + 1 < states.size(); ++i) {
    const double gap = states[i].timestamp - states[i - 1].timestamp;
    EXPECT_GT(gap, config.state_insertion_period);
    EXPECT_LT(gap, config.state_insertion_period + 0.01);
  }
  EXPECT_EQ(engine.graph().gp_priors().size(), states.size() - 1);
  EXPECT_EQ(engine.stats().events, f.sim.events.size());
}

TEST(IncrementalEngine, NoiseFreeConstantTwistIsExact) {
  Fixture f(5.0);
  IncrementalEngine engine(f.scenario.intrinsics, EngineConfig{}, f.initializer);
  run_all(engine, f.sim.events);
  EXPECT_LT(f.ate(engine), 1e-6);
  EXPECT_EQ(engine.stats().demoted_tracks, 0u);
}

TEST(IncrementalEngine, ResolveWithoutChangesDoesNothing) {
  Fixture f;
  IncrementalEngine engine(f.scenario.intrinsics, EngineConfig{}, f.initializer);
  run_all(engine, f.sim.events);
  const Values before = engine.values();
  const GaussNewtonReport r = engine.resolve();
  EXPECT_EQ(r.iterations, 0);
  EXPECT_EQ(engine.values().states[3].pose.translation(), before.states[3].pose.translation());
}

TEST(IncrementalEngine, OutlierRemovalDemotesAndIsIdempotent) {
  Fixture f(1.5, 0.5, 0.1);
  IncrementalEngine engine(f.scenario.intrinsics, EngineConfig{}, f.initializer);
  run_all(engine, f.sim.events);
  std::size_t caught = 0;
  for (TrackId id : f.sim.outlier_tracks) {
    const auto it = engine.tracks().find(id);
    if (it != engine.tracks().end() && it->second.status == TrackStatus::kOutlier) ++caught;
  }
  EXPECT_EQ(caught, f.sim.outlier_tracks.size());
  EXPECT_TRUE(engine.remove_outlier_tracks().empty());
  for (const auto& [id, track] : engine.tracks()) {
    if (track.status != TrackStatus::kOutlier) continue;
    for (std::size_t i = 0; i < track.attached; ++i) {
      EXPECT_FALSE(engine.graph().reprojections()[track.factors[i]].active);
    }
  }
}

TEST(IncrementalEngine, PerEventModeRebracketsExtrapolatedFactors) {
  Fixture f(0.6);
  EngineConfig config;
  config.solve_trigger = SolveTrigger::kPerNEvents;
  config.solve_every_n = 200;
  IncrementalEngine engine(f.scenario.intrinsics, config, f.initializer);
  run_all(engine, f.sim.events);
  EXPECT_GT(engine.stats().solves, 5u);
  EXPECT_LT(f.ate(engine), 1e-5);

  config.solve_trigger = SolveTrigger::kPerEvent;
  IncrementalEngine per_event(f.scenario.intrinsics, config, f.initializer);
  for (std::size_t i = 0; i < 1600 && i < f.sim.events.size(); ++i) per_event.ingest(f.sim.events[i]);
  per_event.finish();
  for (const auto& factor : per_event.graph().reprojections()) {
    if (factor.active) EXPECT_TRUE(factor.right_state.has_value());
  }
}

TEST(IncrementalEngine, WarmMatchesBatchOnFinalGraph) {
  Fixture f(1.0, 0.5);
  IncrementalEngine engine(f.scenario.intrinsics, EngineConfig{}, f.initializer);
  run_all(engine, f.sim.events);
  Values batch = engine.initial_values();
  const GaussNewtonReport r = gauss_newton(engine.graph(), batch, engine.config().gn);
  const double warm_cost = total_cost(engine.graph(), engine.values());
  EXPECT_LT(std::abs(warm_cost - r.final_cost) / r.final_cost, 1e-6);
}

TEST(IncrementalEngine, CheckpointReplayContinuesIdentically) {
  Fixture f(1.0, 0.5);
  const std::size_t half = f.sim.events.size() / 2;
  IncrementalEngine a(f.scenario.intrinsics, EngineConfig{}, f.initializer);
  for (std::size_t i = 0; i < half; ++i) a.ingest(f.sim.events[i]);
  std::stringstream checkpoint;
  a.save_checkpoint(checkpoint);
  IncrementalEngine b = IncrementalEngine::load_checkpoint(checkpoint, f.initializer);
  EXPECT_EQ(b.values().states.size(), a.values().states.size());
  for (std::size_t i = half; i < f.sim.events.size(); ++i) {
    a.ingest(f.sim.events[i]);
    b.ingest(f.sim.events[i]);
  }
  a.finish();
  b.finish();
  ASSERT_EQ(a.values().states.size(), b.values().states.size());
  for (std::size_t i = 0; i < a.values().states.size(); ++i) {
    EXPECT_LT((a.values().states[i].pose.translation() - b.values().states[i].pose.translation())
                  .norm(),
              1e-9);
  }
}

TEST(IncrementalEngine, CheckpointRejectsGarbage) {
  Fixture f(0.2);
  std::istringstream in("not a checkpoint\n");
  EXPECT_EQ(code_of([&] { IncrementalEngine::load_checkpoint(in, f.initializer); }),
            ErrorCode::kSchema);
}

TEST(IncrementalEngine, FinishBeforeBootstrapFails) {
  Fixture f(0.5);
  IncrementalEngine engine(f.scenario.intrinsics, EngineConfig{}, f.initializer);
  for (std::size_t i = 0; i < 5; ++i) engine.ingest(f.sim.events[i]);
  EXPECT_FALSE(engine.bootstrapped());
  EXPECT_EQ(code_of([&] { engine.finish(); }), ErrorCode::kBootstrapFailure);
}

}  // namespace
}  // namespace ctsfm
