#include <benchmark/benchmark.h>

#include <random>

#include "ctsfm/event_sim.hpp"
#include "ctsfm/factor_graph.hpp"
#include "ctsfm/incremental_engine.hpp"

namespace ctsfm {
namespace {

ControlState knot(double t, const Twist& xi) {
  ControlState s;
  s.timestamp = t;
  s.pose = exp_map(xi * t);
  s.velocity = xi;
  return s;
}

const Twist kTwist(Vector3d(0.5, 0.1, 0.0), Vector3d(0.0, 0.2, 0.1));

// Interpolation with a known bracket; cost must not grow with the knot count.
void BM_InterpolateIn(benchmark::State& state) {
  TrajectoryGP gp(WnoaPrior::isotropic(1.0, 1.0));
  const auto m = static_cast<std::size_t>(state.range(0));
  for (std::size_t i = 0; i < m; ++i) gp.append(knot(0.01 * static_cast<double>(i), kTwist));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(gp.front().timestamp, gp.back().timestamp);
  std::vector<std::pair<std::size_t, double>> queries;
  for (int i = 0; i < 1024; ++i) {
    const double tau = u(rng);
    queries.emplace_back(gp.bracket(tau), tau);
  }
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& [left, tau] = queries[i++ & 1023];
    benchmark::DoNotOptimize(gp.interpolate_in(left, tau));
  }
}
BENCHMARK(BM_InterpolateIn)->Arg(10)->Arg(1000)->Arg(100000);

// Full interpolation including the bracket search.
void BM_Interpolate(benchmark::State& state) {
  TrajectoryGP gp(WnoaPrior::isotropic(1.0, 1.0));
  const auto m = static_cast<std::size_t>(state.range(0));
  for (std::size_t i = 0; i < m; ++i) gp.append(knot(0.01 * static_cast<double>(i), kTwist));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(gp.front().timestamp, gp.back().timestamp);
  for (auto _ : state) benchmark::DoNotOptimize(gp.interpolate(u(rng)));
}
BENCHMARK(BM_Interpolate)->Arg(10)->Arg(1000)->Arg(100000);

struct ChainProblem {
  FactorGraph graph{default_intrinsics(), WnoaPrior::isotropic(1.0, 1.0)};
  Values values;
};

ChainProblem chain(std::size_t states, std::size_t landmarks) {
  ChainProblem p;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t i = 0; i < states; ++i) p.values.states.push_back(knot(0.05 * static_cast<double>(i), kTwist));
  for (std::size_t j = 0; j < landmarks; ++j) p.values.landmarks.push_back(Vector3d(u(rng), u(rng), 5.0 + u(rng)));
  for (std::size_t i = 0; i + 1 < states; ++i) p.graph.add_gp_prior(i, i + 1, p.values);
  const CameraIntrinsics k = default_intrinsics();
  for (std::size_t i = 0; i + 1 < states; ++i) {
    for (std::size_t j = 0; j < landmarks; ++j) {
      EventObservation e;
      e.timestamp = p.values.states[i].timestamp + 0.025;
      const SE3Pose w2c = exp_map(kTwist * e.timestamp).inverse();
      if ((w2c * p.values.landmarks[j]).z() < 1.0) continue;
      e.pixel = project(w2c, p.values.landmarks[j], k);
      if (!k.contains(e.pixel)) continue;
      p.graph.add_reprojection(e, j, i, i + 1, p.values);
    }
  }
  PosePrior anchor;
  anchor.sqrt_information = Matrix6d::Identity() * std::sqrt(kGaugeInformation);
  p.graph.add_gauge(anchor);
  ScalePrior scale;
  scale.state_b = states - 1;
  scale.distance = (p.values.states.back().pose.translation()).norm();
  scale.sqrt_information = std::sqrt(kGaugeInformation);
  p.graph.add_gauge(scale);
  return p;
}

void BM_AssembleAndSolve(benchmark::State& state) {
  const ChainProblem p = chain(static_cast<std::size_t>(state.range(0)), 30);
  const SolveScope scope = make_scope(p.graph, p.values);
  for (auto _ : state) {
    benchmark::DoNotOptimize(solve_normal_equations(assemble(p.graph, p.values, scope)));
  }
  state.counters["factors"] = static_cast<double>(p.graph.reprojections().size());
}
BENCHMARK(BM_AssembleAndSolve)->Arg(10)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

void BM_GenerateEvents(benchmark::State& state) {
  SimScenario s;
  s.intrinsics = default_intrinsics();
  s.motion.duration = 1.0;
  std::size_t events = 0;
  for (auto _ : state) events = generate_events(s).events.size();
  state.counters["events"] = static_cast<double>(events);
}
BENCHMARK(BM_GenerateEvents)->Unit(benchmark::kMillisecond);

void BM_EngineStream(benchmark::State& state) {
  SimScenario s;
  s.intrinsics = default_intrinsics();
  s.motion.duration = 1.0;
  const SimulationResult sim = generate_events(s);
  const GroundTruthMotion motion(s.motion);
  GroundTruthInitializer init([&](double t) { return motion.pose(t); });
  for (auto _ : state) {
    IncrementalEngine engine(s.intrinsics, EngineConfig{}, init);
    for (const auto& e : sim.events) engine.ingest(e);
    engine.finish();
    benchmark::DoNotOptimize(engine.values());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(sim.events.size()));
}
BENCHMARK(BM_EngineStream)->Unit(benchmark::kMillisecond)->Iterations(3);

}  // namespace
}  // namespace ctsfm

BENCHMARK_MAIN();
