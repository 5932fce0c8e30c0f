#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ctsfm/errors.hpp"
#include "ctsfm/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ctsfm;

namespace {

struct RunFlags {
  std::string config;
  std::string scenario;
  std::string events;
  std::string ground_truth;
  std::string output_dir;
  std::string initializer;
  std::string solve_trigger;
  std::string batch_mode;
  double state_period = 0.0;
  double outlier_px = 0.0;
  double batch_duration = 0.0;
  std::size_t batch_count = 0;
  std::uint64_t seed = 0;
  bool has_seed = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool baseline) {
  cmd->add_option("--config", f.config, "Run config file (key = value)");
  cmd->add_option("--scenario", f.scenario, "Scenario config to simulate as input");
  cmd->add_option("--events", f.events, "Event stream file with track ids");
  cmd->add_option("--ground-truth", f.ground_truth, "Ground-truth trajectory file");
  cmd->add_option("--output-dir", f.output_dir, "Directory for trajectory and report");
  cmd->add_option("--seed", f.seed, "Scenario seed override")->each([&f](const std::string&) {
    f.has_seed = true;
  });
  cmd->add_option("--initializer", f.initializer, "auto | ground_truth | random_depth");
  cmd->add_option("--solve-trigger", f.solve_trigger, "per_event | per_state | per_n_events");
  cmd->add_option("--state-period", f.state_period, "Knot insertion period (s)");
  cmd->add_option("--outlier-px", f.outlier_px, "Outlier track threshold (px)");
  if (baseline) {
    cmd->add_option("--batch-mode", f.batch_mode, "fixed_duration | fixed_count");
    cmd->add_option("--batch-duration", f.batch_duration, "Frame duration (s)");
    cmd->add_option("--batch-count", f.batch_count, "Events per frame");
  }
}

std::string number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

RunConfig resolve_run_config(const RunFlags& f) {
  KeyValues kv;
  fs::path base;
  if (!f.config.empty()) {
    kv = load_key_values(f.config);
    base = fs::path(f.config).parent_path();
  }
  const auto set = [&kv](const char* key, const std::string& value) {
    if (!value.empty()) kv[key] = value;
  };
  const auto cwd = fs::current_path();
  if (!f.scenario.empty()) kv.erase("events");
  if (!f.events.empty()) kv.erase("scenario");
  set("scenario", f.scenario.empty() ? "" : fs::absolute(f.scenario).string());
  set("events", f.events.empty() ? "" : fs::absolute(f.events).string());
  set("ground_truth", f.ground_truth.empty() ? "" : fs::absolute(f.ground_truth).string());
  set("output_dir", f.output_dir.empty() ? "" : fs::absolute(f.output_dir).string());
  set("initializer", f.initializer);
  set("solve_trigger", f.solve_trigger);
  set("batch_mode", f.batch_mode);
  if (f.has_seed) kv["seed"] = std::to_string(f.seed);
  if (f.state_period > 0.0) kv["state_insertion_period"] = number(f.state_period);
  if (f.outlier_px > 0.0) kv["outlier_avg_reproj_px"] = number(f.outlier_px);
  if (f.batch_duration > 0.0) kv["batch_duration"] = number(f.batch_duration);
  if (f.batch_count > 0) kv["batch_count"] = std::to_string(f.batch_count);
  RunConfig config = run_config_from_key_values(kv, base.empty() ? cwd : fs::absolute(base));
  if (config.output_dir.empty()) {
    fail(ErrorCode::kSchema, "run config field 'output_dir': required");
  }
  return config;
}

void write_run_outputs(const RunConfig& config, const RunResult& result) {
  fs::create_directories(config.output_dir);
  save_trajectory(config.output_dir / "trajectory.txt", result.trajectory);
  std::ostringstream report;
  write_report(report, result.report);
  write_text_file(config.output_dir / "report.txt", report.str());
  std::cout << report.str();
}

int cmd_simulate(const std::string& config_path, bool has_seed, std::uint64_t seed,
                 const std::string& output_dir) {
  SimScenario scenario = scenario_from_key_values(load_key_values(config_path));
  if (has_seed) scenario.seed = seed;
  const SimulationResult sim = generate_events(scenario);
  const fs::path out(output_dir);
  fs::create_directories(out);
  save_events(out / "events.txt", sim.events);
  save_trajectory(out / "ground_truth.txt", sim.ground_truth);
  std::ostringstream lm;
  char buf[128];
  for (std::size_t i = 0; i < sim.landmarks.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu %.12g %.12g %.12g\n", i, sim.landmarks[i].x(),
                  sim.landmarks[i].y(), sim.landmarks[i].z());
    lm << buf;
  }
  write_text_file(out / "landmarks.txt", lm.str());
  std::ostringstream cfg;
  write_key_values(cfg, scenario_to_key_values(scenario));
  write_text_file(out / "scenario.cfg", cfg.str());
  std::cout << "events = " << sim.events.size() << '\n'
            << "ground_truth_samples = " << sim.ground_truth.size() << '\n'
            << "landmarks = " << sim.landmarks.size() << '\n'
            << "outlier_tracks = " << sim.outlier_tracks.size() << '\n';
  return 0;
}

int cmd_compare(const std::string& report_a, const std::string& report_b,
                const std::string& estimate, const std::string& ground_truth,
                const std::string& output_dir) {
  std::istringstream a_in(read_text_file(report_a));
  std::istringstream b_in(read_text_file(report_b));
  const RunReport a = read_report(a_in);
  const RunReport b = read_report(b_in);
  const std::string table = comparison_table(a, b);
  const fs::path out(output_dir);
  fs::create_directories(out);
  write_text_file(out / "comparison.txt", table);
  if (!estimate.empty() || !ground_truth.empty()) {
    if (estimate.empty() || ground_truth.empty()) {
      fail(ErrorCode::kInvalidArgument, "compare: --estimate and --ground-truth go together");
    }
    std::ostringstream csv;
    write_comparison_csv(csv, load_trajectory(estimate), load_trajectory(ground_truth));
    write_text_file(out / "trajectory.csv", csv.str());
  }
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-time structure from motion for event cameras"};
  app.require_subcommand(1);

  std::string sim_config;
  std::string sim_output;
  std::uint64_t sim_seed = 0;
  auto* simulate = app.add_subcommand("simulate", "Generate an event stream and ground truth");
  simulate->add_option("--config", sim_config, "Scenario config file")->required();
  auto* sim_seed_opt = simulate->add_option("--seed", sim_seed, "Seed override");
  simulate->add_option("--output-dir", sim_output, "Output directory")->required();

  RunFlags async_flags;
  auto* run_async_cmd = app.add_subcommand("run-async", "Run the asynchronous estimator");
  add_run_flags(run_async_cmd, async_flags, false);

  RunFlags baseline_flags;
  auto* run_baseline_cmd = app.add_subcommand("run-baseline", "Run the frame-based baseline");
  add_run_flags(run_baseline_cmd, baseline_flags, true);

  std::string report_a, report_b, estimate, ground_truth, compare_output;
  auto* compare = app.add_subcommand("compare", "Compare two run reports");
  compare->add_option("--report-a", report_a, "First report")->required();
  compare->add_option("--report-b", report_b, "Second report")->required();
  compare->add_option("--estimate", estimate, "Trajectory for the plot CSV");
  compare->add_option("--ground-truth", ground_truth, "Ground truth for the plot CSV");
  compare->add_option("--output-dir", compare_output, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << error_code_name(ErrorCode::kInvalidArgument) << ": " << e.what() << '\n';
    return 2;
  }

  try {
    if (simulate->parsed()) {
      return cmd_simulate(sim_config, sim_seed_opt->count() > 0, sim_seed, sim_output);
    }
    if (run_async_cmd->parsed()) {
      const RunConfig config = resolve_run_config(async_flags);
      const RunInput input = load_run_input(config);
      auto initializer = make_initializer(config.initializer, input);
      write_run_outputs(config, run_async(input, config.engine, *initializer));
      return 0;
    }
    if (run_baseline_cmd->parsed()) {
      const RunConfig config = resolve_run_config(baseline_flags);
      const RunInput input = load_run_input(config);
      auto initializer = make_initializer(config.initializer, input);
      write_run_outputs(config, run_baseline(input, config.batch, config.baseline, *initializer));
      return 0;
    }
    if (compare->parsed()) {
      return cmd_compare(report_a, report_b, estimate, ground_truth, compare_output);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << error_code_name(e.code()) << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << error_code_name(ErrorCode::kIo) << ": " << e.what() << '\n';
    return 1;
  }
  return 1;
}
