// equicontact: equivariance suites, ablation benchmarks, force-profile export
// and the pick-then-place pipeline.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "equicontact/config.hpp"
#include "equicontact/errors.hpp"
#include "equicontact/harness.hpp"

namespace fs = std::filesystem;
using namespace equicontact;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> scenario_sets;
  std::optional<std::size_t> trials;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> noise;
  std::string out;
};

void add_common(CLI::App* app, Common& c, const std::string& default_out) {
  app->add_option("-s,--scenario-set", c.scenario_sets,
                  "flat | flat-ood | tilt30-ood | tilt45 | distractor (repeatable)");
  app->add_option("-n,--trials", c.trials, "trials per scenario set");
  app->add_option("--seed", c.seed, "base seed");
  app->add_option("--noise-preset", c.noise, "none | moderate | pick_table | place_table");
  c.out = default_out;
  app->add_option("-o,--out", c.out, "output directory")->capture_default_str();
}

BenchmarkConfig base_config(const std::string& config_path, const Common& c) {
  BenchmarkConfig cfg = config_path.empty() ? BenchmarkConfig{} : load_benchmark_config(config_path);
  if (c.trials) cfg.trials = *c.trials;
  if (c.seed) cfg.seed = *c.seed;
  if (c.noise) cfg.noise_preset = *c.noise;
  cfg.validate();
  return cfg;
}

std::vector<std::string> sets_or(const Common& c, const BenchmarkConfig& cfg) {
  return c.scenario_sets.empty() ? std::vector<std::string>{cfg.scenario_set} : c.scenario_sets;
}

void print_summary(const BenchmarkResult& r) {
  std::printf("%-12s %-45s %3zu/%-3zu success  (fail %zu: force_limit %zu, timeout %zu; blowup %zu)\n",
              r.config.scenario_set.c_str(), r.config.policy_id().c_str(),
              r.count(Outcome::Success), r.reports.size(), r.count(Outcome::Fail),
              r.count(FailReason::ForceLimit), r.count(FailReason::Timeout),
              r.count(Outcome::Blowup));
}

int cmd_suite(const std::string& config_path, std::size_t samples, double tol, std::uint64_t seed,
              std::size_t rollouts, std::size_t rollout_steps, bool identity, const std::string& out) {
  const BenchmarkConfig cfg = config_path.empty() ? BenchmarkConfig{} : load_benchmark_config(config_path);
  SuiteOptions o;
  o.samples = samples;
  o.tolerance = tol;
  o.seed = seed;
  o.rollouts = rollouts;
  o.rollout_steps = rollout_steps;
  o.identity_action = identity;
  const SuiteReport rep = run_equivariance_suite(o, cfg);
  for (const auto& c : rep.checks) {
    std::printf("%-32s %s  max_error=%.3e  tol=%.1e  samples=%zu\n", c.name.c_str(),
                c.passed ? "PASS" : "FAIL", c.max_error, c.tolerance, c.samples);
    if (!c.passed) std::printf("  offending: %s\n", c.offending.c_str());
  }
  std::printf("suite %s in %.2f s\n", rep.passed() ? "passed" : "FAILED", rep.seconds);
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream f(fs::path(out) / "suite.json");
    if (!f) throw Error("cannot write " + (fs::path(out) / "suite.json").string());
    f << to_json(rep).dump(2) << '\n';
  }
  return rep.passed() ? 0 : 1;
}

int cmd_bench(const std::string& config_path, const Common& c, const std::string& policy,
              const std::string& compliance, const std::string& schedule,
              const std::string& features) {
  BenchmarkConfig cfg = base_config(config_path, c);
  if (!policy.empty()) cfg.policy = parse_policy_kind(policy);
  if (!compliance.empty()) cfg.compliance = compliance == "on";
  if (!schedule.empty()) cfg.policy_cfg.schedule = parse_gain_schedule(schedule);
  if (!features.empty()) cfg.features.brittle = features == "brittle";
  std::vector<BenchmarkResult> results;
  for (const auto& set : sets_or(c, cfg)) {
    BenchmarkConfig b = cfg;
    b.scenario_set = set;
    b.validate();
    results.push_back(run_benchmark(b));
    print_summary(results.back());
  }
  export_results(results, c.out);
  std::printf("wrote %s/{summary.csv,trials.csv,forces.csv,results.json}\n", c.out.c_str());
  return 0;
}

int cmd_export(const std::string& config_path, Common c) {
  if (!c.trials) c.trials = 10;
  const BenchmarkConfig base = base_config(config_path, c);
  std::vector<BenchmarkResult> results;
  for (GainSchedule s : {GainSchedule::Adaptive, GainSchedule::FixedHigh}) {
    results.push_back(run_benchmark(force_profile_config(base, s)));
    print_summary(results.back());
  }
  std::size_t lower = 0;
  const auto& a = results[0].reports;
  const auto& f = results[1].reports;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double pa = a[i].peak_abs_wrench(2);
    const double pf = f[i].peak_abs_wrench(2);
    if (pa < pf) ++lower;
    std::printf("trial %2zu  seed %20llu  peak |Fz| adaptive %7.3f N  fixed-high %7.3f N\n", i,
                static_cast<unsigned long long>(a[i].seed), pa, pf);
  }
  std::printf("adaptive peak |Fz| strictly lower in %zu/%zu trials\n", lower, a.size());
  export_results(results, c.out);
  std::printf("wrote %s/{summary.csv,trials.csv,forces.csv,results.json}\n", c.out.c_str());
  return 0;
}

int cmd_pipeline(const std::string& config_path, Common c) {
  if (!c.noise) c.noise = "place_table";
  const BenchmarkConfig cfg = base_config(config_path, c);
  fs::create_directories(c.out);
  std::ofstream csv(fs::path(c.out) / "pipeline.csv");
  if (!csv) throw Error("cannot write " + (fs::path(c.out) / "pipeline.csv").string());
  csv << "scenario_set,trial_index,seed,grasped,pick_steps,outcome,reason,place_steps,peak_fz\n";
  nlohmann::json all = nlohmann::json::array();
  for (const auto& set : sets_or(c, cfg)) {
    BenchmarkConfig b = cfg;
    b.scenario_set = set;
    b.validate();
    std::size_t grasped = 0;
    std::size_t placed = 0;
    for (std::size_t i = 0; i < b.trials; ++i) {
      const std::uint64_t seed = trial_seed(b.seed, i);
      const Scene scene = build_scenario(scenario_for(set, TrialSeeds::from(seed).scene));
      PipelineReport r = run_pipeline_trial(b, scene, seed);
      r.place.trial_index = i;
      grasped += r.grasped;
      placed += r.grasped && r.place.outcome == Outcome::Success;
      csv << set << ',' << i << ',' << seed << ',' << (r.grasped ? 1 : 0) << ',' << r.pick_steps
          << ',' << to_string(r.place.outcome) << ',' << to_string(r.place.reason) << ','
          << r.place.steps << ',' << r.place.peak_abs_wrench(2) << '\n';
      all.push_back({{"scenario_set", set},
                     {"trial_index", i},
                     {"seed", seed},
                     {"grasped", r.grasped},
                     {"pick_steps", r.pick_steps},
                     {"place", to_json(r.place)}});
    }
    std::printf("%-12s pick %zu/%zu  place %zu/%zu  (noise %s)\n", set.c_str(), grasped, b.trials,
                placed, b.trials, b.noise_preset.c_str());
  }
  std::ofstream js(fs::path(c.out) / "pipeline.json");
  js << nlohmann::json{{"schema", "equicontact.pipeline/1"}, {"config", to_json(cfg)}, {"trials", all}}
            .dump(2)
     << '\n';
  if (!csv || !js) throw Error("write failed in " + c.out);
  return 0;
}

int cmd_replay(const std::string& results_json) {
  const auto results = load_results(results_json);
  std::size_t mismatches = 0;
  std::size_t total = 0;
  for (const auto& r : results) {
    for (const auto& rep : r.reports) {
      ++total;
      const TrialReport again = replay_trial(r.config, rep);
      if (!(again == rep)) {
        ++mismatches;
        std::printf("MISMATCH %s trial %zu seed %llu: %s/%s vs %s/%s\n", r.config.scenario_set.c_str(),
                    rep.trial_index, static_cast<unsigned long long>(rep.seed), to_string(rep.outcome),
                    to_string(rep.reason), to_string(again.outcome), to_string(again.reason));
      }
    }
  }
  std::printf("replayed %zu trials, %zu mismatches\n", total, mismatches);
  return mismatches == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"equicontact: SE(3) compliant insertion toolkit"};
  app.require_subcommand(1);
  std::string config;
  app.add_option("-c,--config", config, "INI configuration file")->check(CLI::ExistingFile);

  auto* suite = app.add_subcommand("suite", "equivariance property suite (exit 1 on failure)");
  std::size_t samples = 1000;
  double tol = 1e-9;
  std::uint64_t suite_seed = 7;
  std::size_t rollouts = 0;
  std::size_t rollout_steps = 2000;
  bool identity = false;
  std::string suite_out;
  suite->add_option("--samples", samples)->capture_default_str();
  suite->add_option("--tolerance", tol)->capture_default_str();
  suite->add_option("--seed", suite_seed)->capture_default_str();
  suite->add_option("--rollouts", rollouts, "closed-loop rollout pairs (0 skips)")->capture_default_str();
  suite->add_option("--rollout-steps", rollout_steps)->capture_default_str();
  suite->add_flag("--identity", identity, "draw g_l = identity (self-check)");
  suite->add_option("-o,--out", suite_out, "write suite.json here");

  Common bench_opts;
  auto* bench = app.add_subcommand("bench", "ablation benchmark");
  add_common(bench, bench_opts, "results");
  std::string policy, compliance, schedule, features;
  bench->add_option("--policy", policy)->check(CLI::IsMember({"gcev-local", "world-frame-replay"}));
  bench->add_option("--compliance", compliance)->check(CLI::IsMember({"on", "off"}));
  bench->add_option("--schedule", schedule)->check(CLI::IsMember({"adaptive", "fixed-high"}));
  bench->add_option("--features", features)->check(CLI::IsMember({"augmented", "brittle"}));

  Common export_opts;
  auto* exp = app.add_subcommand("export", "force profiles: adaptive vs fixed-high gains");
  add_common(exp, export_opts, "force_profile");

  Common pipe_opts;
  auto* pipe = app.add_subcommand("pipeline", "pick-then-place pipeline");
  add_common(pipe, pipe_opts, "pipeline");

  std::string results_json;
  auto* replay = app.add_subcommand("replay", "re-run exported trials and compare outcomes");
  replay->add_option("results", results_json, "results.json")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*suite) return cmd_suite(config, samples, tol, suite_seed, rollouts, rollout_steps, identity, suite_out);
    if (*bench) return cmd_bench(config, bench_opts, policy, compliance, schedule, features);
    if (*exp) return cmd_export(config, export_opts);
    if (*pipe) return cmd_pipeline(config, pipe_opts);
    if (*replay) return cmd_replay(results_json);
  } catch (const Error& e) {
    std::fprintf(stderr, "equicontact: %s\n", e.what());
    return 2;
  }
  return 0;
}
