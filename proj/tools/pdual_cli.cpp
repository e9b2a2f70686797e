// Command line front end: simulate one topology, sweep L x trials, or run
// the invariant suites.

#include "pdual/pdual.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct Overrides {
  std::string config_path;
  std::string nodes;
  std::optional<std::size_t> trials, alpha, beta1, jobs;
  std::optional<double> duration, step_cost, hop_latency;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> transport, timing;
  bool processes = false;
  bool realtime = false;
  std::string out;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "JSON file with ExperimentConfig fields")->check(CLI::ExistingFile);
  cmd->add_option("--trials", o.trials, "trials per node count");
  cmd->add_option("--alpha", o.alpha, "growing increment alpha (samples)");
  cmd->add_option("--beta1", o.beta1, "activation threshold of node 1 (samples)");
  cmd->add_option("--duration", o.duration, "simulated seconds of data");
  cmd->add_option("--seed", o.seed, "base seed");
  cmd->add_option("--transport", o.transport, "inproc | socket")->check(CLI::IsMember({"inproc", "socket"}));
  cmd->add_option("--timing", o.timing, "logical | wall")->check(CLI::IsMember({"logical", "wall"}));
  cmd->add_option("--step-cost", o.step_cost, "logical seconds per filter step");
  cmd->add_option("--hop-latency", o.hop_latency, "seconds per hop");
  cmd->add_flag("--processes", o.processes, "one process per node (needs --transport socket)");
  cmd->add_flag("--realtime", o.realtime, "wall timing: release samples at their sampling instants");
}

pdual::ExperimentConfig build_config(const Overrides& o) {
  pdual::ExperimentConfig c = o.config_path.empty() ? pdual::ExperimentConfig{} : pdual::load_config(o.config_path);
  if (o.trials) c.trials = *o.trials;
  if (o.alpha) c.alpha = *o.alpha;
  if (o.beta1) c.beta1 = *o.beta1;
  if (o.duration) c.duration = *o.duration;
  if (o.seed) c.seed = *o.seed;
  if (o.transport) c.transport = *o.transport;
  if (o.timing) c.timing = *o.timing;
  if (o.step_cost) c.step_cost = *o.step_cost;
  if (o.hop_latency) c.hop_latency = *o.hop_latency;
  if (o.processes) c.processes = true;
  if (o.realtime) c.realtime_source = true;
  if (!o.nodes.empty()) {
    const auto colon = o.nodes.find(':');
    if (colon == std::string::npos) {
      c.nodes_min = c.nodes_max = std::stoul(o.nodes);
    } else {
      c.nodes_min = std::stoul(o.nodes.substr(0, colon));
      c.nodes_max = std::stoul(o.nodes.substr(colon + 1));
    }
  }
  c.validate();
  return c;
}

nlohmann::ordered_json trace_json(const pdual::ExperimentTrace& tr, const pdual::MetricsRow& row) {
  nlohmann::ordered_json j;
  j["L"] = tr.nodes;
  j["T"] = row.T;
  j["e"] = row.e;
  j["final_S"] = row.final_S;
  j["final_theta"] = std::vector<double>(tr.final_theta().begin(), tr.final_theta().end());
  j["generated"] = tr.generated;
  j["server_received"] = tr.server.received;
  j["total_work"] = row.total_work;
  auto pass_json = [](const pdual::PassRecord& p) {
    return nlohmann::ordered_json{{"K", p.K},
                                  {"start", p.start},
                                  {"finish", p.finish},
                                  {"iterations", p.report.iterations},
                                  {"criterion", pdual::to_string(p.report.criterion)},
                                  {"o", p.report.o},
                                  {"o_delta", p.report.o_delta},
                                  {"filter_steps", p.report.work.filter_steps},
                                  {"wall_seconds", p.report.wall_seconds},
                                  {"theta", std::vector<double>(p.theta.begin(), p.theta.end())}};
  };
  j["nodes"] = nlohmann::ordered_json::array();
  for (const auto& n : tr.node_traces) {
    nlohmann::ordered_json nj{{"index", n.index}, {"received", n.received}};
    nj["beta"] = n.beta ? nlohmann::ordered_json(*n.beta) : nlohmann::ordered_json(nullptr);
    nj["passes"] = nlohmann::ordered_json::array();
    for (const auto& p : n.passes) nj["passes"].push_back(pass_json(p));
    if (!n.error.empty()) nj["error"] = n.error;
    j["nodes"].push_back(nj);
  }
  if (tr.server.baseline) j["baseline"] = pass_json(*tr.server.baseline);
  j["theta_timeline"] = nlohmann::ordered_json::array();
  for (const auto& ev : tr.server.thetas) {
    j["theta_timeline"].push_back({{"time", ev.time},
                                   {"source", ev.source},
                                   {"K", ev.K},
                                   {"theta", std::vector<double>(ev.theta.begin(), ev.theta.end())}});
  }
  j["errors"] = tr.errors;
  return j;
}

int cmd_simulate(const Overrides& o) {
  pdual::ExperimentConfig c = build_config(o);
  const std::size_t L = c.nodes_max;
  const std::uint64_t seed = pdual::trial_seed(c.seed, 0);
  const auto data = pdual::synthesize_dataset(c, seed);
  auto problem = std::make_shared<const pdual::EstimationProblem>(pdual::make_problem(c));
  const auto trace = pdual::run_topology(pdual::make_topology(c, L), problem, data);
  const auto row = pdual::make_row(trace, *problem, data, pdual::theta_true(c), 0, seed);
  const auto j = trace_json(trace, row);
  std::cout << j.dump(2) << "\n";
  if (!o.out.empty()) {
    const std::filesystem::path dir(o.out);
    pdual::emit_results({row}, c, dir);
    pdual::write_text(dir / "trace.json", j.dump(2) + "\n");
  }
  return trace.ok() ? 0 : 1;
}

int cmd_sweep(const Overrides& o) {
  pdual::ExperimentConfig c = build_config(o);
  const std::size_t jobs = o.jobs.value_or(1);
  const auto rows = pdual::run_sweep(c, jobs, [](const pdual::MetricsRow& r) {
    std::fprintf(stderr, "L=%zu trial=%zu T=%.4f e=%.5f%s\n", r.L, r.trial, r.T, r.e,
                 r.error.empty() ? "" : (" error: " + r.error).c_str());
  });
  const std::filesystem::path dir(o.out.empty() ? "results" : o.out);
  pdual::emit_results(rows, c, dir);
  const auto summary = pdual::summarize(rows);
  std::printf("%3s %6s %10s %10s %10s %10s %10s %10s\n", "L", "trials", "T_mean", "T_p50", "e_mean", "e_ci95",
              "work", "failures");
  for (const auto& lv : summary.levels) {
    std::printf("%3zu %6zu %10.4f %10.4f %10.5f %10.5f %10.0f %10zu\n", lv.L, lv.trials, lv.T_mean, lv.T_p50,
                lv.e_mean, lv.e_ci95, lv.work_mean, lv.failures);
  }
  std::printf("spearman(T, L) = %.3f\nwrote %s\n", summary.spearman_T_vs_L, (dir / "metrics.csv").c_str());
  return 0;
}

int cmd_verify(const Overrides& o) {
  pdual::ExperimentConfig c = build_config(o);
  bool ok = true;
  for (const auto& r : pdual::run_invariant_suites(c, c.seed)) {
    std::printf("[%s] %s: %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    ok = ok && r.passed;
  }
  // e_theta monotonicity is a suite-level property over trials
  pdual::ExperimentConfig sc = c;
  sc.timing = "logical";
  if (o.nodes.empty()) {
    sc.nodes_min = 1;
    sc.nodes_max = 4;
  }
  if (!o.trials) sc.trials = 10;
  const auto mono = pdual::check_etheta_monotone(pdual::run_sweep(sc, o.jobs.value_or(1)));
  std::printf("[%s] %s: %s\n", mono.passed ? "PASS" : "FAIL", mono.name.c_str(), mono.detail.c_str());
  ok = ok && mono.passed;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive dual estimation experiments"};
  app.require_subcommand(1);
  Overrides o;

  auto* simulate = app.add_subcommand("simulate", "run one topology on trial 0 of the seed");
  add_common(simulate, o);
  simulate->add_option("--nodes", o.nodes, "number of intermediate nodes L");
  simulate->add_option("--out", o.out, "directory for metrics.csv, summary.json, config.json, trace.json");

  auto* sweep = app.add_subcommand("sweep", "L range x trials");
  add_common(sweep, o);
  sweep->add_option("--nodes", o.nodes, "L range as MIN:MAX, or a single L");
  sweep->add_option("--out", o.out, "output directory (default: results)");
  sweep->add_option("--jobs", o.jobs, "trials run concurrently");

  auto* verify = app.add_subcommand("verify", "invariant suites");
  add_common(verify, o);
  verify->add_option("--nodes", o.nodes, "L range for the e_theta check (default 1:4)");
  verify->add_option("--jobs", o.jobs, "trials run concurrently");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*simulate) return cmd_simulate(o);
    if (*sweep) return cmd_sweep(o);
    return cmd_verify(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
