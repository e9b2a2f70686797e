#pragma once

// Wires source -> node 1 -> ... -> node L -> server and runs one experiment.

#include "pdual/experiment/config.hpp"
#include "pdual/pipeline/node.hpp"
#include "pdual/pipeline/server.hpp"
#include "pdual/pipeline/transport.hpp"

#include <json.hpp>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace pdual {

struct TopologyConfig {
  std::size_t nodes = 0;  // L
  TransportKind transport = TransportKind::InProcess;
  TimingMode timing = TimingMode::Logical;
  std::size_t alpha = 20;
  std::size_t beta1 = 30;
  OptimizerConfig optimizer;
  double step_cost = 1e-4;
  double hop_latency = 0.0;
  int port_base = 0;             // 0: ephemeral ports
  bool realtime_source = false;  // wall mode only: emit sample k at k dt
  bool processes = false;        // one forked process per node (socket transport)
};

inline TopologyConfig make_topology(const ExperimentConfig& c, std::size_t nodes) {
  TopologyConfig t;
  t.nodes = nodes;
  t.transport = parse_transport(c.transport);
  t.timing = parse_timing(c.timing);
  t.alpha = c.alpha;
  t.beta1 = c.beta1;
  t.optimizer = make_optimizer(c);
  t.step_cost = c.step_cost;
  t.hop_latency = c.hop_latency;
  t.port_base = c.port_base;
  t.realtime_source = c.realtime_source;
  t.processes = c.processes;
  return t;
}

struct NodeTrace {
  std::size_t index = 0;
  std::vector<PassRecord> passes;
  std::size_t received = 0;
  std::optional<std::size_t> beta;
  std::string error;
};

struct ExperimentTrace {
  std::size_t nodes = 0;
  std::size_t generated = 0;
  std::vector<NodeTrace> node_traces;
  ServerReport server;
  std::vector<std::string> errors;

  bool ok() const { return errors.empty(); }
  double convergence_time() const { return server.convergence_time; }
  const ParameterVector& final_theta() const { return server.final_theta; }

  /// Filter steps spent on parameter estimation anywhere in the pipeline.
  std::size_t total_work() const {
    std::size_t w = 0;
    for (const auto& n : node_traces) {
      for (const auto& p : n.passes) w += p.report.work.filter_steps;
    }
    if (server.baseline) w += server.baseline->report.work.filter_steps;
    return w;
  }
};

// Node traces cross the process boundary as JSON; doubles round-trip exactly.

inline nlohmann::json to_json_value(const NodeTrace& n) {
  nlohmann::json passes = nlohmann::json::array();
  for (const auto& p : n.passes) {
    const auto& r = p.report;
    passes.push_back({{"K", p.K},
                      {"start", p.start},
                      {"finish", p.finish},
                      {"theta_init", std::vector<double>(p.theta_init.begin(), p.theta_init.end())},
                      {"theta", std::vector<double>(p.theta.begin(), p.theta.end())},
                      {"iterations", r.iterations},
                      {"o", r.o},
                      {"o_delta", r.o_delta},
                      {"criterion", static_cast<int>(r.criterion)},
                      {"wall_seconds", r.wall_seconds},
                      {"evaluations", r.work.evaluations},
                      {"filter_steps", r.work.filter_steps},
                      {"initial_cost", r.initial_cost}});
  }
  nlohmann::json j{{"index", n.index}, {"passes", passes}, {"received", n.received}, {"error", n.error}};
  if (n.beta) j["beta"] = *n.beta;
  return j;
}

inline NodeTrace node_trace_from_json(const nlohmann::json& j) {
  auto vec = [](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    return VecX(Eigen::Map<const VecX>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  NodeTrace n;
  n.index = j.at("index").get<std::size_t>();
  n.received = j.at("received").get<std::size_t>();
  n.error = j.at("error").get<std::string>();
  if (j.contains("beta")) n.beta = j.at("beta").get<std::size_t>();
  for (const auto& p : j.at("passes")) {
    PassRecord r;
    r.K = p.at("K").get<std::size_t>();
    r.start = p.at("start").get<double>();
    r.finish = p.at("finish").get<double>();
    r.theta_init = vec(p.at("theta_init"));
    r.theta = vec(p.at("theta"));
    r.report.iterations = p.at("iterations").get<std::size_t>();
    r.report.o = p.at("o").get<double>();
    r.report.o_delta = p.at("o_delta").get<double>();
    r.report.criterion = static_cast<Termination>(p.at("criterion").get<int>());
    r.report.wall_seconds = p.at("wall_seconds").get<double>();
    r.report.work.evaluations = p.at("evaluations").get<std::size_t>();
    r.report.work.filter_steps = p.at("filter_steps").get<std::size_t>();
    r.report.initial_cost = p.at("initial_cost").get<double>();
    n.passes.push_back(std::move(r));
  }
  return n;
}

namespace detail {

inline void write_all(int fd, const std::string& s) {
  std::size_t done = 0;
  while (done < s.size()) {
    const ssize_t r = ::write(fd, s.data() + done, s.size() - done);
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) return;
    done += static_cast<std::size_t>(r);
  }
}

inline std::string read_all(int fd) {
  std::string out;
  char buf[4096];
  for (;;) {
    const ssize_t r = ::read(fd, buf, sizeof buf);
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) break;
    out.append(buf, static_cast<std::size_t>(r));
  }
  return out;
}

}  // namespace detail

inline Link make_link(TransportKind kind, int port) {
  return kind == TransportKind::Socket ? make_socket_link(port) : make_inprocess_link();
}

inline ExperimentTrace run_topology(const TopologyConfig& topo,
                                    std::shared_ptr<const EstimationProblem> problem,
                                    const MeasurementBatch& data) {
  topo.optimizer.validate();
  if (topo.beta1 < 1) throw std::invalid_argument("beta1 must be at least 1");
  const PipelineClock clock(topo.timing);

  std::vector<Link> links;
  for (std::size_t i = 0; i <= topo.nodes; ++i) {
    links.push_back(make_link(topo.transport, topo.port_base == 0 ? 0 : topo.port_base + static_cast<int>(i)));
  }

  std::vector<std::unique_ptr<ParameterNode>> nodes;
  for (std::size_t l = 1; l <= topo.nodes; ++l) {
    NodeSettings s;
    s.index = l;
    s.total = topo.nodes;
    s.alpha = topo.alpha;
    s.beta1 = topo.beta1;
    s.optimizer = topo.optimizer;
    s.step_cost = topo.step_cost;
    s.hop_latency = topo.hop_latency;
    nodes.push_back(std::make_unique<ParameterNode>(s, problem, clock));
  }
  Server server({topo.nodes, topo.optimizer, topo.step_cost, topo.hop_latency}, problem, clock);

  ExperimentTrace trace;
  trace.nodes = topo.nodes;
  std::string source_error;

  // Process mode: node l owns links[l].in and links[l + 1].out; every other
  // process drops its copies of those descriptors.
  std::vector<pid_t> pids;
  std::vector<int> result_fds;
  if (topo.processes) {
    if (topo.transport != TransportKind::Socket) {
      throw std::invalid_argument("separate node processes need the socket transport");
    }
    for (std::size_t l = 0; l < nodes.size(); ++l) {
      int fds[2];
      if (::pipe(fds) != 0) throw std::runtime_error("pipe failed");
      const pid_t pid = ::fork();
      if (pid < 0) throw std::runtime_error("fork failed");
      if (pid == 0) {
        ::close(fds[0]);
        for (int fd : result_fds) ::close(fd);
        for (std::size_t i = 0; i < links.size(); ++i) {
          if (i != l + 1) links[i].out->abandon();
          if (i != l) links[i].in->abandon();
        }
        int code = 0;
        try {
          nodes[l]->run(*links[l].in, *links[l + 1].out);
          const NodeTrace nt{nodes[l]->settings().index, nodes[l]->passes(), nodes[l]->received_measurements(),
                             nodes[l]->activation_threshold(), nodes[l]->error()};
          detail::write_all(fds[1], to_json_value(nt).dump());
        } catch (...) {
          code = 1;
        }
        ::close(fds[1]);
        ::_exit(code);
      }
      ::close(fds[1]);
      pids.push_back(pid);
      result_fds.push_back(fds[0]);
      links[l].in->abandon();
      links[l + 1].out->abandon();
    }
  }

  std::vector<std::thread> threads;
  threads.emplace_back([&] {
    try {
      Outbound& out = *links.front().out;
      for (const auto& m : data) {
        if (topo.realtime_source && topo.timing == TimingMode::Wall) {
          std::this_thread::sleep_until(
              clock.origin() + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                   std::chrono::duration<double>(m.timestamp)));
        }
        out.send(MeasurementMsg{m.k, m.timestamp, m.y});
        ++trace.generated;
      }
      out.send(ShutdownMsg{});
      out.close();
    } catch (const std::exception& e) {
      source_error = std::string("source: ") + e.what();
      links.front().out->close();
    }
  });
  if (!topo.processes) {
    for (std::size_t l = 0; l < nodes.size(); ++l) {
      threads.emplace_back([&, l] { nodes[l]->run(*links[l].in, *links[l + 1].out); });
    }
  }
  trace.server = server.run(*links.back().in);
  for (auto& t : threads) t.join();

  if (!source_error.empty()) trace.errors.push_back(source_error);
  if (topo.processes) {
    for (std::size_t l = 0; l < pids.size(); ++l) {
      const std::string text = detail::read_all(result_fds[l]);
      ::close(result_fds[l]);
      int status = 0;
      ::waitpid(pids[l], &status, 0);
      NodeTrace nt;
      nt.index = l + 1;
      try {
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) throw std::runtime_error("abnormal exit");
        nt = node_trace_from_json(nlohmann::json::parse(text));
      } catch (const std::exception& e) {
        nt.error = "node process " + std::to_string(l + 1) + ": " + e.what();
      }
      trace.node_traces.push_back(nt);
    }
  } else {
    for (const auto& n : nodes) {
      trace.node_traces.push_back({n->settings().index, n->passes(), n->received_measurements(),
                                    n->activation_threshold(), n->error()});
    }
  }
  for (const auto& n : trace.node_traces) {
    if (!n.error.empty()) trace.errors.push_back(n.error);
  }
  if (!trace.server.error.empty()) trace.errors.push_back(trace.server.error);
  return trace;
}

}  // namespace pdual
