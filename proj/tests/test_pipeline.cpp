#include "support.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <map>
#include <thread>

using namespace pdual;
namespace pt = pdual::testing;

namespace {

struct Fixture {
  ExperimentConfig config = pt::arm_setup();
  std::shared_ptr<const EstimationProblem> problem = std::make_shared<const EstimationProblem>(make_problem(config));
  MeasurementBatch data = synthesize_dataset(config, trial_seed(config.seed, 0));

  ExperimentTrace run(std::size_t L, const std::string& transport = "inproc", bool processes = false) {
    ExperimentConfig c = config;
    c.transport = transport;
    c.processes = processes;
    return run_topology(make_topology(c, L), problem, data);
  }

  MetricsRow row(const ExperimentTrace& tr) const {
    return make_row(tr, *problem, data, theta_true(config), 0, 0);
  }
};

// Shared across tests: topology runs are the slow part.
Fixture& fx() {
  static Fixture f;
  return f;
}

const ExperimentTrace& trace_l(std::size_t L) {
  static std::map<std::size_t, ExperimentTrace> cache;
  auto it = cache.find(L);
  if (it == cache.end()) it = cache.emplace(L, fx().run(L)).first;
  return it->second;
}

}  // namespace

TEST(Wire, GoldenBytes) {
  const std::vector<std::uint8_t> thr{0x10, 0, 0, 0, 0x03, 0, 0, 0, 0, 0, 0x80, 0x61, 0x40,
                                      0, 0, 0, 0, 0, 0, 0xE0, 0x3F};
  EXPECT_EQ(encode(ThresholdMsg{140, 0.5}), thr);
  EXPECT_EQ(encode(ShutdownMsg{}), (std::vector<std::uint8_t>{0, 0, 0, 0, 0x04}));
  const auto meas = encode(MeasurementMsg{3, 0.03, VecX::Ones(12)});
  EXPECT_EQ(meas.size(), 5u + 8 * 14);
  EXPECT_EQ(meas[4], 0x01);
  EXPECT_EQ(encode(ParamUpdateMsg{2, 60, 0.7, VecX::Zero(3)})[4], 0x02);
}

TEST(Wire, RoundTrip) {
  const VecX y = VecX::LinSpaced(12, -1.0 / 3, 7.1);
  const auto m = std::get<MeasurementMsg>(decode_frame(encode(MeasurementMsg{42, 0.42, y})));
  EXPECT_EQ(m.k, 42u);
  EXPECT_EQ(m.timestamp, 0.42);
  EXPECT_EQ(m.y, y);
  const auto u = std::get<ParamUpdateMsg>(decode_frame(encode(ParamUpdateMsg{3, 150, 1.5612, Vec3(0.1, 0, 1e-17)})));
  EXPECT_EQ(u.source, 3u);
  EXPECT_EQ(u.K, 150u);
  EXPECT_EQ(u.timestamp, 1.5612);
  EXPECT_EQ(u.theta, VecX(Vec3(0.1, 0, 1e-17)));
  const auto t = std::get<ThresholdMsg>(decode_frame(encode(ThresholdMsg{140, 0.25})));
  EXPECT_EQ(t.beta, 140u);
  EXPECT_TRUE(std::holds_alternative<ShutdownMsg>(decode_frame(encode(ShutdownMsg{}))));
}

TEST(Wire, ProtocolErrors) {
  auto frame = encode(ThresholdMsg{140, 0.5});
  EXPECT_THROW(decode_frame(std::span(frame).first(3)), ProtocolError);
  EXPECT_THROW(decode_frame(std::span(frame).first(frame.size() - 1)), ProtocolError);
  frame[4] = 0x09;
  EXPECT_THROW(decode_frame(frame), ProtocolError);
  EXPECT_THROW(decode(0x03, std::vector<std::uint8_t>(7)), ProtocolError);
  EXPECT_THROW(decode(0x04, std::vector<std::uint8_t>(8)), ProtocolError);
  EXPECT_THROW(decode(0x01, std::vector<std::uint8_t>(8)), ProtocolError);
  // counts must be nonnegative integers
  auto fractional = encode(MeasurementMsg{1, 0.0, VecX()});
  const double bad = 2.5;
  std::memcpy(fractional.data() + 5, &bad, 8);
  EXPECT_THROW(decode_frame(fractional), ProtocolError);
}

class LinkTest : public ::testing::TestWithParam<TransportKind> {};

TEST_P(LinkTest, DeliversInOrderThenEnds) {
  Link link = make_link(GetParam(), 0);
  std::thread writer([&] {
    for (std::uint64_t k = 1; k <= 200; ++k) link.out->send(MeasurementMsg{k, 0.01 * k, VecX::Constant(12, k)});
    link.out->send(ShutdownMsg{});
    link.out->close();
  });
  std::uint64_t expect = 1;
  bool shutdown = false;
  while (auto m = link.in->receive()) {
    if (std::holds_alternative<ShutdownMsg>(*m)) {
      shutdown = true;
      continue;
    }
    const auto& meas = std::get<MeasurementMsg>(*m);
    EXPECT_EQ(meas.k, expect);
    EXPECT_EQ(meas.y[11], static_cast<double>(expect));
    ++expect;
  }
  writer.join();
  EXPECT_EQ(expect, 201u);
  EXPECT_TRUE(shutdown);
}

INSTANTIATE_TEST_SUITE_P(Transports, LinkTest, ::testing::Values(TransportKind::InProcess, TransportKind::Socket),
                         [](const auto& info) { return to_string(info.param); });

TEST(Links, WriteAfterCloseFails) {
  Link link = make_inprocess_link();
  link.out->close();
  EXPECT_THROW(link.out->send(ShutdownMsg{}), TransportError);
}

TEST(Node, OutOfOrderIndexIsProtocolError) {
  NodeSettings s;
  s.beta1 = 2;
  ParameterNode node(s, fx().problem, PipelineClock{});
  Link up = make_inprocess_link(), down = make_inprocess_link();
  const auto& d = fx().data;
  for (std::size_t i : {0, 1, 0, 2}) up.out->send(MeasurementMsg{d[i].k, d[i].timestamp, d[i].y});
  up.out->send(ShutdownMsg{});
  node.run(*up.in, *down.out);
  EXPECT_NE(node.error().find("protocol error"), std::string::npos) << node.error();
  EXPECT_EQ(node.received_measurements(), 3u);
  std::size_t forwarded = 0;
  while (auto m = down.in->receive()) forwarded += std::holds_alternative<MeasurementMsg>(*m);
  EXPECT_EQ(forwarded, 3u);
}

TEST(Node, ClosedUpstreamIsReported) {
  NodeSettings s;
  s.beta1 = 2;
  ParameterNode node(s, fx().problem, PipelineClock{});
  Link up = make_inprocess_link(), down = make_inprocess_link();
  const auto& d = fx().data;
  for (std::size_t i = 0; i < 3; ++i) up.out->send(MeasurementMsg{d[i].k, d[i].timestamp, d[i].y});
  up.out->close();
  node.run(*up.in, *down.out);
  EXPECT_NE(node.error().find("closed before shutdown"), std::string::npos) << node.error();
  EXPECT_FALSE(node.passes().empty());
}

TEST(Server, ClosedUpstreamIsTransportError) {
  for (TransportKind kind : {TransportKind::InProcess, TransportKind::Socket}) {
    Link link = make_link(kind, 0);
    std::thread w([&] {
      link.out->send(MeasurementMsg{1, 0.01, fx().data[0].y});
      link.out->close();
    });
    Server server({1, make_optimizer(fx().config), 1e-4, 0.0}, fx().problem, PipelineClock{});
    const ServerReport r = server.run(*link.in);
    w.join();
    EXPECT_NE(r.error.find("closed before shutdown"), std::string::npos) << r.error;
    EXPECT_EQ(r.received, 1u);
  }
}

TEST(Server, WithoutUpdatesMatchesFilterAtPrior) {
  const auto& f = fx();
  Link link = make_inprocess_link();
  for (const auto& m : f.data) link.out->send(MeasurementMsg{m.k, m.timestamp, m.y});
  link.out->send(ShutdownMsg{});
  Server server({1, make_optimizer(f.config), 1e-4, 0.0}, f.problem, PipelineClock{});
  const ServerReport r = server.run(*link.in);
  const FilterRun oracle = run_filter(f.problem->chain, f.problem->prior.theta0(), f.data, f.problem->x0,
                                      f.problem->P0, f.problem->filter);
  ASSERT_EQ(r.steps.size(), f.data.size());
  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    EXPECT_EQ(r.steps[i].theta_index, 0u);
    EXPECT_LT((r.steps[i].xhat - oracle.beliefs[i + 1].xhat).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_EQ(r.thetas.size(), 1u);
  EXPECT_FALSE(r.baseline);
}

TEST(Server, UpdateAtSampleTimeTakesEffectOnNextSample) {
  const auto& f = fx();
  const VecX theta_new = Vec3(0.04, 0.0, 0.02);
  Link link = make_inprocess_link();
  for (const auto& m : f.data) {
    link.out->send(MeasurementMsg{m.k, m.timestamp, m.y});
    if (m.k == 20) link.out->send(ParamUpdateMsg{1, 30, f.data[49].timestamp, theta_new});
  }
  link.out->send(ShutdownMsg{});
  Server server({1, make_optimizer(f.config), 1e-4, 0.0}, f.problem, PipelineClock{});
  const ServerReport r = server.run(*link.in);
  ASSERT_EQ(r.thetas.size(), 2u);
  EXPECT_EQ(r.steps[49].theta_index, 0u);
  EXPECT_EQ(r.steps[50].theta_index, 1u);
  const FilterRun head = run_filter(f.problem->chain, f.problem->prior.theta0(), f.data, f.problem->x0,
                                    f.problem->P0, f.problem->filter, 50);
  const MeasurementBatch rest(f.data.begin() + 50, f.data.end());
  const FilterRun tail = run_filter(f.problem->chain, theta_new, rest, head.beliefs.back().xhat,
                                    head.beliefs.back().P, f.problem->filter, rest.size(), head.beliefs.back().time);
  EXPECT_LT((r.steps[49].xhat - head.beliefs.back().xhat).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((r.steps.back().xhat - tail.beliefs.back().xhat).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(r.final_theta, theta_new);
  EXPECT_EQ(r.convergence_time, f.data[49].timestamp);
}

TEST(Topology, BaselineEqualsDirectOptimisation) {
  const auto& tr = trace_l(0);
  ASSERT_TRUE(tr.ok());
  ASSERT_TRUE(tr.server.baseline);
  const auto& f = fx();
  const NodeResult direct =
      optimize_on_node(*f.problem, f.problem->prior.theta0(), f.data, f.data.size(), make_optimizer(f.config), true);
  EXPECT_EQ(tr.final_theta(), direct.theta);
  EXPECT_EQ(tr.server.baseline->report.iterations, direct.report.iterations);
  EXPECT_DOUBLE_EQ(tr.convergence_time(), 1.5 + static_cast<double>(direct.report.work.filter_steps) * 1e-4);
}

// One node: activated at sample beta1, then re-run from its own estimate
// whenever more data has arrived by the time a pass finishes.
TEST(Topology, SingleNodeMatchesSequentialOracle) {
  const auto& f = fx();
  const auto& tr = trace_l(1);
  ASSERT_TRUE(tr.ok());
  const OptimizerConfig cfg = make_optimizer(f.config);
  std::vector<PassRecord> expect;
  ParameterVector theta = f.problem->prior.theta0();
  double t = f.data[f.config.beta1 - 1].timestamp;
  while (true) {
    std::size_t K = 0;
    while (K < f.data.size() && f.data[K].timestamp <= t) ++K;
    const NodeResult r = optimize_on_node(*f.problem, theta, f.data, K, cfg, true);
    const double finish = t + static_cast<double>(r.report.work.filter_steps) * f.config.step_cost;
    expect.push_back({K, t, finish, theta, r.theta, r.report});
    theta = r.theta;
    if (K == f.data.size()) break;
    t = std::max(finish, f.data[K].timestamp);
  }
  const auto& got = tr.node_traces.at(0).passes;
  ASSERT_EQ(got.size(), expect.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_EQ(got[i].K, expect[i].K);
    EXPECT_NEAR(got[i].start, expect[i].start, 1e-12);
    EXPECT_NEAR(got[i].finish, expect[i].finish, 1e-12);
    EXPECT_LT((got[i].theta - expect[i].theta).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(got[i].report.iterations, expect[i].report.iterations);
  }
  EXPECT_EQ(tr.final_theta(), expect.back().theta);
}

TEST(Topology, ThresholdsGrowByAlpha) {
  const auto& tr = trace_l(3);
  ASSERT_TRUE(tr.ok());
  ASSERT_EQ(tr.node_traces.size(), 3u);
  EXPECT_EQ(tr.node_traces[0].beta, 30u);
  for (std::size_t l = 1; l < 3; ++l) {
    const auto& prev = tr.node_traces[l - 1].passes;
    ASSERT_EQ(prev.size(), 1u);
    EXPECT_EQ(tr.node_traces[l].beta, prev[0].K + 20);
    EXPECT_GE(tr.node_traces[l].passes.front().K, *tr.node_traces[l].beta);
    EXPECT_GE(tr.node_traces[l].passes.front().start, prev[0].finish);
  }
}

TEST(Topology, ThresholdBeyondDataSkipsIntermediateNodes) {
  Fixture f;
  f.config.beta1 = 200;
  const ExperimentTrace tr = f.run(2);
  ASSERT_TRUE(tr.ok());
  EXPECT_TRUE(tr.node_traces[0].passes.empty());
  EXPECT_FALSE(tr.node_traces[1].beta);
  ASSERT_EQ(tr.node_traces[1].passes.size(), 1u);
  EXPECT_EQ(tr.node_traces[1].passes[0].K, 150u);
  for (const auto& ev : tr.server.thetas) EXPECT_NE(ev.source, 1u);
}

TEST(Topology, CountsAreConserved) {
  for (std::size_t L : {0, 1, 3}) {
    const auto& tr = trace_l(L);
    EXPECT_EQ(tr.generated, 150u);
    EXPECT_EQ(tr.server.received, 150u);
    for (const auto& n : tr.node_traces) EXPECT_EQ(n.received, 150u);
  }
}

TEST(Topology, TimelineIsOrdered) {
  const auto& tr = trace_l(3);
  const auto& th = tr.server.thetas;
  ASSERT_GE(th.size(), 4u);
  EXPECT_EQ(th[0].source, 0u);
  for (std::size_t i = 2; i < th.size(); ++i) {
    EXPECT_GE(th[i].time, th[i - 1].time);
    EXPECT_GE(th[i].source, th[i - 1].source);
  }
  EXPECT_EQ(th.back().source, 3u);
  EXPECT_EQ(th.back().K, 150u);
}

TEST(Topology, PipelineAgreesWithBaseline) {
  const MetricsRow r0 = fx().row(trace_l(0));
  const MetricsRow r3 = fx().row(trace_l(3));
  EXPECT_LT(std::abs(r3.e - r0.e), 0.01);
  EXPECT_LT((trace_l(3).final_theta() - trace_l(0).final_theta()).cwiseAbs().maxCoeff(), 10 * 2e-4);
  EXPECT_LT(r3.T, r0.T);
}

TEST(Topology, TransportsGiveIdenticalRows) {
  auto& f = fx();
  const MetricsRow inproc = f.row(trace_l(3));
  const MetricsRow socket = f.row(f.run(3, "socket"));
  const MetricsRow procs = f.row(f.run(3, "socket", true));
  EXPECT_EQ(inproc, socket);
  EXPECT_EQ(inproc, procs);
  EXPECT_THROW(f.run(3, "inproc", true), std::invalid_argument);
}
