#pragma once

// Invariant suites. Each check returns a named pass/fail with a short detail
// line; the CLI `verify` command and the acceptance binary both run them.

#include "pdual/experiment/config.hpp"
#include "pdual/experiment/dataset.hpp"
#include "pdual/experiment/sweep.hpp"
#include "pdual/experiment/trajectory.hpp"
#include "pdual/jacobians.hpp"
#include "pdual/pipeline/topology.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace pdual {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

inline ParameterVector random_theta(std::size_t size, double radius, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ParameterVector v(static_cast<Eigen::Index>(size));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = g(rng);
  const double n = v.norm();
  if (n > 0.0) v *= radius * u(rng) / n;
  return v;
}

inline GeneralizedState trajectory_state(const ExperimentConfig& c, double t) {
  return QuinticTrajectory(vecx(c.q0), vecx(c.qe), c.t_e)(t);
}

}  // namespace detail

/// Body rotations stay orthonormal with det +1.
inline CheckResult check_rotation_orthonormality(const ExperimentConfig& c, std::uint64_t seed,
                                                 std::size_t samples = 200) {
  const KinematicChain chain = make_chain(c);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> q(-10.0, 10.0);
  double worst = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    GeneralizedState x = GeneralizedState::zero(chain.dof());
    for (Eigen::Index i = 0; i < x.q.size(); ++i) {
      x.q[i] = q(rng);
      x.qdot[i] = q(rng);
      x.qddot[i] = q(rng);
    }
    for (const auto& b : forward_kinematics(chain, detail::random_theta(chain.param_size(), 0.2, rng), x)) {
      const double err = std::max((b.rotation.transpose() * b.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(),
                                  std::abs(b.rotation.determinant() - 1.0));
      worst = std::max(worst, err);
    }
  }
  return {"rotation orthonormality", worst <= 1e-12, "max |R^T R - I|, |det R - 1| = " + detail::fmt(worst)};
}

/// Body angular rates and inertial velocity/acceleration match central
/// differences of the forward kinematics along the evaluation trajectory.
inline CheckResult check_motion_consistency(const ExperimentConfig& c, std::uint64_t seed) {
  const KinematicChain chain = make_chain(c);
  std::mt19937_64 rng(seed);
  const ParameterVector theta = detail::random_theta(chain.param_size(), 0.2, rng);
  const double h = 1e-5;
  double worst = 0.0;
  for (double t = 0.05; t < c.t_e; t += 0.05) {
    const auto m = forward_kinematics(chain, theta, detail::trajectory_state(c, t));
    const auto mp = forward_kinematics(chain, theta, detail::trajectory_state(c, t + h));
    const auto mm = forward_kinematics(chain, theta, detail::trajectory_state(c, t - h));
    for (std::size_t b = 0; b < m.size(); ++b) {
      const Mat3 w_skew = m[b].rotation.transpose() * (mp[b].rotation - mm[b].rotation) / (2 * h);
      const Vec3 w_num(w_skew(2, 1), w_skew(0, 2), w_skew(1, 0));
      const Vec3 wd_num = (mp[b].omega - mm[b].omega) / (2 * h);
      const Vec3 v_num = (mp[b].position - mm[b].position) / (2 * h);
      const Vec3 a_num = (mp[b].velocity - mm[b].velocity) / (2 * h);
      const Vec3 a_num2 = (mp[b].position - 2 * m[b].position + mm[b].position) / (h * h);
      worst = std::max({worst, (w_num - m[b].omega).norm(), (wd_num - m[b].omega_dot).norm(),
                        (v_num - m[b].velocity).norm(), (a_num - m[b].acceleration).norm(),
                        1e-3 * (a_num2 - m[b].acceleration).norm()});
    }
  }
  return {"velocity/acceleration consistency", worst <= 1e-6,
          "max deviation from central differences = " + detail::fmt(worst)};
}

/// Every posterior covariance and innovation covariance of a filter run is
/// symmetric positive semidefinite (W positive definite).
inline CheckResult check_covariance_psd(const ExperimentConfig& c, std::uint64_t seed) {
  const EstimationProblem p = make_problem(c);
  const MeasurementBatch data = synthesize_dataset(c, seed);
  const FilterRun run = run_filter(p.chain, p.prior.theta0(), data, p.x0, p.P0, p.filter);
  double min_p = 1.0, min_w = 1.0, asym = 0.0;
  for (std::size_t i = 1; i < run.beliefs.size(); ++i) {
    const auto& b = run.beliefs[i];
    asym = std::max(asym, (b.P - b.P.transpose()).cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<MatX> ep(b.P, Eigen::EigenvaluesOnly);
    Eigen::SelfAdjointEigenSolver<MatX> ew(b.W, Eigen::EigenvaluesOnly);
    min_p = std::min(min_p, ep.eigenvalues().minCoeff() / std::max(1.0, ep.eigenvalues().maxCoeff()));
    min_w = std::min(min_w, ew.eigenvalues().minCoeff());
  }
  const bool ok = asym <= 1e-12 && min_p >= -1e-12 && min_w > 0.0;
  return {"PSD covariance", ok,
          "min eig P (scaled) = " + detail::fmt(min_p) + ", min eig W = " + detail::fmt(min_w) +
              ", asymmetry = " + detail::fmt(asym)};
}

/// The optimiser's one-sided gradient agrees with a central difference.
inline CheckResult check_gradient(const ExperimentConfig& c, std::uint64_t seed) {
  const EstimationProblem p = make_problem(c);
  const MeasurementBatch data = synthesize_dataset(c, seed);
  const std::size_t K = data.size();
  double worst = 0.0;
  for (const ParameterVector& theta : {p.prior.theta0(), theta_true(c)}) {
    const GradientResult g = fd_gradient(p, theta, data, K, c.epsilon);
    const double h = 1e-4;
    VecX central(theta.size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      ParameterVector tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      central[i] = (cost_S(p, tp, data, K) - cost_S(p, tm, data, K)) / (2 * h);
    }
    // one-sided truncation error is about eps * |S''| / 2
    worst = std::max(worst, (g.gradient - central).cwiseAbs().maxCoeff() / std::max(1e3, central.norm()));
  }
  return {"gradient vs central difference", worst <= 1e-3, "max scaled deviation = " + detail::fmt(worst)};
}

/// gamma = lambda / K, and one descent iteration moves theta by exactly gamma * grad.
inline CheckResult check_learning_rate(const ExperimentConfig& c, std::uint64_t seed) {
  const EstimationProblem p = make_problem(c);
  const MeasurementBatch data = synthesize_dataset(c, seed);
  OptimizerConfig oc = make_optimizer(c);
  bool ok = true;
  double worst = 0.0;
  for (std::size_t K : {std::size_t{1}, std::size_t{30}, std::size_t{75}, data.size()}) {
    ok = ok && oc.learning_rate(K) == oc.lambda / static_cast<double>(K);
    OptimizerConfig one = oc;
    one.max_iterations = 1;
    one.o_min = 1e-300;
    one.odelta_min = 1e-300;
    const NodeResult r = optimize_on_node(p, p.prior.theta0(), data, K, one, true);
    const GradientResult g = fd_gradient(p, p.prior.theta0(), data, K, oc.eps_fd);
    const ParameterVector expect = p.prior.theta0() - oc.lambda / static_cast<double>(K) * g.gradient;
    worst = std::max(worst, (r.theta - expect).cwiseAbs().maxCoeff());
  }
  ok = ok && worst == 0.0;
  return {"learning-rate scaling", ok, "max step deviation = " + detail::fmt(worst)};
}

/// In a pipeline run each successor waits for beta_{l+1} = K_l + alpha and
/// starts no earlier than its predecessor finished.
inline CheckResult check_growing_strategy(const ExperimentConfig& c, std::uint64_t seed, std::size_t nodes = 4) {
  auto p = std::make_shared<const EstimationProblem>(make_problem(c));
  const MeasurementBatch data = synthesize_dataset(c, seed);
  ExperimentConfig lc = c;
  lc.timing = "logical";
  const ExperimentTrace tr = run_topology(make_topology(lc, nodes), p, data);
  bool ok = tr.ok() && tr.node_traces.size() == nodes;
  std::string detail = tr.ok() ? "" : tr.errors.front();
  for (std::size_t l = 0; ok && l < nodes; ++l) {
    const auto& n = tr.node_traces[l];
    if (n.passes.empty()) {
      ok = l + 1 == nodes;  // only the last node may run on the end-of-stream fallback
      break;
    }
    const std::size_t beta = l == 0 ? c.beta1 : tr.node_traces[l - 1].passes.front().K + c.alpha;
    if (n.beta != beta) ok = false;
    if (n.beta && n.passes.front().K < *n.beta) ok = false;
    if (l > 0 && n.passes.front().start < tr.node_traces[l - 1].passes.front().finish) ok = false;
    detail += "K" + std::to_string(l + 1) + "=" + std::to_string(n.passes.front().K) +
              (n.beta ? "(beta " + std::to_string(*n.beta) + ") " : " ");
  }
  return {"growing strategy", ok, detail};
}

/// The descent stops at the iteration cap when the exit rules cannot fire,
/// and well before it on the nominal problem.
inline CheckResult check_termination(const ExperimentConfig& c, std::uint64_t seed) {
  const EstimationProblem p = make_problem(c);
  const MeasurementBatch data = synthesize_dataset(c, seed);
  OptimizerConfig stuck = make_optimizer(c);
  stuck.o_min = 1e-300;
  stuck.odelta_min = 1e-300;
  stuck.max_iterations = 7;
  const NodeResult capped = optimize_on_node(p, p.prior.theta0(), data, 40, stuck);
  const NodeResult nominal = optimize_on_node(p, p.prior.theta0(), data, data.size(), make_optimizer(c), true);
  const bool ok = capped.report.iterations == 7 && capped.report.criterion == Termination::SafetyCap &&
                  nominal.report.criterion == Termination::ParamChange &&
                  nominal.report.iterations < make_optimizer(c).max_iterations;
  return {"termination under safety cap", ok,
          "capped: " + std::to_string(capped.report.iterations) + " (" + to_string(capped.report.criterion) +
              "), nominal: " + std::to_string(nominal.report.iterations) + " (" +
              to_string(nominal.report.criterion) + ")"};
}

/// Routing transparency: the server sees exactly the generated stream and
/// the parameter timeline is ordered in time.
inline CheckResult check_routing(const ExperimentConfig& c, std::uint64_t seed, std::size_t nodes = 3) {
  auto p = std::make_shared<const EstimationProblem>(make_problem(c));
  const MeasurementBatch data = synthesize_dataset(c, seed);
  ExperimentConfig lc = c;
  lc.timing = "logical";
  const ExperimentTrace tr = run_topology(make_topology(lc, nodes), p, data);
  bool ok = tr.ok() && tr.generated == data.size() && tr.server.received == data.size() &&
            tr.server.steps.size() == data.size();
  for (std::size_t i = 0; ok && i < tr.server.steps.size(); ++i) ok = tr.server.steps[i].k == data[i].k;
  for (std::size_t i = 1; ok && i < tr.server.thetas.size(); ++i) {
    ok = tr.server.thetas[i].time >= tr.server.thetas[i - 1].time;
  }
  return {"routing transparency", ok,
          "generated " + std::to_string(tr.generated) + ", received " + std::to_string(tr.server.received)};
}

/// The e_theta timeline is nonincreasing over successive updates in at least
/// `fraction` of the rows.
inline CheckResult check_etheta_monotone(const std::vector<MetricsRow>& rows, double fraction = 0.9) {
  std::size_t total = 0, good = 0;
  for (const auto& r : rows) {
    if (!r.error.empty() || r.e_theta.size() < 2) continue;
    ++total;
    bool mono = true;
    for (std::size_t i = 2; i < r.e_theta.size(); ++i) {
      mono = mono && r.e_theta[i].second <= r.e_theta[i - 1].second;
    }
    good += mono ? 1 : 0;
  }
  const double share = total == 0 ? 0.0 : static_cast<double>(good) / static_cast<double>(total);
  return {"e_theta nonincreasing", total > 0 && share >= fraction,
          std::to_string(good) + "/" + std::to_string(total) + " trials"};
}

inline std::vector<CheckResult> run_invariant_suites(const ExperimentConfig& c, std::uint64_t seed) {
  return {check_rotation_orthonormality(c, seed), check_motion_consistency(c, seed),
          check_covariance_psd(c, seed),          check_gradient(c, seed),
          check_learning_rate(c, seed),           check_growing_strategy(c, seed),
          check_termination(c, seed),             check_routing(c, seed)};
}

}  // namespace pdual
