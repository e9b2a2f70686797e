#pragma once

// MAP estimation of the kinematic parameters. The cost S re-runs the state
// filter over the data prefix for every probed theta, so each evaluation is
// linear in the number of samples.

#include "pdual/imu_model.hpp"
#include "pdual/kinematics.hpp"
#include "pdual/state_filter.hpp"

#include <chrono>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace pdual {

class Prior {
 public:
  Prior() = default;
  Prior(ParameterVector theta0, MatX sigma0) : theta0_(std::move(theta0)), sigma0_(std::move(sigma0)) {
    if (sigma0_.rows() != theta0_.size() || sigma0_.cols() != theta0_.size()) {
      throw DimensionError("prior covariance must be square and match theta0");
    }
    if ((sigma0_ - sigma0_.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
      throw std::invalid_argument("prior covariance must be symmetric");
    }
    llt_.compute(sigma0_);
    if (llt_.info() != Eigen::Success) {
      throw std::invalid_argument("prior covariance must be positive definite");
    }
    log_det_ = 2.0 * llt_.matrixL().toDenseMatrix().diagonal().array().log().sum();
  }

  const ParameterVector& theta0() const { return theta0_; }
  const MatX& sigma0() const { return sigma0_; }
  double log_det() const { return log_det_; }

  /// log|Sigma0| + (theta - theta0)^T Sigma0^-1 (theta - theta0)
  double penalty(const ParameterVector& theta) const {
    const VecX d = theta - theta0_;
    return log_det_ + d.dot(llt_.solve(d));
  }

 private:
  ParameterVector theta0_;
  MatX sigma0_;
  Eigen::LLT<MatX> llt_;
  double log_det_ = 0.0;
};

/// Everything the cost needs besides the data and theta.
struct EstimationProblem {
  KinematicChain chain;
  FilterConfig filter;
  Prior prior;
  VecX x0;
  MatX P0;
  double t0 = 0.0;
};

/// Work accounting; filter_steps is the data-size-weighted evaluation count.
struct CostCounter {
  std::size_t evaluations = 0;
  std::size_t filter_steps = 0;
};

/// S_K(theta) over the first K samples of `data`.
inline double cost_S(const EstimationProblem& problem, const ParameterVector& theta,
                     const MeasurementBatch& data, std::size_t K, CostCounter* counter = nullptr) {
  problem.chain.check_theta(theta);
  if (K > data.size()) throw std::out_of_range("cost prefix exceeds available data");
  double s = problem.prior.penalty(theta);
  FilterBelief belief = initial_belief(problem.x0, problem.P0, problem.t0);
  for (std::size_t i = 0; i < K; ++i) {
    const TransitionModel model = build_transition(
        problem.chain.dof(), data[i].timestamp - belief.time, problem.filter.jerk_variance);
    auto [next, rec] = filter_step(belief, data[i].y, theta, problem.chain, model, problem.filter);
    next.time = data[i].timestamp;
    s += rec.log_det_W + rec.nis;
    belief = std::move(next);
  }
  if (counter != nullptr) {
    ++counter->evaluations;
    counter->filter_steps += K;
  }
  return s;
}

struct GradientResult {
  double value = 0.0;  // S at the base point
  VecX gradient;
};

/// One-sided finite-difference gradient: 1 + dim(theta) cost evaluations.
inline GradientResult fd_gradient(const EstimationProblem& problem, const ParameterVector& theta,
                                  const MeasurementBatch& data, std::size_t K, double eps,
                                  CostCounter* counter = nullptr) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  GradientResult r;
  r.value = cost_S(problem, theta, data, K, counter);
  r.gradient.resize(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    ParameterVector probe = theta;
    probe[i] += eps;
    r.gradient[i] = (cost_S(problem, probe, data, K, counter) - r.value) / eps;
  }
  return r;
}

struct OptimizerConfig {
  double lambda = 1e-4;        // learning-rate constant, gamma = lambda / K
  double eps_fd = 1e-6;        // finite-difference step
  double o_min = 2e-4;         // bound on ||theta_{p+1} - theta_p||_inf
  double odelta_min = 30.0;    // bound on ||gradient||_2
  std::size_t max_iterations = 5000;

  void validate() const {
    if (!(lambda > 0.0) || !(eps_fd > 0.0) || !(o_min > 0.0) || !(odelta_min > 0.0) ||
        max_iterations < 1) {
      throw std::invalid_argument("optimizer settings must be positive");
    }
  }

  double learning_rate(std::size_t K) const { return lambda / static_cast<double>(K); }
};

enum class Termination { ParamChange, GradientNorm, SafetyCap };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::ParamChange: return "param_change";
    case Termination::GradientNorm: return "gradient_norm";
    case Termination::SafetyCap: return "safety_cap";
  }
  return "unknown";
}

struct TerminationReport {
  std::size_t iterations = 0;
  double o = 0.0;
  double o_delta = 0.0;
  Termination criterion = Termination::SafetyCap;
  double wall_seconds = 0.0;
  CostCounter work;
  double initial_cost = 0.0;  // S at theta_init
};

struct NodeResult {
  ParameterVector theta;
  TerminationReport report;
};

/// Gradient descent with the greedy exit rules. On the final node only the
/// parameter-change criterion may end the descent.
inline NodeResult optimize_on_node(const EstimationProblem& problem,
                                   const ParameterVector& theta_init, const MeasurementBatch& data,
                                   std::size_t K, const OptimizerConfig& config,
                                   bool final_node = false) {
  config.validate();
  if (K < 1) throw std::invalid_argument("node optimisation needs at least one sample");
  const auto start = std::chrono::steady_clock::now();
  const double gamma = config.learning_rate(K);

  NodeResult out;
  ParameterVector theta = theta_init;
  TerminationReport& rep = out.report;
  while (true) {
    const GradientResult g = fd_gradient(problem, theta, data, K, config.eps_fd, &rep.work);
    if (rep.iterations == 0) rep.initial_cost = g.value;
    ++rep.iterations;
    const ParameterVector next = theta - gamma * g.gradient;
    rep.o = (next - theta).cwiseAbs().maxCoeff();
    rep.o_delta = g.gradient.norm();
    theta = next;
    if (!final_node && rep.o_delta <= config.odelta_min) {
      rep.criterion = Termination::GradientNorm;
      break;
    }
    if (rep.o <= config.o_min) {
      rep.criterion = Termination::ParamChange;
      break;
    }
    if (rep.iterations >= config.max_iterations) {
      rep.criterion = Termination::SafetyCap;
      break;
    }
  }
  out.theta = std::move(theta);
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace pdual
