#pragma once

// Extended Kalman filter over the near-constant-acceleration joint model.
// Besides the posterior, every step reports the predictive innovation
// statistics that feed the parameter likelihood.

#include "pdual/imu_model.hpp"
#include "pdual/jacobians.hpp"
#include "pdual/kinematics.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

namespace pdual {

class FilterError : public std::runtime_error {
 public:
  FilterError(const std::string& what, double condition)
      : std::runtime_error(what), condition_(condition) {}
  double condition() const { return condition_; }

 private:
  double condition_;
};

struct TransitionModel {
  double dt = 0.0;
  MatX F;    // 3n x 3n
  MatX Q_w;  // 3n x 3n
};

/// F = [[1, dt, dt^2/2], [0, 1, dt], [0, 0, 1]] (x) I_n and the jerk-driven
/// Q_w = [[dt^5/20, dt^4/8, dt^3/6], [dt^4/8, dt^3/3, dt^2/2], [dt^3/6, dt^2/2, dt]] (x) Q_eps.
inline TransitionModel build_transition(std::size_t n, double dt, const VecX& jerk_variance) {
  if (!(dt > 0.0)) throw std::invalid_argument("transition dt must be positive");
  if (static_cast<std::size_t>(jerk_variance.size()) != n) {
    throw DimensionError("jerk variance length must equal dof");
  }
  Eigen::Matrix3d f;
  f << 1.0, dt, 0.5 * dt * dt,
       0.0, 1.0, dt,
       0.0, 0.0, 1.0;
  const double dt2 = dt * dt, dt3 = dt2 * dt, dt4 = dt3 * dt, dt5 = dt4 * dt;
  Eigen::Matrix3d q;
  q << dt5 / 20.0, dt4 / 8.0, dt3 / 6.0,
       dt4 / 8.0, dt3 / 3.0, dt2 / 2.0,
       dt3 / 6.0, dt2 / 2.0, dt;

  const auto ni = static_cast<Eigen::Index>(n);
  TransitionModel model;
  model.dt = dt;
  model.F = MatX::Zero(3 * ni, 3 * ni);
  model.Q_w = MatX::Zero(3 * ni, 3 * ni);
  const MatX qe = jerk_variance.asDiagonal();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      model.F.block(r * ni, c * ni, ni, ni) = f(r, c) * MatX::Identity(ni, ni);
      model.Q_w.block(r * ni, c * ni, ni, ni) = q(r, c) * qe;
    }
  }
  return model;
}

/// Default initial covariance: tight on q, looser on qdot, loose on qddot.
inline MatX default_initial_covariance(std::size_t n) {
  const auto ni = static_cast<Eigen::Index>(n);
  VecX d(3 * ni);
  d << VecX::Constant(ni, 1e-4), VecX::Constant(ni, 1e-2), VecX::Constant(ni, 1.0);
  return d.asDiagonal();
}

struct FilterConfig {
  VecX jerk_variance;    // Q_eps diagonal, length n
  MatX measurement_cov;  // Q_v, 6M x 6M
  double max_condition = 1e12;
  bool joseph_update = true;  // false selects the literal (I - K H) P form
};

struct FilterBelief {
  VecX xhat;
  MatX P;
  VecX innovation;
  MatX W;
  std::size_t k = 0;
  double time = 0.0;
};

struct StepRecord {
  VecX innovation;
  double log_det_W = 0.0;
  double nis = 0.0;  // innovation^T W^-1 innovation
};

inline FilterBelief initial_belief(const VecX& x0, const MatX& P0, double t0 = 0.0) {
  FilterBelief b;
  b.xhat = x0;
  b.P = P0;
  b.time = t0;
  return b;
}

/// Measurement update given the prediction, its output and the linearisation H.
/// Returns the posterior (k and time left to the caller) and the innovation record.
inline std::pair<FilterBelief, StepRecord> kalman_update(const VecX& x_pred, const MatX& P_pred,
                                                         const VecX& y, const VecX& y_pred,
                                                         const MatX& H,
                                                         const FilterConfig& config) {
  const Eigen::Index dim = x_pred.size();
  const MatX PHt = P_pred * H.transpose();
  MatX W = H * PHt + config.measurement_cov;
  W = 0.5 * (W + W.transpose());

  Eigen::LDLT<MatX> ldlt(W);
  const double rcond = ldlt.info() == Eigen::Success ? ldlt.rcond() : 0.0;
  const VecX d = ldlt.vectorD();
  const bool singular = (d.array() <= 0.0).any();
  if (ldlt.info() != Eigen::Success || singular || !(rcond > 0.0) || rcond * config.max_condition < 1.0) {
    const double cond = rcond > 0.0 && !singular ? 1.0 / rcond : std::numeric_limits<double>::infinity();
    std::ostringstream msg;
    msg << "innovation covariance not invertible (condition estimate " << cond << ")";
    throw FilterError(msg.str(), cond);
  }

  FilterBelief next;
  next.innovation = y - y_pred;
  const MatX K = ldlt.solve(PHt.transpose()).transpose();
  next.xhat = x_pred + K * next.innovation;
  if (config.joseph_update) {
    const MatX IKH = MatX::Identity(dim, dim) - K * H;
    next.P = IKH * P_pred * IKH.transpose() + K * config.measurement_cov * K.transpose();
  } else {
    next.P = (MatX::Identity(dim, dim) - K * H) * P_pred;
  }
  next.P = 0.5 * (next.P + next.P.transpose());

  StepRecord rec;
  rec.innovation = next.innovation;
  rec.log_det_W = d.array().log().sum();
  rec.nis = next.innovation.dot(ldlt.solve(next.innovation));
  next.W = std::move(W);
  return {std::move(next), std::move(rec)};
}

/// One predict/update cycle. H is linearised at the predicted state F xhat.
inline std::pair<FilterBelief, StepRecord> filter_step(const FilterBelief& belief, const VecX& y,
                                                       const ParameterVector& theta,
                                                       const KinematicChain& chain,
                                                       const TransitionModel& model,
                                                       const FilterConfig& config) {
  const auto dim = static_cast<Eigen::Index>(chain.state_size());
  if (belief.xhat.size() != dim || belief.P.rows() != dim || belief.P.cols() != dim) {
    throw DimensionError("belief dimension does not match chain");
  }
  if (static_cast<std::size_t>(y.size()) != chain.output_size()) {
    throw DimensionError("measurement length does not match 6M");
  }

  const VecX x_pred = model.F * belief.xhat;
  const MatX P_pred = model.F * belief.P * model.F.transpose() + model.Q_w;
  const GeneralizedState xs = GeneralizedState::from_stacked(x_pred);
  const BodyMotion motion = forward_kinematics(chain, theta, xs);
  const VecX y_pred = measure_from_motion(chain, motion);
  const MatX H = assemble_H(chain, theta, xs, motion, y_pred);

  try {
    auto result = kalman_update(x_pred, P_pred, y, y_pred, H, config);
    result.first.k = belief.k + 1;
    result.first.time = belief.time + model.dt;
    return result;
  } catch (const FilterError& e) {
    throw FilterError("step " + std::to_string(belief.k + 1) + ": " + e.what(), e.condition());
  }
}

struct FilterRun {
  std::vector<FilterBelief> beliefs;  // initial belief first
  std::vector<StepRecord> records;
};

/// Sequential filter over the first `count` measurements of `batch`
/// (all of them when count exceeds the batch). Step k uses
/// dt = t_k - t_{k-1}, with t_0 the time of the initial belief.
inline FilterRun run_filter(const KinematicChain& chain, const ParameterVector& theta,
                            const MeasurementBatch& batch, const VecX& x0, const MatX& P0,
                            const FilterConfig& config,
                            std::size_t count = static_cast<std::size_t>(-1),
                            double t0 = 0.0) {
  FilterRun run;
  const std::size_t steps = std::min(count, batch.size());
  run.beliefs.reserve(steps + 1);
  run.records.reserve(steps);
  run.beliefs.push_back(initial_belief(x0, P0, t0));
  for (std::size_t i = 0; i < steps; ++i) {
    const auto& prev = run.beliefs.back();
    const double dt = batch[i].timestamp - prev.time;
    const TransitionModel model = build_transition(chain.dof(), dt, config.jerk_variance);
    auto [next, rec] = filter_step(prev, batch[i].y, theta, chain, model, config);
    next.time = batch[i].timestamp;
    run.beliefs.push_back(std::move(next));
    run.records.push_back(std::move(rec));
  }
  return run;
}

}  // namespace pdual
