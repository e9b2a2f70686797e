#pragma once

#include "pdual/kinematics.hpp"

#include <stdexcept>

namespace pdual {

/// Rest-to-rest fifth-order polynomial from q0 to qe over [0, t_end]; holds
/// qe with zero derivatives afterwards.
class QuinticTrajectory {
 public:
  QuinticTrajectory(VecX q0, VecX qe, double t_end)
      : q0_(std::move(q0)), qe_(std::move(qe)), t_end_(t_end) {
    if (!(t_end_ > 0.0)) throw std::invalid_argument("quintic duration must be positive");
    if (q0_.size() != qe_.size()) throw DimensionError("quintic endpoints differ in length");
  }

  GeneralizedState operator()(double t) const {
    if (t < 0.0) throw std::invalid_argument("quintic evaluated at negative time");
    const VecX delta = qe_ - q0_;
    if (t >= t_end_) {
      return {qe_, VecX::Zero(qe_.size()), VecX::Zero(qe_.size())};
    }
    const double s = t / t_end_;
    const double s2 = s * s, s3 = s2 * s, s4 = s3 * s, s5 = s4 * s;
    const double p = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
    const double dp = (30.0 * s2 - 60.0 * s3 + 30.0 * s4) / t_end_;
    const double ddp = (60.0 * s - 180.0 * s2 + 120.0 * s3) / (t_end_ * t_end_);
    return {q0_ + p * delta, dp * delta, ddp * delta};
  }

  double duration() const { return t_end_; }

 private:
  VecX q0_, qe_;
  double t_end_;
};

inline GeneralizedState quintic(const VecX& q0, const VecX& qe, double t_end, double t) {
  return QuinticTrajectory(q0, qe, t_end)(t);
}

}  // namespace pdual
