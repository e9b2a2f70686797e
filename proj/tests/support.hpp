#pragma once

#include "pdual/pdual.hpp"

#include <functional>
#include <random>

namespace pdual::testing {

inline ExperimentConfig arm_setup() { return ExperimentConfig{}; }

inline ExperimentConfig noiseless() {
  ExperimentConfig c;
  c.accel_variance = 0.0;
  c.gyro_variance_deg = 0.0;
  return c;
}

/// Three joints about different axes, moving pedestal, four IMUs.
inline KinematicChain moving_base_chain() {
  BaseMotion base;
  base.rotation = rodrigues(Vec3(0.2, -0.4, 0.3));
  base.position = Vec3(0.1, -0.2, 0.5);
  base.omega = Vec3(0.3, -0.5, 0.2);
  base.omega_dot = Vec3(-0.4, 0.1, 0.6);
  base.velocity = Vec3(0.2, 0.1, -0.3);
  base.acceleration = Vec3(0.5, -0.7, 0.2);
  std::vector<Vec3> axes{Vec3(0, 0, 1), Vec3(0, 1, 0), Vec3(1, 2, 2).normalized()};
  std::vector<Vec3> offsets{Vec3(0.05, 0.0, 0.1), Vec3(0.3, 0.02, 0.0), Vec3(0.25, -0.05, 0.04)};
  std::vector<ImuMounting> imus{{1, Vec3(0.1, 0.02, 0.05), Vec3(0.1, 0.2, -0.3)},
                                {2, Vec3(0.15, -0.03, 0.02), Vec3(0.0, 3.0, 0.1)},
                                {3, Vec3(0.05, 0.05, -0.02), Vec3(-0.5, 0.2, 0.7)},
                                {0, Vec3(0.0, 0.1, 0.0), Vec3(0.0, 0.0, 0.0)}};
  return {axes, offsets, base, imus};
}

inline GeneralizedState random_state(std::size_t n, std::mt19937_64& rng, double scale = 2.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  GeneralizedState x = GeneralizedState::zero(n);
  for (std::size_t i = 0; i < n; ++i) {
    x.q[static_cast<Eigen::Index>(i)] = u(rng);
    x.qdot[static_cast<Eigen::Index>(i)] = u(rng);
    x.qddot[static_cast<Eigen::Index>(i)] = u(rng);
  }
  return x;
}

/// Central differences of f over the stacked state.
inline MatX numeric_jacobian(const std::function<VecX(const VecX&)>& f, const VecX& x, double h = 1e-6) {
  const VecX f0 = f(x);
  MatX j(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VecX xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    j.col(i) = (f(xp) - f(xm)) / (2 * h);
  }
  return j;
}

}  // namespace pdual::testing
