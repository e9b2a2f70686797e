#pragma once

// Gyroscope + accelerometer measurement model for body-mounted IMUs.
// Output y stacks one 6-block per IMU: [accel; gyro], IMUs in index order.

#include "pdual/kinematics.hpp"

#include <random>
#include <vector>

namespace pdual {

/// Per-IMU diagonal noise variances, accel in (m/s^2)^2, gyro in (rad/s)^2.
struct NoiseSpec {
  std::vector<Vec3> accel_variance;
  std::vector<Vec3> gyro_variance;

  static NoiseSpec uniform(std::size_t imu_count, double accel_var, double gyro_var) {
    return {std::vector<Vec3>(imu_count, Vec3::Constant(accel_var)),
            std::vector<Vec3>(imu_count, Vec3::Constant(gyro_var))};
  }

  std::size_t imu_count() const { return accel_variance.size(); }

  /// Block-diagonal Q_v (6M x 6M).
  MatX covariance() const {
    const std::size_t m = imu_count();
    if (gyro_variance.size() != m) throw DimensionError("noise spec accel/gyro counts differ");
    VecX diag(6 * m);
    for (std::size_t j = 0; j < m; ++j) {
      if ((accel_variance[j].array() < 0.0).any() || (gyro_variance[j].array() < 0.0).any()) {
        throw std::invalid_argument("noise variances must be nonnegative");
      }
      diag.segment<3>(6 * j) = accel_variance[j];
      diag.segment<3>(6 * j + 3) = gyro_variance[j];
    }
    return diag.asDiagonal();
  }
};

struct MeasurementVector {
  std::size_t k = 0;
  double timestamp = 0.0;
  VecX y;
};

using MeasurementBatch = std::vector<MeasurementVector>;

/// Noise-free h(x, theta) from precomputed body motion.
inline VecX measure_from_motion(const KinematicChain& chain, const BodyMotion& motion) {
  VecX y(chain.output_size());
  const Vec3& g = chain.gravity();
  for (std::size_t j = 0; j < chain.imu_count(); ++j) {
    const auto& mount = chain.imus()[j];
    const auto& b = motion.at(mount.body_index);
    const Mat3 rs = rodrigues(mount.rotation);
    const Mat3 rj = b.rotation * rs;
    const Vec3& rsp = mount.position;
    const Vec3 lever = b.omega_dot.cross(rsp) + b.omega.cross(b.omega.cross(rsp));
    y.segment<3>(6 * j) = rj.transpose() * (b.acceleration + b.rotation * lever + g);
    y.segment<3>(6 * j + 3) = rs.transpose() * b.omega;
  }
  return y;
}

inline VecX measure(const KinematicChain& chain, const ParameterVector& theta,
                    const GeneralizedState& x) {
  return measure_from_motion(chain, forward_kinematics(chain, theta, x));
}

/// measure() plus white Gaussian noise drawn from rng.
template <class Rng>
VecX synthesize(const KinematicChain& chain, const ParameterVector& theta,
                const GeneralizedState& x, const NoiseSpec& noise, Rng& rng) {
  if (noise.imu_count() != chain.imu_count()) {
    throw DimensionError("noise spec IMU count does not match chain");
  }
  VecX y = measure(chain, theta, x);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t j = 0; j < chain.imu_count(); ++j) {
    for (int c = 0; c < 3; ++c) {
      y[6 * j + c] += std::sqrt(noise.accel_variance[j][c]) * normal(rng);
    }
    for (int c = 0; c < 3; ++c) {
      y[6 * j + 3 + c] += std::sqrt(noise.gyro_variance[j][c]) * normal(rng);
    }
  }
  return y;
}

}  // namespace pdual
