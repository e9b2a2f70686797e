#pragma once

#include "pdual/experiment/config.hpp"
#include "pdual/experiment/trajectory.hpp"
#include "pdual/imu_model.hpp"

#include <cstdint>
#include <random>

namespace pdual {

/// Samples the quintic at t_k = k dt, k = 1..duration/dt, and synthesizes
/// noisy IMU data at theta_true.
inline MeasurementBatch synthesize_dataset(const ExperimentConfig& config, std::uint64_t seed) {
  const KinematicChain chain = make_chain(config);
  const NoiseSpec noise = make_noise(config);
  const ParameterVector theta = theta_true(config);
  const QuinticTrajectory traj(detail::vecx(config.q0), detail::vecx(config.qe), config.t_e);
  std::mt19937_64 rng(seed);
  MeasurementBatch batch;
  const std::size_t count = config.sample_count();
  batch.reserve(count);
  for (std::size_t k = 1; k <= count; ++k) {
    const double t = static_cast<double>(k) * config.dt;
    batch.push_back({k, t, synthesize(chain, theta, traj(t), noise, rng)});
  }
  return batch;
}

/// Seed of one trial, decorrelated from neighbouring trial indices.
inline std::uint64_t trial_seed(std::uint64_t base, std::size_t trial) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(trial) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace pdual
