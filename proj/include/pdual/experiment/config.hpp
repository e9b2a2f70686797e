#pragma once

// Experiment configuration. Defaults are the two-joint arm evaluation setup:
// shoulder and elbow about y, one IMU per link, quintic reach from rest.

#include "pdual/imu_model.hpp"
#include "pdual/kinematics.hpp"
#include "pdual/param_estimator.hpp"
#include "pdual/state_filter.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdual {

enum class TransportKind { InProcess, Socket };
enum class TimingMode { Logical, Wall };

inline std::string to_string(TransportKind t) {
  return t == TransportKind::Socket ? "socket" : "inproc";
}
inline std::string to_string(TimingMode t) { return t == TimingMode::Wall ? "wall" : "logical"; }

inline TransportKind parse_transport(const std::string& s) {
  if (s == "inproc") return TransportKind::InProcess;
  if (s == "socket") return TransportKind::Socket;
  throw std::invalid_argument("unknown transport '" + s + "'");
}
inline TimingMode parse_timing(const std::string& s) {
  if (s == "logical") return TimingMode::Logical;
  if (s == "wall") return TimingMode::Wall;
  throw std::invalid_argument("unknown timing mode '" + s + "'");
}

struct MountingConfig {
  std::size_t body = 1;
  std::vector<double> phi{0.0, std::numbers::pi, 0.0};
  std::vector<double> r{0.1, 0.0, 0.05};
};

struct ExperimentConfig {
  // chain and sensors
  std::size_t n = 2;
  std::size_t N = 2;
  std::size_t M = 2;
  std::vector<std::vector<double>> joint_axes{{0.0, 1.0, 0.0}, {0.0, 1.0, 0.0}};
  std::vector<double> base_offset{0.0, 0.0, 0.0};
  std::vector<std::vector<double>> nominal_offsets{{0.2, 0.0, 0.0}};
  std::vector<double> base_position{0.0, 0.0, 0.0};
  std::vector<std::vector<double>> base_rotation{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  std::vector<double> gravity{0.0, 0.0, 9.80665};
  std::vector<MountingConfig> mountings{MountingConfig{1}, MountingConfig{2}};

  // sampling and noise
  double dt = 0.01;
  double accel_variance = 0.005;
  double gyro_variance_deg = 0.002;  // in deg^2/s^2, converted to rad^2/s^2
  double jerk_variance = 0.5;

  // parameters
  std::vector<double> theta_true{0.05, 0.0, 0.03};
  std::vector<double> theta0{0.0, 0.0, 0.0};
  std::vector<std::vector<double>> sigma0{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};

  // trajectory
  std::vector<double> q0{0.0, 0.0};
  std::vector<double> qdot0{0.0, 0.0};
  std::vector<double> qddot0{0.0, 0.0};
  std::vector<double> qe{std::numbers::pi / 4.0, std::numbers::pi / 2.0};
  std::vector<double> qdote{0.0, 0.0};
  std::vector<double> qddote{0.0, 0.0};
  double t_e = 1.0;
  double duration = 1.5;
  std::vector<double> P0_diag{1e-4, 1e-4, 1e-2, 1e-2, 1.0, 1.0};

  // optimiser
  double epsilon = 1e-6;
  double lambda = 1e-4;
  double o_min = 2e-4;
  double odelta_min = 30.0;
  std::size_t max_iterations = 5000;

  // pipeline and sweep
  std::size_t nodes_min = 0;
  std::size_t nodes_max = 6;
  std::size_t trials = 50;
  std::size_t alpha = 20;
  std::size_t beta1 = 30;
  std::uint64_t seed = 1;
  std::string transport = "inproc";
  std::string timing = "logical";
  double step_cost = 1e-4;     // logical seconds per filter step
  double hop_latency = 0.0;    // seconds per hop
  int port_base = 0;           // 0: ephemeral loopback ports
  bool realtime_source = false;  // wall mode: pace the source at dt
  bool processes = false;        // run each node in its own process (socket transport)

  double gyro_variance() const {
    const double d2r = std::numbers::pi / 180.0;
    return gyro_variance_deg * d2r * d2r;
  }

  std::size_t sample_count() const {
    return static_cast<std::size_t>(std::llround(duration / dt));
  }

  void validate() const;
};

namespace detail {

inline Vec3 vec3(const std::vector<double>& v, const char* what) {
  if (v.size() != 3) throw std::invalid_argument(std::string(what) + " must have 3 entries");
  return {v[0], v[1], v[2]};
}

inline VecX vecx(const std::vector<double>& v) {
  return Eigen::Map<const VecX>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline MatX matx(const std::vector<std::vector<double>>& rows, const char* what) {
  const auto r = static_cast<Eigen::Index>(rows.size());
  MatX m(r, r);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (rows[static_cast<std::size_t>(i)].size() != rows.size()) {
      throw std::invalid_argument(std::string(what) + " must be square");
    }
    for (Eigen::Index j = 0; j < r; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return m;
}

}  // namespace detail

inline KinematicChain make_chain(const ExperimentConfig& c) {
  std::vector<Vec3> axes;
  for (const auto& a : c.joint_axes) axes.push_back(detail::vec3(a, "joint axis"));
  std::vector<Vec3> offsets{detail::vec3(c.base_offset, "base offset")};
  for (const auto& o : c.nominal_offsets) offsets.push_back(detail::vec3(o, "nominal offset"));
  BaseMotion base;
  base.rotation = detail::matx(c.base_rotation, "base rotation");
  base.position = detail::vec3(c.base_position, "base position");
  std::vector<ImuMounting> imus;
  for (const auto& m : c.mountings) {
    imus.push_back({m.body, detail::vec3(m.r, "mounting position"),
                    detail::vec3(m.phi, "mounting rotation")});
  }
  return {axes, offsets, base, imus, detail::vec3(c.gravity, "gravity")};
}

inline NoiseSpec make_noise(const ExperimentConfig& c) {
  return NoiseSpec::uniform(c.M, c.accel_variance, c.gyro_variance());
}

inline OptimizerConfig make_optimizer(const ExperimentConfig& c) {
  return {c.lambda, c.epsilon, c.o_min, c.odelta_min, c.max_iterations};
}

inline VecX initial_state(const ExperimentConfig& c) {
  VecX x(3 * c.n);
  x << detail::vecx(c.q0), detail::vecx(c.qdot0), detail::vecx(c.qddot0);
  return x;
}

inline EstimationProblem make_problem(const ExperimentConfig& c) {
  EstimationProblem p{make_chain(c),
                      FilterConfig{VecX::Constant(static_cast<Eigen::Index>(c.n), c.jerk_variance),
                                   make_noise(c).covariance()},
                      Prior{detail::vecx(c.theta0), detail::matx(c.sigma0, "sigma0")},
                      initial_state(c),
                      detail::vecx(c.P0_diag).asDiagonal(),
                      0.0};
  return p;
}

inline ParameterVector theta_true(const ExperimentConfig& c) { return detail::vecx(c.theta_true); }

inline void ExperimentConfig::validate() const {
  if (joint_axes.size() != n) throw std::invalid_argument("joint_axes must have n entries");
  if (N != n) throw std::invalid_argument("serial revolute chain requires N == n");
  if (nominal_offsets.size() + 1 != N) {
    throw std::invalid_argument("nominal_offsets must have N-1 entries");
  }
  if (mountings.size() != M) throw std::invalid_argument("mountings must have M entries");
  const std::size_t p = 3 * (N - 1);
  if (theta_true.size() != p || theta0.size() != p || sigma0.size() != p) {
    throw std::invalid_argument("theta_true, theta0 and sigma0 must have 3(N-1) entries");
  }
  for (const auto* v : {&q0, &qdot0, &qddot0, &qe, &qdote, &qddote}) {
    if (v->size() != n) throw std::invalid_argument("boundary states must have n entries");
  }
  for (const auto* v : {&qdot0, &qddot0, &qdote, &qddote}) {
    for (double d : *v) {
      if (d != 0.0) throw std::invalid_argument("quintic trajectory is rest-to-rest");
    }
  }
  if (P0_diag.size() != 3 * n) throw std::invalid_argument("P0_diag must have 3n entries");
  if (!(dt > 0.0) || !(duration > 0.0) || !(t_e > 0.0)) {
    throw std::invalid_argument("dt, duration and t_e must be positive");
  }
  if (nodes_min > nodes_max) throw std::invalid_argument("nodes_min exceeds nodes_max");
  if (trials < 1) throw std::invalid_argument("trials must be at least 1");
  if (beta1 < 1) throw std::invalid_argument("beta1 must be at least 1");
  if (!(step_cost > 0.0) || hop_latency < 0.0) {
    throw std::invalid_argument("step_cost must be positive and hop_latency nonnegative");
  }
  if (processes && parse_transport(transport) != TransportKind::Socket) {
    throw std::invalid_argument("processes requires the socket transport");
  }
  parse_transport(transport);
  parse_timing(timing);
  make_optimizer(*this).validate();
  make_chain(*this);
}

// JSON mapping mirrors the field names above.

inline void to_json(nlohmann::ordered_json& j, const MountingConfig& m) {
  j = nlohmann::ordered_json{{"body", m.body}, {"phi", m.phi}, {"r", m.r}};
}
inline void from_json(const nlohmann::ordered_json& j, MountingConfig& m) {
  j.at("body").get_to(m.body);
  j.at("phi").get_to(m.phi);
  j.at("r").get_to(m.r);
}

#define PDUAL_CONFIG_FIELDS(X)                                                         \
  X(n) X(N) X(M) X(joint_axes) X(base_offset) X(nominal_offsets) X(base_position)      \
  X(base_rotation) X(gravity) X(mountings) X(dt) X(accel_variance) X(gyro_variance_deg) \
  X(jerk_variance) X(theta_true) X(theta0) X(sigma0) X(q0) X(qdot0) X(qddot0) X(qe)    \
  X(qdote) X(qddote) X(t_e) X(duration) X(P0_diag) X(epsilon) X(lambda) X(o_min)       \
  X(odelta_min) X(max_iterations) X(nodes_min) X(nodes_max) X(trials) X(alpha) X(beta1) \
  X(seed) X(transport) X(timing) X(step_cost) X(hop_latency) X(port_base) X(realtime_source) \
  X(processes)

inline void to_json(nlohmann::ordered_json& j, const ExperimentConfig& c) {
  j = nlohmann::ordered_json::object();
#define PDUAL_TO_JSON(f) j[#f] = c.f;
  PDUAL_CONFIG_FIELDS(PDUAL_TO_JSON)
#undef PDUAL_TO_JSON
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::ordered_json& j, ExperimentConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  const nlohmann::ordered_json known = c;
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("unknown config key '" + key + "'");
  }
#define PDUAL_FROM_JSON(f) \
  if (j.contains(#f)) j.at(#f).get_to(c.f);
  PDUAL_CONFIG_FIELDS(PDUAL_FROM_JSON)
#undef PDUAL_FROM_JSON
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  ExperimentConfig c;
  from_json(nlohmann::ordered_json::parse(in), c);
  c.validate();
  return c;
}

/// Config echo: every field plus the converted gyro variance.
inline nlohmann::ordered_json config_echo(const ExperimentConfig& c) {
  nlohmann::ordered_json j = c;
  j["gyro_variance_rad"] = c.gyro_variance();
  return j;
}

}  // namespace pdual
