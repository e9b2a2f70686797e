#pragma once

// Serial revolute chain: rotation helpers, chain description and the
// recursive rotational/translational forward kinematics.
//
// Body 0 is the pedestal (trunk). Joint i (1..n) rotates body i relative to
// body i-1 about an axis fixed in frame i-1. Link offsets r^{i,i+1} are
// expressed in frame i; the base offset r^{0,1} is a known constant and the
// remaining n-1 offsets carry the individual correction theta.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pdual {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// Parameter vector theta: stacked per-link offset corrections, length 3(N-1).
using ParameterVector = Eigen::VectorXd;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline Mat3 skew(const Vec3& a) {
  Mat3 m;
  m << 0.0, -a.z(), a.y(),
       a.z(), 0.0, -a.x(),
       -a.y(), a.x(), 0.0;
  return m;
}

/// Below this angle the Rodrigues coefficients use their Taylor series.
inline constexpr double kRodriguesSeriesThreshold = 1e-6;

/// Axis-angle vector to rotation matrix.
inline Mat3 rodrigues(const Vec3& phi) {
  const double angle_sq = phi.squaredNorm();
  const double angle = std::sqrt(angle_sq);
  double c1;  // sin(a)/a
  double c2;  // (1-cos(a))/a^2
  if (angle < kRodriguesSeriesThreshold) {
    c1 = 1.0 - angle_sq / 6.0;
    c2 = 0.5 - angle_sq / 24.0;
  } else {
    c1 = std::sin(angle) / angle;
    c2 = (1.0 - std::cos(angle)) / angle_sq;
  }
  const Mat3 k = skew(phi);
  return Mat3::Identity() + c1 * k + c2 * k * k;
}

inline bool is_rotation(const Mat3& r, double tol) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

struct ImuMounting {
  std::size_t body_index = 1;
  Vec3 position = Vec3::Zero();  // r_s in the attached body frame, m
  Vec3 rotation = Vec3::Zero();  // axis-angle phi_s relative to the body, rad
};

/// Pedestal pose and motion. Angular quantities in the pedestal frame,
/// translational quantities in the inertial frame.
struct BaseMotion {
  Mat3 rotation = Mat3::Identity();
  Vec3 position = Vec3::Zero();
  Vec3 omega = Vec3::Zero();
  Vec3 omega_dot = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 acceleration = Vec3::Zero();
};

/// Standard gravity, added as a specific-force bias inside the accelerometer model.
inline const Vec3 kDefaultGravity{0.0, 0.0, 9.80665};

class KinematicChain {
 public:
  /// joint_axes[i] is the axis of joint i+1 in frame i; nominal_offsets[i] is
  /// r~^{i,i+1} in frame i. Both have one entry per joint.
  KinematicChain(std::vector<Vec3> joint_axes, std::vector<Vec3> nominal_offsets,
                 BaseMotion base, std::vector<ImuMounting> imus,
                 Vec3 gravity = kDefaultGravity)
      : axes_(std::move(joint_axes)),
        offsets_(std::move(nominal_offsets)),
        base_(std::move(base)),
        imus_(std::move(imus)),
        gravity_(std::move(gravity)) {
    if (axes_.empty()) throw DimensionError("chain needs at least one joint");
    if (offsets_.size() != axes_.size()) {
      throw DimensionError("nominal offsets must have one entry per joint");
    }
    for (const auto& axis : axes_) {
      if (std::abs(axis.norm() - 1.0) > 1e-12) {
        throw std::invalid_argument("joint axis must have unit norm");
      }
    }
    if (!is_rotation(base_.rotation, 1e-12)) {
      throw std::invalid_argument("base rotation must be orthonormal with det +1");
    }
    for (const auto& m : imus_) {
      if (m.body_index > axes_.size()) {
        throw std::out_of_range("IMU mounted on nonexistent body " +
                                std::to_string(m.body_index));
      }
    }
  }

  /// Degrees of freedom n.
  std::size_t dof() const { return axes_.size(); }
  /// Link count N (bodies excluding the pedestal).
  std::size_t link_count() const { return axes_.size(); }
  /// Bodies including the pedestal.
  std::size_t body_count() const { return axes_.size() + 1; }
  std::size_t param_size() const { return 3 * (link_count() - 1); }
  std::size_t imu_count() const { return imus_.size(); }
  std::size_t state_size() const { return 3 * dof(); }
  std::size_t output_size() const { return 6 * imu_count(); }

  const std::vector<Vec3>& joint_axes() const { return axes_; }
  const std::vector<Vec3>& nominal_offsets() const { return offsets_; }
  const BaseMotion& base() const { return base_; }
  const std::vector<ImuMounting>& imus() const { return imus_; }
  const Vec3& gravity() const { return gravity_; }

  /// Effective offset r^{i,i+1} = r~^{i,i+1} + theta_block(i) for i >= 1.
  Vec3 offset(std::size_t i, const ParameterVector& theta) const {
    Vec3 r = offsets_[i];
    if (i >= 1) r += theta.segment<3>(3 * (i - 1));
    return r;
  }

  void check_theta(const ParameterVector& theta) const {
    if (static_cast<std::size_t>(theta.size()) != param_size()) {
      throw DimensionError("theta has length " + std::to_string(theta.size()) +
                           ", expected " + std::to_string(param_size()));
    }
  }

 private:
  std::vector<Vec3> axes_;
  std::vector<Vec3> offsets_;
  BaseMotion base_;
  std::vector<ImuMounting> imus_;
  Vec3 gravity_;
};

struct GeneralizedState {
  VecX q;
  VecX qdot;
  VecX qddot;

  GeneralizedState() = default;
  GeneralizedState(VecX q_, VecX qdot_, VecX qddot_)
      : q(std::move(q_)), qdot(std::move(qdot_)), qddot(std::move(qddot_)) {
    if (qdot.size() != q.size() || qddot.size() != q.size()) {
      throw DimensionError("state blocks must have equal length");
    }
  }

  static GeneralizedState zero(std::size_t n) {
    return {VecX::Zero(n), VecX::Zero(n), VecX::Zero(n)};
  }

  /// From the stacked x = [q; qdot; qddot].
  static GeneralizedState from_stacked(const VecX& x) {
    if (x.size() % 3 != 0) throw DimensionError("stacked state length not divisible by 3");
    const Eigen::Index n = x.size() / 3;
    return {x.segment(0, n), x.segment(n, n), x.segment(2 * n, n)};
  }

  VecX stacked() const {
    VecX x(3 * q.size());
    x << q, qdot, qddot;
    return x;
  }

  std::size_t dof() const { return static_cast<std::size_t>(q.size()); }
};

struct RotationalFrame {
  Mat3 rotation = Mat3::Identity();
  Vec3 omega = Vec3::Zero();      // local frame
  Vec3 omega_dot = Vec3::Zero();  // local frame
};

struct BodyFrame {
  Mat3 rotation = Mat3::Identity();
  Vec3 omega = Vec3::Zero();
  Vec3 omega_dot = Vec3::Zero();
  Vec3 position = Vec3::Zero();      // inertial frame
  Vec3 velocity = Vec3::Zero();      // inertial frame
  Vec3 acceleration = Vec3::Zero();  // inertial frame
};

/// One entry per body, pedestal first.
using BodyMotion = std::vector<BodyFrame>;

inline void check_state(const KinematicChain& chain, const GeneralizedState& x) {
  if (x.dof() != chain.dof() || static_cast<std::size_t>(x.qdot.size()) != chain.dof() ||
      static_cast<std::size_t>(x.qddot.size()) != chain.dof()) {
    throw DimensionError("state dimension does not match chain");
  }
}

inline std::vector<RotationalFrame> forward_rotational(const KinematicChain& chain,
                                                       const GeneralizedState& x) {
  check_state(chain, x);
  std::vector<RotationalFrame> frames(chain.body_count());
  const auto& base = chain.base();
  frames[0] = {base.rotation, base.omega, base.omega_dot};
  for (std::size_t i = 1; i < chain.body_count(); ++i) {
    const Vec3& axis = chain.joint_axes()[i - 1];
    const Mat3 rq = rodrigues(axis * x.q[i - 1]);
    const auto& prev = frames[i - 1];
    auto& cur = frames[i];
    cur.rotation = prev.rotation * rq;
    cur.omega = rq.transpose() * prev.omega + axis * x.qdot[i - 1];
    cur.omega_dot = rq.transpose() * prev.omega_dot + cur.omega.cross(axis) * x.qdot[i - 1] +
                    axis * x.qddot[i - 1];
  }
  return frames;
}

inline BodyMotion forward_translational(const KinematicChain& chain, const ParameterVector& theta,
                                        const std::vector<RotationalFrame>& rot) {
  chain.check_theta(theta);
  if (rot.size() != chain.body_count()) {
    throw DimensionError("rotational results do not match chain body count");
  }
  BodyMotion motion(chain.body_count());
  const auto& base = chain.base();
  for (std::size_t i = 0; i < rot.size(); ++i) {
    motion[i].rotation = rot[i].rotation;
    motion[i].omega = rot[i].omega;
    motion[i].omega_dot = rot[i].omega_dot;
  }
  motion[0].position = base.position;
  motion[0].velocity = base.velocity;
  motion[0].acceleration = base.acceleration;
  for (std::size_t i = 0; i + 1 < motion.size(); ++i) {
    const Vec3 r = chain.offset(i, theta);
    const auto& b = motion[i];
    auto& next = motion[i + 1];
    const Vec3 w_r = b.omega.cross(r);
    next.position = b.position + b.rotation * r;
    next.velocity = b.velocity + b.rotation * w_r;
    next.acceleration =
        b.acceleration + b.rotation * (b.omega.cross(w_r) + b.omega_dot.cross(r));
  }
  return motion;
}

inline BodyMotion forward_kinematics(const KinematicChain& chain, const ParameterVector& theta,
                                     const GeneralizedState& x) {
  return forward_translational(chain, theta, forward_rotational(chain, x));
}

}  // namespace pdual
