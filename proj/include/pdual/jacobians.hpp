#pragma once

// Analytic output Jacobian H = dy/dx, x = [q; qdot; qddot], built by
// propagating per-body Jacobian sets from the pedestal outward.
//
// Rotational set of body i (all 3 x n, local frame):
//   rot      = d omega_dot/d qddot = d omega/d qdot = d(virtual rotation)/d q
//   rot_dot  = d omega / d q
//   rot_dot_star  = d omega_dot / d qdot
//   rot_ddot_star = d omega_dot / d q
// Translational set (inertial frame):
//   trans     = d rddot/d qddot = d rdot/d qdot = d r/d q
//   trans_dot = d rdot / d q
//   trans_dot_star  = d rddot / d qdot
//   trans_ddot_star = d rddot / d q
//
// Several correction terms of the published recursions do not reproduce
// finite differences of the forward model; the terms below were re-derived
// from the kinematic recursions and are pinned by the finite-difference tests.

#include "pdual/imu_model.hpp"
#include "pdual/kinematics.hpp"

#include <vector>

namespace pdual {

struct BodyJacobians {
  MatX trans, trans_dot, trans_dot_star, trans_ddot_star;
  MatX rot, rot_dot, rot_dot_star, rot_ddot_star;

  static BodyJacobians zero(std::size_t n) {
    const MatX z = MatX::Zero(3, static_cast<Eigen::Index>(n));
    return {z, z, z, z, z, z, z, z};
  }
};

namespace detail {

// Translational set of a point rigidly attached to body `b` at offset `rho`
// (frame of b); shared by the link-to-link step and the sensor transfer.
inline void attach_point(const BodyFrame& b, const BodyJacobians& jb, const Vec3& rho,
                         BodyJacobians& out) {
  const Mat3& r = b.rotation;
  const Mat3 rho_x = skew(rho);
  const Vec3 w_rho = b.omega.cross(rho);
  const Mat3 lambda_r = skew(w_rho) + skew(b.omega) * rho_x;
  const Vec3 lever = b.omega.cross(w_rho) + b.omega_dot.cross(rho);

  out.trans = jb.trans - r * rho_x * jb.rot;
  out.trans_dot = jb.trans_dot - r * (skew(w_rho) * jb.rot + rho_x * jb.rot_dot);
  out.trans_dot_star = jb.trans_dot_star - r * (rho_x * jb.rot_dot_star + lambda_r * jb.rot);
  out.trans_ddot_star = jb.trans_ddot_star - r * (skew(lever) * jb.rot + lambda_r * jb.rot_dot +
                                                  rho_x * jb.rot_ddot_star);
}

}  // namespace detail

/// Jacobian sets for every body (pedestal first, identically zero).
inline std::vector<BodyJacobians> propagate_body_jacobians(const KinematicChain& chain,
                                                           const ParameterVector& theta,
                                                           const GeneralizedState& x,
                                                           const BodyMotion& motion) {
  check_state(chain, x);
  chain.check_theta(theta);
  if (motion.size() != chain.body_count()) {
    throw DimensionError("body motion does not match chain");
  }
  const std::size_t n = chain.dof();
  std::vector<BodyJacobians> jac(chain.body_count(), BodyJacobians::zero(n));

  for (std::size_t i = 1; i < chain.body_count(); ++i) {
    const auto& prev = jac[i - 1];
    auto& cur = jac[i];
    const BodyFrame& bp = motion[i - 1];
    const BodyFrame& bc = motion[i];
    const Vec3& axis = chain.joint_axes()[i - 1];
    const double qd = x.qdot[i - 1];
    const Mat3 rqt = rodrigues(axis * x.q[i - 1]).transpose();
    const Mat3 axis_x = skew(axis);
    const Eigen::Index col = static_cast<Eigen::Index>(i - 1);

    // Translation of body i's origin follows from body i-1.
    detail::attach_point(bp, prev, chain.offset(i - 1, theta), cur);

    // Rotation: frame-change of the predecessor set plus the joint's own column.
    const Mat3 lambda_w = -qd * axis_x * rqt;
    cur.rot = rqt * prev.rot;
    cur.rot.col(col) += axis;
    cur.rot_dot = rqt * prev.rot_dot;
    cur.rot_dot.col(col) += bc.omega.cross(axis);
    cur.rot_dot_star = rqt * prev.rot_dot_star + lambda_w * prev.rot;
    cur.rot_dot_star.col(col) += bc.omega.cross(axis);
    cur.rot_ddot_star = rqt * prev.rot_ddot_star - qd * axis_x * cur.rot_dot;
    cur.rot_ddot_star.col(col) += (rqt * bp.omega_dot).cross(axis);
  }
  return jac;
}

struct SensorJacobians {
  BodyJacobians set;
  Mat3 rotation;  // R_j = R_i R(phi_s)
};

inline SensorJacobians sensor_jacobians(const KinematicChain& chain,
                                        const std::vector<BodyJacobians>& body_jacobians,
                                        const BodyMotion& motion, const ImuMounting& mounting) {
  if (mounting.body_index >= chain.body_count()) {
    throw std::out_of_range("IMU mounted on nonexistent body");
  }
  const BodyFrame& b = motion.at(mounting.body_index);
  const BodyJacobians& jb = body_jacobians.at(mounting.body_index);
  const Mat3 rst = rodrigues(mounting.rotation).transpose();
  SensorJacobians s;
  s.rotation = b.rotation * rst.transpose();
  s.set.rot = rst * jb.rot;
  s.set.rot_dot = rst * jb.rot_dot;
  s.set.rot_dot_star = rst * jb.rot_dot_star;
  s.set.rot_ddot_star = rst * jb.rot_ddot_star;
  detail::attach_point(b, jb, mounting.position, s.set);
  return s;
}

/// Output Jacobian from already computed body motion and noise-free output y.
inline MatX assemble_H(const KinematicChain& chain, const ParameterVector& theta,
                       const GeneralizedState& x, const BodyMotion& motion, const VecX& y) {
  const auto body = propagate_body_jacobians(chain, theta, x, motion);
  const auto n = static_cast<Eigen::Index>(chain.dof());
  MatX h = MatX::Zero(static_cast<Eigen::Index>(chain.output_size()), 3 * n);
  for (std::size_t j = 0; j < chain.imu_count(); ++j) {
    const SensorJacobians s = sensor_jacobians(chain, body, motion, chain.imus()[j]);
    const Mat3 rjt = s.rotation.transpose();
    const auto row = static_cast<Eigen::Index>(6 * j);
    const Vec3 accel = y.segment<3>(row);  // R_j^T (p_ddot + g)
    h.block(row, 0, 3, n) = rjt * s.set.trans_ddot_star + skew(accel) * s.set.rot;
    h.block(row, n, 3, n) = rjt * s.set.trans_dot_star;
    h.block(row, 2 * n, 3, n) = rjt * s.set.trans;
    h.block(row + 3, 0, 3, n) = s.set.rot_dot;
    h.block(row + 3, n, 3, n) = s.set.rot;
  }
  return h;
}

/// Full 6M x 3n output Jacobian at (x, theta).
inline MatX assemble_H(const KinematicChain& chain, const ParameterVector& theta,
                       const GeneralizedState& x) {
  const BodyMotion motion = forward_kinematics(chain, theta, x);
  return assemble_H(chain, theta, x, motion, measure_from_motion(chain, motion));
}

}  // namespace pdual
