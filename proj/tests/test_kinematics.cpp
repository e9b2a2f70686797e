#include "support.hpp"

#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <numbers>

using namespace pdual;
namespace pt = pdual::testing;

namespace {

// Rotation matrix of the unit quaternion for axis-angle phi, built by
// composing q v q* on the basis vectors.
Mat3 quaternion_oracle(const Vec3& phi) {
  const double angle = phi.norm();
  const Vec3 axis = phi / angle;
  const double w = std::cos(angle / 2);
  const Vec3 v = std::sin(angle / 2) * axis;
  Mat3 r;
  for (int c = 0; c < 3; ++c) {
    const Vec3 e = Vec3::Unit(c);
    // q e q* = e + 2w (v x e) + 2 v x (v x e)
    r.col(c) = e + 2 * w * v.cross(e) + 2 * v.cross(v.cross(e));
  }
  return r;
}

KinematicChain single_joint_y() {
  return {{Vec3(0, 1, 0)}, {Vec3(0.2, 0, 0)}, BaseMotion{}, {}};
}

}  // namespace

TEST(Skew, KnownMatrix) {
  Mat3 expect;
  expect << 0, -3, 2, 3, 0, -1, -2, 1, 0;
  EXPECT_EQ(skew(Vec3(1, 2, 3)), expect);
  EXPECT_EQ(skew(Vec3::Zero()), Mat3::Zero());
  const Vec3 a(0.3, -1, 2);
  EXPECT_LT((skew(a) * a).norm(), 1e-15);
}

TEST(Rodrigues, IdentityAndQuarterTurn) {
  EXPECT_EQ(rodrigues(Vec3::Zero()), Mat3::Identity());
  Mat3 expect;
  expect << 0, 0, 1, 0, 1, 0, -1, 0, 0;
  EXPECT_LT((rodrigues(Vec3(0, std::numbers::pi / 2, 0)) - expect).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Rodrigues, MatchesQuaternionOracle) {
  const Vec3 phi(0.3, -0.2, 0.9);
  EXPECT_LT((rodrigues(phi) - quaternion_oracle(phi)).cwiseAbs().maxCoeff(), 1e-12);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p(g(rng), g(rng), g(rng));
    EXPECT_LT((rodrigues(p) - quaternion_oracle(p)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Rodrigues, SeriesBranchIsContinuous) {
  const Vec3 dir = Vec3(1, -2, 0.5).normalized();
  for (double a : {1e-9, 5e-7, 0.999e-6, 1.001e-6, 1e-5}) {
    const Vec3 phi = a * dir;
    const Mat3 r = rodrigues(phi);
    EXPECT_TRUE(is_rotation(r, 1e-14)) << a;
    // first order: I + [phi]x, error O(a^2)
    EXPECT_LT((r - Mat3::Identity() - skew(phi)).cwiseAbs().maxCoeff(), a * a) << a;
  }
  const Vec3 below = 0.9999999e-6 * dir, above = 1.0000001e-6 * dir;
  EXPECT_LT((rodrigues(below) - rodrigues(above)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ChainValidation, RejectsBadInputs) {
  BaseMotion base;
  EXPECT_THROW(KinematicChain({Vec3(0, 1.1, 0)}, {Vec3::Zero()}, base, {}), std::invalid_argument);
  EXPECT_THROW(KinematicChain({}, {}, base, {}), DimensionError);
  EXPECT_THROW(KinematicChain({Vec3(0, 1, 0)}, {Vec3::Zero(), Vec3::Zero()}, base, {}), DimensionError);
  BaseMotion skewed;
  skewed.rotation = Mat3::Identity() * 1.01;
  EXPECT_THROW(KinematicChain({Vec3(0, 1, 0)}, {Vec3::Zero()}, skewed, {}), std::invalid_argument);
  BaseMotion mirrored;
  mirrored.rotation = -Mat3::Identity();
  EXPECT_THROW(KinematicChain({Vec3(0, 1, 0)}, {Vec3::Zero()}, mirrored, {}), std::invalid_argument);
  EXPECT_THROW(KinematicChain({Vec3(0, 1, 0)}, {Vec3::Zero()}, base, {{2, Vec3::Zero(), Vec3::Zero()}}),
               std::out_of_range);
}

TEST(ChainValidation, Dimensions) {
  const KinematicChain chain = make_chain(pt::arm_setup());
  EXPECT_EQ(chain.dof(), 2u);
  EXPECT_EQ(chain.link_count(), 2u);
  EXPECT_EQ(chain.body_count(), 3u);
  EXPECT_EQ(chain.param_size(), 3u);
  EXPECT_EQ(chain.output_size(), 12u);
  EXPECT_THROW(forward_kinematics(chain, VecX::Zero(2), GeneralizedState::zero(2)), DimensionError);
  EXPECT_THROW(forward_kinematics(chain, VecX::Zero(3), GeneralizedState::zero(3)), DimensionError);
}

TEST(ForwardRotational, RestConfiguration) {
  ExperimentConfig c = pt::arm_setup();
  c.base_rotation = {{0, -1, 0}, {1, 0, 0}, {0, 0, 1}};
  const KinematicChain chain = make_chain(c);
  for (const auto& f : forward_rotational(chain, GeneralizedState::zero(2))) {
    EXPECT_EQ(f.rotation, chain.base().rotation);
    EXPECT_EQ(f.omega, Vec3::Zero());
    EXPECT_EQ(f.omega_dot, Vec3::Zero());
  }
}

TEST(ForwardRotational, SingleJointRate) {
  GeneralizedState x = GeneralizedState::zero(1);
  x.qdot[0] = 2.0;
  const auto frames = forward_rotational(single_joint_y(), x);
  EXPECT_EQ(frames[1].omega, Vec3(0, 2, 0));
}

TEST(ForwardRotational, ArmMatchesComposedRotations) {
  const KinematicChain chain = make_chain(pt::arm_setup());
  GeneralizedState x = GeneralizedState::zero(2);
  x.q << std::numbers::pi / 4, std::numbers::pi / 2;
  const auto frames = forward_rotational(chain, x);
  const Mat3 oracle = Eigen::AngleAxisd(std::numbers::pi / 4, Vec3::UnitY()).toRotationMatrix() *
                      Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitY()).toRotationMatrix();
  EXPECT_LT((frames[2].rotation - oracle).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ForwardTranslational, StaticChain) {
  const KinematicChain chain({Vec3(0, 1, 0)}, {Vec3(0.2, 0, 0)}, BaseMotion{}, {});
  const auto m = forward_kinematics(chain, VecX::Zero(0), GeneralizedState::zero(1));
  EXPECT_EQ(m[1].position, Vec3(0.2, 0, 0));
  EXPECT_EQ(m[1].velocity, Vec3::Zero());
  EXPECT_EQ(m[1].acceleration, Vec3::Zero());
}

TEST(ForwardTranslational, RotatingLinkVelocity) {
  // second body's origin sits at the end of a link spinning about y
  const KinematicChain chain({Vec3(0, 1, 0), Vec3(0, 1, 0)}, {Vec3::Zero(), Vec3(0.2, 0, 0.1)}, BaseMotion{}, {});
  GeneralizedState x = GeneralizedState::zero(2);
  x.qdot[0] = 1.5;
  const auto m = forward_kinematics(chain, VecX::Zero(3), x);
  const Vec3 w(0, 1.5, 0);
  EXPECT_LT((m[2].velocity - m[1].rotation * w.cross(Vec3(0.2, 0, 0.1))).norm(), 1e-15);
}

TEST(ForwardTranslational, AccelerationMatchesNumericalDerivative) {
  const ExperimentConfig c = pt::arm_setup();
  const KinematicChain chain = make_chain(c);
  const QuinticTrajectory traj(detail::vecx(c.q0), detail::vecx(c.qe), c.t_e);
  const VecX theta = theta_true(c);
  const double h = 1e-5, t = 0.5;
  const Vec3 v_plus = forward_kinematics(chain, theta, traj(t + h))[2].velocity;
  const Vec3 v_minus = forward_kinematics(chain, theta, traj(t - h))[2].velocity;
  const Vec3 a = forward_kinematics(chain, theta, traj(t))[2].acceleration;
  EXPECT_LT(((v_plus - v_minus) / (2 * h) - a).norm(), 1e-5 * a.norm());
}

// Body indexing: the pedestal is body 0 and joint i moves body i. On a
// three-link chain the IMU on body 2 must not see joint 3 at all.
TEST(ForwardKinematics, ThreeBodyIndexing) {
  const KinematicChain chain({Vec3(0, 0, 1), Vec3(0, 1, 0), Vec3(1, 0, 0)},
                             {Vec3(0.1, 0, 0), Vec3(0.3, 0, 0), Vec3(0.2, 0, 0)}, BaseMotion{},
                             {{2, Vec3(0.05, 0, 0), Vec3::Zero()}});
  EXPECT_EQ(chain.param_size(), 6u);
  GeneralizedState x = GeneralizedState::zero(3);
  x.q << 0.3, -0.5, 0.0;
  VecX theta(6);
  theta << 0.01, 0.02, 0.03, 0.04, 0.05, 0.06;
  const auto m = forward_kinematics(chain, theta, x);
  // body 1 origin: base offset only, theta never touches it
  EXPECT_LT((m[1].position - Vec3(0.1, 0, 0)).norm(), 1e-15);
  // body 2 origin: offset 1 plus theta block 0, expressed in frame 1
  EXPECT_LT((m[2].position - (m[1].position + m[1].rotation * Vec3(0.31, 0.02, 0.03))).norm(), 1e-15);
  EXPECT_LT((m[3].position - (m[2].position + m[2].rotation * Vec3(0.24, 0.05, 0.06))).norm(), 1e-15);
  const VecX y0 = measure(chain, theta, x);
  GeneralizedState x3 = x;
  x3.q[2] = 1.0;
  x3.qdot[2] = 2.0;
  EXPECT_LT((measure(chain, theta, x3) - y0).norm(), 1e-15);
  VecX theta_tail = theta;
  theta_tail.tail<3>().setConstant(0.5);
  EXPECT_LT((measure(chain, theta_tail, x) - y0).norm(), 1e-15);
}

TEST(ForwardKinematics, RotationsStayOrthonormal) {
  const KinematicChain chain = pt::moving_base_chain();
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    for (const auto& b : forward_kinematics(chain, VecX::Constant(6, 0.1), pt::random_state(3, rng, 10.0))) {
      EXPECT_TRUE(is_rotation(b.rotation, 1e-12));
    }
  }
}
