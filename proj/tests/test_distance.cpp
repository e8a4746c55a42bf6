#include <proxtraj/distance.hpp>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace proxtraj;
using namespace proxtraj::test;

namespace {

PosedShape posed(const ConvexShape& s, const Vec3& d, const Vec4& q = Vec4(0, 0, 0, 1)) {
  PosedShape out{s, Pose{}};
  out.pose.d = d;
  out.pose.q = q;
  return out;
}

ClosestPointPair pair_of(const Vec3& w, const Vec3& p, double lambda, double mu) {
  ClosestPointPair pr;
  pr.w_body = w;
  pr.p_body = p;
  pr.lambda = VecX::Constant(1, lambda);
  pr.mu = VecX::Constant(1, mu);
  return pr;
}

// Random superellipsoid with bounded aspect ratio.
ConvexShape random_superellipsoid(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ax(0.4, 1.6);
  std::uniform_int_distribution<int> ex(1, 4);
  SuperEllipsoid s;
  s.semi_axes = vec3(ax(rng), ax(rng), ax(rng));
  s.exponents = Eigen::Vector3i(2 * ex(rng), 2 * ex(rng), 2 * ex(rng));
  return s;
}

ConvexShape random_smooth_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ax(0.4, 1.5);
  return smooth_box(vec3(ax(rng), ax(rng), ax(rng)), vec3(ax(rng), ax(rng), ax(rng)), 8.0);
}

Vec4 random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return quat_normalized(Vec4(n(rng), n(rng), n(rng), n(rng)));
}

}  // namespace

TEST(KktPoint, HandSolvedSphereCase) {
  const PosedShape sphere = posed(unit_sphere(), Vec3(0, 0, 0));
  // r = (3,0,0): closest point (1,0,0), lambda = 2 solves the system.
  auto res = kkt_residual_point(Vec3(3, 0, 0), sphere, Vec3(1, 0, 0), VecX::Constant(1, 2.0));
  EXPECT_LT(res.residual.norm(), 1e-12);
  EXPECT_LE(res.feasibility.maxCoeff(), 1e-12);

  // Zero dual leaves the stationarity residual at -2(r - p) = (-4, 0, 0).
  auto res0 = kkt_residual_point(Vec3(3, 0, 0), sphere, Vec3(1, 0, 0), VecX::Zero(1));
  EXPECT_TRUE(res0.residual.head<3>().isApprox(Vec3(-4, 0, 0), 1e-14));

  // Coincident with the obstacle center: everything vanishes, f = -1.
  auto resc = kkt_residual_point(Vec3(0, 0, 0), sphere, Vec3(0, 0, 0), VecX::Zero(1));
  EXPECT_LT(resc.residual.norm(), 1e-14);
  EXPECT_DOUBLE_EQ(resc.feasibility[0], -1.0);
}

TEST(KktPair, HandSolvedTwoSpheres) {
  const PosedShape a = posed(unit_sphere(), Vec3(0, 0, 0));
  const PosedShape b = posed(unit_sphere(), Vec3(4, 0, 0));
  // Boundary points (1,0,0) and (-1,0,0) with lambda = mu = 2:
  //   2(w_I - p_I) = (-4,0,0), lambda * grad f_S(w) = 2*(2,0,0) = (4,0,0).
  auto res = kkt_residual_pair(a, b, pair_of(Vec3(1, 0, 0), Vec3(-1, 0, 0), 2.0, 2.0));
  EXPECT_LT(res.residual.norm(), 1e-12);
  EXPECT_NEAR(res.f_vehicle[0], 0.0, 1e-14);
  EXPECT_NEAR(res.f_obstacle[0], 0.0, 1e-14);

  auto res0 = kkt_residual_pair(a, b, pair_of(Vec3(1, 0, 0), Vec3(-1, 0, 0), 0.0, 0.0));
  EXPECT_GT(res0.residual.norm(), 1.0);

  // Sphere symmetry: rotating the vehicle set must not change the residual.
  PosedShape a_rot = a;
  a_rot.pose.q = quat_from_axis_angle(Vec3(0, 0, 1), M_PI / 2.0);
  auto res_rot = kkt_residual_pair(
      a_rot, b, pair_of(Vec3(0, -1, 0) /* rotates to (1,0,0) */, Vec3(-1, 0, 0), 2.0, 2.0));
  EXPECT_LT(res_rot.residual.norm(), 1e-12);
}

TEST(Oracle, TwoUnitSpheres) {
  const auto res =
      oracle_distance(posed(unit_sphere(), Vec3(0, 0, 0)), posed(unit_sphere(), Vec3(4, 0, 0)));
  ASSERT_TRUE(res.converged);
  EXPECT_NEAR(res.dist, 2.0, 1e-6);
}

TEST(Oracle, PointVersusScenarioACuboid) {
  // T1 exact cuboid at (5,0,0): inertial x in [3,6], y,z in [-3,3]. The point
  // (10,3,0) projects onto (6,3,0), distance 4.
  const PosedShape t1 = posed(exact_box(vec3(1, 3, 3), vec3(2, 3, 3)), Vec3(5, 0, 0));
  EXPECT_NEAR(point_distance(t1, Vec3(10, 3, 0)), 4.0, 1e-4);
  // Inside: distance zero.
  EXPECT_DOUBLE_EQ(point_distance(t1, Vec3(5, 0, 0)), 0.0);
}

TEST(Oracle, SmoothVersusExactCubeBand) {
  // The smooth cube lies inside its exact counterpart; distances from outside
  // points are larger by at most ~ln(6)/8 (corners), and by well under 0.02
  // facing a face center.
  const PosedShape smooth = posed(smooth_box(vec3(1, 1, 1), vec3(1, 1, 1), 8.0), Vec3(0, 0, 0));
  const PosedShape exact = posed(exact_box(vec3(1, 1, 1), vec3(1, 1, 1)), Vec3(0, 0, 0));

  const double d_face_s = point_distance(smooth, Vec3(4, 0, 0));
  const double d_face_e = point_distance(exact, Vec3(4, 0, 0));
  EXPECT_GE(d_face_s, d_face_e - 1e-12);
  EXPECT_LT(d_face_s - d_face_e, 0.02);

  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 1.0);
  const double band = std::log(6.0) / 8.0;
  for (int k = 0; k < 200; ++k) {
    const Vec3 x = Vec3(n(rng), n(rng), n(rng)).normalized() * 5.0;
    const double ds = point_distance(smooth, x);
    const double de = point_distance(exact, x);
    EXPECT_GE(ds, de - 1e-9);
    EXPECT_LE(ds - de, band + 0.05);
  }
}

TEST(Oracle, OverlappingSetsReportZero) {
  const auto res =
      oracle_distance(posed(unit_sphere(), Vec3(0, 0, 0)), posed(unit_sphere(), Vec3(1, 0, 0)));
  ASSERT_TRUE(res.converged);
  EXPECT_TRUE(res.overlapping);
  EXPECT_DOUBLE_EQ(res.dist, 0.0);
  // The reported point is contained in both sets.
  EXPECT_LE(eval(ConvexShape(unit_sphere()), VecX(res.w_body)), 1e-9);
  EXPECT_LE(eval(ConvexShape(unit_sphere()), VecX(Vec3(res.p_body))), 1e-9);
}

TEST(MinDistanceKkt, TwoSpheresFromMidpointGuess) {
  const PosedShape a = posed(unit_sphere(), Vec3(0, 0, 0));
  const PosedShape b = posed(unit_sphere(), Vec3(4, 0, 0));
  ClosestPointPair init;
  init.w_body = Vec3(2, 0, 0);  // centers midpoint, in A's body frame
  init.p_body = Vec3(-2, 0, 0);
  init.lambda = VecX::Constant(1, 0.1);
  init.mu = VecX::Constant(1, 0.1);
  const auto res = min_distance_kkt(a, b, init);
  ASSERT_TRUE(res.converged);
  EXPECT_FALSE(res.used_fallback);
  EXPECT_NEAR(std::sqrt(res.pair.dist_sq), 2.0, 1e-8);
  EXPECT_NEAR(res.pair.lambda[0], 2.0, 1e-6);
  EXPECT_NEAR(res.pair.mu[0], 2.0, 1e-6);
}

TEST(MinDistanceKkt, TouchingSpheres) {
  const PosedShape a = posed(unit_sphere(), Vec3(0, 0, 0));
  const PosedShape b = posed(unit_sphere(), Vec3(2, 0, 0));
  ClosestPointPair init = pair_of(Vec3(0.9, 0, 0), Vec3(-0.9, 0, 0), 0.1, 0.1);
  const auto res = min_distance_kkt(a, b, init);
  ASSERT_TRUE(res.converged);
  EXPECT_NEAR(std::sqrt(res.pair.dist_sq), 0.0, 1e-5);
  EXPECT_GE(res.pair.lambda.minCoeff(), 0.0);
  EXPECT_GE(res.pair.mu.minCoeff(), 0.0);
}

TEST(MinDistanceKkt, MatchesOracleOnRandomPairs) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int fallbacks = 0;
  for (int k = 0; k < 50; ++k) {
    const ConvexShape sa = (k % 2 == 0) ? random_superellipsoid(rng) : random_smooth_box(rng);
    const ConvexShape sb = (k % 3 == 0) ? random_smooth_box(rng) : random_superellipsoid(rng);
    // Centers at least 5 apart guarantee disjointness (max extent ~1.6).
    const Vec3 dir = Vec3(u(rng), u(rng), u(rng)).normalized();
    const PosedShape a = posed(sa, Vec3::Zero(), random_quat(rng));
    const PosedShape b = posed(sb, dir * (5.0 + u(rng)), random_quat(rng));

    const auto orc = oracle_distance(a, b, 1e-12);
    ASSERT_TRUE(orc.converged);

    ClosestPointPair init;
    init.w_body = to_body(a.pose, 0.5 * (shape_center_inertial(a) + shape_center_inertial(b)));
    init.p_body = to_body(b.pose, 0.5 * (shape_center_inertial(a) + shape_center_inertial(b)));
    init.lambda = VecX::Constant(1, 0.1);
    init.mu = VecX::Constant(1, 0.1);
    const auto kkt = min_distance_kkt(a, b, init);
    ASSERT_TRUE(kkt.converged);
    if (kkt.used_fallback) ++fallbacks;
    EXPECT_NEAR(std::sqrt(kkt.pair.dist_sq), orc.dist, 1e-4);
    // Strong duality: the KKT pair certifies the true minimum distance.
    EXPECT_GE(kkt.pair.lambda.minCoeff(), 0.0);
    EXPECT_GE(kkt.pair.mu.minCoeff(), 0.0);
  }
  // The Newton path should carry nearly all cases on its own.
  EXPECT_LE(fallbacks, 3);
}

TEST(MinDistanceKkt, RotationEquivariance) {
  std::mt19937_64 rng(43);
  const PosedShape a = posed(scenario_a_vehicle(), Vec3(0, 0, 0));
  const PosedShape b = posed(scenario_a_t2(), Vec3(6, 1, 0));
  const auto base = oracle_distance(a, b, 1e-12);
  ASSERT_TRUE(base.converged);

  for (int k = 0; k < 5; ++k) {
    const Vec4 q = random_quat(rng);
    const Mat3 rot = rotation_matrix(q);
    const Vec3 shift(1.0, -2.0, 0.5);
    PosedShape ar = a, br = b;
    ar.pose.q = q;  // a was identity
    ar.pose.d = rot * a.pose.d + shift;
    // Compose the rigid transform with b's pose (identity rotation here).
    br.pose.q = q;
    br.pose.d = rot * b.pose.d + shift;
    const auto moved = oracle_distance(ar, br, 1e-12);
    ASSERT_TRUE(moved.converged);
    EXPECT_NEAR(moved.dist, base.dist, 1e-9);
  }
}

TEST(Duals, LeastSquaresRecoveryAtOraclePair) {
  // At an oracle-converged pair the stationarity system must close to ~1e-6
  // with nonnegative least-squares duals.
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 20; ++k) {
    const PosedShape a = posed(random_superellipsoid(rng), Vec3::Zero(), random_quat(rng));
    const PosedShape b =
        posed(random_smooth_box(rng), Vec3(u(rng), u(rng), u(rng)).normalized() * 6.0,
              random_quat(rng));
    const auto orc = oracle_distance(a, b, 1e-13);
    ASSERT_TRUE(orc.converged);
    ClosestPointPair pr;
    pr.w_body = orc.w_body;
    pr.p_body = orc.p_body;
    recover_pair_duals(a, b, pr);
    const auto res = kkt_residual_pair(a, b, pr);
    EXPECT_LT(res.residual.norm(), 1e-6);
    EXPECT_GE(pr.lambda.minCoeff(), 0.0);
    EXPECT_GE(pr.mu.minCoeff(), 0.0);
  }
}

TEST(Duals, ExactPolytopeUsesFaceVector) {
  const PosedShape box = posed(exact_box(vec3(1, 1, 1), vec3(1, 1, 1)), Vec3(4, 0, 0));
  const PosedShape sph = posed(unit_sphere(), Vec3(0, 0, 0));
  EXPECT_EQ(dual_dim(box.shape), 6);
  const auto orc = oracle_distance(sph, box, 1e-12);
  ASSERT_TRUE(orc.converged);
  EXPECT_NEAR(orc.dist, 2.0, 1e-6);
  ClosestPointPair pr;
  pr.w_body = orc.w_body;
  pr.p_body = orc.p_body;
  recover_pair_duals(sph, box, pr);
  ASSERT_EQ(pr.mu.size(), 6);
  const auto res = kkt_residual_pair(sph, box, pr);
  EXPECT_LT(res.residual.norm(), 1e-6);
}

TEST(Disjointness, CertifiedDistanceImpliesSampledSeparation) {
  // If the certified distance is >= d_safe, no sampled boundary point of A
  // comes closer than d_safe - 1e-3 to B.
  const PosedShape a = posed(scenario_a_vehicle(), Vec3(0, 4.2, 0));
  const PosedShape b = posed(scenario_a_t1(), Vec3(5, 0, 0));
  const auto orc = oracle_distance(a, b, 1e-12);
  ASSERT_TRUE(orc.converged);
  const double d_safe = orc.dist;  // use the certified value itself
  std::mt19937_64 rng(53);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < 1000; ++k) {
    // Boundary sample of A: scale a random direction to the zero level set.
    Vec3 dir(n(rng), n(rng), n(rng));
    dir.normalize();
    double lo = 0.0, hi = 8.0;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (eval(a.shape, VecX(Vec3(mid * dir))) < 0.0 ? lo : hi) = mid;
    }
    const Vec3 boundary_body = 0.5 * (lo + hi) * dir;
    const Vec3 boundary_inertial = to_inertial(a.pose, boundary_body);
    EXPECT_GE(point_distance(b, boundary_inertial), d_safe - 1e-3);
  }
}
