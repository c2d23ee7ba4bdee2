#include <gtest/gtest.h>

#include <cmath>

#include "gisurrogate/pod.hpp"
#include "gisurrogate/testbed.hpp"

using namespace gisur;

namespace {

ParamPoint point(double mh, double mw, double mag, double theta) {
  Vector v(4);
  v << mh, mw, mag, theta;
  return make_point(default_bounds(), v);
}

double weighted_norm(const Vector& v, const Matrix& W) { return std::sqrt(v.dot(W * v)); }

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no gisur::Error thrown";
  return ErrorKind::Io;
}

// Central difference of the state, delta = 1e-6 * range.
Matrix fd_sensitivities(const Testbed& tb, const ParamPoint& p) {
  Matrix S(static_cast<Eigen::Index>(tb.free_count()), 4);
  for (std::size_t i = 0; i < 4; ++i) {
    const double d = 1e-6 * p.bounds.range(i);
    ParamPoint a = p, b = p;
    a.values[i] += d;
    b.values[i] -= d;
    S.col(static_cast<Eigen::Index>(i)) = (tb.solve(a).u - tb.solve(b).u) / (2 * d);
  }
  return S;
}

}  // namespace

TEST(Testbed, DefaultMeshCounts) {
  const Testbed tb(TestbedConfig{});
  EXPECT_EQ(tb.element_count(), 576u);
  EXPECT_EQ(tb.node_count(), 625u);
  EXPECT_EQ(tb.free_count(), 529u);
  EXPECT_EQ(tb.free_index(0, 3), -1);
  EXPECT_EQ(tb.free_index(1, 1), 0);
  EXPECT_EQ(tb.free_node_grid(0), std::make_pair(1, 1));
}

TEST(Testbed, BoundsAndNames) {
  const auto b = default_bounds();
  EXPECT_EQ(b.lower, Vector(Eigen::Vector4d(2, 8, 5, 15)));
  EXPECT_EQ(b.upper, Vector(Eigen::Vector4d(12, 22, 15, 23)));
  EXPECT_EQ(param_names()[3], "Theta1");
  EXPECT_EQ(b.midpoint(), Vector(Eigen::Vector4d(7, 15, 10, 19)));
}

TEST(Testbed, ConfigValidation) {
  TestbedConfig cfg;
  cfg.resolution = 3;
  EXPECT_EQ(kind_of([&] { Testbed tb(cfg); }), ErrorKind::InvalidArgument);
  cfg = TestbedConfig{};
  cfg.brauer.k1 = -1.0;
  EXPECT_EQ(kind_of([&] { Testbed tb(cfg); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([] { material_from_string("steel"); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(material_from_string("brauer"), MaterialLaw::Brauer);
}

TEST(Testbed, FixedTopologyBoundaryNodesStay) {
  const Testbed tb(TestbedConfig{});
  const auto ref = tb.node_positions(midpoint(default_bounds()));
  const auto moved = tb.node_positions(point(11, 21, 14, 22));
  const int nn = tb.nodes_per_side();
  bool interior_moved = false;
  for (int j = 0; j < nn; ++j) {
    for (int i = 0; i < nn; ++i) {
      const auto k = static_cast<std::size_t>(j * nn + i);
      const bool boundary = i == 0 || j == 0 || i == nn - 1 || j == nn - 1;
      if (boundary) {
        EXPECT_EQ(ref[k], moved[k]);
        EXPECT_EQ(tb.blend_weight(k), 0.0);
      } else if (ref[k] != moved[k]) {
        interior_moved = true;
      }
    }
  }
  EXPECT_TRUE(interior_moved);
}

TEST(Testbed, NodePositionDerivativeMatchesFiniteDifference) {
  const Testbed tb(TestbedConfig{});
  const ParamPoint p = point(5.3, 12.1, 8.7, 20.4);
  for (std::size_t i = 0; i < 4; ++i) {
    const double d = 1e-6 * p.bounds.range(i);
    ParamPoint a = p, b = p;
    a.values[i] += d;
    b.values[i] -= d;
    const auto xa = tb.node_positions(a), xb = tb.node_positions(b);
    const auto dx = tb.node_position_derivative(p, i);
    double worst = 0.0, scale = 0.0;
    for (std::size_t k = 0; k < dx.size(); ++k) {
      for (int c = 0; c < 2; ++c) {
        worst = std::max(worst, std::abs((xa[k][c] - xb[k][c]) / (2 * d) - dx[k][c]));
        scale = std::max(scale, std::abs(dx[k][c]));
      }
    }
    EXPECT_LE(worst, 1e-6 * scale) << "parameter " << i;
  }
}

TEST(Testbed, Feasibility) {
  const TestbedConfig cfg;
  const Testbed tb(cfg);
  EXPECT_TRUE(tb.is_feasible(midpoint(cfg.bounds)));
  EXPECT_TRUE(tb.is_feasible(make_point(cfg.bounds, cfg.bounds.lower)));
  EXPECT_TRUE(is_feasible(make_point(cfg.bounds, cfg.bounds.upper), cfg));
  // A 90 mm wide magnet pushes its corners past L - h.
  TestbedConfig wide = cfg;
  wide.bounds.upper[kMagnetWidth] = 100.0;
  const Testbed tw(wide);
  Vector v = wide.bounds.midpoint();
  v[kMagnetWidth] = 90.0;
  EXPECT_FALSE(tw.is_feasible(make_point(wide.bounds, v)));
  EXPECT_GT(tb.min_jacobian_ratio(midpoint(cfg.bounds)), 0.05);
}

TEST(Testbed, AssemblyProperties) {
  const TestbedConfig cfg;
  const Testbed tb(cfg);
  const ParamPoint p = midpoint(cfg.bounds);
  const Vector zero = Vector::Zero(static_cast<Eigen::Index>(tb.free_count()));
  const AssembledSystem s = tb.assemble(p, zero);
  EXPECT_TRUE(is_symmetric(s.matrix, 1e-12));
  EXPECT_NO_THROW(spd_factorize(s.matrix));
  // Linear law: A does not depend on the state.
  const AssembledSystem s2 = tb.assemble(p, Vector::Random(zero.size()));
  EXPECT_EQ(s.matrix, s2.matrix);
  // Rows of nodes with no Dirichlet neighbour sum to zero.
  const int ne = cfg.resolution;
  const double scale = s.matrix.cwiseAbs().maxCoeff();
  for (int j = 2; j <= ne - 2; ++j) {
    for (int i = 2; i <= ne - 2; ++i) {
      const long k = tb.free_index(i, j);
      EXPECT_LE(std::abs(s.matrix.row(k).sum()), 1e-9 * scale);
    }
  }
  TestbedConfig off = cfg;
  off.remanence_T = 0.0;
  EXPECT_EQ(Testbed(off).assemble(p, zero).rhs, Vector::Zero(zero.size()));
}

TEST(Testbed, ZeroExcitation) {
  TestbedConfig cfg;
  cfg.remanence_T = 0.0;
  const Testbed tb(cfg);
  const ParamPoint p = point(4, 10, 12, 17);
  const FieldSolution sol = tb.solve(p);
  EXPECT_EQ(sol.u, Vector::Zero(sol.u.size()));
  EXPECT_EQ(sol.sensitivities.cwiseAbs().maxCoeff(), 0.0);
  const KpiSample k = tb.compute_kpi(p, sol);
  EXPECT_EQ(k.value, 0.0);
  EXPECT_EQ(k.gradient.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Testbed, LinearScaling) {
  TestbedConfig cfg;
  const ParamPoint p = point(6, 13, 9, 18);
  const FieldSolution a = solve(p, cfg);
  cfg.remanence_T = 2.5;
  const FieldSolution b = solve(p, cfg);
  EXPECT_LE((b.u - 2.5 * a.u).norm(), 1e-10 * b.u.norm());
  const double ka = compute_kpi(p, a, TestbedConfig{}).value;
  const double kb = compute_kpi(p, b, cfg).value;
  EXPECT_NEAR(kb, 6.25 * ka, 1e-10 * kb);
}

TEST(Testbed, LinearEnergyIsHalfQuadraticForm) {
  const TestbedConfig cfg;
  const Testbed tb(cfg);
  const ParamPoint p = point(8, 18, 7, 16);
  const FieldSolution sol = tb.solve(p);
  const Matrix A = tb.assemble(p, sol.u).matrix;
  const double w = tb.energy(p, sol.u);
  EXPECT_GT(w, 0.0);
  EXPECT_NEAR(w, 0.5 * sol.u.dot(A * sol.u), 1e-10 * w);
}

TEST(Testbed, ResidualVanishesAtSolution) {
  for (MaterialLaw law : {MaterialLaw::Linear, MaterialLaw::Brauer}) {
    TestbedConfig cfg;
    cfg.material = law;
    const Testbed tb(cfg);
    const ParamPoint p = point(9, 11, 6, 21);
    const FieldSolution sol = tb.solve(p);
    const double bnorm = tb.assemble(p, Vector::Zero(sol.u.size())).rhs.norm();
    EXPECT_LE(tb.residual(p, sol.u).norm() / bnorm, 1e-10);
    EXPECT_LE(sol.residual_norm, 1e-10);
    if (law == MaterialLaw::Linear) EXPECT_EQ(sol.newton_iterations, 1);
  }
}

TEST(Testbed, SensitivitiesMatchFiniteDifferences) {
  const TestbedConfig cfg;
  const Testbed tb(cfg);
  const Matrix W = build_weight(midpoint(cfg.bounds), cfg);
  for (const ParamPoint& p : {midpoint(cfg.bounds), point(3.5, 20, 13, 16)}) {
    const FieldSolution sol = tb.solve(p);
    const Matrix fd = fd_sensitivities(tb, p);
    for (Eigen::Index i = 0; i < 4; ++i) {
      const double err = weighted_norm(sol.sensitivities.col(i) - fd.col(i), W) / weighted_norm(fd.col(i), W);
      EXPECT_LE(err, 1e-4) << "column " << i;
    }
  }
}

TEST(Testbed, SensitivitiesSatisfyTangentSystem) {
  TestbedConfig cfg;
  cfg.material = MaterialLaw::Brauer;
  const Testbed tb(cfg);
  const ParamPoint p = point(7.5, 16, 11, 20);
  const FieldSolution sol = tb.solve(p);
  const Matrix J = tb.tangent(p, sol.u);
  const Matrix dR = tb.residual_parameter_derivative(p, sol.u);
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_LE((J * sol.sensitivities.col(i) + dR.col(i)).norm() / dR.col(i).norm(), 1e-8);
  }
}

TEST(Testbed, BrauerTangentIsResidualJacobian) {
  TestbedConfig cfg;
  cfg.material = MaterialLaw::Brauer;
  const Testbed tb(cfg);
  const ParamPoint p = point(10, 9, 12, 17);
  const Vector u = tb.solve(p).u;
  const Matrix J = tb.tangent(p, u);
  EXPECT_TRUE(is_symmetric(J, 1e-10));
  const Vector dir = Vector::Random(u.size()) * u.cwiseAbs().maxCoeff();
  const double eps = 1e-6;
  const Vector fd = (tb.residual(p, u + eps * dir) - tb.residual(p, u - eps * dir)) / (2 * eps);
  EXPECT_LE((fd - J * dir).norm() / (J * dir).norm(), 1e-6);
}

TEST(Testbed, BrauerSensitivitiesMatchFiniteDifferences) {
  TestbedConfig cfg;
  cfg.material = MaterialLaw::Brauer;
  const Testbed tb(cfg);
  const Matrix W = build_weight(midpoint(cfg.bounds), cfg);
  const ParamPoint p = point(4.5, 17, 8, 21.5);
  const FieldSolution sol = tb.solve(p);
  const Matrix fd = fd_sensitivities(tb, p);
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_LE(weighted_norm(sol.sensitivities.col(i) - fd.col(i), W) / weighted_norm(fd.col(i), W), 1e-4);
  }
}

TEST(Testbed, NewtonConvergesQuadratically) {
  TestbedConfig cfg;
  cfg.material = MaterialLaw::Brauer;
  const Testbed tb(cfg);
  for (const ParamPoint& p : {midpoint(cfg.bounds), make_point(cfg.bounds, cfg.bounds.upper),
                              make_point(cfg.bounds, cfg.bounds.lower)}) {
    const FieldSolution sol = tb.solve(p);
    const auto& h = sol.residual_history;
    ASSERT_GE(h.size(), 3u);
    for (std::size_t k = 1; k < h.size(); ++k) EXPECT_LT(h[k], h[k - 1]);
    const std::size_t n = h.size();
    const double C = h[n - 1] / (h[n - 2] * h[n - 2]);
    EXPECT_LE(C, 1e3);
  }
}

TEST(Testbed, FiniteDifferenceGeometryAgrees) {
  TestbedConfig cfg;
  const ParamPoint p = point(6.5, 14, 12, 18);
  const FieldSolution exact = solve(p, cfg);
  cfg.finite_difference_geometry = true;
  const FieldSolution approx = solve(p, cfg);
  const Matrix W = build_weight(midpoint(cfg.bounds), cfg);
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_LE(weighted_norm(exact.sensitivities.col(i) - approx.sensitivities.col(i), W) /
                  weighted_norm(exact.sensitivities.col(i), W),
              1e-4);
  }
}

TEST(Testbed, FrozenParameterHasZeroColumn) {
  TestbedConfig cfg;
  cfg.bounds.lower[kMagnetOffset] = 11.0;
  cfg.bounds.upper[kMagnetOffset] = 11.0;
  const Testbed tb(cfg);
  Vector v = cfg.bounds.midpoint();
  v[kMagnetHeight] = 5.0;
  const ParamPoint p = make_point(cfg.bounds, v);
  const FieldSolution sol = tb.solve(p);
  EXPECT_EQ(sol.sensitivities.col(kMagnetOffset).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(sol.sensitivities.col(kMagnetHeight).norm(), 0.0);
  EXPECT_EQ(tb.compute_kpi(p, sol).gradient[kMagnetOffset], 0.0);
}

TEST(Testbed, KpiGradientMatchesFiniteDifferences) {
  for (MaterialLaw law : {MaterialLaw::Linear, MaterialLaw::Brauer}) {
    TestbedConfig cfg;
    cfg.material = law;
    const Testbed tb(cfg);
    const ParamPoint p = point(5.5, 19, 12.5, 16.5);
    const KpiSample k = tb.compute_kpi(p, tb.solve(p));
    for (std::size_t i = 0; i < 4; ++i) {
      const double d = 1e-6 * p.bounds.range(i);
      ParamPoint a = p, b = p;
      a.values[i] += d;
      b.values[i] -= d;
      const double fd = (tb.compute_kpi(a, tb.solve(a)).value - tb.compute_kpi(b, tb.solve(b)).value) / (2 * d);
      EXPECT_LE(std::abs(fd - k.gradient[static_cast<Eigen::Index>(i)]), 1e-5 * k.gradient.norm())
          << to_string(law) << " parameter " << i;
    }
  }
}

TEST(Testbed, KpiGradientConsistentWithChainedSensitivities) {
  const Testbed tb(TestbedConfig{});
  const ParamPoint p = point(9.5, 10.5, 6.5, 22);
  const FieldSolution sol = tb.solve(p);
  const KpiSample k = tb.compute_kpi(p, sol);
  const auto [dWdp, dWdu] = tb.energy_partials(p, sol.u);
  const Vector chained = dWdp + sol.sensitivities.transpose() * dWdu;
  EXPECT_LE((chained - k.gradient).norm(), 1e-6 * k.gradient.norm());
}

TEST(Testbed, MirroredOffsetMirrorsField) {
  const Testbed tb(TestbedConfig{});
  const FieldSolution a = tb.solve(point(6, 12, 7, 19));
  const FieldSolution b = tb.solve(point(6, 12, 13, 19));
  const int ne = tb.config().resolution;
  double worst = 0.0;
  for (std::size_t k = 0; k < tb.free_count(); ++k) {
    const auto [i, j] = tb.free_node_grid(k);
    const long m = tb.free_index(ne - i, j);
    worst = std::max(worst, std::abs(a.u[static_cast<Eigen::Index>(k)] + b.u[m]));
  }
  EXPECT_LE(worst, 1e-8 * a.u.cwiseAbs().maxCoeff());
}

TEST(Testbed, EnergyPositiveOverBox) {
  const Testbed tb(TestbedConfig{});
  const auto b = default_bounds();
  for (int c = 0; c < 16; ++c) {
    Vector v(4);
    for (int i = 0; i < 4; ++i) v[i] = (c >> i) & 1 ? b.upper[i] : b.lower[i];
    const ParamPoint p = make_point(b, v);
    const KpiSample k = tb.compute_kpi(p, tb.solve(p));
    EXPECT_GT(k.value, 0.0);
    EXPECT_TRUE(std::isfinite(k.value));
  }
}

TEST(Testbed, RejectsOutOfBoundsPoint) {
  const Testbed tb(TestbedConfig{});
  ParamPoint p = midpoint(default_bounds());
  p.values[0] = 13.0;
  EXPECT_EQ(kind_of([&] { tb.solve(p); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { make_point(default_bounds(), Vector::Zero(3)); }), ErrorKind::DimensionMismatch);
}

TEST(Testbed, SourceCurrentDrivesField) {
  TestbedConfig cfg;
  cfg.remanence_T = 0.0;
  cfg.source_current_A_per_mm2 = 2.0;
  const Testbed tb(cfg);
  const FieldSolution sol = tb.solve(midpoint(cfg.bounds));
  EXPECT_GT(sol.u.norm(), 0.0);
  EXPECT_GT(tb.compute_kpi(midpoint(cfg.bounds), sol).value, 0.0);
}
