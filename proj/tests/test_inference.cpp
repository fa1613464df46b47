#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mhde/designs.hpp"
#include "mhde/estimator.hpp"
#include "mhde/inference.hpp"
#include "mhde/model_grid.hpp"

using namespace mhde;

namespace {

const FamilySpec kGamma = FamilySpec::gamma();
const ParamVector kTheta(kGamma, 2.0, 35000.0);

ParamVector random_theta(const FamilySpec& spec, Stream& rng) {
  if (spec.id == Family::lognormal) return {spec, -2.0 + 12.0 * rng.uniform(), 0.2 + 1.5 * rng.uniform()};
  return {spec, 0.7 + 5.0 * rng.uniform(), std::exp(8.0 * rng.uniform())};
}

std::vector<double> model_values(const FamilySpec& spec, const ParamVector& t, const QuadGrid& grid) {
  std::vector<double> g(grid.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = density(spec, t, grid.nodes[i]);
  return g;
}

double rel_frob(const Mat2& a, const Mat2& b) { return (a - b).norm() / b.norm(); }

SurveySample srs_sample(std::uint64_t seed, std::size_t n, double alpha) {
  auto rng = Stream::derive(77, {seed});
  const auto N = static_cast<std::size_t>(std::llround(static_cast<double>(n) / alpha));
  const auto pop = simulate_population(kGamma, kTheta, N, 0.0, rng);
  return draw_sample(pop, {DesignKind::srs_wor, N, alpha, 0.0, std::nullopt}, rng);
}

const FamilySpec kFamilies[] = {FamilySpec::gamma(), FamilySpec::weibull(), FamilySpec::lognormal()};

}  // namespace

TEST(PhiAt, ModelPlugInIsQuarterScore) {
  const auto grid = model_grid(kGamma, kTheta);
  const auto g = model_values(kGamma, kTheta, grid);
  const auto phi = phi_at(kGamma, kTheta, g, grid.nodes);
  for (std::size_t i = 0; i < grid.size(); i += 37) {
    if (g[i] < 1e-12 * 1e-5) continue;
    const Vec2 u = 0.25 * score(kGamma, kTheta, grid.nodes[i]);
    EXPECT_NEAR((phi[i] - u).norm(), 0.0, 1e-12 * u.norm());
  }
}

TEST(PhiAt, HomogeneityAndFloor) {
  const std::vector<double> nodes = {1000.0, 20000.0, 90000.0};
  const std::vector<double> g = {1e-6, 2e-5, 1e-30};
  const std::vector<double> g2 = {2e-6, 4e-5, 2e-30};
  const auto a = phi_at(kGamma, kTheta, g, nodes);
  const auto b = phi_at(kGamma, kTheta, g2, nodes);
  for (int i = 0; i < 2; ++i) EXPECT_NEAR((a[i] / std::sqrt(2.0) - b[i]).norm(), 0.0, 1e-14 * a[i].norm());
  EXPECT_EQ(a[2], Vec2::Zero());
  EXPECT_THROW(phi_at(kGamma, kTheta, std::vector<double>{1.0}, nodes), ShapeError);
}

TEST(Efficiency, ModelIdentityOnRandomSweep) {
  Stream rng(1);
  for (const auto& f : kFamilies) {
    for (int k = 0; k < 5; ++k) {
      const auto t = random_theta(f, rng);
      const auto grid = model_grid(f, t);
      const auto g = model_values(f, t, grid);
      const auto parts = sandwich_parts(f, t, grid, g, g, 1.0, 1.0);
      const Mat2 I = fisher_information(f, t, grid);
      // The density-ratio floor drops the extreme tail nodes.
      EXPECT_LT(rel_frob(parts.Sigma, I / 16.0), 1e-5) << f.name();
      EXPECT_LT(rel_frob(parts.A, I / 4.0), 1e-3) << f.name();
      EXPECT_LT(rel_frob(parts.asymptotic(), I.inverse()), 1e-3) << f.name();
    }
  }
}

TEST(Efficiency, CurvatureStepHalvingConsistent) {
  Stream rng(2);
  for (const auto& f : kFamilies) {
    const auto t = random_theta(f, rng);
    const auto grid = model_grid(f, t);
    const AffinityObjective obj(f, grid, model_values(f, t, grid));
    EXPECT_LT(rel_frob(affinity_curvature(obj, t, 1e-4), affinity_curvature(obj, t, 5e-5)), 5e-3);
  }
}

TEST(Sandwich, ModelPlugInGivesEfficientCovariance) {
  const auto s = srs_sample(1, 1000, 1e-3);
  const auto fit = mhde::fit(s, kGamma);
  const auto parts = sandwich(fit, s, kGamma, PlugIn::model);
  const Mat2 expected = (1.0 - 1e-3) * fisher_information(kGamma, fit.theta_hat).inverse() / (1000.0 / (1.0 - 1e-3));
  EXPECT_LT(rel_frob(parts.covariance(), expected), 1e-3);
  EXPECT_DOUBLE_EQ(parts.fpc, 1.0 - 1e-3);
  EXPECT_NEAR(parts.n_v_eff, 1000.0 / (1.0 - 1e-3), 1e-9);
}

TEST(Sandwich, KdePlugInIsPositiveDefiniteAndClose) {
  const auto s = srs_sample(2, 1000, 1e-3);
  const auto fit = mhde::fit(s, kGamma);
  const auto kde = sandwich(fit, s, kGamma, PlugIn::kde);
  const auto model = sandwich(fit, s, kGamma, PlugIn::model);
  EXPECT_NO_THROW(require_positive_definite(kde.A, "A"));
  // Both estimate the same covariance; the KDE version is inflated by smoothing.
  for (int j = 0; j < 2; ++j) {
    const double r = kde.covariance()(j, j) / model.covariance()(j, j);
    EXPECT_GT(r, 0.7);
    EXPECT_LT(r, 1.6);
  }
  const auto sm = sandwich(fit, s, kGamma, PlugIn::smoothed);
  EXPECT_GT(sm.Sigma.determinant(), 0.0);
}

TEST(Sandwich, FpcForDesigns) {
  const auto s = srs_sample(3, 500, 0.5);
  const auto fit = mhde::fit(s, kGamma);
  auto wr = s;
  wr.meta->kind = DesignKind::srs_wr;
  const auto p_wor = sandwich(fit, s, kGamma, PlugIn::model);
  const auto p_wr = sandwich(fit, wr, kGamma, PlugIn::model);
  EXPECT_EQ(p_wr.fpc, 1.0);
  EXPECT_EQ(p_wor.fpc, 0.5);
  EXPECT_EQ(p_wor.covariance(), (0.5 * p_wr.covariance()).eval());
}

TEST(Sandwich, VarianceNonIncreasingInAlpha) {
  const auto s = srs_sample(4, 500, 0.1);
  const auto fit = mhde::fit(s, kGamma);
  double prev = std::numeric_limits<double>::infinity();
  for (double alpha : {0.01, 0.1, 0.3, 0.6, 0.9}) {
    auto t = s;
    t.meta->alpha = alpha;
    const double v = sandwich(fit, t, kGamma, PlugIn::kde).covariance()(1, 1);
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(Sandwich, KishFallbackWithoutMetadata) {
  auto s = SurveySample::from_weights(srs_sample(5, 300, 0.01).y, std::vector<double>(300, 2.0));
  s.weight[0] = 6.0;
  const auto fit = mhde::fit(s, kGamma);
  const auto p = sandwich(fit, s, kGamma);
  EXPECT_DOUBLE_EQ(p.n_v_eff, kish_neff(s.weight));
  EXPECT_EQ(p.fpc, 1.0);
}

TEST(Sandwich, UnconvergedFitRejected) {
  const auto s = srs_sample(6, 300, 0.01);
  auto fit = mhde::fit(s, kGamma);
  fit.converged = false;
  EXPECT_THROW(sandwich(fit, s, kGamma), ConvergenceError);
}

TEST(Curvature, NonPositiveDefiniteFlagged) {
  Mat2 A;
  A << 1.0, 0.0, 0.0, -2.0;
  try {
    require_positive_definite(A, "test");
    FAIL();
  } catch (const CurvatureError& e) {
    EXPECT_DOUBLE_EQ(e.eigenvalues()[0], -2.0);
  }
}

TEST(ConfInt, MultiplierAndScaling) {
  EXPECT_NEAR(normal_multiplier(0.95), 1.959964, 1e-6);
  EXPECT_THROW(normal_multiplier(1.0), DomainError);
  SandwichParts p;
  p.A = Mat2::Identity();
  p.Sigma << 4.0, 1.0, 1.0, 9.0;
  p.n_v_eff = 100.0;
  const auto a = confint(kTheta, p, 0.95);
  p.Sigma *= 4.0;
  const auto b = confint(kTheta, p, 0.95);
  for (int j = 0; j < 2; ++j) {
    EXPECT_NEAR(b.relative_width[j], 2.0 * a.relative_width[j], 1e-15);
    EXPECT_LT(a.lower[j], a.upper[j]);
    EXPECT_TRUE(a.contains(j, kTheta[j]));
  }
  EXPECT_NEAR(a.upper[0] - kTheta[0], 1.959964 * 0.2, 1e-6);
}

TEST(PopulationStats, ClosedFormsAndDegenerateCi) {
  Stream rng(7);
  const auto ps = population_stats(kGamma, kTheta, Mat2::Zero(), 1000, rng);
  EXPECT_DOUBLE_EQ(ps.mean.estimate, 70000.0);
  EXPECT_DOUBLE_EQ(ps.mean.lower, 70000.0);
  EXPECT_DOUBLE_EQ(ps.mean.upper, 70000.0);
  EXPECT_NEAR(ps.median.estimate, special::gamma_p_inv(2.0, 0.5) * 35000.0, 1e-9);
  const auto ln = FamilySpec::lognormal();
  const auto pl = population_stats(ln, ParamVector(ln, 9.0, 2.0), Mat2::Zero(), 100, rng);
  EXPECT_NEAR(pl.median.estimate, std::exp(9.0), 1e-9);
  EXPECT_THROW(population_stats(kGamma, kTheta, Mat2::Zero(), 99, rng), DomainError);
}

TEST(PopulationStats, IntervalCoversAndRejects) {
  Stream rng(8);
  Mat2 cov;
  cov << 0.01, -150.0, -150.0, 4e6;
  const auto ps = population_stats(kGamma, kTheta, cov, 10000, rng);
  EXPECT_LT(ps.mean.lower, 70000.0);
  EXPECT_GT(ps.mean.upper, 70000.0);
  EXPECT_LT(ps.median.lower, ps.median.estimate);
  EXPECT_GT(ps.median.upper, ps.median.estimate);
  EXPECT_THROW(population_stats(kGamma, ParamVector(kGamma, 0.01, 0.01), Mat2::Identity(), 1000, rng),
               InstabilityError);
}

TEST(MleCovariance, InverseInformation) {
  const Mat2 c = mle_covariance(kGamma, kTheta, 500.0, 0.5);
  EXPECT_LT(rel_frob(c, 0.5 * fisher_information(kGamma, kTheta).inverse() / 500.0), 1e-14);
}

TEST(Coverage, ModelPlugInRoughlyNominal) {
  int hit[2] = {0, 0};
  const int R = 200;
  for (int r = 0; r < R; ++r) {
    const auto s = srs_sample(1000 + r, 1000, 1e-2);
    const auto fit = mhde::fit(s, kGamma);
    const auto ci = confint(fit.theta_hat, sandwich(fit, s, kGamma, PlugIn::model));
    for (int j = 0; j < 2; ++j) hit[j] += ci.contains(j, kTheta[j]);
  }
  // Binomial band at about 4 sigma around 95%.
  for (int j = 0; j < 2; ++j) {
    EXPECT_GT(hit[j], 0.88 * R) << j;
    EXPECT_LE(hit[j], R) << j;
  }
}
