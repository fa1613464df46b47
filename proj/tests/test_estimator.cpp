#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "mhde/designs.hpp"
#include "mhde/estimator.hpp"
#include "mhde/model_grid.hpp"
#include "mhde/nelder_mead.hpp"

using namespace mhde;

namespace {

const FamilySpec kGamma = FamilySpec::gamma();
const ParamVector kTheta(kGamma, 2.0, 35000.0);

SurveySample srs_sample(std::uint64_t seed, std::size_t n, std::size_t N = 100000) {
  auto rng = Stream::derive(4242, {seed, n});
  const auto pop = simulate_population(kGamma, kTheta, N, 0.0, rng);
  const double alpha = static_cast<double>(n) / static_cast<double>(N);
  return draw_sample(pop, {DesignKind::srs_wor, N, alpha, 0.0, std::nullopt}, rng);
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

TEST(NelderMead, Rosenbrock) {
  auto f = [](const Vec2& x) {
    return 100.0 * std::pow(x[1] - x[0] * x[0], 2) + std::pow(1.0 - x[0], 2);
  };
  const auto r = nelder_mead(f, Vec2(-1.2, 1.0), Vec2(0.1, 0.1), 1e-12, 5000);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.x[0], 1.0, 1e-5);
  EXPECT_NEAR(r.x[1], 1.0, 1e-5);
}

TEST(Affinity, ModelAgainstItselfIsOne) {
  for (const auto& f : {FamilySpec::gamma(), FamilySpec::weibull(), FamilySpec::lognormal()}) {
    const ParamVector t = f.id == Family::lognormal ? ParamVector(f, 9.0, 2.0) : ParamVector(f, 2.0, 35000.0);
    const auto grid = model_grid(f, t);
    std::vector<double> g(grid.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = density(f, t, grid.nodes[i]);
    EXPECT_NEAR(AffinityObjective(f, grid, g)(t), 1.0, 1e-8) << f.name();
  }
}

TEST(Affinity, DisjointSupportsGiveZero) {
  const auto kde = fit_kde(std::vector<double>{1e9}, std::vector<double>{1.0}, Kernel::epanechnikov(), 1.0);
  const auto grid = kde_grid(kde, 50);
  EXPECT_EQ(affinity(kTheta, kde, kGamma, grid), 0.0);
}

TEST(Affinity, GammaPairMatchesDenseSimpson) {
  const ParamVector t2(kGamma, 2.2, 33000.0);
  // Composite Simpson, 10^6 intervals on [0, 2e6], as an independent oracle.
  const int m = 1000000;
  const double b = 2e6, h = b / m;
  auto f = [&](double y) {
    if (y <= 0.0) return 0.0;
    const long double a1 = std::exp(static_cast<long double>(std::log(y) - y / 35000.0 - 2.0 * std::log(35000.0) - std::lgamma(2.0)));
    const long double a2 = std::exp(static_cast<long double>(1.2 * std::log(y) - y / 33000.0 - 2.2 * std::log(33000.0) - std::lgamma(2.2)));
    return static_cast<double>(std::sqrt(a1 * a2));
  };
  long double s = f(0.0) + f(b);
  for (int i = 1; i < m; ++i) s += (i % 2 ? 4.0L : 2.0L) * f(i * h);
  const double oracle = static_cast<double>(s * h / 3.0L);

  const auto grid = model_grid(kGamma, kTheta);
  std::vector<double> g(grid.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = density(kGamma, t2, grid.nodes[i]);
  EXPECT_NEAR(AffinityObjective(kGamma, grid, g)(kTheta), oracle, 1e-6);
  EXPECT_LT(oracle, 1.0);
  EXPECT_GT(oracle, 0.99);
}

TEST(HellingerSq, NormalClosedForm) {
  auto phi = [](double m) {
    return [m](double y) { return std::exp(-0.5 * (y - m) * (y - m)) / std::sqrt(2.0 * std::numbers::pi); };
  };
  const auto grid = build_grid(-12.0, 14.0, 120);
  EXPECT_NEAR(hellinger_sq(phi(0.0), phi(2.0), grid), 1.0 - std::exp(-0.5), 1e-12);
  EXPECT_NEAR(hellinger_sq(phi(1.0), phi(1.0), grid), 0.0, 1e-12);
}

TEST(HellingerSq, Symmetric) {
  Stream rng(1);
  for (int r = 0; r < 20; ++r) {
    const ParamVector a(kGamma, 1 + 3 * rng.uniform(), 1 + 9 * rng.uniform());
    const ParamVector b(kGamma, 1 + 3 * rng.uniform(), 1 + 9 * rng.uniform());
    const auto grid = build_grid(0.0, 300.0, 300);
    auto fa = [&](double y) { return density(kGamma, a, y); };
    auto fb = [&](double y) { return density(kGamma, b, y); };
    EXPECT_NEAR(hellinger_sq(fa, fb, grid), hellinger_sq(fb, fa, grid), 1e-12);
  }
}

TEST(Fit, CleanGammaLargeSample) {
  Stream rng(2);
  const auto y = sample(kGamma, kTheta, 10000, rng);
  const auto fit = mhde::fit(SurveySample::equal_weights(y), kGamma);
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.theta_hat[0] / 2.0, 1.0, 0.05);
  EXPECT_NEAR(fit.theta_hat[1] / 35000.0, 1.0, 0.05);
  EXPECT_LT(fit.hellinger_sq, 0.01);
  EXPECT_NEAR(fit.hellinger_sq, 1.0 - fit.affinity, 1e-12);
  EXPECT_GE(fit.affinity, 0.0);
  EXPECT_LE(fit.affinity, 1.0);
}

TEST(Fit, WeightRescalingInvariance) {
  const auto s = srs_sample(3, 500);
  // A power-of-two factor rescales every weight exactly, so the fit is bitwise identical.
  auto s8 = s;
  for (auto& w : s8.weight) w *= 8.0;
  const auto a = mhde::fit(s, kGamma), b = mhde::fit(s8, kGamma);
  EXPECT_EQ(a.theta_hat, b.theta_hat);
  // Other factors perturb the normalized weights by an ulp; the argmax moves by
  // far less than the simplex tolerance.
  auto s7 = s;
  for (auto& w : s7.weight) w *= 7.3;
  const auto c = mhde::fit(s7, kGamma);
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(a.theta_hat[j], c.theta_hat[j], 1e-6 * a.theta_hat[j]);
}

TEST(Fit, OtherFamiliesRecover) {
  Stream rng(4);
  const auto w = FamilySpec::weibull();
  const ParamVector tw(w, 1.5, 10.0);
  const auto fw = mhde::fit(SurveySample::equal_weights(sample(w, tw, 5000, rng)), w);
  EXPECT_NEAR(fw.theta_hat[0] / 1.5, 1.0, 0.06);
  EXPECT_NEAR(fw.theta_hat[1] / 10.0, 1.0, 0.06);
  const auto l = FamilySpec::lognormal();
  const ParamVector tl(l, 3.0, 0.5);
  const auto fl = mhde::fit(SurveySample::equal_weights(sample(l, tl, 5000, rng)), l);
  EXPECT_NEAR(fl.theta_hat[0], 3.0, 0.05);
  EXPECT_NEAR(fl.theta_hat[1] / 0.5, 1.0, 0.06);
}

TEST(Fit, InitChoicesAgree) {
  const auto s = srs_sample(5, 1000);
  MhdeOptions o1, o2, o3;
  o2.init = InitKind::weighted_mle;
  o3.init = InitKind::explicit_theta;
  o3.explicit_theta = ParamVector(kGamma, 1.5, 50000.0);
  const auto a = mhde::fit(s, kGamma, o1), b = mhde::fit(s, kGamma, o2), c = mhde::fit(s, kGamma, o3);
  for (int j = 0; j < 2; ++j) {
    EXPECT_NEAR(a.theta_hat[j] / b.theta_hat[j], 1.0, 1e-4);
    EXPECT_NEAR(a.theta_hat[j] / c.theta_hat[j], 1.0, 1e-4);
  }
  MhdeOptions bad;
  bad.init = InitKind::explicit_theta;
  EXPECT_THROW(mhde::fit(s, kGamma, bad), DomainError);
}

TEST(Fit, IterationBudgetExhaustedThrows) {
  const auto s = srs_sample(6, 300);
  MhdeOptions o;
  o.nm_max_iter = 3;
  o.restarts = 0;
  try {
    mhde::fit(s, kGamma, o);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.last_iterate()[0], 0.0);
    EXPECT_EQ(e.iterations(), 3);
  }
}

TEST(Fit, MatchesLogGridBruteForce) {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const auto s = srs_sample(seed, 1000);
    const auto fit = mhde::fit(s, kGamma);
    const AffinityObjective obj(kGamma, fit.grid, fit.kde.evaluate(fit.grid.nodes));
    const auto c = moment_init(kGamma, s);
    const double step = 0.6 / 60.0;
    double best = -1.0, bl0 = 0.0, bl1 = 0.0;
    for (int i = 0; i <= 60; ++i)
      for (int j = 0; j <= 60; ++j) {
        const double l0 = std::log(c[0]) - 0.3 + step * i;
        const double l1 = std::log(c[1]) - 0.3 + step * j;
        const double v = obj(ParamVector(kGamma, std::exp(l0), std::exp(l1)));
        if (v > best) {
          best = v;
          bl0 = l0;
          bl1 = l1;
        }
      }
    EXPECT_LE(std::abs(std::log(fit.theta_hat[0]) - bl0), step) << seed;
    EXPECT_LE(std::abs(std::log(fit.theta_hat[1]) - bl1), step) << seed;
    EXPECT_GE(fit.affinity, best - 1e-8);
  }
}

TEST(UniformGap, BoundedByHellingerAndL1) {
  Stream rng(7);
  std::vector<ParamVector> thetas;
  for (int i = 0; i <= 20; ++i)
    for (int j = 0; j <= 20; ++j)
      thetas.emplace_back(kGamma, std::exp(std::log(2.0) - 0.5 + 0.05 * i),
                          std::exp(std::log(35000.0) - 0.5 + 0.05 * j));
  const auto g = [](double y) { return density(kGamma, kTheta, y); };
  for (int r = 0; r < 5; ++r) {
    const auto y = sample(kGamma, kTheta, 100 + rng.index(900), rng);
    std::vector<double> w(y.size());
    for (auto& v : w) v = 0.5 + rng.uniform();
    const auto kde = fit_kde(y, w, Kernel::gaussian());
    auto bp = model_breakpoints(kGamma, kTheta);
    const auto [a, b] = kde.support_interval();
    for (int k = 0; k <= 400; ++k) bp.push_back(std::max(0.0, a + (b - a) * k / 400.0));
    const auto grid = build_grid(merge_breakpoints(bp));
    const double gap = uniform_affinity_gap(kde, kGamma, thetas, g, grid);
    EXPECT_LE(gap, hellinger_norm(kde, g, grid) + 1e-8);
    EXPECT_LE(gap, std::sqrt(l1_distance(kde, g, grid)) + 1e-8);
  }
  // KDE replaced by g itself: no gap.
  const auto grid = model_grid(kGamma, kTheta);
  std::vector<double> gv(grid.size());
  for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = g(grid.nodes[i]);
  const AffinityObjective a(kGamma, grid, gv), b(kGamma, grid, gv);
  for (const auto& t : thetas) EXPECT_EQ(a(t), b(t));
}

TEST(Fit, ConsistencyTrend) {
  double prev = 1e9;
  for (std::size_t n : {250u, 1000u, 4000u}) {
    std::vector<double> err;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto fit = mhde::fit(srs_sample(100 + seed, n), kGamma);
      const double d0 = fit.theta_hat[0] - 2.0, d1 = fit.theta_hat[1] - 35000.0;
      err.push_back(std::sqrt(d0 * d0 + d1 * d1) / std::sqrt(4.0 + 35000.0 * 35000.0));
    }
    const double med = median_of(err);
    EXPECT_LT(med, prev) << n;
    prev = med;
  }
}

TEST(Fit, EfficiencyAtTheModel) {
  double se_h[2] = {0, 0}, se_m[2] = {0, 0};
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto s = srs_sample(1000 + seed, 1000);
    const auto h = mhde::fit(s, kGamma).theta_hat;
    const auto m = weighted_mle(kGamma, s);
    for (int j = 0; j < 2; ++j) {
      se_h[j] += std::pow(h[j] / kTheta[j] - 1.0, 2);
      se_m[j] += std::pow(m[j] / kTheta[j] - 1.0, 2);
    }
  }
  for (int j = 0; j < 2; ++j) {
    const double ratio = std::sqrt(se_h[j] / se_m[j]);
    EXPECT_GE(ratio, 0.9) << j;
    EXPECT_LE(ratio, 1.3) << j;
  }
}
