#pragma once

// Asymptotic inference for the MHDE: the sandwich A^{-1} Sigma A^{-T} scaled
// by the finite-population correction and the variance-adaptive effective
// sample size, Wald intervals, and model-derived population statistics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mhde/errors.hpp"
#include "mhde/estimator.hpp"
#include "mhde/families.hpp"
#include "mhde/kde.hpp"
#include "mhde/model_grid.hpp"
#include "mhde/quadrature.hpp"
#include "mhde/rng.hpp"
#include "mhde/special.hpp"
#include "mhde/survey.hpp"

namespace mhde {

enum class PlugIn { kde, model, smoothed };

struct SandwichParts {
  Mat2 A = Mat2::Zero();
  Mat2 Sigma = Mat2::Zero();
  double n_v_eff = 1.0;
  double fpc = 1.0;

  /// A^{-1} Sigma A^{-T}: the covariance of sqrt(n_V-eff) (theta_hat - theta_0).
  Mat2 asymptotic() const {
    const Mat2 Ai = A.inverse();
    return Ai * Sigma * Ai.transpose();
  }

  /// Covariance of theta_hat itself.
  Mat2 covariance() const { return fpc * asymptotic() / n_v_eff; }
};

/// phi(y) = 1/4 u_theta(y) sqrt(f_theta(y) / g(y)) at each node. Nodes with
/// g at or below `rel_floor` times the peak of g contribute zero.
inline std::vector<Vec2> phi_at(const FamilySpec& spec, const ParamVector& t,
                                std::span<const double> g, std::span<const double> nodes,
                                double rel_floor = 1e-12) {
  if (g.size() != nodes.size()) throw ShapeError("phi_at: g/nodes mismatch");
  const double peak = g.empty() ? 0.0 : *std::max_element(g.begin(), g.end());
  const double floor = rel_floor * peak;
  const LogDensity ld(spec, t);
  std::vector<Vec2> out(nodes.size(), Vec2::Zero());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double y = nodes[i];
    if (!(y > 0.0) || !(g[i] > floor)) continue;
    const double ratio = std::exp(0.5 * ld(y)) / std::sqrt(g[i]);
    out[i] = 0.25 * ratio * score(spec, t, y);
  }
  return out;
}

/// Fisher information E[u u^T] by quadrature on `grid`.
inline Mat2 fisher_information(const FamilySpec& spec, const ParamVector& t, const QuadGrid& grid) {
  const LogDensity ld(spec, t);
  Mat2 I = Mat2::Zero();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double y = grid.nodes[i];
    if (!(y > 0.0)) continue;
    const double f = std::exp(ld(y));
    if (f == 0.0) continue;
    const Vec2 u = score(spec, t, y);
    I += grid.kronrod_weights[i] * f * (u * u.transpose());
  }
  return I;
}

inline Mat2 fisher_information(const FamilySpec& spec, const ParamVector& t) {
  return fisher_information(spec, t, model_grid(spec, t));
}

/// -grad^2 of the affinity against `target` by central differences in the
/// natural parameters, step max(rel_step |theta_j|, 1e-6), symmetrized.
inline Mat2 affinity_curvature(const AffinityObjective& obj, const ParamVector& t,
                               double rel_step = 1e-4) {
  const FamilySpec& spec = obj.spec();
  const Vec2 c = t.vec();
  Vec2 h;
  for (int j = 0; j < 2; ++j) h[j] = std::max(rel_step * std::abs(c[j]), 1e-6);
  auto at = [&](double d0, double d1) { return obj(ParamVector(spec, c[0] + d0, c[1] + d1)); };
  const double f0 = at(0, 0);
  Mat2 H;
  H(0, 0) = (at(h[0], 0) - 2.0 * f0 + at(-h[0], 0)) / (h[0] * h[0]);
  H(1, 1) = (at(0, h[1]) - 2.0 * f0 + at(0, -h[1])) / (h[1] * h[1]);
  H(0, 1) = (at(h[0], h[1]) - at(h[0], -h[1]) - at(-h[0], h[1]) + at(-h[0], -h[1])) /
            (4.0 * h[0] * h[1]);
  H(1, 0) = H(0, 1);
  return -H;
}

/// Sigma = int phi phi^T g with phi built from `g_phi`.
inline Mat2 score_variance(const FamilySpec& spec, const ParamVector& t, const QuadGrid& grid,
                           std::span<const double> g_phi, double rel_floor = 1e-12) {
  const auto phi = phi_at(spec, t, g_phi, grid.nodes, rel_floor);
  Mat2 S = Mat2::Zero();
  for (std::size_t i = 0; i < grid.size(); ++i)
    S += grid.kronrod_weights[i] * std::max(g_phi[i], 0.0) * (phi[i] * phi[i].transpose());
  return S;
}

/// Weighted covariance over the sampled units of the kernel-smoothed scaled
/// score psi_h(y_i) = int K_h(y - y_i) phi(y) dy, with phi built from the KDE.
inline Mat2 smoothed_score_variance(const FamilySpec& spec, const ParamVector& t,
                                    const HtKde& kde, const QuadGrid& grid,
                                    std::span<const double> kde_values,
                                    double rel_floor = 1e-12) {
  const auto phi = phi_at(spec, t, kde_values, grid.nodes, rel_floor);
  const auto& pts = kde.points();
  const auto& w = kde.norm_weights();
  const double h = kde.bandwidth();
  const double r = kde.kernel().effective_radius() * h;
  Mat2 S = Mat2::Zero();
  Vec2 mean = Vec2::Zero();
  std::size_t lo = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (lo < grid.size() && grid.nodes[lo] < pts[i] - r) ++lo;
    Vec2 psi = Vec2::Zero();
    for (std::size_t k = lo; k < grid.size() && grid.nodes[k] <= pts[i] + r; ++k)
      psi += grid.kronrod_weights[k] * kde.kernel()((grid.nodes[k] - pts[i]) / h) / h * phi[k];
    S += w[i] * (psi * psi.transpose());
    mean += w[i] * psi;
  }
  return S - mean * mean.transpose();
}

inline void require_positive_definite(const Mat2& A, const char* what) {
  Eigen::SelfAdjointEigenSolver<Mat2> es(0.5 * (A + A.transpose()));
  const auto ev = es.eigenvalues();
  if (!(ev[0] > 0.0))
    throw CurvatureError(std::string(what) + ": matrix is not positive definite",
                         {ev[0], ev[1]});
}

/// Sandwich parts at `t`: A from the affinity against `target`, Sigma from
/// phi built with `g_phi`.
inline SandwichParts sandwich_parts(const FamilySpec& spec, const ParamVector& t,
                                    const QuadGrid& grid, std::span<const double> target,
                                    std::span<const double> g_phi, double n_v_eff, double fpc) {
  SandwichParts p;
  p.A = affinity_curvature(AffinityObjective(spec, grid, target), t);
  require_positive_definite(p.A, "sandwich: affinity curvature");
  p.Sigma = score_variance(spec, t, grid, g_phi);
  p.n_v_eff = n_v_eff;
  p.fpc = fpc;
  return p;
}

/// n_V-eff and the finite-population correction implied by the sample's
/// design metadata; Kish's effective size when none is recorded.
inline std::pair<double, double> design_scaling(const SurveySample& sample) {
  double n_v_eff = kish_neff(sample.weight);
  double fpc = 1.0;
  if (sample.meta) {
    if (sample.meta->n_v_eff) n_v_eff = *sample.meta->n_v_eff;
    if (sample.meta->kind == DesignKind::srs_wor) fpc = 1.0 - sample.meta->alpha;
  }
  return {n_v_eff, fpc};
}

inline SandwichParts sandwich(const MhdeFit& fit, const SurveySample& sample,
                              const FamilySpec& spec, PlugIn plug_in = PlugIn::kde) {
  if (!fit.converged) throw ConvergenceError("sandwich: fit did not converge",
                                             fit.theta_hat.values(), fit.iterations);
  const auto target = fit.kde.evaluate(fit.grid.nodes);
  const auto [n_v_eff, fpc] = design_scaling(sample);
  if (plug_in == PlugIn::smoothed) {
    SandwichParts p;
    p.A = affinity_curvature(AffinityObjective(spec, fit.grid, target), fit.theta_hat);
    require_positive_definite(p.A, "sandwich: affinity curvature");
    p.Sigma = smoothed_score_variance(spec, fit.theta_hat, fit.kde, fit.grid, target);
    p.n_v_eff = n_v_eff;
    p.fpc = fpc;
    return p;
  }
  if (plug_in == PlugIn::kde)
    return sandwich_parts(spec, fit.theta_hat, fit.grid, target, target, n_v_eff, fpc);
  // Model plug-in: g = f_theta_hat in both A and Sigma, on a grid adapted to it.
  const auto grid = model_grid(spec, fit.theta_hat);
  std::vector<double> g(grid.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = density(spec, fit.theta_hat, grid.nodes[i]);
  return sandwich_parts(spec, fit.theta_hat, grid, g, g, n_v_eff, fpc);
}

struct ConfInterval {
  double level = 0.95;
  std::array<double, 2> lower{};
  std::array<double, 2> upper{};
  std::array<double, 2> relative_width{};

  bool contains(int j, double v) const { return lower[j] <= v && v <= upper[j]; }
};

inline double normal_multiplier(double level) {
  if (!(level > 0.0 && level < 1.0)) throw DomainError("confint: level must lie in (0, 1)");
  return special::normal_quantile(0.5 * (1.0 + level));
}

/// Wald interval theta_j +- z sqrt(cov_jj).
inline ConfInterval wald_interval(const ParamVector& t, const Mat2& cov, double level) {
  const double z = normal_multiplier(level);
  ConfInterval ci;
  ci.level = level;
  for (int j = 0; j < 2; ++j) {
    const double half = z * std::sqrt(std::max(cov(j, j), 0.0));
    ci.lower[j] = t[j] - half;
    ci.upper[j] = t[j] + half;
    ci.relative_width[j] = 2.0 * half / std::abs(t[j]);
  }
  return ci;
}

inline ConfInterval confint(const ParamVector& theta_hat, const SandwichParts& parts,
                            double level = 0.95) {
  return wald_interval(theta_hat, parts.covariance(), level);
}

/// Model-based covariance of the weighted MLE, fpc I(theta)^{-1} / n_V-eff.
inline Mat2 mle_covariance(const FamilySpec& spec, const ParamVector& t, double n_v_eff,
                           double fpc) {
  const Mat2 I = fisher_information(spec, t);
  require_positive_definite(I, "mle_covariance: Fisher information");
  return fpc * I.inverse() / n_v_eff;
}

struct StatEstimate {
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct PopulationStats {
  StatEstimate mean;
  StatEstimate median;
  std::size_t rejected = 0;
};

namespace detail {

inline double sorted_quantile(const std::vector<double>& v, double p) {
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto k = static_cast<std::size_t>(std::floor(pos));
  if (k + 1 >= v.size()) return v.back();
  return v[k] + (pos - static_cast<double>(k)) * (v[k + 1] - v[k]);
}

}  // namespace detail

/// Mean and median of f_theta_hat with percentile intervals over `draws`
/// parameter vectors from N(theta_hat, cov). Out-of-domain draws are
/// redrawn; more rejections than accepted draws is an error.
inline PopulationStats population_stats(const FamilySpec& spec, const ParamVector& theta_hat,
                                        const Mat2& cov, std::size_t draws, Stream& rng,
                                        double level = 0.95) {
  if (draws < 100) throw DomainError("population_stats: need at least 100 draws");
  Eigen::SelfAdjointEigenSolver<Mat2> es(0.5 * (cov + cov.transpose()));
  const Vec2 root_ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Mat2 L = es.eigenvectors() * root_ev.asDiagonal();

  PopulationStats out;
  out.mean.estimate = mean(spec, theta_hat);
  out.median.estimate = median(spec, theta_hat);
  std::vector<double> means, medians;
  means.reserve(draws);
  medians.reserve(draws);
  while (means.size() < draws) {
    const Vec2 z(rng.normal(), rng.normal());
    const Vec2 v = theta_hat.vec() + L * z;
    if (!in_domain(spec, v)) {
      if (++out.rejected > draws)
        throw InstabilityError("population_stats: more than half of the draws left the domain");
      continue;
    }
    const ParamVector t(spec, v);
    means.push_back(mean(spec, t));
    medians.push_back(median(spec, t));
  }
  std::sort(means.begin(), means.end());
  std::sort(medians.begin(), medians.end());
  const double lo = 0.5 * (1.0 - level), hi = 0.5 * (1.0 + level);
  out.mean.lower = detail::sorted_quantile(means, lo);
  out.mean.upper = detail::sorted_quantile(means, hi);
  out.median.lower = detail::sorted_quantile(medians, lo);
  out.median.upper = detail::sorted_quantile(medians, hi);
  return out;
}

}  // namespace mhde
