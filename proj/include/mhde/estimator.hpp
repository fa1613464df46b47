#pragma once

// The minimum Hellinger distance estimator: maximize the affinity
// Gamma(theta) = int sqrt(f_hat(y) f_theta(y)) dy over theta, with the
// integral computed on a fixed Gauss-Kronrod grid spanning the KDE support.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "mhde/errors.hpp"
#include "mhde/families.hpp"
#include "mhde/kde.hpp"
#include "mhde/nelder_mead.hpp"
#include "mhde/quadrature.hpp"
#include "mhde/survey.hpp"

namespace mhde {

enum class InitKind { moments, weighted_mle, explicit_theta };

struct MhdeOptions {
  std::size_t grid_subdivisions = 200;
  double nm_tol = 1e-8;
  int nm_max_iter = 2000;
  int restarts = 2;
  InitKind init = InitKind::moments;
  std::optional<ParamVector> explicit_theta;
  Kernel kernel = Kernel::gaussian();
  std::optional<double> bandwidth;  // nullopt: bandwidth_default
  double log_box = 30.0;            // bound on the unconstrained coordinates
  double support_padding = 0.0;     // extra bandwidths beyond the kernel radius
};

/// Affinity against a fixed target density tabulated on a grid. Nodes where
/// the target vanishes (or lie outside (0, inf)) are dropped once.
class AffinityObjective {
 public:
  AffinityObjective(FamilySpec spec, const QuadGrid& grid, std::span<const double> target)
      : spec_(spec) {
    if (target.size() != grid.size()) throw ShapeError("affinity: target/grid mismatch");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double y = grid.nodes[i];
      const double g = std::max(target[i], 0.0);
      if (!(y > 0.0) || g == 0.0) continue;
      y_.push_back(y);
      log_y_.push_back(std::log(y));
      coef_.push_back(grid.kronrod_weights[i] * std::sqrt(g));
    }
  }

  const FamilySpec& spec() const noexcept { return spec_; }

  /// Unclamped quadrature of sqrt(target * f_theta).
  double operator()(const ParamVector& t) const {
    const LogDensity ld(spec_, t);
    double acc = 0.0;
    for (std::size_t k = 0; k < y_.size(); ++k)
      acc += coef_[k] * std::exp(0.5 * ld(y_[k], log_y_[k]));
    return acc;
  }

  /// S(theta) = grad Gamma = 1/2 int u_theta sqrt(f_theta * target).
  Vec2 gradient(const ParamVector& t) const {
    const LogDensity ld(spec_, t);
    Vec2 g = Vec2::Zero();
    for (std::size_t k = 0; k < y_.size(); ++k)
      g += coef_[k] * std::exp(0.5 * ld(y_[k], log_y_[k])) * score(spec_, t, y_[k]);
    return 0.5 * g;
  }

 private:
  FamilySpec spec_;
  std::vector<double> y_, log_y_, coef_;
};

inline double clamp_unit(double v) { return std::clamp(v, 0.0, 1.0); }

/// Gamma_gamma(theta) for a fitted KDE on `grid`, clamped to [0, 1].
inline double affinity(const ParamVector& t, const HtKde& kde, const FamilySpec& spec,
                       const QuadGrid& grid) {
  const auto fk = kde.evaluate(grid.nodes);
  return clamp_unit(AffinityObjective(spec, grid, fk)(t));
}

/// H^2(f, g) = 1 - int sqrt(f g) on `grid`, clamped to [0, 1].
template <class F, class G>
double hellinger_sq(F&& f, G&& g, const QuadGrid& grid) {
  std::vector<double> v(grid.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double a = std::max(f(grid.nodes[i]), 0.0);
    const double b = std::max(g(grid.nodes[i]), 0.0);
    v[i] = std::sqrt(a) * std::sqrt(b);
  }
  return clamp_unit(1.0 - integrate(v, grid).kronrod);
}

struct AffinityMax {
  ParamVector theta;
  double affinity = 0.0;
  bool converged = false;
  int iterations = 0;
  int best_run = 0;
};

/// Nelder-Mead on the unconstrained coordinates with restarts. The first run
/// starts from `start` with +5% coordinate steps; restart r starts from the
/// incumbent with steps of x1.05 (odd r) or x0.95 (even r). The highest
/// affinity wins, earliest run on ties.
inline AffinityMax maximize_affinity(const AffinityObjective& obj, const ParamVector& start,
                                     const MhdeOptions& opts) {
  const FamilySpec& spec = obj.spec();
  auto neg = [&](const Vec2& u) {
    if (u.cwiseAbs().maxCoeff() > opts.log_box) return std::numeric_limits<double>::infinity();
    return -obj(from_unconstrained(spec, u));
  };
  auto step_for = [&](const Vec2& u, double factor) {
    Vec2 s;
    for (int j = 0; j < 2; ++j)
      s[j] = spec.positive(j) ? std::log(factor) : (factor - 1.0) * std::max(1.0, std::abs(u[j]));
    return s;
  };

  Vec2 best_u = to_unconstrained(spec, start);
  double best_f = std::numeric_limits<double>::infinity();
  bool any_converged = false;
  int total_iter = 0, best_run = 0;
  for (int r = 0; r <= opts.restarts; ++r) {
    const double factor = r == 0 ? 1.05 : (r % 2 == 1 ? 1.05 : 0.95);
    const Vec2 x0 = best_u;
    const auto res = nelder_mead(neg, x0, step_for(x0, factor), opts.nm_tol, opts.nm_max_iter);
    total_iter += res.iterations;
    const bool on_boundary = res.x.cwiseAbs().maxCoeff() >= opts.log_box - 1e-6;
    if (res.converged && !on_boundary) any_converged = true;
    if (res.fx < best_f) {
      best_f = res.fx;
      best_u = res.x;
      best_run = r;
    }
  }
  AffinityMax out{from_unconstrained(spec, best_u), -best_f, any_converged, total_iter, best_run};
  if (!any_converged)
    throw ConvergenceError("mhde: no Nelder-Mead run converged", out.theta.values(), total_iter);
  return out;
}

struct MhdeFit {
  ParamVector theta_hat;
  double affinity = 0.0;
  double hellinger_sq = 1.0;
  bool converged = false;
  int iterations = 0;
  HtKde kde;
  QuadGrid grid;
  std::optional<Mat2> covariance;
  double n_v_eff_used = 0.0;
  DesignKind design_kind = DesignKind::unknown;
};

/// Grid over the KDE support, clipped at zero for the positive families. The
/// panel count is raised so that no panel is wider than half a bandwidth.
inline QuadGrid kde_grid(const HtKde& kde, std::size_t subdivisions, double padding = 0.0,
                         bool clip_at_zero = true) {
  const auto [a, b] = kde.support_interval(false);
  const double pad = padding * kde.bandwidth();
  const double lo = clip_at_zero ? std::max(a - pad, 0.0) : a - pad;
  const double hi = b + pad;
  const double need = std::ceil(2.0 * (hi - lo) / kde.bandwidth());
  const auto panels = std::max<std::size_t>(
      subdivisions, static_cast<std::size_t>(std::min(need, 200000.0)));
  if (kde.kernel().kind == KernelKind::gaussian) return build_grid(lo, hi, panels);
  // Compact kernels have kinks at y_i +- h; put breakpoints there.
  std::vector<double> bp;
  bp.reserve(panels + 1 + 2 * kde.points().size());
  for (std::size_t k = 0; k <= panels; ++k)
    bp.push_back(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(panels));
  const double r = kde.kernel().effective_radius() * kde.bandwidth();
  for (double y : kde.points())
    for (double v : {y - r, y + r})
      if (v > lo && v < hi) bp.push_back(v);
  std::sort(bp.begin(), bp.end());
  bp.erase(std::unique(bp.begin(), bp.end()), bp.end());
  return build_grid(bp);
}

inline ParamVector initial_theta(const FamilySpec& spec, const SurveySample& s,
                                 const MhdeOptions& opts) {
  switch (opts.init) {
    case InitKind::moments: return moment_init(spec, s);
    case InitKind::weighted_mle: return weighted_mle(spec, s);
    case InitKind::explicit_theta:
      if (!opts.explicit_theta) throw DomainError("mhde: explicit init requested without theta");
      return *opts.explicit_theta;
  }
  return moment_init(spec, s);
}

inline MhdeFit fit(const SurveySample& sample, const FamilySpec& spec,
                   const MhdeOptions& opts = {}) {
  sample.validate();
  if (sample.empty()) throw DomainError("mhde: empty sample");
  HtKde kde = fit_kde(sample, opts.kernel, opts.bandwidth);
  QuadGrid grid = kde_grid(kde, opts.grid_subdivisions, opts.support_padding);
  const auto fk = kde.evaluate(grid.nodes);
  const AffinityObjective obj(spec, grid, fk);
  const auto best = maximize_affinity(obj, initial_theta(spec, sample, opts), opts);
  const double aff = clamp_unit(best.affinity);
  MhdeFit out{best.theta,
              aff,
              1.0 - aff,
              best.converged,
              best.iterations,
              std::move(kde),
              std::move(grid),
              std::nullopt,
              0.0,
              sample.meta ? sample.meta->kind : DesignKind::unknown};
  return out;
}

/// ||sqrt(f_hat) - sqrt(g)||_2 on `grid`.
template <class G>
double hellinger_norm(const HtKde& kde, G&& g, const QuadGrid& grid) {
  const auto fk = kde.evaluate(grid.nodes);
  std::vector<double> v(grid.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d = std::sqrt(std::max(fk[i], 0.0)) - std::sqrt(std::max(g(grid.nodes[i]), 0.0));
    v[i] = d * d;
  }
  return std::sqrt(std::max(integrate(v, grid).kronrod, 0.0));
}

/// sup over `thetas` of |Gamma_gamma(theta) - Gamma_g(theta)|.
template <class G>
double uniform_affinity_gap(const HtKde& kde, const FamilySpec& spec,
                            std::span<const ParamVector> thetas, G&& g,
                            const QuadGrid& grid) {
  const auto fk = kde.evaluate(grid.nodes);
  std::vector<double> gv(grid.size());
  for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = g(grid.nodes[i]);
  const AffinityObjective with_kde(spec, grid, fk);
  const AffinityObjective with_g(spec, grid, gv);
  double gap = 0.0;
  for (const auto& t : thetas) gap = std::max(gap, std::abs(with_kde(t) - with_g(t)));
  return gap;
}

}  // namespace mhde
