#pragma once

// Contamination of samples and of the superpopulation model, influence
// functions of the MHDE functional, and alpha-curves T((1 - eps) G + eps H).

#include <boost/math/tools/toms748_solve.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mhde/errors.hpp"
#include "mhde/estimator.hpp"
#include "mhde/families.hpp"
#include "mhde/inference.hpp"
#include "mhde/model_grid.hpp"
#include "mhde/rng.hpp"
#include "mhde/special.hpp"
#include "mhde/survey.hpp"

namespace mhde {

// point_mass is the narrow normal standing in for an atom at z in
// population-level computations; it is not a sampling mechanism.
enum class Mechanism { point_normal, trunc_t, point_mass };
enum class Leverage { independent, high_leverage };
// printed: P(i) ~ (1 - pi_i)^-10; inverse_pi: P(i) ~ pi_i^-10.
enum class LeverageRule { printed, inverse_pi };
enum class Estimator { mhde, mle };

inline std::string_view to_string(Mechanism m) {
  switch (m) {
    case Mechanism::point_normal: return "point_normal";
    case Mechanism::trunc_t: return "trunc_t";
    case Mechanism::point_mass: return "point_mass";
  }
  return "?";
}

inline Mechanism mechanism_from_string(std::string_view s) {
  if (s == "point_normal") return Mechanism::point_normal;
  if (s == "trunc_t") return Mechanism::trunc_t;
  if (s == "point_mass") return Mechanism::point_mass;
  throw DomainError("unknown contamination mechanism '" + std::string(s) + "'");
}

inline std::string_view to_string(Leverage l) {
  return l == Leverage::independent ? "independent" : "high_leverage";
}

inline Leverage leverage_from_string(std::string_view s) {
  if (s == "independent") return Leverage::independent;
  if (s == "high_leverage") return Leverage::high_leverage;
  throw DomainError("unknown leverage '" + std::string(s) + "'");
}

inline std::string_view to_string(LeverageRule r) {
  return r == LeverageRule::printed ? "printed" : "inverse_pi";
}

inline LeverageRule leverage_rule_from_string(std::string_view s) {
  if (s == "printed") return LeverageRule::printed;
  if (s == "inverse_pi") return LeverageRule::inverse_pi;
  throw DomainError("unknown leverage rule '" + std::string(s) + "'");
}

inline std::string_view to_string(Estimator e) { return e == Estimator::mhde ? "mhde" : "mle"; }

struct ContaminationSpec {
  double epsilon = 0.0;
  Mechanism mechanism = Mechanism::point_normal;
  double z = 0.0;
  Leverage leverage = Leverage::independent;
  LeverageRule rule = LeverageRule::printed;
  double df = 3.0;

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 0.5))
      throw DomainError("contamination: epsilon must lie in [0, 0.5]");
    if (!(z > 0.0)) throw DomainError("contamination: location z must be positive");
    if (df != 3.0) throw DomainError("contamination: only df = 3 is supported");
  }
};

namespace detail {

// Moments of T ~ t_3 conditional on T > a, in closed form.
// int_a^inf t f = f(a) (3 + a^2) / 2 and
// int_a^inf t^2 f = (6 / pi) (pi/2 - atan(a / sqrt 3)) - 3 S(a).
inline double t3_truncated_variance(double a) {
  const double S = special::student_t_sf(3.0, a);
  const double m1 = special::student_t_pdf(3.0, a) * (3.0 + a * a) / 2.0 / S;
  const double m2 =
      ((6.0 / std::numbers::pi) * (0.5 * std::numbers::pi - std::atan(a / std::sqrt(3.0))) -
       3.0 * S) / S;
  return m2 - m1 * m1;
}

}  // namespace detail

/// Distribution of the replacement values; also provides the density used
/// for population-level mixtures.
class Contaminant {
 public:
  Contaminant(Mechanism mech, double z, double target_variance) : mech_(mech), z_(z) {
    if (!(z > 0.0)) throw DomainError("contaminant: z must be positive");
    if (!(target_variance > 0.0)) throw DomainError("contaminant: variance must be positive");
    switch (mech) {
      case Mechanism::point_normal:
        scale_ = std::sqrt(1e-2 * target_variance);
        break;
      case Mechanism::point_mass:
        scale_ = std::max(1e-3 * z, 1e-3 * std::sqrt(target_variance));
        break;
      case Mechanism::trunc_t: {
        // Scale s with Var(z + s T | z + s T > 0) = target_variance.
        auto g = [&](double s) {
          return s * s * detail::t3_truncated_variance(-z / s) - target_variance;
        };
        double lo = 1e-6 * std::sqrt(target_variance / 3.0), hi = std::sqrt(target_variance);
        while (g(hi) < 0.0) hi *= 2.0;
        boost::math::tools::eps_tolerance<double> tol(50);
        std::uintmax_t it = 200;
        const auto r = boost::math::tools::toms748_solve(g, lo, hi, tol, it);
        scale_ = 0.5 * (r.first + r.second);
        break;
      }
    }
    // Mass of the untruncated law on (0, inf).
    keep_ = mech == Mechanism::trunc_t ? special::student_t_sf(3.0, -z_ / scale_)
                                       : special::normal_cdf(z_ / scale_);
  }

  /// The contaminant for a true model: variance Var(Y) (trunc_t) or a
  /// fraction of it (normal variants).
  static Contaminant for_model(Mechanism mech, double z, const FamilySpec& spec,
                               const ParamVector& theta) {
    return Contaminant(mech, z, variance(spec, theta));
  }

  Mechanism mechanism() const noexcept { return mech_; }
  double location() const noexcept { return z_; }
  double scale() const noexcept { return scale_; }

  double density(double y) const {
    if (!(y > 0.0)) return 0.0;
    const double t = (y - z_) / scale_;
    const double base = mech_ == Mechanism::trunc_t ? special::student_t_pdf(3.0, t)
                                                    : special::normal_pdf(t);
    return base / (scale_ * keep_);
  }

  double draw(Stream& rng) const {
    if (mech_ == Mechanism::trunc_t) {
      // Inversion on the upper tail: P(T > t) = u S(-z/s).
      const double t = special::student_t_upper_quantile(3.0, rng.uniform() * keep_);
      return std::max(z_ + scale_ * t, std::numeric_limits<double>::min());
    }
    for (;;) {
      const double y = z_ + scale_ * rng.normal();
      if (y > 0.0) return y;
    }
  }

  /// Fine quadrature windows covering the contaminant's mass.
  std::vector<GridWindow> windows() const {
    if (mech_ == Mechanism::trunc_t)
      return {GridWindow{z_ - 20.0 * scale_, z_ + 20.0 * scale_, 80},
              GridWindow{z_ + 20.0 * scale_, z_ + 2000.0 * scale_, 60}};
    return {GridWindow{z_ - 9.0 * scale_, z_ + 9.0 * scale_, 36}};
  }

 private:
  Mechanism mech_;
  double z_;
  double scale_ = 0.0;
  double keep_ = 1.0;
};

inline std::size_t contaminated_count(double epsilon, std::size_t n) {
  return static_cast<std::size_t>(std::floor(epsilon * static_cast<double>(n) * (1.0 + 1e-12)));
}

/// Replace floor(eps n) responses by draws from the contaminant. Weights and
/// design fields are left untouched.
inline SurveySample contaminate(const SurveySample& sample, const ContaminationSpec& c,
                                const FamilySpec& spec, const ParamVector& theta_true,
                                Stream& rng) {
  c.validate();
  const std::size_t n = sample.size();
  const std::size_t k = contaminated_count(c.epsilon, n);
  SurveySample out = sample;
  if (k == 0) return out;
  if (c.leverage == Leverage::high_leverage && !sample.pi)
    throw DesignError("contaminate: high-leverage selection needs inclusion probabilities");

  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  if (c.leverage == Leverage::independent) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
    chosen.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  } else {
    // Efraimidis-Spirakis: the k smallest E_i / w_i, on the log scale.
    std::vector<std::pair<double, std::size_t>> keys(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = (*sample.pi)[i];
      const double log_w = c.rule == LeverageRule::printed ? -10.0 * std::log1p(-p)
                                                           : -10.0 * std::log(p);
      keys[i] = {std::log(rng.exponential()) - log_w, i};
    }
    std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(k), keys.end());
    for (std::size_t i = 0; i < k; ++i) chosen.push_back(keys[i].second);
  }
  std::sort(chosen.begin(), chosen.end());
  const auto h = Contaminant::for_model(c.mechanism, c.z, spec, theta_true);
  for (auto i : chosen) out.y[i] = h.draw(rng);
  return out;
}

// ---------------------------------------------------------------------------
// Population level.

/// g_eps = (1 - eps) f_theta0 + eps h tabulated on a grid that resolves both.
struct MixtureTarget {
  QuadGrid grid;
  std::vector<double> model;
  std::vector<double> contam;

  std::vector<double> at(double eps) const {
    std::vector<double> g(model.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (1.0 - eps) * model[i] + eps * contam[i];
    return g;
  }
};

inline MixtureTarget mixture_target(const FamilySpec& spec, const ParamVector& theta0,
                                    const Contaminant& h) {
  const auto win = h.windows();
  MixtureTarget m;
  m.grid = model_grid(spec, theta0, win);
  m.model.resize(m.grid.size());
  m.contam.resize(m.grid.size());
  for (std::size_t i = 0; i < m.grid.size(); ++i) {
    m.model[i] = density(spec, theta0, m.grid.nodes[i]);
    m.contam[i] = h.density(m.grid.nodes[i]);
  }
  return m;
}

/// Newton iterations on grad Gamma = 0 in the unconstrained coordinates,
/// Jacobian by central differences. Steps that do not reduce the gradient
/// norm are halved; the input is returned if nothing improves.
inline ParamVector newton_polish(const AffinityObjective& obj, const ParamVector& start,
                                 int max_iter = 30) {
  const FamilySpec& spec = obj.spec();
  auto grad_u = [&](const Vec2& u) {
    const ParamVector t = from_unconstrained(spec, u);
    Vec2 g = obj.gradient(t);
    for (int j = 0; j < 2; ++j)
      if (spec.positive(j)) g[j] *= t[j];
    return g;
  };
  Vec2 u = to_unconstrained(spec, start);
  Vec2 g = grad_u(u);
  for (int it = 0; it < max_iter; ++it) {
    Mat2 J;
    for (int j = 0; j < 2; ++j) {
      const double step = 1e-5 * std::max(1.0, std::abs(u[j]));
      Vec2 up = u, dn = u;
      up[j] += step;
      dn[j] -= step;
      J.col(j) = (grad_u(up) - grad_u(dn)) / (2.0 * step);
    }
    const Vec2 delta = J.fullPivLu().solve(-g);
    if (!delta.allFinite()) break;
    double lambda = 1.0;
    bool moved = false;
    for (int k = 0; k < 12; ++k, lambda *= 0.5) {
      const Vec2 cand = u + lambda * delta;
      const Vec2 gc = grad_u(cand);
      if (gc.allFinite() && gc.norm() < g.norm()) {
        u = cand;
        g = gc;
        moved = true;
        break;
      }
    }
    if (!moved || (lambda * delta).cwiseAbs().maxCoeff() < 1e-15) break;
  }
  return from_unconstrained(spec, u);
}

struct PopulationOptions {
  MhdeOptions mhde;
  bool polish = true;
};

/// T(G) for a tabulated target: simplex from `start`, optionally polished.
inline ParamVector population_mhde(const FamilySpec& spec, const QuadGrid& grid,
                                   const std::vector<double>& target, const ParamVector& start,
                                   const PopulationOptions& opts = {}) {
  const AffinityObjective obj(spec, grid, target);
  const auto best = maximize_affinity(obj, start, opts.mhde);
  return opts.polish ? newton_polish(obj, best.theta) : best.theta;
}

/// Population MLE: the weighted MLE with the grid nodes as pseudo
/// observations, weighted by quadrature weight times target density.
inline ParamVector population_mle(const FamilySpec& spec, const QuadGrid& grid,
                                  const std::vector<double>& target) {
  std::vector<double> y, w;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double v = grid.kronrod_weights[i] * target[i];
    if (grid.nodes[i] > 0.0 && v > 0.0) {
      y.push_back(grid.nodes[i]);
      w.push_back(v);
    }
  }
  return weighted_mle(spec, y, w);
}

struct InfluenceOptions {
  Mechanism mechanism = Mechanism::point_mass;
  Estimator estimator = Estimator::mhde;
  PopulationOptions solve;
};

/// (T(G_eps) - T(G)) / eps with G_eps = (1 - eps) F_theta0 + eps H_z. T(G) is
/// recomputed on the same grid so that quadrature error cancels; it equals
/// theta0 up to that error.
inline Vec2 empirical_influence(const FamilySpec& spec, const ParamVector& theta0, double z,
                                double eps, const InfluenceOptions& opts = {}) {
  if (!(eps > 0.0 && eps <= 0.5)) throw DomainError("empirical_influence: eps must lie in (0, 0.5]");
  if (!(density(spec, theta0, z) > 0.0))
    throw DomainError("empirical_influence: model density vanishes at z");
  const auto h = Contaminant::for_model(opts.mechanism, z, spec, theta0);
  const auto mix = mixture_target(spec, theta0, h);
  const auto clean = mix.at(0.0);
  const auto dirty = mix.at(eps);
  ParamVector t0 = theta0, t1 = theta0;
  if (opts.estimator == Estimator::mhde) {
    t0 = population_mhde(spec, mix.grid, clean, theta0, opts.solve);
    t1 = population_mhde(spec, mix.grid, dirty, t0, opts.solve);
  } else {
    t0 = population_mle(spec, mix.grid, clean);
    t1 = population_mle(spec, mix.grid, dirty);
  }
  return (t1.vec() - t0.vec()) / eps;
}

/// Q = 1/2 int [grad u + 1/2 u u^T] f_theta0 dy (the model-true case).
inline Mat2 influence_q(const FamilySpec& spec, const ParamVector& theta0) {
  const auto grid = model_grid(spec, theta0);
  Mat2 Q = Mat2::Zero();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double y = grid.nodes[i];
    if (!(y > 0.0)) continue;
    const double f = density(spec, theta0, y);
    if (f == 0.0) continue;
    const Vec2 u = score(spec, theta0, y);
    Q += grid.kronrod_weights[i] * f * (score_jacobian(spec, theta0, y) + 0.5 * u * u.transpose());
  }
  Q = 0.5 * (Q + Q.transpose()).eval();
  return 0.5 * Q;
}

/// IF(z) = -Q^{-1} phi(z) with phi(z) = u(z) / 4.
inline Vec2 analytic_influence(const FamilySpec& spec, const ParamVector& theta0, double z) {
  if (!(density(spec, theta0, z) > 0.0))
    throw DomainError("analytic_influence: model density vanishes at z");
  const Mat2 Q = influence_q(spec, theta0);
  require_positive_definite(-Q, "analytic_influence: Q");
  return -Q.inverse() * (0.25 * score(spec, theta0, z));
}

struct AlphaPoint {
  double epsilon = 0.0;
  ParamVector theta;
  std::array<double, 2> rel_bias{};
  bool converged = true;
};

/// T(G_eps) along an eps grid. Each point warm-starts from the previous
/// converged one; a failed point is recorded and the path continues.
inline std::vector<AlphaPoint> alpha_curve(const FamilySpec& spec, const ParamVector& theta0,
                                           double z, std::span<const double> eps_grid,
                                           Mechanism mechanism, Estimator estimator,
                                           const PopulationOptions& opts = {}) {
  for (double e : eps_grid)
    if (!(e >= 0.0 && e <= 0.5)) throw DomainError("alpha_curve: eps must lie in [0, 0.5]");
  const auto h = Contaminant::for_model(mechanism, z, spec, theta0);
  const auto mix = mixture_target(spec, theta0, h);
  std::vector<AlphaPoint> out;
  ParamVector start = theta0;
  for (double e : eps_grid) {
    AlphaPoint p{e, start, {}, true};
    try {
      const auto target = mix.at(e);
      p.theta = estimator == Estimator::mhde ? population_mhde(spec, mix.grid, target, start, opts)
                                             : population_mle(spec, mix.grid, target);
      start = p.theta;
    } catch (const ConvergenceError& err) {
      p.converged = false;
      const auto last = err.last_iterate();
      if (in_domain(spec, Vec2(last[0], last[1]))) p.theta = ParamVector(spec, last[0], last[1]);
    }
    for (int j = 0; j < 2; ++j) p.rel_bias[j] = p.theta[j] / theta0[j] - 1.0;
    out.push_back(p);
  }
  return out;
}

struct InfluencePoint {
  double p = 0.0;
  double z = 0.0;
  Vec2 value = Vec2::Zero();
};

/// Empirical influence at z = F^{-1}(p) for each p.
inline std::vector<InfluencePoint> influence_curve(const FamilySpec& spec,
                                                   const ParamVector& theta0,
                                                   std::span<const double> probs, double eps,
                                                   const InfluenceOptions& opts = {}) {
  std::vector<InfluencePoint> out;
  for (double p : probs) {
    const double z = quantile(spec, theta0, p);
    out.push_back({p, z, empirical_influence(spec, theta0, z, eps, opts)});
  }
  return out;
}

}  // namespace mhde
