#pragma once

// Two-parameter superpopulation families on (0, inf): gamma(shape, scale),
// weibull(shape, scale) and lognormal(mu, sigma).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mhde/errors.hpp"
#include "mhde/rng.hpp"
#include "mhde/special.hpp"
#include "mhde/survey.hpp"

namespace mhde {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

enum class Family { gamma, weibull, lognormal };

struct FamilySpec {
  Family id = Family::gamma;

  static FamilySpec gamma() { return {Family::gamma}; }
  static FamilySpec weibull() { return {Family::weibull}; }
  static FamilySpec lognormal() { return {Family::lognormal}; }

  static FamilySpec from_name(std::string_view name) {
    if (name == "gamma") return gamma();
    if (name == "weibull") return weibull();
    if (name == "lognormal") return lognormal();
    throw DomainError("unknown family '" + std::string(name) + "'");
  }

  std::string_view name() const {
    switch (id) {
      case Family::gamma: return "gamma";
      case Family::weibull: return "weibull";
      case Family::lognormal: return "lognormal";
    }
    return "?";
  }

  std::array<std::string_view, 2> param_names() const {
    switch (id) {
      case Family::gamma:
      case Family::weibull: return {"shape", "scale"};
      case Family::lognormal: return {"mu", "sigma"};
    }
    return {"?", "?"};
  }

  /// Whether parameter j is constrained to (0, inf). Unconstrained otherwise.
  bool positive(int j) const { return !(id == Family::lognormal && j == 0); }

  friend bool operator==(const FamilySpec&, const FamilySpec&) = default;
};

/// A point in the parameter space of a family. Construction outside the
/// domain throws.
class ParamVector {
 public:
  ParamVector(const FamilySpec& spec, double a, double b) : v_{a, b} {
    for (int j = 0; j < 2; ++j) {
      if (!std::isfinite(v_[j]) || (spec.positive(j) && !(v_[j] > 0.0)))
        throw DomainError(std::string(spec.name()) + ": parameter '" +
                          std::string(spec.param_names()[j]) +
                          "' outside its domain");
    }
  }
  ParamVector(const FamilySpec& spec, const Vec2& v) : ParamVector(spec, v[0], v[1]) {}

  double operator[](int j) const { return v_[j]; }
  const std::array<double, 2>& values() const { return v_; }
  Vec2 vec() const { return {v_[0], v_[1]}; }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::array<double, 2> v_;
};

inline bool in_domain(const FamilySpec& spec, const Vec2& v) {
  for (int j = 0; j < 2; ++j)
    if (!std::isfinite(v[j]) || (spec.positive(j) && !(v[j] > 0.0))) return false;
  return true;
}

/// Map to R^2: log for positive parameters, identity otherwise.
inline Vec2 to_unconstrained(const FamilySpec& spec, const ParamVector& t) {
  Vec2 out;
  for (int j = 0; j < 2; ++j) out[j] = spec.positive(j) ? std::log(t[j]) : t[j];
  return out;
}

inline ParamVector from_unconstrained(const FamilySpec& spec, const Vec2& u) {
  Vec2 out;
  for (int j = 0; j < 2; ++j) out[j] = spec.positive(j) ? std::exp(u[j]) : u[j];
  return ParamVector(spec, out);
}

/// log f_theta with the theta-only constants folded in once. Used wherever the
/// same theta is evaluated at many nodes.
class LogDensity {
 public:
  LogDensity(const FamilySpec& spec, const ParamVector& t) : id_(spec.id) {
    switch (id_) {
      case Family::gamma:
        a_ = t[0] - 1.0;
        b_ = 1.0 / t[1];
        c_ = -special::log_gamma(t[0]) - t[0] * std::log(t[1]);
        break;
      case Family::weibull:
        a_ = t[0] - 1.0;
        b_ = t[0];
        d_ = std::log(t[1]);
        c_ = std::log(t[0]) - t[0] * d_;
        break;
      case Family::lognormal:
        a_ = t[0];
        b_ = 1.0 / (2.0 * t[1] * t[1]);
        c_ = -std::log(t[1]) - 0.5 * std::log(2.0 * std::numbers::pi);
        break;
    }
  }

  /// log f(y) given y > 0 and log_y = log(y).
  double operator()(double y, double log_y) const {
    switch (id_) {
      case Family::gamma: return a_ * log_y - b_ * y + c_;
      case Family::weibull: return c_ + a_ * log_y - std::exp(b_ * (log_y - d_));
      case Family::lognormal: {
        const double z = log_y - a_;
        return -log_y - b_ * z * z + c_;
      }
    }
    return 0.0;
  }

  double operator()(double y) const {
    if (!(y > 0.0)) return -std::numeric_limits<double>::infinity();
    return (*this)(y, std::log(y));
  }

 private:
  Family id_;
  double a_ = 0, b_ = 0, c_ = 0, d_ = 0;
};

inline double log_density(const FamilySpec& spec, const ParamVector& t, double y) {
  return LogDensity(spec, t)(y);
}

/// f_theta(y); zero outside (0, inf). The gamma shape-1 case returns the
/// exponential limit 1/scale at y = 0.
inline double density(const FamilySpec& spec, const ParamVector& t, double y) {
  if (y == 0.0 && spec.id == Family::gamma && t[0] == 1.0) return 1.0 / t[1];
  if (y == 0.0 && spec.id == Family::weibull && t[0] == 1.0) return 1.0 / t[1];
  if (!(y > 0.0)) return 0.0;
  return std::exp(log_density(spec, t, y));
}

/// u_theta(y) = grad_theta log f_theta(y).
inline Vec2 score(const FamilySpec& spec, const ParamVector& t, double y) {
  if (!(y > 0.0) || !std::isfinite(y))
    throw DomainError("score: y outside the support interior");
  const double L = std::log(y);
  switch (spec.id) {
    case Family::gamma:
      return {L - std::log(t[1]) - special::digamma(t[0]),
              (y - t[0] * t[1]) / (t[1] * t[1])};
    case Family::weibull: {
      const double k = t[0], lam = t[1];
      const double lt = L - std::log(lam);
      const double r = std::exp(k * lt);
      return {1.0 / k + lt - r * lt, (k / lam) * (r - 1.0)};
    }
    case Family::lognormal: {
      const double mu = t[0], s = t[1];
      const double z = L - mu;
      return {z / (s * s), -1.0 / s + z * z / (s * s * s)};
    }
  }
  return Vec2::Zero();
}

/// Jacobian of the score, grad_theta u_theta(y) (the Hessian of log f).
inline Mat2 score_jacobian(const FamilySpec& spec, const ParamVector& t, double y) {
  if (!(y > 0.0) || !std::isfinite(y))
    throw DomainError("score_jacobian: y outside the support interior");
  const double L = std::log(y);
  Mat2 J;
  switch (spec.id) {
    case Family::gamma: {
      const double k = t[0], s = t[1];
      J << -special::trigamma(k), -1.0 / s,
           -1.0 / s, k / (s * s) - 2.0 * y / (s * s * s);
      break;
    }
    case Family::weibull: {
      const double k = t[0], lam = t[1];
      const double lt = L - std::log(lam);
      const double r = std::exp(k * lt);
      const double off = (r - 1.0 + k * r * lt) / lam;
      J << -1.0 / (k * k) - r * lt * lt, off,
           off, -(k / (lam * lam)) * (r - 1.0 + k * r);
      break;
    }
    case Family::lognormal: {
      const double mu = t[0], s = t[1];
      const double z = L - mu;
      J << -1.0 / (s * s), -2.0 * z / (s * s * s),
           -2.0 * z / (s * s * s), 1.0 / (s * s) - 3.0 * z * z / (s * s * s * s);
      break;
    }
  }
  return J;
}

inline double cdf(const FamilySpec& spec, const ParamVector& t, double y) {
  if (!(y > 0.0)) return 0.0;
  switch (spec.id) {
    case Family::gamma: return special::gamma_p(t[0], y / t[1]);
    case Family::weibull: return -std::expm1(-std::pow(y / t[1], t[0]));
    case Family::lognormal: return special::normal_cdf((std::log(y) - t[0]) / t[1]);
  }
  return 0.0;
}

/// G^{-1}(p). Upper-tail probabilities are handled through the complement so
/// that p = 1 - 1e-7 keeps full relative accuracy.
inline double quantile(const FamilySpec& spec, const ParamVector& t, double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("quantile: p must lie in (0, 1)");
  const double q = 1.0 - p;
  switch (spec.id) {
    case Family::gamma:
      return t[1] * (p < 0.5 ? special::gamma_p_inv(t[0], p)
                             : special::gamma_q_inv(t[0], q));
    case Family::weibull:
      return t[1] * std::pow(-std::log1p(-p), 1.0 / t[0]);
    case Family::lognormal:
      return std::exp(t[0] + t[1] * (p < 0.5 ? special::normal_quantile(p)
                                             : -special::normal_quantile(q)));
  }
  return 0.0;
}

inline double mean(const FamilySpec& spec, const ParamVector& t) {
  switch (spec.id) {
    case Family::gamma: return t[0] * t[1];
    case Family::weibull: return t[1] * special::gamma_fn(1.0 + 1.0 / t[0]);
    case Family::lognormal: return std::exp(t[0] + 0.5 * t[1] * t[1]);
  }
  return 0.0;
}

inline double variance(const FamilySpec& spec, const ParamVector& t) {
  switch (spec.id) {
    case Family::gamma: return t[0] * t[1] * t[1];
    case Family::weibull: {
      const double g1 = special::gamma_fn(1.0 + 1.0 / t[0]);
      const double g2 = special::gamma_fn(1.0 + 2.0 / t[0]);
      return t[1] * t[1] * (g2 - g1 * g1);
    }
    case Family::lognormal: {
      const double s2 = t[1] * t[1];
      return std::expm1(s2) * std::exp(2.0 * t[0] + s2);
    }
  }
  return 0.0;
}

inline double median(const FamilySpec& spec, const ParamVector& t) {
  switch (spec.id) {
    case Family::gamma: return t[1] * special::gamma_p_inv(t[0], 0.5);
    case Family::weibull: return t[1] * std::pow(std::numbers::ln2, 1.0 / t[0]);
    case Family::lognormal: return std::exp(t[0]);
  }
  return 0.0;
}

/// One draw from f_theta.
inline double draw(const FamilySpec& spec, const ParamVector& t, Stream& rng) {
  switch (spec.id) {
    case Family::gamma: return t[1] * rng.gamma(t[0]);
    case Family::weibull: return t[1] * std::pow(rng.exponential(), 1.0 / t[0]);
    case Family::lognormal: return std::exp(t[0] + t[1] * rng.normal());
  }
  return 0.0;
}

inline std::vector<double> sample(const FamilySpec& spec, const ParamVector& t,
                                  std::size_t n, Stream& rng) {
  if (n == 0) throw DomainError("sample: n must be at least 1");
  std::vector<double> out(n);
  for (auto& v : out) v = draw(spec, t, rng);
  return out;
}

namespace detail {

struct WeightedMoments {
  double total = 0, mean = 0, var = 0, log_mean = 0, log_var = 0;
};

inline WeightedMoments weighted_moments(std::span<const double> y,
                                        std::span<const double> w) {
  if (y.size() != w.size()) throw ShapeError("weights and responses differ in length");
  if (y.empty()) throw DomainError("empty sample");
  WeightedMoments m;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] > 0.0)) throw DomainError("responses must be positive");
    if (!(w[i] > 0.0)) throw DomainError("weights must be positive");
    m.total += w[i];
    m.mean += w[i] * y[i];
    m.log_mean += w[i] * std::log(y[i]);
  }
  m.mean /= m.total;
  m.log_mean /= m.total;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - m.mean;
    const double dl = std::log(y[i]) - m.log_mean;
    m.var += w[i] * d * d;
    m.log_var += w[i] * dl * dl;
  }
  m.var /= m.total;
  m.log_var /= m.total;
  return m;
}

inline bool all_equal(std::span<const double> y) {
  return std::adjacent_find(y.begin(), y.end(), std::not_equal_to<>()) == y.end();
}

}  // namespace detail

/// Method-of-moments starting point from weighted moments; always strictly
/// inside the domain (positive parameters floored at 1e-8).
inline ParamVector moment_init(const FamilySpec& spec, std::span<const double> y,
                               std::span<const double> w) {
  if (detail::all_equal(y)) throw DegenerateSampleError("moment_init: all responses are equal");
  const auto m = detail::weighted_moments(y, w);
  constexpr double floor = 1e-8;
  switch (spec.id) {
    case Family::gamma: {
      if (!(m.var > 0.0)) throw DegenerateSampleError("moment_init: zero weighted variance");
      return ParamVector(spec, std::max(m.mean * m.mean / m.var, floor),
                         std::max(m.var / m.mean, floor));
    }
    case Family::weibull: {
      // Var(log Y) = pi^2 / (6 k^2), E[log Y] = log(lambda) - gamma_E / k.
      const double sd = std::sqrt(m.log_var);
      if (!(sd > 0.0)) throw DegenerateSampleError("moment_init: zero log-scale spread");
      const double k = std::max(std::numbers::pi / (std::sqrt(6.0) * sd), floor);
      const double lam = std::exp(m.log_mean + std::numbers::egamma / k);
      return ParamVector(spec, k, std::max(lam, floor));
    }
    case Family::lognormal: {
      const double sd = std::sqrt(m.log_var);
      if (!(sd > 0.0)) throw DegenerateSampleError("moment_init: zero log-scale spread");
      return ParamVector(spec, m.log_mean, std::max(sd, floor));
    }
  }
  throw DomainError("moment_init: unknown family");
}

inline ParamVector moment_init(const FamilySpec& spec, const SurveySample& s) {
  return moment_init(spec, s.y, s.weight);
}

namespace detail {

/// Root of a strictly monotone function on a bracket by Newton steps that
/// fall back to bisection whenever they leave the bracket.
template <class F, class DF>
double safeguarded_newton(F f, DF df, double lo, double hi, double x, bool increasing,
                          int& iters, int max_iter = 200) {
  for (iters = 0; iters < max_iter; ++iters) {
    const double fx = f(x);
    if (fx == 0.0) return x;
    if ((fx > 0.0) == increasing) hi = x; else lo = x;
    double next = x - fx / df(x);
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 1e-15 * std::abs(x) || hi - lo <= 1e-15 * std::abs(x))
      return next;
    x = next;
  }
  return x;
}

}  // namespace detail

/// Gradient of the weight-normalized log-likelihood, sum w log f / sum w.
inline Vec2 weighted_loglik_gradient(const FamilySpec& spec, const ParamVector& t,
                                     std::span<const double> y,
                                     std::span<const double> w) {
  Vec2 g = Vec2::Zero();
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    g += w[i] * score(spec, t, y[i]);
    total += w[i];
  }
  return g / total;
}

/// Weighted maximum likelihood: maximizes sum_i w_i log f_theta(y_i).
inline ParamVector weighted_mle(const FamilySpec& spec, std::span<const double> y,
                                std::span<const double> w) {
  if (detail::all_equal(y)) throw DegenerateSampleError("weighted_mle: all responses are equal");
  const auto m = detail::weighted_moments(y, w);
  int iters = 0;
  auto check = [&](const ParamVector& t) {
    Vec2 g = weighted_loglik_gradient(spec, t, y, w);
    // Relative criterion: gradient with respect to log-parameters.
    for (int j = 0; j < 2; ++j) g[j] *= spec.positive(j) ? t[j] : 1.0;
    if (!(g.norm() < 1e-8))
      throw ConvergenceError("weighted_mle: gradient norm " + std::to_string(g.norm()) +
                                 " above tolerance",
                             t.values(), iters);
    return t;
  };
  switch (spec.id) {
    case Family::gamma: {
      // Profile equation log k - digamma(k) = log(mean) - mean(log y).
      const double c = std::log(m.mean) - m.log_mean;
      if (!(c > 0.0)) throw DegenerateSampleError("weighted_mle: zero spread");
      const double k0 = (3.0 - c + std::sqrt((c - 3.0) * (c - 3.0) + 24.0 * c)) / (12.0 * c);
      auto f = [c](double k) { return std::log(k) - special::digamma(k) - c; };
      auto df = [](double k) { return 1.0 / k - special::trigamma(k); };
      double lo = k0, hi = k0;
      while (f(lo) < 0.0) lo *= 0.5;
      while (f(hi) > 0.0) hi *= 2.0;
      const double k = detail::safeguarded_newton(f, df, lo, hi, k0, false, iters);
      return check(ParamVector(spec, k, m.mean / k));
    }
    case Family::weibull: {
      // Profile equation in k with log y shifted by its maximum for stability:
      // sum w y^k log y / sum w y^k - 1/k - mean(log y) = 0.
      std::vector<double> L(y.size());
      double Lmax = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < y.size(); ++i) Lmax = std::max(Lmax, L[i] = std::log(y[i]));
      auto moments = [&](double k, double& a, double& b, double& c) {
        double s0 = 0, s1 = 0, s2 = 0;
        for (std::size_t i = 0; i < y.size(); ++i) {
          const double e = w[i] * std::exp(k * (L[i] - Lmax));
          s0 += e;
          s1 += e * L[i];
          s2 += e * L[i] * L[i];
        }
        a = s0;
        b = s1 / s0;
        c = s2 / s0 - b * b;
      };
      auto f = [&](double k) {
        double a, b, c;
        moments(k, a, b, c);
        return b - 1.0 / k - m.log_mean;
      };
      auto df = [&](double k) {
        double a, b, c;
        moments(k, a, b, c);
        return c + 1.0 / (k * k);
      };
      const double k0 = moment_init(spec, y, w)[0];
      double lo = k0, hi = k0;
      while (f(lo) > 0.0) lo *= 0.5;
      while (f(hi) < 0.0) hi *= 2.0;
      const double k = detail::safeguarded_newton(f, df, lo, hi, k0, true, iters);
      double a, b, c;
      moments(k, a, b, c);
      const double lam = std::exp(Lmax + std::log(a / m.total) / k);
      return check(ParamVector(spec, k, lam));
    }
    case Family::lognormal:
      if (!(m.log_var > 0.0)) throw DegenerateSampleError("weighted_mle: zero spread");
      return check(ParamVector(spec, m.log_mean, std::sqrt(m.log_var)));
  }
  throw DomainError("weighted_mle: unknown family");
}

inline ParamVector weighted_mle(const FamilySpec& spec, const SurveySample& s) {
  return weighted_mle(spec, s.y, s.weight);
}

}  // namespace mhde
