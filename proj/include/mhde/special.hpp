#pragma once

// Thin wrappers over Boost.Math so that every caller uses the same error
// policy (no promotion to long double, domain errors as exceptions).

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/policies/policy.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

namespace mhde::special {

using Policy = boost::math::policies::policy<
    boost::math::policies::promote_double<false>,
    boost::math::policies::overflow_error<boost::math::policies::ignore_error>>;

inline double log_gamma(double x) { return boost::math::lgamma(x, Policy()); }
inline double gamma_fn(double x) { return boost::math::tgamma(x, Policy()); }
inline double digamma(double x) { return boost::math::digamma(x, Policy()); }
inline double trigamma(double x) { return boost::math::trigamma(x, Policy()); }

/// Regularized lower incomplete gamma P(a, x).
inline double gamma_p(double a, double x) {
  return boost::math::gamma_p(a, x, Policy());
}
inline double gamma_p_inv(double a, double p) {
  return boost::math::gamma_p_inv(a, p, Policy());
}
inline double gamma_q_inv(double a, double q) {
  return boost::math::gamma_q_inv(a, q, Policy());
}

inline double normal_cdf(double x) {
  return boost::math::cdf(boost::math::normal_distribution<double, Policy>(), x);
}
inline double normal_quantile(double p) {
  return boost::math::quantile(
      boost::math::normal_distribution<double, Policy>(), p);
}
inline double normal_pdf(double x) {
  return boost::math::pdf(boost::math::normal_distribution<double, Policy>(), x);
}

inline double student_t_cdf(double df, double x) {
  return boost::math::cdf(boost::math::students_t_distribution<double, Policy>(df), x);
}
inline double student_t_quantile(double df, double p) {
  return boost::math::quantile(
      boost::math::students_t_distribution<double, Policy>(df), p);
}
/// Upper-tail quantile: x with P(T > x) = q.
inline double student_t_upper_quantile(double df, double q) {
  return boost::math::quantile(
      boost::math::complement(boost::math::students_t_distribution<double, Policy>(df), q));
}
inline double student_t_sf(double df, double x) {
  return boost::math::cdf(
      boost::math::complement(boost::math::students_t_distribution<double, Policy>(df), x));
}
inline double student_t_pdf(double df, double x) {
  return boost::math::pdf(boost::math::students_t_distribution<double, Policy>(df), x);
}

}  // namespace mhde::special
