#pragma once

// Horvitz-Thompson adjusted kernel density estimate. Each sampled unit
// carries its normalized survey weight omega_i / sum(omega), so the estimate
// integrates to one for every realized sample and does not change when all
// weights are rescaled.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "mhde/errors.hpp"
#include "mhde/quadrature.hpp"
#include "mhde/survey.hpp"

namespace mhde {

enum class KernelKind { gaussian, epanechnikov };

struct Kernel {
  KernelKind kind = KernelKind::gaussian;

  static Kernel gaussian() { return {KernelKind::gaussian}; }
  static Kernel epanechnikov() { return {KernelKind::epanechnikov}; }

  static Kernel from_name(std::string_view name) {
    if (name == "gaussian") return gaussian();
    if (name == "epanechnikov") return epanechnikov();
    throw DomainError("unknown kernel '" + std::string(name) + "'");
  }

  std::string_view name() const {
    return kind == KernelKind::gaussian ? "gaussian" : "epanechnikov";
  }

  /// Half-width of the support in bandwidth units. The gaussian is cut at 8
  /// (discarded mass below 1.3e-15).
  double effective_radius() const { return kind == KernelKind::gaussian ? 8.0 : 1.0; }

  double operator()(double u) const {
    const double au = std::abs(u);
    if (au > effective_radius()) return 0.0;
    if (kind == KernelKind::gaussian)
      return std::exp(-0.5 * u * u) * (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
    return 0.75 * (1.0 - u * u);
  }
};

class HtKde {
 public:
  HtKde(std::vector<double> points, std::vector<double> norm_weights, double bandwidth,
        Kernel kernel)
      : points_(std::move(points)),
        weights_(std::move(norm_weights)),
        h_(bandwidth),
        kernel_(kernel) {}

  const std::vector<double>& points() const noexcept { return points_; }
  const std::vector<double>& norm_weights() const noexcept { return weights_; }
  double bandwidth() const noexcept { return h_; }
  const Kernel& kernel() const noexcept { return kernel_; }

  /// f_hat(y) = sum_i w_i K_h(y - y_i), pruned to the kernel's support window.
  double operator()(double y) const {
    const double r = kernel_.effective_radius() * h_;
    auto it = std::lower_bound(points_.begin(), points_.end(), y - r);
    double acc = 0.0;
    const double inv_h = 1.0 / h_;
    for (; it != points_.end() && *it <= y + r; ++it) {
      const auto i = static_cast<std::size_t>(it - points_.begin());
      acc += weights_[i] * kernel_((y - *it) * inv_h);
    }
    return acc * inv_h;
  }

  /// Evaluates at many locations. Ascending inputs (grid nodes) use a sliding
  /// window; anything else falls back to per-point search.
  std::vector<double> evaluate(std::span<const double> ys) const {
    std::vector<double> out(ys.size());
    if (!std::is_sorted(ys.begin(), ys.end())) {
      for (std::size_t k = 0; k < ys.size(); ++k) out[k] = (*this)(ys[k]);
      return out;
    }
    const double r = kernel_.effective_radius() * h_;
    const double inv_h = 1.0 / h_;
    std::size_t lo = 0;
    for (std::size_t k = 0; k < ys.size(); ++k) {
      const double y = ys[k];
      while (lo < points_.size() && points_[lo] < y - r) ++lo;
      double acc = 0.0;
      for (std::size_t i = lo; i < points_.size() && points_[i] <= y + r; ++i)
        acc += weights_[i] * kernel_((y - points_[i]) * inv_h);
      out[k] = acc * inv_h;
    }
    return out;
  }

  /// [min - R h, max + R h]; with `clip_at_zero` the lower end is raised to
  /// zero for families supported on (0, inf).
  std::pair<double, double> support_interval(bool clip_at_zero = false) const {
    const double r = kernel_.effective_radius() * h_;
    double a = points_.front() - r;
    const double b = points_.back() + r;
    if (clip_at_zero) a = std::max(a, 0.0);
    return {a, b};
  }

 private:
  std::vector<double> points_;
  std::vector<double> weights_;
  double h_;
  Kernel kernel_;
};

/// Kish effective sample size (sum w)^2 / sum w^2.
inline double kish_neff(std::span<const double> w) {
  if (w.empty()) throw DomainError("kish_neff: empty weight vector");
  double s = 0.0, s2 = 0.0;
  for (double v : w) {
    if (!(v > 0.0)) throw DomainError("kish_neff: weights must be positive");
    s += v;
    s2 += v * v;
  }
  return s * s / s2;
}

namespace detail {

/// Weighted quantile with Hazen plotting positions (cumw - w/2) / W and
/// linear interpolation; equal weights reproduce the type-5 sample quantile.
inline double weighted_quantile(std::span<const double> y, std::span<const double> w,
                                double p) {
  std::vector<std::size_t> idx(y.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return y[a] < y[b]; });
  double total = 0.0;
  for (double v : w) total += v;
  std::vector<double> pos(y.size());
  double cum = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const double wk = w[idx[k]];
    pos[k] = (cum + 0.5 * wk) / total;
    cum += wk;
  }
  if (p <= pos.front()) return y[idx.front()];
  if (p >= pos.back()) return y[idx.back()];
  const auto k = static_cast<std::size_t>(
      std::upper_bound(pos.begin(), pos.end(), p) - pos.begin());
  const double t = (p - pos[k - 1]) / (pos[k] - pos[k - 1]);
  return y[idx[k - 1]] + t * (y[idx[k]] - y[idx[k - 1]]);
}

/// Weighted standard deviation with reliability-weight correction
/// sum w (y - m)^2 / (W - sum w^2 / W); equal weights give the n - 1 form.
inline double weighted_sd(std::span<const double> y, std::span<const double> w) {
  double W = 0.0, W2 = 0.0, m = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    W += w[i];
    W2 += w[i] * w[i];
    m += w[i] * y[i];
  }
  m /= W;
  double ss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) ss += w[i] * (y[i] - m) * (y[i] - m);
  const double denom = W - W2 / W;
  return denom > 0.0 ? std::sqrt(ss / denom) : 0.0;
}

}  // namespace detail

/// Silverman's rule with Kish's effective size in place of n:
/// h = 0.9 min(s, IQR / 1.349) m^(-1/5).
inline double bandwidth_default(std::span<const double> y, std::span<const double> w) {
  if (y.size() != w.size()) throw ShapeError("bandwidth_default: length mismatch");
  if (y.size() < 2) throw DegenerateSampleError("bandwidth_default: need two observations");
  const double s = detail::weighted_sd(y, w);
  if (!(s > 0.0)) throw DegenerateSampleError("bandwidth_default: zero weighted spread");
  const double iqr =
      detail::weighted_quantile(y, w, 0.75) - detail::weighted_quantile(y, w, 0.25);
  const double spread = iqr > 0.0 ? std::min(s, iqr / 1.349) : s;
  return 0.9 * spread * std::pow(kish_neff(w), -0.2);
}

inline double bandwidth_default(const SurveySample& s) {
  return bandwidth_default(s.y, s.weight);
}

inline HtKde fit_kde(std::span<const double> y, std::span<const double> w, Kernel kernel,
                     std::optional<double> h = std::nullopt) {
  if (y.empty()) throw DomainError("fit_kde: empty sample");
  if (y.size() != w.size()) throw ShapeError("fit_kde: length mismatch");
  double total = 0.0;
  for (double v : w) {
    if (!(v > 0.0)) throw DomainError("fit_kde: weights must be positive");
    total += v;
  }
  const double bw = h ? *h : bandwidth_default(y, w);
  if (!(bw > 0.0) || !std::isfinite(bw)) throw DomainError("fit_kde: bandwidth must be positive");
  std::vector<std::size_t> idx(y.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return y[a] < y[b]; });
  std::vector<double> pts(y.size()), nw(y.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    pts[k] = y[idx[k]];
    nw[k] = w[idx[k]] / total;
  }
  return HtKde(std::move(pts), std::move(nw), bw, kernel);
}

inline HtKde fit_kde(const SurveySample& s, Kernel kernel = Kernel::gaussian(),
                     std::optional<double> h = std::nullopt) {
  return fit_kde(s.y, s.weight, kernel, h);
}

/// Quadrature of |f_hat - g| over `grid`.
template <class G>
double l1_distance(const HtKde& kde, G&& reference, const QuadGrid& grid) {
  const auto fk = kde.evaluate(grid.nodes);
  std::vector<double> v(grid.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::abs(fk[i] - reference(grid.nodes[i]));
  return integrate(v, grid).kronrod;
}

}  // namespace mhde
