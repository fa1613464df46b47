#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

namespace mhde {

struct SimplexResult {
  Eigen::Vector2d x = Eigen::Vector2d::Zero();
  double fx = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

/// Nelder-Mead minimization in two dimensions with the standard coefficients
/// (reflection 1, expansion 2, contraction 1/2, shrink 1/2). Stops when both
/// the simplex diameter (max-norm distance to the best vertex) and the spread
/// of objective values are at most `tol`. Non-finite objective values are
/// treated as +inf.
template <class F>
SimplexResult nelder_mead(F&& f, const Eigen::Vector2d& x0, const Eigen::Vector2d& step,
                          double tol, int max_iter) {
  using V = Eigen::Vector2d;
  auto eval = [&](const V& x) {
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  std::array<V, 3> p = {x0, x0 + V(step[0], 0.0), x0 + V(0.0, step[1])};
  std::array<double, 3> fv = {eval(p[0]), eval(p[1]), eval(p[2])};
  std::array<int, 3> ord = {0, 1, 2};

  SimplexResult res;
  for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
    std::sort(ord.begin(), ord.end(), [&](int a, int b) { return fv[a] < fv[b]; });
    const int best = ord[0], mid = ord[1], worst = ord[2];

    double diam = 0.0;
    for (int i : {mid, worst}) diam = std::max(diam, (p[i] - p[best]).cwiseAbs().maxCoeff());
    const double spread = fv[worst] - fv[best];
    if (diam <= tol && spread <= tol) {
      res.converged = true;
      break;
    }

    const V centroid = 0.5 * (p[best] + p[mid]);
    const V xr = centroid + (centroid - p[worst]);
    const double fr = eval(xr);
    if (fr < fv[best]) {
      const V xe = centroid + 2.0 * (centroid - p[worst]);
      const double fe = eval(xe);
      if (fe < fr) {
        p[worst] = xe;
        fv[worst] = fe;
      } else {
        p[worst] = xr;
        fv[worst] = fr;
      }
      continue;
    }
    if (fr < fv[mid]) {
      p[worst] = xr;
      fv[worst] = fr;
      continue;
    }
    // Contraction: outside when the reflection improved on the worst vertex.
    const bool outside = fr < fv[worst];
    const V xc = outside ? V(centroid + 0.5 * (xr - centroid))
                         : V(centroid + 0.5 * (p[worst] - centroid));
    const double fc = eval(xc);
    if (fc < (outside ? fr : fv[worst])) {
      p[worst] = xc;
      fv[worst] = fc;
      continue;
    }
    for (int i : {mid, worst}) {
      p[i] = p[best] + 0.5 * (p[i] - p[best]);
      fv[i] = eval(p[i]);
    }
  }
  const int best = static_cast<int>(std::min_element(fv.begin(), fv.end()) - fv.begin());
  res.x = p[best];
  res.fx = fv[best];
  return res;
}

}  // namespace mhde
