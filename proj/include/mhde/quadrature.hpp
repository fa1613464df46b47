#pragma once

// Composite Gauss-Kronrod (G7-K15) quadrature on a fixed grid. The grid is
// built once; integrands are supplied as values at the grid nodes, so an
// expensive function (e.g. a kernel density estimate) is evaluated exactly
// once per node no matter how many integrals reuse it.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mhde/errors.hpp"

namespace mhde {

namespace gk15 {

// Abscissae on [-1, 1], non-negative half; odd indices are the G7 nodes.
inline constexpr std::array<double, 8> xgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};

inline constexpr std::array<double, 8> wgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};

// G7 weights for xgk[1], xgk[3], xgk[5], xgk[7].
inline constexpr std::array<double, 4> wg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

inline constexpr int nodes_per_panel = 15;

}  // namespace gk15

struct QuadGrid {
  double a = 0.0;
  double b = 0.0;
  std::size_t subdivisions = 0;
  std::vector<double> nodes;
  std::vector<double> kronrod_weights;
  std::vector<double> gauss_weights;  // zero at Kronrod-only nodes

  std::size_t size() const noexcept { return nodes.size(); }
};

namespace detail {

inline void append_panel(QuadGrid& g, double lo, double hi) {
  const double c = 0.5 * (lo + hi);
  const double r = 0.5 * (hi - lo);
  // Ascending order: negative side, centre, positive side.
  for (int i = 0; i < 7; ++i) {
    g.nodes.push_back(c - r * gk15::xgk[i]);
    g.kronrod_weights.push_back(r * gk15::wgk[i]);
    g.gauss_weights.push_back(i % 2 == 1 ? r * gk15::wg[i / 2] : 0.0);
  }
  g.nodes.push_back(c);
  g.kronrod_weights.push_back(r * gk15::wgk[7]);
  g.gauss_weights.push_back(r * gk15::wg[3]);
  for (int i = 6; i >= 0; --i) {
    g.nodes.push_back(c + r * gk15::xgk[i]);
    g.kronrod_weights.push_back(r * gk15::wgk[i]);
    g.gauss_weights.push_back(i % 2 == 1 ? r * gk15::wg[i / 2] : 0.0);
  }
}

}  // namespace detail

/// Equal-width panels over [a, b], each carrying the 15-point Kronrod rule.
inline QuadGrid build_grid(double a, double b, std::size_t subdivisions) {
  if (!(a < b) || !std::isfinite(a) || !std::isfinite(b))
    throw DomainError("build_grid: need finite a < b");
  if (subdivisions < 1) throw DomainError("build_grid: need at least one subdivision");
  QuadGrid g;
  g.a = a;
  g.b = b;
  g.subdivisions = subdivisions;
  const std::size_t m = subdivisions * gk15::nodes_per_panel;
  g.nodes.reserve(m);
  g.kronrod_weights.reserve(m);
  g.gauss_weights.reserve(m);
  const double width = (b - a) / static_cast<double>(subdivisions);
  for (std::size_t s = 0; s < subdivisions; ++s) {
    const double lo = a + width * static_cast<double>(s);
    const double hi = s + 1 == subdivisions ? b : lo + width;
    detail::append_panel(g, lo, hi);
  }
  return g;
}

/// Panels between consecutive, strictly increasing breakpoints.
inline QuadGrid build_grid(std::span<const double> breakpoints) {
  if (breakpoints.size() < 2) throw DomainError("build_grid: need two breakpoints");
  QuadGrid g;
  g.a = breakpoints.front();
  g.b = breakpoints.back();
  g.subdivisions = breakpoints.size() - 1;
  for (std::size_t s = 0; s + 1 < breakpoints.size(); ++s) {
    if (!(breakpoints[s] < breakpoints[s + 1]))
      throw DomainError("build_grid: breakpoints must increase strictly");
    detail::append_panel(g, breakpoints[s], breakpoints[s + 1]);
  }
  return g;
}

struct QuadResult {
  double kronrod = 0.0;
  double gauss = 0.0;
  double err_est = 0.0;
};

inline QuadResult integrate(std::span<const double> values, const QuadGrid& grid) {
  if (values.size() != grid.size())
    throw ShapeError("integrate: values do not match the grid node count");
  QuadResult r;
  for (std::size_t i = 0; i < values.size(); ++i) {
    r.kronrod += grid.kronrod_weights[i] * values[i];
    r.gauss += grid.gauss_weights[i] * values[i];
  }
  r.err_est = std::abs(r.kronrod - r.gauss);
  return r;
}

/// Evaluates `f` at every node and integrates.
template <class F>
QuadResult integrate_fn(F&& f, const QuadGrid& grid) {
  std::vector<double> v(grid.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(grid.nodes[i]);
  return integrate(v, grid);
}

}  // namespace mhde
