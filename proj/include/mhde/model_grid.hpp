#pragma once

// Quadrature grids for population-level integrals against a known model
// density. Panels are spaced evenly in normal-score space (p = Phi(t)), so
// both the body and the far tails of f_theta get resolved regardless of
// skewness; optional windows add fine panels around contamination sites.

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "mhde/families.hpp"
#include "mhde/quadrature.hpp"
#include "mhde/special.hpp"

namespace mhde {

struct GridWindow {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t panels = 48;
};

inline std::vector<double> model_breakpoints(const FamilySpec& spec, const ParamVector& t,
                                             std::size_t panels = 240,
                                             double tail_score = 7.4) {
  std::vector<double> bp;
  bp.reserve(panels + 2);
  bp.push_back(0.0);
  for (std::size_t k = 0; k <= panels; ++k) {
    const double s = -tail_score + 2.0 * tail_score * static_cast<double>(k) /
                                       static_cast<double>(panels);
    const double p = special::normal_cdf(s);
    bp.push_back(quantile(spec, t, p));
  }
  return bp;
}

/// Sorted union of breakpoints; a point closer than `rel_gap` (relative to its
/// own magnitude) to its predecessor is dropped. The relative test keeps the
/// tiny lower-tail breakpoints of densities with a singularity at zero.
inline std::vector<double> merge_breakpoints(std::vector<double> bp, double rel_gap = 1e-12) {
  std::sort(bp.begin(), bp.end());
  std::vector<double> out;
  for (double v : bp)
    if (out.empty() || v - out.back() > rel_gap * std::abs(v)) out.push_back(v);
  return out;
}

inline QuadGrid model_grid(const FamilySpec& spec, const ParamVector& t,
                           std::span<const GridWindow> windows = {},
                           std::size_t panels = 240) {
  auto bp = model_breakpoints(spec, t, panels);
  for (const auto& w : windows) {
    const double lo = std::max(w.lo, 0.0);
    if (!(w.hi > lo)) continue;
    for (std::size_t k = 0; k <= w.panels; ++k)
      bp.push_back(lo + (w.hi - lo) * static_cast<double>(k) / static_cast<double>(w.panels));
  }
  const auto merged = merge_breakpoints(std::move(bp));
  return build_grid(merged);
}

}  // namespace mhde
