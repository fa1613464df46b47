#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mhde/errors.hpp"

namespace mhde {

enum class DesignKind { poisson_pps, srs_wr, srs_wor, unknown };

inline std::string_view to_string(DesignKind k) {
  switch (k) {
    case DesignKind::poisson_pps: return "poisson_pps";
    case DesignKind::srs_wr: return "srs_wr";
    case DesignKind::srs_wor: return "srs_wor";
    case DesignKind::unknown: break;
  }
  return "unknown";
}

inline DesignKind design_kind_from_string(std::string_view s) {
  if (s == "poisson_pps") return DesignKind::poisson_pps;
  if (s == "srs_wr") return DesignKind::srs_wr;
  if (s == "srs_wor") return DesignKind::srs_wor;
  throw DomainError("unknown design kind '" + std::string(s) + "'");
}

/// What the sample knows about the design that produced it.
struct DesignMeta {
  DesignKind kind = DesignKind::unknown;
  std::size_t population_size = 0;
  double alpha = 0.0;
  std::optional<double> n_eff;
  std::optional<double> n_v_eff;
};

/// Observed responses with their survey weights. `weight` is the weight used
/// by every estimator (omega_i = zeta_i / pi_i); `base_weight` keeps the
/// weight before calibration or truncation.
struct SurveySample {
  std::vector<double> y;
  std::vector<double> weight;
  std::vector<double> base_weight;
  std::optional<std::vector<double>> pi;
  std::vector<int> cluster;  // empty when not available
  std::vector<double> x;     // calibration auxiliary, empty when not available
  std::optional<DesignMeta> meta;
  std::size_t truncated = 0;

  std::size_t size() const noexcept { return y.size(); }
  bool empty() const noexcept { return y.empty(); }

  static SurveySample from_weights(std::vector<double> y,
                                   std::vector<double> w) {
    SurveySample s;
    s.y = std::move(y);
    s.weight = std::move(w);
    s.base_weight = s.weight;
    s.validate();
    return s;
  }

  static SurveySample from_pi(std::vector<double> y, std::vector<double> pi) {
    SurveySample s;
    s.y = std::move(y);
    s.weight.resize(pi.size());
    for (std::size_t i = 0; i < pi.size(); ++i) s.weight[i] = 1.0 / pi[i];
    s.base_weight = s.weight;
    s.pi = std::move(pi);
    s.validate();
    return s;
  }

  static SurveySample equal_weights(std::vector<double> y) {
    std::vector<double> w(y.size(), 1.0);
    return from_weights(std::move(y), std::move(w));
  }

  void validate() const {
    if (weight.size() != y.size())
      throw ShapeError("sample: weight count does not match response count");
    if (pi && pi->size() != y.size())
      throw ShapeError("sample: pi count does not match response count");
    if (!cluster.empty() && cluster.size() != y.size())
      throw ShapeError("sample: cluster count does not match response count");
    if (!x.empty() && x.size() != y.size())
      throw ShapeError("sample: x count does not match response count");
    for (double w : weight)
      if (!(w > 0.0) || !std::isfinite(w))
        throw DomainError("sample: weights must be positive and finite");
    if (pi)
      for (double p : *pi)
        if (!(p > 0.0 && p <= 1.0))
          throw DomainError("sample: inclusion probabilities must lie in (0, 1]");
    for (double v : y)
      if (!std::isfinite(v)) throw DomainError("sample: non-finite response");
  }

  double total_weight() const {
    double s = 0.0;
    for (double w : weight) s += w;
    return s;
  }

  double max_weight() const {
    return weight.empty() ? 0.0 : *std::max_element(weight.begin(), weight.end());
  }
};

}  // namespace mhde
