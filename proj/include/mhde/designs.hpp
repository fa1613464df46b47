#pragma once

// Finite populations, sampling designs and weight adjustments.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mhde/errors.hpp"
#include "mhde/families.hpp"
#include "mhde/rng.hpp"
#include "mhde/survey.hpp"

namespace mhde {

struct DesignSpec {
  DesignKind kind = DesignKind::srs_wor;
  std::size_t population_size = 0;
  double alpha = 0.001;
  double rho_yz = 0.0;
  std::optional<double> weight_truncation_cap;

  /// Target sample size round(alpha * N).
  std::size_t n() const {
    return static_cast<std::size_t>(std::llround(alpha * static_cast<double>(population_size)));
  }

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("design: alpha must lie in (0, 1)");
    if (n() < 2) throw DomainError("design: round(alpha * N) must be at least 2");
    if (kind == DesignKind::poisson_pps && !(rho_yz >= 0.0 && rho_yz < 1.0))
      throw DomainError("design: rho_yz must lie in [0, 1)");
    if (kind == DesignKind::unknown) throw DomainError("design: kind must be set");
    if (weight_truncation_cap && !(*weight_truncation_cap > 0.0))
      throw DomainError("design: truncation cap must be positive");
  }
};

struct Population {
  std::vector<double> y;
  std::vector<double> z;        // size variable, strictly positive
  std::vector<int> cluster;     // empty unless clusters were assigned
  std::size_t size() const noexcept { return y.size(); }
};

inline constexpr int kClusterCount = 5;

/// Y i.i.d. from f_theta; Z lognormal tied to Y through a Gaussian copula on
/// the ranks of Y. The latent correlation r = 2 sin(pi rho / 6) makes the
/// Spearman correlation of (Y, Z) equal to rho. With `clusters`, every unit
/// is assigned uniformly to one of five clusters.
inline Population simulate_population(const FamilySpec& spec, const ParamVector& theta,
                                      std::size_t N, double rho_yz, Stream& rng,
                                      bool clusters = false) {
  if (N < 10) throw DomainError("simulate_population: N must be at least 10");
  if (!(rho_yz >= 0.0 && rho_yz < 1.0))
    throw DomainError("simulate_population: rho_yz must lie in [0, 1)");
  Population pop;
  pop.y = sample(spec, theta, N, rng);

  const double r = 2.0 * std::sin(std::numbers::pi * rho_yz / 6.0);
  const double c = std::sqrt(1.0 - r * r);
  pop.z.resize(N);
  if (r > 0.0) {
    // Normal scores aligned with the ranks of Y: sorted normals assigned in
    // the order of Y.
    std::vector<double> scores(N);
    for (auto& s : scores) s = rng.normal();
    std::sort(scores.begin(), scores.end());
    std::vector<std::pair<double, std::uint32_t>> order(N);
    for (std::size_t i = 0; i < N; ++i) order[i] = {pop.y[i], static_cast<std::uint32_t>(i)};
    std::sort(order.begin(), order.end());
    for (std::size_t k = 0; k < N; ++k) pop.z[order[k].second] = r * scores[k];
  }
  for (auto& z : pop.z) z = std::exp(z + c * rng.normal());

  if (clusters) {
    pop.cluster.resize(N);
    for (auto& cl : pop.cluster) cl = static_cast<int>(rng.index(kClusterCount)) + 1;
  }
  return pop;
}

struct EffectiveSizes {
  double n_eff = 0.0;
  double n_v_eff = 0.0;
  bool census = false;
};

/// n_eff = N^2 / sum(1/pi) and n_V-eff = N^2 / sum((1 - pi)/pi). When `pi`
/// covers the whole population (size N) the sums are exact; otherwise `pi`
/// is taken as the sampled units' probabilities and both sums are HT
/// estimates sum_S h(pi)/pi. With-replacement SRS reports n_V-eff = n.
inline EffectiveSizes effective_sizes(std::span<const double> pi, std::size_t N,
                                      DesignKind kind) {
  if (pi.empty()) throw DomainError("effective_sizes: empty probability vector");
  const bool population = pi.size() == N;
  double inv = 0.0, comp = 0.0, n = 0.0;
  for (double p : pi) {
    if (!(p > 0.0 && p <= 1.0))
      throw DomainError("effective_sizes: inclusion probabilities must lie in (0, 1]");
    const double e = population ? 1.0 : 1.0 / p;
    inv += e / p;
    comp += e * (1.0 - p) / p;
    n += population ? p : 1.0;
  }
  const double N2 = static_cast<double>(N) * static_cast<double>(N);
  EffectiveSizes out;
  out.n_eff = N2 / inv;
  if (kind == DesignKind::srs_wr) {
    out.n_v_eff = n;
  } else if (comp <= 0.0) {
    out.census = true;
    out.n_v_eff = std::numeric_limits<double>::infinity();
  } else {
    out.n_v_eff = N2 / comp;
  }
  return out;
}

/// Draws a sample. Poisson-PPS uses pi_i = min(1, n z_i / sum z) without
/// redistributing capped mass and throws EmptySampleError if no unit is
/// selected; SRS designs carry weight N / n.
inline SurveySample draw_sample(const Population& pop, const DesignSpec& design, Stream& rng) {
  design.validate();
  const std::size_t N = pop.size();
  if (design.population_size != 0 && design.population_size != N)
    throw DesignError("draw_sample: design N does not match the population");
  DesignSpec d = design;
  d.population_size = N;
  const std::size_t n = d.n();
  const double Nd = static_cast<double>(N);

  SurveySample s;
  std::vector<std::size_t> units;
  std::vector<double> pi;
  DesignMeta meta{d.kind, N, d.alpha, std::nullopt, std::nullopt};

  switch (d.kind) {
    case DesignKind::poisson_pps: {
      if (pop.z.size() != N) throw DesignError("draw_sample: PPS needs the size variable z");
      const double zsum = std::accumulate(pop.z.begin(), pop.z.end(), 0.0);
      std::vector<double> pi_pop(N);
      for (std::size_t i = 0; i < N; ++i)
        pi_pop[i] = std::min(1.0, static_cast<double>(n) * pop.z[i] / zsum);
      const auto es = effective_sizes(pi_pop, N, d.kind);
      meta.n_eff = es.n_eff;
      meta.n_v_eff = es.n_v_eff;
      for (std::size_t i = 0; i < N; ++i) {
        if (rng.bernoulli(pi_pop[i])) {
          units.push_back(i);
          pi.push_back(pi_pop[i]);
        }
      }
      if (units.empty()) throw EmptySampleError("draw_sample: empty Poisson sample");
      break;
    }
    case DesignKind::srs_wr: {
      units.resize(n);
      for (auto& u : units) u = rng.index(N);
      pi.assign(n, static_cast<double>(n) / Nd);
      meta.n_eff = static_cast<double>(n);
      meta.n_v_eff = static_cast<double>(n);
      break;
    }
    case DesignKind::srs_wor: {
      // Floyd's algorithm, then ascending unit order.
      std::unordered_set<std::size_t> chosen;
      chosen.reserve(2 * n);
      for (std::size_t j = N - n; j < N; ++j) {
        const std::size_t t = rng.index(j + 1);
        if (!chosen.insert(t).second) chosen.insert(j);
      }
      units.assign(chosen.begin(), chosen.end());
      std::sort(units.begin(), units.end());
      pi.assign(n, static_cast<double>(n) / Nd);
      meta.n_eff = static_cast<double>(n);
      meta.n_v_eff = static_cast<double>(n) / (1.0 - d.alpha);
      break;
    }
    case DesignKind::unknown: throw DesignError("draw_sample: unknown design");
  }

  s.y.reserve(units.size());
  for (auto u : units) s.y.push_back(pop.y[u]);
  if (d.kind == DesignKind::poisson_pps) {
    s.weight.resize(pi.size());
    for (std::size_t i = 0; i < pi.size(); ++i) s.weight[i] = 1.0 / pi[i];
  } else {
    s.weight.assign(units.size(), Nd / static_cast<double>(n));
  }
  s.base_weight = s.weight;
  s.pi = std::move(pi);
  if (!pop.cluster.empty()) {
    for (auto u : units) {
      s.cluster.push_back(pop.cluster[u]);
      s.x.push_back(pop.z[u]);
    }
  }
  s.meta = meta;
  if (d.weight_truncation_cap) {
    const double cap = *d.weight_truncation_cap;
    for (auto& w : s.weight) {
      if (w > cap) {
        w = cap;
        ++s.truncated;
      }
    }
  }
  return s;
}

/// Population totals of the calibration auxiliary (the size variable z) per
/// cluster.
inline std::map<int, double> cluster_totals(const Population& pop) {
  if (pop.cluster.size() != pop.size()) throw DesignError("cluster_totals: no clusters");
  std::map<int, double> tot;
  for (std::size_t i = 0; i < pop.size(); ++i) tot[pop.cluster[i]] += pop.z[i];
  return tot;
}

/// Ratio calibration: within each cluster c the weights are multiplied by
/// X_c / sum_{i in S, C(i) = c} w_i x_i, so calibrated weighted totals match
/// the known totals exactly. The incoming weights stay in `base_weight`.
inline SurveySample calibrate(const SurveySample& sample, const std::map<int, double>& totals,
                              std::span<const double> x, std::span<const int> cluster) {
  if (x.size() != sample.size() || cluster.size() != sample.size())
    throw ShapeError("calibrate: x and cluster must match the sample length");
  std::map<int, double> est;
  for (std::size_t i = 0; i < sample.size(); ++i) est[cluster[i]] += sample.weight[i] * x[i];

  std::vector<int> bad;
  for (const auto& [c, v] : est) {
    auto it = totals.find(c);
    if (it == totals.end() || !(it->second > 0.0) || !(v > 0.0)) bad.push_back(c);
  }
  for (const auto& [c, v] : totals)
    if (!est.contains(c)) bad.push_back(c);
  if (!bad.empty()) {
    std::sort(bad.begin(), bad.end());
    std::string msg = "calibrate: clusters without usable sample or total:";
    for (int c : bad) msg += " " + std::to_string(c);
    throw CalibrationError(msg, bad);
  }

  SurveySample out = sample;
  out.base_weight = sample.weight;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.weight[i] = sample.weight[i] * (totals.at(cluster[i]) / est.at(cluster[i]));
  out.x.assign(x.begin(), x.end());
  out.cluster.assign(cluster.begin(), cluster.end());
  return out;
}

inline SurveySample calibrate(const SurveySample& sample, const std::map<int, double>& totals) {
  if (sample.x.empty() || sample.cluster.empty())
    throw CalibrationError("calibrate: sample carries no x/cluster columns", {});
  return calibrate(sample, totals, sample.x, sample.cluster);
}

/// Caps every weight at `cap`; records how many were changed.
inline SurveySample truncate_weights(const SurveySample& sample, double cap) {
  if (!(cap > 0.0)) throw DomainError("truncate_weights: cap must be positive");
  SurveySample out = sample;
  out.truncated = 0;
  for (auto& w : out.weight) {
    if (w > cap) {
      w = cap;
      ++out.truncated;
    }
  }
  return out;
}

}  // namespace mhde
