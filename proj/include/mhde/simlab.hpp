#pragma once

// Monte-Carlo scenarios: populations, designs, contamination, calibration,
// MHDE and weighted-MLE fits, and aggregation into relative bias, relative
// RMSE and confidence-interval coverage.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mhde/designs.hpp"
#include "mhde/errors.hpp"
#include "mhde/estimator.hpp"
#include "mhde/families.hpp"
#include "mhde/inference.hpp"
#include "mhde/robustness.hpp"
#include "mhde/survey.hpp"

namespace mhde {

using json = nlohmann::ordered_json;

inline constexpr int kScenarioSchemaVersion = 1;

/// Population sizes used with `--full`: 10^6 to 10^8 in half decades.
inline std::vector<std::size_t> full_n_grid() {
  return {1000000, 3162278, 10000000, 31622777, 100000000};
}

inline std::string_view to_string(PlugIn p) {
  switch (p) {
    case PlugIn::kde: return "kde";
    case PlugIn::model: return "model";
    case PlugIn::smoothed: return "smoothed";
  }
  return "?";
}

inline PlugIn plug_in_from_string(std::string_view s) {
  if (s == "kde") return PlugIn::kde;
  if (s == "model") return PlugIn::model;
  if (s == "smoothed") return PlugIn::smoothed;
  throw DomainError("unknown plug-in '" + std::string(s) + "'");
}

inline std::string_view to_string(InitKind k) {
  switch (k) {
    case InitKind::moments: return "moments";
    case InitKind::weighted_mle: return "weighted_mle";
    case InitKind::explicit_theta: return "explicit";
  }
  return "?";
}

struct ScenarioConfig {
  std::string name = "scenario";
  FamilySpec family = FamilySpec::gamma();
  std::array<double, 2> theta0{2.0, 35000.0};
  std::vector<std::size_t> n_grid{100000, 1000000};
  DesignSpec design;  // population_size is filled per grid point
  std::optional<ContaminationSpec> contamination;
  std::optional<double> contamination_quantile;  // z given as F^{-1}(p)
  bool calibration = false;
  std::vector<Estimator> estimators{Estimator::mhde, Estimator::mle};
  int replications = 200;
  std::uint64_t base_seed = 1;
  bool ci = true;
  double ci_level = 0.95;
  PlugIn plug_in = PlugIn::kde;
  MhdeOptions mhde;
  bool keep_replicates = false;

  ParamVector theta() const { return ParamVector(family, theta0[0], theta0[1]); }

  void validate() const {
    theta();
    if (replications < 2) throw SchemaError("replications", "must be at least 2");
    if (n_grid.empty()) throw SchemaError("population.N_grid", "must not be empty");
    if (!std::is_sorted(n_grid.begin(), n_grid.end()) ||
        std::adjacent_find(n_grid.begin(), n_grid.end()) != n_grid.end())
      throw SchemaError("population.N_grid", "must be strictly ascending");
    for (auto N : n_grid) {
      DesignSpec d = design;
      d.population_size = N;
      try {
        d.validate();
      } catch (const DomainError& e) {
        throw SchemaError("design", e.what());
      }
    }
    if (estimators.empty()) throw SchemaError("estimators", "must name at least one estimator");
    if (!(ci_level > 0.0 && ci_level < 1.0)) throw SchemaError("ci.level", "must lie in (0, 1)");
    if (contamination) {
      try {
        contamination->validate();
      } catch (const DomainError& e) {
        throw SchemaError("contamination", e.what());
      }
    }
  }
};

namespace detail {

/// Strict object reader: every key must be consumed, unknown keys are
/// reported with their full path.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw SchemaError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const json& at(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw SchemaError(where(key), "missing key");
    return j_.at(key);
  }

  std::string where(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    return convert<T>(j_.at(key), where(key));
  }

  template <class T>
  static T convert(const json& v, const std::string& where) {
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw SchemaError(where, "expected a boolean");
      } else if constexpr (std::is_arithmetic_v<T>) {
        if (!v.is_number()) throw SchemaError(where, "expected a number");
        if constexpr (std::is_integral_v<T>) {
          const double d = v.get<double>();
          if (d != std::floor(d) || (std::is_unsigned_v<T> && d < 0))
            throw SchemaError(where, "expected a non-negative integer");
          return static_cast<T>(std::llround(d));
        }
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw SchemaError(where, "expected a string");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw SchemaError(where, e.what());
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.contains(k)) throw SchemaError(where(k), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
auto schema_guard(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const SchemaError&) {
    throw;
  } catch (const Error& e) {
    throw SchemaError(where, e.what());
  }
}

}  // namespace detail

/// Parses a scenario document. `full` replaces the population grid by
/// full_n_grid().
inline ScenarioConfig parse_scenario(const json& doc, bool full = false) {
  using detail::ObjectReader;
  using detail::schema_guard;
  ObjectReader root(doc, "");
  const int version = root.get<int>("schema_version", -1);
  if (version != kScenarioSchemaVersion)
    throw SchemaError("schema_version", "expected " + std::to_string(kScenarioSchemaVersion));

  ScenarioConfig cfg;
  cfg.name = root.get<std::string>("name", cfg.name);

  {
    ObjectReader m(root.at("model"), "model");
    const auto fam = m.get<std::string>("family", "gamma");
    cfg.family = schema_guard("model.family", [&] { return FamilySpec::from_name(fam); });
    const auto& th = m.at("theta");
    if (!th.is_array() || th.size() != 2) throw SchemaError("model.theta", "expected two numbers");
    for (int j = 0; j < 2; ++j) cfg.theta0[j] = ObjectReader::convert<double>(th[j], "model.theta");
    schema_guard("model.theta", [&] { return cfg.theta(); });
    m.finish();
  }

  if (root.has("population")) {
    ObjectReader p(root.at("population"), "population");
    if (p.has("N_grid")) {
      const auto& g = p.at("N_grid");
      if (!g.is_array()) throw SchemaError("population.N_grid", "expected an array");
      cfg.n_grid.clear();
      for (const auto& v : g)
        cfg.n_grid.push_back(ObjectReader::convert<std::size_t>(v, "population.N_grid"));
    } else {
      p.get<int>("N_grid", 0);
    }
    p.finish();
  } else {
    root.get<int>("population", 0);
  }
  if (full) cfg.n_grid = full_n_grid();

  {
    ObjectReader d(root.at("design"), "design");
    const auto kind = d.get<std::string>("kind", "srs_wor");
    cfg.design.kind = schema_guard("design.kind", [&] { return design_kind_from_string(kind); });
    if (cfg.design.kind == DesignKind::unknown)
      throw SchemaError("design.kind", "unknown design '" + kind + "'");
    cfg.design.alpha = d.get<double>("alpha", 1e-3);
    cfg.design.rho_yz = d.get<double>("rho", 0.0);
    if (d.has("weight_cap")) cfg.design.weight_truncation_cap = d.get<double>("weight_cap", 0.0);
    else d.get<double>("weight_cap", 0.0);
    d.finish();
  }

  if (root.has("contamination")) {
    ObjectReader c(root.at("contamination"), "contamination");
    ContaminationSpec cs;
    cs.epsilon = c.get<double>("epsilon", 0.0);
    cs.mechanism = schema_guard("contamination.mechanism", [&] {
      return mechanism_from_string(c.get<std::string>("mechanism", "point_normal"));
    });
    if (cs.mechanism == Mechanism::point_mass)
      throw SchemaError("contamination.mechanism", "point_mass is not a sampling mechanism");
    cs.leverage = schema_guard("contamination.leverage", [&] {
      return leverage_from_string(c.get<std::string>("leverage", "independent"));
    });
    cs.rule = schema_guard("contamination.leverage_rule", [&] {
      return leverage_rule_from_string(c.get<std::string>("leverage_rule", "printed"));
    });
    const bool has_z = c.has("z"), has_p = c.has("z_quantile");
    if (has_z == has_p)
      throw SchemaError("contamination", "give exactly one of 'z' and 'z_quantile'");
    if (has_z) {
      cs.z = c.get<double>("z", 0.0);
      c.get<double>("z_quantile", 0.0);
    } else {
      const double p = c.get<double>("z_quantile", 0.0);
      c.get<double>("z", 0.0);
      if (!(p > 0.0 && p < 1.0)) throw SchemaError("contamination.z_quantile", "must lie in (0, 1)");
      cfg.contamination_quantile = p;
      cs.z = quantile(cfg.family, cfg.theta(), p);
    }
    c.finish();
    cfg.contamination = cs;
  } else {
    root.get<int>("contamination", 0);
  }

  cfg.calibration = root.get<bool>("calibration", false);

  if (root.has("estimators")) {
    const auto& e = root.at("estimators");
    if (!e.is_array()) throw SchemaError("estimators", "expected an array");
    cfg.estimators.clear();
    for (const auto& v : e) {
      const auto s = ObjectReader::convert<std::string>(v, "estimators");
      if (s == "mhde") cfg.estimators.push_back(Estimator::mhde);
      else if (s == "mle") cfg.estimators.push_back(Estimator::mle);
      else throw SchemaError("estimators", "unknown estimator '" + s + "'");
    }
  } else {
    root.get<int>("estimators", 0);
  }

  cfg.replications = root.get<int>("replications", cfg.replications);
  cfg.base_seed = root.get<std::uint64_t>("base_seed", cfg.base_seed);

  if (root.has("ci")) {
    ObjectReader c(root.at("ci"), "ci");
    cfg.ci = c.get<bool>("enabled", true);
    cfg.ci_level = c.get<double>("level", 0.95);
    cfg.plug_in = schema_guard("ci.plug_in",
                               [&] { return plug_in_from_string(c.get<std::string>("plug_in", "kde")); });
    c.finish();
  } else {
    root.get<int>("ci", 0);
  }

  if (root.has("kde")) {
    ObjectReader k(root.at("kde"), "kde");
    cfg.mhde.kernel = schema_guard(
        "kde.kernel", [&] { return Kernel::from_name(k.get<std::string>("kernel", "gaussian")); });
    if (k.has("bandwidth")) {
      const auto& b = k.at("bandwidth");
      if (b.is_string()) {
        if (b.get<std::string>() != "auto")
          throw SchemaError("kde.bandwidth", "expected a positive number or \"auto\"");
      } else {
        const double h = ObjectReader::convert<double>(b, "kde.bandwidth");
        if (!(h > 0.0)) throw SchemaError("kde.bandwidth", "must be positive");
        cfg.mhde.bandwidth = h;
      }
    } else {
      k.get<int>("bandwidth", 0);
    }
    k.finish();
  } else {
    root.get<int>("kde", 0);
  }

  if (root.has("quad")) {
    ObjectReader q(root.at("quad"), "quad");
    cfg.mhde.grid_subdivisions = q.get<std::size_t>("subdivisions", cfg.mhde.grid_subdivisions);
    if (cfg.mhde.grid_subdivisions < 1) throw SchemaError("quad.subdivisions", "must be at least 1");
    cfg.mhde.support_padding = q.get<double>("support_padding", 0.0);
    if (!(cfg.mhde.support_padding >= 0.0))
      throw SchemaError("quad.support_padding", "must be non-negative");
    q.finish();
  } else {
    root.get<int>("quad", 0);
  }

  if (root.has("mhde")) {
    ObjectReader m(root.at("mhde"), "mhde");
    cfg.mhde.nm_tol = m.get<double>("nm_tol", cfg.mhde.nm_tol);
    cfg.mhde.nm_max_iter = m.get<int>("max_iter", cfg.mhde.nm_max_iter);
    cfg.mhde.restarts = m.get<int>("restarts", cfg.mhde.restarts);
    const auto init = m.get<std::string>("init", "moments");
    if (init == "moments") cfg.mhde.init = InitKind::moments;
    else if (init == "weighted_mle") cfg.mhde.init = InitKind::weighted_mle;
    else throw SchemaError("mhde.init", "expected \"moments\" or \"weighted_mle\"");
    if (!(cfg.mhde.nm_tol > 0.0)) throw SchemaError("mhde.nm_tol", "must be positive");
    if (cfg.mhde.nm_max_iter < 1) throw SchemaError("mhde.max_iter", "must be at least 1");
    if (cfg.mhde.restarts < 0) throw SchemaError("mhde.restarts", "must be non-negative");
    m.finish();
  } else {
    root.get<int>("mhde", 0);
  }

  if (root.has("output")) {
    ObjectReader o(root.at("output"), "output");
    cfg.keep_replicates = o.get<bool>("keep_replicates", false);
    o.finish();
  } else {
    root.get<int>("output", 0);
  }

  root.finish();
  cfg.validate();
  return cfg;
}

/// The resolved configuration, every default spelled out.
inline json to_json(const ScenarioConfig& cfg) {
  json j;
  j["schema_version"] = kScenarioSchemaVersion;
  j["name"] = cfg.name;
  j["model"] = {{"family", cfg.family.name()}, {"theta", {cfg.theta0[0], cfg.theta0[1]}}};
  j["population"] = {{"N_grid", cfg.n_grid}};
  json d = {{"kind", to_string(cfg.design.kind)},
            {"alpha", cfg.design.alpha},
            {"rho", cfg.design.rho_yz}};
  if (cfg.design.weight_truncation_cap) d["weight_cap"] = *cfg.design.weight_truncation_cap;
  j["design"] = d;
  if (cfg.contamination) {
    const auto& c = *cfg.contamination;
    json cj = {{"epsilon", c.epsilon},
               {"mechanism", to_string(c.mechanism)},
               {"leverage", to_string(c.leverage)},
               {"leverage_rule", to_string(c.rule)}};
    if (cfg.contamination_quantile) cj["z_quantile"] = *cfg.contamination_quantile;
    else cj["z"] = c.z;
    j["contamination"] = cj;
  }
  j["calibration"] = cfg.calibration;
  json est = json::array();
  for (auto e : cfg.estimators) est.push_back(to_string(e));
  j["estimators"] = est;
  j["replications"] = cfg.replications;
  j["base_seed"] = cfg.base_seed;
  j["ci"] = {{"enabled", cfg.ci}, {"level", cfg.ci_level}, {"plug_in", to_string(cfg.plug_in)}};
  json kde = {{"kernel", cfg.mhde.kernel.name()}};
  if (cfg.mhde.bandwidth) kde["bandwidth"] = *cfg.mhde.bandwidth;
  else kde["bandwidth"] = "auto";
  j["kde"] = kde;
  j["quad"] = {{"subdivisions", cfg.mhde.grid_subdivisions},
               {"support_padding", cfg.mhde.support_padding}};
  j["mhde"] = {{"nm_tol", cfg.mhde.nm_tol},
               {"max_iter", cfg.mhde.nm_max_iter},
               {"restarts", cfg.mhde.restarts},
               {"init", to_string(cfg.mhde.init)}};
  j["output"] = {{"keep_replicates", cfg.keep_replicates}};
  return j;
}

inline ScenarioConfig load_scenario(const std::string& path, bool full = false) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw SchemaError(path, e.what());
  }
  return parse_scenario(doc, full);
}

// ---------------------------------------------------------------------------
// Running.

struct ReplicateRecord {
  std::size_t N = 0;
  int replicate = 0;
  Estimator estimator = Estimator::mhde;
  bool ok = false;
  std::string error;
  std::array<double, 2> theta{};
  bool has_ci = false;
  std::array<double, 2> lower{};
  std::array<double, 2> upper{};
};

struct SimCell {
  std::size_t N = 0;
  std::size_t n = 0;  // target sample size round(alpha N)
  std::string design;
  std::string estimator;
  std::string parameter;
  double rel_bias = 0.0;
  double rel_rmse = 0.0;
  double coverage = std::numeric_limits<double>::quiet_NaN();
  double avg_rel_ci_width = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_ok = 0;
  std::size_t n_failed = 0;
  bool unreliable = false;
};

inline bool same_value(double a, double b) {
  return (std::isnan(a) && std::isnan(b)) || a == b;
}

inline bool operator==(const SimCell& a, const SimCell& b) {
  return a.N == b.N && a.n == b.n && a.design == b.design && a.estimator == b.estimator &&
         a.parameter == b.parameter && same_value(a.rel_bias, b.rel_bias) &&
         same_value(a.rel_rmse, b.rel_rmse) && same_value(a.coverage, b.coverage) &&
         same_value(a.avg_rel_ci_width, b.avg_rel_ci_width) && a.n_ok == b.n_ok &&
         a.n_failed == b.n_failed && a.unreliable == b.unreliable;
}

struct SimResult {
  std::string scenario;
  std::vector<SimCell> cells;
  std::vector<ReplicateRecord> replicates;  // filled when keep_replicates
};

/// Seed streams per (N, replicate, stage).
enum class Stage : std::uint64_t { population = 0, sample = 1, contamination = 2 };

inline Stream replicate_stream(std::uint64_t base_seed, std::size_t N, int r, Stage stage) {
  return Stream::derive(base_seed, {static_cast<std::uint64_t>(N), static_cast<std::uint64_t>(r),
                                    static_cast<std::uint64_t>(stage)});
}

/// One replicate at population size N: one record per estimator.
inline std::vector<ReplicateRecord> run_replicate(const ScenarioConfig& cfg, std::size_t N, int r) {
  const auto spec = cfg.family;
  const auto theta0 = cfg.theta();
  std::vector<ReplicateRecord> out;
  for (auto e : cfg.estimators) out.push_back({N, r, e, false, {}, {}, false, {}, {}});

  std::optional<SurveySample> sample;
  try {
    auto pop_rng = replicate_stream(cfg.base_seed, N, r, Stage::population);
    const double rho = cfg.design.kind == DesignKind::poisson_pps ? cfg.design.rho_yz : 0.0;
    const auto pop = simulate_population(spec, theta0, N, rho, pop_rng, cfg.calibration);
    DesignSpec d = cfg.design;
    d.population_size = N;
    auto s_rng = replicate_stream(cfg.base_seed, N, r, Stage::sample);
    SurveySample s = draw_sample(pop, d, s_rng);
    if (cfg.contamination && cfg.contamination->epsilon > 0.0) {
      auto c_rng = replicate_stream(cfg.base_seed, N, r, Stage::contamination);
      s = contaminate(s, *cfg.contamination, spec, theta0, c_rng);
    }
    if (cfg.calibration) s = calibrate(s, cluster_totals(pop));
    sample = std::move(s);
  } catch (const Error& err) {
    for (auto& rec : out) rec.error = err.what();
    return out;
  }

  for (auto& rec : out) {
    try {
      if (rec.estimator == Estimator::mhde) {
        const auto f = fit(*sample, spec, cfg.mhde);
        rec.theta = f.theta_hat.values();
        if (cfg.ci) {
          const auto ci = confint(f.theta_hat, sandwich(f, *sample, spec, cfg.plug_in), cfg.ci_level);
          rec.lower = ci.lower;
          rec.upper = ci.upper;
          rec.has_ci = true;
        }
      } else {
        const auto m = weighted_mle(spec, *sample);
        rec.theta = m.values();
        if (cfg.ci) {
          const auto [n_v_eff, fpc] = design_scaling(*sample);
          const auto ci = wald_interval(m, mle_covariance(spec, m, n_v_eff, fpc), cfg.ci_level);
          rec.lower = ci.lower;
          rec.upper = ci.upper;
          rec.has_ci = true;
        }
      }
      rec.ok = true;
    } catch (const Error& err) {
      rec.ok = false;
      rec.has_ci = false;
      rec.error = err.what();
    }
  }
  return out;
}

/// Default worker count: MHDE_THREADS if set, else the hardware concurrency.
inline unsigned default_threads() {
  if (const char* env = std::getenv("MHDE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Aggregates replicate records (any order) into cells, in the order
/// N ascending, then estimator as configured, then parameter.
inline std::vector<SimCell> aggregate(const ScenarioConfig& cfg,
                                      std::vector<ReplicateRecord> records) {
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.N, a.replicate) < std::tie(b.N, b.replicate);
  });
  const auto theta0 = cfg.theta0;
  const auto names = cfg.family.param_names();
  std::vector<SimCell> cells;
  for (auto N : cfg.n_grid) {
    DesignSpec d = cfg.design;
    d.population_size = N;
    for (auto e : cfg.estimators) {
      for (int j = 0; j < 2; ++j) {
        SimCell c;
        c.N = N;
        c.n = d.n();
        c.design = std::string(to_string(cfg.design.kind));
        c.estimator = std::string(to_string(e));
        c.parameter = std::string(names[j]);
        double sum = 0.0, sum2 = 0.0, width = 0.0;
        std::size_t with_ci = 0, covered = 0;
        for (const auto& rec : records) {
          if (rec.N != N || rec.estimator != e) continue;
          if (!rec.ok) {
            ++c.n_failed;
            continue;
          }
          ++c.n_ok;
          const double err = (rec.theta[j] - theta0[j]) / theta0[j];
          sum += err;
          sum2 += err * err;
          if (rec.has_ci) {
            ++with_ci;
            covered += rec.lower[j] <= theta0[j] && theta0[j] <= rec.upper[j];
            width += (rec.upper[j] - rec.lower[j]) / std::abs(rec.theta[j]);
          }
        }
        if (c.n_ok > 0) {
          c.rel_bias = sum / static_cast<double>(c.n_ok);
          c.rel_rmse = std::sqrt(sum2 / static_cast<double>(c.n_ok));
        } else {
          c.rel_bias = c.rel_rmse = std::numeric_limits<double>::quiet_NaN();
        }
        if (with_ci > 0) {
          c.coverage = static_cast<double>(covered) / static_cast<double>(with_ci);
          c.avg_rel_ci_width = width / static_cast<double>(with_ci);
        }
        const std::size_t total = c.n_ok + c.n_failed;
        c.unreliable = total == 0 || 10 * c.n_failed > total;
        cells.push_back(c);
      }
    }
  }
  return cells;
}

/// Runs every (N, replicate) task on `threads` workers. Records are stored by
/// task index, so the result does not depend on scheduling.
inline SimResult run_scenario(const ScenarioConfig& cfg, unsigned threads = 0) {
  cfg.validate();
  if (threads == 0) threads = default_threads();
  const std::size_t R = static_cast<std::size_t>(cfg.replications);
  const std::size_t tasks = cfg.n_grid.size() * R;
  std::vector<std::vector<ReplicateRecord>> slots(tasks);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t; (t = next.fetch_add(1)) < tasks;)
      slots[t] = run_replicate(cfg, cfg.n_grid[t / R], static_cast<int>(t % R));
  };
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, tasks));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  std::vector<ReplicateRecord> records;
  records.reserve(tasks * cfg.estimators.size());
  for (auto& s : slots)
    for (auto& rec : s) records.push_back(std::move(rec));
  SimResult res;
  res.scenario = cfg.name;
  res.cells = aggregate(cfg, records);
  if (cfg.keep_replicates) res.replicates = std::move(records);
  return res;
}

/// run_scenario for coverage tables: CIs must be on and R large enough for
/// coverage to be meaningful.
inline SimResult coverage_study(const ScenarioConfig& cfg, unsigned threads = 0,
                                int min_replications = 1000) {
  if (!cfg.ci) throw SchemaError("ci.enabled", "coverage needs confidence intervals");
  if (cfg.replications < min_replications)
    throw SchemaError("replications",
                      "coverage needs at least " + std::to_string(min_replications));
  return run_scenario(cfg, threads);
}

// ---------------------------------------------------------------------------
// Output.

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline const char* kResultColumns =
    "scenario,N,n,design,estimator,parameter,rel_bias,rel_rmse,coverage,avg_rel_ci_width,"
    "n_ok,n_failed,unreliable";

/// Long-format CSV. Lines starting with '#' carry the resolved config and
/// seed; they precede the header.
inline std::string result_csv(const SimResult& res, const json& resolved_config) {
  std::ostringstream out;
  out << "# mhde simulation result\n";
  out << "# config: " << resolved_config.dump() << "\n";
  if (resolved_config.contains("base_seed"))
    out << "# seed: " << resolved_config["base_seed"].dump() << "\n";
  out << kResultColumns << "\n";
  for (const auto& c : res.cells) {
    out << res.scenario << ',' << c.N << ',' << c.n << ',' << c.design << ',' << c.estimator << ','
        << c.parameter << ',' << format_double(c.rel_bias) << ',' << format_double(c.rel_rmse)
        << ',' << format_double(c.coverage) << ',' << format_double(c.avg_rel_ci_width) << ','
        << c.n_ok << ',' << c.n_failed << ',' << (c.unreliable ? 1 : 0) << "\n";
  }
  return out.str();
}

inline std::string replicates_csv(const SimResult& res, const FamilySpec& family,
                                  const json& resolved_config) {
  const auto names = family.param_names();
  std::ostringstream out;
  out << "# mhde simulation replicates\n";
  out << "# config: " << resolved_config.dump() << "\n";
  out << "N,replicate,estimator,ok";
  for (int j = 0; j < 2; ++j)
    out << ',' << names[j] << ',' << names[j] << "_lower," << names[j] << "_upper";
  out << "\n";
  for (const auto& r : res.replicates) {
    out << r.N << ',' << r.replicate << ',' << to_string(r.estimator) << ',' << (r.ok ? 1 : 0);
    for (int j = 0; j < 2; ++j) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      out << ',' << format_double(r.ok ? r.theta[j] : nan) << ','
          << format_double(r.has_ci ? r.lower[j] : nan) << ','
          << format_double(r.has_ci ? r.upper[j] : nan);
    }
    out << "\n";
  }
  return out.str();
}

inline json result_json(const SimResult& res, const json& resolved_config) {
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  json cells = json::array();
  for (const auto& c : res.cells)
    cells.push_back({{"N", c.N},
                     {"n", c.n},
                     {"design", c.design},
                     {"estimator", c.estimator},
                     {"parameter", c.parameter},
                     {"rel_bias", num(c.rel_bias)},
                     {"rel_rmse", num(c.rel_rmse)},
                     {"coverage", num(c.coverage)},
                     {"avg_rel_ci_width", num(c.avg_rel_ci_width)},
                     {"n_ok", c.n_ok},
                     {"n_failed", c.n_failed},
                     {"unreliable", c.unreliable}});
  return {{"scenario", res.scenario}, {"config", resolved_config}, {"cells", cells}};
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw SchemaError(where, "not a number: '" + s + "'");
  return v;
}

inline std::size_t parse_count(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size() || s[0] == '-')
    throw SchemaError(where, "not a count: '" + s + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

/// Reads the cells back from result_csv output.
inline SimResult read_result_csv(std::istream& in) {
  SimResult res;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::string where = "line " + std::to_string(lineno);
    if (!header) {
      if (line != kResultColumns) throw SchemaError(where, "unexpected header");
      header = true;
      continue;
    }
    const auto f = detail::split_csv_line(line);
    if (f.size() != 13) throw SchemaError(where, "expected 13 fields");
    SimCell c;
    res.scenario = f[0];
    c.N = detail::parse_count(f[1], where);
    c.n = detail::parse_count(f[2], where);
    c.design = f[3];
    c.estimator = f[4];
    c.parameter = f[5];
    c.rel_bias = detail::parse_double(f[6], where);
    c.rel_rmse = detail::parse_double(f[7], where);
    c.coverage = detail::parse_double(f[8], where);
    c.avg_rel_ci_width = detail::parse_double(f[9], where);
    c.n_ok = detail::parse_count(f[10], where);
    c.n_failed = detail::parse_count(f[11], where);
    c.unreliable = detail::parse_count(f[12], where) != 0;
    res.cells.push_back(c);
  }
  if (!header) throw SchemaError("<input>", "missing header");
  return res;
}

inline SimResult read_result_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open result file '" + path + "'");
  return read_result_csv(in);
}

/// Aligned text table: one row per (N, estimator, parameter).
inline std::string format_table(const SimResult& res) {
  const std::vector<std::string> head = {"N",         "n",        "Scheme",      "Estimator",
                                         "Parameter", "RelBias",  "RelRMSE",     "CI coverage",
                                         "CI avg. width", "ok",  "failed"};
  std::vector<std::vector<std::string>> rows;
  auto pct = [](double v) {
    if (std::isnan(v)) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * v);
    return std::string(buf);
  };
  auto sig = [](double v) {
    if (std::isnan(v)) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.4f", v);
    return std::string(buf);
  };
  for (const auto& c : res.cells)
    rows.push_back({std::to_string(c.N), std::to_string(c.n), c.design, c.estimator, c.parameter,
                    sig(c.rel_bias), sig(c.rel_rmse).substr(1), pct(c.coverage),
                    pct(c.avg_rel_ci_width), std::to_string(c.n_ok),
                    std::to_string(c.n_failed) + (c.unreliable ? " (unreliable)" : "")});
  std::vector<std::size_t> width(head.size());
  for (std::size_t k = 0; k < head.size(); ++k) width[k] = head[k].size();
  for (const auto& r : rows)
    for (std::size_t k = 0; k < r.size(); ++k) width[k] = std::max(width[k], r[k].size());
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& r) {
    for (std::size_t k = 0; k < r.size(); ++k) {
      // Text columns left-aligned, numbers right-aligned.
      const bool left = k >= 2 && k <= 4;
      out << (k ? "  " : "") << (left ? std::left : std::right)
          << std::setw(static_cast<int>(width[k])) << r[k];
    }
    out << "\n";
  };
  emit(head);
  std::size_t total = 0;
  for (auto w : width) total += w + 2;
  out << std::string(total - 2, '-') << "\n";
  for (const auto& r : rows) emit(r);
  return out.str();
}

}  // namespace mhde
