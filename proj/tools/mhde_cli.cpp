// mhde: command-line front end.
//
//   mhde fit --data sample.csv --family gamma
//   mhde simulate --config configs/gamma_srswor.cfg --out results/gamma
//   mhde coverage --config configs/gamma_coverage.cfg --out results/cov
//   mhde influence --family gamma --theta 2,35000 --p 0.9999999 --eps 0,0.1,0.2,0.3
//   mhde report --input results/gamma.csv
//
// Exit codes: 0 success, 2 usage, 3 schema, 4 convergence, 5 I/O, 6 other.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mhde/mhde.hpp"

namespace {

using mhde::json;

enum Exit : int { ok = 0, usage = 2, schema = 3, convergence = 4, io = 5, other = 6 };

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void ensure_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(parent, ec);
    if (ec) throw mhde::IoError("cannot create directory '" + parent.string() + "'");
  }
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string data;
  std::string family = "gamma";
  std::string kernel = "gaussian";
  std::optional<double> bandwidth;
  std::size_t subdivisions = 200;
  double support_padding = 0.0;
  double ci_level = 0.95;
  std::size_t mc_draws = 10000;
  std::string plug_in = "kde";
  std::uint64_t seed = 1;
  std::string out;
};

struct EstimateBlock {
  std::string estimator;
  mhde::ParamVector theta;
  mhde::Mat2 cov;
  mhde::ConfInterval ci;
  mhde::PopulationStats stats;
};

int cmd_fit(const FitArgs& a) {
  const auto spec = mhde::FamilySpec::from_name(a.family);
  const auto sample = mhde::read_sample_csv(a.data);

  mhde::MhdeOptions opts;
  opts.kernel = mhde::Kernel::from_name(a.kernel);
  opts.bandwidth = a.bandwidth;
  opts.grid_subdivisions = a.subdivisions;
  opts.support_padding = a.support_padding;

  const auto f = mhde::fit(sample, spec, opts);
  const auto parts = mhde::sandwich(f, sample, spec, mhde::plug_in_from_string(a.plug_in));
  const auto [n_v_eff, fpc] = mhde::design_scaling(sample);
  const double kish = mhde::kish_neff(sample.weight);

  std::vector<EstimateBlock> blocks;
  {
    auto rng = mhde::Stream::derive(a.seed, {0});
    const mhde::Mat2 cov = parts.covariance();
    blocks.push_back({"mhde", f.theta_hat, cov, mhde::confint(f.theta_hat, parts, a.ci_level),
                      mhde::population_stats(spec, f.theta_hat, cov, a.mc_draws, rng, a.ci_level)});
  }
  {
    auto rng = mhde::Stream::derive(a.seed, {1});
    const auto m = mhde::weighted_mle(spec, sample);
    const mhde::Mat2 cov = mhde::mle_covariance(spec, m, n_v_eff, fpc);
    blocks.push_back({"mle", m, cov, mhde::wald_interval(m, cov, a.ci_level),
                      mhde::population_stats(spec, m, cov, a.mc_draws, rng, a.ci_level)});
  }

  json options = {{"data", a.data},
                  {"family", a.family},
                  {"kernel", a.kernel},
                  {"bandwidth", a.bandwidth ? json(*a.bandwidth) : json("auto")},
                  {"subdivisions", a.subdivisions},
                  {"support_padding", a.support_padding},
                  {"ci_level", a.ci_level},
                  {"mc_draws", a.mc_draws},
                  {"plug_in", a.plug_in},
                  {"seed", a.seed}};

  const auto names = spec.param_names();
  std::ostringstream rep;
  rep << "family " << spec.name() << ", n = " << sample.size() << ", Kish n_eff = " << fmt(kish)
      << ", bandwidth = " << fmt(f.kde.bandwidth()) << "\n";
  rep << "MHDE affinity = " << fmt(f.affinity, "%.8f") << ", H^2 = " << fmt(f.hellinger_sq, "%.3e")
      << "\n\n";
  rep << "estimator  parameter  estimate        SE              lower           upper\n";
  for (const auto& b : blocks)
    for (int j = 0; j < 2; ++j)
      rep << (b.estimator + std::string(11 - b.estimator.size(), ' '))
          << std::string(names[j]) << std::string(11 - names[j].size(), ' ')
          << fmt(b.theta[j], "%-15.7g ") << fmt(std::sqrt(b.cov(j, j)), "%-15.7g ")
          << fmt(b.ci.lower[j], "%-15.7g ") << fmt(b.ci.upper[j], "%-15.7g") << "\n";
  rep << "\nestimator  statistic  estimate        lower           upper\n";
  for (const auto& b : blocks) {
    const std::pair<const char*, const mhde::StatEstimate*> rows[] = {{"mean", &b.stats.mean},
                                                                      {"median", &b.stats.median}};
    for (const auto& [label, s] : rows)
      rep << b.estimator << std::string(11 - b.estimator.size(), ' ') << label
          << std::string(11 - std::string(label).size(), ' ') << fmt(s->estimate, "%-15.7g ")
          << fmt(s->lower, "%-15.7g ") << fmt(s->upper, "%-15.7g") << "\n";
  }
  std::cout << rep.str();

  if (!a.out.empty()) {
    ensure_parent(a.out);
    std::ostringstream csv;
    csv << "# mhde fit\n# config: " << options.dump() << "\n# seed: " << a.seed << "\n";
    csv << "estimator,quantity,estimate,se,lower,upper\n";
    json jblocks = json::array();
    for (const auto& b : blocks) {
      json jb = {{"estimator", b.estimator}};
      for (int j = 0; j < 2; ++j) {
        csv << b.estimator << ',' << names[j] << ',' << mhde::format_double(b.theta[j]) << ','
            << mhde::format_double(std::sqrt(b.cov(j, j))) << ','
            << mhde::format_double(b.ci.lower[j]) << ',' << mhde::format_double(b.ci.upper[j])
            << "\n";
        jb[std::string(names[j])] = {{"estimate", b.theta[j]},
                                     {"se", std::sqrt(b.cov(j, j))},
                                     {"lower", b.ci.lower[j]},
                                     {"upper", b.ci.upper[j]}};
      }
      const std::pair<const char*, const mhde::StatEstimate*> rows[] = {
          {"mean", &b.stats.mean}, {"median", &b.stats.median}};
      for (const auto& [label, s] : rows) {
        csv << b.estimator << ',' << label << ',' << mhde::format_double(s->estimate) << ",nan,"
            << mhde::format_double(s->lower) << ',' << mhde::format_double(s->upper) << "\n";
        jb[label] = {{"estimate", s->estimate}, {"lower", s->lower}, {"upper", s->upper}};
      }
      jblocks.push_back(jb);
    }
    json doc = {{"config", options},
                {"n", sample.size()},
                {"kish_neff", kish},
                {"bandwidth", f.kde.bandwidth()},
                {"affinity", f.affinity},
                {"hellinger_sq", f.hellinger_sq},
                {"estimates", jblocks}};
    mhde::write_text_file(a.out + ".csv", csv.str());
    mhde::write_text_file(a.out + ".json", doc.dump(2) + "\n");
  }
  return Exit::ok;
}

// ---------------------------------------------------------------------------
// simulate / coverage

struct SimArgs {
  std::string config;
  std::string out;
  bool full = false;
  unsigned threads = 0;
  std::optional<std::uint64_t> seed;
  std::optional<int> replications;
};

int cmd_simulate(const SimArgs& a, bool coverage) {
  auto cfg = mhde::load_scenario(a.config, a.full);
  if (a.seed) cfg.base_seed = *a.seed;
  if (a.replications) cfg.replications = *a.replications;
  cfg.validate();
  const json resolved = mhde::to_json(cfg);
  std::cout << "# resolved config\n" << resolved.dump(2) << "\n";

  const unsigned threads = a.threads ? a.threads : mhde::default_threads();
  const auto res = coverage ? mhde::coverage_study(cfg, threads) : mhde::run_scenario(cfg, threads);

  const std::string prefix = a.out.empty() ? cfg.name : a.out;
  ensure_parent(prefix);
  mhde::write_text_file(prefix + ".csv", mhde::result_csv(res, resolved));
  mhde::write_text_file(prefix + ".json", mhde::result_json(res, resolved).dump(2) + "\n");
  const std::string table = mhde::format_table(res);
  mhde::write_text_file(prefix + ".txt",
                        "# config: " + resolved.dump() + "\n# seed: " +
                            std::to_string(cfg.base_seed) + "\n" + table);
  if (cfg.keep_replicates)
    mhde::write_text_file(prefix + "_replicates.csv",
                          mhde::replicates_csv(res, cfg.family, resolved));
  std::cout << "\n" << table;
  bool unreliable = false;
  for (const auto& c : res.cells) unreliable |= c.unreliable;
  if (unreliable) std::cerr << "warning: some cells have more than 10% failed fits\n";
  return Exit::ok;
}

// ---------------------------------------------------------------------------
// influence

struct InfluenceArgs {
  std::string family = "gamma";
  std::vector<double> theta;
  std::optional<double> z;
  std::optional<double> p;
  std::vector<double> eps;
  std::vector<double> probs;
  double if_eps = 0.1;
  std::string mechanism = "point_mass";
  std::string out;
};

int cmd_influence(const InfluenceArgs& a) {
  const auto spec = mhde::FamilySpec::from_name(a.family);
  if (a.theta.size() != 2) throw mhde::SchemaError("--theta", "expected two values");
  const mhde::ParamVector theta0(spec, a.theta[0], a.theta[1]);
  const auto mech = mhde::mechanism_from_string(a.mechanism);
  const auto names = spec.param_names();
  const std::string n0(names[0]), n1(names[1]);

  json config = {{"family", a.family},
                 {"theta", a.theta},
                 {"mechanism", a.mechanism}};
  std::ostringstream csv;
  json rows = json::array();

  if (!a.probs.empty()) {
    // Influence curve over quantiles.
    config["probs"] = a.probs;
    config["if_eps"] = a.if_eps;
    csv << "# mhde influence curve\n# config: " << config.dump() << "\n";
    csv << "estimator,p,z,epsilon,if_" << n0 << ",if_" << n1 << "\n";
    for (auto est : {mhde::Estimator::mhde, mhde::Estimator::mle}) {
      mhde::InfluenceOptions io;
      io.mechanism = mech;
      io.estimator = est;
      for (const auto& pt : mhde::influence_curve(spec, theta0, a.probs, a.if_eps, io)) {
        csv << mhde::to_string(est) << ',' << mhde::format_double(pt.p) << ','
            << mhde::format_double(pt.z) << ',' << mhde::format_double(a.if_eps) << ','
            << mhde::format_double(pt.value[0]) << ',' << mhde::format_double(pt.value[1]) << "\n";
        rows.push_back({{"estimator", mhde::to_string(est)}, {"p", pt.p}, {"z", pt.z},
                        {"epsilon", a.if_eps}, {"if", {pt.value[0], pt.value[1]}}});
      }
    }
    for (double p : a.probs) {
      const double z = mhde::quantile(spec, theta0, p);
      const auto v = mhde::analytic_influence(spec, theta0, z);
      csv << "mhde_analytic," << mhde::format_double(p) << ',' << mhde::format_double(z)
          << ",0," << mhde::format_double(v[0]) << ',' << mhde::format_double(v[1]) << "\n";
      rows.push_back({{"estimator", "mhde_analytic"}, {"p", p}, {"z", z}, {"epsilon", 0.0},
                      {"if", {v[0], v[1]}}});
    }
  } else {
    // Alpha curve at a single contamination point.
    if (a.z.has_value() == a.p.has_value())
      throw mhde::SchemaError("--z/--p", "give exactly one of --z and --p");
    if (a.p && !(*a.p > 0.0 && *a.p < 1.0)) throw mhde::SchemaError("--p", "must lie in (0, 1)");
    const double z = a.z ? *a.z : mhde::quantile(spec, theta0, *a.p);
    if (a.eps.empty()) throw mhde::SchemaError("--eps", "need at least one epsilon");
    config["z"] = z;
    if (a.p) config["p"] = *a.p;
    config["eps"] = a.eps;
    csv << "# mhde alpha curve\n# config: " << config.dump() << "\n";
    csv << "estimator,epsilon,z," << n0 << ',' << n1 << ',' << n0 << "_rel_bias," << n1
        << "_rel_bias,converged\n";
    std::cerr << "contamination location z = " << fmt(z, "%.3f") << "\n";
    for (auto est : {mhde::Estimator::mhde, mhde::Estimator::mle}) {
      for (const auto& pt : mhde::alpha_curve(spec, theta0, z, a.eps, mech, est)) {
        csv << mhde::to_string(est) << ',' << mhde::format_double(pt.epsilon) << ','
            << mhde::format_double(z) << ',' << mhde::format_double(pt.theta[0]) << ','
            << mhde::format_double(pt.theta[1]) << ',' << mhde::format_double(pt.rel_bias[0])
            << ',' << mhde::format_double(pt.rel_bias[1]) << ',' << (pt.converged ? 1 : 0)
            << "\n";
        rows.push_back({{"estimator", mhde::to_string(est)},
                        {"epsilon", pt.epsilon},
                        {"z", z},
                        {"theta", {pt.theta[0], pt.theta[1]}},
                        {"rel_bias", {pt.rel_bias[0], pt.rel_bias[1]}},
                        {"converged", pt.converged}});
      }
    }
  }

  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    ensure_parent(a.out);
    mhde::write_text_file(a.out + ".csv", csv.str());
    mhde::write_text_file(a.out + ".json",
                          json{{"config", config}, {"rows", rows}}.dump(2) + "\n");
  }
  return Exit::ok;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const std::string& input, const std::string& format) {
  const auto res = mhde::read_result_csv(input);
  if (format == "json") std::cout << mhde::result_json(res, json::object()).dump(2) << "\n";
  else std::cout << mhde::format_table(res);
  return Exit::ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Minimum Hellinger distance estimation for complex survey samples"};
  app.require_subcommand(1);

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit a parametric model to a survey data file");
  fit->add_option("--data", fa.data, "CSV with columns y and weight or pi")->required();
  fit->add_option("--family", fa.family, "gamma, weibull or lognormal")->capture_default_str();
  fit->add_option("--kernel", fa.kernel, "gaussian or epanechnikov")->capture_default_str();
  fit->add_option("--bandwidth", fa.bandwidth, "KDE bandwidth (default: Silverman rule on Kish n_eff)");
  fit->add_option("--subdivisions", fa.subdivisions, "quadrature panels")->capture_default_str();
  fit->add_option("--support-padding", fa.support_padding, "extra bandwidths beyond the KDE support");
  fit->add_option("--ci-level", fa.ci_level, "confidence level")->capture_default_str();
  fit->add_option("--mc-draws", fa.mc_draws, "draws for population statistics")->capture_default_str();
  fit->add_option("--plug-in", fa.plug_in, "density plugged into the sandwich: kde or model")
      ->capture_default_str();
  fit->add_option("--seed", fa.seed, "seed for the Monte-Carlo draws")->capture_default_str();
  fit->add_option("--out", fa.out, "write <out>.csv and <out>.json");

  SimArgs sa, ca;
  auto add_sim = [](CLI::App* sub, SimArgs& s) {
    sub->add_option("--config", s.config, "scenario file")->required();
    sub->add_option("--out", s.out, "output prefix (default: scenario name)");
    sub->add_flag("--full", s.full, "use the population grid 1e6 ... 1e8");
    sub->add_option("--threads", s.threads, "worker threads (default: MHDE_THREADS or all cores)");
    sub->add_option("--seed", s.seed, "override base_seed");
    sub->add_option("--replications", s.replications, "override replications");
  };
  auto* sim = app.add_subcommand("simulate", "Run a simulation scenario");
  add_sim(sim, sa);
  auto* cov = app.add_subcommand("coverage", "Run a confidence-interval coverage study");
  add_sim(cov, ca);

  InfluenceArgs ia;
  auto* inf = app.add_subcommand("influence", "Influence functions and alpha-curves");
  inf->add_option("--family", ia.family)->capture_default_str();
  inf->add_option("--theta", ia.theta, "true parameters")->delimiter(',')->required();
  inf->add_option("--z", ia.z, "contamination location");
  inf->add_option("--p", ia.p, "contamination location as a model quantile");
  inf->add_option("--eps", ia.eps, "contamination fractions for the alpha-curve")->delimiter(',');
  inf->add_option("--probs", ia.probs, "quantiles for the influence curve")->delimiter(',');
  inf->add_option("--if-eps", ia.if_eps, "contamination fraction for the influence curve")
      ->capture_default_str();
  inf->add_option("--mechanism", ia.mechanism, "point_mass, point_normal or trunc_t")
      ->capture_default_str();
  inf->add_option("--out", ia.out, "write <out>.csv and <out>.json (default: CSV to stdout)");

  std::string rep_input, rep_format = "text";
  auto* rep = app.add_subcommand("report", "Print a simulation result as a table");
  rep->add_option("--input", rep_input, "result CSV")->required();
  rep->add_option("--format", rep_format, "text or json")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? Exit::ok : Exit::usage;
  }

  try {
    if (*fit) return cmd_fit(fa);
    if (*sim) return cmd_simulate(sa, false);
    if (*cov) return cmd_simulate(ca, true);
    if (*inf) return cmd_influence(ia);
    if (*rep) return cmd_report(rep_input, rep_format);
  } catch (const mhde::SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return Exit::schema;
  } catch (const mhde::ConvergenceError& e) {
    std::cerr << "convergence failure: " << e.what() << " (last iterate " << e.last_iterate()[0]
              << ", " << e.last_iterate()[1] << ")\n";
    return Exit::convergence;
  } catch (const mhde::CurvatureError& e) {
    std::cerr << "convergence failure: " << e.what() << "\n";
    return Exit::convergence;
  } catch (const mhde::InstabilityError& e) {
    std::cerr << "convergence failure: " << e.what() << "\n";
    return Exit::convergence;
  } catch (const mhde::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return Exit::io;
  } catch (const mhde::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return Exit::other;
  }
  return Exit::usage;
}
