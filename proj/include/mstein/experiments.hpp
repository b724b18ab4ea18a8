#pragma once

// Named, seeded experiments that bind the library modules together. Each run
// returns a JSON document with the resolved configuration, per-T statistics
// and the outcome of every registered assertion, plus a CSV table for
// plotting. Reports carry no timestamps or host data, so the same
// configuration and seed always serialise to the same bytes.

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mstein/chaos_json.hpp"
#include "mstein/covmodels.hpp"
#include "mstein/discrete_chaos.hpp"
#include "mstein/error.hpp"
#include "mstein/flp_kernels.hpp"
#include "mstein/functionals.hpp"
#include "mstein/gauss_paths.hpp"
#include "mstein/hermite.hpp"
#include "mstein/levy_jumps.hpp"
#include "mstein/rng.hpp"
#include "mstein/stats_distance.hpp"

namespace mstein::experiments {

using json = nlohmann::json;

inline constexpr int kCsvSchema = 1;

struct ExperimentConfig {
  std::string experiment;
  json parameters = json::object();
  std::uint64_t seed = 1;
  std::optional<std::size_t> replications;  // experiment default when unset
  std::string output_path;
};

inline ExperimentConfig config_from_json(const json& j) {
  require(j.is_object(), ErrorCode::InvalidParameter, "config must be a JSON object");
  static const std::set<std::string> known{"experiment", "parameters", "seed", "replications", "output_path"};
  for (const auto& [key, _] : j.items())
    require(known.count(key) > 0, ErrorCode::InvalidParameter, "unknown config field '" + key + "'");
  ExperimentConfig c;
  try {
    c.experiment = j.at("experiment").get<std::string>();
    if (j.contains("parameters")) c.parameters = j.at("parameters");
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("replications")) {
      const auto r = j.at("replications").get<long long>();
      require(r >= 1, ErrorCode::InvalidParameter, "replications must be >= 1");
      c.replications = static_cast<std::size_t>(r);
    }
    if (j.contains("output_path")) c.output_path = j.at("output_path").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidParameter, std::string("malformed config: ") + e.what());
  }
  require(c.parameters.is_object(), ErrorCode::InvalidParameter, "parameters must be a JSON object");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidParameter, "config '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

/// Rows of one CSV table. Empty cells stand for quantities that do not apply.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

struct Assertion {
  std::string name;
  bool passed = false;
  json detail;
};

struct ExperimentReport {
  json document;
  CsvTable csv;

  bool passed() const { return document.at("passed").get<bool>(); }
  std::string serialize() const { return document.dump(2) + "\n"; }
};

namespace detail {

inline std::string num(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

/// Reads parameters with defaults and remembers what was used, so the report
/// can embed the fully resolved set and typos are caught before any work.
class Params {
 public:
  explicit Params(json in) : in_(std::move(in)) {}

  template <class T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    T v = std::move(fallback);
    if (in_.contains(key)) {
      try {
        v = in_.at(key).get<T>();
      } catch (const json::exception& e) {
        fail(ErrorCode::InvalidParameter, "parameter '" + key + "': " + e.what());
      }
    }
    resolved_[key] = v;
    return v;
  }

  json raw(const std::string& key, json fallback) {
    used_.insert(key);
    json v = in_.contains(key) ? in_.at(key) : std::move(fallback);
    resolved_[key] = v;
    return v;
  }

  void set_resolved(const std::string& key, json v) { resolved_[key] = std::move(v); }

  void finish() const {
    for (const auto& [key, _] : in_.items())
      if (!used_.count(key)) fail(ErrorCode::InvalidParameter, "unknown parameter '" + key + "'");
  }

  const json& resolved() const { return resolved_; }

 private:
  json in_;
  json resolved_ = json::object();
  std::set<std::string> used_;
};

class Builder {
 public:
  Builder(std::string id, std::uint64_t seed) : id_(std::move(id)), seed_(seed) {}

  void check(const std::string& name, bool ok, json detail = json::object()) {
    assertions_.push_back({name, ok, std::move(detail)});
  }

  json results = json::object();
  CsvTable csv;

  ExperimentReport finish(const Params& p, std::size_t replications) {
    ExperimentReport r;
    json list = json::array();
    bool all = true;
    for (const auto& a : assertions_) {
      list.push_back({{"name", a.name}, {"passed", a.passed}, {"detail", a.detail}});
      all = all && a.passed;
    }
    r.document = {{"schema", kCsvSchema}, {"experiment", id_},         {"seed", seed_},
                  {"replications", replications}, {"parameters", p.resolved()}, {"results", results},
                  {"assertions", list},           {"passed", all}};
    r.csv = std::move(csv);
    return r;
  }

 private:
  std::string id_;
  std::uint64_t seed_;
  std::vector<Assertion> assertions_;
};

inline const std::vector<std::string> kStandardColumns{"experiment", "T",   "replications", "mean",
                                                       "variance",   "w1",  "ks",           "seed"};

// Short form of a number for assertion names.
inline std::string tag(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

inline std::vector<std::string> standard_row(const std::string& id, double T, std::size_t reps, double mean,
                                             double var, double w1, double ks, std::uint64_t seed) {
  return {id, num(T), std::to_string(reps), num(mean), num(var), num(w1), num(ks), std::to_string(seed)};
}

/// (model, resolved description) from {"kind": ..., ...}.
inline std::pair<CovarianceModel, json> model_from_json(const json& j) {
  require(j.is_object(), ErrorCode::InvalidParameter, "model must be an object with a 'kind'");
  Params p(j);
  const auto kind = p.get<std::string>("kind", "fbm-increments");
  CovarianceModel m;
  if (kind == "fbm-increments") {
    m = fbm_increments(p.get<double>("H", 0.7));
  } else if (kind == "ou") {
    m = ou_exponential(p.get<double>("lambda", 1.0));
  } else if (kind == "fou") {
    m = fou(p.get<double>("H", 0.7), p.get<double>("lambda", 1.0), p.get<double>("sigma", 1.0),
            p.get<int>("terms", 3));
  } else {
    fail(ErrorCode::InvalidParameter, "unknown covariance model '" + kind + "'");
  }
  p.finish();
  return {std::move(m), p.resolved()};
}

/// Polynomial in the power basis, c[0] + c[1] x + ...
struct Polynomial {
  std::vector<double> c;

  double operator()(double x) const {
    double v = 0.0;
    for (std::size_t k = c.size(); k-- > 0;) v = v * x + c[k];
    return v;
  }
  int degree() const {
    for (std::size_t k = c.size(); k-- > 0;)
      if (c[k] != 0.0) return static_cast<int>(k);
    return 0;
  }
  bool even() const {
    for (std::size_t k = 1; k < c.size(); k += 2)
      if (c[k] != 0.0) return false;
    return true;
  }
};

inline std::vector<double> positive_grid(Params& p, const std::string& key, std::vector<double> fallback) {
  auto v = p.get<std::vector<double>>(key, std::move(fallback));
  require(!v.empty(), ErrorCode::InvalidParameter, "'" + key + "' must not be empty");
  for (double x : v) require(x > 0.0 && std::isfinite(x), ErrorCode::InvalidParameter, "'" + key + "' needs positive values");
  return v;
}

inline Factorization factorization_from(const std::string& s) {
  if (s == "auto") return Factorization::Auto;
  if (s == "circulant") return Factorization::Circulant;
  if (s == "cholesky") return Factorization::Cholesky;
  fail(ErrorCode::InvalidParameter, "factorization must be auto, circulant or cholesky, got '" + s + "'");
}

inline json moments_json(const MomentAccumulator& m) {
  return {{"mean", m.mean}, {"mean_se", m.mean_se()}, {"variance", m.variance()}, {"variance_se", m.variance_se()}};
}

inline json distance_json(const DistanceReport& d) { return {{"w1", d.w1}, {"w1_se", d.w1_se}, {"ks", d.ks}}; }

// ---------------------------------------------------------------------------
// Subordinated Gaussian fields

struct SubordinatedSetup {
  CovarianceModel model;
  Polynomial f;
  bool symmetric = false;
  double dt = 1.0;
  Factorization method = Factorization::Auto;
};

inline SubordinatedSetup subordinated_setup(Params& p, json model_default, std::vector<double> f_default) {
  SubordinatedSetup s;
  auto [model, model_json] = model_from_json(p.raw("model", std::move(model_default)));
  p.set_resolved("model", model_json);
  s.model = std::move(model);
  s.f.c = p.get<std::vector<double>>("f", std::move(f_default));
  require(!s.f.c.empty(), ErrorCode::InvalidParameter, "f needs at least one coefficient");
  for (double c : s.f.c) require(std::isfinite(c), ErrorCode::InvalidParameter, "f coefficients must be finite");
  s.symmetric = p.get<bool>("symmetric", s.f.even());
  s.dt = p.get<double>("dt", 1.0);
  s.method = factorization_from(p.get<std::string>("factorization", "auto"));
  return s;
}

inline SubordinatedConfig subordinated_config(const SubordinatedSetup& s, double T, std::size_t reps) {
  const Polynomial f = s.f;
  return make_subordinated(s.model, f, std::max(1, f.degree()), s.symmetric, T, s.dt, reps);
}

inline ExperimentReport run_clt_subordinated(Params& p, std::uint64_t seed, std::optional<std::size_t> reps_in) {
  const std::string id = "clt-subordinated";
  auto setup = subordinated_setup(p, {{"kind", "fbm-increments"}, {"H", 0.7}}, {0.0, 1.0, 0.0, 1.0});
  const auto Ts = positive_grid(p, "T", {2000.0});
  const double w1_max = p.get<double>("w1_max", 0.05);
  const double se_k = p.get<double>("se_k", 3.0);
  const double sigma2_tol = p.get<double>("sigma2_rel_tol", 0.15);
  const auto standardize_mode = p.get<std::string>("standardize", "empirical");
  require(standardize_mode == "empirical" || standardize_mode == "exact", ErrorCode::InvalidParameter,
          "standardize must be 'empirical' or 'exact'");
  const int batches = p.get<int>("batches", 10);
  const std::size_t reps = reps_in.value_or(2000);
  p.finish();

  // Validate every T before simulating anything.
  std::vector<SubordinatedConfig> cfgs;
  for (double T : Ts) cfgs.push_back(subordinated_config(setup, T, reps));

  Builder b(id, seed);
  b.csv.columns = kStandardColumns;
  const auto& e = cfgs.front().expansion;
  b.results["hermite_coefficients"] = e.coefficients;
  const bool power = setup.model.decay.is_power();
  const double sigma2 = power ? asymptotic_variance(setup.model.decay.M, e.first()) : NAN;
  if (power) b.results["sigma2_limit"] = sigma2;

  json rows = json::array();
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    const auto& cfg = cfgs[i];
    const std::uint64_t s = stream_seed(seed, i);
    const auto v = simulate_subordinated(cfg, s, setup.method);
    const auto m = moments(v);
    const double oracle = subordinated_variance(cfg);
    const double discrete = subordinated_variance_discrete(cfg);
    const auto z = standardize_mode == "exact" ? standardize(v, discrete, 0.0) : standardize(v);
    const auto d = distances(z, s, batches);
    json row = moments_json(m);
    row.update(distance_json(d));
    row["T"] = cfg.T;
    row["stream_seed"] = s;
    row["oracle_variance"] = oracle;
    row["oracle_variance_discrete"] = discrete;
    row["predicted_rate"] = predicted_rate(setup.model.decay, cfg.T);
    rows.push_back(row);
    b.csv.rows.push_back(standard_row(id, cfg.T, reps, m.mean, m.variance(), d.w1, d.ks, seed));

    const double gap = std::abs(m.variance() - oracle);
    b.check("variance_matches_oracle@T=" + tag(cfg.T), gap <= se_k * m.variance_se(),
            {{"empirical", m.variance()}, {"oracle", oracle}, {"se", m.variance_se()}, {"k", se_k}});
    if (i + 1 == cfgs.size()) {
      if (power) {
        const double rel = std::abs(oracle - sigma2) / sigma2;
        b.check("oracle_near_limit@T=" + tag(cfg.T), rel <= sigma2_tol,
                {{"oracle", oracle}, {"limit", sigma2}, {"relative_gap", rel}, {"tolerance", sigma2_tol}});
      }
      b.check("w1_below_threshold@T=" + tag(cfg.T), d.w1 < w1_max, {{"w1", d.w1}, {"threshold", w1_max}});
    }
  }
  b.results["rows"] = rows;
  return b.finish(p, reps);
}

inline ExperimentReport run_rate_table(Params& p, std::uint64_t seed, std::optional<std::size_t> reps_in) {
  const std::string id = "rate-table";
  auto setup = subordinated_setup(p, {{"kind", "fbm-increments"}, {"H", 0.3}}, {0.0, 0.0, 1.0});
  const auto Ts = positive_grid(p, "T", {250.0, 500.0, 1000.0, 2000.0});
  const double slope_max = p.get<double>("slope_max", -0.15);
  const auto standardize_mode = p.get<std::string>("standardize", "exact");
  require(standardize_mode == "empirical" || standardize_mode == "exact", ErrorCode::InvalidParameter,
          "standardize must be 'empirical' or 'exact'");
  const int batches = p.get<int>("batches", 10);
  const std::size_t reps = reps_in.value_or(20000);
  p.finish();
  require(Ts.size() >= 3, ErrorCode::InvalidParameter, "a rate table needs at least three horizons");

  std::vector<SubordinatedConfig> cfgs;
  for (double T : Ts) cfgs.push_back(subordinated_config(setup, T, reps));

  Builder b(id, seed);
  b.csv.columns = {"T", "w1", "ks", "se"};
  json rows = json::array();
  std::vector<std::pair<double, double>> w1_points, bound_points;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    const auto& cfg = cfgs[i];
    const std::uint64_t s = stream_seed(seed, i);
    const auto v = simulate_subordinated(cfg, s, setup.method);
    const double discrete = subordinated_variance_discrete(cfg);
    const auto z = standardize_mode == "exact" ? standardize(v, discrete, 0.0) : standardize(v);
    const auto d = distances(z, s, batches);
    const auto m = moments(v);
    json row = moments_json(m);
    row.update(distance_json(d));
    row["T"] = cfg.T;
    row["stream_seed"] = s;
    row["oracle_variance_discrete"] = discrete;
    row["predicted_rate"] = predicted_rate(setup.model.decay, cfg.T);
    rows.push_back(row);
    b.csv.rows.push_back({num(cfg.T), num(d.w1), num(d.ks), num(d.w1_se)});
    w1_points.emplace_back(cfg.T, d.w1);
    bound_points.emplace_back(cfg.T, predicted_rate(setup.model.decay, cfg.T));
  }
  const auto fit = rate_fit(w1_points);
  const auto bound = rate_fit(bound_points);
  b.results["rows"] = rows;
  b.results["fit"] = {{"slope", fit.slope}, {"intercept", fit.intercept}, {"r2", fit.r2}};
  b.results["bound_slope"] = bound.slope;
  b.check("w1_slope_at_most", fit.slope <= slope_max,
          {{"slope", fit.slope}, {"threshold", slope_max}, {"bound_slope", bound.slope}});
  return b.finish(p, reps);
}

// ---------------------------------------------------------------------------
// Levy experiments

inline LevyMeasure power_law_from(Params& p) {
  return power_law(p.get<double>("delta", 0.5), p.get<double>("a", 1.0), p.get<double>("b", 1.0));
}

inline ExperimentReport run_small_jumps(Params& p, std::uint64_t seed, std::optional<std::size_t> reps_in) {
  const std::string id = "small-jumps";
  const LevyMeasure m = power_law_from(p);
  const double lambda = p.get<double>("lambda", 1.0);
  const double t = p.get<double>("t", 5.0);
  const double eps = p.get<double>("eps", 1e-4);
  const double inner = p.get<double>("inner_eps", 1e-6);
  const auto ladder = positive_grid(p, "eps_ladder", {1e-2, 1e-3, 1e-4});
  const double ks_max = p.get<double>("ks_max", 0.02);
  SmallJumpOptions opt;
  opt.max_exact_jumps = p.get<double>("max_exact_jumps", opt.max_exact_jumps);
  opt.max_discarded_variance = p.get<double>("max_discarded_variance", opt.max_discarded_variance);
  const int batches = p.get<int>("batches", 10);
  const std::size_t reps = reps_in.value_or(10000);
  p.finish();
  require(lambda > 0.0, ErrorCode::NonPositiveParameter, "lambda must be positive");

  const double gain = std::sqrt(2.0 * lambda);
  auto h = [gain, lambda, t](double s) { return gain * std::exp(-lambda * (t - s)); };
  const SmallJumpSampler sampler(m, eps, h, t, inner, opt);
  const auto v = replicate(reps, seed, [&](Engine& rng, std::size_t) { return sampler.draw(rng); });

  // Reference law N(0, int_0^t h^2) = N(0, 1 - e^{-2 lambda t}).
  const double nominal = -std::expm1(-2.0 * lambda * t);
  const double retained = sampler.target_variance();
  const auto mom = moments(v);
  const auto d_nominal = distances(standardize(v, nominal, 0.0), seed, batches);
  const auto d_retained = distances(standardize(v, retained, 0.0), seed, batches);

  // int |h|^3 / (int h^2)^{3/2}
  const double h3 = std::pow(gain, 3) * (-std::expm1(-3.0 * lambda * t)) / (3.0 * lambda);
  const double h_factor = h3 / std::pow(nominal, 1.5);
  std::vector<double> ratios;
  bool decreasing = true;
  for (double e : ladder) {
    ratios.push_back(third_moment_ratio(m, e, h_factor));
    if (ratios.size() >= 2 && !(ratios.back() < ratios[ratios.size() - 2])) decreasing = false;
  }
  const auto subst = gaussian_substitution_valid(m, ladder);

  Builder b(id, seed);
  const auto& dg = sampler.diagnostics();
  b.results = {{"measure", m.label},
               {"moments", moments_json(mom)},
               {"reference_variance", nominal},
               {"retained_variance", retained},
               {"distance_to_reference", distance_json(d_nominal)},
               {"distance_to_retained", distance_json(d_retained)},
               {"diagnostics",
                {{"sigma_eps", dg.sigma_eps},
                 {"sigma_inner", dg.sigma_inner},
                 {"discarded_variance_fraction", dg.discarded_variance_fraction},
                 {"h_l2", dg.h_l2},
                 {"exact_shells", dg.exact_shells},
                 {"gaussian_shells", dg.gaussian_shells},
                 {"max_gaussian_shell_lyapunov", dg.max_gaussian_shell_lyapunov}}},
               {"third_moment_ratios", {{"eps", ladder}, {"ratio", ratios}, {"h_factor", h_factor}}},
               {"substitution", {{"eps", subst.eps}, {"sigma_over_eps", subst.ratios}, {"verdict", subst.verdict()}}}};
  b.csv.columns = kStandardColumns;
  b.csv.rows.push_back(standard_row(id, t, reps, mom.mean, mom.variance(), d_nominal.w1, d_nominal.ks, seed));
  b.check("ks_to_reference_below_threshold", d_nominal.ks < ks_max,
          {{"ks", d_nominal.ks}, {"threshold", ks_max}, {"reference_variance", nominal}});
  b.check("third_moment_ratio_decreasing", decreasing, {{"ratios", ratios}});
  return b.finish(p, reps);
}

inline ExperimentReport run_flp_hybrid(Params& p, std::uint64_t seed, std::optional<std::size_t> reps_in) {
  const std::string id = "flp-hybrid";
  const auto gram_H = p.get<std::vector<double>>("gram_H", {0.3, 0.7});
  const auto gram_times = positive_grid(p, "gram_times", {0.2, 0.6, 1.0, 1.4, 1.8});
  const double gram_tol = p.get<double>("gram_tol", 1e-3);
  const double H = p.get<double>("H", 0.7);
  const LevyMeasure m = power_law_from(p);
  const double eps = p.get<double>("eps", 1e-3);
  const auto n = p.get<std::size_t>("steps", 4);
  const double dt = p.get<double>("dt", 0.25);
  const double se_k = p.get<double>("se_k", 3.0);
  const int batches = p.get<int>("batches", 10);
  const std::size_t reps = reps_in.value_or(10000);
  p.finish();

  Builder b(id, seed);
  json gram = json::array();
  for (double h : gram_H) {
    const FractionalKernel k(h);
    double worst = 0.0;
    for (double t : gram_times)
      for (double s : gram_times) worst = std::max(worst, std::abs(mg_gram(k, t, s) - fbm_cov(h, t, s)));
    gram.push_back({{"H", h}, {"max_abs_error", worst}});
    b.check("gram_matches_fbm_covariance@H=" + tag(h), worst <= gram_tol,
            {{"max_abs_error", worst}, {"tolerance", gram_tol}});
  }

  const FractionalKernel k(H);
  const FlpHybridSampler sampler(k, m, eps, n, dt);
  std::vector<std::vector<double>> paths(reps);
  parallel_for(reps, [&](std::size_t r) {
    Engine g = make_stream(seed, 2 * r), q = make_stream(seed, 2 * r + 1);
    paths[r] = sampler.draw(g, q);
  });

  // Var L_t = (sigma(eps)^2 + int_{|x|>eps} x^2 nu) int_0^t K(t,s)^2 ds
  const double small = sampler.sigma() * sampler.sigma();
  const double large = sampler.tail_second_moment();
  json rows = json::array();
  b.csv.columns = kStandardColumns;
  for (std::size_t i = 1; i <= n; ++i) {
    const double t = static_cast<double>(i) * dt;
    std::vector<double> v(reps);
    for (std::size_t r = 0; r < reps; ++r) v[r] = paths[r][i];
    const auto mom = moments(v);
    const double gram_tt = mg_gram(k, t, t);
    const double oracle = (small + large) * gram_tt;
    const auto d = distances(standardize(v, oracle, 0.0), seed, batches);
    json row = moments_json(mom);
    row.update(distance_json(d));
    row["t"] = t;
    row["oracle_variance"] = oracle;
    row["gaussian_part"] = small * gram_tt;
    row["jump_part"] = large * gram_tt;
    rows.push_back(row);
    b.csv.rows.push_back(standard_row(id, t, reps, mom.mean, mom.variance(), d.w1, d.ks, seed));
    if (i == n)
      b.check("variance_matches_decomposition@t=" + tag(t),
              std::abs(mom.variance() - oracle) <= se_k * mom.variance_se(),
              {{"empirical", mom.variance()}, {"oracle", oracle}, {"se", mom.variance_se()}, {"k", se_k}});
  }
  b.results = {{"gram", gram},
               {"measure", m.label},
               {"sigma_eps", sampler.sigma()},
               {"tail_second_moment", large},
               {"rows", rows}};
  return b.finish(p, reps);
}

// ---------------------------------------------------------------------------
// Product of a Gaussian and a pure-jump OU process

inline ExperimentReport run_product_ou(Params& p, std::uint64_t seed, std::optional<std::size_t> reps_in) {
  const std::string id = "product-ou";
  const double lambda = p.get<double>("lambda", 1.0);
  const auto atom_list =
      p.get<std::vector<std::pair<double, double>>>("atoms", {{-1.0, 0.5}, {1.0, 0.5}});
  const auto Ts = positive_grid(p, "T", {10.0, 50.0, 200.0});
  const json dt_in = p.raw("dt", nullptr);
  const auto start_name = p.get<std::string>("start", "from-zero");
  const double w1_max = p.get<double>("w1_max", 0.05);
  const double limit_tol = p.get<double>("limit_tol", 0.05);
  const double se_k = p.get<double>("se_k", 3.0);
  const int batches = p.get<int>("batches", 10);
  const std::size_t reps = reps_in.value_or(10000);
  p.finish();
  require(start_name == "from-zero" || start_name == "stationary", ErrorCode::InvalidParameter,
          "start must be 'from-zero' or 'stationary'");
  require(dt_in.is_null() || dt_in.is_number(), ErrorCode::InvalidParameter, "dt must be a number or null");
  const bool from_zero = start_name == "from-zero";

  std::vector<ProductOUConfig> cfgs;
  for (double T : Ts) {
    ProductOUConfig c;
    c.lambda = lambda;
    c.measure = atomic(atom_list);
    c.T = T;
    c.dt = dt_in.is_null() ? default_product_ou_dt(lambda, T) : dt_in.get<double>();
    c.replications = reps;
    c.start = from_zero ? OuStart::FromZero : OuStart::Stationary;
    c.validate();
    cfgs.push_back(std::move(c));
  }

  Builder b(id, seed);
  b.csv.columns = kStandardColumns;
  json rows = json::array();
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    const auto& c = cfgs[i];
    const std::uint64_t s = stream_seed(seed, i);
    const auto v = simulate_product_ou(c, s);
    const auto mom = moments(v);
    const double exact = from_zero ? product_ou_variance_exact(lambda, c.T) : NAN;
    const auto z = from_zero ? standardize(v, exact, 0.0) : standardize(v);
    const auto d = distances(z, s, batches);
    const auto bounds = section43_bounds(lambda, c.measure, c.T);
    json row = moments_json(mom);
    row.update(distance_json(d));
    row["T"] = c.T;
    row["dt"] = c.dt;
    row["stream_seed"] = s;
    if (from_zero) row["exact_variance"] = exact;
    row["bounds"] = {{"first_derivative", bounds.first_derivative},
                     {"cube", bounds.cube},
                     {"contraction", bounds.contraction},
                     {"second_derivative", bounds.second_derivative}};
    rows.push_back(row);
    b.csv.rows.push_back(standard_row(id, c.T, reps, mom.mean, mom.variance(), d.w1, d.ks, seed));
    if (from_zero)
      b.check("variance_matches_closed_form@T=" + tag(c.T),
              std::abs(mom.variance() - exact) <= se_k * mom.variance_se(),
              {{"empirical", mom.variance()}, {"exact", exact}, {"se", mom.variance_se()}, {"k", se_k}});
    if (i + 1 == cfgs.size())
      b.check("w1_below_threshold@T=" + tag(c.T), d.w1 < w1_max, {{"w1", d.w1}, {"threshold", w1_max}});
  }
  b.results["rows"] = rows;

  const double T_last = cfgs.back().T;
  if (from_zero) {
    const double last = product_ou_variance_exact(lambda, T_last);
    b.check("closed_form_near_limit@T=" + tag(T_last), std::abs(last - 1.0 / lambda) < limit_tol,
            {{"exact", last}, {"limit", 1.0 / lambda}, {"tolerance", limit_tol}});
  }
  const auto exps = section43_exponents(lambda, cfgs.back().measure, T_last);
  const std::vector<double> expected{0.0, -0.5, -1.0, -1.0};
  double worst = 0.0;
  for (std::size_t k = 0; k < exps.size(); ++k) worst = std::max(worst, std::abs(exps[k] - expected[k]));
  b.results["bound_exponents"] = exps;
  b.check("bound_exponents", worst <= 1e-12, {{"exponents", exps}, {"expected", expected}, {"max_error", worst}});
  return b.finish(p, reps);
}

// ---------------------------------------------------------------------------
// Discrete chaos identities

inline chaos::ChaosFunctional random_functional(std::size_t n, std::size_t top, Engine& rng, bool centred) {
  chaos::ChaosFunctional F(n, top);
  for (std::size_t q = centred ? 1 : 0; q <= top; ++q) F.kernels[q] = chaos::random_kernel(n, q, rng);
  return F;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

inline ExperimentReport run_chaos_identities(Params& p, std::uint64_t seed, std::optional<std::size_t> reps_in) {
  using namespace chaos;
  const std::string id = "chaos-identities";
  const json grid_json = p.raw(
      "grid", {{"uniform", {{"horizon", 1.0}, {"cells", 2}, {"sigma2", 0.7}, {"jumps", {{1.0, 0.8}, {-0.5, 1.5}}}}}});
  const json jump_grid_json = p.raw(
      "jump_grid", {{"uniform", {{"horizon", 1.0}, {"cells", 4}, {"sigma2", 0.0}, {"jumps", {{0.8, 1.0}, {-1.2, 0.5}}}}}});
  const auto max_order = p.get<std::size_t>("max_order", 3);
  const auto kernels = p.get<std::size_t>("random_kernels", 50);
  const auto trials = p.get<std::size_t>("pathwise_trials", 5);
  const double tol = p.get<double>("exact_tol", 1e-12);
  const double se_k = p.get<double>("se_k", 3.0);
  const auto mesh_cells = p.get<std::vector<std::size_t>>("gap_cells", {2, 4, 8, 16, 32});
  const auto gap_reps = p.get<std::size_t>("gap_replications", 4000);
  const double gap_exponent = p.get<double>("gap_exponent", 0.5);
  const double gap_tol = p.get<double>("gap_exponent_tol", 0.15);
  const std::size_t reps = reps_in.value_or(100000);
  p.finish();
  require(max_order >= 1, ErrorCode::InvalidParameter, "max_order must be >= 1");
  require(mesh_cells.size() >= 3, ErrorCode::InvalidParameter, "gap fit needs at least three meshes");

  const AtomGrid grid = grid_from_json(grid_json);
  const AtomGrid jump_grid = grid_from_json(jump_grid_json);
  require(jump_grid.pure_jump(), ErrorCode::InvalidParameter, "jump_grid must hold jump atoms only");
  const std::size_t n = grid.size();
  require(max_order <= n, ErrorCode::OrderTooLarge, "max_order exceeds the number of atoms");

  Builder b(id, seed);
  b.results["atoms"] = n;

  // Isometry: analytic against enumeration, then Monte Carlo.
  Engine krng = make_stream(seed, 0);
  std::vector<Kernel> f, g;
  for (std::size_t q = 1; q <= max_order; ++q) {
    f.push_back(random_kernel(n, q, krng));
    g.push_back(random_kernel(n, q, krng));
  }
  const std::size_t Q = max_order;
  std::vector<double> exact(Q * Q);
  double iso_err = 0.0;
  for (std::size_t a = 0; a < Q; ++a)
    for (std::size_t c = 0; c < Q; ++c) {
      exact[a * Q + c] = expectation_product(grid, ChaosFunctional::single(f[a]), ChaosFunctional::single(g[c]));
      iso_err = std::max(iso_err, rel_err(exact[a * Q + c], expectation_by_enumeration(grid, f[a], g[c])));
    }
  b.check("isometry_analytic", iso_err <= tol, {{"max_relative_error", iso_err}, {"tolerance", tol}});

  std::vector<std::vector<double>> prods(Q * Q, std::vector<double>(reps));
  const std::uint64_t mc_seed = stream_seed(seed, 1);
  parallel_for(reps, [&](std::size_t r) {
    Engine e = make_stream(mc_seed, r);
    const auto w = sample_noise(grid, e, mc_seed);
    std::vector<double> If(Q), Ig(Q);
    for (std::size_t a = 0; a < Q; ++a) {
      If[a] = multiple_integral(f[a], w);
      Ig[a] = multiple_integral(g[a], w);
    }
    for (std::size_t a = 0; a < Q; ++a)
      for (std::size_t c = 0; c < Q; ++c) prods[a * Q + c][r] = If[a] * Ig[c];
  });
  json iso = json::array();
  bool iso_mc = true;
  for (std::size_t a = 0; a < Q; ++a)
    for (std::size_t c = 0; c < Q; ++c) {
      const auto m = moments(prods[a * Q + c]);
      const bool ok = std::abs(m.mean - exact[a * Q + c]) <= se_k * m.mean_se();
      iso_mc = iso_mc && ok;
      iso.push_back({{"p", a + 1}, {"q", c + 1}, {"exact", exact[a * Q + c]}, {"mc", m.mean}, {"se", m.mean_se()}});
    }
  b.results["isometry"] = iso;
  b.check("isometry_monte_carlo", iso_mc, {{"k", se_k}});

  // Pathwise identities on random functionals.
  Engine frng = make_stream(seed, 2);
  double quotient_err = 0.0;
  for (std::size_t tr = 0; tr < trials; ++tr) {
    const auto F = random_functional(n, max_order, frng, false);
    Engine e = make_stream(stream_seed(seed, 3), tr);
    const auto w = sample_noise(grid, e);
    for (std::size_t z = 0; z < n; ++z)
      if (grid[z].jump)
        quotient_err = std::max(quotient_err,
                                rel_err(jump_quotient(grid, F, w, z), evaluate(malliavin_derivative(F, z), w)));
  }
  b.check("quotient_rule_pathwise", quotient_err <= tol, {{"max_relative_error", quotient_err}, {"tolerance", tol}});

  const std::size_t nj = jump_grid.size();
  double product_err = 0.0;
  for (std::size_t tr = 0; tr < trials; ++tr) {
    const auto F = random_functional(nj, std::min<std::size_t>(2, nj), frng, false);
    const auto G = random_functional(nj, std::min<std::size_t>(2, nj), frng, false);
    Engine e = make_stream(stream_seed(seed, 4), tr);
    const auto w = sample_noise(jump_grid, e);
    const double fv = evaluate(F, w), gv = evaluate(G, w);
    for (std::size_t z = 0; z < nj; ++z) {
      const auto wp = add_jump(jump_grid, w, z);
      const double x = jump_grid[z].x;
      const double lhs = (evaluate(F, wp) * evaluate(G, wp) - fv * gv) / x;
      const double dF = evaluate(malliavin_derivative(F, z), w), dG = evaluate(malliavin_derivative(G, z), w);
      product_err = std::max(product_err, rel_err(lhs, dF * gv + fv * dG + x * dF * dG));
    }
  }
  b.check("product_rule_pathwise", product_err <= tol, {{"max_relative_error", product_err}, {"tolerance", tol}});

  // L L^{-1} F = F - E F, exactly.
  double centering_err = 0.0;
  for (std::size_t tr = 0; tr < trials; ++tr) {
    const auto F = random_functional(n, max_order, frng, false);
    const auto LL = ou_generator(ou_inverse(F));
    for (std::size_t q = 0; q < F.kernels.size(); ++q)
      for (std::size_t i = 0; i < F.kernels[q].values.size(); ++i) {
        const double want = q == 0 ? 0.0 : F.kernels[q].values[i];
        centering_err = std::max(centering_err, std::abs(LL.kernels[q].values[i] - want));
      }
  }
  b.check("centering_exact", centering_err <= tol, {{"max_abs_error", centering_err}, {"tolerance", tol}});

  // Skorohod adjoint, E[delta(u) G] = E<u, DG>.
  double adjoint_err = 0.0;
  const std::size_t u_order = std::min<std::size_t>(max_order - 1, n - 1);
  for (std::size_t tr = 0; tr < trials; ++tr) {
    std::vector<ChaosFunctional> u(n);
    for (auto& uz : u) uz = random_functional(n, u_order, frng, false);
    const auto G = random_functional(n, max_order, frng, false);
    adjoint_err =
        std::max(adjoint_err, rel_err(expectation_product(grid, skorohod(u), G), expected_pairing(grid, u, G)));
  }
  b.check("skorohod_adjoint", adjoint_err <= tol, {{"max_relative_error", adjoint_err}, {"tolerance", tol}});

  // Poincare and the inverse-derivative inequality on random kernels.
  std::size_t holds = 0, inverse = 0, equality_right = 0;
  for (std::size_t tr = 0; tr < kernels; ++tr) {
    const std::size_t top = 1 + tr % max_order;
    const auto F = random_functional(n, top, frng, true);
    const auto r = poincare_report(grid, F, 0, 0);
    holds += r.poincare_holds;
    inverse += r.inverse_bound_holds;
    equality_right += r.poincare_equality == (F.effective_order() <= 1);
  }
  b.results["poincare"] = {{"kernels", kernels}, {"holds", holds}, {"inverse_bound_holds", inverse},
                           {"equality_detected_correctly", equality_right}};
  b.check("poincare_inequality", holds == kernels, {{"holds", holds}, {"kernels", kernels}});
  b.check("inverse_derivative_inequality", inverse == kernels, {{"holds", inverse}, {"kernels", kernels}});
  b.check("poincare_equality_iff_first_chaos", equality_right == kernels,
          {{"correct", equality_right}, {"kernels", kernels}});

  {
    Engine e = make_stream(seed, 5);
    const auto F = random_functional(n, max_order, e, true);
    b.results["poincare_example"] = to_json(poincare_report(grid, F, 2000, stream_seed(seed, 5)));
  }

  // Product-formula gap against the mesh: one Gaussian and one jump atom per
  // cell, f = g = 1 + t.
  std::vector<std::pair<double, double>> pts;
  json gaps = json::array();
  b.csv.columns = kStandardColumns;
  for (std::size_t i = 0; i < mesh_cells.size(); ++i) {
    const auto mg = AtomGrid::uniform(1.0, mesh_cells[i], 1.0, {{1.0, 1.0}});
    Kernel k(mg.size(), 1);
    for (std::size_t a = 0; a < mg.size(); ++a) k.values[a] = 1.0 + mg[a].t;
    const auto est = product_formula_gap(mg, k, k, gap_reps, stream_seed(seed, 6 + i));
    pts.emplace_back(mg.mesh(), est.l2);
    gaps.push_back({{"cells", mesh_cells[i]}, {"mesh", mg.mesh()}, {"l2", est.l2}, {"se", est.se},
                    {"mean", est.mean}, {"mean_se", est.mean_se}});
    b.csv.rows.push_back(standard_row(id, mg.mesh(), gap_reps, est.mean, est.l2 * est.l2, NAN, NAN, seed));
  }
  const auto fit = rate_fit(pts);
  b.results["product_formula_gap"] = {{"rows", gaps}, {"slope", fit.slope}, {"r2", fit.r2}};
  b.check("product_formula_gap_exponent", std::abs(fit.slope - gap_exponent) <= gap_tol,
          {{"slope", fit.slope}, {"expected", gap_exponent}, {"tolerance", gap_tol}});
  return b.finish(p, reps);
}

using Runner = ExperimentReport (*)(Params&, std::uint64_t, std::optional<std::size_t>);

struct Entry {
  const char* id;
  const char* summary;
  Runner run;
};

inline const std::vector<Entry>& entries() {
  static const std::vector<Entry> list{
      {"clt-subordinated", "normal limit of a subordinated long-memory field", run_clt_subordinated},
      {"small-jumps", "Gaussian approximation of compensated small jumps", run_small_jumps},
      {"flp-hybrid", "fractional Levy process: Gram identity and hybrid simulation", run_flp_hybrid},
      {"product-ou", "product of a Gaussian and a pure-jump OU process", run_product_ou},
      {"chaos-identities", "isometry, derivative rules and Poincare on a discrete chaos", run_chaos_identities},
      {"rate-table", "Wasserstein distance against T with a fitted log-log slope", run_rate_table},
  };
  return list;
}

}  // namespace detail

struct ExperimentInfo {
  std::string id;
  std::string summary;
};

inline std::vector<ExperimentInfo> registry() {
  std::vector<ExperimentInfo> out;
  for (const auto& e : detail::entries()) out.push_back({e.id, e.summary});
  return out;
}

/// Runs the experiment in memory; nothing is written.
inline ExperimentReport run(const ExperimentConfig& cfg) {
  for (const auto& e : detail::entries()) {
    if (cfg.experiment != e.id) continue;
    require(!cfg.replications || *cfg.replications >= 1, ErrorCode::InvalidParameter, "replications must be >= 1");
    detail::Params p(cfg.parameters);
    return e.run(p, cfg.seed, cfg.replications);
  }
  fail(ErrorCode::UnknownExperiment, "no experiment named '" + cfg.experiment + "'");
}

/// The CSV path that accompanies a report path: the extension becomes .csv.
inline std::string csv_path_for(const std::string& report_path) {
  std::filesystem::path p(report_path);
  p.replace_extension(".csv");
  return p.string();
}

inline void write_report(const std::string& path, const ExperimentReport& r) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot write report '" + path + "'");
  out << r.serialize();
  if (!out) fail(ErrorCode::IoFailure, "write to '" + path + "' failed");
}

/// Appends rows to a CSV file. A new file starts with the schema comment and
/// the column header; an existing one must carry the same two lines.
inline void write_csv(const std::string& path, const CsvTable& t) {
  std::string header;
  for (std::size_t i = 0; i < t.columns.size(); ++i) header += (i ? "," : "") + t.columns[i];
  const std::string schema = "# schema=" + std::to_string(kCsvSchema);
  bool fresh = true;
  {
    std::ifstream in(path);
    std::string l1, l2;
    if (in && std::getline(in, l1)) {
      fresh = false;
      std::getline(in, l2);
      if (l1 != schema || l2 != header)
        fail(ErrorCode::IoFailure, "existing CSV '" + path + "' has a different schema or header");
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) fail(ErrorCode::IoFailure, "cannot write CSV '" + path + "'");
  if (fresh) out << schema << '\n' << header << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }
  if (!out) fail(ErrorCode::IoFailure, "write to '" + path + "' failed");
}

/// Runs and writes the JSON report to `report_path` and the CSV next to it.
inline ExperimentReport run_to_files(const ExperimentConfig& cfg, const std::string& report_path) {
  require(!report_path.empty(), ErrorCode::IoFailure, "no output path given");
  const auto parent = std::filesystem::path(report_path).parent_path();
  if (!parent.empty() && !std::filesystem::is_directory(parent))
    fail(ErrorCode::IoFailure, "output directory '" + parent.string() + "' does not exist");
  ExperimentReport r = run(cfg);
  write_report(report_path, r);
  write_csv(csv_path_for(report_path), r.csv);
  return r;
}

}  // namespace mstein::experiments
