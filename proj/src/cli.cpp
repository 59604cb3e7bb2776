#include "gravity/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "gravity/error.hpp"
#include "gravity/estimator.hpp"
#include "gravity/generator.hpp"
#include "gravity/inference.hpp"
#include "gravity/panel.hpp"
#include "gravity/report.hpp"
#include "gravity/util.hpp"
#include "gravity/weights.hpp"

namespace gravity {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- RunConfig

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig cfg;
  bool versioned = false;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::InvalidConfig, "config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw Error(ErrorCode::InvalidConfig, "config line " + std::to_string(lineno) + ": empty key");
    if (key == "version") {
      if (value != std::to_string(kVersion))
        throw Error(ErrorCode::InvalidConfig, "unsupported config version '" + value + "'");
      versioned = true;
    } else if (key == "command") {
      cfg.command = value;
    } else {
      for (const auto& [k, v] : cfg.values)
        if (k == key) throw Error(ErrorCode::InvalidConfig, "duplicate config key '" + key + "'");
      cfg.values.emplace_back(key, value);
    }
  }
  if (!versioned) throw Error(ErrorCode::InvalidConfig, "config has no version tag");
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot read config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string RunConfig::to_text() const {
  std::string out = "version = " + std::to_string(kVersion) + "\n";
  if (!command.empty()) out += "command = " + command + "\n";
  for (const auto& [k, v] : values) out += k + " = " + v + "\n";
  return out;
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::InvalidConfig, "cannot write config " + path);
  out << to_text();
}

namespace {

// ---------------------------------------------------------------- options

std::string show(double v) { return format_exact(v); }
std::string show(int v) { return std::to_string(v); }
std::string show(unsigned v) { return std::to_string(v); }
std::string show(std::uint64_t v) { return std::to_string(v); }
std::string show(bool v) { return v ? "true" : "false"; }
std::string show(const std::string& v) { return v; }

struct Field {
  std::string key;
  std::function<std::string()> value;
};

/// Options of one subcommand with their config keys.
class Command {
 public:
  Command(CLI::App& app, const std::string& name, const std::string& description)
      : sub_(app.add_subcommand(name, description)), name_(name) {
    sub_->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    sub_->add_option("--config", config_path, "Flat key = value config; flags override it");
    sub_->add_option("--write-config", write_config, "Write the effective config to this path");
  }

  template <typename T>
  void option(const std::string& key, T& ref, const std::string& description) {
    sub_->add_option("--" + key, ref, description)->capture_default_str();
    fields_.push_back({key, [&ref] { return show(ref); }});
  }

  /// Boolean with a --no- form, or a custom negative name.
  void flag(const std::string& key, bool& ref, const std::string& description, const std::string& negative = "") {
    const std::string neg = negative.empty() ? "no-" + key : negative;
    sub_->add_flag("--" + key + ",!--" + neg, ref, description)->capture_default_str();
    fields_.push_back({key, [&ref] { return show(ref); }});
  }

  void common(std::uint64_t& seed, std::string& out, unsigned& threads) {
    option("seed", seed, "Master seed");
    option("out", out, "Output directory");
    option("threads", threads, "Worker threads");
  }

  CLI::App* app() const noexcept { return sub_; }
  const std::string& name() const noexcept { return name_; }

  RunConfig effective() const {
    RunConfig cfg;
    cfg.command = name_;
    for (const auto& f : fields_) cfg.values.emplace_back(f.key, f.value());
    return cfg;
  }

  bool has_key(const std::string& key) const {
    return std::any_of(fields_.begin(), fields_.end(), [&](const Field& f) { return f.key == key; });
  }

  std::string config_path;
  std::string write_config;

 private:
  CLI::App* sub_;
  std::string name_;
  std::vector<Field> fields_;
};

// ---------------------------------------------------------------- parsing helpers

PanelMrtMode parse_mrt_mode(const std::string& s) {
  if (s == "pooled") return PanelMrtMode::Pooled;
  if (s == "per-year") return PanelMrtMode::PerYear;
  throw Error(ErrorCode::InvalidConfig, "unknown mrt mode '" + s + "' (pooled, per-year)");
}

DistanceLoading parse_loading(const std::string& s) {
  if (s == "unit") return DistanceLoading::Unit;
  if (s == "fitted") return DistanceLoading::Fitted;
  throw Error(ErrorCode::InvalidConfig, "unknown distance loading '" + s + "' (unit, fitted)");
}

PValueReference parse_reference(const std::string& s) {
  if (s == "percentile") return PValueReference::Percentile;
  if (s == "student-t") return PValueReference::StudentT;
  throw Error(ErrorCode::InvalidConfig, "unknown p-value reference '" + s + "' (percentile, student-t)");
}

VarianceType parse_variance(const std::string& s) {
  if (s == "conventional") return VarianceType::Conventional;
  if (s == "robust") return VarianceType::Robust;
  throw Error(ErrorCode::InvalidConfig, "unknown variance type '" + s + "' (conventional, robust)");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (const auto& f : split_csv_line(s)) {
    const std::string t = trim(f);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? sep : "") + v[k];
  return out;
}

/// Dataset from a directory (panel.csv + schema.txt) or a panel file.
PanelDataset load_dataset(const std::string& data, const std::string& schema_path) {
  if (data.empty()) throw Error(ErrorCode::MissingFile, "no dataset given (--data)");
  const fs::path p(data);
  fs::path panel = p, schema = schema_path;
  if (fs::is_directory(p)) panel = p / "panel.csv";
  if (schema.empty()) schema = (fs::is_directory(p) ? p : p.parent_path()) / "schema.txt";
  if (!fs::exists(panel)) throw Error(ErrorCode::MissingFile, panel.string());
  return load_panel(panel.string(), load_schema(schema.string()));
}

fs::path prepare_out(const std::string& out) {
  const fs::path dir(out.empty() ? "." : out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::MissingFile, "cannot create output directory " + dir.string());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::MissingFile, path.string());
  out << text;
}

std::vector<std::string> size_regressors(const Schema& schema) {
  std::vector<std::string> out;
  for (const auto& c : schema.covariates())
    if (c.tag == ComponentTag::Size && (c.role == CovariateRole::Origin || c.role == CovariateRole::Destination))
      out.push_back(c.name);
  return out;
}

ModelSpec pair_effects_spec(const PanelDataset& ds, const std::string& regressors) {
  ModelSpec spec;
  spec.regressors = regressors.empty() ? size_regressors(ds.schema()) : split_list(regressors);
  spec.include_pair_fe = true;
  spec.collinearity = CollinearityPolicy::Absorb;
  return spec;
}

std::string fixed(double v, int d) { return format_fixed(v, d); }

// ---------------------------------------------------------------- commands

struct GenerateArgs {
  int n = 10, years = 5, first_year = 1988;
  double sigma = 4.0, rho = 0.0, noise = 0.05, border = 0.0, border_phase_down = 0.25;
  double distance_share = 0.21, distance_elasticity = 1.0;
  std::string mrt_mode = "pooled", normalization = "row-stochastic", lag_mode = "origin";
  std::uint64_t seed = 1;
  std::string out = "out";
  unsigned threads = 1;
};

int cmd_generate(const GenerateArgs& a) {
  GeneratorConfig cfg;
  if (a.n < 2) throw Error(ErrorCode::InvalidConfig, "need at least two countries");
  if (a.years < 1) throw Error(ErrorCode::InvalidConfig, "need at least one year");
  cfg.countries = static_cast<std::size_t>(a.n);
  cfg.periods = static_cast<std::size_t>(a.years);
  cfg.first_year = a.first_year;
  cfg.sigma = a.sigma;
  cfg.rho = a.rho;
  cfg.noise_sd = a.noise;
  cfg.omitted_border_cost = a.border;
  cfg.border_phase_down = a.border_phase_down;
  cfg.distance_share = a.distance_share;
  cfg.distance_elasticity = a.distance_elasticity;
  cfg.mrt_mode = parse_mrt_mode(a.mrt_mode);
  cfg.weights = WeightSpec{parse_normalization(a.normalization), parse_flow_lag_mode(a.lag_mode)};
  cfg.seed = a.seed;
  cfg.threads = a.threads;
  cfg.validate();
  const SyntheticPanel panel = generate_synthetic(cfg);
  const fs::path dir = prepare_out(a.out);
  write_panel(panel.data, (dir / "panel.csv").string());
  write_distances(panel.data, (dir / "distances.csv").string());
  write_schema(panel.data.schema(), (dir / "schema.txt").string());
  write_truth(panel, dir.string());
  const auto& years = panel.data.years();
  std::ostringstream s;
  s << "countries = " << panel.data.countries() << '\n'
    << "years = " << years.size() << " (" << years.front() << '-' << years.back() << ")\n"
    << "rows = " << panel.data.rows() << '\n';
  write_text(dir / "summary.txt", s.str());
  std::cout << s.str();
  return kExitOk;
}

struct WeightsArgs {
  std::string data, schema, normalization = "row-stochastic", lag_mode = "origin";
  int permutations = 0;
  std::uint64_t seed = 1;
  std::string out = "out";
  unsigned threads = 1;
};

int cmd_weights(const WeightsArgs& a) {
  const PanelDataset ds = load_dataset(a.data, a.schema);
  const WeightMatrix w = inverse_distance_weights(ds, parse_normalization(a.normalization));
  const FlowWeight fw(w, parse_flow_lag_mode(a.lag_mode));
  const fs::path dir = prepare_out(a.out);
  write_weights_csv(w, (dir / "weights.csv").string());
  const Eigen::SparseMatrix<double> W = flow_weight_matrix(fw, ds.periods());
  const Eigen::VectorXd y = ds.flow().array() - ds.flow().mean();
  const MoranResult m = a.permutations > 0
                            ? morans_i_permutation(W, y, a.seed, a.permutations, a.threads)
                            : morans_i(W, y);
  std::ostringstream s;
  s << "countries = " << w.size() << '\n'
    << "normalization = " << to_string(w.normalization()) << '\n'
    << "lag = " << to_string(fw.mode()) << '\n'
    << "Moran's I of log flows = " << fixed(m.statistic, 6) << " (expected " << fixed(m.expected, 6)
    << ", z = " << fixed(m.z, 3) << ", p = " << fixed(m.p_value, 4) << ")\n";
  if (m.permutation_p)
    s << "permutation p = " << fixed(*m.permutation_p, 4) << " (" << a.permutations << " permutations)\n";
  write_text(dir / "weights_summary.txt", s.str());
  std::cout << s.str();
  return kExitOk;
}

struct EstimateArgs {
  std::string data, schema, regressors, pair_fe = "auto", variance = "conventional";
  bool with_dist = false, spatial = false, strict_instruments = false, diagnostics = true;
  std::string normalization = "row-stochastic", lag_mode = "origin";
  int instrument_order = 2, permutations = 0;
  std::uint64_t seed = 1;
  std::string out = "out";
  unsigned threads = 1;
};

int cmd_estimate(const EstimateArgs& a) {
  const PanelDataset ds = load_dataset(a.data, a.schema);
  ModelSpec spec;
  if (a.regressors.empty()) {
    for (const auto& c : ds.schema().covariates()) spec.regressors.push_back(c.name);
  } else {
    spec.regressors = split_list(a.regressors);
  }
  spec.regressors.erase(std::remove(spec.regressors.begin(), spec.regressors.end(), "dist"), spec.regressors.end());
  if (a.with_dist) spec.regressors.push_back("dist");
  spec.include_distance = a.with_dist;
  if (a.pair_fe == "auto") {
    spec.include_pair_fe = !a.with_dist;
  } else if (a.pair_fe == "true" || a.pair_fe == "false") {
    spec.include_pair_fe = a.pair_fe == "true";
  } else {
    throw Error(ErrorCode::InvalidConfig, "pair-fe must be auto, true or false");
  }
  spec.collinearity = CollinearityPolicy::Absorb;
  const WeightSpec ws{parse_normalization(a.normalization), parse_flow_lag_mode(a.lag_mode)};
  const VarianceType variance = parse_variance(a.variance);
  const FlowWeight fw(inverse_distance_weights(ds, ws.normalization), ws.mode);

  GravityFit fit;
  if (a.spatial) {
    spec.spatial = true;
    spec.weights = ws;
    SarOptions so;
    so.order = a.instrument_order;
    so.strict = a.strict_instruments;
    fit = fit_sar_ivgmm(ds, spec, fw, so);
  } else {
    fit = fit_fe(ds, spec, variance);
  }

  const fs::path dir = prepare_out(a.out);
  write_coefficients(fit, (dir / "coefficients.csv").string());
  write_residuals(fit, (dir / "residuals.csv").string());
  write_fit_summary(fit, (dir / "fit_summary.csv").string());
  if (spec.include_pair_fe) write_pair_effects(fit, (dir / "pair_effects.csv").string());

  std::ostringstream s;
  s << (a.spatial ? "SAR 2SLS" : "fixed effects") << ", " << (a.with_dist ? "with" : "without") << " distance\n";
  s << "rows = " << fit.N << ", R^2 = " << fixed(fit.r2, 4) << ", within R^2 = " << fixed(fit.r2_within, 4) << '\n';
  for (std::size_t k = 0; k < fit.names.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    s << fit.names[k] << ' ' << fixed(fit.beta[kk], 4) << " (" << fixed(fit.se[kk], 4) << ')'
      << significance_stars(fit.beta[kk], fit.se[kk]) << '\n';
  }
  if (fit.rho)
    s << "rho " << fixed(*fit.rho, 4) << " (" << fixed(*fit.rho_se, 4) << ')'
      << significance_stars(*fit.rho, *fit.rho_se) << '\n';
  if (!fit.absorbed.empty()) s << "absorbed: " << join(fit.absorbed, ", ") << '\n';
  for (const auto& w : fit.warnings) s << "warning: " << w << '\n';

  if (a.diagnostics) {
    std::ostringstream d;
    const Eigen::SparseMatrix<double> W = flow_weight_matrix(fw, ds.periods());
    const MoranResult m = a.permutations > 0
                              ? morans_i_permutation(W, fit.residuals, a.seed, a.permutations, a.threads)
                              : morans_i(W, fit.residuals);
    d << "Moran's I of residuals = " << fixed(m.statistic, 6) << " (expected " << fixed(m.expected, 6)
      << ", z = " << fixed(m.z, 3) << ", p = " << fixed(m.p_value, 4) << ")\n";
    if (m.permutation_p)
      d << "permutation p = " << fixed(*m.permutation_p, 4) << " (" << a.permutations << " permutations)\n";
    if (!a.spatial) {
      const LmTestResult lm = lm_spatial_lag_test(fit.residuals, fw, build_design(ds, spec));
      d << "LM spatial lag = " << fixed(lm.statistic, 4) << " (p = " << fixed(lm.p_value, 4) << ")\n";
    }
    if (fit.first_stage_f) d << "first-stage F = " << fixed(*fit.first_stage_f, 3) << '\n';
    write_text(dir / "diagnostics.txt", d.str());
    s << d.str();
  }
  std::cout << s.str();
  return kExitOk;
}

struct CompareArgs {
  std::string without, with, title;
  int decimals = 3;
  bool verbatim = false;
  std::string out = "out";
};

CoefficientColumn load_column(const std::string& path) {
  if (path.empty()) throw Error(ErrorCode::MissingFile, "coefficient table not given");
  fs::path p(path);
  if (fs::is_directory(p)) p /= "coefficients.csv";
  return read_coefficients(p.string());
}

int cmd_compare(const CompareArgs& a) {
  CoefficientColumn without = load_column(a.without), with = load_column(a.with);
  if (!a.verbatim) {
    if (a.decimals < 0) throw Error(ErrorCode::InvalidConfig, "decimals must be nonnegative");
    without = reformat(without, a.decimals);
    with = reformat(with, a.decimals);
  }
  const std::string table =
      render_table1(without, with, a.title.empty() ? std::nullopt : std::optional<std::string>(a.title));
  const fs::path dir = prepare_out(a.out);
  write_text(dir / "table1.md", table);
  std::cout << table;
  return kExitOk;
}

struct ValidateArgs {
  std::string data, schema, regressors, loading = "unit", mrt_mode = "pooled", reference = "percentile";
  double sigma = 4.0, alpha = 0.05, skip_fraction = 0.01;
  int B = 399;
  bool keep_draws = false;
  std::uint64_t seed = 1;
  std::string out = "out";
  unsigned threads = 1;
};

int cmd_validate(const ValidateArgs& a) {
  if (a.B < 1) throw Error(ErrorCode::InvalidB, "B must be at least 1, got " + std::to_string(a.B));
  const PanelDataset ds = load_dataset(a.data, a.schema);
  const ModelSpec spec = pair_effects_spec(ds, a.regressors);
  BootstrapOptions opt;
  opt.B = a.B;
  opt.seed = a.seed;
  opt.threads = a.threads;
  opt.components.sigma = a.sigma;
  opt.components.loading = parse_loading(a.loading);
  opt.mrt_mode = parse_mrt_mode(a.mrt_mode);
  opt.skip_fraction = a.skip_fraction;
  opt.keep_draws = a.keep_draws;
  const PValueReference reference = parse_reference(a.reference);
  if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw Error(ErrorCode::InvalidConfig, "alpha must lie in (0, 1)");

  const BootstrapDraws draws = regression_bootstrap(ds, spec, opt);
  const ValidationReport report = bootstrap_t_test(draws, a.alpha, reference);

  const fs::path dir = prepare_out(a.out);
  write_validation_text(report, (dir / "validation.txt").string());
  write_validation_csv(report, (dir / "validation.csv").string());
  const ResidualMap centred = structural_residuals(draws.base_fit.pair_effects, draws.base_terms);
  write_residual_map(centred, ds.index(), (dir / "structural_residuals.csv").string());
  write_empirical_mrt(draws.base_mrt, ds.index(), ds.years(), (dir / "mrt.csv").string());
  write_pair_effects(draws.base_fit, (dir / "pair_effects.csv").string());
  write_draws(draws, dir.string());
  write_validation_text(report, std::cout);
  return kExitOk;
}

struct MrtArgs {
  std::string data, schema, regressors, loading = "unit", mrt_mode = "pooled";
  double sigma = 4.0;
  std::uint64_t seed = 1;
  std::string out = "out";
  unsigned threads = 1;
};

int cmd_mrt_solve(const MrtArgs& a) {
  const PanelDataset ds = load_dataset(a.data, a.schema);
  const ModelSpec spec = pair_effects_spec(ds, a.regressors);
  const GravityFit fit = fit_fe(ds, spec);
  ComponentOptions co;
  co.sigma = a.sigma;
  co.loading = parse_loading(a.loading);
  const StructuralComponents comp = extract_components(fit, ds, co);
  const EmpiricalMrt mrt = solve_empirical_mrt(comp, parse_mrt_mode(a.mrt_mode), MrtOptions{}, a.threads);
  const fs::path dir = prepare_out(a.out);
  write_empirical_mrt(mrt, ds.index(), ds.years(), (dir / "mrt.csv").string());
  std::ostringstream s;
  s << "mode = " << a.mrt_mode << ", sigma = " << format_exact(a.sigma) << '\n'
    << "iterations = " << mrt.iterations << ", residual = " << fixed(mrt.residual, 14) << '\n';
  if (!comp.unidentified.empty()) s << "unidentified cost covariates: " << join(comp.unidentified, ", ") << '\n';
  write_text(dir / "mrt_summary.txt", s.str());
  std::cout << s.str();
  return kExitOk;
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidB:
    case ErrorCode::InvalidSpec:
    case ErrorCode::InvalidSchema:
      return kExitConfig;
    case ErrorCode::NonConvergence:
    case ErrorCode::MissingCovariate:
    case ErrorCode::SpecMismatch:
    case ErrorCode::NonFiniteComponent:
    case ErrorCode::IndexMismatch:
    case ErrorCode::DegenerateVariance:
    case ErrorCode::DegenerateSE:
      return kExitValidation;
    default:
      return kExitEstimation;
  }
}

/// Arguments with config-file values inserted ahead of the user's flags.
std::vector<std::string> expand_config(const std::vector<std::string>& args, const std::vector<Command*>& commands) {
  if (args.size() < 2) return args;
  const std::string& name = args[1];
  const auto it = std::find_if(commands.begin(), commands.end(), [&](const Command* c) { return c->name() == name; });
  if (it == commands.end()) return args;
  std::string path;
  for (std::size_t k = 2; k < args.size(); ++k) {
    if (args[k] == "--config" && k + 1 < args.size()) path = args[k + 1];
    if (args[k].rfind("--config=", 0) == 0) path = args[k].substr(9);
  }
  if (path.empty()) return args;
  const RunConfig cfg = RunConfig::load(path);
  if (!cfg.command.empty() && cfg.command != name)
    throw Error(ErrorCode::InvalidConfig, "config is for '" + cfg.command + "', not '" + name + "'");
  std::vector<std::string> out(args.begin(), args.begin() + 2);
  for (const auto& [k, v] : cfg.values) {
    if (!(*it)->has_key(k)) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + k + "' for " + name);
    // empty text is every string option's default
    if (!v.empty()) out.push_back("--" + k + "=" + v);
  }
  out.insert(out.end(), args.begin() + 2, args.end());
  return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Structural gravity panels: simulation, estimation and distance validation", "gravity"};
  app.require_subcommand(1);

  GenerateArgs g;
  Command gen(app, "generate", "Simulate a structural gravity panel with ground truth");
  gen.option("n", g.n, "Countries");
  gen.option("years", g.years, "Years");
  gen.option("first-year", g.first_year, "First year");
  gen.option("sigma", g.sigma, "Elasticity of substitution");
  gen.option("rho", g.rho, "Spatial lag of flows, |rho| < 1");
  gen.option("noise", g.noise, "Noise sd on log flows");
  gen.option("border", g.border, "Omitted log border cost on international pairs");
  gen.option("border-phase-down", g.border_phase_down, "Fraction of the border cost removed by the last year");
  gen.option("distance-share", g.distance_share, "Share of log trade-cost variance due to distance");
  gen.option("distance-elasticity", g.distance_elasticity, "Flow elasticity of distance (absolute)");
  gen.option("mrt-mode", g.mrt_mode, "pooled or per-year resistances");
  gen.option("normalization", g.normalization, "Spatial weight normalization");
  gen.option("lag-mode", g.lag_mode, "origin or destination flow lag");
  gen.common(g.seed, g.out, g.threads);

  WeightsArgs w;
  Command wts(app, "weights", "Inverse-distance weights and Moran's I of flows");
  wts.option("data", w.data, "Dataset directory or panel file");
  wts.option("schema", w.schema, "Schema file (default: schema.txt next to the data)");
  wts.option("normalization", w.normalization, "none, row-stochastic or spectral");
  wts.option("lag-mode", w.lag_mode, "origin or destination flow lag");
  wts.option("permutations", w.permutations, "Permutations for Moran's I (0: normal approximation only)");
  wts.common(w.seed, w.out, w.threads);

  EstimateArgs e;
  Command est(app, "estimate", "Fixed-effects or spatial 2SLS gravity regression");
  est.option("data", e.data, "Dataset directory or panel file");
  est.option("schema", e.schema, "Schema file (default: schema.txt next to the data)");
  est.option("regressors", e.regressors, "Comma-separated regressors (default: all covariates)");
  est.flag("with-dist", e.with_dist, "Include log distance", "no-dist");
  est.option("pair-fe", e.pair_fe, "auto (without distance only), true or false");
  est.flag("spatial", e.spatial, "Spatial lag model by 2SLS");
  est.option("variance", e.variance, "conventional or robust standard errors");
  est.option("normalization", e.normalization, "Spatial weight normalization");
  est.option("lag-mode", e.lag_mode, "origin or destination flow lag");
  est.option("instrument-order", e.instrument_order, "Spatial instruments [X, WX] (1) or [X, WX, W^2 X] (2)");
  est.flag("strict-instruments", e.strict_instruments, "Fail on weak instruments");
  est.flag("diagnostics", e.diagnostics, "Moran's I and LM diagnostics");
  est.option("permutations", e.permutations, "Permutations for Moran's I");
  est.common(e.seed, e.out, e.threads);

  CompareArgs c;
  std::uint64_t compare_seed = 1;
  unsigned compare_threads = 1;
  Command cmp(app, "compare", "Side-by-side coefficient report with and without distance");
  cmp.option("without", c.without, "Coefficients without distance (csv or estimate output directory)");
  cmp.option("with", c.with, "Coefficients with distance (csv or estimate output directory)");
  cmp.option("title", c.title, "Report title");
  cmp.option("decimals", c.decimals, "Decimals of estimates and standard errors");
  cmp.flag("verbatim", c.verbatim, "Keep numbers as written in the inputs");
  cmp.common(compare_seed, c.out, compare_threads);

  ValidateArgs v;
  Command val(app, "validate", "Bootstrap test that pair effects absorb distance and resistances");
  val.option("data", v.data, "Dataset directory or panel file");
  val.option("schema", v.schema, "Schema file (default: schema.txt next to the data)");
  val.option("regressors", v.regressors, "Comma-separated size regressors (default: size covariates)");
  val.option("sigma", v.sigma, "Elasticity of substitution for the resistances");
  val.option("B", v.B, "Bootstrap replications");
  val.option("alpha", v.alpha, "Test level");
  val.option("loading", v.loading, "Distance loading: unit or fitted");
  val.option("mrt-mode", v.mrt_mode, "pooled or per-year resistances");
  val.option("reference", v.reference, "p-value reference: percentile or student-t");
  val.option("skip-fraction", v.skip_fraction, "Fraction of replications allowed to fail");
  val.flag("keep-draws", v.keep_draws, "Write per-replication pair effects, resistances and residuals");
  val.common(v.seed, v.out, v.threads);

  MrtArgs m;
  Command mrt(app, "mrt-solve", "Empirical multilateral resistances from a pair-effects fit");
  mrt.option("data", m.data, "Dataset directory or panel file");
  mrt.option("schema", m.schema, "Schema file (default: schema.txt next to the data)");
  mrt.option("regressors", m.regressors, "Comma-separated size regressors (default: size covariates)");
  mrt.option("sigma", m.sigma, "Elasticity of substitution");
  mrt.option("loading", m.loading, "Distance loading: unit or fitted");
  mrt.option("mrt-mode", m.mrt_mode, "pooled or per-year resistances");
  mrt.common(m.seed, m.out, m.threads);

  const std::vector<Command*> commands{&gen, &wts, &est, &cmp, &val, &mrt};
  std::vector<std::string> args(argv, argv + argc);
  try {
    args = expand_config(args, commands);
  } catch (const Error& err) {
    std::cerr << "gravity: " << err.what() << '\n';
    return kExitConfig;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitConfig;
  }

  const Command* active = nullptr;
  for (const Command* cmd : commands)
    if (cmd->app()->parsed()) active = cmd;
  try {
    if (!active->write_config.empty()) active->effective().save(active->write_config);
    if (active == &gen) return cmd_generate(g);
    if (active == &wts) return cmd_weights(w);
    if (active == &est) return cmd_estimate(e);
    if (active == &cmp) return cmd_compare(c);
    if (active == &val) return cmd_validate(v);
    return cmd_mrt_solve(m);
  } catch (const Error& err) {
    std::cerr << "gravity " << active->name() << ": " << err.what() << '\n';
    return exit_code(err.code());
  } catch (const std::exception& ex) {
    std::cerr << "gravity " << active->name() << ": " << ex.what() << '\n';
    return kExitEstimation;
  }
}

}  // namespace gravity
