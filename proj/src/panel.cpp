#include "gravity/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "gravity/error.hpp"
#include "gravity/util.hpp"
#include "gravity/weights.hpp"

namespace gravity {

// ---------------------------------------------------------------- enums

std::string_view to_string(Normalization n) noexcept {
  switch (n) {
    case Normalization::None: return "none";
    case Normalization::RowStochastic: return "row";
    case Normalization::Spectral: return "spectral";
  }
  return "none";
}

std::string_view to_string(FlowLagMode m) noexcept {
  return m == FlowLagMode::Origin ? "origin" : "destination";
}

Normalization parse_normalization(std::string_view s) {
  if (s == "none") return Normalization::None;
  if (s == "row" || s == "row-stochastic") return Normalization::RowStochastic;
  if (s == "spectral") return Normalization::Spectral;
  throw Error(ErrorCode::InvalidConfig, "unknown normalization '" + std::string(s) + "'");
}

FlowLagMode parse_flow_lag_mode(std::string_view s) {
  if (s == "origin") return FlowLagMode::Origin;
  if (s == "destination" || s == "dest") return FlowLagMode::Destination;
  throw Error(ErrorCode::InvalidConfig, "unknown flow lag mode '" + std::string(s) + "'");
}

std::string_view to_string(CovariateRole role) noexcept {
  switch (role) {
    case CovariateRole::Origin: return "origin";
    case CovariateRole::Destination: return "dest";
    case CovariateRole::Dyadic: return "dyadic";
    case CovariateRole::DyadicTime: return "dyadic_time";
  }
  return "dyadic_time";
}

std::string_view to_string(ComponentTag tag) noexcept {
  switch (tag) {
    case ComponentTag::None: return "";
    case ComponentTag::Size: return "size";
    case ComponentTag::Cost: return "cost";
  }
  return "";
}

// ---------------------------------------------------------------- index/schema

CountryIndex::CountryIndex(std::vector<std::string> codes) : codes_(std::move(codes)) {
  if (codes_.size() < 2) throw Error(ErrorCode::InvalidSchema, "country index needs n >= 2");
  for (std::size_t k = 0; k < codes_.size(); ++k) {
    if (codes_[k].empty()) throw Error(ErrorCode::InvalidSchema, "empty country code");
    if (!lookup_.emplace(codes_[k], k).second)
      throw Error(ErrorCode::InvalidSchema, "duplicate country code " + codes_[k]);
  }
}

std::optional<std::size_t> CountryIndex::find(std::string_view code) const {
  auto it = lookup_.find(std::string(code));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

std::size_t CountryIndex::position(std::string_view code) const {
  if (auto p = find(code)) return *p;
  throw Error(ErrorCode::UnknownCountry, std::string(code));
}

namespace {

const std::set<std::string, std::less<>> kReserved = {"origin", "dest", "year", "flow", "dist"};

}  // namespace

Schema::Schema(std::vector<Covariate> covariates) : covariates_(std::move(covariates)) {
  std::set<std::string> seen;
  for (const auto& c : covariates_) {
    if (c.name.empty()) throw Error(ErrorCode::InvalidSchema, "empty covariate name");
    if (kReserved.count(c.name))
      throw Error(ErrorCode::InvalidSchema, "reserved column name " + c.name);
    if (!seen.insert(c.name).second)
      throw Error(ErrorCode::InvalidSchema, "duplicate covariate " + c.name);
    if (c.tag == ComponentTag::Size &&
        !(c.role == CovariateRole::Origin || c.role == CovariateRole::Destination))
      throw Error(ErrorCode::InvalidSchema, c.name + ": size tag needs origin or dest role");
    if (c.tag == ComponentTag::Cost && c.role != CovariateRole::Dyadic)
      throw Error(ErrorCode::InvalidSchema, c.name + ": cost tag needs dyadic role");
  }
}

std::optional<std::size_t> Schema::find(std::string_view name) const {
  for (std::size_t k = 0; k < covariates_.size(); ++k)
    if (covariates_[k].name == name) return k;
  return std::nullopt;
}

Schema parse_schema(std::string_view text) {
  std::vector<Covariate> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::InvalidSchema, "line " + std::to_string(lineno) + ": expected name = role");
    Covariate c;
    c.name = trim(std::string_view(line).substr(0, eq));
    std::istringstream rhs(line.substr(eq + 1));
    std::string role, tag, extra;
    rhs >> role >> tag >> extra;
    if (!extra.empty())
      throw Error(ErrorCode::InvalidSchema, "line " + std::to_string(lineno) + ": trailing tokens");
    if (role == "origin") c.role = CovariateRole::Origin;
    else if (role == "dest" || role == "destination") c.role = CovariateRole::Destination;
    else if (role == "dyadic") c.role = CovariateRole::Dyadic;
    else if (role == "dyadic_time") c.role = CovariateRole::DyadicTime;
    else throw Error(ErrorCode::InvalidSchema, "line " + std::to_string(lineno) + ": unknown role '" + role + "'");
    if (tag.empty()) c.tag = ComponentTag::None;
    else if (tag == "size") c.tag = ComponentTag::Size;
    else if (tag == "cost") c.tag = ComponentTag::Cost;
    else throw Error(ErrorCode::InvalidSchema, "line " + std::to_string(lineno) + ": unknown tag '" + tag + "'");
    out.push_back(std::move(c));
  }
  return Schema(std::move(out));
}

Schema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_schema(buf.str());
}

void write_schema(const Schema& schema, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::MissingFile, path);
  out << "# covariate = role [tag]\n";
  for (const auto& c : schema.covariates()) {
    out << c.name << " = " << to_string(c.role);
    if (c.tag != ComponentTag::None) out << ' ' << to_string(c.tag);
    out << '\n';
  }
}

// ---------------------------------------------------------------- dataset

PanelDataset::PanelDataset(CountryIndex index, std::vector<int> years, Schema schema,
                           Eigen::MatrixXd log_distance, Eigen::VectorXd flow,
                           Eigen::MatrixXd covariates, DiagonalRows diagonal)
    : index_(std::move(index)),
      years_(std::move(years)),
      schema_(std::move(schema)),
      log_distance_(std::move(log_distance)),
      flow_(std::move(flow)),
      covariates_(std::move(covariates)),
      diagonal_(std::move(diagonal)) {
  const std::size_t n = index_.size();
  if (n < 2) throw Error(ErrorCode::InvalidSchema, "dataset needs n >= 2");
  if (years_.empty()) throw Error(ErrorCode::UnbalancedPanel, "no years");
  if (!std::is_sorted(years_.begin(), years_.end()) ||
      std::adjacent_find(years_.begin(), years_.end()) != years_.end())
    throw Error(ErrorCode::InvalidSchema, "years must be strictly increasing");
  const std::size_t expected = n * (n - 1) * years_.size();
  if (static_cast<std::size_t>(flow_.size()) != expected)
    throw Error(ErrorCode::UnbalancedPanel,
                "expected " + std::to_string(expected) + " rows, got " + std::to_string(flow_.size()));
  if (covariates_.rows() != flow_.size() || static_cast<std::size_t>(covariates_.cols()) != schema_.size())
    throw Error(ErrorCode::DimensionMismatch, "covariate table does not match rows x schema");
  if (log_distance_.rows() != static_cast<Eigen::Index>(n) || log_distance_.cols() != static_cast<Eigen::Index>(n))
    throw Error(ErrorCode::DimensionMismatch, "distance matrix must be n x n");
  for (std::size_t i = 0; i < n; ++i) {
    if (log_distance_(i, i) != 0.0)
      throw Error(ErrorCode::NonPositiveDistance, "nonzero diagonal distance at " + index_.code(i));
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = log_distance_(i, j);
      if (!(d > 0.0) || !std::isfinite(d))
        throw Error(ErrorCode::NonPositiveDistance, index_.code(i) + "," + index_.code(j));
      if (std::fabs(d - log_distance_(j, i)) > 1e-12 * (1.0 + std::fabs(d)))
        throw Error(ErrorCode::AsymmetricDistance, index_.code(i) + "," + index_.code(j));
    }
  }
  if (!flow_.allFinite()) throw Error(ErrorCode::NonPositiveFlow, "non-finite log flow");
}

Eigen::VectorXd PanelDataset::covariate(std::string_view name) const {
  if (name == "dist") return distance_column();
  auto k = schema_.find(name);
  if (!k) throw Error(ErrorCode::UnknownRegressor, std::string(name));
  return covariates_.col(static_cast<Eigen::Index>(*k));
}

Eigen::VectorXd PanelDataset::distance_column() const {
  const PairLayout layout = this->layout();
  const std::size_t m = layout.count();
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows()));
  for (std::size_t r = 0; r < rows(); ++r) {
    const std::size_t p = r % m;
    out[r] = log_distance_(layout.origin(p), layout.dest(p));
  }
  return out;
}

PanelDataset PanelDataset::with_flow(Eigen::VectorXd flow) const {
  return PanelDataset(index_, years_, schema_, log_distance_, std::move(flow), covariates_, diagonal_);
}

std::uint64_t PanelDataset::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t k = 0; k < bytes; ++k) {
      h ^= p[k];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& c : index_.codes()) mix(c.data(), c.size());
  mix(years_.data(), years_.size() * sizeof(int));
  mix(flow_.data(), static_cast<std::size_t>(flow_.size()) * sizeof(double));
  mix(log_distance_.data(), static_cast<std::size_t>(log_distance_.size()) * sizeof(double));
  return h;
}

// ---------------------------------------------------------------- CSV I/O

namespace {

double parse_real(const std::string& s, int lineno, const std::string& column) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto res = std::from_chars(b, e, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != e)
    throw Error(ErrorCode::MalformedRow,
                "line " + std::to_string(lineno) + ": column " + column + " value '" + s + "'");
  return v;
}

int parse_year(const std::string& s, int lineno) {
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error(ErrorCode::MalformedRow, "line " + std::to_string(lineno) + ": year '" + s + "'");
  return v;
}

struct RawRow {
  std::string origin, dest;
  int year = 0;
  double flow = 0.0;
  std::vector<double> covariates;
  std::optional<double> dist;
  int line = 0;
};

std::map<std::pair<std::string, std::string>, double> read_distance_file(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MissingColumn, "distance file is empty");
  const auto header = split_csv_line(line);
  auto col = [&](const char* name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorCode::MissingColumn, std::string(name) + " (distance file)");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t co = col("origin"), cd = col("dest"), ck = col("dist_km");
  std::map<std::pair<std::string, std::string>, double> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw Error(ErrorCode::MalformedRow, "distance file line " + std::to_string(lineno));
    out[{f[co], f[cd]}] = parse_real(f[ck], lineno, "dist_km");
  }
  return out;
}

}  // namespace

PanelDataset read_panel(std::istream& in, const Schema& schema, const LoadOptions& options,
                        std::istream* distances) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MissingColumn, "empty panel file (no header)");
  const auto header = split_csv_line(line);
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (!pos.emplace(header[k], k).second)
      throw Error(ErrorCode::UnexpectedColumn, "duplicate column " + header[k]);
  }
  for (const char* name : {"origin", "dest", "year", "flow"})
    if (!pos.count(name)) throw Error(ErrorCode::MissingColumn, name);
  for (const auto& c : schema.covariates())
    if (!pos.count(c.name)) throw Error(ErrorCode::MissingColumn, c.name);
  const bool has_dist = pos.count("dist") > 0;
  for (const auto& h : header)
    if (!kReserved.count(h) && !schema.find(h)) throw Error(ErrorCode::UnexpectedColumn, h);
  if (!has_dist && !distances) throw Error(ErrorCode::MissingColumn, "dist (and no distance file)");

  const std::size_t k_cov = schema.size();
  std::vector<std::size_t> cov_col(k_cov);
  for (std::size_t k = 0; k < k_cov; ++k) cov_col[k] = pos.at(schema.at(k).name);

  std::vector<RawRow> raw;
  std::set<std::string> codes;
  std::set<int> years;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw Error(ErrorCode::MalformedRow, "line " + std::to_string(lineno) + ": expected " +
                                               std::to_string(header.size()) + " fields");
    RawRow r;
    r.line = lineno;
    r.origin = f[pos.at("origin")];
    r.dest = f[pos.at("dest")];
    if (r.origin.empty() || r.dest.empty())
      throw Error(ErrorCode::MalformedRow, "line " + std::to_string(lineno) + ": empty country code");
    r.year = parse_year(f[pos.at("year")], lineno);
    r.flow = parse_real(f[pos.at("flow")], lineno, "flow");
    r.covariates.resize(k_cov);
    for (std::size_t k = 0; k < k_cov; ++k)
      r.covariates[k] = parse_real(f[cov_col[k]], lineno, schema.at(k).name);
    if (has_dist) r.dist = parse_real(f[pos.at("dist")], lineno, "dist");
    codes.insert(r.origin);
    codes.insert(r.dest);
    years.insert(r.year);
    raw.push_back(std::move(r));
  }

  CountryIndex index(std::vector<std::string>(codes.begin(), codes.end()));
  std::vector<int> year_list(years.begin(), years.end());
  const std::size_t n = index.size();
  const std::size_t T = year_list.size();
  const PairLayout layout{n};
  const std::size_t m = layout.count();
  auto year_pos = [&](int y) {
    return static_cast<std::size_t>(std::lower_bound(year_list.begin(), year_list.end(), y) - year_list.begin());
  };

  const std::size_t N = m * T;
  Eigen::VectorXd flow(static_cast<Eigen::Index>(N));
  Eigen::MatrixXd cov(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(k_cov));
  std::vector<char> seen(N, 0);
  std::vector<char> diag_seen(n * T, 0);
  DiagonalRows diag;
  Eigen::MatrixXd logd = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n),
                                                   std::numeric_limits<double>::quiet_NaN());
  logd.diagonal().setZero();

  auto to_log = [&](double v, int line, const char* what, ErrorCode err) {
    if (!options.levels) return v;
    if (!(v > 0.0))
      throw Error(err, std::string(what) + " must be positive in levels mode (line " + std::to_string(line) + ")");
    return std::log(v);
  };

  for (const auto& r : raw) {
    const std::size_t i = index.position(r.origin);
    const std::size_t j = index.position(r.dest);
    const std::size_t t = year_pos(r.year);
    if (i == j) {
      if (options.diagonal == DiagonalPolicy::Reject)
        throw Error(ErrorCode::MalformedRow, "self-flow row " + r.origin + "," + r.dest + "," +
                                                 std::to_string(r.year) + " (diagonal rejected)");
      if (diag_seen[i * T + t]++)
        throw Error(ErrorCode::DuplicateObservation, r.origin + "," + r.dest + "," + std::to_string(r.year));
      diag.country.push_back(i);
      diag.year.push_back(t);
      diag.flow.push_back(r.flow);
      diag.covariates.push_back(r.covariates);
      continue;
    }
    const std::size_t row = t * m + layout.pair(i, j);
    if (seen[row]++)
      throw Error(ErrorCode::DuplicateObservation, r.origin + "," + r.dest + "," + std::to_string(r.year));
    flow[static_cast<Eigen::Index>(row)] = to_log(r.flow, r.line, "flow", ErrorCode::NonPositiveFlow);
    for (std::size_t k = 0; k < k_cov; ++k) cov(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(k)) = r.covariates[k];
    if (r.dist) {
      const double d = to_log(*r.dist, r.line, "dist", ErrorCode::NonPositiveDistance);
      double& slot = logd(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (std::isnan(slot)) slot = d;
      else if (slot != d)
        throw Error(ErrorCode::RoleViolation, "dist varies over time for " + r.origin + "," + r.dest);
    }
  }

  std::vector<std::string> missing;
  std::size_t missing_count = 0;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j || seen[t * m + layout.pair(i, j)]) continue;
        ++missing_count;
        if (missing.size() < 20)
          missing.push_back("(" + index.code(i) + ", " + index.code(j) + ", " + std::to_string(year_list[t]) + ")");
      }
  if (missing_count) {
    std::string msg = std::to_string(missing_count) + " missing observation(s):";
    for (const auto& s : missing) msg += " " + s;
    if (missing_count > missing.size()) msg += " ...";
    throw Error(ErrorCode::UnbalancedPanel, msg);
  }

  if (distances) {
    // companion file is authoritative; one direction per pair suffices
    logd.setConstant(std::numeric_limits<double>::quiet_NaN());
    logd.diagonal().setZero();
    const auto table = read_distance_file(*distances);
    for (const auto& [key, km] : table) {
      const auto i = index.find(key.first);
      const auto j = index.find(key.second);
      if (!i || !j || *i == *j) continue;
      if (!(km > 0.0)) throw Error(ErrorCode::NonPositiveDistance, key.first + "," + key.second);
      auto rev = table.find({key.second, key.first});
      if (rev != table.end() && rev->second != km)
        throw Error(ErrorCode::AsymmetricDistance, key.first + "," + key.second);
      const double d = std::log(km);
      logd(static_cast<Eigen::Index>(*i), static_cast<Eigen::Index>(*j)) = d;
      logd(static_cast<Eigen::Index>(*j), static_cast<Eigen::Index>(*i)) = d;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && std::isnan(logd(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))))
        throw Error(ErrorCode::MissingColumn, "no distance for " + index.code(i) + "," + index.code(j));

  // covariate roles
  for (std::size_t k = 0; k < k_cov; ++k) {
    const auto role = schema.at(k).role;
    if (role == CovariateRole::DyadicTime) continue;
    const auto kk = static_cast<Eigen::Index>(k);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          if (i == j) continue;
          const double v = cov(static_cast<Eigen::Index>(t * m + layout.pair(i, j)), kk);
          std::size_t ref;
          if (role == CovariateRole::Origin) ref = t * m + layout.pair(i, i == 0 ? 1 : 0);
          else if (role == CovariateRole::Destination) ref = t * m + layout.pair(j == 0 ? 1 : 0, j);
          else ref = layout.pair(i, j);
          if (cov(static_cast<Eigen::Index>(ref), kk) != v)
            throw Error(ErrorCode::RoleViolation,
                        schema.at(k).name + " is not " + std::string(to_string(role)) + "-level at (" +
                            index.code(i) + ", " + index.code(j) + ", " + std::to_string(year_list[t]) + ")");
        }
  }

  return PanelDataset(std::move(index), std::move(year_list), schema, std::move(logd), std::move(flow),
                      std::move(cov), std::move(diag));
}

PanelDataset load_panel(const std::string& path, const Schema& schema, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path);
  if (!options.distance_path.empty()) {
    std::ifstream d(options.distance_path);
    if (!d) throw Error(ErrorCode::MissingFile, options.distance_path);
    return read_panel(in, schema, options, &d);
  }
  return read_panel(in, schema, options, nullptr);
}

void write_panel(const PanelDataset& ds, std::ostream& out, bool with_dist_column) {
  const auto& schema = ds.schema();
  out << "origin,dest,year,flow";
  for (const auto& c : schema.covariates()) out << ',' << c.name;
  if (with_dist_column) out << ",dist";
  out << '\n';
  const std::size_t n = ds.countries();
  const auto& diag = ds.diagonal();
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> diag_at;
  for (std::size_t k = 0; k < diag.size(); ++k) diag_at[{diag.year[k], diag.country[k]}] = k;
  for (std::size_t t = 0; t < ds.periods(); ++t)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const auto& oi = ds.index().code(i);
        const auto& dj = ds.index().code(j);
        if (i == j) {
          auto it = diag_at.find({t, i});
          if (it == diag_at.end()) continue;
          const std::size_t k = it->second;
          out << oi << ',' << dj << ',' << ds.years()[t] << ',' << format_exact(diag.flow[k]);
          for (double v : diag.covariates[k]) out << ',' << format_exact(v);
          if (with_dist_column) out << ",0";
          out << '\n';
          continue;
        }
        const auto r = static_cast<Eigen::Index>(ds.row(t, i, j));
        out << oi << ',' << dj << ',' << ds.years()[t] << ',' << format_exact(ds.flow()[r]);
        for (Eigen::Index k = 0; k < ds.covariates().cols(); ++k) out << ',' << format_exact(ds.covariates()(r, k));
        if (with_dist_column)
          out << ',' << format_exact(ds.log_distance()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        out << '\n';
      }
}

void write_panel(const PanelDataset& ds, const std::string& path, bool with_dist_column) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::MissingFile, path);
  write_panel(ds, out, with_dist_column);
}

void write_distances(const PanelDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::MissingFile, path);
  out << "origin,dest,dist_km\n";
  const std::size_t n = ds.countries();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      out << ds.index().code(i) << ',' << ds.index().code(j) << ','
          << format_exact(std::exp(ds.log_distance()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))))
          << '\n';
}

// ---------------------------------------------------------------- spec/design

void ModelSpec::validate() const {
  const bool has_dist = std::find(regressors.begin(), regressors.end(), "dist") != regressors.end();
  if (include_distance && !has_dist)
    throw Error(ErrorCode::InvalidSpec, "include_distance requires \"dist\" among regressors");
  if (!include_distance && has_dist)
    throw Error(ErrorCode::InvalidSpec, "\"dist\" listed but include_distance is off");
  if (spatial && !weights) throw Error(ErrorCode::InvalidSpec, "spatial model needs a weight spec");
  if (!lagged_regressors.empty() && !weights)
    throw Error(ErrorCode::InvalidSpec, "lagged regressors need a weight spec");
  if (symmetric_pair_fe && !include_pair_fe)
    throw Error(ErrorCode::InvalidSpec, "symmetric pair effects need pair effects");
  std::set<std::string> seen;
  for (const auto& r : regressors)
    if (!seen.insert(r).second) throw Error(ErrorCode::InvalidSpec, "duplicate regressor " + r);
}

std::size_t DesignBundle::pair_group(std::size_t r) const noexcept {
  const std::size_t p = pair_of_row(r);
  if (!symmetric_pair) return p;
  const PairLayout layout{n};
  const std::size_t i = layout.origin(p), j = layout.dest(p);
  const std::size_t a = std::min(i, j), b = std::max(i, j);
  // unordered pair id over a < b
  return a * n - a * (a + 1) / 2 + (b - a - 1);
}

std::size_t DesignBundle::pair_group_count() const noexcept {
  return symmetric_pair ? pairs() / 2 : pairs();
}

Eigen::MatrixXd DesignBundle::within(const Eigen::MatrixXd& v) const {
  const std::size_t N = rows();
  const std::size_t G = pair_group_count();
  const std::size_t T = periods;
  Eigen::MatrixXd out = v;
  const Eigen::Index K = v.cols();
  if (!pair_fe && !time_fe) {
    out.rowwise() -= v.colwise().mean();
    return out;
  }
  Eigen::RowVectorXd grand = v.colwise().mean();
  Eigen::MatrixXd time_mean = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(T), K);
  Eigen::MatrixXd group_mean = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(G), K);
  std::vector<double> group_count(G, 0.0);
  for (std::size_t r = 0; r < N; ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    time_mean.row(static_cast<Eigen::Index>(time_of_row(r))) += v.row(ri);
    group_mean.row(static_cast<Eigen::Index>(pair_group(r))) += v.row(ri);
    group_count[pair_group(r)] += 1.0;
  }
  time_mean /= static_cast<double>(pairs());
  for (std::size_t g = 0; g < G; ++g) group_mean.row(static_cast<Eigen::Index>(g)) /= group_count[g];
  for (std::size_t r = 0; r < N; ++r) {
    auto row = out.row(static_cast<Eigen::Index>(r));
    if (pair_fe) row -= group_mean.row(static_cast<Eigen::Index>(pair_group(r)));
    if (time_fe) row -= time_mean.row(static_cast<Eigen::Index>(time_of_row(r)));
    if (pair_fe && time_fe) row += grand;
  }
  return out;
}

Eigen::VectorXd DesignBundle::within(const Eigen::VectorXd& v) const {
  Eigen::MatrixXd m = v;
  return within(m).col(0);
}

std::size_t DesignBundle::absorbed_dof() const noexcept {
  if (pair_fe && time_fe) return pair_group_count() + periods - 1;
  if (pair_fe) return pair_group_count();
  if (time_fe) return periods;
  return 1;
}

DesignBundle build_design(const PanelDataset& ds, const ModelSpec& spec, const FlowWeight* weights) {
  spec.validate();
  DesignBundle d;
  d.n = ds.countries();
  d.periods = ds.periods();
  d.pair_fe = spec.include_pair_fe;
  d.time_fe = spec.include_time_fe;
  d.symmetric_pair = spec.symmetric_pair_fe;
  d.y = ds.flow();

  std::vector<Eigen::VectorXd> cols;
  for (const auto& name : spec.regressors) {
    bool time_invariant_dyadic = false;
    if (name == "dist") {
      time_invariant_dyadic = true;
    } else {
      auto k = ds.schema().find(name);
      if (!k) throw Error(ErrorCode::UnknownRegressor, name);
      time_invariant_dyadic = ds.schema().at(*k).role == CovariateRole::Dyadic;
    }
    if (spec.include_pair_fe && time_invariant_dyadic) {
      if (spec.collinearity == CollinearityPolicy::Error)
        throw Error(ErrorCode::CollinearDummySpec,
                    name + " is constant within pair and collinear with pair fixed effects");
      d.absorbed.push_back(name);
      continue;
    }
    d.names.push_back(name);
    cols.push_back(ds.covariate(name));
  }
  for (const auto& name : spec.lagged_regressors) {
    if (!weights) throw Error(ErrorCode::InvalidSpec, "lagged regressor " + name + " needs flow weights");
    if (!ds.schema().find(name) && name != "dist") throw Error(ErrorCode::UnknownRegressor, name);
    d.names.push_back("W_" + name);
    cols.push_back(flow_lag(*weights, ds.covariate(name)));
  }
  d.X.resize(static_cast<Eigen::Index>(ds.rows()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) d.X.col(static_cast<Eigen::Index>(k)) = cols[k];
  return d;
}

}  // namespace gravity
