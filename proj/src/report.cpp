#include "gravity/report.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "gravity/error.hpp"
#include "gravity/util.hpp"

namespace gravity {

namespace {

bool absent(const CoefficientCell& c) { return c.estimate.empty() || c.estimate == "-"; }

const CoefficientCell* lookup(const CoefficientColumn& col, const std::string& name) {
  for (const auto& c : col)
    if (c.name == name) return &c;
  return nullptr;
}

std::string round_text(const std::string& text, int decimals) {
  if (text.empty() || text == "-") return text;
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) return text;
    return format_fixed(v, decimals);
  } catch (const std::exception&) {
    return text;
  }
}

}  // namespace

CoefficientColumn read_coefficients(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MissingColumn, "empty coefficient file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  auto col = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorCode::MissingColumn, name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t cn = col("name"), ce = col("estimate"), cs = col("se"), ct = col("stars");
  CoefficientColumn out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw Error(ErrorCode::MalformedRow, "line " + std::to_string(lineno) + ": expected " +
                                               std::to_string(header.size()) + " fields");
    out.push_back({f[cn], f[ce], f[cs], f[ct]});
  }
  return out;
}

CoefficientColumn read_coefficients(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path);
  return read_coefficients(in);
}

CoefficientColumn reformat(const CoefficientColumn& column, int decimals) {
  CoefficientColumn out = column;
  for (auto& c : out) {
    c.estimate = round_text(c.estimate, decimals);
    c.se = round_text(c.se, decimals);
  }
  return out;
}

std::pair<CoefficientColumn, CoefficientColumn> comparison_columns(const ComparisonTable& table, int decimals) {
  CoefficientColumn without, with;
  auto cell = [&](const std::string& name, const std::optional<double>& est, const std::optional<double>& se) {
    CoefficientCell c{name, "-", "", ""};
    if (est) {
      c.estimate = format_fixed(*est, decimals);
      if (se) {
        c.se = format_fixed(*se, decimals);
        c.stars = significance_stars(*est, *se);
      }
    }
    return c;
  };
  for (const auto& r : table.rows) {
    without.push_back(cell(r.name, r.without_estimate, r.without_se));
    with.push_back(cell(r.name, r.with_estimate, r.with_se));
  }
  return {without, with};
}

std::string format_cell(const CoefficientCell& c) {
  if (absent(c)) return "-";
  std::string s = c.estimate;
  if (!c.se.empty()) {
    s += " (" + c.se + ")" + c.stars;
  } else if (!c.stars.empty()) {
    s += " " + c.stars;
  }
  return s;
}

std::string render_table1(const CoefficientColumn& without, const CoefficientColumn& with,
                          const std::optional<std::string>& title) {
  // Ordered union: rows of the with-distance column, rows only in the
  // without-distance column inserted after their predecessor there.
  std::vector<std::string> order;
  for (const auto& c : with) order.push_back(c.name);
  for (std::size_t k = 0; k < without.size(); ++k) {
    const auto& nm = without[k].name;
    if (std::find(order.begin(), order.end(), nm) != order.end()) continue;
    auto pos = order.begin();
    if (k > 0) {
      const auto prev = std::find(order.begin(), order.end(), without[k - 1].name);
      pos = prev == order.end() ? order.end() : prev + 1;
    }
    order.insert(pos, nm);
  }
  std::ostringstream out;
  if (title) out << *title << "\n\n";
  out << "| VARIABLE | without distance (*) | with distance |\n";
  out << "|---|---|---|\n";
  for (const auto& nm : order) {
    const CoefficientCell* a = lookup(without, nm);
    const CoefficientCell* b = lookup(with, nm);
    out << "| " << nm << " | " << (a ? format_cell(*a) : "-") << " | " << (b ? format_cell(*b) : "-") << " |\n";
  }
  out << "\n* In brackets the standard error\n";
  return out.str();
}

}  // namespace gravity
