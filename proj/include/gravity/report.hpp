// report.hpp
// Side-by-side coefficient report of fits with and without distance.
#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gravity/estimator.hpp"

namespace gravity {

/// One coefficient as display text; an empty or "-" estimate marks absence.
struct CoefficientCell {
  std::string name;
  std::string estimate;
  std::string se;
  std::string stars;
};

using CoefficientColumn = std::vector<CoefficientCell>;

/// Reads `name,estimate,se,stars`. Throws MissingFile, MissingColumn, MalformedRow.
CoefficientColumn read_coefficients(std::istream& in);
CoefficientColumn read_coefficients(const std::string& path);

/// Rounds numeric estimate and se text to `decimals` places; stars are kept.
CoefficientColumn reformat(const CoefficientColumn& column, int decimals);

/// Display columns of a comparison, numbers rounded to `decimals` places.
std::pair<CoefficientColumn, CoefficientColumn> comparison_columns(const ComparisonTable& table, int decimals = 3);

/// "est (se)stars", "est stars" without se, "-" when absent.
std::string format_cell(const CoefficientCell& cell);

/// Markdown table with rows in ordered union of both columns, then the
/// "* In brackets the standard error" footer.
std::string render_table1(const CoefficientColumn& without_distance, const CoefficientColumn& with_distance,
                          const std::optional<std::string>& title = std::nullopt);

}  // namespace gravity
