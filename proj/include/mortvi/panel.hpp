#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mortvi/error.hpp"
#include "mortvi/text.hpp"

namespace mortvi {

// Dense row-major matrix; rows are ages, columns are years everywhere below.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}

  double& operator()(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }

  double sum() const {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc;
  }
};

enum class SexColumn { female, male, total };

inline SexColumn parse_sex_column(std::string_view s) {
  if (s == "female") return SexColumn::female;
  if (s == "male") return SexColumn::male;
  if (s == "total") return SexColumn::total;
  throw ConfigError("unknown sex column: " + std::string(s));
}

inline const char* sex_column_name(SexColumn s) {
  switch (s) {
    case SexColumn::female: return "female";
    case SexColumn::male: return "male";
    case SexColumn::total: return "total";
  }
  return "?";
}

// One (year, age) cell of a raw HMD column; "." cells carry missing = true.
struct HmdRecord {
  int year = 0;
  int age = 0;
  double value = 0.0;
  bool missing = false;

  friend bool operator==(const HmdRecord&, const HmdRecord&) = default;
};

struct HmdTable {
  std::vector<HmdRecord> records;

  friend bool operator==(const HmdTable&, const HmdTable&) = default;
};

namespace detail {

inline bool parse_age_token(std::string_view tok, int& age) {
  if (!tok.empty() && tok.back() == '+') tok.remove_suffix(1);  // open age group, e.g. 110+
  if (!try_parse_int(tok, age)) return false;
  return age >= 0 && age <= 200;
}

inline bool parse_value_token(std::string_view tok, double& value, bool& missing) {
  if (tok == ".") {
    missing = true;
    value = 0.0;
    return true;
  }
  missing = false;
  return try_parse_double(tok, value);
}

}  // namespace detail

// HMD 1x1 layout: header lines, then rows of Year Age Female Male Total.
// Age is an integer or "110+"; "." marks a missing value. Header lines are
// skipped until the first row whose leading token parses as a year.
inline HmdTable parse_hmd(std::istream& in, SexColumn column) {
  HmdTable table;
  std::set<std::pair<int, int>> seen;
  std::string line;
  long line_no = 0;
  bool in_data = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_whitespace(line);
    if (tokens.empty()) continue;

    int year = 0;
    const bool year_ok = try_parse_int(tokens[0], year) && year >= 1000 && year <= 2999;
    if (!in_data) {
      if (!year_ok) continue;  // header region
      in_data = true;
    }
    if (!year_ok) throw ParseError("expected a year, got '" + std::string(tokens[0]) + "'", line_no);
    if (tokens.size() != 5)
      throw ParseError("expected 5 columns (Year Age Female Male Total), got " +
                           std::to_string(tokens.size()),
                       line_no);

    int age = 0;
    if (!detail::parse_age_token(tokens[1], age))
      throw ParseError("unparsable age '" + std::string(tokens[1]) + "'", line_no);

    double values[3];
    bool missing[3];
    for (int c = 0; c < 3; ++c)
      if (!detail::parse_value_token(tokens[2 + c], values[c], missing[c]))
        throw ParseError("unparsable number '" + std::string(tokens[2 + c]) + "'", line_no);

    if (!seen.insert({year, age}).second)
      throw DataError("duplicate (year, age) = (" + std::to_string(year) + ", " +
                      std::to_string(age) + ")");

    const int c = static_cast<int>(column);
    table.records.push_back({year, age, values[c], missing[c]});
  }
  if (!in_data) throw ParseError("no data rows found");
  return table;
}

inline HmdTable parse_hmd_file(const std::string& path, SexColumn column) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return parse_hmd(in, column);
}

// Writes the parsed column back in HMD 1x1 layout (same value in all three
// sex columns) so that parse(serialize(t)) == t for any column choice.
inline void serialize_hmd(std::ostream& out, const HmdTable& table,
                          const std::string& title = "Serialized table") {
  out << title << "\n\n";
  out << "  Year          Age             Female            Male           Total\n";
  for (const auto& r : table.records) {
    const std::string v = r.missing ? "." : format_double(r.value);
    out << "  " << r.year << "    " << r.age << "    " << v << "    " << v << "    " << v << "\n";
  }
}

// Aligned deaths/exposures arrays for ages 0..age_cap and a year range.
struct MortalityPanel {
  int first_year = 0;
  Matrix deaths;
  Matrix exposures;

  int n_ages() const { return deaths.rows; }
  int n_years() const { return deaths.cols; }
  int last_year() const { return first_year + n_years() - 1; }

  // Cells with zero exposure carry no Poisson term anywhere.
  bool included(int age, int t) const { return exposures(age, t) > 0.0; }
};

struct WindowSpec {
  int first_train_year = 0;
  int train_len = 60;
  int eval_len = 10;
};

namespace detail {

struct CellLookup {
  std::map<std::pair<int, int>, const HmdRecord*> by_key;
  int max_age = 0;

  explicit CellLookup(const HmdTable& t) {
    for (const auto& r : t.records) {
      by_key[{r.year, r.age}] = &r;
      max_age = std::max(max_age, r.age);
    }
  }
  const HmdRecord* find(int year, int age) const {
    auto it = by_key.find({year, age});
    return it == by_key.end() ? nullptr : it->second;
  }
};

}  // namespace detail

// Assembles a panel; ages above age_cap are summed into the cap row. Missing
// ('.') exposure with zero/missing deaths becomes an excluded exposure-0 cell;
// missing exposure with positive deaths (or the reverse) is a hard error.
inline MortalityPanel build_panel(const HmdTable& deaths_table, const HmdTable& exposures_table,
                                  int age_cap, int first_year, int last_year) {
  if (age_cap < 0) throw ConfigError("age_cap must be non-negative");
  if (last_year < first_year) throw ConfigError("empty year range");

  const detail::CellLookup deaths_lu(deaths_table);
  const detail::CellLookup expo_lu(exposures_table);
  const int n_years = last_year - first_year + 1;
  const int n_ages = age_cap + 1;
  const int max_age = std::max(deaths_lu.max_age, expo_lu.max_age);

  MortalityPanel panel;
  panel.first_year = first_year;
  panel.deaths = Matrix(n_ages, n_years);
  panel.exposures = Matrix(n_ages, n_years);

  std::vector<std::pair<int, int>> gaps;
  for (int t = 0; t < n_years; ++t) {
    const int year = first_year + t;
    for (int a = 0; a <= std::max(age_cap, max_age); ++a) {
      const HmdRecord* d = deaths_lu.find(year, a);
      const HmdRecord* e = expo_lu.find(year, a);
      if (d == nullptr || e == nullptr) {
        if (a <= age_cap) gaps.push_back({year, a});
        continue;  // ages above the cap may simply end earlier
      }
      const double dv = d->missing ? 0.0 : d->value;
      const double ev = e->missing ? 0.0 : e->value;
      if (dv < 0.0 || ev < 0.0)
        throw DataError("negative value at (year, age) = (" + std::to_string(year) + ", " +
                        std::to_string(a) + ")");
      if (e->missing && dv > 0.0)
        throw DataError("missing exposure with nonzero deaths at (year, age) = (" +
                        std::to_string(year) + ", " + std::to_string(a) + ")");
      if (d->missing && ev > 0.0)
        throw DataError("missing deaths with nonzero exposure at (year, age) = (" +
                        std::to_string(year) + ", " + std::to_string(a) + ")");
      const int row = std::min(a, age_cap);
      panel.deaths(row, t) += dv;
      panel.exposures(row, t) += ev;
    }
  }

  if (!gaps.empty()) {
    std::string msg = "coverage gap: missing (year, age) pairs:";
    const std::size_t show = std::min<std::size_t>(gaps.size(), 12);
    for (std::size_t i = 0; i < show; ++i)
      msg += " (" + std::to_string(gaps[i].first) + "," + std::to_string(gaps[i].second) + ")";
    if (gaps.size() > show) msg += " ... (" + std::to_string(gaps.size()) + " total)";
    throw DataError(msg);
  }

  for (int t = 0; t < n_years; ++t)
    for (int a = 0; a < n_ages; ++a)
      if (panel.exposures(a, t) == 0.0 && panel.deaths(a, t) > 0.0)
        throw DataError("zero exposure with nonzero deaths at (year, age) = (" +
                        std::to_string(first_year + t) + ", " + std::to_string(a) + ")");

  return panel;
}

inline MortalityPanel slice_years(const MortalityPanel& panel, int first_year, int n_years) {
  const int offset = first_year - panel.first_year;
  if (offset < 0 || offset + n_years > panel.n_years())
    throw RangeError("year slice [" + std::to_string(first_year) + ", " +
                     std::to_string(first_year + n_years - 1) + "] outside panel span [" +
                     std::to_string(panel.first_year) + ", " + std::to_string(panel.last_year()) +
                     "]");
  MortalityPanel out;
  out.first_year = first_year;
  out.deaths = Matrix(panel.n_ages(), n_years);
  out.exposures = Matrix(panel.n_ages(), n_years);
  for (int a = 0; a < panel.n_ages(); ++a)
    for (int t = 0; t < n_years; ++t) {
      out.deaths(a, t) = panel.deaths(a, offset + t);
      out.exposures(a, t) = panel.exposures(a, offset + t);
    }
  return out;
}

// Train window [first_train_year, +train_len) and the eval_len years after it.
inline std::pair<MortalityPanel, MortalityPanel> cut_window(const MortalityPanel& panel,
                                                            const WindowSpec& spec) {
  if (spec.train_len < 2) throw ConfigError("train_len must be >= 2");
  if (spec.eval_len < 1) throw ConfigError("eval_len must be >= 1");
  MortalityPanel train = slice_years(panel, spec.first_train_year, spec.train_len);
  MortalityPanel eval = slice_years(panel, spec.first_train_year + spec.train_len, spec.eval_len);
  return {std::move(train), std::move(eval)};
}

// Canonical interchange format: CSV with header year,age,deaths,exposure.
inline void write_panel_csv(std::ostream& out, const MortalityPanel& panel) {
  out << "year,age,deaths,exposure\n";
  for (int t = 0; t < panel.n_years(); ++t)
    for (int a = 0; a < panel.n_ages(); ++a)
      out << panel.first_year + t << ',' << a << ',' << format_double(panel.deaths(a, t)) << ','
          << format_double(panel.exposures(a, t)) << '\n';
}

inline MortalityPanel read_panel_csv(std::istream& in) {
  std::string line;
  long line_no = 0;
  if (!std::getline(in, line)) throw ParseError("empty panel file");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "year,age,deaths,exposure")
    throw ParseError("expected header 'year,age,deaths,exposure'", line_no);

  std::map<std::pair<int, int>, std::pair<double, double>> cells;
  int min_year = 0, max_year = 0, max_age = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_char(line, ',');
    if (f.size() != 4) throw ParseError("expected 4 fields", line_no);
    int year, age;
    double d, e;
    if (!try_parse_int(f[0], year) || !try_parse_int(f[1], age) || !try_parse_double(f[2], d) ||
        !try_parse_double(f[3], e))
      throw ParseError("unparsable field", line_no);
    if (!cells.emplace(std::pair{year, age}, std::pair{d, e}).second)
      throw DataError("duplicate (year, age) = (" + std::to_string(year) + ", " +
                      std::to_string(age) + ")");
    if (cells.size() == 1) min_year = max_year = year;
    min_year = std::min(min_year, year);
    max_year = std::max(max_year, year);
    max_age = std::max(max_age, age);
  }
  if (cells.empty()) throw ParseError("no data rows found");

  MortalityPanel panel;
  panel.first_year = min_year;
  panel.deaths = Matrix(max_age + 1, max_year - min_year + 1);
  panel.exposures = Matrix(max_age + 1, max_year - min_year + 1);
  if (cells.size() != static_cast<std::size_t>(max_age + 1) * (max_year - min_year + 1))
    throw DataError("panel grid is not complete");
  for (const auto& [key, val] : cells) {
    panel.deaths(key.second, key.first - min_year) = val.first;
    panel.exposures(key.second, key.first - min_year) = val.second;
  }
  return panel;
}

inline MortalityPanel read_panel_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_panel_csv(in);
}

}  // namespace mortvi
