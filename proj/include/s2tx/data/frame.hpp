#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "s2tx/core/tensor.hpp"

namespace s2tx {

/// A loaded multivariate series. values is (T_total, D), one column per variate.
struct SeriesFrame {
  std::string name;
  std::vector<std::int64_t> timestamps;  // seconds since epoch
  Matrix<double> values;
  std::vector<std::string> names;
  std::map<std::string, std::string> metadata;

  Index steps() const { return values.rows(); }
  Index variates() const { return values.cols(); }
};

struct DatasetShape {
  Index variates;
  Index steps;
};

inline std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

/// Canonical dataset key for a name or file stem ("ETTh1", "exchange_rate", ...).
inline std::string canonical_dataset(std::string_view name) {
  std::string s = lowercase(std::string(name));
  if (s == "exchange_rate") return "exchange";
  if (s == "electricity") return "ecl";
  return s;
}

inline std::optional<DatasetShape> known_dataset(std::string_view name) {
  static const std::map<std::string, DatasetShape> table{
      {"etth1", {7, 17420}}, {"etth2", {7, 17420}}, {"ettm1", {7, 69680}}, {"ettm2", {7, 69680}},
      {"exchange", {8, 7588}}, {"weather", {21, 52696}}, {"ecl", {321, 26304}},
  };
  auto it = table.find(canonical_dataset(name));
  if (it == table.end()) return std::nullopt;
  return it->second;
}

/// File name of a known dataset inside a data directory.
inline std::string dataset_filename(std::string_view name) {
  const std::string key = canonical_dataset(name);
  if (key == "etth1") return "ETTh1.csv";
  if (key == "etth2") return "ETTh2.csv";
  if (key == "ettm1") return "ETTm1.csv";
  if (key == "ettm2") return "ETTm2.csv";
  if (key == "exchange") return "exchange_rate.csv";
  if (key == "weather") return "weather.csv";
  if (key == "ecl") return "electricity.csv";
  return std::string(name) + ".csv";
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = line.find(',', pos);
    out.push_back(trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline bool parse_int(std::string_view s, int& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

}  // namespace detail

/// Accepts "YYYY-MM-DD", "YYYY-MM-DD HH:MM[:SS]" (or with 'T'), or an integer.
inline std::optional<std::int64_t> parse_timestamp(std::string_view s) {
  std::int64_t raw = 0;
  {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), raw);
    if (ec == std::errc() && p == s.data() + s.size()) return raw;
  }
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  if (!detail::parse_int(s.substr(0, 4), y) || !detail::parse_int(s.substr(5, 2), mo) ||
      !detail::parse_int(s.substr(8, 2), d))
    return std::nullopt;
  if (s.size() > 10) {
    if (s[10] != ' ' && s[10] != 'T') return std::nullopt;
    const std::string_view t = s.substr(11);
    if (t.size() < 5 || t[2] != ':' || !detail::parse_int(t.substr(0, 2), h) || !detail::parse_int(t.substr(3, 2), mi))
      return std::nullopt;
    if (t.size() > 5) {
      if (t.size() != 8 || t[5] != ':' || !detail::parse_int(t.substr(6, 2), sec)) return std::nullopt;
    }
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) return std::nullopt;
  return sys_days{ymd}.time_since_epoch().count() * 86400 + h * 3600 + mi * 60 + sec;
}

inline std::string format_timestamp(std::int64_t t) {
  using namespace std::chrono;
  const std::int64_t days = t >= 0 ? t / 86400 : (t - 86399) / 86400;
  const std::int64_t rem = t - days * 86400;
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02d:%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(rem / 3600),
                static_cast<int>(rem / 60 % 60), static_cast<int>(rem % 60));
  return buf;
}

struct CsvSchema {
  std::string date_column = "date";
  std::vector<std::string> value_columns;  // empty: every non-date column
  std::optional<DatasetShape> expect;
};

inline SeriesFrame read_csv(std::istream& in, const CsvSchema& schema, const std::string& source = "<stream>") {
  auto fail = [&](Index line, const std::string& what) -> DataError {
    return DataError(source + ":" + std::to_string(line) + ": " + what);
  };
  std::string line;
  Index lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!detail::trim(line).empty()) break;
  }
  if (detail::trim(line).empty()) throw DataError(source + ": empty file");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split_csv(line);
  auto find_col = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  };
  const auto date_col = find_col(schema.date_column);
  if (!date_col) throw fail(lineno, "missing date column '" + schema.date_column + "'");
  std::vector<std::size_t> cols;
  SeriesFrame frame;
  if (schema.value_columns.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (i != *date_col) {
        cols.push_back(i);
        frame.names.emplace_back(header[i]);
      }
  } else {
    for (const auto& name : schema.value_columns) {
      auto c = find_col(name);
      if (!c) throw fail(lineno, "missing column '" + name + "'");
      cols.push_back(*c);
      frame.names.push_back(name);
    }
  }
  if (cols.empty()) throw fail(lineno, "no value columns");

  std::vector<double> flat;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv(line);
    if (fields.size() != header.size())
      throw fail(lineno, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    auto ts = parse_timestamp(fields[*date_col]);
    if (!ts) throw fail(lineno, "unparseable timestamp '" + std::string(fields[*date_col]) + "'");
    if (!frame.timestamps.empty() && *ts <= frame.timestamps.back())
      throw fail(lineno, "timestamps not strictly increasing");
    frame.timestamps.push_back(*ts);
    for (std::size_t c : cols) {
      const std::string_view f = fields[c];
      double v = 0;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || ec != std::errc() || p != f.data() + f.size() || !std::isfinite(v))
        throw fail(lineno, "bad value '" + std::string(f) + "' in column '" + std::string(header[c]) + "'");
      flat.push_back(v);
    }
  }
  const Index rows = static_cast<Index>(frame.timestamps.size());
  if (rows == 0) throw DataError(source + ": no data rows");
  frame.values = MatrixMap<double>(flat.data(), rows, static_cast<Index>(cols.size()));
  if (schema.expect) {
    if (frame.variates() != schema.expect->variates || frame.steps() != schema.expect->steps)
      throw DataError(source + ": expected " + std::to_string(schema.expect->variates) + " variates x " +
                      std::to_string(schema.expect->steps) + " rows, found " + std::to_string(frame.variates()) +
                      " x " + std::to_string(frame.steps()));
  }
  return frame;
}

/// Loads a CSV; when the file stem names a known dataset its shape is checked.
inline SeriesFrame load_csv(const std::filesystem::path& path, CsvSchema schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  const std::string stem = path.stem().string();
  if (!schema.expect) schema.expect = known_dataset(stem);
  SeriesFrame f = read_csv(in, schema, path.string());
  f.name = canonical_dataset(stem);
  return f;
}

inline void write_csv(std::ostream& out, const SeriesFrame& f) {
  out << "date";
  for (const auto& n : f.names) out << ',' << n;
  out << '\n';
  char buf[32];
  for (Index t = 0; t < f.steps(); ++t) {
    out << format_timestamp(f.timestamps[static_cast<std::size_t>(t)]);
    for (Index j = 0; j < f.variates(); ++j) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, f.values(t, j));
      out << ',' << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    out << '\n';
  }
}

inline void save_csv(const std::filesystem::path& path, const SeriesFrame& f) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_csv(out, f);
}

}  // namespace s2tx
