#pragma once

// Survey data files: comma-separated, '.' decimal point, header row. Columns
// `y` and exactly one of `weight` or `pi`; `cluster` and `x` are optional.
// Blank lines and lines starting with '#' are skipped.

#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mhde/errors.hpp"
#include "mhde/survey.hpp"

namespace mhde {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) out.push_back(trim(cur));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline SurveySample read_sample_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> col;
  std::vector<double> y, w, x;
  std::vector<int> cluster;
  bool have_header = false;
  auto where = [&] { return "line " + std::to_string(lineno); };
  auto number = [&](const std::string& s, const char* name) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size())
      throw SchemaError(where(), std::string("column '") + name + "': not a number: '" + s + "'");
    return v;
  };

  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto f = detail::split_fields(t);
    if (!have_header) {
      for (std::size_t k = 0; k < f.size(); ++k) {
        if (col.contains(f[k])) throw SchemaError(where(), "duplicate column '" + f[k] + "'");
        col[f[k]] = k;
      }
      if (!col.contains("y")) throw SchemaError(where(), "missing column 'y'");
      if (col.contains("weight") == col.contains("pi"))
        throw SchemaError(where(), "need exactly one of the columns 'weight' and 'pi'");
      have_header = true;
      continue;
    }
    if (f.size() != col.size())
      throw SchemaError(where(), "expected " + std::to_string(col.size()) + " fields, found " +
                                     std::to_string(f.size()));
    y.push_back(number(f[col.at("y")], "y"));
    if (col.contains("weight")) w.push_back(number(f[col.at("weight")], "weight"));
    else w.push_back(number(f[col.at("pi")], "pi"));
    if (col.contains("x")) x.push_back(number(f[col.at("x")], "x"));
    if (col.contains("cluster")) {
      const double c = number(f[col.at("cluster")], "cluster");
      if (c != static_cast<int>(c)) throw SchemaError(where(), "column 'cluster': not an integer");
      cluster.push_back(static_cast<int>(c));
    }
  }
  if (!have_header) throw SchemaError("line 1", "missing header row");
  if (y.empty()) throw SchemaError("line " + std::to_string(lineno), "no data rows");

  SurveySample s;
  try {
    s = col.contains("weight") ? SurveySample::from_weights(std::move(y), std::move(w))
                               : SurveySample::from_pi(std::move(y), std::move(w));
  } catch (const DomainError& e) {
    throw SchemaError("data", e.what());
  }
  s.x = std::move(x);
  s.cluster = std::move(cluster);
  return s;
}

inline SurveySample read_sample_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_sample_csv(in);
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << content;
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace mhde
