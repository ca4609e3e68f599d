#pragma once

// File formats.
//
// Case files are JSON with a strict schema (unknown keys are rejected):
//
//   { "schema_version": 1, "description": "...", "base_mva": 100, "reference_bus": 1,
//     "buses":      [ {"id": 1, "load_mw": 0.0}, ... ],
//     "lines":      [ {"from": 1, "to": 2, "x_pu": 0.06, "limit_mw": 130}, ... ],   limit_mw null = unlimited
//     "generators": [ {"bus": 1, "pmin_mw": 0, "pmax_mw": 64, "c_quad": 0.02, "d_lin": 2.0}, ... ],
//     "wind_farms": [ {"bus": 1, "price": 3.5, "forecast_mw": 6.0, "capacity_mw": 20}, ... ] }
//
// ("description" and "capacity_mw" are optional.)
//
// CSV files start with optional "# key: value" metadata lines, then a header
// row, then numeric rows. Numbers are written in shortest round-trip form.
// History, covariance and scenario files use bus ids as column headers; wind
// history is assumed to be already in MW.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "riskopf/errors.hpp"
#include "riskopf/grid_model.hpp"
#include "riskopf/scenario.hpp"

namespace riskopf {

class ParseError : public std::runtime_error {
public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

inline constexpr int kCaseSchemaVersion = 1;

/// Shortest decimal string that parses back to exactly `v`.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) v = 0.0;  // fold -0
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& text, const std::string& where) {
  std::size_t begin = text.find_first_not_of(" \t\r");
  std::size_t end = text.find_last_not_of(" \t\r");
  if (begin == std::string::npos) throw ParseError(where + ": empty numeric field");
  const std::string s = text.substr(begin, end - begin + 1);
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto res = std::from_chars(first, s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError(where + ": '" + s + "' is not a number");
  return v;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

// ---------------------------------------------------------------- case files

namespace detail {

using nlohmann::json;

inline void allow_only(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ValidationError(where + ": expected an object");
  for (const auto& [k, _] : obj.items()) {
    bool ok = false;
    for (const char* allowed : keys) ok = ok || k == allowed;
    if (!ok) throw ValidationError(where + ": unknown field '" + k + "'");
  }
}

inline const json& field(const json& obj, const std::string& where, const char* key) {
  if (!obj.contains(key)) throw ValidationError(where + ": missing field '" + key + "'");
  return obj.at(key);
}

inline double number(const json& obj, const std::string& where, const char* key) {
  const auto& v = field(obj, where, key);
  if (!v.is_number()) throw ValidationError(where + "." + key + ": expected a number");
  return v.get<double>();
}

inline int integer(const json& obj, const std::string& where, const char* key) {
  const auto& v = field(obj, where, key);
  if (!v.is_number_integer()) throw ValidationError(where + "." + key + ": expected an integer");
  return v.get<int>();
}

inline const json& array(const json& obj, const char* key) {
  const auto& v = field(obj, "case", key);
  if (!v.is_array()) throw ValidationError(std::string("case.") + key + ": expected an array");
  return v;
}

}  // namespace detail

/// Parses and validates a case document.
inline GridCase case_from_json(const nlohmann::json& doc) {
  using detail::integer;
  using detail::number;
  detail::allow_only(doc, "case",
                     {"schema_version", "description", "base_mva", "reference_bus", "buses", "lines", "generators",
                      "wind_farms"});
  if (detail::integer(doc, "case", "schema_version") != kCaseSchemaVersion)
    throw ValidationError("case.schema_version: unsupported version");
  if (doc.contains("description") && !doc.at("description").is_string())
    throw ValidationError("case.description: expected a string");

  GridCase g;
  g.base_mva = doc.contains("base_mva") ? number(doc, "case", "base_mva") : 100.0;
  g.reference_bus = integer(doc, "case", "reference_bus");

  const auto& buses = detail::array(doc, "buses");
  for (std::size_t i = 0; i < buses.size(); ++i) {
    const std::string where = "buses[" + std::to_string(i) + "]";
    detail::allow_only(buses[i], where, {"id", "load_mw"});
    g.buses.push_back({integer(buses[i], where, "id"), number(buses[i], where, "load_mw")});
  }
  const auto& lines = detail::array(doc, "lines");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = "lines[" + std::to_string(i) + "]";
    const auto& r = lines[i];
    detail::allow_only(r, where, {"from", "to", "x_pu", "limit_mw"});
    Line l{integer(r, where, "from"), integer(r, where, "to"), number(r, where, "x_pu"),
           std::numeric_limits<double>::infinity()};
    if (!detail::field(r, where, "limit_mw").is_null()) l.flow_limit = number(r, where, "limit_mw");
    g.lines.push_back(l);
  }
  const auto& gens = detail::array(doc, "generators");
  for (std::size_t i = 0; i < gens.size(); ++i) {
    const std::string where = "generators[" + std::to_string(i) + "]";
    const auto& r = gens[i];
    detail::allow_only(r, where, {"bus", "pmin_mw", "pmax_mw", "c_quad", "d_lin"});
    g.generators.push_back({integer(r, where, "bus"), number(r, where, "pmin_mw"), number(r, where, "pmax_mw"),
                            number(r, where, "c_quad"), number(r, where, "d_lin")});
  }
  const auto& farms = detail::array(doc, "wind_farms");
  for (std::size_t i = 0; i < farms.size(); ++i) {
    const std::string where = "wind_farms[" + std::to_string(i) + "]";
    const auto& r = farms[i];
    detail::allow_only(r, where, {"bus", "price", "forecast_mw", "capacity_mw"});
    WindFarm f{integer(r, where, "bus"), number(r, where, "price"), number(r, where, "forecast_mw"), std::nullopt};
    if (r.contains("capacity_mw")) f.capacity = number(r, where, "capacity_mw");
    g.wind_farms.push_back(f);
  }
  validate(g);
  return g;
}

inline nlohmann::json case_to_json(const GridCase& g) {
  nlohmann::json doc;
  doc["schema_version"] = kCaseSchemaVersion;
  doc["base_mva"] = g.base_mva;
  doc["reference_bus"] = g.reference_bus;
  doc["buses"] = nlohmann::json::array();
  for (const auto& b : g.buses) doc["buses"].push_back({{"id", b.id}, {"load_mw", b.base_load}});
  doc["lines"] = nlohmann::json::array();
  for (const auto& l : g.lines) {
    nlohmann::json r{{"from", l.from_bus}, {"to", l.to_bus}, {"x_pu", l.reactance}};
    r["limit_mw"] = std::isfinite(l.flow_limit) ? nlohmann::json(l.flow_limit) : nlohmann::json(nullptr);
    doc["lines"].push_back(r);
  }
  doc["generators"] = nlohmann::json::array();
  for (const auto& x : g.generators)
    doc["generators"].push_back(
        {{"bus", x.bus}, {"pmin_mw", x.p_min}, {"pmax_mw", x.p_max}, {"c_quad", x.cost_quad}, {"d_lin", x.cost_lin}});
  doc["wind_farms"] = nlohmann::json::array();
  for (const auto& f : g.wind_farms) {
    nlohmann::json r{{"bus", f.bus}, {"price", f.purchase_price}, {"forecast_mw", f.forecast}};
    if (f.capacity) r["capacity_mw"] = *f.capacity;
    doc["wind_farms"].push_back(r);
  }
  return doc;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline GridCase load_case(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    return case_from_json(doc);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError(path + ": cannot open for writing");
  out << text;
  if (!out) throw ParseError(path + ": write failed");
}

inline void write_case(const std::string& path, const GridCase& g) { write_text(path, case_to_json(g).dump(2) + "\n"); }

/// Stable fingerprint of the case content (not of its file formatting).
inline std::string case_hash(const GridCase& g) { return hex64(fnv1a(case_to_json(g).dump())); }

// ---------------------------------------------------------------- CSV

using Metadata = std::vector<std::pair<std::string, std::string>>;

struct CsvTable {
  Metadata metadata;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::string meta(const std::string& key) const {
    for (const auto& [k, v] : metadata)
      if (k == key) return v;
    throw ParseError("missing metadata key '" + key + "'");
  }
  bool has_meta(const std::string& key) const {
    for (const auto& [k, v] : metadata)
      if (k == key) return true;
    return false;
  }
  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ParseError("missing column '" + name + "'");
  }
};

namespace detail {

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace detail

inline CsvTable parse_csv(const std::string& text, const std::string& where) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    if (line[0] == '#') {
      const auto body = line.substr(1);
      const auto colon = body.find(':');
      if (colon != std::string::npos) t.metadata.emplace_back(detail::trim(body.substr(0, colon)), detail::trim(body.substr(colon + 1)));
      continue;
    }
    const auto cells = detail::split(line);
    if (t.header.empty()) {
      for (const auto& c : cells) t.header.push_back(detail::trim(c));
      continue;
    }
    const std::string at = where + ":" + std::to_string(lineno);
    if (cells.size() != t.header.size())
      throw ParseError(at + ": expected " + std::to_string(t.header.size()) + " fields, got " + std::to_string(cells.size()));
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(parse_double(c, at));
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw ParseError(where + ": no header row");
  return t;
}

inline CsvTable read_csv(const std::string& path) { return parse_csv(read_text(path), path); }

/// Writer producing the format parse_csv reads.
class CsvWriter {
public:
  CsvWriter(const Metadata& metadata, const std::vector<std::string>& header) {
    for (const auto& [k, v] : metadata) out_ << "# " << k << ": " << v << '\n';
    row_strings(header);
  }
  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format_double(values[i]);
    out_ << '\n';
  }
  void row_strings(const std::vector<std::string>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << values[i];
    out_ << '\n';
  }
  std::string str() const { return out_.str(); }
  void save(const std::string& path) const { write_text(path, out_.str()); }

private:
  std::ostringstream out_;
};

inline std::vector<int> header_bus_ids(const CsvTable& t, const std::string& where) {
  std::vector<int> ids;
  for (const auto& h : t.header) {
    const double v = parse_double(h, where + " header");
    if (v != std::floor(v)) throw ParseError(where + ": header entry '" + h + "' is not a bus id");
    ids.push_back(static_cast<int>(v));
  }
  return ids;
}

inline Eigen::MatrixXd table_matrix(const CsvTable& t) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t c = 0; c < t.header.size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t.rows[r][c];
  return m;
}

inline std::vector<std::string> bus_header(const GridCase& g) {
  std::vector<std::string> h;
  for (const auto& b : g.buses) h.push_back(std::to_string(b.id));
  return h;
}

inline WindHistory read_history(const std::string& path) {
  const auto t = read_csv(path);
  WindHistory h;
  h.farm_buses = header_bus_ids(t, path);
  h.records = table_matrix(t);
  return h;
}

inline void write_history(const std::string& path, const WindHistory& h) {
  std::vector<std::string> header;
  for (int id : h.farm_buses) header.push_back(std::to_string(id));
  CsvWriter w({}, header);
  for (Eigen::Index r = 0; r < h.records.rows(); ++r) {
    std::vector<double> row;
    for (Eigen::Index c = 0; c < h.records.cols(); ++c) row.push_back(h.records(r, c));
    w.row(row);
  }
  w.save(path);
}

/// Covariance over wind-farm buses (W x W, header = bus ids), embedded into M x M.
inline Eigen::MatrixXd read_covariance(const std::string& path, const GridCase& g) {
  const auto t = read_csv(path);
  const auto ids = header_bus_ids(t, path);
  if (t.rows.size() != ids.size()) throw ParseError(path + ": covariance must be square");
  for (int id : ids)
    if (g.wind_farm_at(g.bus_index(id)) == nullptr)
      throw ValidationError(path + ": bus " + std::to_string(id) + " has no wind farm");
  const auto block = table_matrix(t);
  const auto m = static_cast<Eigen::Index>(g.bus_count());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(m, m);
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < ids.size(); ++j)
      cov(static_cast<Eigen::Index>(g.bus_index(ids[i])), static_cast<Eigen::Index>(g.bus_index(ids[j]))) =
          block(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return cov;
}

inline void write_covariance(const std::string& path, const Eigen::MatrixXd& cov, const GridCase& g,
                             const Metadata& meta = {}) {
  std::vector<std::string> header;
  std::vector<Eigen::Index> idx;
  for (const auto& f : g.wind_farms) {
    header.push_back(std::to_string(f.bus));
    idx.push_back(static_cast<Eigen::Index>(g.bus_index(f.bus)));
  }
  CsvWriter w(meta, header);
  for (auto i : idx) {
    std::vector<double> row;
    for (auto j : idx) row.push_back(cov(i, j));
    w.row(row);
  }
  w.save(path);
}

inline std::string scenarios_csv(const ScenarioSet& s, const GridCase& g, Metadata meta) {
  meta.insert(meta.begin(), {"seed", std::to_string(s.seed)});
  meta.emplace_back("n_s", std::to_string(s.size()));
  CsvWriter w(meta, bus_header(g));
  std::vector<double> row(static_cast<std::size_t>(s.bus_count()));
  for (Eigen::Index r = 0; r < s.size(); ++r) {
    for (Eigen::Index c = 0; c < s.bus_count(); ++c) row[static_cast<std::size_t>(c)] = s.samples(r, c);
    w.row(row);
  }
  return w.str();
}

inline void write_scenarios(const std::string& path, const ScenarioSet& s, const GridCase& g, const Metadata& meta = {}) {
  write_text(path, scenarios_csv(s, g, meta));
}

/// Reads a scenario file whose columns are the case's buses (any order).
inline ScenarioSet read_scenarios(const std::string& path, const GridCase& g) {
  const auto t = read_csv(path);
  const auto ids = header_bus_ids(t, path);
  ScenarioSet s;
  s.samples = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(g.bus_count()));
  std::vector<bool> seen(g.bus_count(), false);
  for (std::size_t c = 0; c < ids.size(); ++c) {
    const auto b = g.bus_index(ids[c]);
    if (seen[b]) throw ParseError(path + ": duplicate column for bus " + std::to_string(ids[c]));
    seen[b] = true;
    for (std::size_t r = 0; r < t.rows.size(); ++r) s.samples(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(b)) = t.rows[r][c];
  }
  for (const auto idx : g.wind_bus_indices())
    if (!seen[idx]) throw ParseError(path + ": no column for wind bus " + std::to_string(g.buses[idx].id));
  s.forecast = g.forecast_vector();
  s.covariance = Eigen::MatrixXd::Zero(s.bus_count(), s.bus_count());
  if (t.has_meta("seed")) s.seed = std::stoull(t.meta("seed"));
  return s;
}

}  // namespace riskopf
