#pragma once

// JSON descriptions of systems, measures and observables; RFC-4180 CSV with a
// provenance header; atomic file replacement.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvp/error.hpp"
#include "cvp/measures.hpp"
#include "cvp/systems.hpp"
#include "cvp/weaving.hpp"

namespace cvp {

using nlohmann::json;

inline constexpr const char* kVersion = "0.3.1";
inline constexpr const char* kModuleVersions =
    "systems:1.2,measures:1.3,entropy:1.1,shadowing:1.1,weaving:1.4,variational:1.2,cli:1.0";

namespace detail {
template <class T>
T field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw PreconditionError(std::string("config is missing \"") + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw PreconditionError(std::string("config field \"") + key + "\": " + e.what());
  }
}

template <class T>
T field_or(const json& j, const char* key, T fallback) {
  return j.is_object() && j.contains(key) ? field<T>(j, key) : fallback;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Systems

inline System system_from_json(const json& j) {
  const auto kind = detail::field<std::string>(j, "kind");
  if (kind == "full_shift") return System(ShiftSpace::full(detail::field<int>(j, "k")));
  if (kind == "sft") return System(ShiftSpace(detail::field<std::vector<std::vector<int>>>(j, "transition")));
  if (kind == "tent") return System(TentMap(detail::field<double>(j, "s")));
  if (kind == "plmap")
    return System(EndpointFixedMap(detail::field<std::vector<double>>(j, "breakpoints"),
                                   detail::field<std::vector<double>>(j, "values")));
  throw PreconditionError("unknown system kind \"" + kind + "\"");
}

inline json to_json(const ShiftSpace& s) {
  if (s.is_full()) return {{"kind", "full_shift"}, {"k", s.alphabet_size()}};
  return {{"kind", "sft"}, {"transition", s.transition()}};
}

// ---------------------------------------------------------------------------
// Measures

/// {"kind":"bernoulli","p":0.7} (P(symbol 1) = p) or {"kind":"bernoulli","probs":[...]},
/// {"kind":"markov","matrix":[[...]]}, {"kind":"cycle","k":3},
/// {"kind":"point_mass","k":2,"symbol":0}.
inline MarkovMeasure markov_from_json(const json& j) {
  const auto kind = detail::field<std::string>(j, "kind");
  if (kind == "bernoulli") {
    if (j.contains("probs")) return MarkovMeasure::bernoulli(detail::field<std::vector<double>>(j, "probs"));
    const double p = detail::field<double>(j, "p");
    require(p >= 0.0 && p <= 1.0, "bernoulli p must lie in [0, 1]");
    return MarkovMeasure::bernoulli(p);
  }
  if (kind == "markov") return MarkovMeasure::from_matrix(detail::field<MarkovMeasure::Matrix>(j, "matrix"));
  if (kind == "cycle") return MarkovMeasure::cycle(detail::field<int>(j, "k"));
  if (kind == "point_mass") return MarkovMeasure::point_mass(detail::field<int>(j, "k"), detail::field<int>(j, "symbol"));
  throw PreconditionError("unknown measure kind \"" + kind + "\"");
}

/// A Markov measure, or {"kind":"mixture","components":[{"weight":w,"measure":{...}}, ...]}.
inline MarkovMixture mixture_from_json(const json& j) {
  if (detail::field<std::string>(j, "kind") != "mixture") return MarkovMixture(markov_from_json(j));
  std::vector<MarkovMixture::Component> comps;
  for (const auto& c : detail::field<json>(j, "components"))
    comps.push_back({detail::field<double>(c, "weight"), markov_from_json(detail::field<json>(c, "measure"))});
  return MarkovMixture(std::move(comps));
}

inline json to_json(const MarkovMeasure& m) { return {{"kind", "markov"}, {"matrix", m.stochastic()}}; }

/// {"frequency": a} for the indicator of [a], or {"depth": d, "values": [...]}.
inline LocallyConstant observable_from_json(const json& j, int alphabet_size) {
  if (j.contains("frequency")) return LocallyConstant::frequency(alphabet_size, detail::field<int>(j, "frequency"));
  return LocallyConstant(alphabet_size, detail::field<int>(j, "depth"), detail::field<std::vector<double>>(j, "values"));
}

inline json to_json(const ShiftPoint& x) {
  return {{"prefix", x.take(x.prefix_length())}, {"cycle", x.shifted(x.prefix_length()).take(x.cycle_length())}};
}

// ---------------------------------------------------------------------------
// Schedules

inline json rational_json(const Rational& r) { return {r.numerator(), r.denominator()}; }

inline json to_json(const WeaveSchedule& w) {
  json levels = json::array();
  for (int k = 1; k <= w.k_max; ++k) {
    const auto K = static_cast<std::size_t>(k - 1);
    json a = json::array(), c = json::array();
    for (const auto& r : w.a[K]) a.push_back(rational_json(r));
    for (const auto& r : w.C[K]) c.push_back(rational_json(r));
    levels.push_back({{"k", k},
                      {"a", a},
                      {"n", w.n[K]},
                      {"C", c},
                      {"N", w.N[K]},
                      {"reps", w.reps[K]},
                      {"X", w.X[K]},
                      {"Y", w.Y[K]},
                      {"T", w.T[K]},
                      {"cycle_connectors", w.cycle_connector[K]},
                      {"level_connector", w.level_connector[K]},
                      {"M", w.M[K]},
                      {"M_ki", w.M_ki[K]}});
  }
  json checks = json::array();
  for (const auto& c : w.checks) checks.push_back({{"name", c.name}, {"level", c.level}, {"ok", c.ok}});
  return {{"k_max", w.k_max},
          {"length", w.length()},
          {"epsilon", w.epsilon},
          {"delta_prime", w.delta_prime},
          {"diam_xi", w.diam_xi},
          {"splice_bound", w.splice_bound},
          {"levels", levels},
          {"certified", w.certified()},
          {"checks", checks}};
}

/// "1:3 0:1 1:2" for 1110 11: symbol, colon, run length; runs space separated.
inline std::string run_length_encode(const ShiftPoint& z, std::size_t length) {
  std::ostringstream out;
  std::size_t i = 0;
  while (i < length) {
    std::size_t j = i;
    while (j < length && z[j] == z[i]) ++j;
    if (i > 0) out << ' ';
    out << z[i] << ':' << (j - i);
    i = j;
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Output

/// FNV-1a over the canonical (key-sorted) dump of the config and the seed.
inline std::uint64_t config_hash(const json& config, std::uint64_t seed) {
  const std::string text = config.dump() + "#" + std::to_string(seed);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// 12 significant digits; integers print without exponent up to 2^53.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  CsvTable& row(std::vector<std::string> cells) {
    require(cells.size() == columns_.size(), "csv row width differs from the header");
    rows_.push_back(std::move(cells));
    return *this;
  }

  static std::string quote(const std::string& cell) {
    if (cell.find_first_of(",\"\r\n") == std::string::npos) return cell;
    std::string out = "\"";
    for (char c : cell) {
      if (c == '"') out += '"';
      out += c;
    }
    return out + '"';
  }

  /// Header comment line, column names, rows; CRLF line ends per RFC 4180.
  std::string render(const std::string& comment) const {
    std::string out = "# " + comment + "\r\n";
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + quote(cells[i]);
      out += "\r\n";
    };
    line(columns_);
    for (const auto& r : rows_) line(r);
    return out;
  }

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

/// Writes to a sibling temporary and renames over the target.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw ResourceError("cannot open " + tmp.string() + " for writing");
    f << content;
    f.flush();
    if (!f) throw ResourceError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw ResourceError("cannot rename " + tmp.string() + ": " + ec.message());
}

}  // namespace cvp
