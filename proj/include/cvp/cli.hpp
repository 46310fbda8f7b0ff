#pragma once

// Command layer behind tools/cvp. Each command computes all of its artifacts in
// memory first; nothing is written unless the whole computation succeeded, so
// a rejected config never leaves partial output behind.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "cvp/entropy.hpp"
#include "cvp/error.hpp"
#include "cvp/io.hpp"
#include "cvp/measures.hpp"
#include "cvp/random.hpp"
#include "cvp/shadowing.hpp"
#include "cvp/systems.hpp"
#include "cvp/variational.hpp"
#include "cvp/weaving.hpp"

namespace cvp {

enum ExitCode : int {
  kExitOk = 0,
  kExitBoundMissed = 1,  ///< weave finished but D(E_L(z), nu) exceeds the configured bound
  kExitConfig = 2,
  kExitSchedule = 3,
  kExitResource = 4,
  kExitInternal = 5,
};

struct RunConfig {
  json config;
  std::uint64_t seed = 0;
  std::filesystem::path out = ".";
  std::string command;
  int truncation() const { return detail::field_or<int>(config, "truncation", 16); }
};

struct Artifact {
  std::string name;
  std::string content;
};

struct CommandResult {
  int exit_code = kExitOk;
  std::vector<Artifact> files;
  std::string message;
};

inline json load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw PreconditionError("cannot read config " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw PreconditionError(std::string("config is not valid JSON: ") + e.what());
  }
}

/// The comment line heading every CSV.
inline std::string provenance(const RunConfig& rc, const std::string& extra = "") {
  std::string s = "config_hash=" + hex64(config_hash(rc.config, rc.seed)) + " seed=" + std::to_string(rc.seed) +
                  " version=" + kVersion + " modules=" + kModuleVersions;
  return extra.empty() ? s : s + " " + extra;
}

namespace detail {

inline std::string num(double v) { return format_number(v); }
inline std::string num(std::uint64_t v) { return std::to_string(v); }
inline std::string opt_num(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

inline const ShiftSpace& shift_of(const System& sys) {
  if (!sys.is_shift()) throw PreconditionError("this command needs a shift system");
  return sys.shift();
}

/// [a, b, ...] or {"from": a, "to": b, "step": h}.
inline std::vector<double> grid_from_json(const json& j) {
  if (j.is_array()) {
    try {
      return j.get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw PreconditionError(std::string("grid: ") + e.what());
    }
  }
  const double from = field<double>(j, "from"), to = field<double>(j, "to"), step = field<double>(j, "step");
  require(step > 0.0 && to >= from, "grid needs step > 0 and to >= from");
  const auto count = static_cast<std::size_t>(std::llround((to - from) / step)) + 1;
  require(count <= 100000, "grid has too many points");
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = from + static_cast<double>(i) * step;
  return out;
}

inline Interval interval_from_json(const json& j) {
  Interval r{field<double>(j, "lo"), field<double>(j, "hi"), field_or<bool>(j, "closed", false)};
  require(r.well_formed(), "malformed interval");
  return r;
}

inline std::vector<std::size_t> n_grid_from_json(const json& sec) {
  if (sec.contains("n_grid")) return field<std::vector<std::size_t>>(sec, "n_grid");
  const auto n_max = field<std::size_t>(sec, "n_max");
  const auto n_min = field_or<std::size_t>(sec, "n_min", 1);
  require(n_min >= 1 && n_min <= n_max, "katok needs 1 <= n_min <= n_max");
  std::vector<std::size_t> out;
  for (std::size_t n = n_min; n <= n_max; ++n) out.push_back(n);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

/// spectrum.csv (alpha, h_var, h_count, n_count, gap) and sup.csv for the
/// constraint; sup.csv says "limit" when the supremum sits on an open end.
inline CommandResult cmd_spectrum(const RunConfig& rc) {
  const auto sys = system_from_json(detail::field<json>(rc.config, "system"));
  const auto& shift = detail::shift_of(sys);
  const auto sec = detail::field<json>(rc.config, "spectrum");
  const auto phi = observable_from_json(detail::field<json>(sec, "observable"), shift.alphabet_size());
  require(phi.depth() <= 3, "spectrum supports observables of depth at most 3");
  const auto grid = detail::grid_from_json(detail::field<json>(sec, "grid"));
  require(!grid.empty(), "alpha grid is empty");
  for (double a : grid)
    if (!(a >= phi.min_value() && a <= phi.max_value()))
      throw PreconditionError("alpha " + format_number(a) + " lies outside the observable's range [" +
                              format_number(phi.min_value()) + ", " + format_number(phi.max_value()) + "]");
  const Interval constraint = sec.contains("constraint")
                                  ? detail::interval_from_json(sec.at("constraint"))
                                  : Interval{phi.min_value(), phi.max_value(), true};
  SpectrumOptions opt;
  opt.n_count = detail::field_or<std::size_t>(sec, "n_count", opt.n_count);
  opt.window = detail::field_or<double>(sec, "window", opt.window);
  opt.count = detail::field_or<bool>(sec, "count", opt.count);
  require(opt.window > 0.0, "window must be positive");

  const auto r = spectrum(shift, phi, constraint, grid, opt);

  CsvTable table({"alpha", "h_var", "h_count", "n_count", "gap"});
  for (const auto& p : r.points)
    table.row({detail::num(p.alpha), detail::num(p.h_var), detail::opt_num(p.h_count),
               p.h_count ? std::to_string(p.n_count) : "", detail::opt_num(p.gap())});
  CsvTable sup({"lo", "hi", "closed", "sup", "sup_alpha", "status", "grid_sup"});
  sup.row({detail::num(constraint.lo), detail::num(constraint.hi), constraint.closed ? "true" : "false",
           detail::num(r.sup), detail::num(r.sup_alpha), r.sup_attained ? "attained" : "limit",
           detail::opt_num(r.grid_sup)});

  CommandResult out;
  out.files = {{"spectrum.csv", table.render(provenance(rc))}, {"sup.csv", sup.render(provenance(rc))}};
  out.message = "sup = " + format_number(r.sup) + " at alpha = " + format_number(r.sup_alpha) +
                (r.sup_attained ? "" : " (one-sided limit)");
  return out;
}

/// schedule.json, word.rle and convergence.csv (n, D). Exit 0 iff the final D
/// is within "bound".
inline CommandResult cmd_weave(const RunConfig& rc) {
  const auto sys = system_from_json(detail::field<json>(rc.config, "system"));
  const auto& shift = detail::shift_of(sys);
  const auto sec = detail::field<json>(rc.config, "weave");
  const auto target = mixture_from_json(detail::field<json>(sec, "target"));
  WeaveParams p;
  p.gamma = detail::field_or<double>(sec, "gamma", p.gamma);
  p.k_max = detail::field_or<int>(sec, "k_max", p.k_max);
  p.base_block = detail::field_or<std::size_t>(sec, "base_block", p.base_block);
  p.growth = detail::field_or<std::size_t>(sec, "growth", p.growth);
  p.budget = detail::field_or<std::size_t>(sec, "budget", p.budget);
  p.cell_depth = detail::field_or<int>(sec, "cell_depth", p.cell_depth);
  p.length_cap = detail::field_or<std::uint64_t>(sec, "length_cap", p.length_cap);
  p.denominator_cap = detail::field_or<std::int64_t>(sec, "denominator_cap", p.denominator_cap);
  p.truncation = rc.truncation();
  const double bound = detail::field_or<double>(sec, "bound", 0.05);
  require(p.gamma > 0.0 && p.gamma < 0.25, "gamma must lie in (0, 1/4)");
  require(bound >= 0.0, "bound must be nonnegative");

  const auto run = weave(shift, target, p, rc.seed);
  const auto& w = run.schedule;
  const auto& o = *run.outcome;

  json doc = to_json(w);
  doc["final_distance"] = o.final_distance;
  doc["bound"] = bound;
  doc["max_deviation"] = o.max_deviation;
  doc["config_hash"] = hex64(config_hash(rc.config, rc.seed));
  json fams = json::array();
  for (std::size_t k = 0; k < run.families.size(); ++k)
    for (const auto& f : run.families[k])
      fams.push_back({{"level", k + 1},
                      {"n", f.n},
                      {"cell", f.cell},
                      {"blocks", f.blocks.size()},
                      {"samples", f.samples},
                      {"accepted", f.accepted},
                      {"bound_check", to_string(f.bound_check)}});
  doc["families"] = fams;

  CsvTable conv({"n", "D"});
  for (const auto& [n, d] : o.convergence) conv.row({detail::num(n), detail::num(d)});

  CommandResult out;
  out.files = {{"schedule.json", doc.dump(2) + "\n"},
               {"word.rle", "# " + provenance(rc, "length=" + std::to_string(o.total_length)) + "\n" +
                                run_length_encode(o.point, o.total_length) + "\n"},
               {"convergence.csv", conv.render(provenance(rc))}};
  const bool ok = o.final_distance <= bound;
  out.exit_code = ok ? kExitOk : kExitBoundMissed;
  out.message = "length " + std::to_string(o.total_length) + ", final D = " + format_number(o.final_distance) +
                (ok ? " <= " : " > ") + format_number(bound);
  return out;
}

/// mode "single": shadow.json for one seeded pseudo-orbit. mode "modulus":
/// modulus.csv (delta, successes, trials) and modulus.json with delta_hat.
inline CommandResult cmd_shadow(const RunConfig& rc) {
  const auto sys = system_from_json(detail::field<json>(rc.config, "system"));
  const auto sec = detail::field<json>(rc.config, "shadow");
  const auto mode = detail::field_or<std::string>(sec, "mode", "single");
  CommandResult out;

  if (mode == "modulus") {
    const double eps = detail::field<double>(sec, "epsilon");
    const auto trials = detail::field_or<std::size_t>(sec, "trials", 200);
    const auto length = detail::field_or<std::size_t>(sec, "length", 100);
    const auto rep = std::visit(
        [&](const auto& s) { return shadowing_modulus(s, eps, trials, length, rc.seed); }, sys.impl());
    CsvTable table({"delta", "successes", "trials"});
    for (const auto& r : rep.table) table.row({detail::num(r.delta), std::to_string(r.successes), std::to_string(r.trials)});
    json doc{{"epsilon", eps}, {"delta_hat", rep.delta_hat}, {"trials", trials}, {"length", length}};
    json rows = json::array();
    for (const auto& r : rep.table)
      rows.push_back({{"delta", r.delta}, {"successes", r.successes}, {"trials", r.trials}, {"resource_errors", r.resource_errors}});
    doc["table"] = rows;
    out.files = {{"modulus.csv", table.render(provenance(rc, "epsilon=" + format_number(eps)))},
                 {"modulus.json", doc.dump(2) + "\n"}};
    out.message = "delta_hat = " + format_number(rep.delta_hat);
    return out;
  }
  require(mode == "single", "shadow mode must be \"single\" or \"modulus\"");

  const double delta = detail::field<double>(sec, "delta");
  const auto length = detail::field_or<std::size_t>(sec, "length", 200);
  CounterRng rng(rc.seed);
  json doc{{"delta", delta}, {"length", length}};
  if (sys.is_shift()) {
    const auto& shift = sys.shift();
    const auto x0 = random_point(shift, rng);
    const auto po = perturbed_orbit(shift, x0, length, delta, rng());
    const auto res = shadow_shift(shift, po);
    doc["success"] = true;
    doc["point"] = to_json(res.point);
    doc["max_deviation"] = res.max_deviation;
    doc["per_step"] = res.per_step;
    out.message = "max deviation " + format_number(res.max_deviation);
  } else {
    const double eps = detail::field<double>(sec, "epsilon");
    const auto cap = detail::field_or<std::size_t>(sec, "interval_cap", kDefaultIntervalCap);
    const auto outcome = std::visit(
        [&](const auto& m) -> ShadowOutcome<double> {
          if constexpr (std::is_same_v<std::decay_t<decltype(m)>, ShiftSpace>) {
            throw InvariantViolation("unreachable");
          } else {
            const auto [lo, hi] = m.domain();
            const auto po = perturbed_orbit(m, rng.uniform(lo, hi), length, delta, rng());
            return shadow_interval(m, po, eps, cap);
          }
        },
        sys.impl());
    doc["epsilon"] = eps;
    if (const auto* res = std::get_if<ShadowResult<double>>(&outcome)) {
      doc["success"] = true;
      doc["point"] = res->point;
      doc["max_deviation"] = res->max_deviation;
      doc["per_step"] = res->per_step;
      out.message = "max deviation " + format_number(res->max_deviation);
    } else {
      doc["success"] = false;
      doc["failure_step"] = std::get<ShadowFailure>(outcome).step;
      out.message = "no orbit within epsilon; reachable set empty at step " +
                    std::to_string(std::get<ShadowFailure>(outcome).step);
    }
  }
  out.files = {{"shadow.json", doc.dump(2) + "\n"}};
  return out;
}

/// katok.csv (method, n, epsilon, delta, count, rate); the header carries the
/// exact entropy of the measure.
inline CommandResult cmd_katok(const RunConfig& rc) {
  const auto sys = system_from_json(detail::field<json>(rc.config, "system"));
  const auto& shift = detail::shift_of(sys);
  const auto sec = detail::field<json>(rc.config, "katok");
  const auto m = markov_from_json(detail::field<json>(sec, "measure"));
  const int q = detail::field_or<int>(sec, "q", 1);
  const double delta = detail::field_or<double>(sec, "delta", 0.1);
  const auto grid = detail::n_grid_from_json(sec);
  require(q >= 0, "q must be nonnegative");
  require(!grid.empty() && grid.back() + static_cast<std::size_t>(q) <= kMaxCylinderLength,
          "n + q exceeds the exact-enumeration limit of " + std::to_string(kMaxCylinderLength));
  require(m.alphabet_size() == shift.alphabet_size() && m.respects(shift), "measure must live on the shift");

  const auto est = katok_entropy(shift, m, q, delta, grid);
  const double reference = markov_entropy(m);
  CsvTable table({"method", "n", "epsilon", "delta", "count", "rate"});
  for (const auto& row : est.diagnostics)
    table.row({to_string(EntropyMethod::katok), std::to_string(row.n), detail::num(est.epsilon), detail::num(delta),
               std::to_string(row.count), detail::opt_num(row.rate)});

  CommandResult out;
  out.files = {{"katok.csv", table.render(provenance(rc, "reference_entropy=" + format_number(reference)))}};
  out.message = "rate " + format_number(*est.value) + " at n = " + std::to_string(est.n_used) + ", reference " +
                format_number(reference);
  return out;
}

/// shrink.csv (delta, sup_hat, budget_used); the header carries h_nu.
inline CommandResult cmd_shrink(const RunConfig& rc) {
  const auto sys = system_from_json(detail::field<json>(rc.config, "system"));
  const auto& shift = detail::shift_of(sys);
  const auto sec = detail::field<json>(rc.config, "shrink");
  const auto nu = markov_from_json(detail::field<json>(sec, "measure"));
  const auto grid = detail::field<std::vector<double>>(sec, "delta_grid");
  const auto budget = detail::field_or<std::size_t>(sec, "budget", 8000);
  const auto family = TestFunctionFamily::cylinders(shift.alphabet_size(), rc.truncation());

  const auto r = shrink_experiment(shift, nu, family, grid, budget, rc.seed);
  CsvTable table({"delta", "sup_hat", "budget_used"});
  for (const auto& row : r.rows) table.row({detail::num(row.delta), detail::num(row.sup_hat), std::to_string(row.budget_used)});

  CommandResult out;
  out.files = {{"shrink.csv", table.render(provenance(rc, "h_nu=" + format_number(r.h_nu)))}};
  out.message = "h_nu = " + format_number(r.h_nu) + ", sup_hat at smallest delta = " +
                format_number(r.rows.back().sup_hat);
  return out;
}

inline CommandResult dispatch(const RunConfig& rc) {
  if (rc.command == "spectrum") return cmd_spectrum(rc);
  if (rc.command == "weave") return cmd_weave(rc);
  if (rc.command == "shadow") return cmd_shadow(rc);
  if (rc.command == "katok") return cmd_katok(rc);
  if (rc.command == "shrink") return cmd_shrink(rc);
  throw PreconditionError("unknown command \"" + rc.command + "\"");
}

inline void write_artifacts(const std::filesystem::path& dir, const std::vector<Artifact>& files) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ResourceError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& f : files) write_atomic(dir / f.name, f.content);
}

/// Runs one command and maps failures onto exit codes. A schedule overflow
/// still leaves truncation.json so the caller can see where it stopped.
inline int run(const RunConfig& rc, std::ostream& log) {
  try {
    const auto result = dispatch(rc);
    write_artifacts(rc.out, result.files);
    log << rc.command << ": " << result.message << "\n";
    return result.exit_code;
  } catch (const ScheduleOverflow& e) {
    log << "schedule overflow at level " << e.level() << " (cap " << e.cap() << "): " << e.what() << "\n";
    try {
      const json report{{"error", e.what()}, {"level", e.level()}, {"cap", e.cap()},
                        {"config_hash", hex64(config_hash(rc.config, rc.seed))}};
      write_artifacts(rc.out, {{"truncation.json", report.dump(2) + "\n"}});
    } catch (const Error& w) {
      log << "could not write truncation report: " << w.what() << "\n";
    }
    return kExitSchedule;
  } catch (const PrecisionUnattainable& e) {
    log << "precision unattainable (achieved " << format_number(e.achieved()) << "): " << e.what() << "\n";
    return kExitResource;
  } catch (const ResourceError& e) {
    log << "resource cap: " << e.what() << "\n";
    return kExitResource;
  } catch (const InvariantViolation& e) {
    log << "internal invariant violated: " << e.what() << "\n";
    return kExitInternal;
  } catch (const PreconditionError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const json::exception& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    log << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace cvp
