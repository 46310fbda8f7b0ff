#pragma once

// Pseudo-orbits and two concrete shadowing procedures:
//  * shifts: splice the first symbols of the pseudo-orbit states. For a
//    2^-m pseudo-orbit the spliced point stays within 2^-(m+1) of every state.
//  * piecewise-linear interval maps: forward filtering of the reachable sets
//    f(F_{t-1}) cap [x_t - eps, x_t + eps], then backward selection of a true
//    orbit through the surviving intervals. The backward pass runs along
//    contracting inverse branches, so the orbit is computed stably even where
//    forward iteration of a double would lose all precision.
// The shadowing contract d(f^i z, x_i) < eps is always checked after the fact.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cvp/error.hpp"
#include "cvp/random.hpp"
#include "cvp/systems.hpp"

namespace cvp {

template <class StateT>
struct PseudoOrbit {
  std::vector<StateT> states;
  double delta;
};

struct GapViolation {
  std::size_t index;
  double gap;
};

template <DynamicalSystem S>
std::optional<GapViolation> find_gap_violation(const S& sys, const std::vector<typename S::state_type>& states,
                                               double delta) {
  for (std::size_t i = 0; i + 1 < states.size(); ++i) {
    const double gap = sys.dist(sys.apply(states[i]), states[i + 1]);
    if (gap > delta) return GapViolation{i, gap};
  }
  return std::nullopt;
}

/// Checks d(f(x_i), x_{i+1}) <= delta; throws PseudoOrbitViolation at the first gap.
template <DynamicalSystem S>
PseudoOrbit<typename S::state_type> validate_pseudo(const S& sys, std::vector<typename S::state_type> states,
                                                    double delta) {
  require(states.size() >= 2, "a pseudo-orbit needs at least two states");
  require(delta >= 0.0, "delta must be nonnegative");
  if (auto v = find_gap_violation(sys, states, delta)) throw PseudoOrbitViolation(v->index, v->gap);
  return {std::move(states), delta};
}

/// a followed by b; valid when the seam gap is within the larger delta.
template <DynamicalSystem S>
PseudoOrbit<typename S::state_type> join_pseudo_orbits(const S& sys, const PseudoOrbit<typename S::state_type>& a,
                                                       const PseudoOrbit<typename S::state_type>& b) {
  auto states = a.states;
  states.insert(states.end(), b.states.begin(), b.states.end());
  return validate_pseudo(sys, std::move(states), std::max(a.delta, b.delta));
}

// ---------------------------------------------------------------------------
// Random pseudo-orbits

namespace detail {
inline Word random_admissible_word(const ShiftSpace& shift, Word start, std::size_t extra, CounterRng& rng) {
  const int k = shift.alphabet_size();
  if (start.empty()) {
    start.push_back(static_cast<Symbol>(rng.below(static_cast<std::uint64_t>(k))));
    if (extra > 0) --extra;
  }
  std::vector<Symbol> next;
  for (std::size_t i = 0; i < extra; ++i) {
    next.clear();
    for (Symbol b = 0; b < k; ++b)
      if (shift.allowed(start.back(), b)) next.push_back(b);
    start.push_back(next[rng.below(next.size())]);
  }
  return start;
}

/// Smallest m with 2^-m <= delta (0 when delta >= 1).
inline int agreement_depth(double delta) {
  if (delta >= 1.0) return 0;
  int m = 0;
  while (std::ldexp(1.0, -m) > delta) ++m;
  return m;
}
}  // namespace detail

/// Uniformly random admissible point: `length` random symbols, then an admissible cycle.
inline ShiftPoint random_point(const ShiftSpace& shift, CounterRng& rng, std::size_t length = 64) {
  return shift.close_word(detail::random_admissible_word(shift, {}, length, rng));
}

/// True orbit of x0 with each successor's coordinates from depth m on
/// resampled, where 2^-m <= delta. Deterministic per seed.
inline PseudoOrbit<ShiftPoint> perturbed_orbit(const ShiftSpace& shift, const ShiftPoint& x0, std::size_t n,
                                               double delta, std::uint64_t seed) {
  require(n >= 2, "perturbed_orbit needs n >= 2");
  require(delta >= 0.0, "delta must be nonnegative");
  if (delta == 0.0) return {orbit(shift, x0, n), 0.0};
  CounterRng rng(seed);
  constexpr std::size_t kFreshSymbols = 32;
  const int m = detail::agreement_depth(delta);
  std::vector<ShiftPoint> states{x0};
  for (std::size_t i = 1; i < n; ++i) {
    Word kept = shift.apply(states.back()).take(static_cast<std::size_t>(m));
    states.push_back(shift.close_word(detail::random_admissible_word(shift, std::move(kept), kFreshSymbols, rng)));
  }
  return {std::move(states), delta};
}

/// True orbit with i.i.d. uniform kicks in [-delta/2, delta/2], clamped to the domain.
template <PiecewiseLinearMap M>
PseudoOrbit<double> perturbed_orbit(const M& map, double x0, std::size_t n, double delta, std::uint64_t seed) {
  require(n >= 2, "perturbed_orbit needs n >= 2");
  require(delta >= 0.0, "delta must be nonnegative");
  const auto [lo, hi] = map.domain();
  CounterRng rng(seed);
  std::vector<double> states{x0};
  for (std::size_t i = 1; i < n; ++i) {
    double y = map.apply(states.back());
    if (delta > 0.0) y = std::clamp(y + rng.uniform(-0.5 * delta, 0.5 * delta), lo, hi);
    states.push_back(y);
  }
  return {std::move(states), delta};
}

// ---------------------------------------------------------------------------
// Shadowing

template <class StateT>
struct ShadowResult {
  StateT point;
  double max_deviation;
  std::vector<double> per_step;  ///< d(f^i point, states[i])
  /// Interval maps: the shadow orbit as computed by the backward pass, and the
  /// largest one-step defect |f(z_t) - z_{t+1}| along it.
  std::vector<StateT> trajectory = {};
  double orbit_defect = 0.0;
};

/// Splices z_i = first symbol of states[i], continuing with the last state.
inline ShadowResult<ShiftPoint> shadow_shift(const ShiftSpace& shift, const PseudoOrbit<ShiftPoint>& po) {
  const auto& s = po.states;
  require(!s.empty(), "empty pseudo-orbit");
  const ShiftPoint& last = s.back();
  Word prefix;
  prefix.reserve(s.size() - 1 + last.prefix_length());
  for (std::size_t i = 0; i + 1 < s.size(); ++i) prefix.push_back(s[i][0]);
  for (std::size_t i = 0; i < last.prefix_length(); ++i) prefix.push_back(last[i]);
  ShiftPoint z(std::move(prefix), last.shifted(last.prefix_length()).take(last.cycle_length()));
  if (!shift.admits(z)) throw InvariantViolation("spliced point is not admissible");

  ShadowResult<ShiftPoint> out{z, 0.0, {}};
  out.per_step.reserve(s.size());
  ShiftPoint zi = z;
  for (std::size_t i = 0; i < s.size(); ++i) {
    out.per_step.push_back(shift.dist(zi, s[i]));
    out.max_deviation = std::max(out.max_deviation, out.per_step.back());
    zi = zi.shifted();
  }
  return out;
}

struct ShadowFailure {
  std::size_t step;  ///< time at which the reachable set became empty
};

template <class StateT>
using ShadowOutcome = std::variant<ShadowResult<StateT>, ShadowFailure>;

inline constexpr std::size_t kDefaultIntervalCap = 4096;

namespace detail {
using Span = std::pair<double, double>;

inline std::vector<Span> merge_spans(std::vector<Span> v) {
  std::sort(v.begin(), v.end());
  std::vector<Span> out;
  for (const auto& s : v) {
    if (!out.empty() && s.first <= out.back().second) out.back().second = std::max(out.back().second, s.second);
    else out.push_back(s);
  }
  return out;
}

inline double distance_to(const std::vector<Span>& set, double x) {
  double best = INFINITY;
  for (const auto& [a, b] : set) best = std::min(best, x < a ? a - x : (x > b ? x - b : 0.0));
  return best;
}

/// Nearest point of the set to x.
inline double project_to(const std::vector<Span>& set, double x) {
  double best = x, gap = INFINITY;
  for (const auto& [a, b] : set) {
    const double p = std::clamp(x, a, b);
    if (std::abs(p - x) < gap) {
      gap = std::abs(p - x);
      best = p;
    }
  }
  return best;
}
}  // namespace detail

/// Forward reachable-set filtering plus backward orbit selection. Fails when
/// the reachable set empties; throws ResourceError if it fragments into more
/// than `cap` intervals.
template <PiecewiseLinearMap M>
ShadowOutcome<double> shadow_interval(const M& map, const PseudoOrbit<double>& po, double epsilon,
                                      std::size_t cap = kDefaultIntervalCap) {
  using detail::Span;
  require(epsilon > 0.0, "epsilon must be positive");
  const auto& x = po.states;
  require(!x.empty(), "empty pseudo-orbit");
  const auto [lo, hi] = map.domain();
  const auto pieces = map.pieces();
  auto window = [&](std::size_t t) { return Span{std::max(lo, x[t] - epsilon), std::min(hi, x[t] + epsilon)}; };

  std::vector<std::vector<Span>> reach(x.size());
  reach[0] = {window(0)};
  if (reach[0][0].first > reach[0][0].second) return ShadowFailure{0};
  for (std::size_t t = 1; t < x.size(); ++t) {
    const Span w = window(t);
    std::vector<Span> next;
    for (const auto& [a, b] : reach[t - 1])
      for (const auto& p : pieces) {
        const double u = std::max(a, p.x0), v = std::min(b, p.x1);
        if (u > v) continue;
        const double fu = p.at(u), fv = p.at(v);
        const double ilo = std::max(std::min(fu, fv), w.first), ihi = std::min(std::max(fu, fv), w.second);
        if (ilo <= ihi) next.push_back({ilo, ihi});
      }
    reach[t] = detail::merge_spans(std::move(next));
    if (reach[t].empty()) return ShadowFailure{t};
    if (reach[t].size() > cap) throw ResourceError("interval refinement exceeded its cap at step " + std::to_string(t));
  }

  // Midpoint of the surviving interval nearest the last state, then pull back.
  const std::size_t last = x.size() - 1;
  const Span* chosen = &reach[last].front();
  for (const auto& s : reach[last])
    if (detail::distance_to({s}, x[last]) < detail::distance_to({*chosen}, x[last])) chosen = &s;
  std::vector<double> z(x.size());
  z[last] = 0.5 * (chosen->first + chosen->second);
  for (std::size_t t = last; t-- > 0;) {
    double best = NAN, best_gap = INFINITY, best_dev = INFINITY;
    for (const auto& p : pieces) {
      if (p.y0 == p.y1 || z[t + 1] < p.image_lo() || z[t + 1] > p.image_hi()) continue;
      const double pre = std::clamp(p.preimage(z[t + 1]), p.x0, p.x1);
      const double gap = detail::distance_to(reach[t], pre);
      const double dev = std::abs(pre - x[t]);
      if (gap < best_gap - 1e-15 || (std::abs(gap - best_gap) <= 1e-15 && dev < best_dev)) {
        best = pre;
        best_gap = gap;
        best_dev = dev;
      }
    }
    if (std::isnan(best) || best_gap > 1e-9) throw InvariantViolation("backward pass lost the reachable set");
    // Inverses of contracting branches expand rounding error; snapping back
    // into the reachable set keeps it from compounding.
    z[t] = detail::project_to(reach[t], best);
  }

  ShadowResult<double> out{z[0], 0.0, {}, z, 0.0};
  for (std::size_t t = 0; t < x.size(); ++t) {
    out.per_step.push_back(map.dist(z[t], x[t]));
    out.max_deviation = std::max(out.max_deviation, out.per_step.back());
    if (t + 1 < x.size()) out.orbit_defect = std::max(out.orbit_defect, std::abs(map.apply(z[t]) - z[t + 1]));
  }
  if (!(out.max_deviation < epsilon)) return ShadowFailure{last};
  return out;
}

// ---------------------------------------------------------------------------
// Empirical shadowing modulus

struct ModulusRow {
  double delta;
  std::size_t successes;
  std::size_t trials;
  std::size_t resource_errors = 0;
  double rate() const { return static_cast<double>(successes) / static_cast<double>(trials); }
};

struct ModulusReport {
  double delta_hat;  ///< largest tested delta with success rate >= 95%; 0 if none
  std::vector<ModulusRow> table;
};

inline constexpr double kModulusPassRate = 0.95;

/// Shifts: scans delta = 1, 1/2, 1/4, ... and stops at the first passing value.
inline ModulusReport shadowing_modulus(const ShiftSpace& shift, double epsilon, std::size_t trials,
                                       std::size_t length, std::uint64_t seed) {
  require(trials >= 1, "shadowing_modulus needs at least one trial");
  require(epsilon > 0.0 && length >= 2, "shadowing_modulus needs epsilon > 0 and length >= 2");
  CounterRng root(seed);
  ModulusReport rep{0.0, {}};
  for (int j = 0; j <= 60; ++j) {
    const double delta = std::ldexp(1.0, -j);
    ModulusRow row{delta, 0, trials};
    for (std::size_t t = 0; t < trials; ++t) {
      CounterRng rng = root.fork(t);
      const ShiftPoint x0 = random_point(shift, rng);
      const auto po = perturbed_orbit(shift, x0, length, delta, rng());
      row.successes += shadow_shift(shift, po).max_deviation < epsilon;
    }
    rep.table.push_back(row);
    if (row.rate() >= kModulusPassRate) {
      rep.delta_hat = delta;
      break;
    }
  }
  return rep;
}

/// Interval maps: doubling/halving search for a bracket, then geometric bisection.
template <PiecewiseLinearMap M>
ModulusReport shadowing_modulus(const M& map, double epsilon, std::size_t trials, std::size_t length,
                                std::uint64_t seed, int bisection_steps = 8) {
  require(trials >= 1, "shadowing_modulus needs at least one trial");
  require(epsilon > 0.0 && length >= 2, "shadowing_modulus needs epsilon > 0 and length >= 2");
  const auto [lo, hi] = map.domain();
  CounterRng root(seed);
  ModulusReport rep{0.0, {}};
  auto run = [&](double delta) {
    ModulusRow row{delta, 0, trials};
    for (std::size_t t = 0; t < trials; ++t) {
      CounterRng rng = root.fork(t);
      const double x0 = rng.uniform(lo, hi);
      const auto po = perturbed_orbit(map, x0, length, delta, rng());
      try {
        row.successes += std::holds_alternative<ShadowResult<double>>(shadow_interval(map, po, epsilon));
      } catch (const ResourceError&) {
        ++row.resource_errors;
      }
    }
    rep.table.push_back(row);
    const bool pass = row.rate() >= kModulusPassRate;
    if (pass) rep.delta_hat = std::max(rep.delta_hat, delta);
    return pass;
  };

  double good = 0.0, bad = 0.0;
  double delta = epsilon;
  if (run(delta)) {
    good = delta;
    for (delta *= 2.0; delta <= hi - lo; delta *= 2.0) {
      if (!run(delta)) {
        bad = delta;
        break;
      }
      good = delta;
    }
    if (bad == 0.0) return rep;
  } else {
    bad = delta;
    for (delta *= 0.5; delta >= epsilon * 1e-9; delta *= 0.5) {
      if (run(delta)) {
        good = delta;
        break;
      }
      bad = delta;
    }
    if (good == 0.0) return rep;
  }
  for (int i = 0; i < bisection_steps; ++i) {
    const double mid = std::sqrt(good * bad);
    if (run(mid)) good = mid;
    else bad = mid;
  }
  return rep;
}

}  // namespace cvp
