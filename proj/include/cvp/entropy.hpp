#pragma once

// Counting-based entropy: (n, eps)-separated and spanning counts, Katok's
// N^nu(n, eps, delta) on shifts, and Birkhoff level-set word counts.
//
// Conventions: x, y are (n, eps)-separated when d_n(x, y) >= eps; c spans x
// when d_n(x, c) < eps. With eps = 2^-q on a shift, the Bowen ball
// B_n(x, 2^-q) is exactly the (n+q)-cylinder of x, so Katok counts reduce to
// sorting cylinder masses.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cvp/error.hpp"
#include "cvp/measures.hpp"
#include "cvp/systems.hpp"

namespace cvp {

enum class EntropyMethod { separated, spanning, katok, levelset_count };

inline std::string to_string(EntropyMethod m) {
  switch (m) {
    case EntropyMethod::separated: return "separated";
    case EntropyMethod::spanning: return "spanning";
    case EntropyMethod::katok: return "katok";
    case EntropyMethod::levelset_count: return "levelset_count";
  }
  return "unknown";
}

struct EntropyRow {
  std::size_t n;
  std::uint64_t count;
  std::optional<double> rate;  ///< nullopt when count == 0 (log 0)
};

struct EntropyEstimate {
  std::optional<double> value;  ///< rate at the largest n; nullopt marks an empty set
  std::size_t n_used;
  double epsilon;
  EntropyMethod method;
  std::vector<EntropyRow> diagnostics;

  bool empty() const { return !value.has_value(); }
};

inline constexpr std::size_t kExactSolverLimit = 24;

struct SeparatedSet {
  std::size_t count;
  std::vector<std::size_t> witnesses;  ///< indices into the candidate list
  bool exact;                          ///< false: greedy lower bound
};

struct SpanningSet {
  std::size_t count;
  std::vector<std::size_t> centers;  ///< indices into the target list
  bool exact;                        ///< false: greedy upper bound
};

namespace detail {
inline void max_independent(std::uint32_t candidates, std::uint32_t chosen, const std::vector<std::uint32_t>& conflict,
                            std::uint32_t& best) {
  if (std::popcount(chosen) + std::popcount(candidates) <= std::popcount(best)) return;
  if (candidates == 0) {
    best = chosen;
    return;
  }
  const int v = std::countr_zero(candidates);
  const std::uint32_t bit = std::uint32_t{1} << v;
  max_independent(candidates & ~conflict[v] & ~bit, chosen | bit, conflict, best);
  max_independent(candidates & ~bit, chosen, conflict, best);
}

inline void min_cover(std::uint32_t uncovered, std::uint32_t chosen, const std::vector<std::uint32_t>& covers,
                      std::uint32_t& best, int& best_count) {
  if (uncovered == 0) {
    if (std::popcount(chosen) < best_count) {
      best = chosen;
      best_count = std::popcount(chosen);
    }
    return;
  }
  if (std::popcount(chosen) + 1 >= best_count) return;
  const int e = std::countr_zero(uncovered);
  for (std::size_t c = 0; c < covers.size(); ++c)
    if (covers[c] & (std::uint32_t{1} << e))
      min_cover(uncovered & ~covers[c], chosen | (std::uint32_t{1} << c), covers, best, best_count);
}

inline std::vector<std::size_t> bits_to_indices(std::uint32_t mask) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; mask; ++i, mask >>= 1)
    if (mask & 1u) out.push_back(i);
  return out;
}
}  // namespace detail

/// Largest (n, eps)-separated subset of the candidates. Exact branch and bound
/// on the conflict graph up to 24 candidates, greedy beyond.
template <DynamicalSystem S>
SeparatedSet max_separated(const S& sys, const std::vector<typename S::state_type>& candidates, std::size_t n,
                           double epsilon) {
  require(epsilon > 0.0, "epsilon must be positive");
  require(!candidates.empty(), "max_separated needs candidates");
  const std::size_t m = candidates.size();
  auto conflict = [&](std::size_t a, std::size_t b) { return dist_n(sys, candidates[a], candidates[b], n) < epsilon; };
  if (m <= kExactSolverLimit) {
    std::vector<std::uint32_t> adj(m, 0);
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = a + 1; b < m; ++b)
        if (conflict(a, b)) {
          adj[a] |= std::uint32_t{1} << b;
          adj[b] |= std::uint32_t{1} << a;
        }
    std::uint32_t best = 0;
    detail::max_independent((m == 32 ? ~0u : (std::uint32_t{1} << m) - 1), 0, adj, best);
    auto w = detail::bits_to_indices(best);
    return {w.size(), w, true};
  }
  std::vector<std::size_t> chosen;
  for (std::size_t a = 0; a < m; ++a) {
    bool ok = true;
    for (std::size_t c : chosen)
      if (conflict(a, c)) {
        ok = false;
        break;
      }
    if (ok) chosen.push_back(a);
  }
  return {chosen.size(), chosen, false};
}

/// Smallest subset of the targets whose Bowen balls B_n(c, eps) cover all
/// targets. Exact up to 24 targets, greedy beyond.
template <DynamicalSystem S>
SpanningSet min_spanning(const S& sys, const std::vector<typename S::state_type>& targets, std::size_t n,
                         double epsilon) {
  require(epsilon > 0.0, "epsilon must be positive");
  const std::size_t m = targets.size();
  if (m == 0) return {0, {}, true};
  std::vector<std::vector<char>> covers(m, std::vector<char>(m, 0));
  for (std::size_t c = 0; c < m; ++c)
    for (std::size_t t = 0; t < m; ++t) covers[c][t] = (c == t) || dist_n(sys, targets[c], targets[t], n) < epsilon;
  if (m <= kExactSolverLimit) {
    std::vector<std::uint32_t> masks(m, 0);
    for (std::size_t c = 0; c < m; ++c)
      for (std::size_t t = 0; t < m; ++t)
        if (covers[c][t]) masks[c] |= std::uint32_t{1} << t;
    std::uint32_t best = (m == 32 ? ~0u : (std::uint32_t{1} << m) - 1);
    int best_count = static_cast<int>(m) + 1;
    detail::min_cover(best, 0, masks, best, best_count);
    auto c = detail::bits_to_indices(best);
    return {c.size(), c, true};
  }
  std::vector<char> covered(m, 0);
  std::vector<std::size_t> centers;
  for (std::size_t left = m; left > 0;) {
    std::size_t pick = 0, gain = 0;
    for (std::size_t c = 0; c < m; ++c) {
      std::size_t g = 0;
      for (std::size_t t = 0; t < m; ++t) g += covers[c][t] && !covered[t];
      if (g > gain) {
        gain = g;
        pick = c;
      }
    }
    centers.push_back(pick);
    for (std::size_t t = 0; t < m; ++t)
      if (covers[pick][t] && !covered[t]) {
        covered[t] = 1;
        --left;
      }
  }
  return {centers.size(), centers, false};
}

// ---------------------------------------------------------------------------
// Katok counts on shifts

inline constexpr std::size_t kMaxCylinderLength = 26;

namespace detail {
/// Multiplicities of (n)-words grouped by first symbol, last symbol and
/// transition counts; every word in a class has the same Markov mass.
struct MassClass {
  double mass;
  std::uint64_t multiplicity;
};

inline std::vector<MassClass> markov_mass_classes(const ShiftSpace& shift, const MarkovMeasure& m, std::size_t length) {
  const int k = m.alphabet_size();
  const auto& p = m.stochastic();
  const auto& pi = m.stationary();
  // key layout: [first, last, count(0,0), count(0,1), ...]
  std::map<std::vector<int>, std::uint64_t> level;
  for (int a = 0; a < k; ++a)
    if (pi[a] > 0.0) {
      std::vector<int> key(2 + k * k, 0);
      key[0] = key[1] = a;
      level[key] = 1;
    }
  for (std::size_t len = 1; len < length; ++len) {
    std::map<std::vector<int>, std::uint64_t> next;
    for (const auto& [key, mult] : level) {
      const int last = key[1];
      for (int b = 0; b < k; ++b) {
        if (p[last][b] <= 0.0 || !shift.allowed(last, b)) continue;
        auto nk = key;
        nk[1] = b;
        ++nk[2 + last * k + b];
        next[nk] += mult;
      }
    }
    if (next.size() > 5'000'000) throw ResourceError("too many cylinder mass classes");
    level = std::move(next);
  }
  std::vector<MassClass> out;
  out.reserve(level.size());
  for (const auto& [key, mult] : level) {
    double mass = pi[key[0]];
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b) {
        const int c = key[2 + a * k + b];
        if (c > 0) mass *= std::pow(p[a][b], c);
      }
    if (mass > 0.0) out.push_back({mass, mult});
  }
  std::sort(out.begin(), out.end(), [](const MassClass& a, const MassClass& b) { return a.mass > b.mass; });
  return out;
}
}  // namespace detail

/// Exact N^m(n, 2^-q, delta): the fewest (n+q)-cylinders whose total mass
/// exceeds 1 - delta.
inline std::uint64_t katok_count(const ShiftSpace& shift, const MarkovMeasure& m, std::size_t n, int q, double delta) {
  require(n >= 1 && q >= 0, "katok_count needs n >= 1 and q >= 0");
  require(n + static_cast<std::size_t>(q) <= kMaxCylinderLength, "n + q exceeds the exhaustive enumeration limit");
  require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
  require(m.respects(shift), "measure charges transitions the shift forbids");
  const auto classes = detail::markov_mass_classes(shift, m, n + static_cast<std::size_t>(q));
  const long double target = 1.0L - static_cast<long double>(delta);
  long double cumulative = 0.0L;
  std::uint64_t count = 0;
  for (const auto& c : classes) {
    const long double block = static_cast<long double>(c.mass) * static_cast<long double>(c.multiplicity);
    if (cumulative + block > target) {
      const auto need = static_cast<std::uint64_t>(std::floor((target - cumulative) / c.mass)) + 1;
      return count + std::min(need, c.multiplicity);
    }
    cumulative += block;
    count += c.multiplicity;
  }
  return count;  // total mass never exceeded 1 - delta numerically: every cylinder needed
}

/// Rates (1/n) log N^m(n, 2^-q, delta) over an increasing n grid; the final
/// rate stands in for the liminf.
inline EntropyEstimate katok_entropy(const ShiftSpace& shift, const MarkovMeasure& m, int q, double delta,
                                     const std::vector<std::size_t>& n_grid) {
  require(!n_grid.empty() && std::is_sorted(n_grid.begin(), n_grid.end()) &&
              std::adjacent_find(n_grid.begin(), n_grid.end()) == n_grid.end(),
          "n grid must be strictly increasing");
  EntropyEstimate est{std::nullopt, n_grid.back(), std::ldexp(1.0, -q), EntropyMethod::katok, {}};
  for (std::size_t n : n_grid) {
    const auto c = katok_count(shift, m, n, q, delta);
    est.diagnostics.push_back({n, c, std::log(static_cast<double>(c)) / static_cast<double>(n)});
  }
  est.value = est.diagnostics.back().rate;
  return est;
}

// ---------------------------------------------------------------------------
// Birkhoff level sets

/// Real interval with open or closed ends.
struct Interval {
  double lo;
  double hi;
  bool closed = false;

  bool contains(double x) const { return closed ? (x >= lo && x <= hi) : (x > lo && x < hi); }
  bool well_formed() const {
    return !std::isnan(lo) && !std::isnan(hi) && (closed ? lo <= hi : lo < hi);
  }
};

struct LevelSetQuery {
  LocallyConstant phi;
  Interval target;
  std::size_t n;
};

/// Number of admissible words of length n + depth - 1 whose Birkhoff average
/// (1/n) sum_{i<n} phi(w_i .. w_{i+depth-1}) lies in the target interval,
/// reported as the rate (1/n) log(count).
inline EntropyEstimate levelset_count(const ShiftSpace& shift, const LevelSetQuery& query) {
  const auto& phi = query.phi;
  const std::size_t n = query.n;
  const int d = phi.depth();
  const int k = shift.alphabet_size();
  require(query.target.well_formed(), "malformed target interval");
  require(phi.alphabet_size() == k, "observable and shift alphabets differ");
  require(d >= 1 && n >= 1, "level sets need depth >= 1 and n >= 1");
  require(n + static_cast<std::size_t>(d) <= kMaxCylinderLength, "n + depth exceeds the enumeration limit");

  // Distinct observable values; the DP tracks how often each is visited.
  std::vector<double> distinct(phi.values());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<int> value_id(phi.values().size());
  for (std::size_t i = 0; i < value_id.size(); ++i)
    value_id[i] = static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), phi.values()[i]) - distinct.begin());
  const int v = static_cast<int>(distinct.size());

  // key layout: [context symbols (d-1)..., value counts (v)...]
  std::map<std::vector<int>, std::uint64_t> level;
  {
    const std::size_t contexts = detail::checked_table_size(k, d - 1);
    Word w(d - 1, 0);
    for (std::size_t idx = 0; idx < contexts; ++idx) {
      std::size_t r = idx;
      for (int i = d - 2; i >= 0; --i) {
        w[i] = static_cast<Symbol>(r % k);
        r /= k;
      }
      if (!shift.admissible(w)) continue;
      std::vector<int> key(w.begin(), w.end());
      key.resize(static_cast<std::size_t>(d - 1 + v), 0);
      level[key] = 1;
    }
  }
  Word window(d);
  for (std::size_t step = 0; step < n; ++step) {
    std::map<std::vector<int>, std::uint64_t> next;
    for (const auto& [key, mult] : level) {
      for (Symbol b = 0; b < k; ++b) {
        if (d > 1 && !shift.allowed(key[d - 2], b)) continue;
        for (int i = 0; i < d - 1; ++i) window[i] = key[i];
        window[d - 1] = b;
        auto nk = key;
        for (int i = 0; i + 1 < d - 1; ++i) nk[i] = key[i + 1];
        if (d > 1) nk[d - 2] = b;
        ++nk[static_cast<std::size_t>(d - 1 + value_id[phi.index(window)])];
        auto& slot = next[nk];
        if (__builtin_add_overflow(slot, mult, &slot)) throw ResourceError("level-set count overflows 64 bits");
      }
    }
    level = std::move(next);
  }

  std::uint64_t count = 0;
  for (const auto& [key, mult] : level) {
    double sum = 0.0;
    for (int j = 0; j < v; ++j) sum += key[static_cast<std::size_t>(d - 1 + j)] * distinct[j];
    if (query.target.contains(sum / static_cast<double>(n)))
      if (__builtin_add_overflow(count, mult, &count)) throw ResourceError("level-set count overflows 64 bits");
  }
  EntropyEstimate est{std::nullopt, n, 0.0, EntropyMethod::levelset_count, {}};
  if (count > 0) est.value = std::log(static_cast<double>(count)) / static_cast<double>(n);
  est.diagnostics.push_back({n, count, est.value});
  return est;
}

}  // namespace cvp
