#pragma once

// Orbit weaving on shifts. Long typical blocks of each ergodic component are
// chained with short transitive connectors according to an integer schedule;
// the resulting pseudo-orbit is shadowed by splicing, and the shadow point's
// empirical measures are measured against the target.
//
// Conventions for a cell depth d (default 1):
//   partition xi          depth-d cylinders, diameter 2^-d
//   pseudo-orbit delta    2^-d (every seam lands in a common cell)
//   separation epsilon    2^-(d-1), so blocks are separated iff their first
//                         t + d - 1 symbols differ
//   splice guarantee      delta / 2

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cvp/entropy.hpp"
#include "cvp/error.hpp"
#include "cvp/measures.hpp"
#include "cvp/random.hpp"
#include "cvp/shadowing.hpp"
#include "cvp/systems.hpp"

namespace cvp {

// ---------------------------------------------------------------------------
// Sampling

/// A path of the Markov chain started from its stationary law.
inline Word sample_markov_word(const MarkovMeasure& m, std::size_t length, CounterRng& rng) {
  auto draw = [&](const std::vector<double>& probs) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t a = 0; a < probs.size(); ++a) {
      acc += probs[a];
      if (u < acc && probs[a] > 0.0) return static_cast<Symbol>(a);
    }
    // rounding left u above the cumulative sum: last symbol with positive mass
    for (std::size_t a = probs.size(); a-- > 0;)
      if (probs[a] > 0.0) return static_cast<Symbol>(a);
    return Symbol{0};
  };
  Word w;
  w.reserve(length);
  if (length == 0) return w;
  w.push_back(draw(m.stationary()));
  while (w.size() < length) w.push_back(draw(m.stochastic()[w.back()]));
  return w;
}

/// Largest integer in [n, (1 + gamma) n]; the slack absorbs rounding in the product.
inline std::size_t return_window_end(std::size_t n, double gamma) {
  return static_cast<std::size_t>(std::floor((1.0 + gamma) * static_cast<double>(n) + 1e-9));
}

// ---------------------------------------------------------------------------
// Block selection

enum class BoundCheck { passed, failed, vacuous, unavailable };

inline std::string to_string(BoundCheck b) {
  switch (b) {
    case BoundCheck::passed: return "passed";
    case BoundCheck::failed: return "failed";
    case BoundCheck::vacuous: return "vacuous";
    case BoundCheck::unavailable: return "unavailable";
  }
  return "unknown";
}

struct BlockOptions {
  int cell_depth = 1;
  int truncation = 16;  ///< size of the cylinder family used in the empirical test
  double katok_delta = 0.1;
  std::size_t katok_max_n = 20;
};

struct BlockFamily {
  MarkovMeasure measure;
  int level;           ///< k
  std::size_t t;       ///< sampled length t_k
  std::size_t n;       ///< block length n(k,j), the chosen return time
  Word cell;           ///< the partition element A holding every block
  std::vector<ShiftPoint> blocks;  ///< W: start points, pairwise (n, 2^-q)-separated
  std::size_t samples = 0;
  std::size_t accepted = 0;   ///< samples satisfying both return-set conditions
  std::size_t separated = 0;  ///< |S|
  std::vector<std::size_t> v_counts;  ///< |V_q| for q = t .. window end
  std::optional<double> katok_rate;
  double log_bound = 0.0;     ///< n (1 - gamma)(h - 4 gamma)
  BoundCheck bound_check = BoundCheck::unavailable;

  double acceptance_rate() const {
    return samples == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(samples);
  }
};

/// Samples m-typical words and keeps those in the return set: some return to
/// the starting cell at a time q in [n, (1+gamma)n], and D(E_m(x), m) < 1/k for
/// every m in the same window. Then S = a maximal (n, 2^-q)-separated subset,
/// the return time with the most members of S, and the fullest cell.
inline BlockFamily select_blocks(const ShiftSpace& shift, const MarkovMeasure& m, std::size_t n, int q, int k,
                                 double gamma, std::size_t budget, std::uint64_t seed, const BlockOptions& opt = {}) {
  require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
  require(n >= 1 && k >= 1 && q >= 0, "select_blocks needs n >= 1, k >= 1, q >= 0");
  require(opt.cell_depth >= 1, "cell depth must be positive");
  require(m.alphabet_size() == shift.alphabet_size(), "measure and shift alphabets differ");
  require(m.respects(shift), "measure charges transitions the shift forbids");

  const auto family = TestFunctionFamily::cylinders(shift.alphabet_size(), opt.truncation);
  const auto target = moments(m, family);
  const auto& fs = family.functions();
  const std::size_t d = static_cast<std::size_t>(opt.cell_depth);
  const std::size_t hi = return_window_end(n, gamma);
  const std::size_t sample_len = hi + std::max(family.max_depth(), d) + static_cast<std::size_t>(q);
  const double radius = 1.0 / k;

  BlockFamily out{m, k, n, n, {}, {}, 0, 0, 0, {}, std::nullopt, 0.0, BoundCheck::unavailable};
  CounterRng rng(seed);
  std::vector<Word> accepted;
  std::vector<std::vector<std::uint32_t>> prefix(fs.size(), std::vector<std::uint32_t>(hi + 1));
  for (std::size_t draw = 0; draw < budget; ++draw) {
    ++out.samples;
    Word w = sample_markov_word(m, sample_len, rng);

    bool returns = false;
    for (std::size_t r = n; r <= hi && !returns; ++r)
      returns = std::equal(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(d), w.begin() + static_cast<std::ptrdiff_t>(r));
    if (!returns) continue;

    for (std::size_t f = 0; f < fs.size(); ++f) {
      const Word& c = std::get<Cylinder>(fs[f]).word;
      for (std::size_t i = 0; i < hi; ++i)
        prefix[f][i + 1] = prefix[f][i] + std::equal(c.begin(), c.end(), w.begin() + static_cast<std::ptrdiff_t>(i));
    }
    bool typical = true;
    std::vector<double> mom(fs.size());
    for (std::size_t len = n; len <= hi && typical; ++len) {
      for (std::size_t f = 0; f < fs.size(); ++f) mom[f] = static_cast<double>(prefix[f][len]) / static_cast<double>(len);
      typical = distance_from_moments(mom, target) < radius;
    }
    if (!typical) continue;
    ++out.accepted;
    accepted.push_back(std::move(w));
  }
  if (accepted.empty())
    throw ResourceError("block budget exhausted: " + std::to_string(out.samples) + " samples, 0 accepted");

  // On a shift, (n, 2^-q)-separation is inequality of the first n + q symbols,
  // an equivalence, so keeping one word per prefix class is a maximum separated set.
  std::set<Word> seen;
  std::vector<const Word*> s;
  for (const auto& w : accepted)
    if (seen.insert(Word(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(n + q))).second) s.push_back(&w);
  out.separated = s.size();

  std::size_t best_q = n, best_count = 0;
  for (std::size_t r = n; r <= hi; ++r) {
    std::size_t c = 0;
    for (const Word* w : s)
      c += std::equal(w->begin(), w->begin() + static_cast<std::ptrdiff_t>(d), w->begin() + static_cast<std::ptrdiff_t>(r));
    out.v_counts.push_back(c);
    if (c > best_count) {
      best_count = c;
      best_q = r;
    }
  }
  out.n = best_q;

  std::map<Word, std::vector<const Word*>> cells;
  for (const Word* w : s)
    if (std::equal(w->begin(), w->begin() + static_cast<std::ptrdiff_t>(d), w->begin() + static_cast<std::ptrdiff_t>(best_q)))
      cells[Word(w->begin(), w->begin() + static_cast<std::ptrdiff_t>(d))].push_back(w);
  const std::vector<const Word*>* fullest = nullptr;
  for (const auto& [cell, members] : cells)
    if (!fullest || members.size() > fullest->size()) {
      fullest = &members;
      out.cell = cell;
    }
  for (const Word* w : *fullest) out.blocks.push_back(shift.close_word(*w));

  const std::size_t katok_n =
      std::max<std::size_t>(1, std::min(opt.katok_max_n, kMaxCylinderLength - static_cast<std::size_t>(q)));
  try {
    out.katok_rate = katok_entropy(shift, m, q, opt.katok_delta, {katok_n}).value;
  } catch (const ResourceError&) {
    out.katok_rate = std::nullopt;
  }
  if (out.katok_rate) {
    out.log_bound = static_cast<double>(out.n) * (1.0 - gamma) * (*out.katok_rate - 4.0 * gamma);
    if (out.log_bound <= 0.0) out.bound_check = BoundCheck::vacuous;
    else
      out.bound_check = std::log(static_cast<double>(out.blocks.size())) >= out.log_bound ? BoundCheck::passed
                                                                                           : BoundCheck::failed;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Connectors

struct Connector {
  std::size_t s;  ///< steps from the source cell to the target cell, s >= 1
  Word word;      ///< s + d symbols: source cell word ... target cell word
};

/// Lexicographically smallest shortest walk in the d-block graph from one
/// depth-d cylinder to another, with at least one step.
inline Connector connector(const ShiftSpace& shift, const Word& from_cell, const Word& to_cell) {
  const std::size_t d = from_cell.size();
  require(d >= 1 && to_cell.size() == d, "connector cells must be words of the same positive length");
  require(std::all_of(from_cell.begin(), from_cell.end(), [&](Symbol a) { return shift.valid_symbol(a); }) &&
              std::all_of(to_cell.begin(), to_cell.end(), [&](Symbol a) { return shift.valid_symbol(a); }),
          "connector cell has a symbol outside the alphabet");
  require(shift.admissible(from_cell) && shift.admissible(to_cell), "connector cell is not admissible");
  const std::size_t k = static_cast<std::size_t>(shift.alphabet_size());
  std::size_t nodes = 1;
  for (std::size_t i = 0; i < d; ++i) {
    require(nodes <= (std::size_t{1} << 22) / k, "cell depth too large for the block graph");
    nodes *= k;
  }
  auto encode = [&](std::span<const Symbol> w) {
    std::size_t c = 0;
    for (Symbol a : w) c = c * k + static_cast<std::size_t>(a);
    return c;
  };
  const std::size_t top = nodes / k;  // weight of the leading symbol
  auto successor = [&](std::size_t u, Symbol b) { return (u % top) * k + static_cast<std::size_t>(b); };
  auto last = [&](std::size_t u) { return static_cast<Symbol>(u % k); };
  auto node_ok = [&](std::size_t u) {
    Word w(d);
    for (std::size_t i = d; i-- > 0; u /= k) w[i] = static_cast<Symbol>(u % k);
    return shift.admissible(w);
  };

  // Distances to the target over the reversed graph.
  const std::size_t source = encode(from_cell), target = encode(to_cell);
  constexpr std::size_t kInf = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> dist(nodes, kInf);
  std::vector<char> valid(nodes);
  for (std::size_t u = 0; u < nodes; ++u) valid[u] = node_ok(u);
  std::vector<std::vector<std::size_t>> preds(nodes);
  for (std::size_t u = 0; u < nodes; ++u)
    if (valid[u])
      for (Symbol b = 0; b < static_cast<Symbol>(k); ++b)
        if (shift.allowed(last(u), b) && valid[successor(u, b)]) preds[successor(u, b)].push_back(u);
  std::queue<std::size_t> frontier;
  dist[target] = 0;
  frontier.push(target);
  while (!frontier.empty()) {
    const std::size_t v = frontier.front();
    frontier.pop();
    for (std::size_t u : preds[v])
      if (dist[u] == kInf) {
        dist[u] = dist[v] + 1;
        frontier.push(u);
      }
  }
  std::size_t best = kInf;
  for (Symbol b = 0; b < static_cast<Symbol>(k); ++b)
    if (shift.allowed(last(source), b) && valid[successor(source, b)] && dist[successor(source, b)] != kInf)
      best = std::min(best, dist[successor(source, b)] + 1);
  if (best == kInf) throw InvariantViolation("no admissible connector between the cells (shift not irreducible)");

  Connector out{best, from_cell};
  std::size_t u = source;
  for (std::size_t remaining = best; remaining > 0; --remaining)
    for (Symbol b = 0; b < static_cast<Symbol>(k); ++b) {
      const std::size_t v = successor(u, b);
      if (shift.allowed(last(u), b) && valid[v] && dist[v] == remaining - 1) {
        out.word.push_back(b);
        u = v;
        break;
      }
    }
  return out;
}

/// Connectors between every pair of (level, measure) cells. cells[k-1][j-1].
class ConnectorTable {
 public:
  ConnectorTable(const ShiftSpace& shift, const std::vector<std::vector<Word>>& cells) {
    for (const auto& level : cells) {
      start_.push_back(flat_.size());
      for (const auto& c : level) flat_.push_back(c);
    }
    start_.push_back(flat_.size());
    table_.resize(flat_.size());
    for (std::size_t a = 0; a < flat_.size(); ++a)
      for (std::size_t b = 0; b < flat_.size(); ++b) table_[a].push_back(connector(shift, flat_[a], flat_[b]));
  }

  int levels() const { return static_cast<int>(start_.size()) - 1; }
  std::size_t measures(int k) const { return start_[k] - start_[k - 1]; }
  const Connector& at(int k1, std::size_t j1, int k2, std::size_t j2) const {
    return table_[index(k1, j1)][index(k2, j2)];
  }
  std::uint64_t operator()(int k1, std::size_t j1, int k2, std::size_t j2) const { return at(k1, j1, k2, j2).s; }
  const Word& cell(int k, std::size_t j) const { return flat_[index(k, j)]; }

 private:
  std::size_t index(int k, std::size_t j) const {
    if (k < 1 || k > levels() || j < 1 || j > measures(k)) throw PreconditionError("connector index out of range");
    return start_[k - 1] + j - 1;
  }
  std::vector<std::size_t> start_;
  std::vector<Word> flat_;
  std::vector<std::vector<Connector>> table_;
};

// ---------------------------------------------------------------------------
// Schedule

namespace detail {
inline std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b, int level, std::uint64_t cap) {
  std::uint64_t r;
  if (__builtin_mul_overflow(a, b, &r)) throw ScheduleOverflow("schedule arithmetic overflow", level, cap);
  return r;
}
inline std::uint64_t checked_add(std::uint64_t a, std::uint64_t b, int level, std::uint64_t cap) {
  std::uint64_t r;
  if (__builtin_add_overflow(a, b, &r)) throw ScheduleOverflow("schedule arithmetic overflow", level, cap);
  return r;
}
inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return a / b + (a % b != 0); }
}  // namespace detail

struct ScheduleCheck {
  std::string name;
  int level;
  bool ok;
};

/// All integers of the construction. Levels and measures are 1-based in the
/// accessors; vectors are indexed from 0.
struct WeaveSchedule {
  int k_max = 0;
  std::vector<std::vector<Rational>> a;          ///< a_{k,j}
  std::vector<std::vector<std::uint64_t>> n;     ///< n(k,j)
  std::vector<std::vector<Rational>> C;          ///< a_{k,j} / n(k,j)
  std::vector<std::vector<std::uint64_t>> reps;  ///< N_k C_{k,j}
  std::vector<std::uint64_t> N, X, Y, T;
  std::vector<std::uint64_t> level_connector;  ///< s(k,1,k+1,1)
  std::vector<std::vector<std::uint64_t>> cycle_connector;  ///< s(k,j,k,j+1), wrapping to 1
  std::vector<std::uint64_t> connector_sum;  ///< the connector sum bounding N_k / k
  std::vector<std::uint64_t> M;         ///< M_1 .. M_{k_max+1}
  std::vector<std::vector<std::uint64_t>> M_ki;               ///< [k][i]
  std::vector<std::vector<std::vector<std::uint64_t>>> M_kij;  ///< [k][i][j]
  double epsilon = 1.0, delta_prime = 0.5, diam_xi = 0.5, splice_bound = 0.25;
  std::vector<ScheduleCheck> checks;

  std::size_t measures(int k) const { return a[k - 1].size(); }
  std::uint64_t length() const { return M.back(); }
  std::uint64_t offset(int q, std::uint64_t i, std::size_t j, std::uint64_t t) const {
    if (q < 1 || q > k_max || i < 1 || i > T[q - 1] || j < 1 || j > measures(q) || t < 1 || t > reps[q - 1][j - 1])
      throw PreconditionError("offset index out of range");
    return M_kij[q - 1][i - 1][j - 1] + (t - 1) * n[q - 1][j - 1];
  }
  bool certified() const {
    return std::all_of(checks.begin(), checks.end(), [](const ScheduleCheck& c) { return c.ok; });
  }
};

/// Recomputes every schedule invariant from the stored integers.
inline std::vector<ScheduleCheck> certify(const WeaveSchedule& w, const ConnectorTable& s) {
  std::vector<ScheduleCheck> out;
  using Wide = unsigned __int128;
  for (int k = 1; k <= w.k_max; ++k) {
    const auto K = static_cast<std::size_t>(k - 1);
    bool integral = true;
    Rational total = 0;
    for (std::size_t j = 0; j < w.a[K].size(); ++j) {
      const Rational r = Rational(static_cast<std::int64_t>(w.N[K])) * w.C[K][j];
      integral = integral && r.denominator() == 1 && static_cast<std::uint64_t>(r.numerator()) == w.reps[K][j];
      total += r * Rational(static_cast<std::int64_t>(w.n[K][j]));
    }
    out.push_back({"integrality", k, integral});
    std::uint64_t sum = 0;
    for (int r1 = 1; r1 <= k + 1; ++r1)
      for (std::size_t j1 = 1; j1 <= s.measures(r1); ++j1)
        for (int r2 = 1; r2 <= k + 1; ++r2)
          for (std::size_t j2 = 1; j2 <= s.measures(r2); ++j2) sum += s(r1, j1, r2, j2);
    out.push_back({"connector budget", k, static_cast<Wide>(w.N[K]) >= static_cast<Wide>(k) * sum});
    std::uint64_t x = 0;
    const std::size_t sk = w.measures(k);
    for (std::size_t j = 1; j < sk; ++j) x += s(k, j, k, j + 1);
    x += s(k, sk, k, 1);
    out.push_back({"X", k, x == w.X[K]});
    out.push_back({"level length", k, w.Y[K] == w.N[K] + w.X[K] && total == Rational(static_cast<std::int64_t>(w.N[K]))});
    // N/Y >= 1 - 1/k  <=>  k N >= (k - 1) Y
    out.push_back({"block share", k, static_cast<Wide>(k) * w.N[K] >= static_cast<Wide>(k - 1) * w.Y[K]});
    if (k >= 2) out.push_back({"T increasing", k, w.T[K] > w.T[K - 1]});
  }
  // level growth at k = 1 .. k_max - 1; both inequalities involve level k + 1.
  for (int k = 1; k < w.k_max; ++k) {
    Wide yt = 0, yts = 0;
    for (int r = 1; r <= k; ++r) {
      yt += static_cast<Wide>(w.Y[r - 1]) * w.T[r - 1];
      yts += static_cast<Wide>(w.Y[r - 1]) * w.T[r - 1] + s(r, 1, r + 1, 1);
    }
    out.push_back({"level growth first", k, static_cast<Wide>(k + 1) * w.Y[k] <= yt});
    out.push_back({"level growth second", k, static_cast<Wide>(k + 1) * yts <= static_cast<Wide>(w.Y[k]) * w.T[k]});
  }
  // Offset recurrences.
  bool offsets = !w.M.empty() && w.M[0] == 0;
  for (int q = 1; q <= w.k_max && offsets; ++q) {
    const auto Q = static_cast<std::size_t>(q - 1);
    offsets = w.M[Q + 1] == w.M[Q] + w.T[Q] * w.Y[Q] + s(q, 1, q + 1, 1);
    for (std::uint64_t i = 1; i <= w.T[Q] && offsets; ++i) {
      offsets = w.M_ki[Q][i - 1] == w.M[Q] + (i - 1) * w.Y[Q];
      std::uint64_t acc = w.M_ki[Q][i - 1];
      for (std::size_t j = 1; j <= w.measures(q) && offsets; ++j) {
        offsets = w.M_kij[Q][i - 1][j - 1] == acc;
        acc += w.reps[Q][j - 1] * w.n[Q][j - 1] + s(q, j, q, j == w.measures(q) ? 1 : j + 1);
      }
      offsets = offsets && acc == w.M_ki[Q][i - 1] + w.Y[Q];
    }
  }
  out.push_back({"offsets", 0, offsets});
  return out;
}

/// Smallest N_k meeting integrality and the connector budget; X_k, Y_k by definition;
/// T_k the smallest strictly increasing values meeting level growth wherever both
/// sides are defined; offsets materialized. Throws ScheduleOverflow when the
/// orbit length would exceed `length_cap`, naming the first level that does.
/// a and n cover levels 1..k_max; `s` covers levels 1..k_max+1.
inline WeaveSchedule build_schedule(const std::vector<std::vector<Rational>>& a,
                                    const std::vector<std::vector<std::uint64_t>>& n, const ConnectorTable& s,
                                    int k_max, std::uint64_t length_cap = 1'000'000) {
  require(k_max >= 1, "k_max must be at least 1");
  require(a.size() >= static_cast<std::size_t>(k_max) && n.size() >= static_cast<std::size_t>(k_max),
          "schedule needs coefficients and block lengths for every level");
  require(s.levels() >= k_max + 1, "connector table must cover level k_max + 1");
  WeaveSchedule w;
  w.k_max = k_max;
  const std::uint64_t cap = length_cap;
  for (int k = 1; k <= k_max; ++k) {
    const auto K = static_cast<std::size_t>(k - 1);
    require(!a[K].empty() && a[K].size() == n[K].size() && a[K].size() == s.measures(k),
            "level " + std::to_string(k) + " has inconsistent sizes");
    Rational total = 0;
    for (const auto& r : a[K]) {
      require(r > Rational(0), "coefficients must be positive");
      total += r;
    }
    require(total == Rational(1), "coefficients of a level must sum to 1");

    std::vector<Rational> c;
    std::uint64_t lcm = 1;
    for (std::size_t j = 0; j < a[K].size(); ++j) {
      require(n[K][j] >= 1, "block lengths must be positive");
      c.push_back(a[K][j] / Rational(static_cast<std::int64_t>(n[K][j])));
      const auto den = static_cast<std::uint64_t>(c.back().denominator());
      lcm = detail::checked_mul(lcm / std::gcd(lcm, den), den, k, cap);
    }
    std::uint64_t sum = 0;
    for (int r1 = 1; r1 <= k + 1; ++r1)
      for (std::size_t j1 = 1; j1 <= s.measures(r1); ++j1)
        for (int r2 = 1; r2 <= k + 1; ++r2)
          for (std::size_t j2 = 1; j2 <= s.measures(r2); ++j2) sum = detail::checked_add(sum, s(r1, j1, r2, j2), k, cap);
    const std::uint64_t bound = detail::checked_mul(static_cast<std::uint64_t>(k), sum, k, cap);
    const std::uint64_t N = detail::checked_mul(std::max<std::uint64_t>(1, detail::ceil_div(bound, lcm)), lcm, k, cap);

    std::vector<std::uint64_t> reps, cyc;
    for (std::size_t j = 0; j < c.size(); ++j) {
      const Rational r = Rational(static_cast<std::int64_t>(N)) * c[j];
      reps.push_back(static_cast<std::uint64_t>(r.numerator()));
    }
    const std::size_t sk = a[K].size();
    std::uint64_t x = 0;
    for (std::size_t j = 1; j <= sk; ++j) {
      cyc.push_back(s(k, j, k, j == sk ? 1 : j + 1));
      x += cyc.back();
    }
    w.a.push_back(a[K]);
    w.n.push_back(n[K]);
    w.C.push_back(std::move(c));
    w.reps.push_back(std::move(reps));
    w.cycle_connector.push_back(std::move(cyc));
    w.connector_sum.push_back(sum);
    w.N.push_back(N);
    w.X.push_back(x);
    w.Y.push_back(detail::checked_add(N, x, k, cap));
    w.level_connector.push_back(s(k, 1, k + 1, 1));
  }

  // T_k: lower bounds from the second level growth inequality at k-1, the first at k,
  // and strict growth.
  for (int k = 1; k <= k_max; ++k) {
    const auto K = static_cast<std::size_t>(k - 1);
    std::uint64_t t = k == 1 ? 1 : w.T[K - 1] + 1;
    if (k >= 2) {
      std::uint64_t lhs = 0;
      for (int r = 1; r < k; ++r)
        lhs = detail::checked_add(lhs, detail::checked_add(detail::checked_mul(w.Y[r - 1], w.T[r - 1], k, cap),
                                                           w.level_connector[r - 1], k, cap), k, cap);
      t = std::max(t, detail::ceil_div(detail::checked_mul(static_cast<std::uint64_t>(k), lhs, k, cap), w.Y[K]));
    }
    if (k < k_max) {
      std::uint64_t prior = 0;
      for (int r = 1; r < k; ++r) prior = detail::checked_add(prior, detail::checked_mul(w.Y[r - 1], w.T[r - 1], k, cap), k, cap);
      const std::uint64_t need = detail::checked_mul(static_cast<std::uint64_t>(k + 1), w.Y[K + 1], k, cap);
      if (need > prior) t = std::max(t, detail::ceil_div(need - prior, w.Y[K]));
    }
    w.T.push_back(t);
  }

  w.M.push_back(0);
  for (int q = 1; q <= k_max; ++q) {
    const auto Q = static_cast<std::size_t>(q - 1);
    const std::uint64_t span = detail::checked_add(detail::checked_mul(w.T[Q], w.Y[Q], q, cap), w.level_connector[Q], q, cap);
    const std::uint64_t next = detail::checked_add(w.M[Q], span, q, cap);
    if (next > cap)
      throw ScheduleOverflow("orbit length " + std::to_string(next) + " exceeds the cap at level " + std::to_string(q),
                             q, cap);
    w.M_ki.emplace_back();
    w.M_kij.emplace_back();
    for (std::uint64_t i = 1; i <= w.T[Q]; ++i) {
      const std::uint64_t mi = w.M[Q] + (i - 1) * w.Y[Q];
      w.M_ki[Q].push_back(mi);
      std::vector<std::uint64_t> row;
      std::uint64_t acc = mi;
      for (std::size_t j = 0; j < w.a[Q].size(); ++j) {
        row.push_back(acc);
        acc += w.reps[Q][j] * w.n[Q][j] + w.cycle_connector[Q][j];
      }
      w.M_kij[Q].push_back(std::move(row));
    }
    w.M.push_back(next);
  }
  w.checks = certify(w, s);
  if (!w.certified()) {
    for (const auto& c : w.checks)
      if (!c.ok) throw InvariantViolation("schedule invariant " + c.name + " fails at level " + std::to_string(c.level));
  }
  return w;
}

/// Fraction of [M_k, M_{k+1}) covered by level-k blocks of measure j. Equals
/// a_{k,j} (N_k / Y_k) (T_k Y_k / (T_k Y_k + s(k,1,k+1,1))).
inline Rational block_coverage(const WeaveSchedule& w, int k, std::size_t j) {
  const auto K = static_cast<std::size_t>(k - 1);
  const auto covered = static_cast<std::int64_t>(w.T[K] * w.reps[K][j - 1] * w.n[K][j - 1]);
  return Rational(covered, static_cast<std::int64_t>(w.M[K + 1] - w.M[K]));
}

// ---------------------------------------------------------------------------
// Concatenation and shadowing

/// Block choices in concatenation order: level, cycle, measure, repetition.
struct BlockPicks {
  std::vector<std::uint32_t> index;
};

inline std::size_t slot_index(const WeaveSchedule& w, int q, std::uint64_t i, std::size_t j, std::uint64_t t) {
  (void)w.offset(q, i, j, t);  // range check
  std::size_t slot = 0;
  for (int r = 1; r < q; ++r) {
    std::uint64_t per_cycle = 0;
    for (auto c : w.reps[r - 1]) per_cycle += c;
    slot += w.T[r - 1] * per_cycle;
  }
  std::uint64_t per_cycle = 0;
  for (auto c : w.reps[q - 1]) per_cycle += c;
  slot += (i - 1) * per_cycle;
  for (std::size_t p = 1; p < j; ++p) slot += w.reps[q - 1][p - 1];
  return slot + (t - 1);
}

inline BlockPicks random_picks(const WeaveSchedule& w, const std::vector<std::vector<BlockFamily>>& families,
                               std::uint64_t seed) {
  CounterRng rng(seed);
  BlockPicks p;
  for (int q = 1; q <= w.k_max; ++q)
    for (std::uint64_t i = 1; i <= w.T[q - 1]; ++i)
      for (std::size_t j = 1; j <= w.measures(q); ++j)
        for (std::uint64_t t = 1; t <= w.reps[q - 1][j - 1]; ++t)
          p.index.push_back(static_cast<std::uint32_t>(rng.below(families[q - 1][j - 1].blocks.size())));
  return p;
}

namespace detail {
/// word followed by the sequence x.
inline ShiftPoint prepend(const Word& word, const ShiftPoint& x) {
  Word prefix(word);
  for (std::size_t i = 0; i < x.prefix_length(); ++i) prefix.push_back(x[i]);
  return ShiftPoint(std::move(prefix), x.shifted(x.prefix_length()).take(x.cycle_length()));
}
}  // namespace detail

/// The pseudo-orbit O_{k_max}: blocks f^p x for p < n(k,j), connector orbits
/// f^p y for p < s. Each connector point y is the connector word followed by
/// the next state, so seams out of a connector have gap 0 and seams out of a
/// block fall inside a common cell (gap <= 2^-d).
inline PseudoOrbit<ShiftPoint> concatenate(const ShiftSpace& shift, const WeaveSchedule& w,
                                           const std::vector<std::vector<BlockFamily>>& families,
                                           const ConnectorTable& s, const BlockPicks& picks) {
  require(families.size() >= static_cast<std::size_t>(w.k_max), "block families missing for some level");
  for (int q = 1; q <= w.k_max; ++q) {
    require(families[q - 1].size() == w.measures(q), "block families missing for some measure");
    for (std::size_t j = 1; j <= w.measures(q); ++j) {
      const auto& f = families[q - 1][j - 1];
      require(!f.blocks.empty(), "empty block family");
      require(f.n == w.n[q - 1][j - 1], "block family length differs from the schedule");
    }
  }

  struct Segment {
    const ShiftPoint* block;  // nullptr for connectors
    const Connector* conn;
    std::size_t length;
  };
  std::vector<Segment> segs;
  std::size_t slot = 0;
  for (int q = 1; q <= w.k_max; ++q) {
    const auto Q = static_cast<std::size_t>(q - 1);
    const std::size_t sk = w.measures(q);
    for (std::uint64_t i = 1; i <= w.T[Q]; ++i)
      for (std::size_t j = 1; j <= sk; ++j) {
        const auto& fam = families[Q][j - 1];
        for (std::uint64_t t = 1; t <= w.reps[Q][j - 1]; ++t, ++slot) {
          require(slot < picks.index.size() && picks.index[slot] < fam.blocks.size(), "block pick out of range");
          segs.push_back({&fam.blocks[picks.index[slot]], nullptr, fam.n});
        }
        const auto& c = s.at(q, j, q, j == sk ? 1 : j + 1);
        segs.push_back({nullptr, &c, c.s});
      }
    const auto& c = s.at(q, 1, q + 1, 1);
    segs.push_back({nullptr, &c, c.s});
  }
  require(slot == picks.index.size(), "more block picks than slots");

  std::vector<ShiftPoint> states;
  states.reserve(w.length());
  std::optional<ShiftPoint> next;
  std::vector<ShiftPoint> seg_states;
  // Built back to front so each connector can continue into its successor.
  std::vector<std::vector<ShiftPoint>> reversed;
  for (std::size_t idx = segs.size(); idx-- > 0;) {
    const auto& sg = segs[idx];
    seg_states.clear();
    if (sg.block) {
      for (std::size_t p = 0; p < sg.length; ++p) seg_states.push_back(sg.block->shifted(p));
      next = *sg.block;
    } else {
      const Word head(sg.conn->word.begin(), sg.conn->word.begin() + static_cast<std::ptrdiff_t>(sg.conn->s));
      const ShiftPoint y = next ? detail::prepend(head, *next) : shift.close_word(sg.conn->word);
      for (std::size_t p = 0; p < sg.length; ++p) seg_states.push_back(y.shifted(p));
      next = y;
    }
    reversed.push_back(seg_states);
  }
  for (std::size_t idx = reversed.size(); idx-- > 0;)
    for (auto& st : reversed[idx]) states.push_back(std::move(st));
  if (states.size() != w.length()) throw InvariantViolation("pseudo-orbit length differs from M_{k_max+1}");
  try {
    return validate_pseudo(shift, std::move(states), w.delta_prime);
  } catch (const PseudoOrbitViolation& e) {
    throw InvariantViolation("woven pseudo-orbit has a gap at index " + std::to_string(e.index()));
  }
}

struct WeaveOutcome {
  ShiftPoint point;
  std::uint64_t total_length;
  std::vector<std::pair<std::uint64_t, double>> convergence;  ///< (n, D(E_n(z), nu))
  int k_max;
  std::vector<double> block_deviation;  ///< max shadow deviation over each block slot
  double max_deviation;
  double final_distance;
  double band;  ///< epsilon / 2
};

/// Shadows the pseudo-orbit and records D(E_n(z), nu) at every M_{k,i} and at
/// the total length.
inline WeaveOutcome weave_point(const ShiftSpace& shift, const WeaveSchedule& w, const PseudoOrbit<ShiftPoint>& po,
                                const MarkovMixture& nu, const TestFunctionFamily& family) {
  require(w.certified(), "schedule is not certified");
  require(po.states.size() == w.length(), "pseudo-orbit does not match the schedule");
  auto shadow = shadow_shift(shift, po);
  if (shadow.max_deviation > w.splice_bound) throw InvariantViolation("splice deviation exceeds its guarantee");

  WeaveOutcome out{shadow.point, w.length(), {}, w.k_max, {}, shadow.max_deviation, 0.0, w.epsilon / 2.0};
  for (int q = 1; q <= w.k_max; ++q)
    for (std::uint64_t i = 1; i <= w.T[q - 1]; ++i)
      for (std::size_t j = 1; j <= w.measures(q); ++j)
        for (std::uint64_t t = 1; t <= w.reps[q - 1][j - 1]; ++t) {
          const std::uint64_t m = w.offset(q, i, j, t);
          const auto first = shadow.per_step.begin() + static_cast<std::ptrdiff_t>(m);
          out.block_deviation.push_back(*std::max_element(first, first + static_cast<std::ptrdiff_t>(w.n[q - 1][j - 1])));
        }

  std::vector<std::size_t> grid;
  for (const auto& level : w.M_ki)
    for (auto m : level)
      if (m > 0) grid.push_back(m);
  grid.push_back(w.length());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  const auto target = moments(nu, family);
  const auto emp = empirical_moments(shift, out.point, grid, family);
  for (std::size_t g = 0; g < grid.size(); ++g) out.convergence.push_back({grid[g], distance_from_moments(emp[g], target)});
  out.final_distance = out.convergence.back().second;
  return out;
}

/// (n(q,j), epsilon/2)-separation of f^M z and f^M z' at M = M_{q,i,j,t}.
inline bool separation_audit(const ShiftSpace& shift, const WeaveSchedule& w, const ShiftPoint& z, const ShiftPoint& zp,
                             int q, std::uint64_t i, std::size_t j, std::uint64_t t) {
  const std::uint64_t m = w.offset(q, i, j, t);
  const std::uint64_t n = w.n[q - 1][j - 1];
  if (m + n > w.length()) throw PreconditionError("offset out of range");
  if (!first_disagreement(z, zp)) throw PreconditionError("separation audit needs two distinct points");
  return shift.dist_n(z.shifted(m), zp.shifted(m), n) >= w.epsilon / 2.0;
}

// ---------------------------------------------------------------------------
// End to end

struct WeaveParams {
  double gamma = 0.1;
  int k_max = 3;
  std::size_t base_block = 256;  ///< t_1
  std::size_t growth = 4;        ///< t_{k+1} = growth * t_k
  std::size_t budget = 400;      ///< samples per block family
  int cell_depth = 1;
  int truncation = 16;
  std::uint64_t length_cap = 1'000'000;
  std::int64_t denominator_cap = 10000;
};

struct WeaveRun {
  std::vector<Decomposition> decompositions;           ///< levels 1..k_max+1
  std::vector<std::vector<BlockFamily>> families;      ///< levels 1..k_max+1
  std::optional<ConnectorTable> connectors;
  WeaveSchedule schedule;
  BlockPicks picks;
  std::optional<WeaveOutcome> outcome;
};

/// Decompose, select blocks, connect, schedule, concatenate, shadow, measure.
inline WeaveRun weave(const ShiftSpace& shift, const MarkovMixture& nu, const WeaveParams& p, std::uint64_t seed) {
  require(shift.is_irreducible(), "weaving needs an irreducible transition matrix");
  require(p.k_max >= 1 && p.base_block >= 1 && p.growth >= 1 && p.cell_depth >= 1, "invalid weave parameters");
  require(nu.alphabet_size() == shift.alphabet_size(), "target and shift alphabets differ");
  for (const auto& c : nu.components()) require(c.measure.respects(shift), "target charges forbidden transitions");
  const auto family = TestFunctionFamily::cylinders(shift.alphabet_size(), p.truncation);

  WeaveRun run{};
  for (int k = 1; k <= p.k_max + 1; ++k) run.decompositions.push_back(convex_decompose(nu, k, family, p.denominator_cap));

  const CounterRng root(seed);
  std::size_t t = p.base_block;
  for (int k = 1; k <= p.k_max + 1; ++k) {
    run.families.emplace_back();
    const auto& terms = run.decompositions[static_cast<std::size_t>(k - 1)].terms;
    for (std::size_t j = 1; j <= terms.size(); ++j)
      run.families.back().push_back(select_blocks(shift, terms[j - 1].measure, t, p.cell_depth - 1, k, p.gamma,
                                                  p.budget, root.fork(static_cast<std::uint64_t>(k) * 1000 + j)(),
                                                  BlockOptions{p.cell_depth, p.truncation}));
    if (k <= p.k_max) {
      if (t > p.length_cap) throw ScheduleOverflow("block length exceeds the orbit-length cap", k + 1, p.length_cap);
      t *= p.growth;
    }
  }

  std::vector<std::vector<Word>> cells;
  for (const auto& level : run.families) {
    cells.emplace_back();
    for (const auto& f : level) cells.back().push_back(f.cell);
  }
  run.connectors.emplace(shift, cells);

  std::vector<std::vector<Rational>> a;
  std::vector<std::vector<std::uint64_t>> n;
  for (int k = 1; k <= p.k_max; ++k) {
    a.emplace_back();
    n.emplace_back();
    for (std::size_t j = 0; j < run.families[static_cast<std::size_t>(k - 1)].size(); ++j) {
      a.back().push_back(run.decompositions[static_cast<std::size_t>(k - 1)].terms[j].coefficient);
      n.back().push_back(run.families[static_cast<std::size_t>(k - 1)][j].n);
    }
  }
  run.schedule = build_schedule(a, n, *run.connectors, p.k_max, p.length_cap);
  run.schedule.delta_prime = std::ldexp(1.0, -p.cell_depth);
  run.schedule.diam_xi = run.schedule.delta_prime;
  run.schedule.epsilon = std::ldexp(1.0, -(p.cell_depth - 1));
  run.schedule.splice_bound = run.schedule.delta_prime / 2.0;

  run.picks = random_picks(run.schedule, run.families, root.fork(999'999)());
  const auto po = concatenate(shift, run.schedule, run.families, *run.connectors, run.picks);
  run.outcome.emplace(weave_point(shift, run.schedule, po, nu, family));
  return run;
}

}  // namespace cvp
