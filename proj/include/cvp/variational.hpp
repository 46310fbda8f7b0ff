#pragma once

// sup{h_nu : int phi dnu = alpha} for locally constant phi on a shift of finite
// type, through the pressure P(q) = log rho(A_q) of the weighted transfer matrix
// on the depth-d block graph. The supremum is H(alpha) = inf_q P(q) - q alpha,
// attained by the Gibbs measure at the q with P'(q) = alpha, which is Markov on
// d-blocks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cvp/entropy.hpp"
#include "cvp/error.hpp"
#include "cvp/measures.hpp"
#include "cvp/random.hpp"
#include "cvp/systems.hpp"

namespace cvp {

/// Higher-block presentation: admissible words of length d = max(depth, 1),
/// with an edge u -> v when v extends u by one symbol.
struct BlockGraph {
  int depth;
  std::vector<Word> words;
  std::vector<double> weight;  ///< phi(v)
  std::vector<std::vector<std::size_t>> succ;

  std::size_t size() const { return words.size(); }
};

inline BlockGraph block_graph(const ShiftSpace& shift, const LocallyConstant& phi) {
  require(phi.alphabet_size() == shift.alphabet_size(), "observable and shift alphabets differ");
  const int d = std::max(phi.depth(), 1);
  const std::size_t size = detail::checked_table_size(shift.alphabet_size(), d);
  const auto k = static_cast<std::size_t>(shift.alphabet_size());
  BlockGraph g{d, {}, {}, {}};
  std::vector<std::size_t> node_of(size, std::numeric_limits<std::size_t>::max());
  Word w(static_cast<std::size_t>(d));
  for (std::size_t code = 0; code < size; ++code) {
    std::size_t c = code;
    for (std::size_t i = w.size(); i-- > 0; c /= k) w[i] = static_cast<Symbol>(c % k);
    if (!shift.admissible(w)) continue;
    node_of[code] = g.words.size();
    g.words.push_back(w);
    g.weight.push_back(phi.depth() == 0 ? phi.values()[0] : phi(w));
  }
  const std::size_t top = size / k;
  g.succ.resize(g.words.size());
  for (std::size_t code = 0; code < size; ++code) {
    if (node_of[code] == std::numeric_limits<std::size_t>::max()) continue;
    for (std::size_t b = 0; b < k; ++b) {
      const std::size_t next = (code % top) * k + b;
      if (shift.allowed(static_cast<Symbol>(code % k), static_cast<Symbol>(b)) &&
          node_of[next] != std::numeric_limits<std::size_t>::max())
        g.succ[node_of[code]].push_back(node_of[next]);
    }
  }
  // Strong connectivity, forward and backward from node 0.
  auto reach_all = [&](bool reverse) {
    std::vector<std::vector<std::size_t>> adj(g.size());
    for (std::size_t u = 0; u < g.size(); ++u)
      for (auto v : g.succ[u]) (reverse ? adj[v] : adj[u]).push_back(reverse ? u : v);
    std::vector<char> seen(g.size(), 0);
    std::vector<std::size_t> stack{0};
    seen[0] = 1;
    std::size_t count = 1;
    while (!stack.empty()) {
      auto u = stack.back();
      stack.pop_back();
      for (auto v : adj[u])
        if (!seen[v]) {
          seen[v] = 1;
          ++count;
          stack.push_back(v);
        }
    }
    return count == g.size();
  };
  if (g.words.empty() || !reach_all(false) || !reach_all(true))
    throw PreconditionError("reducible lift matrix: the block graph is not strongly connected");
  return g;
}

struct Range {
  double lo;
  double hi;
};

/// [min, max] of cycle means of phi: the attainable values of int phi dmu over
/// invariant mu. Karp's algorithm on the block graph.
inline Range attainable_range(const BlockGraph& g) {
  const std::size_t n = g.size();
  auto karp = [&](double sign) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> D(n + 1, std::vector<double>(n, inf));
    D[0][0] = 0.0;
    for (std::size_t step = 1; step <= n; ++step)
      for (std::size_t u = 0; u < n; ++u)
        if (D[step - 1][u] < inf)
          for (auto v : g.succ[u]) D[step][v] = std::min(D[step][v], D[step - 1][u] + sign * g.weight[v]);
    double best = inf;
    for (std::size_t v = 0; v < n; ++v) {
      if (D[n][v] == inf) continue;
      double worst = -inf;
      for (std::size_t step = 0; step < n; ++step)
        if (D[step][v] < inf)
          worst = std::max(worst, (D[n][v] - D[step][v]) / static_cast<double>(n - step));
      best = std::min(best, worst);
    }
    return sign * best;
  };
  return {karp(1.0), karp(-1.0)};
}

inline Range attainable_range(const ShiftSpace& shift, const LocallyConstant& phi) {
  return attainable_range(block_graph(shift, phi));
}

// ---------------------------------------------------------------------------
// Transfer operator

struct GibbsData {
  double q;
  double pressure;
  double integral;  ///< P'(q) = int phi dmu_q
  double entropy;   ///< entropy of the Gibbs-Markov chain, computed from its matrix
  std::vector<std::vector<double>> stochastic;  ///< on block-graph nodes
  std::vector<double> stationary;
};

inline constexpr double kPowerTolerance = 1e-13;
inline constexpr std::size_t kPowerIterations = 1'000'000;

namespace detail {
/// Perron root and vector of B = A + I (primitive when A is irreducible), with
/// Collatz-Wielandt bounds min (Bv)_i / v_i <= rho(B) <= max (Bv)_i / v_i as the
/// stopping rule.
inline std::pair<double, std::vector<double>> perron(const std::vector<std::vector<std::pair<std::size_t, double>>>& rows) {
  const std::size_t n = rows.size();
  std::vector<double> v(n, 1.0), bv(n);
  for (std::size_t it = 0; it < kPowerIterations; ++it) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0, norm = 0.0;
    for (std::size_t u = 0; u < n; ++u) {
      double s = v[u];
      for (const auto& [w, a] : rows[u]) s += a * v[w];
      bv[u] = s;
      const double ratio = s / v[u];
      lo = std::min(lo, ratio);
      hi = std::max(hi, ratio);
      norm = std::max(norm, s);
    }
    for (std::size_t u = 0; u < n; ++u) v[u] = std::max(bv[u] / norm, std::numeric_limits<double>::min());
    if (hi - lo <= kPowerTolerance * lo) return {0.5 * (lo + hi) - 1.0, v};
  }
  throw PrecisionUnattainable("power iteration did not converge", 0.0);
}
}  // namespace detail

/// Weighted matrix A_q[u][v] = exp(q phi(v) - c) with the shift c = q * (cycle
/// mean extremal in the direction of q), which keeps rho(A) in [1, #nodes].
inline GibbsData gibbs(const BlockGraph& g, const Range& range, double q) {
  const std::size_t n = g.size();
  const double c = q >= 0.0 ? q * range.hi : q * range.lo;
  std::vector<std::vector<std::pair<std::size_t, double>>> rows(n), cols(n);
  for (std::size_t u = 0; u < n; ++u)
    for (auto v : g.succ[u]) {
      const double a = std::exp(q * g.weight[v] - c);
      rows[u].push_back({v, a});
      cols[v].push_back({u, a});
    }
  const auto [rho, right] = detail::perron(rows);
  const auto [rho_left, left] = detail::perron(cols);
  (void)rho_left;

  GibbsData out{q, c + std::log(rho), 0.0, 0.0, std::vector<std::vector<double>>(n, std::vector<double>(n, 0.0)), {}};
  double z = 0.0;
  for (std::size_t u = 0; u < n; ++u) z += left[u] * right[u];
  out.stationary.resize(n);
  for (std::size_t u = 0; u < n; ++u) out.stationary[u] = left[u] * right[u] / z;
  for (std::size_t u = 0; u < n; ++u) {
    double row_sum = 0.0;
    for (const auto& [v, a] : rows[u]) row_sum += a * right[v];
    for (const auto& [v, a] : rows[u]) out.stochastic[u][v] = a * right[v] / row_sum;
  }
  for (std::size_t v = 0; v < n; ++v) out.integral += out.stationary[v] * g.weight[v];
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v) {
      const double p = out.stochastic[u][v];
      if (p > 0.0) out.entropy -= out.stationary[u] * p * std::log(p);
    }
  return out;
}

/// log of the spectral radius of the matrix exp(q phi(cylinder)) * transition.
inline double pressure(const ShiftSpace& shift, const LocallyConstant& phi, double q) {
  const auto g = block_graph(shift, phi);
  return gibbs(g, attainable_range(g), q).pressure;
}

struct PressureCurve {
  std::vector<std::pair<double, double>> samples;  ///< (q, P(q))
  std::vector<double> derivatives;                 ///< P'(q) from the Gibbs measure

  /// Second differences >= -tol on the (possibly nonuniform) grid.
  bool convex(double tol = 1e-9) const {
    for (std::size_t i = 1; i + 1 < samples.size(); ++i) {
      const auto [q0, p0] = samples[i - 1];
      const auto [q1, p1] = samples[i];
      const auto [q2, p2] = samples[i + 1];
      const double s1 = (p1 - p0) / (q1 - q0), s2 = (p2 - p1) / (q2 - q1);
      if (s2 - s1 < -tol) return false;
    }
    return true;
  }
};

inline PressureCurve pressure_curve(const ShiftSpace& shift, const LocallyConstant& phi, const std::vector<double>& qs) {
  require(std::is_sorted(qs.begin(), qs.end()) && std::adjacent_find(qs.begin(), qs.end()) == qs.end(),
          "q grid must be strictly increasing");
  const auto g = block_graph(shift, phi);
  const auto range = attainable_range(g);
  PressureCurve out;
  for (double q : qs) {
    const auto gd = gibbs(g, range, q);
    out.samples.push_back({q, gd.pressure});
    out.derivatives.push_back(gd.integral);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Constrained supremum

struct SpectrumPoint {
  double alpha = 0.0;
  double h_var = 0.0;
  std::optional<MarkovMeasure> maximizer;  ///< chain on depth-d blocks (the symbols when d = 1)
  int block_depth = 1;
  double q_star = 0.0;
  double maximizer_integral = 0.0;
  double duality_gap = 0.0;  ///< h(maximizer) + q* alpha - P(q*)
  bool endpoint = false;     ///< evaluated as a one-sided limit q -> +-infinity
  std::optional<double> h_count;
  std::size_t n_count = 0;

  std::optional<double> gap() const {
    if (!h_count) return std::nullopt;
    return std::abs(*h_count - h_var);
  }
};

inline constexpr double kEndpointTolerance = 1e-8;

inline SpectrumPoint constrained_sup(const BlockGraph& g, const Range& range, double alpha) {
  require(std::isfinite(alpha), "alpha must be finite");
  if (alpha < range.lo - kEndpointTolerance || alpha > range.hi + kEndpointTolerance)
    throw EmptyConstraint("alpha " + std::to_string(alpha) + " lies outside the attainable range [" +
                          std::to_string(range.lo) + ", " + std::to_string(range.hi) + "]");
  const double spread = range.hi - range.lo;
  SpectrumPoint out;
  out.alpha = alpha;
  out.h_var = 0.0;
  out.block_depth = g.depth;

  auto finish = [&](const GibbsData& gd, double a) {
    out.q_star = gd.q;
    out.h_var = gd.pressure - gd.q * a;
    if (std::abs(out.h_var) < 1e-12) out.h_var = 0.0;
    out.maximizer_integral = gd.integral;
    out.duality_gap = gd.entropy + gd.q * a - gd.pressure;
    out.maximizer.emplace(gd.stochastic, gd.stationary);
    return out;
  };

  if (spread <= kEndpointTolerance) {
    out.endpoint = true;
    return finish(gibbs(g, range, 0.0), alpha);
  }
  const double q_limit = 200.0 / spread;
  if (alpha <= range.lo + kEndpointTolerance || alpha >= range.hi - kEndpointTolerance) {
    out.endpoint = true;
    const bool low = alpha <= range.lo + kEndpointTolerance;
    return finish(gibbs(g, range, low ? -q_limit : q_limit), low ? range.lo : range.hi);
  }

  // P' is increasing; bracket the root of P'(q) = alpha, then bisect.
  double lo = -1.0, hi = 1.0;
  while (gibbs(g, range, lo).integral > alpha && lo > -q_limit) lo = std::max(2.0 * lo, -q_limit);
  while (gibbs(g, range, hi).integral < alpha && hi < q_limit) hi = std::min(2.0 * hi, q_limit);
  GibbsData best = gibbs(g, range, 0.5 * (lo + hi));
  for (int it = 0; it < 200; ++it) {
    if (std::abs(best.integral - alpha) <= 1e-13 || hi - lo <= 1e-15 * std::max(1.0, std::abs(best.q))) break;
    if (best.integral < alpha) lo = best.q;
    else hi = best.q;
    best = gibbs(g, range, 0.5 * (lo + hi));
  }
  finish(best, alpha);
  if (std::abs(out.maximizer_integral - alpha) > 1e-8)
    throw PrecisionUnattainable("maximizer integral misses alpha", std::abs(out.maximizer_integral - alpha));
  return out;
}

inline SpectrumPoint constrained_sup(const ShiftSpace& shift, const LocallyConstant& phi, double alpha) {
  const auto g = block_graph(shift, phi);
  return constrained_sup(g, attainable_range(g), alpha);
}

// ---------------------------------------------------------------------------
// Spectra over constraint sets

struct SpectrumOptions {
  std::size_t n_count = 24;
  double window = 0.05;  ///< h_count counts averages in (alpha - window, alpha + window)
  bool count = true;
};

struct SpectrumResult {
  std::vector<SpectrumPoint> points;
  Interval constraint;
  double sup;
  double sup_alpha;
  bool sup_attained;  ///< false when the sup is a limit at an open endpoint
  std::optional<double> grid_sup;  ///< max of h_var over grid points inside the constraint
};

/// Per-alpha values plus the supremum of H over U (open) or K (closed). H is
/// concave with its maximum P(0) at alpha* = P'(0), so the supremum over an
/// interval sits at alpha* or at the endpoint nearer to it.
inline SpectrumResult spectrum(const ShiftSpace& shift, const LocallyConstant& phi, const Interval& constraint,
                               const std::vector<double>& alpha_grid, const SpectrumOptions& opt = {}) {
  require(constraint.well_formed(), "malformed constraint interval");
  const auto g = block_graph(shift, phi);
  const auto range = attainable_range(g);
  SpectrumResult out{{}, constraint, 0.0, 0.0, true, std::nullopt};
  for (double a : alpha_grid) {
    auto p = constrained_sup(g, range, a);
    if (opt.count) {
      const auto est = levelset_count(shift, {phi, Interval{a - opt.window, a + opt.window, false}, opt.n_count});
      p.h_count = est.value;
      p.n_count = opt.n_count;
    }
    if (constraint.contains(a)) out.grid_sup = std::max(out.grid_sup.value_or(p.h_var), p.h_var);
    out.points.push_back(std::move(p));
  }

  const double lo = std::max(constraint.lo, range.lo), hi = std::min(constraint.hi, range.hi);
  auto member = [&](double a) { return a >= range.lo && a <= range.hi && constraint.contains(a); };
  if (lo > hi || (lo == hi && !member(lo)))
    throw EmptyConstraint("constraint set does not meet the attainable range");
  const double star = gibbs(g, range, 0.0).integral;
  double target = std::clamp(star, lo, hi);
  out.sup_alpha = target;
  out.sup = constrained_sup(g, range, target).h_var;
  out.sup_attained = member(target);
  return out;
}

// ---------------------------------------------------------------------------
// Shrinking balls

struct ShrinkRow {
  double delta;
  double sup_hat;
  std::size_t budget_used;
};

struct ShrinkResult {
  double h_nu;
  std::vector<ShrinkRow> rows;
  std::size_t evaluations;
};

/// Lower bounds for sup{h_mu : D(mu, nu) <= delta} over Markov chains on the
/// shift, from a pool of evaluated chains shared across the delta grid (so the
/// profile is monotone by construction and nu itself is always feasible).
/// Per delta: a line search from nu toward the maximal-entropy chain, then a
/// hill climb in logit coordinates from the best feasible chain found so far.
inline ShrinkResult shrink_experiment(const ShiftSpace& shift, const MarkovMeasure& nu,
                                      const TestFunctionFamily& family, const std::vector<double>& delta_grid,
                                      std::size_t budget, std::uint64_t seed) {
  require(!delta_grid.empty(), "delta grid is empty");
  for (std::size_t i = 0; i < delta_grid.size(); ++i) {
    require(delta_grid[i] > 0.0, "delta must be positive");
    require(i == 0 || delta_grid[i] < delta_grid[i - 1], "delta grid must be decreasing");
  }
  require(nu.alphabet_size() == shift.alphabet_size() && nu.respects(shift), "nu must live on the shift");
  const int k = shift.alphabet_size();
  const auto target = moments(nu, family);

  struct Candidate {
    MarkovMeasure::Matrix p;
    double dist;
    double h;
  };
  std::vector<Candidate> pool;
  std::size_t evaluations = 0;
  auto evaluate = [&](MarkovMeasure::Matrix p) -> std::optional<Candidate> {
    ++evaluations;
    try {
      const auto m = MarkovMeasure::from_matrix(p);
      Candidate c{std::move(p), distance_from_moments(moments(m, family), target), markov_entropy(m)};
      pool.push_back(c);
      return c;
    } catch (const Error&) {
      return std::nullopt;  // reducible chain: no unique stationary vector
    }
  };
  auto best_within = [&](double delta) {
    const Candidate* best = nullptr;
    for (const auto& c : pool)
      if (c.dist <= delta && (!best || c.h > best->h)) best = &c;
    return best;
  };

  const double h_nu = markov_entropy(nu);
  pool.push_back({nu.stochastic(), 0.0, h_nu});
  const auto g = block_graph(shift, LocallyConstant(k, 1, std::vector<double>(static_cast<std::size_t>(k), 0.0)));
  const auto parry = gibbs(g, attainable_range(g), 0.0).stochastic;
  evaluate(parry);

  auto mix = [&](double t) {
    MarkovMeasure::Matrix p = nu.stochastic();
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b) p[a][b] = (1.0 - t) * p[a][b] + t * parry[a][b];
    return p;
  };

  CounterRng rng(seed);
  const std::size_t share = std::max<std::size_t>(1, budget / delta_grid.size());
  ShrinkResult out{h_nu, {}, 0};
  for (double delta : delta_grid) {
    const std::size_t start = evaluations;
    const std::size_t stop = start + share;

    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 30 && evaluations < stop; ++it) {
      const double t = 0.5 * (lo + hi);
      const auto c = evaluate(mix(t));
      if (c && c->dist <= delta) lo = t;
      else hi = t;
    }

    double step = 0.5;
    std::size_t failures = 0;
    while (evaluations < stop) {
      const Candidate* base = best_within(delta);
      MarkovMeasure::Matrix p = base->p;
      for (int a = 0; a < k; ++a) {
        double total = 0.0;
        for (int b = 0; b < k; ++b) {
          if (!shift.allowed(a, b)) continue;
          const double logit = std::log(std::max(p[a][b], 1e-300)) + step * (2.0 * rng.uniform() - 1.0);
          p[a][b] = std::exp(std::max(logit, -700.0));
          total += p[a][b];
        }
        for (int b = 0; b < k; ++b) p[a][b] = shift.allowed(a, b) ? p[a][b] / total : 0.0;
      }
      const double before = base->h;
      const auto c = evaluate(std::move(p));
      if (c && c->dist <= delta && c->h > before) {
        failures = 0;
      } else if (++failures >= 25) {
        step = std::max(step * 0.5, 1e-6);
        failures = 0;
      }
    }
    out.rows.push_back({delta, 0.0, evaluations - start});
  }
  for (auto& row : out.rows) row.sup_hat = best_within(row.delta)->h;
  out.evaluations = evaluations;
  return out;
}

}  // namespace cvp
