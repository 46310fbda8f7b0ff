#pragma once

// Probability measures on the state space and the truncated weak* metric
//
//   D(mu, nu) = sum_{i=1..N} |int phi_i dmu - int phi_i dnu| / (2^{i+1} |phi_i|)
//
// over an explicit, deterministic test-function family. Every distance comes
// with the tail bound 2^-N of the omitted terms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <boost/rational.hpp>

#include "cvp/error.hpp"
#include "cvp/systems.hpp"

namespace cvp {

// ---------------------------------------------------------------------------
// Observables

/// Indicator of the cylinder [w] = {x : x_0..x_{|w|-1} = w}.
struct Cylinder {
  Word word;
};

/// Tent-shaped bump max(0, 1 - |x - center| / half_width); sup norm 1.
struct Hat {
  double center;
  double half_width;
};

using TestFunction = std::variant<Cylinder, Hat>;

inline double evaluate(const Cylinder& c, const ShiftPoint& x) {
  for (std::size_t i = 0; i < c.word.size(); ++i)
    if (x[i] != c.word[i]) return 0.0;
  return 1.0;
}
inline double evaluate(const Hat& h, double x) {
  return std::max(0.0, 1.0 - std::abs(x - h.center) / h.half_width);
}
inline double evaluate(const Cylinder&, double) { throw KindMismatch("cylinder indicator on a real point"); }
inline double evaluate(const Hat&, const ShiftPoint&) { throw KindMismatch("hat function on a shift point"); }

template <class StateT>
double evaluate(const TestFunction& f, const StateT& x) {
  return std::visit([&](const auto& g) { return evaluate(g, x); }, f);
}
inline double evaluate(const TestFunction& f, const State& x) {
  return std::visit([&](const auto& s) { return evaluate(f, s); }, x);
}

/// Function of the first `depth` symbols, tabulated over all alphabet^depth
/// words (index = base-k value, first symbol most significant).
class LocallyConstant {
 public:
  LocallyConstant(int alphabet_size, int depth, std::vector<double> values)
      : alphabet_(alphabet_size), depth_(depth), values_(std::move(values)) {
    require(alphabet_ >= 2 && depth_ >= 0, "locally constant observable needs k >= 2, depth >= 0");
    std::size_t size = 1;
    for (int i = 0; i < depth_; ++i) size *= static_cast<std::size_t>(alphabet_);
    require(values_.size() == size, "observable table must have alphabet^depth entries");
  }

  /// Frequency of `symbol`: the depth-1 indicator of [symbol].
  static LocallyConstant frequency(int alphabet_size, Symbol symbol) {
    std::vector<double> v(alphabet_size, 0.0);
    v.at(symbol) = 1.0;
    return LocallyConstant(alphabet_size, 1, std::move(v));
  }

  int alphabet_size() const { return alphabet_; }
  int depth() const { return depth_; }
  const std::vector<double>& values() const { return values_; }

  double operator()(std::span<const Symbol> w) const { return values_[index(w)]; }
  double operator()(const ShiftPoint& x) const {
    std::size_t idx = 0;
    for (int i = 0; i < depth_; ++i) idx = idx * alphabet_ + static_cast<std::size_t>(x[i]);
    return values_[idx];
  }

  std::size_t index(std::span<const Symbol> w) const {
    std::size_t idx = 0;
    for (int i = 0; i < depth_; ++i) idx = idx * alphabet_ + static_cast<std::size_t>(w[i]);
    return idx;
  }

  double min_value() const { return *std::min_element(values_.begin(), values_.end()); }
  double max_value() const { return *std::max_element(values_.begin(), values_.end()); }

 private:
  int alphabet_;
  int depth_;
  std::vector<double> values_;
};

/// The truncated dense family behind D. Cylinders are ordered by (length,
/// lexicographic); hats by (dyadic level, position). All sup norms are 1.
class TestFunctionFamily {
 public:
  enum class Kind { cylinder, hat };

  static TestFunctionFamily cylinders(int alphabet_size, int truncation = 16) {
    require(truncation >= 1, "test family truncation must be positive");
    require(alphabet_size >= 2, "cylinder family needs alphabet >= 2");
    TestFunctionFamily fam(Kind::cylinder, truncation);
    for (std::size_t len = 1; fam.functions_.size() < static_cast<std::size_t>(truncation); ++len) {
      Word w(len, 0);
      while (fam.functions_.size() < static_cast<std::size_t>(truncation)) {
        fam.functions_.push_back(Cylinder{w});
        fam.max_depth_ = len;
        std::size_t i = len;
        while (i > 0 && w[i - 1] == alphabet_size - 1) w[--i] = 0;
        if (i == 0) break;
        ++w[i - 1];
      }
    }
    return fam;
  }

  static TestFunctionFamily hats(double lo, double hi, int truncation = 16) {
    require(truncation >= 1, "test family truncation must be positive");
    require(hi > lo, "hat family needs a nondegenerate interval");
    TestFunctionFamily fam(Kind::hat, truncation);
    for (int level = 0; fam.functions_.size() < static_cast<std::size_t>(truncation); ++level) {
      const double step = (hi - lo) / std::ldexp(1.0, level);
      const long count = (1L << level) + 1;
      for (long j = 0; j < count && fam.functions_.size() < static_cast<std::size_t>(truncation); ++j)
        fam.functions_.push_back(Hat{lo + static_cast<double>(j) * step, step});
    }
    return fam;
  }

  Kind kind() const { return kind_; }
  int truncation() const { return truncation_; }
  const std::vector<TestFunction>& functions() const { return functions_; }
  /// Longest cylinder in the family (0 for hats).
  std::size_t max_depth() const { return max_depth_; }
  double norm(std::size_t) const { return 1.0; }
  /// sum_{i>N} 2 / 2^{i+1}.
  double tail_bound() const { return std::ldexp(1.0, -truncation_); }

 private:
  TestFunctionFamily(Kind kind, int truncation) : kind_(kind), truncation_(truncation) {}

  Kind kind_;
  int truncation_;
  std::size_t max_depth_ = 0;
  std::vector<TestFunction> functions_;
};

struct DistanceReport {
  double value;
  double tail_bound;
};

/// D evaluated from precomputed integrals against the family.
inline double distance_from_moments(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), "moment vectors differ in length");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a[i] - b[i]) * std::ldexp(1.0, -static_cast<int>(i) - 2);
  return sum;
}

// ---------------------------------------------------------------------------
// Measures

template <class StateT>
struct Atom {
  StateT state;
  double weight;
};

/// Finitely supported probability measure.
template <class StateT>
class AtomicMeasure {
 public:
  explicit AtomicMeasure(std::vector<Atom<StateT>> atoms) : atoms_(std::move(atoms)) {
    require(!atoms_.empty(), "atomic measure needs at least one atom");
    for (const auto& a : atoms_) require(a.weight > 0.0, "atom weights must be positive");
    require(std::abs(total_mass() - 1.0) <= 1e-12, "atom weights must sum to 1");
  }

  /// Weights counts[i] / denominator, kept exactly.
  static AtomicMeasure from_counts(std::vector<StateT> states, std::vector<std::uint64_t> counts,
                                   std::uint64_t denominator) {
    require(states.size() == counts.size(), "one count per atom");
    require(std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}) == denominator,
            "atom counts must sum to the denominator");
    std::vector<Atom<StateT>> atoms;
    for (std::size_t i = 0; i < states.size(); ++i)
      atoms.push_back({std::move(states[i]), static_cast<double>(counts[i]) / static_cast<double>(denominator)});
    AtomicMeasure out(std::move(atoms));
    out.counts_ = std::move(counts);
    out.denominator_ = denominator;
    return out;
  }

  const std::vector<Atom<StateT>>& atoms() const { return atoms_; }
  /// Integer numerators when built from counts.
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  std::uint64_t denominator() const { return denominator_; }

  double total_mass() const {
    if (denominator_ > 0) {
      const auto total = std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
      return static_cast<double>(total) / static_cast<double>(denominator_);
    }
    // Neumaier summation.
    double sum = 0.0, carry = 0.0;
    for (const auto& a : atoms_) {
      const double t = sum + a.weight;
      carry += std::abs(sum) >= std::abs(a.weight) ? (sum - t) + a.weight : (a.weight - t) + sum;
      sum = t;
    }
    return sum + carry;
  }

 private:
  std::vector<Atom<StateT>> atoms_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t denominator_ = 0;
};

/// Stationary Markov measure: row-stochastic matrix plus its left fixed vector.
class MarkovMeasure {
 public:
  using Matrix = std::vector<std::vector<double>>;

  /// Computes the stationary vector; the chain must have a unique one.
  static MarkovMeasure from_matrix(Matrix stochastic) {
    validate_rows(stochastic);
    const int k = static_cast<int>(stochastic.size());
    Eigen::MatrixXd a(k + 1, k);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k + 1);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) a(j, i) = stochastic[i][j] - (i == j ? 1.0 : 0.0);
    a.row(k).setOnes();
    rhs(k) = 1.0;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    require(qr.rank() == k, "stochastic matrix has no unique stationary vector");
    Eigen::VectorXd pi = qr.solve(rhs);
    std::vector<double> stationary(k);
    for (int i = 0; i < k; ++i) stationary[i] = std::max(0.0, pi(i));
    const double total = std::accumulate(stationary.begin(), stationary.end(), 0.0);
    for (double& p : stationary) p /= total;
    return MarkovMeasure(std::move(stochastic), std::move(stationary));
  }

  MarkovMeasure(Matrix stochastic, std::vector<double> stationary)
      : p_(std::move(stochastic)), pi_(std::move(stationary)) {
    validate_rows(p_);
    require(pi_.size() == p_.size(), "stationary vector has wrong length");
    double total = 0.0;
    for (double v : pi_) {
      require(v >= 0.0, "stationary vector must be nonnegative");
      total += v;
    }
    require(std::abs(total - 1.0) <= 1e-10, "stationary vector must sum to 1");
    for (std::size_t j = 0; j < pi_.size(); ++j) {
      double v = 0.0;
      for (std::size_t i = 0; i < pi_.size(); ++i) v += pi_[i] * p_[i][j];
      require(std::abs(v - pi_[j]) <= 1e-10, "stationary vector is not fixed by the matrix");
    }
  }

  /// i.i.d. symbols; probs sum to 1.
  static MarkovMeasure bernoulli(const std::vector<double>& probs) {
    return MarkovMeasure(Matrix(probs.size(), probs), probs);
  }
  /// Two symbols with P(symbol 1) = p.
  static MarkovMeasure bernoulli(double p) { return bernoulli(std::vector<double>{1.0 - p, p}); }

  /// Uniform measure on the periodic orbit 0 -> 1 -> ... -> k-1 -> 0.
  static MarkovMeasure cycle(int k) {
    Matrix p(k, std::vector<double>(k, 0.0));
    for (int i = 0; i < k; ++i) p[i][(i + 1) % k] = 1.0;
    return MarkovMeasure(std::move(p), std::vector<double>(k, 1.0 / k));
  }

  /// Dirac mass on the fixed point a^infinity.
  static MarkovMeasure point_mass(int k, Symbol a) {
    Matrix p(k, std::vector<double>(k, 0.0));
    for (auto& row : p) row[a] = 1.0;
    std::vector<double> pi(k, 0.0);
    pi[a] = 1.0;
    return MarkovMeasure(std::move(p), std::move(pi));
  }

  int alphabet_size() const { return static_cast<int>(p_.size()); }
  const Matrix& stochastic() const { return p_; }
  const std::vector<double>& stationary() const { return pi_; }

  double cylinder_mass(std::span<const Symbol> w) const {
    if (w.empty()) return 1.0;
    double m = pi_[w[0]];
    for (std::size_t i = 0; i + 1 < w.size() && m > 0.0; ++i) m *= p_[w[i]][w[i + 1]];
    return m;
  }

  /// Every positive-probability transition is allowed by the shift.
  bool respects(const ShiftSpace& shift) const {
    if (shift.alphabet_size() != alphabet_size()) return false;
    for (int i = 0; i < alphabet_size(); ++i)
      for (int j = 0; j < alphabet_size(); ++j)
        if (pi_[i] > 0.0 && p_[i][j] > 0.0 && !shift.allowed(i, j)) return false;
    return true;
  }

 private:
  static void validate_rows(const Matrix& p) {
    require(p.size() >= 1, "stochastic matrix is empty");
    for (const auto& row : p) {
      require(row.size() == p.size(), "stochastic matrix must be square");
      double total = 0.0;
      for (double v : row) {
        require(v >= 0.0, "stochastic matrix entries must be nonnegative");
        total += v;
      }
      require(std::abs(total - 1.0) <= 1e-12, "stochastic matrix rows must sum to 1");
    }
  }

  Matrix p_;
  std::vector<double> pi_;
};

/// Finite convex combination of Markov measures. Kept as an explicit list so
/// entropy stays affine over the components.
class MarkovMixture {
 public:
  struct Component {
    double weight;
    MarkovMeasure measure;
  };

  explicit MarkovMixture(std::vector<Component> components) : components_(std::move(components)) {
    require(!components_.empty(), "mixture needs at least one component");
    double total = 0.0;
    for (const auto& c : components_) {
      require(c.weight > 0.0, "mixture weights must be positive");
      require(c.measure.alphabet_size() == components_.front().measure.alphabet_size(),
              "mixture components must share an alphabet");
      total += c.weight;
    }
    require(std::abs(total - 1.0) <= 1e-12, "mixture weights must sum to 1");
  }

  MarkovMixture(const MarkovMeasure& m) : MarkovMixture(std::vector<Component>{{1.0, m}}) {}

  const std::vector<Component>& components() const { return components_; }
  int alphabet_size() const { return components_.front().measure.alphabet_size(); }
  bool is_single() const { return components_.size() == 1; }

  double cylinder_mass(std::span<const Symbol> w) const {
    double m = 0.0;
    for (const auto& c : components_) m += c.weight * c.measure.cylinder_mass(w);
    return m;
  }

 private:
  std::vector<Component> components_;
};

// ---------------------------------------------------------------------------
// Integration

template <class StateT>
double integrate(const AtomicMeasure<StateT>& mu, const TestFunction& f) {
  double sum = 0.0;
  for (const auto& a : mu.atoms()) sum += a.weight * evaluate(f, a.state);
  return sum;
}

template <class StateT>
double integrate(const AtomicMeasure<StateT>& mu, const LocallyConstant& phi) {
  double sum = 0.0;
  for (const auto& a : mu.atoms()) {
    if constexpr (std::is_same_v<StateT, ShiftPoint>) sum += a.weight * phi(a.state);
    else throw KindMismatch("locally constant observable on real points");
  }
  return sum;
}

namespace detail {
inline std::size_t checked_table_size(int k, int depth) {
  constexpr std::size_t kMaxCylinders = std::size_t{1} << 24;
  std::size_t size = 1;
  for (int i = 0; i < depth; ++i) {
    size *= static_cast<std::size_t>(k);
    if (size > kMaxCylinders) throw PreconditionError("observable depth exceeds supported cylinder depth");
  }
  return size;
}

template <class M>
double integrate_cylinders(const M& m, const LocallyConstant& phi) {
  require(phi.alphabet_size() == m.alphabet_size(), "observable and measure alphabets differ");
  const int k = phi.alphabet_size();
  const std::size_t size = checked_table_size(k, phi.depth());
  Word w(phi.depth(), 0);
  double sum = 0.0;
  for (std::size_t idx = 0; idx < size; ++idx) {
    std::size_t r = idx;
    for (int i = phi.depth() - 1; i >= 0; --i) {
      w[i] = static_cast<Symbol>(r % k);
      r /= k;
    }
    const double v = phi.values()[idx];
    if (v != 0.0) sum += v * m.cylinder_mass(w);
  }
  return sum;
}

template <class M>
double integrate_markov_test(const M& m, const TestFunction& f) {
  if (const auto* c = std::get_if<Cylinder>(&f)) return m.cylinder_mass(c->word);
  throw KindMismatch("hat functions cannot be integrated against a shift measure");
}
}  // namespace detail

inline double integrate(const MarkovMeasure& m, const TestFunction& f) { return detail::integrate_markov_test(m, f); }
inline double integrate(const MarkovMixture& m, const TestFunction& f) { return detail::integrate_markov_test(m, f); }
inline double integrate(const MarkovMeasure& m, const LocallyConstant& phi) { return detail::integrate_cylinders(m, phi); }
inline double integrate(const MarkovMixture& m, const LocallyConstant& phi) { return detail::integrate_cylinders(m, phi); }

/// Integrals of every family member against mu.
template <class M>
std::vector<double> moments(const M& mu, const TestFunctionFamily& family) {
  std::vector<double> out;
  out.reserve(family.functions().size());
  for (const auto& f : family.functions()) out.push_back(integrate(mu, f));
  return out;
}

template <class M1, class M2>
DistanceReport weak_star_distance(const M1& mu, const M2& nu, const TestFunctionFamily& family) {
  return {distance_from_moments(moments(mu, family), moments(nu, family)), family.tail_bound()};
}

/// B(center, radius) in D, stored through the center's moments.
class MeasureBall {
 public:
  MeasureBall(std::vector<double> center_moments, double radius, bool closed = false)
      : center_(std::move(center_moments)), radius_(radius), closed_(closed) {
    require(radius > 0.0, "ball radius must be positive");
  }
  bool contains(const std::vector<double>& m) const {
    const double d = distance_from_moments(center_, m);
    return closed_ ? d <= radius_ : d < radius_;
  }
  double radius() const { return radius_; }

 private:
  std::vector<double> center_;
  double radius_;
  bool closed_;
};

// ---------------------------------------------------------------------------
// Entropy of Markov measures (natural log)

inline double markov_entropy(const MarkovMeasure& m) {
  double h = 0.0;
  const auto& p = m.stochastic();
  const auto& pi = m.stationary();
  for (std::size_t i = 0; i < p.size(); ++i)
    for (double v : p[i])
      if (v > 0.0) h -= pi[i] * v * std::log(v);
  return h;
}

/// Affine over the components.
inline double markov_entropy(const MarkovMixture& m) {
  double h = 0.0;
  for (const auto& c : m.components()) h += c.weight * markov_entropy(c.measure);
  return h;
}

// ---------------------------------------------------------------------------
// Empirical measures

/// E_n(x) = (1/n) sum_{i<n} delta_{f^i x}. With merge, equal orbit points are
/// combined into one atom (quadratic in the number of distinct points).
template <DynamicalSystem S>
AtomicMeasure<typename S::state_type> empirical(const S& sys, const typename S::state_type& x, std::size_t n,
                                                bool merge = false) {
  require(n >= 1, "empirical measure needs n >= 1");
  using T = typename S::state_type;
  std::vector<T> states;
  std::vector<std::uint64_t> counts;
  T y = x;
  for (std::size_t i = 0; i < n; ++i) {
    bool merged = false;
    if (merge) {
      for (std::size_t a = 0; a < states.size(); ++a)
        if (sys.dist(states[a], y) == 0.0) {
          ++counts[a];
          merged = true;
          break;
        }
    }
    if (!merged) {
      states.push_back(y);
      counts.push_back(1);
    }
    if (i + 1 < n) y = sys.apply(y);
  }
  return AtomicMeasure<T>::from_counts(std::move(states), std::move(counts), n);
}

/// Moments of E_n(x) for every n in `ns` (increasing), from one orbit pass.
template <DynamicalSystem S>
std::vector<std::vector<double>> empirical_moments(const S& sys, const typename S::state_type& x,
                                                   const std::vector<std::size_t>& ns,
                                                   const TestFunctionFamily& family) {
  require(std::is_sorted(ns.begin(), ns.end()) && !ns.empty() && ns.front() >= 1, "n grid must be increasing");
  const auto& fs = family.functions();
  std::vector<double> sums(fs.size(), 0.0);
  std::vector<std::vector<double>> out;
  auto y = x;
  std::size_t next = 0;
  for (std::size_t i = 1; next < ns.size(); ++i) {
    for (std::size_t f = 0; f < fs.size(); ++f) sums[f] += evaluate(fs[f], y);
    while (next < ns.size() && ns[next] == i) {
      std::vector<double> m(sums);
      for (double& v : m) v /= static_cast<double>(i);
      out.push_back(std::move(m));
      ++next;
    }
    if (next < ns.size()) y = sys.apply(y);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rational convex decomposition

using Rational = boost::rational<std::int64_t>;

struct DecompositionTerm {
  Rational coefficient;
  MarkovMeasure measure;
};

struct Decomposition {
  std::vector<DecompositionTerm> terms;
  double distance;  ///< D(nu, sum a_j m_j) under the family used
  double tail_bound;
};

namespace detail {
inline void for_each_composition(int total, int parts, std::vector<int>& cur, auto&& visit) {
  if (parts == 1) {
    cur.push_back(total);
    visit(cur);
    cur.pop_back();
    return;
  }
  for (int first = 1; first <= total - (parts - 1); ++first) {
    cur.push_back(first);
    for_each_composition(total - first, parts - 1, cur, visit);
    cur.pop_back();
  }
}

inline double composition_count(int total, int parts) {
  double c = 1.0;
  for (int i = 1; i < parts; ++i) c = c * static_cast<double>(total - i) / static_cast<double>(i);
  return c;
}

// Largest-remainder rounding of weights * d with every part at least 1.
inline std::optional<std::vector<int>> round_weights(const std::vector<double>& w, int d) {
  const int s = static_cast<int>(w.size());
  if (d < s) return std::nullopt;
  std::vector<int> c(s);
  std::vector<std::pair<double, int>> rema;
  int used = 0;
  for (int j = 0; j < s; ++j) {
    const double x = w[j] * d;
    c[j] = std::max(1, static_cast<int>(std::floor(x)));
    used += c[j];
    rema.push_back({x - std::floor(x), j});
  }
  std::stable_sort(rema.begin(), rema.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t r = 0; used < d; r = (r + 1) % rema.size(), ++used) ++c[rema[r].second];
  while (used > d) {
    auto it = std::max_element(c.begin(), c.end());
    if (*it <= 1) return std::nullopt;
    --*it;
    --used;
  }
  return c;
}
}  // namespace detail

/// Rational convex combination sum a_j m_j of the mixture's ergodic components
/// with D(nu, .) <= 1/k. Searches denominators d = 1, 2, ... up to the cap; at
/// the first d that succeeds, returns the closest candidate (ties: lexicographic
/// numerators). Exhaustive over compositions of d while they number <= 20000,
/// largest-remainder rounding beyond that.
inline Decomposition convex_decompose(const MarkovMixture& nu, int k, const TestFunctionFamily& family,
                                      std::int64_t denominator_cap = 10000) {
  require(k >= 1, "convex_decompose needs k >= 1");
  if (nu.is_single()) return {{{Rational(1), nu.components().front().measure}}, 0.0, family.tail_bound()};

  const auto target = moments(nu, family);
  std::vector<std::vector<double>> comp;
  std::vector<double> weights;
  for (const auto& c : nu.components()) {
    comp.push_back(moments(c.measure, family));
    weights.push_back(c.weight);
  }
  const int s = static_cast<int>(comp.size());
  const double goal = 1.0 / k;
  auto distance_of = [&](const std::vector<int>& c, int d) {
    std::vector<double> m(target.size(), 0.0);
    for (int j = 0; j < s; ++j)
      for (std::size_t i = 0; i < m.size(); ++i) m[i] += static_cast<double>(c[j]) / d * comp[j][i];
    return distance_from_moments(target, m);
  };

  double best_overall = 2.0;
  for (int d = s; d <= denominator_cap; ++d) {
    std::optional<std::vector<int>> best;
    double best_d = 2.0;
    auto consider = [&](const std::vector<int>& c) {
      const double dist = distance_of(c, d);
      if (dist < best_d || (dist == best_d && best && c < *best)) {
        best_d = dist;
        best = c;
      }
    };
    if (detail::composition_count(d, s) <= 20000.0) {
      std::vector<int> cur;
      detail::for_each_composition(d, s, cur, consider);
    } else if (auto c = detail::round_weights(weights, d)) {
      consider(*c);
    }
    best_overall = std::min(best_overall, best_d);
    if (best && best_d <= goal) {
      Decomposition out{{}, best_d, family.tail_bound()};
      for (int j = 0; j < s; ++j) out.terms.push_back({Rational((*best)[j], d), nu.components()[j].measure});
      return out;
    }
  }
  throw PrecisionUnattainable("no rational combination within 1/k under the denominator cap", best_overall);
}

// ---------------------------------------------------------------------------
// Limit measures V(x)

template <class StateT>
struct LimitCluster {
  std::size_t n;                    ///< largest grid n in the cluster
  std::size_t members;              ///< number of grid points clustered together
  std::vector<double> moments;      ///< moments of E_n(x)
  AtomicMeasure<StateT> measure;    ///< E_n(x)
};

/// Geometric grid 10, 12, 14, ... (ratio 1.2) ending exactly at horizon.
inline std::vector<std::size_t> geometric_grid(std::size_t start, std::size_t horizon, double ratio = 1.2) {
  std::vector<std::size_t> ns;
  for (std::size_t n = start; n < horizon;
       n = std::max(n + 1, static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio))))
    ns.push_back(n);
  ns.push_back(horizon);
  return ns;
}

/// Finite approximation of the limit set of {E_n(x)}: empirical measures on a
/// geometric n-grid, single-linkage clustered under D with tolerance cluster_tol.
template <DynamicalSystem S>
std::vector<LimitCluster<typename S::state_type>> limit_measures(const S& sys, const typename S::state_type& x,
                                                                 std::size_t horizon,
                                                                 const TestFunctionFamily& family,
                                                                 double cluster_tol) {
  require(horizon >= 10, "limit_measures needs a horizon of at least 10 steps");
  require(cluster_tol > 0.0, "cluster tolerance must be positive");
  const auto ns = geometric_grid(10, horizon);
  const auto ms = empirical_moments(sys, x, ns, family);

  std::vector<std::size_t> parent(ns.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (std::size_t a = 0; a < ns.size(); ++a)
    for (std::size_t b = a + 1; b < ns.size(); ++b)
      if (distance_from_moments(ms[a], ms[b]) <= cluster_tol) parent[find(b)] = find(a);

  std::vector<std::size_t> rep(ns.size(), ns.size()), size(ns.size(), 0);
  for (std::size_t a = 0; a < ns.size(); ++a) {
    const std::size_t r = find(a);
    ++size[r];
    rep[r] = a;  // grid is increasing, so the last member has the largest n
  }
  std::vector<LimitCluster<typename S::state_type>> out;
  for (std::size_t r = 0; r < ns.size(); ++r)
    if (size[r] > 0) out.push_back({ns[rep[r]], size[r], ms[rep[r]], empirical(sys, x, ns[rep[r]])});
  return out;
}

}  // namespace cvp
