#pragma once

// Dynamical systems: one-sided shifts (full and finite type), the tent family
// on [0,2], and piecewise-linear interval maps whose only fixed points are the
// endpoints. Every system is an immutable value exposing apply() and dist();
// generic algorithms elsewhere are written against the DynamicalSystem concept.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <memory>
#include <numeric>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cvp/error.hpp"

namespace cvp {

using Symbol = int;
using Word = std::vector<Symbol>;

/// Eventually periodic one-sided sequence: a finite prefix followed by a
/// repeating cycle. Shifting is O(1); buffers are shared between shifts so
/// long orbits cost a few words per point.
class ShiftPoint {
 public:
  ShiftPoint(Word prefix, Word cycle)
      : prefix_(std::make_shared<const Word>(std::move(prefix))),
        cycle_(std::make_shared<const Word>(std::move(cycle))) {
    require(!cycle_->empty(), "shift point needs a nonempty tail cycle");
  }

  static ShiftPoint periodic(Word cycle) { return ShiftPoint({}, std::move(cycle)); }
  static ShiftPoint filled(Word prefix, Symbol fill) { return ShiftPoint(std::move(prefix), {fill}); }

  Symbol operator[](std::size_t i) const {
    const std::size_t remaining = prefix_->size() - offset_;
    if (i < remaining) return (*prefix_)[offset_ + i];
    return (*cycle_)[(phase_ + (i - remaining)) % cycle_->size()];
  }

  ShiftPoint shifted(std::size_t k = 1) const {
    ShiftPoint out = *this;
    const std::size_t remaining = prefix_->size() - offset_;
    if (k <= remaining) {
      out.offset_ += k;
    } else {
      out.offset_ = prefix_->size();
      out.phase_ = (phase_ + (k - remaining)) % cycle_->size();
    }
    return out;
  }

  std::size_t prefix_length() const { return prefix_->size() - offset_; }
  std::size_t cycle_length() const { return cycle_->size(); }

  Word take(std::size_t n) const {
    Word out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = (*this)[i];
    return out;
  }

  /// Same buffers at the same position: equal without scanning.
  bool shares_position(const ShiftPoint& o) const {
    return prefix_ == o.prefix_ && cycle_ == o.cycle_ && offset_ == o.offset_ && phase_ == o.phase_;
  }

 private:
  std::shared_ptr<const Word> prefix_;
  std::shared_ptr<const Word> cycle_;
  std::size_t offset_ = 0;
  std::size_t phase_ = 0;
};

/// Comparisons of two eventually periodic sequences are exact up to
/// max(prefix) + lcm(cycles); the lcm term is capped at this depth.
inline constexpr std::size_t kMaxCompareDepth = 4096;

/// First index where x and y disagree; nullopt if they agree to compared depth.
inline std::optional<std::size_t> first_disagreement(const ShiftPoint& x, const ShiftPoint& y) {
  if (x.shares_position(y)) return std::nullopt;
  const std::size_t period = std::lcm(x.cycle_length(), y.cycle_length());
  const std::size_t depth =
      std::max(x.prefix_length(), y.prefix_length()) + std::min(period, kMaxCompareDepth);
  for (std::size_t i = 0; i < depth; ++i)
    if (x[i] != y[i]) return i;
  return std::nullopt;
}

class ShiftSpace {
 public:
  using state_type = ShiftPoint;

  static ShiftSpace full(int alphabet_size) {
    require(alphabet_size >= 2, "alphabet size must be at least 2");
    return ShiftSpace(std::vector<std::vector<int>>(alphabet_size, std::vector<int>(alphabet_size, 1)));
  }

  explicit ShiftSpace(std::vector<std::vector<int>> transition) : transition_(std::move(transition)) {
    const std::size_t k = transition_.size();
    require(k >= 2, "alphabet size must be at least 2");
    full_ = true;
    for (const auto& row : transition_) {
      require(row.size() == k, "transition matrix must be square");
      bool any = false;
      for (int v : row) {
        require(v == 0 || v == 1, "transition matrix must be 0/1");
        any = any || v == 1;
        full_ = full_ && v == 1;
      }
      require(any, "every symbol needs a successor");
    }
  }

  int alphabet_size() const { return static_cast<int>(transition_.size()); }
  bool is_full() const { return full_; }
  const std::vector<std::vector<int>>& transition() const { return transition_; }

  bool allowed(Symbol a, Symbol b) const { return transition_[a][b] == 1; }

  bool valid_symbol(Symbol a) const { return a >= 0 && a < alphabet_size(); }

  /// Strong connectivity of the transition graph.
  bool is_irreducible() const {
    const int k = alphabet_size();
    for (int start = 0; start < k; ++start) {
      std::vector<char> seen(k, 0);
      std::vector<int> stack{start};
      seen[start] = 1;
      while (!stack.empty()) {
        int a = stack.back();
        stack.pop_back();
        for (int b = 0; b < k; ++b)
          if (allowed(a, b) && !seen[b]) {
            seen[b] = 1;
            stack.push_back(b);
          }
      }
      if (std::count(seen.begin(), seen.end(), 1) != k) return false;
    }
    return true;
  }

  bool admissible(std::span<const Symbol> w) const {
    for (Symbol s : w)
      if (!valid_symbol(s)) return false;
    for (std::size_t i = 0; i + 1 < w.size(); ++i)
      if (!allowed(w[i], w[i + 1])) return false;
    return true;
  }

  /// Checks symbols and every transition of the prefix, the prefix/cycle
  /// seam, and the cycle including its wrap-around.
  bool admits(const ShiftPoint& x) const {
    const std::size_t depth = x.prefix_length() + x.cycle_length() + 1;
    for (std::size_t i = 0; i < depth; ++i) {
      if (!valid_symbol(x[i])) return false;
      if (i > 0 && !allowed(x[i - 1], x[i])) return false;
    }
    return true;
  }

  ShiftPoint apply(const ShiftPoint& x) const { return x.shifted(1); }
  ShiftPoint iterate(const ShiftPoint& x, std::size_t k) const { return x.shifted(k); }

  /// 2^-k with k the first disagreement index.
  double dist(const ShiftPoint& x, const ShiftPoint& y) const {
    const auto k = first_disagreement(x, y);
    return k ? std::ldexp(1.0, -static_cast<int>(*k)) : 0.0;
  }

  /// Closed form of max_{i<n} dist(f^i x, f^i y).
  double dist_n(const ShiftPoint& x, const ShiftPoint& y, std::size_t n) const {
    require(n >= 1, "dist_n needs n >= 1");
    const auto k = first_disagreement(x, y);
    if (!k) return 0.0;
    if (*k < n) return 1.0;
    return std::ldexp(1.0, -static_cast<int>(*k - n + 1));
  }

  /// Shortest cycle a -> ... -> a, as the symbols visited after a (ending in a).
  Word shortest_cycle_through(Symbol a) const {
    const int k = alphabet_size();
    std::vector<int> parent(k, -1);
    std::queue<int> frontier;
    for (int b = 0; b < k; ++b)
      if (allowed(a, b)) {
        if (b == a) return {a};
        if (parent[b] == -1) {
          parent[b] = a;
          frontier.push(b);
        }
      }
    while (!frontier.empty()) {
      int u = frontier.front();
      frontier.pop();
      for (int b = 0; b < k; ++b) {
        if (!allowed(u, b)) continue;
        if (b == a) {
          Word path{a};
          for (int v = u; v != a; v = parent[v]) path.push_back(v);
          // [a, u, ..., b1] reversed is the symbols visited after a.
          std::reverse(path.begin(), path.end());
          return path;
        }
        if (parent[b] == -1 && b != a) {
          parent[b] = u;
          frontier.push(b);
        }
      }
    }
    throw PreconditionError("symbol " + std::to_string(a) + " lies on no cycle");
  }

  /// Extends a finite admissible word with an admissible periodic tail.
  ShiftPoint close_word(Word w) const {
    require(!w.empty(), "cannot close an empty word");
    Word cycle = shortest_cycle_through(w.back());
    return ShiftPoint(std::move(w), std::move(cycle));
  }

 private:
  std::vector<std::vector<int>> transition_;
  bool full_ = false;
};

/// One affine branch y0 + (x - x0)(y1 - y0)/(x1 - x0) on [x0, x1].
struct LinearPiece {
  double x0, x1, y0, y1;

  double at(double x) const { return y0 + (x - x0) * (y1 - y0) / (x1 - x0); }
  double slope() const { return (y1 - y0) / (x1 - x0); }
  /// The unique preimage of y on this piece; requires a nonzero slope.
  double preimage(double y) const { return x0 + (y - y0) * (x1 - x0) / (y1 - y0); }
  double image_lo() const { return std::min(y0, y1); }
  double image_hi() const { return std::max(y0, y1); }
};

/// f_s(x) = s x on [0,1], s (2 - x) on [1,2], for slope s in (1, 2].
class TentMap {
 public:
  using state_type = double;

  explicit TentMap(double slope) : slope_(slope) {
    require(slope > 1.0 && slope <= 2.0, "tent slope must lie in (1, 2]");
  }

  double slope() const { return slope_; }
  std::pair<double, double> domain() const { return {0.0, 2.0}; }
  bool contains(double x) const { return x >= 0.0 && x <= 2.0; }

  double apply(double x) const {
    require(contains(x), "tent map state outside [0, 2]");
    return x <= 1.0 ? slope_ * x : slope_ * (2.0 - x);
  }

  double dist(double x, double y) const { return std::abs(x - y); }

  std::vector<LinearPiece> pieces() const { return {{0.0, 1.0, 0.0, slope_}, {1.0, 2.0, slope_, 0.0}}; }

 private:
  double slope_;
};

/// Itinerary w_i = 0 if f^i(x) <= 1 else 1; the kink belongs to the left branch.
inline Word itinerary(const TentMap& f, double x, std::size_t n) {
  Word w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = x <= 1.0 ? 0 : 1;
    if (i + 1 < n) x = f.apply(x);
  }
  return w;
}

/// Continuous piecewise-linear self-map of [0,1] interpolating
/// (breakpoints[i], values[i]). Construction rejects any map with a fixed
/// point in the open interval (0,1).
class EndpointFixedMap {
 public:
  using state_type = double;

  EndpointFixedMap(std::vector<double> breakpoints, std::vector<double> values)
      : breakpoints_(std::move(breakpoints)), values_(std::move(values)) {
    require(breakpoints_.size() >= 2, "need at least two breakpoints");
    require(breakpoints_.size() == values_.size(), "breakpoints and values differ in length");
    require(breakpoints_.front() == 0.0 && breakpoints_.back() == 1.0, "breakpoints must span [0,1]");
    for (std::size_t i = 0; i + 1 < breakpoints_.size(); ++i)
      require(breakpoints_[i] < breakpoints_[i + 1], "breakpoints must increase strictly");
    for (double v : values_) require(v >= 0.0 && v <= 1.0, "values must lie in [0,1]");
    if (auto x = interior_fixed_point()) throw PreconditionError("map has an interior fixed point at " + std::to_string(*x));
  }

  const std::vector<double>& breakpoints() const { return breakpoints_; }
  const std::vector<double>& values() const { return values_; }
  std::pair<double, double> domain() const { return {0.0, 1.0}; }
  bool contains(double x) const { return x >= 0.0 && x <= 1.0; }

  double apply(double x) const {
    require(contains(x), "interval map state outside [0, 1]");
    auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), x);
    std::size_t i = it == breakpoints_.begin() ? 0 : static_cast<std::size_t>(it - breakpoints_.begin()) - 1;
    if (i + 1 >= breakpoints_.size()) i = breakpoints_.size() - 2;
    return piece(i).at(x);
  }

  double dist(double x, double y) const { return std::abs(x - y); }

  std::vector<LinearPiece> pieces() const {
    std::vector<LinearPiece> out;
    for (std::size_t i = 0; i + 1 < breakpoints_.size(); ++i) out.push_back(piece(i));
    return out;
  }

 private:
  LinearPiece piece(std::size_t i) const {
    return {breakpoints_[i], breakpoints_[i + 1], values_[i], values_[i + 1]};
  }

  // g(x) = f(x) - x is affine on every piece, so a piece holds an interior
  // fixed point iff g vanishes at an interior breakpoint or changes sign.
  std::optional<double> interior_fixed_point() const {
    for (std::size_t i = 0; i + 1 < breakpoints_.size(); ++i) {
      const double a = breakpoints_[i], b = breakpoints_[i + 1];
      const double ga = values_[i] - a, gb = values_[i + 1] - b;
      if (ga == 0.0 && gb == 0.0) return 0.5 * (a + b);
      if (ga == 0.0 && a > 0.0) return a;
      if (gb == 0.0 && b < 1.0) return b;
      if ((ga < 0.0 && gb > 0.0) || (ga > 0.0 && gb < 0.0)) return a - ga * (b - a) / (gb - ga);
    }
    return std::nullopt;
  }

  std::vector<double> breakpoints_;
  std::vector<double> values_;
};

template <class S>
concept DynamicalSystem = requires(const S& s, const typename S::state_type& x) {
  { s.apply(x) } -> std::convertible_to<typename S::state_type>;
  { s.dist(x, x) } -> std::convertible_to<double>;
};

template <class S>
concept PiecewiseLinearMap = DynamicalSystem<S> && std::same_as<typename S::state_type, double> &&
                             requires(const S& s) {
                               { s.pieces() } -> std::convertible_to<std::vector<LinearPiece>>;
                               { s.domain() } -> std::convertible_to<std::pair<double, double>>;
                             };

template <DynamicalSystem S>
typename S::state_type iterate(const S& sys, typename S::state_type x, std::size_t k) {
  if constexpr (requires { sys.iterate(x, k); }) {
    return sys.iterate(x, k);
  } else {
    for (std::size_t i = 0; i < k; ++i) x = sys.apply(x);
    return x;
  }
}

/// max_{0<=i<n} dist(f^i x, f^i y).
template <DynamicalSystem S>
double dist_n(const S& sys, const typename S::state_type& x, const typename S::state_type& y, std::size_t n) {
  if constexpr (requires { sys.dist_n(x, y, n); }) {
    return sys.dist_n(x, y, n);
  } else {
    require(n >= 1, "dist_n needs n >= 1");
    auto a = x;
    auto b = y;
    double worst = sys.dist(a, b);
    for (std::size_t i = 1; i < n; ++i) {
      a = sys.apply(a);
      b = sys.apply(b);
      worst = std::max(worst, sys.dist(a, b));
    }
    return worst;
  }
}

/// [x, f(x), ..., f^{n-1}(x)].
template <DynamicalSystem S>
std::vector<typename S::state_type> orbit(const S& sys, typename S::state_type x, std::size_t n) {
  require(n >= 1, "orbit needs n >= 1");
  std::vector<typename S::state_type> out;
  out.reserve(n);
  out.push_back(x);
  for (std::size_t i = 1; i < n; ++i) out.push_back(sys.apply(out.back()));
  return out;
}

using State = std::variant<ShiftPoint, double>;

/// Type-erased system for configuration-driven use. Operations on a state of
/// the wrong kind throw KindMismatch.
class System {
 public:
  using state_type = State;
  using Impl = std::variant<ShiftSpace, TentMap, EndpointFixedMap>;

  System(ShiftSpace s) : impl_(std::move(s)) {}
  System(TentMap s) : impl_(std::move(s)) {}
  System(EndpointFixedMap s) : impl_(std::move(s)) {}

  const Impl& impl() const { return impl_; }
  bool is_shift() const { return std::holds_alternative<ShiftSpace>(impl_); }
  const ShiftSpace& shift() const {
    if (!is_shift()) throw KindMismatch("system is not a shift space");
    return std::get<ShiftSpace>(impl_);
  }

  std::string kind() const {
    return std::visit(
        [](const auto& s) -> std::string {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, ShiftSpace>) return s.is_full() ? "full_shift" : "sft";
          else if constexpr (std::is_same_v<T, TentMap>) return "tent";
          else return "plmap";
        },
        impl_);
  }

  State apply(const State& x) const {
    return std::visit([&](const auto& s) -> State { return s.apply(as<std::decay_t<decltype(s)>>(x)); }, impl_);
  }

  State iterate(const State& x, std::size_t k) const {
    return std::visit([&](const auto& s) -> State { return cvp::iterate(s, as<std::decay_t<decltype(s)>>(x), k); },
                      impl_);
  }

  double dist(const State& x, const State& y) const {
    return std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          return s.dist(as<T>(x), as<T>(y));
        },
        impl_);
  }

  double dist_n(const State& x, const State& y, std::size_t n) const {
    return std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          return cvp::dist_n(s, as<T>(x), as<T>(y), n);
        },
        impl_);
  }

 private:
  template <class Sys>
  static const typename Sys::state_type& as(const State& x) {
    using T = typename Sys::state_type;
    if (const T* p = std::get_if<T>(&x)) return *p;
    throw KindMismatch("state kind does not match system kind");
  }

  Impl impl_;
};

}  // namespace cvp
