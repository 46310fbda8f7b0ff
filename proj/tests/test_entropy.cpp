#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "cvp/entropy.hpp"

using namespace cvp;

namespace {

const ShiftSpace kFull2 = ShiftSpace::full(2);

double binom(int n, int k) {
  double c = 1.0;
  for (int i = 1; i <= k; ++i) c = c * (n - k + i) / i;
  return c;
}

double binary_entropy(double p) { return p <= 0 || p >= 1 ? 0.0 : -p * std::log(p) - (1 - p) * std::log(1 - p); }

// Sort every length-L cylinder mass, count until the running total exceeds 1 - delta.
std::uint64_t katok_brute(const ShiftSpace& shift, const MarkovMeasure& m, std::size_t len, double delta) {
  std::vector<double> masses;
  const int k = shift.alphabet_size();
  Word w(len, 0);
  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == len) {
      if (shift.admissible(w)) masses.push_back(m.cylinder_mass(w));
      return;
    }
    for (int a = 0; a < k; ++a) {
      w[i] = a;
      rec(i + 1);
    }
  };
  rec(0);
  std::sort(masses.rbegin(), masses.rend());
  long double acc = 0.0L;
  for (std::size_t i = 0; i < masses.size(); ++i) {
    acc += masses[i];
    if (acc > 1.0L - delta) return i + 1;
  }
  return masses.size();
}

std::vector<ShiftPoint> all_words(std::size_t len) {
  std::vector<ShiftPoint> out;
  for (std::uint32_t v = 0; v < (1u << len); ++v) {
    Word w(len);
    for (std::size_t i = 0; i < len; ++i) w[i] = static_cast<Symbol>((v >> (len - 1 - i)) & 1u);
    out.push_back(ShiftPoint::filled(w, 0));
  }
  return out;
}

}  // namespace

TEST(MaxSeparated, Examples) {
  EXPECT_EQ(max_separated(kFull2, {ShiftPoint::periodic({0})}, 3, 0.5).count, 1u);
  const auto words = all_words(4);
  const auto s = max_separated(kFull2, words, 3, 0.5);
  EXPECT_EQ(s.count, 16u);
  EXPECT_TRUE(s.exact);
  // Agree on the first 10 symbols: d_3 = 2^-(10-3+1) < 1/2.
  const auto a = ShiftPoint::filled(Word(10, 0), 0), b = ShiftPoint::filled(Word(10, 0), 1);
  EXPECT_EQ(max_separated(kFull2, {a, b}, 3, 0.5).count, 1u);
  EXPECT_THROW(max_separated(kFull2, {a}, 3, 0.0), PreconditionError);
}

TEST(MinSpanning, Examples) {
  const auto a = ShiftPoint::filled(Word(10, 0), 0), b = ShiftPoint::filled(Word(10, 0), 1);
  EXPECT_EQ(min_spanning(kFull2, {a, b}, 3, 0.5).count, 1u);
  EXPECT_EQ(min_spanning(kFull2, all_words(4), 3, 0.5).count, 16u);
  EXPECT_EQ(min_spanning(kFull2, {}, 3, 0.5).count, 0u);
}

TEST(MaxSeparated, WitnessesArePairwiseSeparated) {
  std::mt19937_64 gen(9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ShiftPoint> c;
    for (int i = 0; i < 20; ++i) {
      Word w(10);
      for (auto& x : w) x = static_cast<Symbol>(gen() & 1);
      c.push_back(ShiftPoint::filled(w, 0));
    }
    const auto s = max_separated(kFull2, c, 4, 0.25);
    for (auto i : s.witnesses)
      for (auto j : s.witnesses)
        if (i != j) {
          EXPECT_GE(kFull2.dist_n(c[i], c[j], 4), 0.25);
        }
    // Separation on shifts is prefix inequality on n+q symbols: the exact
    // answer is the number of distinct 6-prefixes.
    std::vector<Word> prefixes;
    for (const auto& p : c) prefixes.push_back(p.take(6));
    std::sort(prefixes.begin(), prefixes.end());
    prefixes.erase(std::unique(prefixes.begin(), prefixes.end()), prefixes.end());
    EXPECT_EQ(s.count, prefixes.size());
  }
}

// P(n, 2 eps) <= Q(n, eps) <= P(n, eps), exhaustively over n + q <= 12.
TEST(SeparatedSpanning, Sandwich) {
  std::mt19937_64 gen(10);
  const ShiftSpace golden({{1, 1}, {1, 0}});
  for (const ShiftSpace* s : {&kFull2, &golden})
    for (std::size_t n = 1; n <= 11; ++n)
      for (int q = 0; n + static_cast<std::size_t>(q) <= 12; ++q) {
        for (int trial = 0; trial < 4; ++trial) {
          std::vector<ShiftPoint> pts;
          while (pts.size() < 18) {
            Word w(12);
            for (auto& x : w) x = static_cast<Symbol>(gen() % 3 == 0);
            if (s->admissible(w)) pts.push_back(s->close_word(w));
          }
          const double eps = std::ldexp(1.0, -q);
          const auto p2 = max_separated(*s, pts, n, 2 * eps).count;
          const auto qq = min_spanning(*s, pts, n, eps).count;
          const auto p1 = max_separated(*s, pts, n, eps).count;
          EXPECT_LE(p2, qq) << "n=" << n << " q=" << q;
          EXPECT_LE(qq, p1) << "n=" << n << " q=" << q;
        }
      }
}

TEST(KatokCount, UniformClosedForm) {
  const auto m = MarkovMeasure::bernoulli(0.5);
  EXPECT_EQ(katok_count(kFull2, m, 10, 1, 0.1), 1844u);
  EXPECT_EQ(katok_count(kFull2, m, 10, 1, 0.1), static_cast<std::uint64_t>(std::ceil(0.9 * 2048)));
  EXPECT_EQ(katok_count(kFull2, m, 20, 1, 0.1), static_cast<std::uint64_t>(std::ceil(0.9 * std::ldexp(1.0, 21))));
  EXPECT_EQ(katok_count(kFull2, m, 10, 1, 0.999999), 1u);
}

TEST(KatokCount, MatchesBruteForce) {
  const auto b7 = MarkovMeasure::bernoulli(0.7);
  EXPECT_EQ(katok_count(kFull2, b7, 8, 1, 0.1), 256u);
  EXPECT_EQ(katok_count(kFull2, b7, 8, 1, 0.1), katok_brute(kFull2, b7, 9, 0.1));
  const ShiftSpace golden({{1, 1}, {1, 0}});
  const auto gm = MarkovMeasure::from_matrix({{0.6, 0.4}, {1.0, 0.0}});
  const auto mk = MarkovMeasure::from_matrix({{0.8, 0.2}, {0.35, 0.65}});
  for (std::size_t n = 1; n <= 12; ++n)
    for (int q = 0; q <= 3; ++q)
      for (double delta : {0.05, 0.2, 0.5, 0.9}) {
        EXPECT_EQ(katok_count(kFull2, b7, n, q, delta), katok_brute(kFull2, b7, n + q, delta));
        EXPECT_EQ(katok_count(golden, gm, n, q, delta), katok_brute(golden, gm, n + q, delta));
        EXPECT_EQ(katok_count(kFull2, mk, n, q, delta), katok_brute(kFull2, mk, n + q, delta));
      }
}

TEST(KatokCount, MonotoneInDeltaAndN) {
  const auto m = MarkovMeasure::from_matrix({{0.8, 0.2}, {0.35, 0.65}});
  for (std::size_t n = 1; n <= 14; ++n) {
    std::uint64_t prev = std::numeric_limits<std::uint64_t>::max();
    for (double delta : {0.01, 0.05, 0.1, 0.3, 0.6, 0.9}) {
      const auto c = katok_count(kFull2, m, n, 1, delta);
      EXPECT_LE(c, prev);
      prev = c;
      EXPECT_LE(katok_count(kFull2, m, n, 1, delta), katok_count(kFull2, m, n + 1, 1, delta));
    }
  }
}

TEST(KatokCount, Preconditions) {
  const auto m = MarkovMeasure::bernoulli(0.5);
  EXPECT_THROW(katok_count(kFull2, m, 25, 2, 0.1), PreconditionError);
  EXPECT_THROW(katok_count(kFull2, m, 5, 1, 0.0), PreconditionError);
  EXPECT_THROW(katok_count(kFull2, m, 5, 1, 1.0), PreconditionError);
  EXPECT_THROW(katok_count(ShiftSpace({{1, 1}, {1, 0}}), m, 5, 1, 0.1), PreconditionError);
}

TEST(KatokEntropy, FairCoin) {
  std::vector<std::size_t> grid(20);
  std::iota(grid.begin(), grid.end(), 1);
  const auto est = katok_entropy(kFull2, MarkovMeasure::bernoulli(0.5), 1, 0.1, grid);
  ASSERT_TRUE(est.value);
  EXPECT_NEAR(*est.value, std::log(std::ceil(0.9 * std::ldexp(1.0, 21))) / 20.0, 1e-12);
  EXPECT_NEAR(*est.value, std::log(2.0), 0.05);
  EXPECT_EQ(est.diagnostics.size(), 20u);
  EXPECT_EQ(est.n_used, 20u);
  EXPECT_EQ(est.method, EntropyMethod::katok);
  EXPECT_DOUBLE_EQ(est.epsilon, 0.5);
}

TEST(KatokEntropy, FixedPointHasZeroRate) {
  const auto est = katok_entropy(kFull2, MarkovMeasure::point_mass(2, 0), 1, 0.1, {1, 5, 10, 20});
  for (const auto& r : est.diagnostics) {
    EXPECT_EQ(r.count, 1u);
    EXPECT_EQ(*r.rate, 0.0);
  }
  // A period-p cycle needs at most p cylinders, so its rates are at most ln(p)/n.
  const auto c = katok_entropy(kFull2, MarkovMeasure::cycle(2), 1, 0.1, {1, 5, 10, 20});
  for (const auto& r : c.diagnostics) EXPECT_LE(*r.rate, std::log(2.0) / r.n + 1e-15);
}

TEST(KatokEntropy, BiasedCoinApproachesEntropy) {
  std::vector<std::size_t> grid;
  for (std::size_t n = 4; n <= 20; n += 4) grid.push_back(n);
  const auto est = katok_entropy(kFull2, MarkovMeasure::bernoulli(0.7), 2, 0.2, grid);
  for (std::size_t i = 1; i < est.diagnostics.size(); ++i)
    EXPECT_LT(*est.diagnostics[i].rate, *est.diagnostics[i - 1].rate);
  EXPECT_NEAR(*est.value, binary_entropy(0.7), 0.08);
  EXPECT_THROW(katok_entropy(kFull2, MarkovMeasure::bernoulli(0.7), 2, 0.2, {4, 4}), PreconditionError);
}

TEST(LevelSet, FullRangeCountsEverything) {
  const auto phi = LocallyConstant::frequency(2, 1);
  const auto e = levelset_count(kFull2, {phi, {-0.1, 1.1, false}, 20});
  EXPECT_NEAR(*e.value, std::log(2.0), 1e-15);
  EXPECT_EQ(e.diagnostics[0].count, 1u << 20);
}

TEST(LevelSet, BinomialOracles) {
  const auto phi = LocallyConstant::frequency(2, 1);
  const auto mid = levelset_count(kFull2, {phi, {0.45, 0.55, false}, 20});
  EXPECT_EQ(mid.diagnostics[0].count, 184756u);
  EXPECT_NEAR(*mid.value, std::log(binom(20, 10)) / 20.0, 1e-14);
  EXPECT_NEAR(*mid.value, 0.606340, 1e-6);
  // j = 5 and j = 7 sit on the boundary: only j = 6 counts when open.
  const auto low = levelset_count(kFull2, {phi, {0.25, 0.35, false}, 20});
  EXPECT_EQ(low.diagnostics[0].count, static_cast<std::uint64_t>(binom(20, 6)));
  const auto closed = levelset_count(kFull2, {phi, {0.25, 0.35, true}, 20});
  EXPECT_EQ(closed.diagnostics[0].count, static_cast<std::uint64_t>(binom(20, 5) + binom(20, 6) + binom(20, 7)));
}

TEST(LevelSet, EmptyIsTagged) {
  const auto phi = LocallyConstant::frequency(2, 1);
  const auto e = levelset_count(kFull2, {phi, {0.51, 0.54, false}, 10});
  EXPECT_TRUE(e.empty());
  EXPECT_EQ(e.diagnostics[0].count, 0u);
  EXPECT_THROW(levelset_count(kFull2, {phi, {0.6, 0.5, false}, 10}), PreconditionError);
}

TEST(LevelSet, DepthTwoMatchesBruteForce) {
  const ShiftSpace golden({{1, 1}, {1, 0}});
  const LocallyConstant phi(2, 2, {0.0, 1.0, 0.5, 2.0});
  for (std::size_t n = 1; n <= 12; ++n)
    for (const Interval& u : {Interval{0.2, 0.6, false}, Interval{0.0, 0.5, true}}) {
      std::uint64_t count = 0;
      const std::size_t len = n + 1;
      for (std::uint32_t v = 0; v < (1u << len); ++v) {
        Word w(len);
        for (std::size_t i = 0; i < len; ++i) w[i] = static_cast<Symbol>((v >> i) & 1u);
        if (!golden.admissible(w)) continue;
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += phi.values()[static_cast<std::size_t>(2 * w[i] + w[i + 1])];
        count += u.contains(s / static_cast<double>(n));
      }
      EXPECT_EQ(levelset_count(golden, {phi, u, n}).diagnostics[0].count, count) << n;
    }
}

TEST(LevelSet, NeverExceedsLogAlphabet) {
  const auto phi = LocallyConstant::frequency(3, 2);
  const ShiftSpace s3 = ShiftSpace::full(3);
  for (std::size_t n = 4; n <= 12; n += 4) {
    EXPECT_LE(*levelset_count(s3, {phi, {0.1, 0.5, false}, n}).value, std::log(3.0) + 1e-15);
    EXPECT_NEAR(*levelset_count(s3, {phi, {0.0, 1.0, true}, n}).value, std::log(3.0), 1e-14);
  }
}

// Counting never beats the variational value by more than the Stirling term.
TEST(LevelSet, StirlingUpperBound) {
  const auto phi = LocallyConstant::frequency(2, 1);
  for (std::size_t n : {12u, 16u, 20u, 24u})
    for (int a = 1; a <= 9; ++a) {
      const double alpha = a / 10.0;
      const double w = 1.0 / static_cast<double>(n);
      const auto e = levelset_count(kFull2, {phi, {alpha - w, alpha + w, false}, n});
      const double bound = binary_entropy(alpha) +
                           std::log(2 * M_PI * static_cast<double>(n) * alpha * (1 - alpha)) / (2.0 * n) + 0.02;
      EXPECT_LE(*e.value, bound) << "n=" << n << " alpha=" << alpha;
    }
}
