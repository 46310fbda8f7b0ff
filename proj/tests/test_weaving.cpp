#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "cvp/weaving.hpp"

using namespace cvp;

namespace {

const ShiftSpace kFull2 = ShiftSpace::full(2);
const ShiftSpace kGolden({{1, 1}, {1, 0}});

using Wide = unsigned __int128;

// D between the length-n empirical measure of z and nu, by counting
// occurrences of each cylinder word directly.
double direct_distance(const ShiftPoint& z, std::size_t n, const MarkovMixture& nu, const TestFunctionFamily& fam) {
  double s = 0.0;
  for (std::size_t i = 0; i < fam.functions().size(); ++i) {
    const Word& c = std::get<Cylinder>(fam.functions()[i]).word;
    std::size_t hits = 0;
    for (std::size_t p = 0; p < n; ++p) {
      bool eq = true;
      for (std::size_t r = 0; r < c.size() && eq; ++r) eq = z[p + r] == c[r];
      hits += eq;
    }
    s += std::abs(static_cast<double>(hits) / static_cast<double>(n) - nu.cylinder_mass(c)) * std::ldexp(1.0, -static_cast<int>(i + 2));
  }
  return s;
}

// Smallest s >= 1 with an admissible word of length s + d from `from` to
// `to`, and the lexicographically smallest such word, by enumeration.
Connector brute_connector(const ShiftSpace& sh, const Word& from, const Word& to) {
  const std::size_t d = from.size();
  for (std::size_t s = 1; s <= 8; ++s) {
    // Enumerate every tail of length s after `from`, lexicographically.
    const std::size_t k = static_cast<std::size_t>(sh.alphabet_size());
    std::size_t total = 1;
    for (std::size_t i = 0; i < s; ++i) total *= k;
    for (std::size_t code = 0; code < total; ++code) {
      Word w = from;
      std::size_t c = code;
      Word tail(s);
      for (std::size_t i = s; i-- > 0; c /= k) tail[i] = static_cast<Symbol>(c % k);
      w.insert(w.end(), tail.begin(), tail.end());
      if (!sh.admissible(w)) continue;
      if (!std::equal(to.begin(), to.end(), w.end() - static_cast<std::ptrdiff_t>(d))) continue;
      return {s, w};
    }
  }
  return {0, {}};
}

// Every schedule invariant, recomputed from scratch.
void expect_schedule_invariants(const WeaveSchedule& w, const ConnectorTable& s) {
  for (int k = 1; k <= w.k_max; ++k) {
    const auto K = static_cast<std::size_t>(k - 1);
    Rational covered = 0;
    for (std::size_t j = 0; j < w.measures(k); ++j) {
      EXPECT_EQ(w.C[K][j], w.a[K][j] / Rational(static_cast<std::int64_t>(w.n[K][j])));
      const Rational r = Rational(static_cast<std::int64_t>(w.N[K])) * w.C[K][j];
      EXPECT_EQ(r.denominator(), 1);
      EXPECT_EQ(static_cast<std::uint64_t>(r.numerator()), w.reps[K][j]);
      covered += Rational(static_cast<std::int64_t>(w.reps[K][j] * w.n[K][j]));
    }
    EXPECT_EQ(covered, Rational(static_cast<std::int64_t>(w.N[K])));
    std::uint64_t sum = 0;
    for (int r1 = 1; r1 <= k + 1; ++r1)
      for (std::size_t j1 = 1; j1 <= s.measures(r1); ++j1)
        for (int r2 = 1; r2 <= k + 1; ++r2)
          for (std::size_t j2 = 1; j2 <= s.measures(r2); ++j2) sum += s(r1, j1, r2, j2);
    EXPECT_GE(w.N[K], static_cast<std::uint64_t>(k) * sum) << "connector budget at " << k;
    std::uint64_t x = 0;
    for (std::size_t j = 1; j <= w.measures(k); ++j) x += s(k, j, k, j % w.measures(k) + 1);
    EXPECT_EQ(w.X[K], x);
    EXPECT_EQ(w.Y[K], w.N[K] + x);
    // N/Y >= 1 - 1/k
    EXPECT_GE(Rational(static_cast<std::int64_t>(w.N[K]), static_cast<std::int64_t>(w.Y[K])), Rational(1) - Rational(1, k));
    if (k >= 2) {
      EXPECT_GT(w.T[K], w.T[K - 1]);
    }
  }
  for (int k = 1; k < w.k_max; ++k) {
    Wide yt = 0, yts = 0;
    for (int r = 1; r <= k; ++r) {
      yt += static_cast<Wide>(w.Y[r - 1]) * w.T[r - 1];
      yts += static_cast<Wide>(w.Y[r - 1]) * w.T[r - 1] + s(r, 1, r + 1, 1);
    }
    EXPECT_TRUE(static_cast<Wide>(k + 1) * w.Y[k] <= yt) << "level growth first at " << k;
    EXPECT_TRUE(static_cast<Wide>(k + 1) * yts <= static_cast<Wide>(w.Y[k]) * w.T[k]) << "level growth second at " << k;
  }
  // Offsets by walking the concatenation order.
  std::uint64_t pos = 0;
  for (int q = 1; q <= w.k_max; ++q) {
    const auto Q = static_cast<std::size_t>(q - 1);
    EXPECT_EQ(w.M[Q], pos);
    for (std::uint64_t i = 1; i <= w.T[Q]; ++i) {
      EXPECT_EQ(w.M_ki[Q][i - 1], pos);
      for (std::size_t j = 1; j <= w.measures(q); ++j) {
        for (std::uint64_t t = 1; t <= w.reps[Q][j - 1]; ++t) {
          EXPECT_EQ(w.offset(q, i, j, t), pos);
          pos += w.n[Q][j - 1];
        }
        pos += s(q, j, q, j % w.measures(q) + 1);
      }
    }
    pos += s(q, 1, q + 1, 1);
  }
  EXPECT_EQ(w.length(), pos);
}

WeaveParams small_params() {
  WeaveParams p;
  p.k_max = 2;
  p.base_block = 32;
  p.growth = 2;
  p.budget = 200;
  p.length_cap = 400'000;
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Blocks

TEST(SelectBlocks, FairCoinFamilyMeetsReturnConditions) {
  const auto m = MarkovMeasure::bernoulli(0.5);
  const auto fam = select_blocks(kFull2, m, 16, 1, 2, 0.25, 300, 17, BlockOptions{2, 16});
  ASSERT_FALSE(fam.blocks.empty());
  EXPECT_GT(fam.accepted, 0u);
  EXPECT_LE(fam.blocks.size(), fam.separated);
  EXPECT_LE(fam.separated, fam.accepted);
  EXPECT_GE(fam.n, 16u);
  EXPECT_LE(fam.n, 20u);
  EXPECT_EQ(fam.v_counts.size(), 5u);
  const auto family = TestFunctionFamily::cylinders(2, 16);
  const MarkovMixture target(m);
  for (std::size_t b = 0; b < fam.blocks.size(); ++b) {
    const auto& x = fam.blocks[b];
    EXPECT_EQ(x.take(2), fam.cell);
    EXPECT_EQ(x.shifted(fam.n).take(2), fam.cell);
    for (std::size_t len = 16; len <= 20; ++len) EXPECT_LT(direct_distance(x, len, target, family), 0.5);
    for (std::size_t c = 0; c < b; ++c) EXPECT_GE(kFull2.dist_n(x, fam.blocks[c], 16), 0.5);
  }
}

TEST(SelectBlocks, SeparatedCountGrowsWithLength) {
  const auto m = MarkovMeasure::bernoulli(0.5);
  const auto a = select_blocks(kFull2, m, 8, 1, 2, 0.25, 400, 3);
  const auto b = select_blocks(kFull2, m, 32, 1, 2, 0.25, 400, 3);
  EXPECT_GT(b.separated, a.separated);
}

TEST(SelectBlocks, CycleMeasureGivesOneBlock) {
  const auto fam = select_blocks(kFull2, MarkovMeasure::cycle(2), 16, 0, 1, 0.25, 50, 5);
  ASSERT_EQ(fam.blocks.size(), 1u);
  const Word w = fam.blocks[0].take(20);
  for (std::size_t i = 0; i + 1 < w.size(); ++i) EXPECT_NE(w[i], w[i + 1]);
  const auto pm = select_blocks(kFull2, MarkovMeasure::point_mass(2, 1), 16, 0, 1, 0.25, 10, 5);
  ASSERT_EQ(pm.blocks.size(), 1u);
  EXPECT_EQ(kFull2.dist(pm.blocks[0], ShiftPoint::periodic({1})), 0.0);
  EXPECT_EQ(pm.acceptance_rate(), 1.0);
}

TEST(SelectBlocks, DegenerateWindowKeepsClosedEndpoint) {
  EXPECT_EQ(return_window_end(3, 0.01), 3u);
  EXPECT_EQ(return_window_end(10, 0.1), 11u);
  const auto fam = select_blocks(kFull2, MarkovMeasure::point_mass(2, 0), 3, 0, 1, 0.01, 5, 1);
  EXPECT_EQ(fam.n, 3u);
  EXPECT_EQ(fam.v_counts.size(), 1u);
}

TEST(SelectBlocks, Preconditions) {
  const auto m = MarkovMeasure::bernoulli(0.5);
  EXPECT_THROW(select_blocks(kFull2, m, 16, 1, 1, 0.0, 10, 1), PreconditionError);
  EXPECT_THROW(select_blocks(kFull2, m, 16, 1, 1, 1.0, 10, 1), PreconditionError);
  EXPECT_THROW(select_blocks(kGolden, m, 16, 1, 1, 0.1, 10, 1), PreconditionError);
  EXPECT_THROW(select_blocks(kFull2, m, 4, 0, 1, 0.1, 0, 1), ResourceError);
}

TEST(SelectBlocks, BoundCheckIsReported) {
  const auto fam = select_blocks(kFull2, MarkovMeasure::bernoulli(0.5), 64, 1, 2, 0.05, 300, 8);
  ASSERT_TRUE(fam.katok_rate);
  EXPECT_NEAR(fam.log_bound, static_cast<double>(fam.n) * 0.95 * (*fam.katok_rate - 0.2), 1e-9);
  EXPECT_NE(fam.bound_check, BoundCheck::unavailable);
  EXPECT_EQ(to_string(BoundCheck::vacuous), "vacuous");
}

// ---------------------------------------------------------------------------
// Connectors

TEST(Connector, Examples) {
  EXPECT_EQ(connector(kFull2, {0}, {1}).s, 1u);
  EXPECT_EQ(connector(kFull2, {1}, {1}).s, 1u);
  const auto g = connector(kGolden, {1}, {1});
  EXPECT_EQ(g.s, 2u);
  EXPECT_EQ(g.word, (Word{1, 0, 1}));
  EXPECT_THROW(connector(ShiftSpace({{1, 0}, {0, 1}}), {0}, {1}), InvariantViolation);
  EXPECT_THROW(connector(kGolden, {1, 1}, {0, 0}), PreconditionError);
}

TEST(Connector, MatchesEnumeration) {
  const ShiftSpace three({{0, 1, 1}, {1, 0, 1}, {1, 1, 1}});
  for (const ShiftSpace* sh : {&kFull2, &kGolden, &three})
    for (std::size_t d = 1; d <= 3; ++d) {
      std::vector<Word> cells;
      const std::size_t k = static_cast<std::size_t>(sh->alphabet_size());
      std::size_t total = 1;
      for (std::size_t i = 0; i < d; ++i) total *= k;
      for (std::size_t code = 0; code < total; ++code) {
        Word w(d);
        std::size_t c = code;
        for (std::size_t i = d; i-- > 0; c /= k) w[i] = static_cast<Symbol>(c % k);
        if (sh->admissible(w)) cells.push_back(w);
      }
      for (const auto& a : cells)
        for (const auto& b : cells) {
          const auto got = connector(*sh, a, b);
          const auto want = brute_connector(*sh, a, b);
          EXPECT_EQ(got.s, want.s);
          EXPECT_EQ(got.word, want.word);
        }
    }
}

// ---------------------------------------------------------------------------
// Schedules

TEST(BuildSchedule, SingleMeasure) {
  const ConnectorTable s(kFull2, {{{0}}, {{0}}});
  const auto w = build_schedule({{Rational(1)}}, {{16}}, s, 1);
  // the connector budget sums the four connectors among two cells, each of length 1.
  EXPECT_EQ(w.C[0][0], Rational(1, 16));
  EXPECT_EQ(w.connector_sum[0], 4u);
  EXPECT_EQ(w.N[0], 16u);
  EXPECT_EQ(w.reps[0][0], 1u);
  EXPECT_EQ(w.X[0], 1u);
  EXPECT_EQ(w.Y[0], 17u);
  EXPECT_EQ(w.T[0], 1u);
  EXPECT_EQ(w.length(), 18u);
  EXPECT_TRUE(w.certified());
  expect_schedule_invariants(w, s);
}

TEST(BuildSchedule, TwoMeasures) {
  const ConnectorTable s(kFull2, {{{0}, {1}}, {{0}}});
  const auto w = build_schedule({{Rational(1, 2), Rational(1, 2)}}, {{16, 16}}, s, 1);
  EXPECT_EQ(w.N[0], 32u);
  EXPECT_EQ(w.reps[0], (std::vector<std::uint64_t>{1, 1}));
  EXPECT_EQ(w.X[0], 2u);
  EXPECT_EQ(w.Y[0], 34u);
  for (const char* name : {"integrality", "connector budget", "level length", "block share"}) {
    const auto it = std::find_if(w.checks.begin(), w.checks.end(), [&](const ScheduleCheck& c) { return c.name == name; });
    ASSERT_NE(it, w.checks.end());
    EXPECT_TRUE(it->ok) << name;
  }
  expect_schedule_invariants(w, s);
}

// Random coefficients, lengths and golden-mean cells at depth 2: every
// invariant holds, N_k and T_k are minimal.
TEST(BuildSchedule, RandomInstancesAreCertifiedAndMinimal) {
  CounterRng rng(77);
  const std::vector<Word> cells{{0, 0}, {0, 1}, {1, 0}};
  int built = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int k_max = 1 + static_cast<int>(rng.below(3));
    std::vector<std::vector<Rational>> a;
    std::vector<std::vector<std::uint64_t>> n;
    std::vector<std::vector<Word>> cl;
    for (int k = 1; k <= k_max + 1; ++k) {
      const std::size_t m = 1 + rng.below(3);
      std::vector<std::int64_t> parts;
      for (std::size_t j = 0; j < m; ++j) parts.push_back(1 + static_cast<std::int64_t>(rng.below(4)));
      const std::int64_t total = std::accumulate(parts.begin(), parts.end(), std::int64_t{0});
      a.emplace_back();
      n.emplace_back();
      cl.emplace_back();
      for (std::size_t j = 0; j < m; ++j) {
        a.back().push_back(Rational(parts[j], total));
        n.back().push_back(4 + rng.below(40));
        cl.back().push_back(cells[rng.below(cells.size())]);
      }
    }
    const ConnectorTable s(kGolden, cl);
    WeaveSchedule w;
    try {
      w = build_schedule(a, n, s, k_max, 50'000'000);
    } catch (const ScheduleOverflow& e) {
      EXPECT_GE(e.level(), 1);
      continue;
    }
    ++built;
    EXPECT_TRUE(w.certified());
    expect_schedule_invariants(w, s);
    for (int k = 1; k <= k_max; ++k) {
      const auto K = static_cast<std::size_t>(k - 1);
      // One step of lcm smaller breaks integrality or the connector budget.
      std::uint64_t lcm = 1;
      for (const auto& c : w.C[K]) lcm = std::lcm(lcm, static_cast<std::uint64_t>(c.denominator()));
      EXPECT_EQ(w.N[K] % lcm, 0u);
      if (w.N[K] > lcm) {
        EXPECT_LT(w.N[K] - lcm, static_cast<std::uint64_t>(k) * w.connector_sum[K]);
      }
      // T_k - 1 violates growth or one of the level growth bounds.
      if (w.T[K] > 1) {
        const std::uint64_t t = w.T[K] - 1;
        bool ok = k == 1 || t > w.T[K - 1];
        if (k >= 2) {
          Wide yts = 0;
          for (int r = 1; r < k; ++r) yts += static_cast<Wide>(w.Y[r - 1]) * w.T[r - 1] + s(r, 1, r + 1, 1);
          ok = ok && static_cast<Wide>(k) * yts <= static_cast<Wide>(w.Y[K]) * t;
        }
        if (k < k_max) {
          Wide yt = static_cast<Wide>(w.Y[K]) * t;
          for (int r = 1; r < k; ++r) yt += static_cast<Wide>(w.Y[r - 1]) * w.T[r - 1];
          ok = ok && static_cast<Wide>(k + 1) * w.Y[K + 1] <= yt;
        }
        EXPECT_FALSE(ok) << "T_" << k << " is not minimal";
      }
    }
  }
  EXPECT_GT(built, 30);
}

TEST(BuildSchedule, OverflowNamesTheLevel) {
  const ConnectorTable s(kFull2, {{{0}}, {{0}}, {{0}}});
  try {
    build_schedule({{Rational(1)}, {Rational(1)}}, {{1000}, {1000}}, s, 2, 5000);
    FAIL();
  } catch (const ScheduleOverflow& e) {
    EXPECT_EQ(e.level(), 2);
    EXPECT_EQ(e.cap(), 5000u);
  }
  EXPECT_THROW(build_schedule({{Rational(1, 3)}}, {{4}}, ConnectorTable(kFull2, {{{0}}, {{0}}}), 1), PreconditionError);
}

TEST(BuildSchedule, CoverageMatchesFormula) {
  const ConnectorTable s(kGolden, {{{0}, {1}}, {{0}, {0}, {1}}, {{1}}});
  const auto w = build_schedule({{Rational(1, 3), Rational(2, 3)}, {Rational(1, 2), Rational(1, 4), Rational(1, 4)}},
                                {{10, 12}, {20, 24, 28}}, s, 2);
  for (int k = 1; k <= 2; ++k) {
    const auto K = static_cast<std::size_t>(k - 1);
    const Rational ty(static_cast<std::int64_t>(w.T[K] * w.Y[K]));
    const Rational factor = Rational(static_cast<std::int64_t>(w.N[K]), static_cast<std::int64_t>(w.Y[K])) * ty /
                            (ty + Rational(static_cast<std::int64_t>(w.level_connector[K])));
    for (std::size_t j = 1; j <= w.measures(k); ++j) {
      EXPECT_EQ(block_coverage(w, k, j), w.a[K][j - 1] * factor);
      // Count the covered indices straight from the offsets.
      std::uint64_t covered = 0;
      for (std::uint64_t i = 1; i <= w.T[K]; ++i)
        for (std::uint64_t t = 1; t <= w.reps[K][j - 1]; ++t) {
          EXPECT_GE(w.offset(k, i, j, t), w.M[K]);
          covered += w.n[K][j - 1];
        }
      EXPECT_EQ(Rational(static_cast<std::int64_t>(covered), static_cast<std::int64_t>(w.M[K + 1] - w.M[K])),
                block_coverage(w, k, j));
    }
  }
}

// ---------------------------------------------------------------------------
// End to end

TEST(Weave, FairCoinEndToEnd) {
  const MarkovMixture nu(MarkovMeasure::bernoulli(0.5));
  const auto run = weave(kFull2, nu, small_params(), 11);
  ASSERT_TRUE(run.outcome);
  const auto& w = run.schedule;
  const auto& out = *run.outcome;
  expect_schedule_invariants(w, *run.connectors);
  EXPECT_EQ(out.total_length, w.length());
  EXPECT_LE(out.max_deviation, w.splice_bound);
  EXPECT_EQ(w.splice_bound, w.delta_prime / 2);
  EXPECT_EQ(w.epsilon, 2 * w.delta_prime);
  for (double d : out.block_deviation) EXPECT_LE(d, w.splice_bound);
  const auto family = TestFunctionFamily::cylinders(2, 16);
  EXPECT_NEAR(out.final_distance, direct_distance(out.point, w.length(), nu, family), 1e-12);
  EXPECT_LE(out.final_distance, 0.05);
  // Convergence grid: every positive M_{k,i} plus the total length.
  std::set<std::uint64_t> grid{w.length()};
  for (const auto& level : w.M_ki)
    for (auto m : level)
      if (m > 0) grid.insert(m);
  ASSERT_EQ(out.convergence.size(), grid.size());
  auto it = grid.begin();
  for (const auto& [n, d] : out.convergence) {
    EXPECT_EQ(n, *it++);
    EXPECT_TRUE(std::isfinite(d));
  }
}

TEST(Weave, BlocksSitAtTheirOffsets) {
  const MarkovMixture nu(MarkovMeasure::bernoulli(0.5));
  auto p = small_params();
  p.k_max = 1;
  const auto run = weave(kFull2, nu, p, 4);
  const auto& w = run.schedule;
  const auto po = concatenate(kFull2, w, run.families, *run.connectors, run.picks);
  ASSERT_EQ(po.states.size(), w.length());
  std::size_t slot = 0;
  for (std::uint64_t i = 1; i <= w.T[0]; ++i)
    for (std::size_t j = 1; j <= w.measures(1); ++j)
      for (std::uint64_t t = 1; t <= w.reps[0][j - 1]; ++t, ++slot) {
        EXPECT_EQ(slot_index(w, 1, i, j, t), slot);
        const auto& block = run.families[0][j - 1].blocks[run.picks.index[slot]];
        EXPECT_EQ(kFull2.dist(po.states[w.offset(1, i, j, t)], block), 0.0);
        // The shadow point carries the block's symbols on the whole slot.
        EXPECT_EQ(run.outcome->point.shifted(w.offset(1, i, j, t)).take(w.n[0][j - 1]), block.take(w.n[0][j - 1]));
      }
  EXPECT_EQ(slot, run.picks.index.size());
}

TEST(Weave, PointMassGivesTheFixedPoint) {
  const MarkovMixture nu(MarkovMeasure::point_mass(2, 0));
  auto p = small_params();
  p.budget = 5;
  const auto run = weave(kFull2, nu, p, 1);
  const auto& out = *run.outcome;
  EXPECT_EQ(out.final_distance, 0.0);
  const Word w = out.point.take(out.total_length + 8);
  EXPECT_TRUE(std::all_of(w.begin(), w.end(), [](Symbol a) { return a == 0; }));
}

TEST(Weave, MixtureFrequenciesApproachMarginals) {
  std::vector<MarkovMixture::Component> comps{{0.5, MarkovMeasure::bernoulli(0.3)}, {0.5, MarkovMeasure::bernoulli(0.7)}};
  const MarkovMixture nu(comps);
  const auto run = weave(kFull2, nu, small_params(), 9);
  const auto& out = *run.outcome;
  ASSERT_GT(out.total_length, 100'000u);
  const auto family = TestFunctionFamily::cylinders(2, 16);
  for (std::size_t i = 0; i < 6; ++i) {
    const Word& c = std::get<Cylinder>(family.functions()[i]).word;
    std::size_t hits = 0;
    for (std::size_t p = 0; p < out.total_length; ++p) hits += out.point.shifted(p).take(c.size()) == c;
    EXPECT_NEAR(static_cast<double>(hits) / static_cast<double>(out.total_length), nu.cylinder_mass(c), 0.01);
  }
  EXPECT_LT(out.final_distance, 0.01);
}

TEST(Weave, DeterministicPerSeed) {
  const MarkovMixture nu(MarkovMeasure::bernoulli(0.6));
  auto p = small_params();
  p.k_max = 1;
  const auto a = weave(kFull2, nu, p, 5), b = weave(kFull2, nu, p, 5);
  EXPECT_EQ(a.picks.index, b.picks.index);
  EXPECT_EQ(a.outcome->point.take(a.outcome->total_length), b.outcome->point.take(b.outcome->total_length));
}

TEST(Weave, GoldenMeanTarget) {
  const MarkovMixture nu(MarkovMeasure::from_matrix({{0.6, 0.4}, {1.0, 0.0}}));
  auto p = small_params();
  p.k_max = 1;
  const auto run = weave(kGolden, nu, p, 2);
  EXPECT_TRUE(kGolden.admits(run.outcome->point));
  EXPECT_LE(run.outcome->max_deviation, run.schedule.splice_bound);
  EXPECT_THROW(weave(ShiftSpace({{1, 0}, {0, 1}}), MarkovMixture(MarkovMeasure::point_mass(2, 0)), p, 1),
               PreconditionError);
}

// Changing one pick moves the shadow point by at least epsilon / 2 on that
// block's window.
TEST(SeparationAudit, RandomDifferingPairs) {
  const MarkovMixture nu(MarkovMeasure::bernoulli(0.5));
  auto p = small_params();
  p.k_max = 1;
  p.cell_depth = 3;
  const auto run = weave(kFull2, nu, p, 13);
  const auto& w = run.schedule;
  EXPECT_EQ(w.epsilon, 0.25);
  const auto z = run.outcome->point;
  CounterRng rng(3);
  int audited = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::uint64_t i = 1 + rng.below(w.T[0]);
    const std::size_t j = 1 + rng.below(w.measures(1));
    const std::uint64_t t = 1 + rng.below(w.reps[0][j - 1]);
    const auto& fam = run.families[0][j - 1];
    if (fam.blocks.size() < 2) continue;
    auto picks = run.picks;
    const std::size_t slot = slot_index(w, 1, i, j, t);
    picks.index[slot] = static_cast<std::uint32_t>((picks.index[slot] + 1 + rng.below(fam.blocks.size() - 1)) %
                                                   fam.blocks.size());
    const auto po = concatenate(kFull2, w, run.families, *run.connectors, picks);
    const auto zp = shadow_shift(kFull2, po).point;
    EXPECT_TRUE(separation_audit(kFull2, w, z, zp, 1, i, j, t));
    EXPECT_GE(kFull2.dist_n(z.shifted(w.offset(1, i, j, t)), zp.shifted(w.offset(1, i, j, t)), w.n[0][j - 1]), 0.125);
    ++audited;
  }
  EXPECT_EQ(audited, 100);
  EXPECT_THROW(separation_audit(kFull2, w, z, z, 1, 1, 1, 1), PreconditionError);
}
