#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "ijkit/ij.hpp"
#include "ijkit/models.hpp"
#include "ijkit/solver.hpp"
#include "ijkit/weights.hpp"
#include "oracles.hpp"

namespace ijkit {
namespace {

std::vector<std::size_t> zeros_of(const WeightVector& w) { return w.zero_indices(); }

TEST(LeaveKOut, SmallEnumeration) {
  const auto ws = leave_k_out(3, 1);
  ASSERT_EQ(ws.size(), 3u);
  const double expect[3][3] = {{0, 1, 1}, {1, 0, 1}, {1, 1, 0}};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(ws[i][j], expect[i][j]);
}

TEST(LeaveKOut, PairsOfFourInLexicographicOrder) {
  const auto ws = leave_k_out(4, 2);
  ASSERT_EQ(double(ws.size()), oracle::comb(4, 2));
  std::vector<std::vector<std::size_t>> seen;
  for (const auto& w : ws) {
    EXPECT_EQ(zeros_of(w).size(), 2u);
    EXPECT_EQ(w.sum(), 2.0);
    seen.push_back(zeros_of(w));
  }
  EXPECT_TRUE(std::is_sorted(seen.begin(), seen.end()));
  EXPECT_EQ(std::set(seen.begin(), seen.end()).size(), 6u);
}

TEST(LeaveKOut, EnumerationCountMatchesBinomial) {
  for (std::size_t n = 1; n <= 9; ++n)
    for (std::size_t k = 1; k <= n; ++k) {
      LeaveKOut gen(n, k);
      EXPECT_EQ(double(gen.count()), oracle::comb(n, k));
      EXPECT_EQ(double(gen.collect().size()), oracle::comb(n, k));
    }
}

TEST(LeaveKOut, LimitedSampleDeterministicAndDistinct) {
  const auto a = leave_k_out(30, 3, 5, 42), b = leave_k_out(30, 3, 5, 42);
  ASSERT_EQ(a.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_TRUE(a[i] == b[i]);
  std::set<std::vector<std::size_t>> distinct;
  for (const auto& w : a) {
    EXPECT_EQ(zeros_of(w).size(), 3u);
    distinct.insert(zeros_of(w));
  }
  EXPECT_EQ(distinct.size(), 5u);
  const auto c = leave_k_out(30, 3, 5, 43);
  bool differs = false;
  for (std::size_t i = 0; i < 5; ++i) differs |= !(a[i] == c[i]);
  EXPECT_TRUE(differs);
  // a limit at or above C(n, k) is full enumeration
  EXPECT_EQ(leave_k_out(5, 2, 100, 1).size(), 10u);
}

TEST(LeaveKOut, LimitedSampleIsRoughlyUniform) {
  // C(6, 2) = 15 subsets, sample 5 repeatedly: each subset should appear w.p. 1/3
  std::map<std::vector<std::size_t>, int> hits;
  const int reps = 3000;
  for (int r = 0; r < reps; ++r)
    for (const auto& w : leave_k_out(6, 2, 5, std::uint64_t(r))) ++hits[zeros_of(w)];
  ASSERT_EQ(hits.size(), 15u);
  const double p = 1.0 / 3.0, se = std::sqrt(reps * p * (1 - p));
  for (const auto& [subset, count] : hits) EXPECT_NEAR(count, reps * p, 5 * se);
}

TEST(LeaveKOut, HugeBinomialStillSamples) {
  const auto ws = leave_k_out(5000, 40, 3, 7);
  ASSERT_EQ(ws.size(), 3u);
  for (const auto& w : ws) EXPECT_EQ(zeros_of(w).size(), 40u);
}

TEST(LeaveKOut, DeltaNormIsRootK) {
  for (std::size_t k : {1, 2, 5})
    for (const auto& w : leave_k_out(12, k, 20, 3)) EXPECT_NEAR(w.delta_l2_norm(), std::sqrt(double(k)), 1e-15);
}

TEST(LeaveKOut, InvalidK) {
  EXPECT_THROW(leave_k_out(3, 0), InputError);
  EXPECT_THROW(leave_k_out(3, 4), InputError);
}

TEST(Bootstrap, CountsSumToN) {
  for (const auto& w : bootstrap(37, 25, 9)) {
    EXPECT_EQ(w.sum(), 37.0);
    const Vector d = w.dense();
    for (double v : d) {
      EXPECT_GE(v, 0.0);
      EXPECT_EQ(v, std::floor(v));
    }
  }
  const auto one = bootstrap(1, 3, 1);
  for (const auto& w : one) EXPECT_EQ(w[0], 1.0);
  EXPECT_THROW(bootstrap(5, 0, 1), InputError);
}

TEST(Bootstrap, EntrywiseMeanNearOne) {
  const std::size_t n = 10000, b = 50;
  const auto ws = bootstrap(n, b, 2024);
  Vector mean = Vector::Zero(n);
  for (const auto& w : ws) mean += w.dense();
  mean /= double(b);
  // each count has variance (1 - 1/N); the mean over B has SE sqrt((1-1/N)/B)
  const double se = std::sqrt((1.0 - 1.0 / double(n)) / double(b));
  int outside = 0;
  for (double v : mean) outside += std::abs(v - 1.0) > 3 * se;
  EXPECT_LE(outside, int(0.01 * n));
  EXPECT_NEAR(mean.mean(), 1.0, 1e-12);
  for (const auto& w : ws) {
    const double cw = w.l2_norm() / std::sqrt(double(n));
    EXPECT_NEAR(cw, std::sqrt(2.0), 0.05);
  }
}

TEST(Bootstrap, Deterministic) {
  const auto a = bootstrap(50, 4, 11), b = bootstrap(50, 4, 11);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_TRUE(a[i] == b[i]);
}

TEST(Adversarial, OutlierAndTieBreak) {
  const auto m = make_model(ModelKind::mean, oracle::mean_data({1, 2, 3, 6}));
  const FitResult base = solve(*m, WeightVector::ones(4), Vector::Zero(1));
  const IJHandle ij = build_handle(*m, base);
  const WeightVector w = adversarial(ij.cache);
  EXPECT_EQ(w[3], 4.0);
  EXPECT_EQ(w.sum(), 4.0);

  const auto tied = make_model(ModelKind::mean, oracle::mean_data({-1, 1, -1, 1}));
  const IJHandle t = build_handle(*tied, solve(*tied, WeightVector::ones(4), Vector::Zero(1)));
  const WeightVector wt = adversarial(t.cache);
  EXPECT_EQ(wt[0], 4.0);
  EXPECT_EQ(wt.zero_indices(), (std::vector<std::size_t>{1, 2, 3}));
}

TEST(Families, MaterializeAndParse) {
  EXPECT_EQ(parse_family_kind("loo"), FamilyKind::leave_k_out);
  EXPECT_EQ(parse_family_kind("bootstrap"), FamilyKind::bootstrap);
  EXPECT_THROW(parse_family_kind("jackknife"), InputError);
  WeightFamily f;
  f.k = 2;
  EXPECT_EQ(materialize(f, 5).size(), 10u);
  f.kind = FamilyKind::bootstrap;
  f.b = 7;
  EXPECT_EQ(materialize(f, 5).size(), 7u);
  f.kind = FamilyKind::adversarial;
  EXPECT_THROW(materialize(f, 5), InputError);
  f.kind = FamilyKind::custom;
  f.custom = {WeightVector::ones(4)};
  EXPECT_THROW(materialize(f, 5), InputError);
}

}  // namespace
}  // namespace ijkit
