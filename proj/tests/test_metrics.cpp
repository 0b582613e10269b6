#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "pccs/metrics.hpp"

using namespace pccs;

namespace {

SegMask from_rows(const std::vector<std::string>& rows, int classes = 2) {
  const int h = static_cast<int>(rows.size()), w = static_cast<int>(rows[0].size());
  std::vector<int32_t> l;
  for (const auto& r : rows)
    for (char ch : r) l.push_back(ch == '.' ? 0 : ch - '0');
  return SegMask(h, w, classes, l);
}

SegMask random_blob(std::mt19937& rng, int h, int w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int32_t> l(static_cast<std::size_t>(h) * w, 0);
  const double cy = 3 + u(rng) * (h - 6), cx = 3 + u(rng) * (w - 6), ry = 1 + u(rng) * 5,
               rx = 1 + u(rng) * 5;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double a = (y - cy) / ry, b = (x - cx) / rx;
      if (a * a + b * b <= 1.0 || u(rng) < 0.02) l[y * w + x] = 1;
    }
  return SegMask(h, w, 2, l);
}

SegMask shift(const SegMask& m, int dy, int dx, int pad_h, int pad_w) {
  std::vector<int32_t> l(static_cast<std::size_t>(pad_h) * pad_w, 0);
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) l[(y + dy) * pad_w + x + dx] = m.at(y, x);
  return SegMask(pad_h, pad_w, m.num_classes(), l);
}

// All-pairs oracle for the pooled distances.
std::vector<double> brute_pooled(const SegMask& a, const SegMask& b, int cls) {
  auto boundary = [&](const SegMask& m) {
    std::vector<std::pair<int, int>> pts;
    for (int y = 0; y < m.height(); ++y)
      for (int x = 0; x < m.width(); ++x) {
        if (m.at(y, x) != cls) continue;
        bool edge = y == 0 || x == 0 || y == m.height() - 1 || x == m.width() - 1;
        if (!edge)
          edge = m.at(y - 1, x) != cls || m.at(y + 1, x) != cls || m.at(y, x - 1) != cls ||
                 m.at(y, x + 1) != cls;
        if (edge) pts.emplace_back(y, x);
      }
    return pts;
  };
  const auto pa = boundary(a), pb = boundary(b);
  std::vector<double> d;
  if (pa.empty() || pb.empty()) return d;
  auto one_way = [&](const auto& from, const auto& to) {
    for (auto [y, x] : from) {
      double best = 1e300;
      for (auto [v, u] : to) best = std::min(best, std::hypot(y - v, x - u));
      d.push_back(best);
    }
  };
  one_way(pa, pb);
  one_way(pb, pa);
  return d;
}

}  // namespace

TEST(Overlap, Examples) {
  const SegMask a = from_rows({"11..", "11..", "....", "...."});
  EXPECT_EQ(dice_jaccard(a, a, 1).dice, 1.0);
  EXPECT_EQ(dice_jaccard(a, a, 1).jaccard, 1.0);
  const SegMask b = from_rows({".11.", ".11.", "....", "...."});
  const auto o = dice_jaccard(a, b, 1);
  EXPECT_DOUBLE_EQ(o.dice, 0.5);
  EXPECT_DOUBLE_EQ(o.jaccard, 1.0 / 3.0);
  const SegMask c = from_rows({"....", "....", "..11", "..11"});
  EXPECT_EQ(dice_jaccard(a, c, 1).dice, 0.0);
  EXPECT_EQ(dice_jaccard(a, c, 1).jaccard, 0.0);
}

TEST(Overlap, EmptySemantics) {
  const SegMask empty = from_rows({"....", "...."});
  const SegMask some = from_rows({"1...", "...."});
  EXPECT_EQ(dice_jaccard(empty, empty, 1).dice, 1.0);
  EXPECT_EQ(dice_jaccard(empty, empty, 1).jaccard, 1.0);
  EXPECT_EQ(dice_jaccard(some, empty, 1).dice, 0.0);
  EXPECT_EQ(dice_jaccard(empty, some, 1).jaccard, 0.0);
  EXPECT_THROW(dice_jaccard(empty, from_rows({"..."}), 1), std::domain_error);
}

TEST(Overlap, DiceJaccardIdentity) {
  std::mt19937 rng(77);
  for (int t = 0; t < 500; ++t) {
    const auto o = dice_jaccard(random_blob(rng, 20, 20), random_blob(rng, 20, 20), 1);
    EXPECT_NEAR(o.jaccard, o.dice / (2.0 - o.dice), 1e-9);
    EXPECT_GE(o.dice, 0.0);
    EXPECT_LE(o.dice, 1.0);
  }
}

TEST(Surface, IdenticalMasksAreZero) {
  std::mt19937 rng(1);
  const SegMask a = random_blob(rng, 16, 16);
  const auto s = surface_distances(a, a, 1);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->hd95, 0.0);
  EXPECT_EQ(s->assd, 0.0);
}

TEST(Surface, ThreePixelSeparation) {
  const SegMask a = from_rows({".....", ".1...", "....."});
  const SegMask b = from_rows({".....", "....1", "....."});
  const auto s = surface_distances(a, b, 1);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->hd95, 3.0);
  EXPECT_EQ(s->assd, 3.0);
}

TEST(Surface, UndefinedWhenEitherIsEmpty) {
  const SegMask empty = from_rows({"...", "..."});
  const SegMask some = from_rows({".1.", "..."});
  EXPECT_FALSE(surface_distances(some, empty, 1));
  EXPECT_FALSE(surface_distances(empty, some, 1));
  const auto m = image_metrics(some, empty);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_FALSE(m[0].hd95);
  EXPECT_EQ(*m[0].dice, 0.0);
}

TEST(Surface, MatchesAllPairsOracle) {
  std::mt19937 rng(3);
  for (int t = 0; t < 60; ++t) {
    const SegMask a = random_blob(rng, 18, 21), b = random_blob(rng, 18, 21);
    auto fast = pooled_surface_distances(a, b, 1);
    auto slow = brute_pooled(a, b, 1);
    std::sort(fast.begin(), fast.end());
    std::sort(slow.begin(), slow.end());
    ASSERT_EQ(fast.size(), slow.size());
    for (std::size_t i = 0; i < fast.size(); ++i) ASSERT_NEAR(fast[i], slow[i], 1e-12);
  }
}

TEST(Surface, SymmetricAndBounded) {
  std::mt19937 rng(4);
  for (int t = 0; t < 100; ++t) {
    const SegMask a = random_blob(rng, 20, 20), b = random_blob(rng, 20, 20);
    const auto ab = surface_distances(a, b, 1), ba = surface_distances(b, a, 1);
    ASSERT_TRUE(ab && ba);
    EXPECT_NEAR(ab->hd95, ba->hd95, 1e-12);
    EXPECT_NEAR(ab->assd, ba->assd, 1e-12);
    const auto d = pooled_surface_distances(a, b, 1);
    const double mx = *std::max_element(d.begin(), d.end());
    EXPECT_LE(ab->hd95, mx + 1e-12);
    EXPECT_LE(ab->assd, mx + 1e-12);
  }
}

TEST(Surface, TranslationInvariance) {
  std::mt19937 rng(5);
  for (int t = 0; t < 40; ++t) {
    const SegMask a = random_blob(rng, 16, 16), b = random_blob(rng, 16, 16);
    // pad first so neither copy touches the border
    const SegMask pa = shift(a, 4, 4, 26, 26), pb = shift(b, 4, 4, 26, 26);
    const SegMask qa = shift(a, 7, 9, 26, 26), qb = shift(b, 7, 9, 26, 26);
    const auto s1 = surface_distances(pa, pb, 1), s2 = surface_distances(qa, qb, 1);
    ASSERT_TRUE(s1 && s2);
    EXPECT_NEAR(s1->hd95, s2->hd95, 1e-12);
    EXPECT_NEAR(s1->assd, s2->assd, 1e-12);
    EXPECT_NEAR(dice_jaccard(pa, pb, 1).dice, dice_jaccard(qa, qb, 1).dice, 1e-15);
  }
}

TEST(Percentile, LinearInclusive) {
  EXPECT_DOUBLE_EQ(percentile_inclusive({1, 2, 3, 4, 5}, 0.95), 4.8);
  EXPECT_DOUBLE_EQ(percentile_inclusive({7}, 0.95), 7.0);
  EXPECT_DOUBLE_EQ(percentile_inclusive({0, 10}, 0.5), 5.0);
}

TEST(Report, RowsAndMeans) {
  const SegMask gt = from_rows({"12..", "12..", "...."}, 3);
  const SegMask pred = from_rows({"1...", "12..", "...."}, 3);
  const auto m1 = image_metrics(gt, gt), m2 = image_metrics(pred, gt);
  const auto report = aggregate_metrics({m1, m2});
  ASSERT_EQ(report.classes.size(), 2u);  // C-1 foreground rows
  const double d1 = (1.0 + *m2[0].dice) / 2.0;
  EXPECT_NEAR(*report.classes[0].values.dice, d1, 1e-15);
  EXPECT_NEAR(*report.mean.values.dice, (d1 + (1.0 + *m2[1].dice) / 2.0) / 2.0, 1e-15);
  std::ostringstream csv;
  write_metrics_csv(csv, report);
  int lines = 0;
  for (char ch : csv.str()) lines += ch == '\n';
  EXPECT_EQ(lines, 1 + 2 + 1);
}

TEST(Report, UndefinedSurfaceExcludedFromMean) {
  std::vector<ClassMetrics> a(1), b(1);
  a[0] = {1.0, 1.0, 2.0, 1.0};
  b[0] = {0.0, 0.0, std::nullopt, std::nullopt};
  const auto r = aggregate_metrics({a, b});
  EXPECT_EQ(*r.classes[0].values.dice, 0.5);
  EXPECT_EQ(*r.classes[0].values.hd95, 2.0);
}
