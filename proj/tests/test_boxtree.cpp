#include <gtest/gtest.h>

#include <random>
#include <set>

#include "hbie/boxtree.hpp"
#include "hbie/geometry.hpp"

using namespace hbie;

TEST(Morton, EncodeDecodeRoundTrip) {
  std::mt19937 rng(1);
  std::uniform_int_distribution<std::uint32_t> u(0, (1u << 21) - 1);
  for (int t = 0; t < 1000; ++t) {
    const std::uint32_t x = u(rng), y = u(rng), z = u(rng);
    const auto d = morton::decode(morton::encode(x, y, z));
    EXPECT_EQ(d[0], x);
    EXPECT_EQ(d[1], y);
    EXPECT_EQ(d[2], z);
  }
  EXPECT_EQ(morton::encode(1, 0, 0), 1u);
  EXPECT_EQ(morton::encode(0, 1, 0), 2u);
  EXPECT_EQ(morton::encode(0, 0, 1), 4u);
}

TEST(BoxTree, DepthFromWavelength) {
  const auto disc = make_sphere_surface(2, 4);
  for (double k : {1.0, 5.0, 20.0}) {
    const auto t = build_box_tree(disc.points(), k);
    EXPECT_LE(t.side(t.depth()), 0.25 * two_pi / k);
    if (t.depth() > 1) {
      EXPECT_GT(t.side(t.depth() - 1), 0.25 * two_pi / k);
    }
  }
  EXPECT_EQ(build_box_tree(disc.points(), 1.0, 5).depth(), 5);
  EXPECT_THROW(build_box_tree(std::span<const Vec3>{}, 1.0), std::invalid_argument);
}

TEST(BoxTree, PartitionNeighborsAndCousins) {
  const auto disc = make_sphere_surface(3, 4);
  const auto t = build_box_tree(disc.points(), 12.0);
  ASSERT_GE(t.depth(), 3);
  const std::size_t N = disc.size();
  for (int d = 1; d <= t.depth(); ++d) {
    const BoxLevel& L = t.level(d);
    std::size_t count = 0;
    for (std::size_t b = 0; b < L.size(); ++b) {
      ASSERT_LT(L.first[b], L.last[b]);
      count += L.last[b] - L.first[b];
      const Vec3 c = t.center(d, b);
      for (std::uint32_t s = L.first[b]; s < L.last[b]; ++s) {
        const Vec3 p = t.sorted_points()[s];
        for (int k = 0; k < 3; ++k) EXPECT_LE(std::abs(p[k] - c[k]), 0.5 * L.H * (1 + 1e-12));
      }
      const auto nb = L.neighbors(b);
      EXPECT_TRUE(std::find(nb.begin(), nb.end(), b) != nb.end());
      const std::set<std::uint32_t> ns(nb.begin(), nb.end());
      for (std::uint32_t c2 : L.cousins(b)) {
        EXPECT_FALSE(ns.count(c2));
        if (d > 1) {
          const auto pn = t.level(d - 1).neighbors(L.parent[b]);
          EXPECT_TRUE(std::find(pn.begin(), pn.end(), L.parent[c2]) != pn.end());
        }
      }
      if (d < t.depth()) {
        const BoxLevel& C = t.level(d + 1);
        for (std::uint32_t ch = L.child_first[b]; ch < L.child_last[b]; ++ch) EXPECT_EQ(C.parent[ch], b);
      }
    }
    EXPECT_EQ(count, N);
    EXPECT_EQ(L.cousins(0).size() + 0 * d, L.cousins(0).size());
    if (d == 1) {
      EXPECT_EQ(L.size(), 1u);
    }
  }
  for (std::size_t i = 0; i < N; ++i) EXPECT_EQ(t.order()[t.rank()[i]], i);
  // Leaf neighbor test against geometric box indices.
  std::mt19937 rng(2);
  std::uniform_int_distribution<std::size_t> pick(0, N - 1);
  const double HD = t.side(t.depth());
  for (int k = 0; k < 2000; ++k) {
    const std::size_t i = pick(rng), j = pick(rng);
    bool near = true;
    for (int a = 0; a < 3; ++a) {
      const long bi = static_cast<long>(std::floor((disc.points()[i][a] - t.origin()[a]) / HD));
      const long bj = static_cast<long>(std::floor((disc.points()[j][a] - t.origin()[a]) / HD));
      if (std::abs(bi - bj) > 1) near = false;
    }
    EXPECT_EQ(t.leaf_neighbors(i, j), near);
  }
}

TEST(BoxTree, SingleClusterOfCoincidentPoints) {
  const std::vector<Vec3> pts(5, Vec3{0.5, 0.5, 0.5});
  const auto t = build_box_tree(pts, 1.0);
  EXPECT_EQ(t.depth(), 1);
  EXPECT_EQ(t.level(1).size(), 1u);
}
