#include <gtest/gtest.h>

#include <chrono>
#include <cstdio>
#include <random>

#include "hbie/ifgf.hpp"

using namespace hbie;

namespace {

std::vector<Vec3> random_sphere_points(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g;
  std::vector<Vec3> p(n);
  for (auto& x : p) {
    x = {g(rng), g(rng), g(rng)};
    x = x * (1.0 / norm(x));
  }
  return p;
}

DensityBlock random_density(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  DensityBlock d(n);
  for (auto& v : d.v) v = {u(rng), u(rng)};
  return d;
}

// Naive sums over all m != l, both kernels, analytic normal derivatives.
LayerValues naive(std::span<const Vec3> x, std::span<const Vec3> n, std::span<const double> w, const DensityBlock& dens,
                  cplx ke, cplx ki) {
  const std::size_t N = x.size();
  LayerValues out(N);
  const cplx kk[2] = {ke, ki};
  for (std::size_t l = 0; l < N; ++l)
    for (std::size_t m = 0; m < N; ++m) {
      if (m == l) continue;
      for (int k = 0; k < 2; ++k) {
        const cplx g = green(kk[k], norm(x[l] - x[m])) * w[m];
        const cplx dg = green_dn(kk[k], x[l], x[m], n[l]) * w[m];
        for (int c = 0; c < 8; ++c) out.s(l, k, c) += g * dens(m, c);
        for (int c = 0; c < 6; ++c) out.d(l, k, c) += dg * dens(m, c);
      }
    }
  return out;
}

double rel_err(const std::vector<cplx>& a, const std::vector<cplx>& b) { return rel_l2(a, b); }

}  // namespace

TEST(ConeCoords, Definitions) {
  const double H = 0.4, h = std::sqrt(3.0) * H / 2;
  const Vec3 c{0.1, -0.2, 0.3};
  EXPECT_NEAR(cone_coords(c + Vec3{h, 0, 0}, c, H).s, 1.0, 1e-15);
  const auto z = cone_coords(c + Vec3{0, 0, 2.0}, c, H);
  EXPECT_NEAR(z.theta, 0.0, 1e-15);
  const auto mx = cone_coords(c + Vec3{0, -1.0, 0}, c, H);
  EXPECT_NEAR(mx.phi, 1.5 * pi, 1e-15);
  EXPECT_NEAR(mx.theta, 0.5 * pi, 1e-15);
  EXPECT_THROW(cone_coords(c, c, H), std::domain_error);
}

TEST(Factorization, CenteredTimesAnalyticIsGreen) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-2, 2);
  for (cplx kappa : {cplx(0.0), cplx(3.0), cplx(40.0), cplx(5.0, 0.3)}) {
    for (int t = 0; t < 200; ++t) {
      const Vec3 x{u(rng), u(rng), u(rng)}, y{u(rng), u(rng), u(rng)}, xs{u(rng), u(rng), u(rng)};
      const cplx G = green(kappa, norm(x - y));
      const cplx F = centered_factor(x, xs, kappa) * analytic_factor(x, y, xs, kappa);
      // Phases κr are only known to about ulp(κr), so allow that growth.
      const double phase = std::abs(kappa) * (norm(x - y) + norm(x - xs));
      EXPECT_LT(std::abs(F - G), 1e-14 * std::max(1.0, 0.1 * phase) * std::abs(G));
      EXPECT_LT(std::abs(analytic_factor(x, xs, xs, kappa) - 1.0), 1e-15);
    }
  }
  EXPECT_THROW(analytic_factor({0, 0, 0}, {0, 0, 0}, {1, 0, 0}, 1.0), std::domain_error);
}

TEST(Factorization, AnalyticFactorOscillatesSlowly) {
  // Sweep x = t e_x, t in [3H/2, 12H], source at (0,0,H/2), κH = 40π.
  const double H = 1.0, kappa = 40 * pi / H;
  const Vec3 y{0, 0, H / 2}, xs{0, 0, 0};
  auto wraps = [&](auto f) {
    int count = 0;
    double prev = std::arg(f(1.5 * H));
    for (int k = 1; k <= 200000; ++k) {
      const double t = 1.5 * H + (12 - 1.5) * H * k / 200000.0;
      const double ph = std::arg(f(t));
      if (std::abs(ph - prev) > pi) ++count;
      prev = ph;
    }
    return count;
  };
  const int wg = wraps([&](double t) { return green(kappa, norm(Vec3{t, 0, 0} - y)); });
  const int wa = wraps([&](double t) { return analytic_factor({t, 0, 0}, y, xs, kappa); });
  std::printf("phase wraps: G %d, analytic factor %d\n", wg, wa);
  EXPECT_GE(wg, 40);
  EXPECT_LT(wa, 4);
  EXPECT_GE(wg, 10 * std::max(wa, 1));
}

TEST(ConeHierarchy, CoverageInvariants) {
  const auto disc = make_sphere_surface(4, 6);  // N = 3456
  const double kappa = 4 * pi;
  const auto tree = build_box_tree(disc.points(), kappa);
  IfgfConfig cfg;
  const ConeHierarchy cones(tree, cfg, kappa);
  ASSERT_GE(tree.depth(), 4);
  const int Q = cones.nodes_per_segment();
  for (int d = tree.depth(); d >= 3; --d) {
    const auto& L = cones.level(d);
    if (d < tree.depth()) {
      const auto& F = cones.level(d + 1);
      EXPECT_TRUE(L.ns == F.ns || L.ns == 2 * F.ns);
      EXPECT_EQ(L.ns * F.na, L.na * F.ns);
    }
    const BoxLevel& B = tree.level(d);
    std::size_t cousin_points = 0;
    for (std::size_t b = 0; b < B.size(); ++b) {
      const auto segs = L.segments(b);
      const Vec3 c = tree.center(d, b);
      for (std::uint32_t cb : B.cousins(b))
        for (std::uint32_t s = B.first[cb]; s < B.last[cb]; ++s) {
          const auto cc = cone_coords(tree.sorted_points()[s], c, tree.side(d));
          EXPECT_LE(cc.s, cone_eta + 1e-12);
          EXPECT_TRUE(std::binary_search(segs.begin(), segs.end(), L.locate(cc, nullptr)));
          ++cousin_points;
        }
      if (d > 3) {
        const std::uint32_t p = B.parent[b];
        const auto& LP = cones.level(d - 1);
        for (std::uint32_t id : LP.segments(p))
          for (int q = 0; q < Q; q += 7) {
            const Vec3 X = cones.node_position(d - 1, tree.center(d - 1, p), tree.side(d - 1), id, q);
            const auto cc = cone_coords(X, c, tree.side(d));
            EXPECT_LE(cc.s, cone_eta);
            EXPECT_TRUE(std::binary_search(segs.begin(), segs.end(), L.locate(cc, nullptr)));
          }
      }
      // Points handed down: neighbor and cousin points at this level are
      // exactly the points of the parent's neighbors.
      if (d > 1) {
        std::size_t here = 0, parent = 0;
        for (std::uint32_t nb : B.neighbors(b)) here += B.last[nb] - B.first[nb];
        for (std::uint32_t cb : B.cousins(b)) here += B.last[cb] - B.first[cb];
        const BoxLevel& P = tree.level(d - 1);
        for (std::uint32_t nb : P.neighbors(B.parent[b])) parent += P.last[nb] - P.first[nb];
        EXPECT_EQ(here, parent);
      }
    }
    EXPECT_GT(cousin_points, 0u);
  }
  EXPECT_EQ(cones.level(1).seg.size() + cones.level(2).seg.size(), 0u);
}

TEST(Ifgf, MatchesNaiveOnRandomSpherePoints) {
  const std::size_t N = 1000;
  const auto x = random_sphere_points(N, 5);
  const std::vector<double> w(N, 4 * pi / N);
  const auto dens = random_density(N, 6);
  for (double k : {pi, 2 * pi}) {
    IfgfConfig cfg;
    IfgfSummation ifgf(x, x, w, k, 1.5 * k, cfg);
    const auto fast = ifgf.apply(dens);
    const auto ref = naive(x, x, w, dens, k, 1.5 * k);
    const double es = rel_err(fast.S, ref.S), ed = rel_err(fast.D, ref.D);
    std::printf("kappa=%.2f depth=%d: S err %.2e, D err %.2e\n", k, ifgf.tree().depth(), es, ed);
    EXPECT_GE(ifgf.tree().depth(), 3);
    EXPECT_LT(es, 1e-4);
    // Normal derivatives differentiate the interpolant, which costs accuracy.
    EXPECT_LT(ed, 5e-4);
  }
}

TEST(Ifgf, ForcedDepthAtLowFrequency) {
  const std::size_t N = 800;
  const auto x = random_sphere_points(N, 9);
  const std::vector<double> w(N, 1.0 / N);
  const auto dens = random_density(N, 10);
  IfgfConfig cfg;
  cfg.forced_depth = 4;
  IfgfSummation ifgf(x, x, w, 1.0, 0.5, cfg);
  EXPECT_EQ(ifgf.tree().depth(), 4);
  const auto ref = naive(x, x, w, dens, 1.0, 0.5);
  const auto fast = ifgf.apply(dens);
  // Seed cones are never refined at this frequency.
  EXPECT_LT(rel_err(fast.S, ref.S), 5e-4);
  EXPECT_LT(rel_err(fast.D, ref.D), 5e-3);
}

TEST(Ifgf, VecAndSeqAgree) {
  const auto disc = make_sphere_surface(1, 8);
  const auto dens = random_density(disc.size(), 1);
  IfgfSummation ifgf(disc.points(), disc.normals(), disc.weights(), pi, 1.5 * pi);
  ASSERT_GE(ifgf.tree().depth(), 4);
  const auto a = ifgf.apply(dens, IfgfMode::vec);
  const auto b = ifgf.apply(dens, IfgfMode::seq);
  EXPECT_LT(rel_err(a.S, b.S), 1e-12);
  EXPECT_LT(rel_err(a.D, b.D), 1e-12);
}

TEST(Ifgf, ChannelIndependenceAndLinearity) {
  const auto x = random_sphere_points(600, 2);
  const std::vector<double> w(600, 0.01);
  IfgfSummation ifgf(x, x, w, 3.0, 5.0);
  DensityBlock one(600);
  for (std::size_t l = 0; l < 600; ++l) one(l, 4) = cplx(std::cos(l * 1.0), 1.0);
  const auto r = ifgf.apply(one);
  for (std::size_t l = 0; l < 600; ++l) {
    for (int k = 0; k < 2; ++k) {
      for (int c = 0; c < 8; ++c) {
        if (c != 4) {
          EXPECT_EQ(r.s(l, k, c), cplx{});
        }
      }
      for (int c = 0; c < 6; ++c) {
        if (c != 4) {
          EXPECT_EQ(r.d(l, k, c), cplx{});
        }
      }
    }
  }
  const auto d1 = random_density(600, 3), d2 = random_density(600, 4);
  DensityBlock sum(600);
  for (std::size_t k = 0; k < sum.v.size(); ++k) sum.v[k] = d1.v[k] + cplx(0, 2) * d2.v[k];
  const auto r1 = ifgf.apply(d1), r2 = ifgf.apply(d2), rs = ifgf.apply(sum);
  std::vector<cplx> comb(rs.S.size());
  for (std::size_t k = 0; k < comb.size(); ++k) comb[k] = r1.S[k] + cplx(0, 2) * r2.S[k];
  EXPECT_LT(rel_err(rs.S, comb), 1e-12);
}

TEST(Ifgf, TwoPointSystemExcludesSelf) {
  const std::vector<Vec3> x = {{0, 0, 0}, {0.3, 0, 0}};
  const std::vector<Vec3> n = {{0, 0, 1}, {0, 0, 1}};
  const std::vector<double> w = {1.0, 1.0};
  IfgfSummation ifgf(x, n, w, 2.0, 2.0);
  DensityBlock d(2);
  d(0, 0) = 1.0;
  const auto r = ifgf.apply(d);
  EXPECT_EQ(r.s(0, 0, 0), cplx{});
  EXPECT_LT(std::abs(r.s(1, 0, 0) - green(2.0, 0.3)), 1e-15);
}

TEST(Ifgf, FarNormalDerivativeByForwardDifference) {
  // Source at z = 2, target at (0,0,1) with normal e_z; forced depth puts
  // the pair in cousin boxes so the derivative comes from the cone path.
  const std::vector<Vec3> x = {{0, 0, 1}, {0, 0, 2}};
  const std::vector<Vec3> n = {{0, 0, 1}, {0, 0, 1}};
  const std::vector<double> w = {1.0, 1.0};
  for (double k : {1.0, 4.0}) {
    IfgfConfig cfg;
    cfg.forced_depth = 4;
    IfgfSummation ifgf(x, n, w, k, k, cfg);
    ASSERT_FALSE(ifgf.tree().leaf_neighbors(0, 1));
    DensityBlock d(2);
    d(1, 2) = 1.0;
    const auto r = ifgf.apply(d);
    const cplx exact = green_dn(k, x[0], x[1], n[0]);
    // A lone source sees the full interpolation error (no averaging over a
    // density), about 1e-3 with the default orders.
    EXPECT_LT(std::abs(r.d(0, 0, 2) - exact), 3e-3 * std::abs(exact));
    EXPECT_LT(std::abs(r.s(0, 1, 2) - green(k, 1.0)), 3e-3 * std::abs(green(k, 1.0)));
    // Halving h moves the result by O(h).
    cfg.fd_step = 5e-7;
    IfgfSummation half(x, n, w, k, k, cfg);
    const auto r2 = half.apply(d);
    EXPECT_LT(std::abs(r2.d(0, 0, 2) - r.d(0, 0, 2)), 1e-5 * std::abs(exact));
  }
}

TEST(Ifgf, ExclusionSkipsSingularPatchesInDirectPart) {
  const auto disc = make_sphere_surface(2, 6);
  SingularQuadratureConfig qc;
  const auto map = classify_targets(disc, qc);
  IfgfSummation ifgf(disc.points(), disc.normals(), disc.weights(), 3.0, 4.0);
  ifgf.set_exclusion(&map, 36);
  DensityBlock one(disc.size());
  for (std::size_t l = 0; l < disc.size(); ++l) one(l, 0) = 1.0;
  const auto with = ifgf.apply(one);
  IfgfSummation plain(disc.points(), disc.normals(), disc.weights(), 3.0, 4.0);
  const auto without = plain.apply(one);
  // The difference is exactly the direct sum over singular-patch sources in
  // neighboring finest boxes.
  const auto& tree = ifgf.tree();
  double worst = 0;
  for (std::size_t l = 0; l < disc.size(); l += 7) {
    cplx expect{};
    for (std::uint32_t p : map.singular(l))
      for (std::size_t m = p * 36; m < (p + 1) * 36; ++m)
        if (m != l && tree.leaf_neighbors(l, m)) expect += green(3.0, norm(disc.points()[l] - disc.points()[m])) * disc.weights()[m];
    worst = std::max(worst, std::abs(without.s(l, 0, 0) - with.s(l, 0, 0) - expect));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(Ifgf, SphereMeshAccuracy) {
  const auto disc = make_sphere_surface(2, 16);  // N = 6144
  const auto dens = random_density(disc.size(), 12);
  const double ke = 2 * pi, ki = 3 * pi;
  IfgfSummation ifgf(disc.points(), disc.normals(), disc.weights(), ke, ki);
  const auto t0 = std::chrono::steady_clock::now();
  const auto fast = ifgf.apply(dens, IfgfMode::vec);
  const auto t1 = std::chrono::steady_clock::now();
  const auto ref = dense_regular_sum(disc, dens, nullptr, ke, ki);
  const double es = rel_err(fast.S, ref.S), ed = rel_err(fast.D, ref.D);
  std::printf("N=6144 depth=%d segments=%zu: S err %.2e, D err %.2e, vec %.3fs\n", ifgf.tree().depth(),
              ifgf.cones().total_relevant(), es, ed, std::chrono::duration<double>(t1 - t0).count());
  EXPECT_LT(es, 1.5e-4);
  EXPECT_LT(ed, 5e-4);
}
