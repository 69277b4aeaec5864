#pragma once

// Interpolated factored Green function summation: cone segments attached to
// every relevant box, analytic-factor interpolation, depth-first upward pass.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "hbie/boxtree.hpp"
#include "hbie/chebyshev.hpp"
#include "hbie/common.hpp"
#include "hbie/quadrature.hpp"

namespace hbie {

inline constexpr double cone_eta = 0.57735026918962576;  // √3/3

enum class IfgfMode { vec, seq };

struct IfgfConfig {
  int ps = 3, pa = 5;
  int ns_seed = 1, na_seed = 2;
  IfgfMode mode = IfgfMode::vec;
  bool displaced = true;
  double fd_step = 1e-6;
  int forced_depth = 0;

  void validate() const {
    if (ps < 2 || pa < 2 || ps > 12 || pa > 12) throw std::invalid_argument("ifgf: P_s and P_a must lie in [2, 12]");
    if (ns_seed < 1 || na_seed < 1) throw std::invalid_argument("ifgf: cone seeds must be positive");
    if (!(fd_step > 0)) throw std::invalid_argument("ifgf: finite-difference step must be positive");
  }
};

struct ConeCoords {
  double s, theta, phi;
};

/// s = h/r with h = √3 H/2, spherical angles of x - x_S, φ in [0, 2π).
inline ConeCoords cone_coords(const Vec3& x, const Vec3& xs, double H) {
  const Vec3 d = x - xs;
  const double r = norm(d);
  if (!(r > 0)) throw std::domain_error("cone_coords: point coincides with the box center");
  double phi = std::atan2(d.y, d.x);
  if (phi < 0) phi += two_pi;
  if (phi >= two_pi) phi = 0;
  return {0.5 * std::sqrt(3.0) * H / r, std::acos(std::clamp(d.z / r, -1.0, 1.0)), phi};
}

inline cplx centered_factor(const Vec3& x, const Vec3& xs, cplx kappa) {
  const double r = norm(x - xs);
  if (!(r > 0)) throw std::domain_error("centered_factor: x coincides with the box center");
  return green(kappa, r);
}

/// G(x,y) / G(x,x_S).
inline cplx analytic_factor(const Vec3& x, const Vec3& y, const Vec3& xs, cplx kappa) {
  const double r1 = norm(x - y), r0 = norm(x - xs);
  if (!(r1 > 0) || !(r0 > 0)) throw std::domain_error("analytic_factor: coincident points");
  return (r0 / r1) * std::exp(I * kappa * (r1 - r0));
}

struct ConeLevel {
  int ns = 0, na = 0;
  double ds = 0, dth = 0, dph = 0;
  std::vector<std::uint32_t> offset;  // per box
  std::vector<std::uint32_t> seg;     // sorted relevant segment ids

  std::uint32_t num_segments() const { return static_cast<std::uint32_t>(ns) * na * 2 * na; }
  std::span<const std::uint32_t> segments(std::size_t b) const {
    return {seg.data() + offset[b], seg.data() + offset[b + 1]};
  }
  std::uint32_t segment_id(int g1, int g2, int g3) const {
    return (static_cast<std::uint32_t>(g1) * na + g2) * (2 * na) + g3;
  }
  /// Segment containing c, with c's local coordinates in [-1,1]^3.
  std::uint32_t locate(const ConeCoords& c, double* local) const {
    const int g1 = std::clamp(static_cast<int>(c.s / ds), 0, ns - 1);
    const int g2 = std::clamp(static_cast<int>(c.theta / dth), 0, na - 1);
    const int g3 = std::clamp(static_cast<int>(c.phi / dph), 0, 2 * na - 1);
    if (local) segment_local(c, g1, g2, g3, local);
    return segment_id(g1, g2, g3);
  }
  /// Local coordinates of c relative to segment id (may leave [-1,1]).
  void local_in(const ConeCoords& c, std::uint32_t id, double* local) const {
    const int g3 = id % (2 * na), g2 = (id / (2 * na)) % na, g1 = id / (2 * na * na);
    segment_local(c, g1, g2, g3, local);
  }
  void segment_local(const ConeCoords& c, int g1, int g2, int g3, double* local) const {
    local[0] = 2.0 * (c.s - g1 * ds) / ds - 1.0;
    local[1] = 2.0 * (c.theta - g2 * dth) / dth - 1.0;
    double p = c.phi - g3 * dph;
    // Displaced points may cross φ = 0 relative to their base segment.
    if (p > pi) p -= two_pi;
    if (p < -pi) p += two_pi;
    local[2] = 2.0 * p / dph - 1.0;
  }
};

class ConeHierarchy {
 public:
  ConeHierarchy() = default;
  ConeHierarchy(const BoxTree& tree, const IfgfConfig& cfg, double kappa_max);

  int depth() const { return depth_; }
  const ConeLevel& level(int d) const { return levels_[d]; }
  const IfgfConfig& config() const { return cfg_; }
  int nodes_per_segment() const { return cfg_.ps * cfg_.pa * cfg_.pa; }
  const ChebOps& ops_s() const { return ops_s_; }
  const ChebOps& ops_a() const { return ops_a_; }
  std::size_t total_relevant() const {
    std::size_t n = 0;
    for (int d = 3; d <= depth_; ++d) n += levels_[d].seg.size();
    return n;
  }

  /// Physical position of interpolation node q of segment id at level d.
  Vec3 node_position(int d, const Vec3& center, double H, std::uint32_t id, int q) const {
    const int pa = cfg_.pa;
    const int k = q % pa, j = (q / pa) % pa, i = q / (pa * pa);
    return center + node_offset(d, H, id, i, j, k);
  }

  Vec3 node_offset(int d, double H, std::uint32_t id, int i, int j, int k) const {
    const ConeLevel& L = levels_[d];
    const NodeTable& T = tables_[d];
    const int pa = cfg_.pa, ps = cfg_.ps;
    const int g3 = id % (2 * L.na), g2 = (id / (2 * L.na)) % L.na, g1 = id / (2 * L.na * L.na);
    const double r = 0.5 * std::sqrt(3.0) * H * T.inv_s[g1 * ps + i];
    const double st = T.sin_th[g2 * pa + j], ct = T.cos_th[g2 * pa + j];
    return r * Vec3{st * T.cos_ph[g3 * pa + k], st * T.sin_ph[g3 * pa + k], ct};
  }

 private:
  struct NodeTable {
    std::vector<double> inv_s, sin_th, cos_th, sin_ph, cos_ph;
  };
  int depth_ = 0;
  IfgfConfig cfg_;
  std::vector<ConeLevel> levels_;
  std::vector<NodeTable> tables_;
  ChebOps ops_s_{1}, ops_a_{1};
};

inline ConeHierarchy::ConeHierarchy(const BoxTree& tree, const IfgfConfig& cfg, double kappa_max)
    : depth_(tree.depth()), cfg_(cfg), levels_(tree.depth() + 1), tables_(tree.depth() + 1), ops_s_(cfg.ps), ops_a_(cfg.pa) {
  cfg.validate();
  const int D = depth_;
  int ns = cfg.ns_seed, na = cfg.na_seed;
  for (int d = D; d >= 3; --d) {
    const int a = kappa_max * tree.side(d) > 0.5 ? 2 : 1;
    ns *= a;
    na *= a;
    ConeLevel& L = levels_[d];
    L.ns = ns;
    L.na = na;
    L.ds = cone_eta / ns;
    L.dth = pi / na;
    L.dph = pi / na;
    NodeTable& T = tables_[d];
    for (int g = 0; g < ns; ++g)
      for (int i = 0; i < cfg.ps; ++i) T.inv_s.push_back(1.0 / ((g + 0.5 * (ops_s_.nodes[i] + 1)) * L.ds));
    for (int g = 0; g < 2 * na; ++g)
      for (int j = 0; j < cfg.pa; ++j) {
        const double t = (g + 0.5 * (ops_a_.nodes[j] + 1)) * L.dth;
        if (g < na) {
          T.sin_th.push_back(std::sin(t));
          T.cos_th.push_back(std::cos(t));
        }
        T.sin_ph.push_back(std::sin(t));
        T.cos_ph.push_back(std::cos(t));
      }
  }
  const int Q = nodes_per_segment();
  std::vector<char> mark;
  std::vector<std::uint32_t> hits;
  for (int d = 3; d <= D; ++d) {
    ConeLevel& L = levels_[d];
    const BoxLevel& B = tree.level(d);
    const double H = tree.side(d);
    mark.assign(L.num_segments(), 0);
    L.offset.assign(1, 0);
    for (std::size_t b = 0; b < B.size(); ++b) {
      hits.clear();
      const Vec3 c = tree.center(d, b);
      auto add = [&](const Vec3& x) {
        const std::uint32_t id = L.locate(cone_coords(x, c, H), nullptr);
        if (!mark[id]) {
          mark[id] = 1;
          hits.push_back(id);
        }
      };
      for (std::uint32_t cb : B.cousins(b))
        for (std::uint32_t s = B.first[cb]; s < B.last[cb]; ++s) add(tree.sorted_points()[s]);
      if (d > 3) {
        const std::uint32_t p = B.parent[b];
        const Vec3 pc = tree.center(d - 1, p);
        for (std::uint32_t id : levels_[d - 1].segments(p))
          for (int q = 0; q < Q; ++q) add(node_position(d - 1, pc, tree.side(d - 1), id, q));
      }
      std::sort(hits.begin(), hits.end());
      for (std::uint32_t id : hits) mark[id] = 0;
      L.seg.insert(L.seg.end(), hits.begin(), hits.end());
      L.offset.push_back(static_cast<std::uint32_t>(L.seg.size()));
    }
  }
}

inline ConeHierarchy build_cone_hierarchy(const BoxTree& tree, const IfgfConfig& cfg, double kappa_max) {
  return ConeHierarchy(tree, cfg, kappa_max);
}

/// Sums Σ_{m≠ℓ} G_k(x_ℓ, y_m) w_m φ_m for 8 density channels and both
/// kernels, plus the normal derivatives of the 6 Cartesian channels. Pairs in
/// non-neighboring finest boxes go through the cone hierarchy (normal
/// derivative by forward differences); pairs in neighboring finest boxes are
/// summed directly, optionally skipping sources on a target's singular patches.
class IfgfSummation {
 public:
  IfgfSummation(std::span<const Vec3> points, std::span<const Vec3> normals, std::span<const double> weights, cplx ke,
                cplx ki, const IfgfConfig& cfg = {})
      : pts_(points.begin(), points.end()),
        nrm_(normals.begin(), normals.end()),
        w_(weights.begin(), weights.end()),
        kappa_{ke, ki},
        cfg_(cfg) {
    cfg.validate();
    if (w_.size() != pts_.size() || (!nrm_.empty() && nrm_.size() != pts_.size()))
      throw std::invalid_argument("ifgf: points, normals and weights must have equal length");
    if (nrm_.empty()) cfg_.displaced = false;
    const double kmax = std::max(std::abs(ke), std::abs(ki));
    tree_ = build_box_tree(pts_, kmax, cfg.forced_depth);
    cones_ = ConeHierarchy(tree_, cfg_, kmax);
  }

  /// Skip sources lying on a target's singular patches in the direct part.
  void set_exclusion(const SingularityMap* map, std::size_t points_per_patch) {
    excl_ = map;
    ppp_ = points_per_patch;
  }

  const BoxTree& tree() const { return tree_; }
  const ConeHierarchy& cones() const { return cones_; }
  const IfgfConfig& config() const { return cfg_; }

  /// Peak bytes of segment value buffers for one traversal path (Vec mode).
  std::size_t spectra_bytes(int channels = 16) const {
    std::size_t s = 0;
    for (int d = 3; d <= tree_.depth(); ++d) {
      std::size_t m = 0;
      const auto& L = cones_.level(d);
      for (std::size_t b = 0; b + 1 < L.offset.size(); ++b) m = std::max<std::size_t>(m, L.offset[b + 1] - L.offset[b]);
      s += m * cones_.nodes_per_segment() * channels * sizeof(cplx);
    }
    return s;
  }

  LayerValues apply(const DensityBlock& dens) const { return apply(dens, cfg_.mode); }

  LayerValues apply(const DensityBlock& dens, IfgfMode mode) const {
    const std::size_t N = pts_.size();
    if (dens.n != N) throw std::invalid_argument("ifgf: density size mismatch");
    LayerValues out(N);
    if (mode == IfgfMode::vec) {
      Channels ch;
      for (int k = 0; k < 2; ++k)
        for (int c = 0; c < 8; ++c) {
          ch.dens.push_back(c);
          ch.kernel.push_back(k);
          if (c < 6 && cfg_.displaced) ch.disp.push_back(k * 8 + c);
        }
      run(dens, ch, out, [](int s) { return s; }, [](int s) { return (s / 8) * 6 + s % 8; });
    } else {
      for (int k = 0; k < 2; ++k)
        for (int c = 0; c < 8; ++c) {
          Channels ch;
          ch.dens = {c};
          ch.kernel = {k};
          if (c < 6 && cfg_.displaced) ch.disp = {0};
          run(dens, ch, out, [&](int) { return k * 8 + c; }, [&](int) { return k * 6 + c; });
        }
    }
    return out;
  }

 private:
  struct Channels {
    std::vector<int> dens, kernel, disp;  // disp: indices into the S channel list
  };

  struct Eval {
    std::uint32_t seg;
    double loc[3];
    cplx f[2];
  };

  struct Work {
    int C = 0, CD = 0;
    std::vector<std::vector<cplx>> vals;                 // per level
    std::vector<std::vector<std::int32_t>> lookup;       // per level, segment id -> local
    std::vector<cplx> tmp;
    std::vector<cplx> outS, outD;                         // sorted order
    std::vector<Eval> evals;
    std::vector<std::uint32_t> count, perm;
  };

  template <class MapS, class MapD>
  void run(const DensityBlock& dens, const Channels& ch, LayerValues& out, MapS map_s, MapD map_d) const {
    const std::size_t N = pts_.size();
    const int C = static_cast<int>(ch.dens.size()), CD = static_cast<int>(ch.disp.size());
    // Weighted densities in tree order.
    std::vector<cplx> a(N * C);
    for (std::size_t s = 0; s < N; ++s) {
      const std::size_t i = tree_.order()[s];
      for (int c = 0; c < C; ++c) a[s * C + c] = w_[i] * dens(i, ch.dens[c]);
    }
    std::vector<cplx> S(N * C), Dfar(N * CD), Sdir(N * C), Ddir(N * CD);
    const int D = tree_.depth();
    if (D >= 3) {
      const BoxLevel& L3 = tree_.level(3);
      const int nthreads =
#ifdef _OPENMP
          omp_get_max_threads();
#else
          1;
#endif
      std::vector<Work> works(nthreads);
#pragma omp parallel
      {
        const int t =
#ifdef _OPENMP
            omp_get_thread_num();
#else
            0;
#endif
        Work& w = works[t];
        init_work(w, C, CD);
#pragma omp for schedule(dynamic, 1)
        for (std::size_t b = 0; b < L3.size(); ++b) visit(3, static_cast<std::uint32_t>(b), a, ch, w);
      }
      for (const Work& w : works) {
        if (w.outS.empty()) continue;
        for (std::size_t k = 0; k < S.size(); ++k) S[k] += w.outS[k];
        for (std::size_t k = 0; k < Dfar.size(); ++k) Dfar[k] += w.outD[k];
      }
    }
    direct(a, ch, Sdir, Ddir);
    for (std::size_t s = 0; s < N; ++s) {
      const std::size_t i = tree_.order()[s];
      for (int c = 0; c < C; ++c) out.S[i * LayerValues::s_stride + map_s(c)] = S[s * C + c] + Sdir[s * C + c];
      for (int e = 0; e < CD; ++e) {
        const int c = ch.disp[e];
        out.D[i * LayerValues::d_stride + map_d(c)] = Dfar[s * CD + e] + Ddir[s * CD + e];
      }
    }
  }

  void init_work(Work& w, int C, int CD) const {
    const int D = tree_.depth();
    w.C = C;
    w.CD = CD;
    w.vals.assign(D + 1, {});
    w.lookup.assign(D + 1, {});
    for (int d = 3; d <= D; ++d) w.lookup[d].assign(cones_.level(d).num_segments(), -1);
    w.outS.assign(pts_.size() * C, cplx{});
    w.outD.assign(pts_.size() * CD, cplx{});
  }

  void basis(const double* loc, double* B) const {
    const int ps = cfg_.ps, pa = cfg_.pa;
    double ts[12], tt[12], tp[12];
    cheb_T(loc[0], std::span<double>(ts, ps));
    cheb_T(loc[1], std::span<double>(tt, pa));
    cheb_T(loc[2], std::span<double>(tp, pa));
    int q = 0;
    for (int i = 0; i < ps; ++i)
      for (int j = 0; j < pa; ++j) {
        const double f = ts[i] * tt[j];
        for (int k = 0; k < pa; ++k) B[q++] = f * tp[k];
      }
  }

  // Interpolant values of all C channels at the basis B (coef holds 2C doubles per node).
  template <int C>
  static void contract_fixed(const double* B, int Q, const double* coef, double* out) {
    // Two interleaved accumulators shorten the dependency chains.
    double acc[2 * C] = {}, acc2[2 * C] = {};
    int q = 0;
    for (; q + 1 < Q; q += 2) {
      const double b0 = B[q], b1 = B[q + 1];
      const double* c0 = coef + static_cast<std::size_t>(q) * 2 * C;
      const double* c1 = c0 + 2 * C;
      for (int e = 0; e < 2 * C; ++e) {
        acc[e] += b0 * c0[e];
        acc2[e] += b1 * c1[e];
      }
    }
    if (q < Q) {
      const double* c0 = coef + static_cast<std::size_t>(q) * 2 * C;
      for (int e = 0; e < 2 * C; ++e) acc[e] += B[q] * c0[e];
    }
    for (int e = 0; e < 2 * C; ++e) out[e] = acc[e] + acc2[e];
  }

  static void contract(const double* B, int Q, const cplx* coef, int C, cplx* outv) {
    const double* cf = reinterpret_cast<const double*>(coef);
    double* o = reinterpret_cast<double*>(outv);
    switch (C) {
      case 1: return contract_fixed<1>(B, Q, cf, o);
      case 8: return contract_fixed<8>(B, Q, cf, o);
      case 16: return contract_fixed<16>(B, Q, cf, o);
      default: break;
    }
    std::fill(o, o + 2 * C, 0.0);
    for (int q = 0; q < Q; ++q) {
      const double bq = B[q];
      const double* cq = cf + static_cast<std::size_t>(q) * 2 * C;
      for (int e = 0; e < 2 * C; ++e) o[e] += bq * cq[e];
    }
  }

  static cplx expi(cplx kappa, double r) {
    if (kappa.imag() == 0) {
      const double t = kappa.real() * r;
      return {std::cos(t), std::sin(t)};
    }
    return std::exp(I * kappa * r);
  }

  static void coords(const Vec3& dv, double H, ConeCoords& c, double& r) {
    r = norm(dv);
    if (!(r > 0)) throw std::domain_error("ifgf: point coincides with a box center");
    double phi = std::atan2(dv.y, dv.x);
    if (phi < 0) phi += two_pi;
    if (phi >= two_pi) phi = 0;
    c = {0.5 * std::sqrt(3.0) * H / r, std::acos(std::clamp(dv.z / r, -1.0, 1.0)), phi};
  }

  // Node values -> tensor Chebyshev coefficients, in place, per segment.
  void to_coefficients(cplx* values, int C, std::vector<cplx>& scratch) const {
    const int ps = cfg_.ps, pa = cfg_.pa, Q = ps * pa * pa, W = 2 * C;
    scratch.resize(static_cast<std::size_t>(Q) * C);
    double* v = reinterpret_cast<double*>(values);
    double* tmp = reinterpret_cast<double*>(scratch.data());
    const auto& fs = cones_.ops_s().fwd;
    const auto& fa = cones_.ops_a().fwd;
    // Applies the 1D transform f (n x n) along an axis with the given stride.
    auto pass = [&](const double* src, double* dst, const std::vector<double>& f, int n, int stride, int outer,
                    int inner) {
      for (int o = 0; o < outer; ++o)
        for (int in = 0; in < inner; ++in)
          for (int m = 0; m < n; ++m) {
            double* out = dst + (static_cast<std::size_t>(o) * n * stride + m * stride + in) * W;
            std::fill(out, out + W, 0.0);
            for (int k = 0; k < n; ++k) {
              const double fk = f[m * n + k];
              const double* sp = src + (static_cast<std::size_t>(o) * n * stride + k * stride + in) * W;
              for (int e = 0; e < W; ++e) out[e] += fk * sp[e];
            }
          }
    };
    pass(v, tmp, fa, pa, 1, ps * pa, 1);    // φ
    pass(tmp, v, fa, pa, pa, ps, pa);       // θ
    pass(v, tmp, fs, ps, pa * pa, 1, pa * pa);  // s
    std::copy(tmp, tmp + static_cast<std::size_t>(Q) * W, v);
  }

  void visit(int d, std::uint32_t b, const std::vector<cplx>& a, const Channels& ch, Work& w) const {
    const int D = tree_.depth(), C = w.C, CD = w.CD, Q = cones_.nodes_per_segment();
    const int ps = cfg_.ps, pa = cfg_.pa;
    const BoxLevel& B = tree_.level(d);
    const ConeLevel& L = cones_.level(d);
    const auto segs = L.segments(b);
    const double H = tree_.side(d);
    const Vec3 xb = tree_.center(d, b);
    const std::size_t blk = static_cast<std::size_t>(Q) * C;
    const auto& P = tree_.sorted_points();
    bool used[2] = {false, false};
    int kern[16];
    for (int c = 0; c < C; ++c) used[kern[c] = ch.kernel[c]] = true;
    auto& vals = w.vals[d];
    vals.assign(segs.size() * blk, cplx{});
    auto& lut = w.lookup[d];
    for (std::size_t k = 0; k < segs.size(); ++k) lut[segs[k]] = static_cast<std::int32_t>(k);

    if (d == D) {
      // Analytic factor at the nodes by direct summation over the box sources.
      cplx g[2];
      for (std::size_t k = 0; k < segs.size(); ++k)
        for (int i = 0, q = 0; i < ps; ++i)
          for (int j = 0; j < pa; ++j)
            for (int l = 0; l < pa; ++l, ++q) {
              const Vec3 off = cones_.node_offset(d, H, segs[k], i, j, l);
              const Vec3 X = xb + off;
              const double r0 = norm(off);
              cplx* v = vals.data() + k * blk + static_cast<std::size_t>(q) * C;
              for (std::uint32_t s = B.first[b]; s < B.last[b]; ++s) {
                const double r1 = norm(X - P[s]);
                const double ratio = r0 / r1;
                for (int kk = 0; kk < 2; ++kk)
                  if (used[kk]) g[kk] = ratio * expi(kappa_[kk], r1 - r0);
                const cplx* as = a.data() + static_cast<std::size_t>(s) * C;
                for (int c = 0; c < C; ++c) v[c] += g[ch.kernel[c]] * as[c];
              }
            }
    } else {
      for (std::uint32_t c = B.child_first[b]; c < B.child_last[b]; ++c) visit(d + 1, c, a, ch, w);
    }

    for (std::size_t k = 0; k < segs.size(); ++k) to_coefficients(vals.data() + k * blk, C, w.tmp);

    double basisv[12 * 12 * 12], dbasis[12 * 12 * 12], loc[3];
    cplx val[16], dval[16], cf[2];
    ConeCoords cc;
    double r;
    // Emission to cousin points.
    for (std::uint32_t cb : B.cousins(b))
      for (std::uint32_t t = B.first[cb]; t < B.last[cb]; ++t) {
        const Vec3 x = P[t];
        coords(x - xb, H, cc, r);
        const std::uint32_t id = L.locate(cc, loc);
        const std::int32_t li = lut[id];
        if (li < 0) throw std::logic_error("ifgf: cousin point outside the relevant cone segments");
        const cplx* coef = vals.data() + li * blk;
        basis(loc, basisv);
        contract(basisv, Q, coef, C, val);
        for (int kk = 0; kk < 2; ++kk)
          if (used[kk]) cf[kk] = expi(kappa_[kk], r) / (four_pi * r);
        cplx* os = w.outS.data() + static_cast<std::size_t>(t) * C;
        for (int c = 0; c < C; ++c) os[c] += val[c] * cf[ch.kernel[c]];
        if (CD > 0) {
          // Forward difference [F(x̃)G(x̃) - F(x)G(x)] / h, arranged as
          // (F(x̃) - F(x))G(x̃) + F(x)(G(x̃) - G(x)) so the density-dependent
          // parts never cancel.
          const std::size_t i = tree_.order()[t];
          double rt;
          coords(x + cfg_.fd_step * nrm_[i] - xb, H, cc, rt);
          L.local_in(cc, id, loc);
          basis(loc, dbasis);
          for (int q = 0; q < Q; ++q) dbasis[q] -= basisv[q];
          contract(dbasis, Q, coef, C, dval);
          cplx ct[2], dc[2];
          for (int kk = 0; kk < 2; ++kk)
            if (used[kk]) {
              ct[kk] = expi(kappa_[kk], rt) / (four_pi * rt);
              dc[kk] = ct[kk] - cf[kk];
            }
          const double inv_h = 1.0 / cfg_.fd_step;
          cplx* od = w.outD.data() + static_cast<std::size_t>(t) * CD;
          for (int e = 0; e < CD; ++e) {
            const int c = ch.disp[e], kk = kern[c];
            od[e] += (dval[c] * ct[kk] + val[c] * dc[kk]) * inv_h;
          }
        }
      }

    // Re-centered contribution to the parent's node values, grouped by child
    // segment so each coefficient block is read once from cache.
    if (d > 3) {
      const std::uint32_t p = B.parent[b];
      const auto psegs = cones_.level(d - 1).segments(p);
      const double HP = tree_.side(d - 1);
      const Vec3 xp = tree_.center(d - 1, p);
      const Vec3 shift = xp - xb;
      auto& pv = w.vals[d - 1];
      const std::size_t M = psegs.size() * Q;
      w.evals.resize(M);
      w.count.assign(segs.size() + 1, 0);
      for (std::size_t k = 0, m = 0; k < psegs.size(); ++k)
        for (int i = 0; i < ps; ++i)
          for (int j = 0; j < pa; ++j)
            for (int l = 0; l < pa; ++l, ++m) {
              const Vec3 off = cones_.node_offset(d - 1, HP, psegs[k], i, j, l);
              const double rp = norm(off);
              coords(off + shift, H, cc, r);
              Eval& e = w.evals[m];
              const std::int32_t li = lut[L.locate(cc, e.loc)];
              if (li < 0) throw std::logic_error("ifgf: parent node outside the relevant cone segments");
              e.seg = static_cast<std::uint32_t>(li);
              for (int kk = 0; kk < 2; ++kk)
                if (used[kk]) e.f[kk] = (rp / r) * expi(kappa_[kk], r - rp);
              ++w.count[li + 1];
            }
      for (std::size_t k = 0; k < segs.size(); ++k) w.count[k + 1] += w.count[k];
      w.perm.resize(M);
      for (std::size_t m = 0; m < M; ++m) w.perm[w.count[w.evals[m].seg]++] = static_cast<std::uint32_t>(m);
      for (std::uint32_t m : w.perm) {
        const Eval& e = w.evals[m];
        basis(e.loc, basisv);
        contract(basisv, Q, vals.data() + e.seg * blk, C, val);
        cplx* o = pv.data() + static_cast<std::size_t>(m) * C;
        for (int c = 0; c < C; ++c) o[c] += val[c] * e.f[kern[c]];
      }
    }
    for (std::uint32_t id : segs) lut[id] = -1;
  }

  // Neighboring finest boxes: exact kernels and analytic normal derivatives.
  void direct(const std::vector<cplx>& a, const Channels& ch, std::vector<cplx>& S, std::vector<cplx>& Ddir) const {
    const BoxLevel& L = tree_.level(tree_.depth());
    const int C = static_cast<int>(ch.dens.size()), CD = static_cast<int>(ch.disp.size());
    const auto& P = tree_.sorted_points();
#pragma omp parallel for schedule(dynamic, 8)
    for (std::size_t b = 0; b < L.size(); ++b) {
      for (std::uint32_t t = L.first[b]; t < L.last[b]; ++t) {
        const std::size_t i = tree_.order()[t];
        const Vec3 x = P[t];
        const Vec3 n = nrm_.empty() ? Vec3{} : nrm_[i];
        std::span<const std::uint32_t> sing;
        if (excl_) sing = excl_->singular(i);
        cplx* os = S.data() + static_cast<std::size_t>(t) * C;
        cplx* od = Ddir.data() + static_cast<std::size_t>(t) * CD;
        for (std::uint32_t nb : L.neighbors(b))
          for (std::uint32_t s = L.first[nb]; s < L.last[nb]; ++s) {
            if (s == t) continue;
            if (excl_) {
              const auto pj = static_cast<std::uint32_t>(tree_.order()[s] / ppp_);
              if (std::find(sing.begin(), sing.end(), pj) != sing.end()) continue;
            }
            const Vec3 dv = x - P[s];
            const double r = norm(dv);
            const double cn = dot(n, dv) / r;
            cplx g[2], dg[2];
            for (int k = 0; k < 2; ++k) {
              g[k] = std::exp(I * kappa_[k] * r) / (four_pi * r);
              dg[k] = g[k] * (I * kappa_[k] - 1.0 / r) * cn;
            }
            const cplx* as = a.data() + static_cast<std::size_t>(s) * C;
            for (int c = 0; c < C; ++c) os[c] += g[ch.kernel[c]] * as[c];
            for (int e = 0; e < CD; ++e) od[e] += dg[ch.kernel[ch.disp[e]]] * as[ch.disp[e]];
          }
      }
    }
  }

  std::vector<Vec3> pts_, nrm_;
  std::vector<double> w_;
  cplx kappa_[2];
  IfgfConfig cfg_;
  BoxTree tree_;
  ConeHierarchy cones_;
  const SingularityMap* excl_ = nullptr;
  std::size_t ppp_ = 1;
};

}  // namespace hbie
