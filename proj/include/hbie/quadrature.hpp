#pragma once

// Near/far classification of (target, patch) pairs, Fejér summation for
// regular pairs, graded rectangular-polar moments for singular pairs and the
// local corrections that keep the accelerated far sum from double counting.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <span>
#include <vector>

#include "hbie/boxtree.hpp"
#include "hbie/chebyshev.hpp"
#include "hbie/common.hpp"
#include "hbie/geometry.hpp"

namespace hbie {

struct SingularQuadratureConfig {
  int d = 4;
  std::size_t n_beta = 0;  // 0: max(2 N_C, 24)
  double delta_factor = 1.0;

  std::size_t resolved_n_beta(std::size_t nc) const {
    std::size_t n = n_beta ? n_beta : std::max<std::size_t>(2 * nc, 24);
    // An even count keeps the target projection off the node set.
    return n + (n % 2);
  }
  void validate(std::size_t nc) const {
    if (d < 2) throw std::invalid_argument("singular quadrature: grading order d must be >= 2");
    if (resolved_n_beta(nc) < nc) throw std::invalid_argument("singular quadrature: N_beta must be >= N_C");
    if (!(delta_factor >= 0)) throw std::invalid_argument("singular quadrature: delta_factor must be >= 0");
  }
};

/// Per-target list of singular patches (sorted), with the closest points.
struct SingularityMap {
  double delta_factor = 1.0;
  std::size_t num_patches = 0;
  std::vector<double> delta;  // per patch
  std::vector<std::size_t> offset;
  std::vector<std::uint32_t> patches;
  std::vector<ParamPoint> closest;

  std::size_t num_targets() const { return offset.empty() ? 0 : offset.size() - 1; }
  std::span<const std::uint32_t> singular(std::size_t l) const {
    return {patches.data() + offset[l], patches.data() + offset[l + 1]};
  }
  bool is_singular(std::size_t l, std::uint32_t p) const {
    const auto s = singular(l);
    return std::binary_search(s.begin(), s.end(), p);
  }
  std::vector<std::uint32_t> regular(std::size_t l) const {
    std::vector<std::uint32_t> r;
    for (std::uint32_t p = 0; p < num_patches; ++p)
      if (!is_singular(l, p)) r.push_back(p);
    return r;
  }
  std::size_t num_pairs() const { return patches.size(); }
};

inline SingularityMap classify_targets(const SurfaceDiscretization& disc, const SingularQuadratureConfig& cfg) {
  cfg.validate(disc.nc());
  const std::size_t N = disc.size(), P = disc.num_patches(), nc2 = disc.nc() * disc.nc();
  SingularityMap m;
  m.delta_factor = cfg.delta_factor;
  m.num_patches = P;
  m.delta.resize(P);
  for (std::size_t p = 0; p < P; ++p) m.delta[p] = cfg.delta_factor * disc.spacing(p);

  std::vector<std::vector<std::pair<std::uint32_t, ParamPoint>>> per(N);
#pragma omp parallel for schedule(dynamic, 64)
  for (std::size_t l = 0; l < N; ++l) {
    const Vec3 x = disc.points()[l];
    const std::size_t own = l / nc2;
    for (std::size_t p = 0; p < P; ++p) {
      if (p == own) {
        std::size_t pp, i, j;
        disc.decompose(l, pp, i, j);
        per[l].push_back({static_cast<std::uint32_t>(p), {disc.nodes()[i], disc.nodes()[j]}});
        continue;
      }
      const double dl = m.delta[p];
      if (norm(x - disc.bounding_center(p)) - disc.bounding_radius(p) > dl) continue;
      double node_min = 1e300;
      for (std::size_t k = 0; k < nc2; ++k) node_min = std::min(node_min, norm(disc.points()[p * nc2 + k] - x));
      // Every patch point lies within one spacing of some node.
      if (node_min - disc.spacing(p) > dl) continue;
      const ParamPoint c = closest_point(x, disc, p);
      const double dist = std::min(node_min, norm(disc.patch(p).position(c.u, c.v) - x));
      if (dist <= dl) per[l].push_back({static_cast<std::uint32_t>(p), c});
    }
  }
  m.offset.assign(1, 0);
  for (std::size_t l = 0; l < N; ++l) {
    for (const auto& [p, c] : per[l]) {
      m.patches.push_back(p);
      m.closest.push_back(c);
    }
    m.offset.push_back(m.patches.size());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Graded change of variables

inline double graded_v(double tau, int d) {
  const double a = (tau - pi) / pi;
  return (1.0 / d - 0.5) * (-a * a * a) + a / d + 0.5;
}

inline double graded_v_prime(double tau, int d) {
  const double a = (tau - pi) / pi;
  return ((1.0 / d - 0.5) * (-3.0 * a * a) + 1.0 / d) / pi;
}

/// w: [0,2π] -> [0,2π] with derivatives vanishing to order d-1 at both ends.
inline double graded_map(double tau, int d) {
  if (!(tau >= 0 && tau <= two_pi)) throw std::domain_error("graded_map: tau outside [0, 2pi]");
  if (d < 2) throw std::domain_error("graded_map: d must be >= 2");
  const double A = std::pow(graded_v(tau, d), d), B = std::pow(graded_v(two_pi - tau, d), d);
  return two_pi * A / (A + B);
}

inline double graded_map_derivative(double tau, int d) {
  if (!(tau >= 0 && tau <= two_pi)) throw std::domain_error("graded_map: tau outside [0, 2pi]");
  const double va = graded_v(tau, d), vb = graded_v(two_pi - tau, d);
  const double A = std::pow(va, d), B = std::pow(vb, d);
  const double dA = d * std::pow(va, d - 1) * graded_v_prime(tau, d);
  const double dB = -d * std::pow(vb, d - 1) * graded_v_prime(two_pi - tau, d);
  return two_pi * (dA * B - A * dB) / ((A + B) * (A + B));
}

struct ClusteredRule {
  std::vector<double> x, dx;  // ξ_α(t_k), dξ_α/dτ(t_k)
};

/// Nodes on [-1,1] accumulating at α (or at the endpoint α = ±1).
inline ClusteredRule clustered_nodes(double alpha, std::span<const double> t, int d) {
  ClusteredRule r{std::vector<double>(t.size()), std::vector<double>(t.size())};
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double tau = t[k];
    if (alpha == 1.0) {
      const double z = pi * std::abs(0.5 * (tau - 1));
      r.x[k] = 1.0 - (2.0 / pi) * graded_map(z, d);
      r.dx[k] = graded_map_derivative(z, d);
    } else if (alpha == -1.0) {
      const double z = pi * std::abs(0.5 * (tau + 1));
      r.x[k] = -1.0 + (2.0 / pi) * graded_map(z, d);
      r.dx[k] = graded_map_derivative(z, d);
    } else {
      const double s = tau > 0 ? 1.0 : (tau < 0 ? -1.0 : 0.0);
      const double z = pi * std::abs(tau);
      r.x[k] = alpha + (s - alpha) / pi * graded_map(z, d);
      r.dx[k] = (1.0 - alpha * s) * graded_map_derivative(z, d);
    }
    r.x[k] = std::clamp(r.x[k], -1.0, 1.0);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Kernels

/// ∂G(x,y)/∂n_x.
inline cplx green_dn(cplx kappa, const Vec3& x, const Vec3& y, const Vec3& nx) {
  const Vec3 d = x - y;
  const double r = norm(d);
  return green(kappa, r) * (I * kappa - 1.0 / r) * (dot(nx, d) / r);
}

// ---------------------------------------------------------------------------
// Singular moments

enum NearKernel { near_s_e = 0, near_s_i = 1, near_d_e = 2, near_d_i = 3 };

/// Precomputed per-size data for the clustered Fejér rule.
struct NearRule {
  std::size_t nc = 0, nbeta = 0;
  int d = 4;
  std::vector<double> t, w;
  std::shared_ptr<const ChebOps> ops;

  NearRule() = default;
  NearRule(std::size_t nc_, const SingularQuadratureConfig& cfg)
      : nc(nc_), nbeta(cfg.resolved_n_beta(nc_)), d(cfg.d), ops(std::make_shared<ChebOps>(nc_)) {
    t = cheb_nodes(nbeta).nodes;
    w = fejer_weights(nbeta).weights;
  }
};

namespace detail {

struct PairWork {
  std::vector<double> bu, bv;  // [node][basis]
  std::vector<cplx> K, tmp;
};

inline void basis_on(const NearRule& rule, const ClusteredRule& cr, bool lagrange, std::vector<double>& out) {
  const std::size_t nc = rule.nc, nb = rule.nbeta;
  out.assign(nb * nc, 0.0);
  std::vector<double> T(nc);
  for (std::size_t i = 0; i < nb; ++i) {
    cheb_T(cr.x[i], T);
    const double q = cr.dx[i] * rule.w[i];
    if (!lagrange) {
      for (std::size_t m = 0; m < nc; ++m) out[i * nc + m] = T[m] * q;
    } else {
      for (std::size_t a = 0; a < nc; ++a) {
        double s = 0;
        for (std::size_t m = 0; m < nc; ++m) s += rule.ops->fwd[m * nc + a] * T[m];
        out[i * nc + a] = s * q;
      }
    }
  }
}

}  // namespace detail

/// The four integrals ∫ K(x, η(u,v)) B_a(u) B_b(v) J(u,v) du dv over one patch,
/// K ∈ {G_e, G_i, ∂_{n_x}G_e, ∂_{n_x}G_i}, on the grid clustered at `c`.
/// B is T_m (moments β_{m,n}) or, with lagrange = true, the Lagrange basis of
/// the patch nodes (nodal weights). Output: out[k * nc² + a * nc + b].
inline void pair_integrals(const Patch& patch, const Vec3& x, const Vec3& nx, ParamPoint c, const NearRule& rule,
                           cplx ke, cplx ki, bool lagrange, cplx* out, detail::PairWork& wk) {
  const std::size_t nc = rule.nc, nb = rule.nbeta, nc2 = nc * nc;
  const ClusteredRule ru = clustered_nodes(c.u, rule.t, rule.d);
  const ClusteredRule rv = clustered_nodes(c.v, rule.t, rule.d);
  detail::basis_on(rule, ru, lagrange, wk.bu);
  detail::basis_on(rule, rv, lagrange, wk.bv);
  wk.K.resize(4 * nb * nb);
  for (std::size_t i = 0; i < nb; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      const PatchFrame f = patch.frame(ru.x[i], rv.x[j]);
      const double J = norm(cross(f.ru, f.rv));
      const Vec3 dv = x - f.pos;
      const double r = norm(dv);
      const double cn = dot(nx, dv) / r;
      const cplx ge = std::exp(I * ke * r) / (four_pi * r), gi = std::exp(I * ki * r) / (four_pi * r);
      const std::size_t q = i * nb + j;
      wk.K[q] = ge * J;
      wk.K[nb * nb + q] = gi * J;
      wk.K[2 * nb * nb + q] = ge * (I * ke - 1.0 / r) * cn * J;
      wk.K[3 * nb * nb + q] = gi * (I * ki - 1.0 / r) * cn * J;
    }
  wk.tmp.resize(nb * nc);
  for (int k = 0; k < 4; ++k) {
    const cplx* K = wk.K.data() + k * nb * nb;
    for (std::size_t i = 0; i < nb; ++i)
      for (std::size_t b = 0; b < nc; ++b) {
        cplx s{};
        for (std::size_t j = 0; j < nb; ++j) s += K[i * nb + j] * wk.bv[j * nc + b];
        wk.tmp[i * nc + b] = s;
      }
    cplx* o = out + k * nc2;
    for (std::size_t a = 0; a < nc; ++a)
      for (std::size_t b = 0; b < nc; ++b) {
        cplx s{};
        for (std::size_t i = 0; i < nb; ++i) s += wk.bu[i * nc + a] * wk.tmp[i * nc + b];
        o[a * nc + b] = s;
      }
  }
}

/// Moments β_{m,n} of one (target point, patch) pair for the four kernels.
inline std::array<Grid2D<cplx>, 4> pair_moments(const SurfaceDiscretization& disc, const Vec3& x, const Vec3& nx,
                                                std::size_t p, ParamPoint c, const SingularQuadratureConfig& cfg,
                                                cplx ke, cplx ki) {
  const NearRule rule(disc.nc(), cfg);
  const std::size_t nc2 = disc.nc() * disc.nc();
  std::vector<cplx> buf(4 * nc2);
  detail::PairWork wk;
  pair_integrals(disc.patch(p), x, nx, c, rule, ke, ki, false, buf.data(), wk);
  std::array<Grid2D<cplx>, 4> out;
  for (int k = 0; k < 4; ++k)
    out[k] = Grid2D<cplx>(disc.nc(), disc.nc(), std::vector<cplx>(buf.begin() + k * nc2, buf.begin() + (k + 1) * nc2));
  return out;
}

/// Σ a_{m,n} β_{m,n}.
inline cplx apply_singular(const Grid2D<cplx>& coeffs, const Grid2D<cplx>& moments) {
  if (coeffs.rows() != moments.rows() || coeffs.cols() != moments.cols())
    throw std::invalid_argument("apply_singular: dimension mismatch");
  cplx s{};
  for (std::size_t k = 0; k < coeffs.flat().size(); ++k) s += coeffs.flat()[k] * moments.flat()[k];
  return s;
}

/// Sparse (target, source) entries removed from the near sum because the
/// accelerated far sum already counts them.
struct LocalCorrections {
  std::vector<std::size_t> offset;  // per target
  std::vector<std::uint32_t> source;
  std::vector<cplx> value;  // 4 per entry, NearKernel order, times the source weight
  std::size_t size() const { return source.size(); }
};

/// Singular-pair integrals stored as nodal weights (or recomputed on the fly
/// when `store` is false), applied to a DensityBlock.
class SingularMomentTable {
 public:
  SingularMomentTable() = default;
  SingularMomentTable(const SurfaceDiscretization& disc, const SingularityMap& map, const SingularQuadratureConfig& cfg,
                      cplx ke, cplx ki, bool store = true)
      : disc_(&disc), map_(&map), rule_(disc.nc(), cfg), ke_(ke), ki_(ki), stored_(store) {
    cfg.validate(disc.nc());
    if (!store) return;
    const std::size_t nc2 = disc.nc() * disc.nc();
    weights_.resize(map.num_pairs() * 4 * nc2);
    const std::size_t N = map.num_targets();
#pragma omp parallel
    {
      detail::PairWork wk;
#pragma omp for schedule(dynamic, 16)
      for (std::size_t l = 0; l < N; ++l)
        for (std::size_t k = map.offset[l]; k < map.offset[l + 1]; ++k)
          pair_integrals(disc.patch(map.patches[k]), disc.points()[l], disc.normals()[l], map.closest[k], rule_, ke_,
                         ki_, true, weights_.data() + k * 4 * nc2, wk);
    }
  }

  bool stored() const { return stored_; }
  std::size_t memory_bytes() const { return weights_.size() * sizeof(cplx); }
  const SingularityMap& map() const { return *map_; }
  void set_corrections(LocalCorrections c) { corr_ = std::move(c); }
  const LocalCorrections& corrections() const { return corr_; }
  void enable_corrections(bool on) { corr_on_ = on; }
  bool corrections_enabled() const { return corr_on_; }

  /// Nodal weights of pair k (4 x N_C²), stored mode only.
  std::span<const cplx> pair_weights(std::size_t k) const {
    const std::size_t n = 4 * rule_.nc * rule_.nc;
    return {weights_.data() + k * n, n};
  }

  /// out += near contributions (singular patches, minus local corrections).
  void apply(const DensityBlock& dens, LayerValues& out) const { apply(dens, out, corr_on_); }

  void apply(const DensityBlock& dens, LayerValues& out, bool use_corrections) const {
    const auto& disc = *disc_;
    const auto& map = *map_;
    const std::size_t nc2 = disc.nc() * disc.nc(), N = map.num_targets();
#pragma omp parallel
    {
      detail::PairWork wk;
      std::vector<cplx> buf(stored_ ? 0 : 4 * nc2);
#pragma omp for schedule(dynamic, 16)
      for (std::size_t l = 0; l < N; ++l) {
        cplx acc[28] = {};
        for (std::size_t k = map.offset[l]; k < map.offset[l + 1]; ++k) {
          const cplx* W;
          if (stored_) {
            W = weights_.data() + k * 4 * nc2;
          } else {
            pair_integrals(disc.patch(map.patches[k]), disc.points()[l], disc.normals()[l], map.closest[k], rule_, ke_,
                           ki_, true, buf.data(), wk);
            W = buf.data();
          }
          const std::size_t base = map.patches[k] * nc2;
          for (std::size_t q = 0; q < nc2; ++q) {
            const cplx* phi = dens.point(base + q);
            const cplx w[4] = {W[q], W[nc2 + q], W[2 * nc2 + q], W[3 * nc2 + q]};
            for (int c = 0; c < 8; ++c) {
              acc[c] += w[0] * phi[c];
              acc[8 + c] += w[1] * phi[c];
            }
            for (int c = 0; c < 6; ++c) {
              acc[16 + c] += w[2] * phi[c];
              acc[22 + c] += w[3] * phi[c];
            }
          }
        }
        if (use_corrections && !corr_.offset.empty())
          for (std::size_t e = corr_.offset[l]; e < corr_.offset[l + 1]; ++e) {
            const cplx* phi = dens.point(corr_.source[e]);
            const cplx* w = corr_.value.data() + 4 * e;
            for (int c = 0; c < 8; ++c) {
              acc[c] -= w[0] * phi[c];
              acc[8 + c] -= w[1] * phi[c];
            }
            for (int c = 0; c < 6; ++c) {
              acc[16 + c] -= w[2] * phi[c];
              acc[22 + c] -= w[3] * phi[c];
            }
          }
        for (int c = 0; c < 16; ++c) out.S[l * 16 + c] += acc[c];
        for (int c = 0; c < 12; ++c) out.D[l * 12 + c] += acc[16 + c];
      }
    }
  }

 private:
  const SurfaceDiscretization* disc_ = nullptr;
  const SingularityMap* map_ = nullptr;
  NearRule rule_;
  cplx ke_, ki_;
  bool stored_ = true;
  std::vector<cplx> weights_;
  LocalCorrections corr_;
  bool corr_on_ = true;
};

inline SingularMomentTable compute_moments(const SurfaceDiscretization& disc, const SingularityMap& map,
                                           const SingularQuadratureConfig& cfg, cplx ke, cplx ki,
                                           bool store = true) {
  return SingularMomentTable(disc, map, cfg, ke, ki, store);
}

/// For each target and each node of its singular patches lying outside the
/// finest-level neighbor set, the kernel values the accelerated sum adds
/// (the normal derivative in the same forward-difference form).
inline LocalCorrections precompute_local_corrections(const SurfaceDiscretization& disc, const BoxTree& tree,
                                                     const SingularityMap& map, cplx ke, cplx ki, double h) {
  const std::size_t N = disc.size(), nc2 = disc.nc() * disc.nc();
  std::vector<std::vector<std::uint32_t>> src(N);
#pragma omp parallel for schedule(dynamic, 64)
  for (std::size_t l = 0; l < N; ++l)
    for (std::uint32_t p : map.singular(l))
      for (std::size_t q = 0; q < nc2; ++q) {
        const std::size_t m = p * nc2 + q;
        if (m != l && !tree.leaf_neighbors(l, m)) src[l].push_back(static_cast<std::uint32_t>(m));
      }
  LocalCorrections c;
  c.offset.assign(1, 0);
  for (std::size_t l = 0; l < N; ++l) {
    c.source.insert(c.source.end(), src[l].begin(), src[l].end());
    c.offset.push_back(c.source.size());
  }
  c.value.resize(4 * c.source.size());
#pragma omp parallel for schedule(dynamic, 64)
  for (std::size_t l = 0; l < N; ++l) {
    const Vec3 x = disc.points()[l], xt = x + h * disc.normals()[l];
    for (std::size_t e = c.offset[l]; e < c.offset[l + 1]; ++e) {
      const std::size_t m = c.source[e];
      const Vec3 y = disc.points()[m];
      const double w = disc.weights()[m];
      const double r = norm(x - y), rt = norm(xt - y);
      const cplx ge = green(ke, r), gi = green(ki, r);
      c.value[4 * e + 0] = ge * w;
      c.value[4 * e + 1] = gi * w;
      c.value[4 * e + 2] = (green(ke, rt) - ge) / h * w;
      c.value[4 * e + 3] = (green(ki, rt) - gi) / h * w;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Direct (O(N²)) summation

/// Σ_m G(x_t, y_m) a_m over all sources with y_m != x_t.
inline CVec direct_sum(std::span<const Vec3> targets, std::span<const Vec3> sources, std::span<const cplx> a,
                       cplx kappa) {
  CVec out(targets.size());
#pragma omp parallel for schedule(static)
  for (std::size_t t = 0; t < targets.size(); ++t) {
    cplx s{};
    for (std::size_t m = 0; m < sources.size(); ++m) {
      const double r = norm(targets[t] - sources[m]);
      if (r > 0) s += green(kappa, r) * a[m];
    }
    out[t] = s;
  }
  return out;
}

/// Fejér sum over the regular patches of every target, all 8 channels and
/// both kernels, with analytic normal derivatives. Without a map every
/// source other than the target itself is summed. With a target mask only
/// the flagged targets are computed (the rest stay zero).
inline LayerValues dense_regular_sum(const SurfaceDiscretization& disc, const DensityBlock& dens,
                                     const SingularityMap* map, cplx ke, cplx ki,
                                     const std::vector<char>* targets = nullptr) {
  const std::size_t N = disc.size(), nc2 = disc.nc() * disc.nc(), P = disc.num_patches();
  LayerValues out(N);
  const auto& X = disc.points();
  const auto& W = disc.weights();
#pragma omp parallel
  {
    std::vector<char> skip(P, 0);
#pragma omp for schedule(dynamic, 16)
    for (std::size_t l = 0; l < N; ++l) {
      if (targets && !(*targets)[l]) continue;
      if (map)
        for (std::uint32_t p : map->singular(l)) skip[p] = 1;
      const Vec3 x = X[l], n = disc.normals()[l];
      cplx acc[28] = {};
      for (std::size_t p = 0; p < P; ++p) {
        if (skip[p]) continue;
        for (std::size_t m = p * nc2; m < (p + 1) * nc2; ++m) {
          if (m == l) continue;
          const Vec3 d = x - X[m];
          const double r = norm(d);
          const double cn = dot(n, d) / r;
          const cplx ge = std::exp(I * ke * r) * (W[m] / (four_pi * r));
          const cplx gi = std::exp(I * ki * r) * (W[m] / (four_pi * r));
          const cplx de = ge * (I * ke - 1.0 / r) * cn, di = gi * (I * ki - 1.0 / r) * cn;
          const cplx* phi = dens.point(m);
          for (int c = 0; c < 8; ++c) {
            acc[c] += ge * phi[c];
            acc[8 + c] += gi * phi[c];
          }
          for (int c = 0; c < 6; ++c) {
            acc[16 + c] += de * phi[c];
            acc[22 + c] += di * phi[c];
          }
        }
      }
      for (int c = 0; c < 16; ++c) out.S[l * 16 + c] = acc[c];
      for (int c = 0; c < 12; ++c) out.D[l * 12 + c] = acc[16 + c];
      if (map)
        for (std::uint32_t p : map->singular(l)) skip[p] = 0;
    }
  }
  return out;
}

}  // namespace hbie
