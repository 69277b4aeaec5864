#pragma once

// Maxwell layer operators and the N-Müller forward map, composed from the
// scalar single layer S and its normal derivative D.

#include <chrono>
#include <complex>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hbie/common.hpp"
#include "hbie/geometry.hpp"
#include "hbie/ifgf.hpp"
#include "hbie/quadrature.hpp"

namespace hbie {

struct MaterialPair {
  cplx eps_e = 1.0, mu_e = 1.0, eps_i = 1.0, mu_i = 1.0;
  double omega = 1.0;
  cplx kappa_e = 1.0, kappa_i = 1.0;

  static MaterialPair from_omega(cplx eps_e, cplx mu_e, cplx eps_i, cplx mu_i, double omega) {
    MaterialPair m{eps_e, mu_e, eps_i, mu_i, omega, omega * std::sqrt(eps_e * mu_e), omega * std::sqrt(eps_i * mu_i)};
    m.validate();
    return m;
  }

  /// ω defaults to κ_e / √(ε_e μ_e); κ_i is then checked against ω√(ε_i μ_i).
  static MaterialPair from_kappa(cplx eps_e, cplx mu_e, cplx eps_i, cplx mu_i, cplx kappa_e, cplx kappa_i) {
    const cplx w = kappa_e / std::sqrt(eps_e * mu_e);
    if (std::abs(w.imag()) > 1e-12 * std::abs(w))
      throw std::invalid_argument("materials: kappa_e / sqrt(eps_e mu_e) is not a real frequency");
    MaterialPair m{eps_e, mu_e, eps_i, mu_i, w.real(), kappa_e, kappa_i};
    m.validate();
    return m;
  }

  void validate() const {
    if (!(omega > 0) || !std::isfinite(omega)) throw std::invalid_argument("materials: omega must be positive");
    auto check = [&](cplx k, cplx eps, cplx mu, const char* name) {
      const cplx expect = omega * std::sqrt(eps * mu);
      if (std::abs(k - expect) > 1e-12 * std::max(1.0, std::abs(expect)))
        throw std::invalid_argument(std::string("materials: ") + name + " inconsistent with omega, eps and mu");
    };
    check(kappa_e, eps_e, mu_e, "kappa_e");
    check(kappa_i, eps_i, mu_i, "kappa_i");
  }

  bool matched() const { return eps_e == eps_i && mu_e == mu_i && kappa_e == kappa_i; }
};

struct EMField {
  CVec3 E, H;
};

struct OperatorConfig {
  double fd_step = 1e-6;
  IfgfMode mode = IfgfMode::vec;
  IfgfConfig ifgf;
  SingularQuadratureConfig quadrature;
  bool local_corrections = true;
  // Singular-pair weights above this size are recomputed on every apply.
  std::size_t near_memory_limit = std::size_t(1536) << 20;

  void validate(std::size_t nc) const {
    if (!(fd_step > 0)) throw std::invalid_argument("operator: finite-difference step must be positive");
    ifgf.validate();
    quadrature.validate(nc);
  }
};

// ---------------------------------------------------------------------------
// Surface calculus on the patch grids

/// ∂_u and ∂_v of a scalar field sampled on every patch grid.
inline void patch_derivatives(const SurfaceDiscretization& disc, std::span<const cplx> f, CVec& fu, CVec& fv) {
  const std::size_t nc = disc.nc(), nc2 = nc * nc, N = disc.size();
  if (f.size() != N) throw std::invalid_argument("patch_derivatives: field size mismatch");
  const auto& Dm = disc.ops().diff;
  fu.assign(N, cplx{});
  fv.assign(N, cplx{});
  for (std::size_t p = 0; p < disc.num_patches(); ++p) {
    const cplx* g = f.data() + p * nc2;
    for (std::size_t i = 0; i < nc; ++i)
      for (std::size_t j = 0; j < nc; ++j) {
        cplx su{}, sv{};
        for (std::size_t k = 0; k < nc; ++k) {
          su += Dm[i * nc + k] * g[k * nc + j];
          sv += Dm[j * nc + k] * g[i * nc + k];
        }
        fu[p * nc2 + i * nc + j] = su;
        fv[p * nc2 + i * nc + j] = sv;
      }
  }
}

/// ∇_Γ f = f_u a^u + f_v a^v with the dual (contravariant) basis.
inline std::vector<CVec3> tangential_gradient(const SurfaceDiscretization& disc, std::span<const cplx> f) {
  CVec fu, fv;
  patch_derivatives(disc, f, fu, fv);
  std::vector<CVec3> g(disc.size());
  for (std::size_t l = 0; l < g.size(); ++l) g[l] = fu[l] * to_cvec(disc.dual_u()[l]) + fv[l] * to_cvec(disc.dual_v()[l]);
  return g;
}

/// div_Γ a = (1/J)[∂_u(J a^u) + ∂_v(J a^v)] for a tangential field a.
inline CVec surface_divergence(const SurfaceDiscretization& disc, std::span<const CVec3> a) {
  const std::size_t N = disc.size();
  if (a.size() != N) throw std::invalid_argument("surface_divergence: field size mismatch");
  CVec cu(N), cv(N);
  for (std::size_t l = 0; l < N; ++l) {
    const cplx an = dot(disc.normals()[l], a[l]);
    if (std::abs(an) > 1e-8 * std::sqrt(norm2(a[l])) + 1e-300)
      throw std::invalid_argument("surface_divergence: density is not tangential at point " + std::to_string(l));
    const double J = disc.jacobians()[l];
    cu[l] = J * dot(disc.dual_u()[l], a[l]);
    cv[l] = J * dot(disc.dual_v()[l], a[l]);
  }
  CVec du, dv, tmp;
  patch_derivatives(disc, cu, du, tmp);
  patch_derivatives(disc, cv, tmp, dv);
  CVec out(N);
  for (std::size_t l = 0; l < N; ++l) out[l] = (du[l] + dv[l]) / disc.jacobians()[l];
  return out;
}

// ---------------------------------------------------------------------------
// Unknown layout: [m·t1, m·t2, j·t1, j·t2], N entries each.

inline std::vector<CVec3> frame_to_cartesian(const SurfaceDiscretization& disc, const cplx* c1, const cplx* c2) {
  std::vector<CVec3> a(disc.size());
  for (std::size_t l = 0; l < a.size(); ++l) a[l] = c1[l] * to_cvec(disc.t1()[l]) + c2[l] * to_cvec(disc.t2()[l]);
  return a;
}

inline void unpack_currents(const SurfaceDiscretization& disc, std::span<const cplx> y, std::vector<CVec3>& m,
                            std::vector<CVec3>& j) {
  const std::size_t N = disc.size();
  if (y.size() != 4 * N) throw std::invalid_argument("forward map: expected a vector of length 4N");
  m = frame_to_cartesian(disc, y.data(), y.data() + N);
  j = frame_to_cartesian(disc, y.data() + 2 * N, y.data() + 3 * N);
}

inline CVec pack_currents(const SurfaceDiscretization& disc, std::span<const CVec3> m, std::span<const CVec3> j) {
  const std::size_t N = disc.size();
  CVec y(4 * N);
  for (std::size_t l = 0; l < N; ++l) {
    y[l] = dot(disc.t1()[l], m[l]);
    y[N + l] = dot(disc.t2()[l], m[l]);
    y[2 * N + l] = dot(disc.t1()[l], j[l]);
    y[3 * N + l] = dot(disc.t2()[l], j[l]);
  }
  return y;
}

/// The 8 density channels for tangential currents m and j.
inline DensityBlock make_density_block(const SurfaceDiscretization& disc, std::span<const CVec3> m,
                                       std::span<const CVec3> j) {
  const std::size_t N = disc.size();
  DensityBlock d(N);
  const CVec dj = surface_divergence(disc, j), dm = surface_divergence(disc, m);
  for (std::size_t l = 0; l < N; ++l) {
    for (int c = 0; c < 3; ++c) {
      d(l, c) = j[l][c];
      d(l, 3 + c) = m[l][c];
    }
    d(l, 6) = dj[l];
    d(l, 7) = dm[l];
  }
  return d;
}

inline DensityBlock make_density_block(const SurfaceDiscretization& disc, std::span<const cplx> y) {
  std::vector<CVec3> m, j;
  unpack_currents(disc, y, m, j);
  return make_density_block(disc, m, j);
}

/// Left side of the N-Müller system from the layer values of the densities:
///   row 1 = ((μe+μi)/2) m + μe K_e m - μi K_i m - (R^Δ + T^Δ) j
///   row 2 = (R^Δ + T^Δ) m + ((εe+εi)/2) j + εe K_e j - εi K_i j
/// with K_s a = n × ∇×S_s[a], R^Δ = (-i/ω)(κe² R_e - κi² R_i),
/// T^Δ = (-i/ω)(T_e - T_i), R_s a = n × S_s[a], T_s a = n × ∇_Γ S_s[div a].
inline CVec muller_assemble(const SurfaceDiscretization& disc, const MaterialPair& mat, std::span<const cplx> y,
                            const LayerValues& V) {
  const std::size_t N = disc.size();
  std::vector<CVec3> m, j;
  unpack_currents(disc, y, m, j);
  // Tangential gradients of all 16 single-layer columns.
  std::vector<std::vector<CVec3>> g(16);
  CVec col(N);
  for (int k = 0; k < 16; ++k) {
    for (std::size_t l = 0; l < N; ++l) col[l] = V.S[l * LayerValues::s_stride + k];
    g[k] = tangential_gradient(disc, col);
  }
  const cplx ke2 = mat.kappa_e * mat.kappa_e, ki2 = mat.kappa_i * mat.kappa_i;
  const cplx mi_w = -I / mat.omega;
  CVec out(4 * N);
  for (std::size_t l = 0; l < N; ++l) {
    const Vec3 n = disc.normals()[l];
    CVec3 K[2][2], R[2][2], T[2][2];  // [kernel][0: j, 1: m]
    for (int k = 0; k < 2; ++k)
      for (int a = 0; a < 2; ++a) {
        CVec3 grad[3], s;
        for (int c = 0; c < 3; ++c) {
          const int ch = 3 * a + c;
          grad[c] = g[8 * k + ch][l] + V.d(l, k, ch) * to_cvec(n);
          s[c] = V.s(l, k, ch);
        }
        const CVec3 curl{grad[2].y - grad[1].z, grad[0].z - grad[2].x, grad[1].x - grad[0].y};
        K[k][a] = cross(to_cvec(n), curl);
        R[k][a] = cross(to_cvec(n), s);
        T[k][a] = cross(to_cvec(n), g[8 * k + 6 + a][l]);
      }
    const CVec3 rt_j = mi_w * ((ke2 * R[0][0] - ki2 * R[1][0]) + (T[0][0] - T[1][0]));
    const CVec3 rt_m = mi_w * ((ke2 * R[0][1] - ki2 * R[1][1]) + (T[0][1] - T[1][1]));
    const CVec3 row1 = (0.5 * (mat.mu_e + mat.mu_i)) * m[l] + mat.mu_e * K[0][1] - mat.mu_i * K[1][1] - rt_j;
    const CVec3 row2 = rt_m + (0.5 * (mat.eps_e + mat.eps_i)) * j[l] + mat.eps_e * K[0][0] - mat.eps_i * K[1][0];
    out[l] = dot(disc.t1()[l], row1);
    out[N + l] = dot(disc.t2()[l], row1);
    out[2 * N + l] = dot(disc.t1()[l], row2);
    out[3 * N + l] = dot(disc.t2()[l], row2);
  }
  return out;
}

/// Right side (ω⁻¹ n×E^inc, ω⁻¹ n×H^inc) in the tangent frame.
inline CVec muller_rhs(const std::function<EMField(const Vec3&)>& incident, const SurfaceDiscretization& disc,
                       const MaterialPair& mat) {
  const std::size_t N = disc.size();
  std::vector<CVec3> e(N), h(N);
  for (std::size_t l = 0; l < N; ++l) {
    const EMField f = incident(disc.points()[l]);
    const CVec3 n = to_cvec(disc.normals()[l]);
    e[l] = (1.0 / mat.omega) * cross(n, f.E);
    h[l] = (1.0 / mat.omega) * cross(n, f.H);
  }
  return pack_currents(disc, e, h);
}

struct ApplyTimings {
  double ifgf = 0, near = 0, assemble = 0;
};

/// Accelerated forward map: singular patches through the stored (or
/// recomputed) pair weights, everything else through the IFGF summation with
/// local corrections for singular-patch sources it also covered.
class MullerOperator {
 public:
  /// The discretization must outlive the operator.
  MullerOperator(const SurfaceDiscretization& disc, const MaterialPair& mat, const OperatorConfig& cfg = {})
      : disc_(&disc), mat_(mat), cfg_(cfg) {
    mat.validate();
    cfg_.ifgf.fd_step = cfg_.fd_step;
    cfg_.ifgf.mode = cfg_.mode;
    cfg_.validate(disc.nc());
    const auto t0 = std::chrono::steady_clock::now();
    map_ = std::make_unique<SingularityMap>(classify_targets(disc, cfg_.quadrature));
    const std::size_t nc2 = disc.nc() * disc.nc();
    const std::size_t bytes = map_->num_pairs() * 4 * nc2 * sizeof(cplx);
    near_ = std::make_unique<SingularMomentTable>(disc, *map_, cfg_.quadrature, mat.kappa_e, mat.kappa_i,
                                                  bytes <= cfg_.near_memory_limit);
    const auto t1 = std::chrono::steady_clock::now();
    ifgf_ = std::make_unique<IfgfSummation>(disc.points(), disc.normals(), disc.weights(), mat.kappa_e, mat.kappa_i,
                                            cfg_.ifgf);
    ifgf_->set_exclusion(map_.get(), nc2);
    near_->set_corrections(
        precompute_local_corrections(disc, ifgf_->tree(), *map_, mat.kappa_e, mat.kappa_i, cfg_.fd_step));
    near_->enable_corrections(cfg_.local_corrections);
    const auto t2 = std::chrono::steady_clock::now();
    setup_near_ = std::chrono::duration<double>(t1 - t0).count();
    setup_ifgf_ = std::chrono::duration<double>(t2 - t1).count();
  }

  std::size_t size() const { return 4 * disc_->size(); }
  const SurfaceDiscretization& disc() const { return *disc_; }
  const MaterialPair& materials() const { return mat_; }
  const OperatorConfig& config() const { return cfg_; }
  const SingularityMap& singularity_map() const { return *map_; }
  const SingularMomentTable& near_table() const { return *near_; }
  const IfgfSummation& ifgf() const { return *ifgf_; }
  double setup_near_seconds() const { return setup_near_; }
  double setup_ifgf_seconds() const { return setup_ifgf_; }

  /// Disabling the local corrections leaves the doubly counted
  /// singular-patch sources in place (diagnostic only).
  void set_local_corrections(bool on) {
    cfg_.local_corrections = on;
    near_->enable_corrections(on);
  }

  /// S and ∂_n S of every channel and both kernels.
  LayerValues layer_values(const DensityBlock& dens, ApplyTimings* t = nullptr) const {
    const auto t0 = std::chrono::steady_clock::now();
    LayerValues V = ifgf_->apply(dens, cfg_.mode);
    const auto t1 = std::chrono::steady_clock::now();
    near_->apply(dens, V);
    const auto t2 = std::chrono::steady_clock::now();
    if (t) {
      t->ifgf += std::chrono::duration<double>(t1 - t0).count();
      t->near += std::chrono::duration<double>(t2 - t1).count();
    }
    return V;
  }

  CVec apply(std::span<const cplx> y, ApplyTimings* t = nullptr) const {
    const DensityBlock dens = make_density_block(*disc_, y);
    const LayerValues V = layer_values(dens, t);
    const auto t0 = std::chrono::steady_clock::now();
    CVec out = muller_assemble(*disc_, mat_, y, V);
    if (t) t->assemble += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }

 private:
  const SurfaceDiscretization* disc_;
  MaterialPair mat_;
  OperatorConfig cfg_;
  std::unique_ptr<SingularityMap> map_;
  std::unique_ptr<SingularMomentTable> near_;
  std::unique_ptr<IfgfSummation> ifgf_;
  double setup_near_ = 0, setup_ifgf_ = 0;
};

inline CVec muller_forward_map(const MullerOperator& op, std::span<const cplx> y) { return op.apply(y); }

}  // namespace hbie
