#pragma once

// Ground truth: incident fields, the Mie series for a dielectric sphere, the
// dense (unaccelerated) forward map and off-surface field evaluation.

#include <cmath>
#include <complex>
#include <span>
#include <stdexcept>
#include <vector>

#include "hbie/common.hpp"
#include "hbie/geometry.hpp"
#include "hbie/operators.hpp"
#include "hbie/quadrature.hpp"

namespace hbie {

// ---------------------------------------------------------------------------
// Incident fields

struct IncidentField {
  enum class Kind { none, plane_wave, electric_dipole };
  Kind kind = Kind::none;
  Vec3 direction{0, 0, -1}, polarization{1, 0, 0};
  Vec3 position{};
  CVec3 moment{};
  cplx kappa = 1.0, eps = 1.0, mu = 1.0;
  double omega = 1.0;

  EMField operator()(const Vec3& x) const;
};

inline IncidentField plane_wave(const MaterialPair& mat, Vec3 direction = {0, 0, -1}, Vec3 polarization = {1, 0, 0}) {
  if (std::abs(norm(direction) - 1.0) > 1e-12) throw std::invalid_argument("plane_wave: direction must be a unit vector");
  if (std::abs(dot(direction, polarization)) > 1e-12 * norm(polarization))
    throw std::invalid_argument("plane_wave: polarization must be orthogonal to the direction");
  IncidentField f;
  f.kind = IncidentField::Kind::plane_wave;
  f.direction = direction;
  f.polarization = polarization;
  f.kappa = mat.kappa_e;
  f.eps = mat.eps_e;
  f.mu = mat.mu_e;
  f.omega = mat.omega;
  return f;
}

/// Point dipole p at `position` radiating in the exterior medium of `mat`.
inline IncidentField electric_dipole(const Vec3& position, const CVec3& moment, const MaterialPair& mat) {
  IncidentField f;
  f.kind = IncidentField::Kind::electric_dipole;
  f.position = position;
  f.moment = moment;
  f.kappa = mat.kappa_e;
  f.eps = mat.eps_e;
  f.mu = mat.mu_e;
  f.omega = mat.omega;
  return f;
}

inline EMField IncidentField::operator()(const Vec3& x) const {
  switch (kind) {
    case Kind::none:
      return {};
    case Kind::plane_wave: {
      const cplx ph = std::exp(I * kappa * dot(direction, x));
      const CVec3 E = ph * to_cvec(polarization);
      return {E, (kappa / (omega * mu)) * cross(to_cvec(direction), E)};
    }
    case Kind::electric_dipole: {
      // E = (1/ε)[κ² G p + ∇(∇G·p)], H = -iω ∇G × p.
      const Vec3 d = x - position;
      const double r = norm(d);
      if (!(r > 0)) throw std::domain_error("electric_dipole: evaluation at the source point");
      const Vec3 rh = d * (1.0 / r);
      const cplx G = green(kappa, r);
      const cplx G1 = G * (I * kappa - 1.0 / r);
      const cplx G2 = G * ((I * kappa - 1.0 / r) * (I * kappa - 1.0 / r) + 1.0 / (r * r));
      const cplx rp = dot(rh, moment);
      const CVec3 E = (1.0 / eps) * (kappa * kappa * G * moment + ((G2 - G1 / r) * rp) * to_cvec(rh) + (G1 / r) * moment);
      const CVec3 H = (-I * omega * G1) * cross(to_cvec(rh), moment);
      return {E, H};
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Spherical Bessel functions of complex argument

/// j_0..j_L by downward (Miller) recurrence, normalized against whichever of
/// the closed forms j_0, j_1 is larger.
inline CVec sph_bessel_j(int L, cplx z) {
  CVec j(std::max(L, 1) + 1, cplx{});
  if (std::abs(z) < 1e-300) {
    j[0] = 1.0;
    j.resize(L + 1);
    return j;
  }
  const int M = std::max(L, 1) + 20 + static_cast<int>(std::abs(z));
  cplx f_next = 0.0, f = 1e-30;
  for (int n = M; n >= 1; --n) {
    const cplx f_prev = static_cast<double>(2 * n + 1) / z * f - f_next;
    f_next = f;
    f = f_prev;
    if (n - 1 <= std::max(L, 1)) j[n - 1] = f;
    if (n <= std::max(L, 1)) j[n] = f_next;
    // Rescale early: limited-range complex division squares magnitudes.
    if (std::abs(f) > 1e60) {
      f *= 1e-60;
      f_next *= 1e-60;
      for (auto& v : j) v *= 1e-60;
    }
  }
  const cplx j0 = std::sin(z) / z, j1 = std::sin(z) / (z * z) - std::cos(z) / z;
  const cplx scale = std::abs(j0) >= std::abs(j1) ? j0 / j[0] : j1 / j[1];
  for (auto& v : j) v *= scale;
  j.resize(L + 1);
  return j;
}

inline CVec sph_bessel_y(int L, cplx z) {
  CVec y(L + 1);
  y[0] = -std::cos(z) / z;
  if (L >= 1) y[1] = -std::cos(z) / (z * z) - std::sin(z) / z;
  for (int n = 1; n < L; ++n) y[n + 1] = static_cast<double>(2 * n + 1) / z * y[n] - y[n - 1];
  return y;
}

inline CVec sph_hankel1(int L, cplx z) {
  const CVec j = sph_bessel_j(L, z), y = sph_bessel_y(L, z);
  CVec h(L + 1);
  for (int n = 0; n <= L; ++n) h[n] = j[n] + I * y[n];
  return h;
}

// ---------------------------------------------------------------------------
// Mie series for a sphere centered at the origin, plane wave e^{-iκ_e z} x̂

class MieSolution {
 public:
  MieSolution(double radius, const MaterialPair& mat, int order = 0) : a_(radius), mat_(mat) {
    if (!(radius > 0)) throw std::invalid_argument("mie: radius must be positive");
    mat.validate();
    const double x = std::abs(mat.kappa_e) * radius;
    L_ = order > 0 ? order : static_cast<int>(std::ceil(x + 8.0 * std::cbrt(x) + 10.0));
    const cplx k = mat.kappa_e, k1 = mat.kappa_i, mu = mat.mu_e, mu1 = mat.mu_i;
    const cplx m = k1 / k, xe = k * radius, xi = k1 * radius;
    const CVec jx = sph_bessel_j(L_, xe), hx = sph_hankel1(L_, xe), jm = sph_bessel_j(L_, xi);
    an_.assign(L_ + 1, 0.0);
    bn_ = cn_ = dn_ = an_;
    for (int n = 1; n <= L_; ++n) {
      const cplx djx = xe * jx[n - 1] - static_cast<double>(n) * jx[n];  // [x j_n(x)]'
      const cplx dhx = xe * hx[n - 1] - static_cast<double>(n) * hx[n];
      const cplx djm = xi * jm[n - 1] - static_cast<double>(n) * jm[n];  // [mx j_n(mx)]'
      an_[n] = (mu * m * m * jm[n] * djx - mu1 * jx[n] * djm) / (mu * m * m * jm[n] * dhx - mu1 * hx[n] * djm);
      bn_[n] = (mu1 * jm[n] * djx - mu * jx[n] * djm) / (mu1 * jm[n] * dhx - mu * hx[n] * djm);
      cn_[n] = (mu1 * jx[n] * dhx - mu1 * hx[n] * djx) / (mu1 * jm[n] * dhx - mu * hx[n] * djm);
      dn_[n] = (mu1 * m * jx[n] * dhx - mu1 * m * hx[n] * djx) / (mu * m * m * jm[n] * dhx - mu1 * hx[n] * djm);
    }
  }

  int order() const { return L_; }
  double radius() const { return a_; }
  const MaterialPair& materials() const { return mat_; }

  /// Total field inside the sphere (|x| ≤ radius).
  EMField interior(const Vec3& x) const {
    if (norm(x) > a_ * (1 + 1e-12)) throw std::domain_error("mie: interior field requested outside the sphere");
    return eval(x, false);
  }

  /// Scattered field outside the sphere (|x| ≥ radius).
  EMField scattered(const Vec3& x) const {
    if (norm(x) < a_ * (1 - 1e-12)) throw std::domain_error("mie: scattered field requested inside the sphere");
    return eval(x, true);
  }

  /// Total field anywhere: interior inside, incident plus scattered outside.
  EMField total(const Vec3& x) const {
    if (norm(x) < a_) return eval(x, false);
    EMField s = eval(x, true);
    const EMField inc = plane_wave(mat_)(x);
    return {s.E + inc.E, s.H + inc.H};
  }

 private:
  // Vector spherical harmonic expansions in the frame rotated by π about x, where the
  // incident wave travels along +z.
  EMField eval(const Vec3& x, bool outside) const {
    Vec3 xr{x.x, -x.y, -x.z};
    double r = norm(xr);
    if (r < 1e-12) {
      xr = {0, 0, 1e-12};
      r = 1e-12;
    }
    const double ct = std::clamp(xr.z / r, -1.0, 1.0), st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    const double phi = std::atan2(xr.y, xr.x), cp = std::cos(phi), sp = std::sin(phi);
    const cplx k = outside ? mat_.kappa_e : mat_.kappa_i;
    const cplx rho = k * r;
    const CVec z = outside ? sph_hankel1(L_, rho) : sph_bessel_j(L_, rho);
    cplx Er{}, Et{}, Ep{}, Hr{}, Ht{}, Hp{};
    double pim1 = 0, pin = 1;  // π_0, π_1
    for (int n = 1; n <= L_; ++n) {
      if (n > 1) {
        const double pn = ((2.0 * n - 1) * ct * pin - n * pim1) / (n - 1.0);
        pim1 = pin;
        pin = pn;
      }
      const double tau = n * ct * pin - (n + 1.0) * pim1;
      const cplx zn = z[n], dz = (rho * z[n - 1] - static_cast<double>(n) * z[n]) / rho;  // [ρ z_n]'/ρ
      const double nn1 = n * (n + 1.0);
      const cplx En = std::pow(I, n) * ((2.0 * n + 1) / nn1);
      // M_o1n, M_e1n, N_o1n, N_e1n as (r, θ, φ) components.
      const cplx Mo[3] = {0.0, cp * pin * zn, -sp * tau * zn};
      const cplx Me[3] = {0.0, -sp * pin * zn, -cp * tau * zn};
      const cplx No[3] = {sp * nn1 * st * pin * zn / rho, sp * tau * dz, cp * pin * dz};
      const cplx Ne[3] = {cp * nn1 * st * pin * zn / rho, cp * tau * dz, -sp * pin * dz};
      cplx e[3], h[3];
      if (outside) {
        for (int c = 0; c < 3; ++c) {
          e[c] = En * (I * an_[n] * Ne[c] - bn_[n] * Mo[c]);
          h[c] = En * (I * bn_[n] * No[c] + an_[n] * Me[c]);
        }
      } else {
        for (int c = 0; c < 3; ++c) {
          e[c] = En * (cn_[n] * Mo[c] - I * dn_[n] * Ne[c]);
          h[c] = -En * (dn_[n] * Me[c] + I * cn_[n] * No[c]);
        }
      }
      Er += e[0];
      Et += e[1];
      Ep += e[2];
      Hr += h[0];
      Ht += h[1];
      Hp += h[2];
    }
    const cplx hs = outside ? mat_.kappa_e / (mat_.omega * mat_.mu_e) : mat_.kappa_i / (mat_.omega * mat_.mu_i);
    auto cart = [&](cplx vr, cplx vt, cplx vp) {
      const CVec3 v{vr * st * cp + vt * ct * cp - vp * sp, vr * st * sp + vt * ct * sp + vp * cp, vr * ct - vt * st};
      return CVec3{v.x, -v.y, -v.z};
    };
    return {cart(Er, Et, Ep), hs * cart(Hr, Ht, Hp)};
  }

  double a_;
  MaterialPair mat_;
  int L_ = 0;
  CVec an_, bn_, cn_, dn_;
};

inline MieSolution mie_solution(double radius, const MaterialPair& mat, int order = 0) {
  return MieSolution(radius, mat, order);
}

/// n quasi-uniform points on a sphere (Fibonacci lattice).
inline std::vector<Vec3> fibonacci_sphere(std::size_t n, double radius, Vec3 center = {}) {
  std::vector<Vec3> p(n);
  const double golden = pi * (3.0 - std::sqrt(5.0));
  for (std::size_t k = 0; k < n; ++k) {
    const double z = 1.0 - (2.0 * k + 1.0) / static_cast<double>(n);
    const double s = std::sqrt(std::max(0.0, 1.0 - z * z)), t = golden * static_cast<double>(k);
    p[k] = center + radius * Vec3{s * std::cos(t), s * std::sin(t), z};
  }
  return p;
}

// ---------------------------------------------------------------------------
// Dense forward map

/// Same operator as MullerOperator::apply with the regular part summed
/// directly (O(N²)) and no local corrections. With a target mask only the
/// rows of flagged points are meaningful; their whole patches must be flagged
/// since the assembly differentiates along patch grids.
inline CVec dense_forward_map(const SurfaceDiscretization& disc, const SingularMomentTable& near,
                              const MaterialPair& mat, std::span<const cplx> y,
                              const std::vector<char>* targets = nullptr) {
  const DensityBlock dens = make_density_block(disc, y);
  LayerValues V = dense_regular_sum(disc, dens, &near.map(), mat.kappa_e, mat.kappa_i, targets);
  near.apply(dens, V, false);
  return muller_assemble(disc, mat, y, V);
}

inline CVec dense_forward_map(const MullerOperator& op, std::span<const cplx> y,
                              const std::vector<char>* targets = nullptr) {
  return dense_forward_map(op.disc(), op.near_table(), op.materials(), y, targets);
}

// ---------------------------------------------------------------------------
// Off-surface fields from solved densities

enum class Region { exterior, interior };

struct FieldEvaluation {
  std::vector<EMField> fields;
  std::vector<char> masked;  // 1: within δ of the surface, fields left zero
};

/// Fields of the layer-potential ansatz
///   E_s = -ωμ_s ∇×A_s[m] - i(κ_s² A_s[j] + ∇S_s[div j])
///   H_s = i(κ_s² A_s[m] + ∇S_s[div m]) - ωε_s ∇×A_s[j]
/// (A_s the vector single layer); exterior totals add the incident field.
/// Points within δ (delta_factor times the local node spacing) of the
/// surface are masked.
inline FieldEvaluation evaluate_fields_masked(const SurfaceDiscretization& disc, const DensityBlock& dens,
                                              std::span<const Vec3> points, Region region, const MaterialPair& mat,
                                              const IncidentField& incident, double delta_factor = 1.0) {
  if (dens.n != disc.size()) throw std::invalid_argument("evaluate_fields: density size does not match the mesh");
  const bool ext = region == Region::exterior;
  const cplx k = ext ? mat.kappa_e : mat.kappa_i, eps = ext ? mat.eps_e : mat.eps_i, mu = ext ? mat.mu_e : mat.mu_i;
  const std::size_t N = disc.size();
  FieldEvaluation out;
  out.fields.resize(points.size());
  out.masked.assign(points.size(), 0);
#pragma omp parallel for schedule(dynamic, 8)
  for (std::size_t t = 0; t < points.size(); ++t) {
    const Vec3 x = points[t];
    bool near = false;
    for (std::size_t p = 0; p < disc.num_patches() && !near; ++p) {
      const double delta = delta_factor * disc.spacing(p);
      if (norm(x - disc.bounding_center(p)) > disc.bounding_radius(p) + delta) continue;
      if (dist_point_patch(x, disc, p) < delta) near = true;
    }
    if (near) {
      out.masked[t] = 1;
      continue;
    }
    CVec3 Aj, Am, curl_j, curl_m, grad_dj, grad_dm;
    for (std::size_t m = 0; m < N; ++m) {
      const Vec3 d = x - disc.points()[m];
      const double r = norm(d);
      const cplx G = green(k, r) * disc.weights()[m];
      const CVec3 gradG = (G * (I * k - 1.0 / r) / r) * to_cvec(d);
      const cplx* phi = dens.point(m);
      const CVec3 jv{phi[0], phi[1], phi[2]}, mv{phi[3], phi[4], phi[5]};
      Aj += G * jv;
      Am += G * mv;
      curl_j += cross(gradG, jv);
      curl_m += cross(gradG, mv);
      grad_dj += phi[6] * gradG;
      grad_dm += phi[7] * gradG;
    }
    EMField f;
    f.E = (-mat.omega * mu) * curl_m - I * (k * k * Aj + grad_dj);
    f.H = I * (k * k * Am + grad_dm) - (mat.omega * eps) * curl_j;
    if (ext) {
      const EMField inc = incident(x);
      f.E += inc.E;
      f.H += inc.H;
    }
    out.fields[t] = f;
  }
  return out;
}

inline FieldEvaluation evaluate_fields_masked(const SurfaceDiscretization& disc, std::span<const cplx> y,
                                              std::span<const Vec3> points, Region region, const MaterialPair& mat,
                                              const IncidentField& incident, double delta_factor = 1.0) {
  return evaluate_fields_masked(disc, make_density_block(disc, y), points, region, mat, incident, delta_factor);
}

inline std::vector<EMField> evaluate_fields(const SurfaceDiscretization& disc, std::span<const cplx> y,
                                            std::span<const Vec3> points, Region region, const MaterialPair& mat,
                                            const IncidentField& incident, double delta_factor = 1.0) {
  auto r = evaluate_fields_masked(disc, y, points, region, mat, incident, delta_factor);
  for (std::size_t t = 0; t < points.size(); ++t)
    if (r.masked[t]) throw std::domain_error("evaluate_fields: point " + std::to_string(t) + " lies within delta of the surface");
  return std::move(r.fields);
}

/// Relative ℓ2 error of E over a point set.
inline double field_error(std::span<const EMField> a, std::span<const EMField> ref) {
  double num = 0, den = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    num += norm2(a[k].E - ref[k].E);
    den += norm2(ref[k].E);
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace hbie
