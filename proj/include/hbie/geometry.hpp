#pragma once

// Curvilinear surface patches, their Chebyshev discretization and
// point-to-patch distance queries.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "hbie/chebyshev.hpp"
#include "hbie/common.hpp"

namespace hbie {

/// Position and parametric tangents of a patch at one (u, v).
struct PatchFrame {
  Vec3 pos, ru, rv;
};

struct SurfaceMetrics {
  Vec3 position, normal;
  double jacobian = 0;
};

/// Sub-square [a0,a1]x[b0,b1] of one cube face, projected radially onto a sphere.
struct CubedSphereMap {
  Vec3 center;
  double radius = 1;
  Vec3 e1, e2, e3;  // e1 x e2 = e3, the face normal
  double a0 = -1, a1 = 1, b0 = -1, b1 = 1;

  PatchFrame eval(double u, double v) const {
    const double ha = 0.5 * (a1 - a0), hb = 0.5 * (b1 - b0);
    const double a = a0 + (u + 1) * ha, b = b0 + (v + 1) * hb;
    const Vec3 q = e3 + a * e1 + b * e2;
    const double qn = norm(q);
    const Vec3 p = q * (1.0 / qn);
    // d(q/|q|)/dq = (I - p p^T)/|q|
    auto proj = [&](const Vec3& d) { return (d - dot(p, d) * p) * (radius / qn); };
    return {center + radius * p, proj(e1) * ha, proj(e2) * hb};
  }
};

/// Polynomial patch given by 2D Chebyshev coefficients of each coordinate.
struct ChebyshevMap {
  Grid2D<double> cx, cy, cz;

  PatchFrame eval(double u, double v) const {
    const std::size_t nu = cx.rows(), nv = cx.cols();
    std::vector<double> tu(nu), dtu(nu), tv(nv), dtv(nv);
    cheb_T_dT(u, tu, dtu);
    cheb_T_dT(v, tv, dtv);
    PatchFrame f;
    const Grid2D<double>* c[3] = {&cx, &cy, &cz};
    for (int d = 0; d < 3; ++d) {
      double s = 0, su = 0, sv = 0;
      for (std::size_t m = 0; m < nu; ++m) {
        double row = 0, drow = 0;
        for (std::size_t n = 0; n < nv; ++n) {
          row += (*c[d])(m, n) * tv[n];
          drow += (*c[d])(m, n) * dtv[n];
        }
        s += tu[m] * row;
        su += dtu[m] * row;
        sv += tu[m] * drow;
      }
      f.pos[d] = s;
      f.ru[d] = su;
      f.rv[d] = sv;
    }
    return f;
  }
};

struct Patch {
  std::variant<CubedSphereMap, ChebyshevMap> map;
  int orientation = 1;  // +1: r_u x r_v points outward

  PatchFrame frame(double u, double v) const {
    return std::visit([&](const auto& m) { return m.eval(u, v); }, map);
  }
  Vec3 position(double u, double v) const { return frame(u, v).pos; }

  /// Interpolating patch through samples at the tensor Chebyshev nodes
  /// (rows: u index, cols: v index).
  static Patch from_samples(const Grid2D<Vec3>& samples, int orientation) {
    const std::size_t nu = samples.rows(), nv = samples.cols();
    Grid2D<double> g[3] = {Grid2D<double>(nu, nv), Grid2D<double>(nu, nv), Grid2D<double>(nu, nv)};
    for (std::size_t i = 0; i < nu; ++i)
      for (std::size_t j = 0; j < nv; ++j)
        for (int d = 0; d < 3; ++d) g[d](i, j) = samples(i, j)[d];
    return {ChebyshevMap{cheb_coefficients_2d(g[0]), cheb_coefficients_2d(g[1]), cheb_coefficients_2d(g[2])},
            orientation};
  }
};

inline SurfaceMetrics surface_metrics(const Patch& patch, double u, double v) {
  const PatchFrame f = patch.frame(u, v);
  const Vec3 c = cross(f.ru, f.rv);
  const double jac = norm(c);
  if (!(jac >= 1e-14)) throw std::runtime_error("surface_metrics: degenerate tangent plane");
  return {f.pos, c * (patch.orientation / jac), jac};
}

struct ParamPoint {
  double u = 0, v = 0;
};

/// Global point set Γ_N with per-point geometric data; point ℓ = j + N_C i + p N_C².
class SurfaceDiscretization {
 public:
  SurfaceDiscretization() = default;

  SurfaceDiscretization(std::vector<Patch> patches, std::size_t nc)
      : patches_(std::move(patches)), nc_(nc), ops_(std::make_shared<ChebOps>(nc)) {
    if (nc < 2) throw std::invalid_argument("SurfaceDiscretization: N_C must be at least 2");
    const std::size_t n = size();
    pts_.resize(n);
    nrm_.resize(n);
    jac_.resize(n);
    wts_.resize(n);
    ru_.resize(n);
    rv_.resize(n);
    du_.resize(n);
    dv_.resize(n);
    t1_.resize(n);
    t2_.resize(n);
    spacing_.assign(patches_.size(), 0.0);
    bcenter_.resize(patches_.size());
    bradius_.assign(patches_.size(), 0.0);
    const auto& x = ops_->nodes;
    const auto& w = ops_->weights;
    for (std::size_t p = 0; p < patches_.size(); ++p) {
      for (std::size_t i = 0; i < nc_; ++i)
        for (std::size_t j = 0; j < nc_; ++j) {
          const std::size_t l = index(p, i, j);
          const PatchFrame f = patches_[p].frame(x[i], x[j]);
          const Vec3 c = cross(f.ru, f.rv);
          const double J = norm(c);
          if (!(J > 0) || !std::isfinite(J))
            throw std::runtime_error("SurfaceDiscretization: degenerate Jacobian on patch " + std::to_string(p));
          pts_[l] = f.pos;
          ru_[l] = f.ru;
          rv_[l] = f.rv;
          nrm_[l] = c * (patches_[p].orientation / J);
          jac_[l] = J;
          wts_[l] = w[i] * w[j] * J;
          const double E = dot(f.ru, f.ru), F = dot(f.ru, f.rv), G = dot(f.rv, f.rv);
          const double det = E * G - F * F;
          du_[l] = (G * f.ru - F * f.rv) * (1.0 / det);
          dv_[l] = (E * f.rv - F * f.ru) * (1.0 / det);
          t1_[l] = f.ru * (1.0 / norm(f.ru));
          t2_[l] = cross(nrm_[l], t1_[l]);
        }
      Vec3 c{};
      for (std::size_t k = 0; k < nc_ * nc_; ++k) c += pts_[p * nc_ * nc_ + k];
      c *= 1.0 / static_cast<double>(nc_ * nc_);
      double h = 0, rad = 0;
      for (std::size_t i = 0; i < nc_; ++i)
        for (std::size_t j = 0; j < nc_; ++j) {
          const Vec3 y = pts_[index(p, i, j)];
          if (i + 1 < nc_) h = std::max(h, norm(pts_[index(p, i + 1, j)] - y));
          if (j + 1 < nc_) h = std::max(h, norm(pts_[index(p, i, j + 1)] - y));
          rad = std::max(rad, norm(y - c));
        }
      // The grid misses the patch edges by about one half spacing.
      spacing_[p] = h;
      bcenter_[p] = c;
      bradius_[p] = rad + h;
    }
  }

  std::size_t num_patches() const { return patches_.size(); }
  std::size_t nc() const { return nc_; }
  std::size_t size() const { return patches_.size() * nc_ * nc_; }
  std::size_t index(std::size_t p, std::size_t i, std::size_t j) const { return j + nc_ * i + p * nc_ * nc_; }
  void decompose(std::size_t l, std::size_t& p, std::size_t& i, std::size_t& j) const {
    p = l / (nc_ * nc_);
    const std::size_t r = l % (nc_ * nc_);
    i = r / nc_;
    j = r % nc_;
  }

  const Patch& patch(std::size_t p) const { return patches_[p]; }
  const std::vector<Patch>& patches() const { return patches_; }
  const ChebOps& ops() const { return *ops_; }
  const std::vector<double>& nodes() const { return ops_->nodes; }

  const std::vector<Vec3>& points() const { return pts_; }
  const std::vector<Vec3>& normals() const { return nrm_; }
  const std::vector<double>& jacobians() const { return jac_; }
  /// Fejér weight w_i w_j times Jacobian.
  const std::vector<double>& weights() const { return wts_; }
  const std::vector<Vec3>& ru() const { return ru_; }
  const std::vector<Vec3>& rv() const { return rv_; }
  /// Dual basis: ∇_Γ f = f_u du + f_v dv.
  const std::vector<Vec3>& dual_u() const { return du_; }
  const std::vector<Vec3>& dual_v() const { return dv_; }
  /// Orthonormal tangent frame: t1 along r_u, t2 = n x t1.
  const std::vector<Vec3>& t1() const { return t1_; }
  const std::vector<Vec3>& t2() const { return t2_; }

  double spacing(std::size_t p) const { return spacing_[p]; }
  Vec3 bounding_center(std::size_t p) const { return bcenter_[p]; }
  double bounding_radius(std::size_t p) const { return bradius_[p]; }

  double total_area() const {
    double s = 0;
    for (double w : wts_) s += w;
    return s;
  }

 private:
  std::vector<Patch> patches_;
  std::size_t nc_ = 0;
  std::shared_ptr<const ChebOps> ops_;
  std::vector<Vec3> pts_, nrm_, ru_, rv_, du_, dv_, t1_, t2_;
  std::vector<double> jac_, wts_, spacing_, bradius_;
  std::vector<Vec3> bcenter_;
};

inline std::vector<Patch> sphere_patches(std::size_t n_refine, Vec3 center = {}, double radius = 1.0) {
  if (n_refine < 1) throw std::invalid_argument("make_sphere_surface: n_refine must be positive");
  const Vec3 X{1, 0, 0}, Y{0, 1, 0}, Z{0, 0, 1};
  const Vec3 faces[6][3] = {{Y, Z, X}, {Z, Y, -X}, {Z, X, Y}, {X, Z, -Y}, {X, Y, Z}, {Y, X, -Z}};
  std::vector<Patch> out;
  out.reserve(6 * n_refine * n_refine);
  const double h = 2.0 / static_cast<double>(n_refine);
  for (const auto& f : faces)
    for (std::size_t a = 0; a < n_refine; ++a)
      for (std::size_t b = 0; b < n_refine; ++b) {
        CubedSphereMap m{center, radius, f[0], f[1], f[2], -1 + a * h, -1 + (a + 1) * h, -1 + b * h, -1 + (b + 1) * h};
        out.push_back({m, 1});
      }
  return out;
}

inline SurfaceDiscretization make_sphere_surface(std::size_t n_refine, std::size_t nc, Vec3 center = {},
                                                 double radius = 1.0) {
  return SurfaceDiscretization(sphere_patches(n_refine, center, radius), nc);
}

// ---------------------------------------------------------------------------
// PATCHGRID files

enum class MeshErrorKind { io, malformed_header, point_count_mismatch, non_finite_coordinate, degenerate_jacobian };

class MeshError : public std::runtime_error {
 public:
  MeshError(MeshErrorKind kind, long patch, const std::string& what)
      : std::runtime_error(what), kind_(kind), patch_(patch) {}
  MeshErrorKind kind() const { return kind_; }
  /// Offending patch, or -1 when the error is not tied to a patch.
  long patch() const { return patch_; }

 private:
  MeshErrorKind kind_;
  long patch_;
};

inline void write_patchgrid(std::ostream& os, const SurfaceDiscretization& disc) {
  const std::size_t nc = disc.nc();
  int orient = disc.num_patches() ? disc.patch(0).orientation : 1;
  os << "PATCHGRID " << disc.num_patches() << ' ' << nc << ' ' << nc << ' ' << (orient > 0 ? "+1" : "-1") << '\n';
  os << std::setprecision(17);
  for (const auto& x : disc.points()) os << x.x << ' ' << x.y << ' ' << x.z << '\n';
}

inline void write_patchgrid(const std::string& path, const SurfaceDiscretization& disc) {
  std::ofstream os(path);
  if (!os) throw MeshError(MeshErrorKind::io, -1, "cannot open " + path + " for writing");
  write_patchgrid(os, disc);
}

namespace detail {

inline bool parse_doubles(const std::string& line, double* out, int count) {
  const char* p = line.data();
  const char* end = p + line.size();
  for (int k = 0; k < count; ++k) {
    while (p < end && std::isspace(static_cast<unsigned char>(*p))) ++p;
    if (p < end && *p == '+') ++p;
    auto r = std::from_chars(p, end, out[k]);
    if (r.ec != std::errc()) return false;
    p = r.ptr;
  }
  while (p < end && std::isspace(static_cast<unsigned char>(*p))) ++p;
  return p == end;
}

inline bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace detail

inline SurfaceDiscretization read_patchgrid(std::istream& is, std::size_t nc) {
  std::string line;
  if (!std::getline(is, line)) throw MeshError(MeshErrorKind::malformed_header, -1, "PATCHGRID: empty file");
  std::istringstream hs(line);
  std::string magic, orient_tok;
  long P = -1, nu = -1, nv = -1;
  hs >> magic >> P >> nu >> nv >> orient_tok;
  std::string extra;
  if (!hs || magic != "PATCHGRID" || P < 1 || nu < 1 || nv < 1 || (hs >> extra) ||
      (orient_tok != "+1" && orient_tok != "1" && orient_tok != "-1"))
    throw MeshError(MeshErrorKind::malformed_header, -1, "PATCHGRID: malformed header '" + line + "'");
  const int orientation = orient_tok == "-1" ? -1 : 1;

  std::vector<Patch> patches;
  patches.reserve(P);
  const std::size_t per = static_cast<std::size_t>(nu * nv);
  for (long p = 0; p < P; ++p) {
    Grid2D<Vec3> g(nu, nv);
    for (std::size_t k = 0; k < per; ++k) {
      do {
        if (!std::getline(is, line))
          throw MeshError(MeshErrorKind::point_count_mismatch, p,
                          "PATCHGRID: patch " + std::to_string(p) + " has " + std::to_string(k) + " of " +
                              std::to_string(per) + " points");
      } while (detail::blank(line));
      double xyz[3];
      if (!detail::parse_doubles(line, xyz, 3))
        throw MeshError(MeshErrorKind::point_count_mismatch, p,
                        "PATCHGRID: patch " + std::to_string(p) + " point " + std::to_string(k) +
                            " is not an 'x y z' line");
      if (!std::isfinite(xyz[0]) || !std::isfinite(xyz[1]) || !std::isfinite(xyz[2]))
        throw MeshError(MeshErrorKind::non_finite_coordinate, p,
                        "PATCHGRID: non-finite coordinate in patch " + std::to_string(p));
      g.flat()[k] = {xyz[0], xyz[1], xyz[2]};
    }
    patches.push_back(Patch::from_samples(g, orientation));
  }
  while (std::getline(is, line))
    if (!detail::blank(line))
      throw MeshError(MeshErrorKind::point_count_mismatch, P - 1,
                      "PATCHGRID: trailing data after patch " + std::to_string(P - 1));

  const auto x = cheb_nodes(nc).nodes;
  for (long p = 0; p < P; ++p)
    for (double u : x)
      for (double v : x) {
        const PatchFrame f = patches[p].frame(u, v);
        const double J = norm(cross(f.ru, f.rv));
        if (!(J > 1e-14))
          throw MeshError(MeshErrorKind::degenerate_jacobian, p,
                          "PATCHGRID: degenerate Jacobian on patch " + std::to_string(p));
      }
  return SurfaceDiscretization(std::move(patches), nc);
}

inline SurfaceDiscretization load_surface(const std::string& path, std::size_t nc) {
  std::ifstream is(path);
  if (!is) throw MeshError(MeshErrorKind::io, -1, "cannot open mesh file " + path);
  return read_patchgrid(is, nc);
}

// ---------------------------------------------------------------------------
// Closest point and distance

namespace detail {

template <class F>
double golden_min(F&& f, double lo, double hi, double tol, double& fbest) {
  constexpr double r = 0.6180339887498949;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  // The bracket ends are candidates too; the minimizer may sit on the boundary.
  double xb = fc < fd ? c : d;
  fbest = std::min(fc, fd);
  for (double e : {lo, hi}) {
    const double fe = f(e);
    if (fe < fbest) {
      fbest = fe;
      xb = e;
    }
  }
  return xb;
}

}  // namespace detail

/// Parametric coordinates of the point of patch p nearest to x. Starts from
/// the best grid node and refines with alternating golden-section sweeps.
inline ParamPoint closest_point(const Vec3& x, const SurfaceDiscretization& disc, std::size_t p,
                                double tol = 1e-12, int max_sweeps = 8) {
  const std::size_t nc = disc.nc();
  const auto& nodes = disc.nodes();
  const auto& pts = disc.points();
  std::size_t bi = 0, bj = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < nc; ++i)
    for (std::size_t j = 0; j < nc; ++j) {
      const Vec3 d = pts[disc.index(p, i, j)] - x;
      const double r2 = dot(d, d);
      if (r2 < best) {
        best = r2;
        bi = i;
        bj = j;
      }
    }
  if (best == 0.0) return {nodes[bi], nodes[bj]};

  auto bracket = [&](std::size_t k) {
    const double lo = k + 1 < nc ? nodes[k + 1] : -1.0;
    const double hi = k > 0 ? nodes[k - 1] : 1.0;
    return std::pair{lo, hi};
  };
  const auto [ulo, uhi] = bracket(bi);
  const auto [vlo, vhi] = bracket(bj);
  const Patch& patch = disc.patch(p);
  auto f = [&](double u, double v) {
    const Vec3 d = patch.position(u, v) - x;
    return dot(d, d);
  };
  double u = nodes[bi], v = nodes[bj], fval = best;
  for (int s = 0; s < max_sweeps; ++s) {
    const double u0 = u, v0 = v;
    double fu, fv;
    const double un = detail::golden_min([&](double t) { return f(t, v); }, ulo, uhi, tol, fu);
    if (fu <= fval) {
      u = un;
      fval = fu;
    }
    const double vn = detail::golden_min([&](double t) { return f(u, t); }, vlo, vhi, tol, fv);
    if (fv <= fval) {
      v = vn;
      fval = fv;
    }
    if (std::abs(u - u0) <= tol && std::abs(v - v0) <= tol) break;
  }
  // Coordinate sweeps stall on skewed parametrizations; finish with
  // Gauss-Newton steps on the tangent-plane normal equations.
  for (int it = 0; it < 6; ++it) {
    const PatchFrame fr = patch.frame(u, v);
    const Vec3 d = x - fr.pos;
    const double E = dot(fr.ru, fr.ru), F = dot(fr.ru, fr.rv), G = dot(fr.rv, fr.rv);
    const double gu = dot(fr.ru, d), gv = dot(fr.rv, d);
    const double det = E * G - F * F;
    if (!(det > 0)) break;
    const double un = std::clamp(u + (G * gu - F * gv) / det, -1.0, 1.0);
    const double vn = std::clamp(v + (E * gv - F * gu) / det, -1.0, 1.0);
    const double fn = f(un, vn);
    if (!(fn < fval)) break;
    const bool small = std::abs(un - u) <= tol && std::abs(vn - v) <= tol;
    u = un;
    v = vn;
    fval = fn;
    if (small) break;
  }
  auto snap = [](double t) { return t > 1 - 1e-10 ? 1.0 : (t < -1 + 1e-10 ? -1.0 : t); };
  return {snap(u), snap(v)};
}

inline double dist_point_patch(const Vec3& x, const SurfaceDiscretization& disc, std::size_t p) {
  const ParamPoint c = closest_point(x, disc, p);
  return norm(disc.patch(p).position(c.u, c.v) - x);
}

}  // namespace hbie
