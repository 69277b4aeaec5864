#pragma once

// Run drivers behind the command-line tool: configuration resolution, the
// solve / benchmark / sphere-validation workflows and field grids.

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "hbie/geometry.hpp"
#include "hbie/io.hpp"
#include "hbie/operators.hpp"
#include "hbie/reference.hpp"
#include "hbie/solver.hpp"

namespace hbie {

enum class DensePolicy { automatic, always, never };

struct RunConfig {
  std::string output_dir = "hbie_out";
  int workers = 0;  // 0: library default

  std::string mesh_source = "sphere";  // "sphere" or a PATCHGRID path
  std::size_t n_refine = 2, nc = 12;

  MaterialPair materials;
  IncidentField incident;

  double tol = 1e-4;
  int max_iter = 200;
  OperatorConfig op;

  std::vector<std::size_t> bench_refine{2, 4, 8};
  std::vector<double> bench_kappa_i;  // empty: scale the base materials with n_refine
  DensePolicy dense = DensePolicy::automatic;
  std::size_t dense_limit = 100000;
  std::size_t dense_patches = 0;  // 0: every row of the dense map
  bool bench_seq = false;

  std::size_t validate_points = 1000;
  double validate_radius = 0.7;

  std::string eval_densities;
  std::string eval_grid = "plane";  // plane | box
  std::string eval_plane = "yz";
  Vec3 eval_center{};
  double eval_extent = 5.0;
  std::size_t eval_resolution = 101;
  double eval_delta_factor = 1.0;
};

/// ω alone fixes κ_e and κ_i; otherwise ω = κ_e/√(ε_e μ_e) with κ_e defaulting to 2π.
/// Any κ given alongside is cross-checked.
inline MaterialPair resolve_materials(const Config& c) {
  const cplx ee = c.complex("materials.eps_e", 1.0), me = c.complex("materials.mu_e", 1.0);
  const cplx ei = c.complex("materials.eps_i", 2.25), mi = c.complex("materials.mu_i", 1.0);
  MaterialPair m;
  try {
    if (c.has("materials.omega")) {
      m = MaterialPair::from_omega(ee, me, ei, mi, c.real("materials.omega", 0));
    } else {
      const cplx ke = c.complex("materials.kappa_e", 2 * pi);
      const cplx w = ke / std::sqrt(ee * me);
      m = MaterialPair::from_kappa(ee, me, ei, mi, ke, w * std::sqrt(ei * mi));
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  auto cross_check = [&](const char* key, cplx expect) {
    if (!c.has(key)) return;
    const cplx k = c.complex(key, 0);
    if (std::abs(k - expect) > 1e-12 * std::max(1.0, std::abs(expect)))
      throw ConfigError(std::string(key) + " = " + format_complex(k) + " contradicts omega*sqrt(eps*mu) = " +
                        format_complex(expect));
  };
  cross_check("materials.kappa_e", m.kappa_e);
  cross_check("materials.kappa_i", m.kappa_i);
  return m;
}

inline RunConfig resolve_run_config(const Config& c) {
  RunConfig r;
  r.output_dir = c.str("run.output_dir", r.output_dir);
  r.workers = static_cast<int>(c.integer("run.workers", 0));
  if (r.workers < 0) throw ConfigError("run.workers must be >= 0");

  r.mesh_source = c.str("mesh.source", r.mesh_source);
  const long nref = c.integer("mesh.n_refine", 2), nc = c.integer("mesh.nc", 12);
  if (nref < 1) throw ConfigError("mesh.n_refine must be >= 1");
  if (nc < 2) throw ConfigError("mesh.nc must be >= 2");
  r.n_refine = static_cast<std::size_t>(nref);
  r.nc = static_cast<std::size_t>(nc);

  r.materials = resolve_materials(c);

  const std::string type = c.str("incident.type", "plane_wave");
  if (type == "plane_wave") {
    try {
      r.incident = plane_wave(r.materials, c.vec3("incident.direction", {0, 0, -1}),
                              c.vec3("incident.polarization", {1, 0, 0}));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  } else if (type == "dipole") {
    const Vec3 p = c.vec3("incident.moment", {1, 0, 0});
    r.incident = electric_dipole(c.vec3("incident.position", {0, 0, 2}), to_cvec(p), r.materials);
  } else {
    throw ConfigError("incident.type must be plane_wave or dipole, got '" + type + "'");
  }

  r.tol = c.real("solver.tol", r.tol);
  r.max_iter = static_cast<int>(c.integer("solver.max_iter", r.max_iter));
  if (!(r.tol > 0) || r.max_iter < 1) throw ConfigError("solver.tol must be > 0 and solver.max_iter >= 1");

  r.op.fd_step = c.real("operator.fd_step", r.op.fd_step);
  const std::string mode = c.str("operator.mode", "vec");
  if (mode != "vec" && mode != "seq") throw ConfigError("operator.mode must be vec or seq");
  r.op.mode = mode == "vec" ? IfgfMode::vec : IfgfMode::seq;
  r.op.local_corrections = c.flag("operator.local_corrections", true);
  r.op.near_memory_limit = static_cast<std::size_t>(c.integer("operator.near_memory_limit_mb", 1536)) << 20;
  r.op.ifgf.ps = static_cast<int>(c.integer("ifgf.ps", r.op.ifgf.ps));
  r.op.ifgf.pa = static_cast<int>(c.integer("ifgf.pa", r.op.ifgf.pa));
  r.op.quadrature.n_beta = static_cast<std::size_t>(c.integer("quadrature.n_beta", 0));
  r.op.quadrature.d = static_cast<int>(c.integer("quadrature.d", r.op.quadrature.d));
  r.op.quadrature.delta_factor = c.real("quadrature.delta_factor", r.op.quadrature.delta_factor);
  try {
    r.op.ifgf.fd_step = r.op.fd_step;
    r.op.validate(r.nc);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  r.bench_refine.clear();
  for (double v : c.reals("bench.n_refine", "2 4 8")) {
    if (v < 1 || v != std::floor(v)) throw ConfigError("bench.n_refine entries must be positive integers");
    r.bench_refine.push_back(static_cast<std::size_t>(v));
  }
  if (r.bench_refine.empty()) throw ConfigError("bench.n_refine must list at least one size");
  r.bench_kappa_i = c.reals("bench.kappa_i", "");
  if (!r.bench_kappa_i.empty() && r.bench_kappa_i.size() != r.bench_refine.size())
    throw ConfigError("bench.kappa_i must have one entry per bench.n_refine entry");
  const std::string dense = c.str("bench.dense", "auto");
  if (dense == "auto") r.dense = DensePolicy::automatic;
  else if (dense == "always") r.dense = DensePolicy::always;
  else if (dense == "never") r.dense = DensePolicy::never;
  else throw ConfigError("bench.dense must be auto, always or never");
  r.dense_limit = static_cast<std::size_t>(c.integer("bench.dense_limit", 100000));
  r.dense_patches = static_cast<std::size_t>(c.integer("bench.dense_patches", 0));
  r.bench_seq = c.flag("bench.seq", false);

  r.validate_points = static_cast<std::size_t>(c.integer("validate.points", 1000));
  r.validate_radius = c.real("validate.radius", 0.7);

  r.eval_densities = c.str("eval.densities", "");
  r.eval_grid = c.str("eval.grid", "plane");
  if (r.eval_grid != "plane" && r.eval_grid != "box") throw ConfigError("eval.grid must be plane or box");
  r.eval_plane = c.str("eval.plane", "yz");
  if (r.eval_plane != "yz" && r.eval_plane != "xz" && r.eval_plane != "xy")
    throw ConfigError("eval.plane must be yz, xz or xy");
  r.eval_center = c.vec3("eval.center", {0, 0, 0});
  r.eval_extent = c.real("eval.extent", 5.0);
  r.eval_resolution = static_cast<std::size_t>(c.integer("eval.resolution", 101));
  r.eval_delta_factor = c.real("eval.delta_factor", 1.0);
  if (!(r.eval_extent > 0) || r.eval_resolution < 2) throw ConfigError("eval.extent must be > 0, eval.resolution >= 2");
  return r;
}

inline void apply_workers(int workers) {
#ifdef _OPENMP
  if (workers > 0) omp_set_num_threads(workers);
#else
  (void)workers;
#endif
}

inline SurfaceDiscretization make_surface(const RunConfig& r, std::optional<std::size_t> n_refine = {}) {
  if (r.mesh_source == "sphere") return make_sphere_surface(n_refine.value_or(r.n_refine), r.nc);
  return load_surface(r.mesh_source, r.nc);
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Solve

struct SolveResult {
  CVec y;
  GmresReport report;
  double setup_seconds = 0, near_setup_seconds = 0, ifgf_setup_seconds = 0;
};

inline SolveResult solve_scattering(const SurfaceDiscretization& disc, const MaterialPair& mat,
                                    const IncidentField& inc, const OperatorConfig& cfg, double tol, int max_iter,
                                    const std::function<void(int, double)>& progress = {}) {
  SolveResult s;
  const auto t0 = std::chrono::steady_clock::now();
  const MullerOperator op(disc, mat, cfg);
  s.setup_seconds = seconds_since(t0);
  s.near_setup_seconds = op.setup_near_seconds();
  s.ifgf_setup_seconds = op.setup_ifgf_seconds();
  const CVec b = muller_rhs(inc, disc, mat);
  s.y = gmres([&](std::span<const cplx> v) { return op.apply(v); }, b, tol, max_iter, s.report, progress);
  return s;
}

// ---------------------------------------------------------------------------
// Sphere validation against the Mie series

struct SphereValidation {
  SolveResult solve;
  double interior_error = 0;  // relative ℓ₂ of E at the interior points
  double exterior_error = 0;  // same, total field on a sphere of radius 1.5
  std::size_t points = 0;
  std::size_t masked = 0;  // points within δ of the surface, left out of both errors
  int mie_order = 0;
};

inline SphereValidation validate_sphere(const SurfaceDiscretization& disc, const MaterialPair& mat,
                                        const OperatorConfig& cfg, double tol, int max_iter, std::size_t points,
                                        double radius, const std::function<void(int, double)>& progress = {}) {
  if (!(radius > 0 && radius < 1)) throw std::invalid_argument("validate-sphere: radius must lie in (0, 1)");
  SphereValidation v;
  const IncidentField inc = plane_wave(mat);
  v.solve = solve_scattering(disc, mat, inc, cfg, tol, max_iter, progress);
  const MieSolution mie(1.0, mat);
  v.mie_order = mie.order();
  v.points = points;
  const auto pin = fibonacci_sphere(points, radius), pout = fibonacci_sphere(points, 1.5);
  const auto fi = evaluate_fields_masked(disc, v.solve.y, pin, Region::interior, mat, inc);
  const auto fo = evaluate_fields_masked(disc, v.solve.y, pout, Region::exterior, mat, inc);
  auto compare = [&](const FieldEvaluation& f, std::span<const Vec3> pts, bool interior) {
    std::vector<EMField> got, ref;
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if (f.masked[k]) {
        ++v.masked;
        continue;
      }
      got.push_back(f.fields[k]);
      ref.push_back(interior ? mie.interior(pts[k]) : mie.total(pts[k]));
    }
    if (got.empty())
      throw std::invalid_argument("validate-sphere: every point lies within delta of the surface; refine the mesh");
    return field_error(got, ref);
  };
  v.interior_error = compare(fi, pin, true);
  v.exterior_error = compare(fo, pout, false);
  return v;
}

// ---------------------------------------------------------------------------
// Forward-map benchmark

struct BenchRow {
  std::size_t n = 0, n_refine = 0;
  cplx kappa_e, kappa_i;
  double t_setup = 0, t_accel = 0, t_ifgf = 0, t_seq = -1;
  double t_dense = -1;            // measured; -1 when skipped
  double t_dense_full = -1;       // extrapolated to all rows when sampled
  std::size_t dense_rows = 0;     // points whose rows were compared
  double error = -1;              // relative ℓ₂ over the compared rows
  double seq_vec_difference = -1; // max |Seq - Vec| / max |Vec| over the IFGF outputs
};

/// Rows of every k-th patch so the sample covers the whole surface.
inline std::vector<char> sample_patch_mask(const SurfaceDiscretization& disc, std::size_t patches) {
  const std::size_t P = disc.num_patches(), nc2 = disc.nc() * disc.nc();
  std::vector<char> mask(disc.size(), 0);
  patches = std::min(patches, P);
  for (std::size_t k = 0; k < patches; ++k) {
    const std::size_t p = k * P / patches;
    std::fill(mask.begin() + p * nc2, mask.begin() + (p + 1) * nc2, 1);
  }
  return mask;
}

inline double max_abs_difference(const LayerValues& a, const LayerValues& b, double& scale) {
  double d = 0;
  scale = 0;
  for (std::size_t k = 0; k < a.S.size(); ++k) {
    d = std::max(d, std::abs(a.S[k] - b.S[k]));
    scale = std::max(scale, std::abs(a.S[k]));
  }
  for (std::size_t k = 0; k < a.D.size(); ++k) {
    d = std::max(d, std::abs(a.D[k] - b.D[k]));
    scale = std::max(scale, std::abs(a.D[k]));
  }
  return d;
}

/// Times the accelerated, IFGF-only and dense forward maps on a plane-wave
/// right side and compares accelerated against dense.
inline BenchRow bench_forward_map(const SurfaceDiscretization& disc, std::size_t n_refine, const MaterialPair& mat,
                                  const OperatorConfig& cfg, DensePolicy dense, std::size_t dense_limit,
                                  std::size_t dense_patches, bool with_seq) {
  BenchRow row;
  row.n = disc.size();
  row.n_refine = n_refine;
  row.kappa_e = mat.kappa_e;
  row.kappa_i = mat.kappa_i;
  auto t0 = std::chrono::steady_clock::now();
  const MullerOperator op(disc, mat, cfg);
  row.t_setup = seconds_since(t0);
  const CVec y = muller_rhs(plane_wave(mat), disc, mat);
  const DensityBlock dens = make_density_block(disc, y);

  t0 = std::chrono::steady_clock::now();
  const CVec fast = op.apply(y);
  row.t_accel = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  const LayerValues vec = op.ifgf().apply(dens, IfgfMode::vec);
  row.t_ifgf = seconds_since(t0);

  if (with_seq) {
    t0 = std::chrono::steady_clock::now();
    const LayerValues seq = op.ifgf().apply(dens, IfgfMode::seq);
    row.t_seq = seconds_since(t0);
    double scale;
    row.seq_vec_difference = max_abs_difference(vec, seq, scale) / scale;
  }

  // Above the limit, rows on dense_patches whole patches stand in for the full map.
  const bool large = row.n > dense_limit;
  const bool sampled = large && dense != DensePolicy::never && dense_patches > 0 && dense_patches < disc.num_patches();
  const bool run_dense = dense != DensePolicy::never && (!large || sampled || dense == DensePolicy::always);
  if (run_dense) {
    std::vector<char> mask;
    if (sampled) mask = sample_patch_mask(disc, dense_patches);
    t0 = std::chrono::steady_clock::now();
    const CVec ref = dense_forward_map(op, y, sampled ? &mask : nullptr);
    row.t_dense = seconds_since(t0);
    const std::size_t N = disc.size();
    double num = 0, den = 0;
    row.dense_rows = 0;
    for (std::size_t l = 0; l < N; ++l) {
      if (sampled && !mask[l]) continue;
      ++row.dense_rows;
      for (int r = 0; r < 4; ++r) {
        num += std::norm(fast[r * N + l] - ref[r * N + l]);
        den += std::norm(ref[r * N + l]);
      }
    }
    row.error = std::sqrt(num / den);
    row.t_dense_full = row.t_dense * static_cast<double>(N) / static_cast<double>(row.dense_rows);
  }
  return row;
}

struct NLogNFit {
  double c = 0;
  std::vector<double> residuals;  // (t - c N log N) / (c N log N)
};

/// Least-squares c in t ≈ c N log₂ N.
inline NLogNFit fit_n_log_n(const std::vector<double>& n, const std::vector<double>& t) {
  NLogNFit f;
  double sxx = 0, sxt = 0;
  for (std::size_t k = 0; k < n.size(); ++k) {
    const double x = n[k] * std::log2(n[k]);
    sxx += x * x;
    sxt += x * t[k];
  }
  f.c = sxx > 0 ? sxt / sxx : 0;
  for (std::size_t k = 0; k < n.size(); ++k) {
    const double m = f.c * n[k] * std::log2(n[k]);
    f.residuals.push_back((t[k] - m) / m);
  }
  return f;
}

/// Benchmark materials for size k: the configured ones, or κ scaled with the
/// refinement level (constant points per wavelength), or explicit κ_i values.
inline MaterialPair bench_materials(const RunConfig& r, std::size_t k) {
  const MaterialPair& m = r.materials;
  double w = m.omega * static_cast<double>(r.bench_refine[k]) / static_cast<double>(r.bench_refine[0]);
  if (!r.bench_kappa_i.empty()) {
    const cplx wi = r.bench_kappa_i[k] / std::sqrt(m.eps_i * m.mu_i);
    if (std::abs(wi.imag()) > 1e-12 * std::abs(wi)) throw ConfigError("bench.kappa_i implies a complex frequency");
    w = wi.real();
  }
  return MaterialPair::from_omega(m.eps_e, m.mu_e, m.eps_i, m.mu_i, w);
}

// ---------------------------------------------------------------------------
// Field grids

/// Laplace double layer of the unit density: ≈ 1 inside a closed, outward
/// oriented surface and ≈ 0 outside (solid angle over 4π).
inline double solid_angle_fraction(const SurfaceDiscretization& disc, const Vec3& x) {
  double s = 0;
  for (std::size_t m = 0; m < disc.size(); ++m) {
    const Vec3 d = disc.points()[m] - x;
    const double r = norm(d);
    s += disc.weights()[m] * dot(d, disc.normals()[m]) / (r * r * r);
  }
  return s / (4 * pi);
}

struct FieldGrid {
  std::vector<Vec3> points;
  std::vector<Region> region;
};

inline FieldGrid make_field_grid(const RunConfig& r, const SurfaceDiscretization& disc) {
  FieldGrid g;
  const std::size_t n = r.eval_resolution;
  const double a = r.eval_extent;
  auto coord = [&](std::size_t i) { return -a + 2 * a * static_cast<double>(i) / static_cast<double>(n - 1); };
  auto face = [&](int axis_u, int axis_v, int axis_w, double w) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        Vec3 p = r.eval_center;
        p[axis_u] += coord(i);
        p[axis_v] += coord(j);
        p[axis_w] += w;
        g.points.push_back(p);
      }
  };
  if (r.eval_grid == "plane") {
    if (r.eval_plane == "yz") face(1, 2, 0, 0);
    else if (r.eval_plane == "xz") face(0, 2, 1, 0);
    else face(0, 1, 2, 0);
  } else {
    for (int w = 0; w < 3; ++w)
      for (double side : {-a, a}) face((w + 1) % 3, (w + 2) % 3, w, side);
  }
  g.region.resize(g.points.size());
  for (std::size_t k = 0; k < g.points.size(); ++k)
    g.region[k] = solid_angle_fraction(disc, g.points[k]) > 0.5 ? Region::interior : Region::exterior;
  return g;
}

/// Fields on a grid; interior and exterior points use their own representation.
inline FieldEvaluation evaluate_field_grid(const SurfaceDiscretization& disc, const DensityBlock& dens,
                                           const FieldGrid& g, const MaterialPair& mat, const IncidentField& inc,
                                           double delta_factor) {
  FieldEvaluation out;
  out.fields.resize(g.points.size());
  out.masked.assign(g.points.size(), 0);
  for (Region reg : {Region::exterior, Region::interior}) {
    std::vector<Vec3> pts;
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < g.points.size(); ++k)
      if (g.region[k] == reg) {
        pts.push_back(g.points[k]);
        idx.push_back(k);
      }
    if (pts.empty()) continue;
    const auto r = evaluate_fields_masked(disc, dens, pts, reg, mat, inc, delta_factor);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.fields[idx[k]] = r.fields[k];
      out.masked[idx[k]] = r.masked[k];
    }
  }
  return out;
}

}  // namespace hbie
