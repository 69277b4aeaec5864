// hbie: solve, benchmark and validate dielectric scattering problems.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "hbie/driver.hpp"

using namespace hbie;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr int schema_version = 1;

struct Session {
  Config cfg;
  RunConfig run;
  fs::path out;
};

Session open_session(const std::string& config_path, const std::vector<std::string>& overrides,
                     const std::string& out_override) {
  Session s;
  s.cfg = config_path.empty() ? Config{} : Config::load(config_path);
  for (const auto& o : overrides) s.cfg.set(o);
  if (!out_override.empty()) s.cfg.set("run.output_dir=" + out_override);
  s.run = resolve_run_config(s.cfg);
  if (s.run.mesh_source != "sphere" && !config_path.empty() && fs::path(s.run.mesh_source).is_relative()) {
    const fs::path beside = fs::path(config_path).parent_path() / s.run.mesh_source;
    if (fs::exists(beside)) s.run.mesh_source = beside.string();
  }
  const auto unused = s.cfg.unused();
  if (!unused.empty()) {
    std::string list;
    for (const auto& k : unused) list += (list.empty() ? "" : ", ") + k;
    throw ConfigError("configuration keys not used by this run (misspelled?): " + list);
  }
  apply_workers(s.run.workers);
  s.out = s.run.output_dir;
  fs::create_directories(s.out);
  std::ofstream os(s.out / "config.resolved");
  os << "# resolved configuration, schema " << schema_version << "\n";
  s.cfg.write_resolved(os);
  return s;
}

json complex_json(cplx z) { return json::array({z.real(), z.imag()}); }

json materials_json(const MaterialPair& m) {
  return {{"eps_e", complex_json(m.eps_e)}, {"mu_e", complex_json(m.mu_e)},   {"eps_i", complex_json(m.eps_i)},
          {"mu_i", complex_json(m.mu_i)},   {"omega", m.omega},              {"kappa_e", complex_json(m.kappa_e)},
          {"kappa_i", complex_json(m.kappa_i)}};
}

json gmres_json(const GmresReport& r) {
  return {{"iterations", r.iterations}, {"converged", r.converged}, {"seconds", r.seconds},
          {"residuals", r.residuals}};
}

void write_json(const fs::path& path, json j) {
  json doc = {{"schema", "hbie"}, {"version", schema_version}};
  doc.update(j);
  std::ofstream os(path);
  os << doc.dump(2) << '\n';
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::function<void(int, double)> progress_printer(bool quiet) {
  if (quiet) return {};
  return [](int k, double r) { std::fprintf(stderr, "  iteration %3d  residual %.3e\n", k, r); };
}

int cmd_solve(const Session& s, bool quiet) {
  const auto disc = make_surface(s.run);
  std::fprintf(stderr, "solve: N=%zu, P=%zu, N_C=%zu\n", disc.size(), disc.num_patches(), disc.nc());
  const SolveResult r = solve_scattering(disc, s.run.materials, s.run.incident, s.run.op, s.run.tol, s.run.max_iter,
                                         progress_printer(quiet));
  const auto file = make_density_file(disc, s.run.materials.omega, s.run.materials.kappa_e, s.run.materials.kappa_i,
                                      make_density_block(disc, r.y));
  write_density_file((s.out / "densities.hbie").string(), file);
  write_json(s.out / "solve_report.json",
             {{"command", "solve"},
              {"n", disc.size()},
              {"patches", disc.num_patches()},
              {"nc", disc.nc()},
              {"materials", materials_json(s.run.materials)},
              {"tolerance", s.run.tol},
              {"setup_seconds", r.setup_seconds},
              {"gmres", gmres_json(r.report)},
              {"densities", "densities.hbie"}});
  std::fprintf(stderr, "solve: %s after %d iterations (residual %.3e)\n",
               r.report.converged ? "converged" : "NOT converged", r.report.iterations, r.report.residuals.back());
  return r.report.converged ? 0 : 3;
}

int cmd_validate_sphere(const Session& s, bool quiet) {
  if (s.run.mesh_source != "sphere") throw ConfigError("validate-sphere needs mesh.source = sphere");
  const auto disc = make_surface(s.run);
  std::fprintf(stderr, "validate-sphere: N=%zu, kappa_i=%g\n", disc.size(), std::abs(s.run.materials.kappa_i));
  const auto v = validate_sphere(disc, s.run.materials, s.run.op, s.run.tol, s.run.max_iter, s.run.validate_points,
                                 s.run.validate_radius, progress_printer(quiet));
  write_json(s.out / "validate_sphere.json",
             {{"command", "validate-sphere"},
              {"n", disc.size()},
              {"materials", materials_json(s.run.materials)},
              {"points", v.points},
              {"masked_points", v.masked},
              {"radius", s.run.validate_radius},
              {"mie_order", v.mie_order},
              {"interior_error", v.interior_error},
              {"exterior_error", v.exterior_error},
              {"setup_seconds", v.solve.setup_seconds},
              {"gmres", gmres_json(v.solve.report)}});
  std::printf("iterations %d  interior error %.3e  exterior error %.3e  masked %zu\n", v.solve.report.iterations,
              v.interior_error, v.exterior_error, v.masked);
  return v.solve.report.converged ? 0 : 3;
}

int cmd_bench_fm(const Session& s) {
  if (s.run.mesh_source != "sphere") throw ConfigError("bench-fm runs on the built-in sphere (mesh.source = sphere)");
  std::vector<BenchRow> rows;
  std::ofstream csv(s.out / "bench_fm.csv");
  csv << "# hbie bench-fm v" << schema_version << "\n";
  csv << "n,n_refine,kappa_e,kappa_i,t_setup,t_accel,t_ifgf,t_seq,t_dense,t_dense_full,dense_rows,error\n";
  for (std::size_t k = 0; k < s.run.bench_refine.size(); ++k) {
    const MaterialPair mat = bench_materials(s.run, k);
    const auto disc = make_sphere_surface(s.run.bench_refine[k], s.run.nc);
    std::fprintf(stderr, "bench-fm: N=%zu kappa_i=%g\n", disc.size(), std::abs(mat.kappa_i));
    const BenchRow r = bench_forward_map(disc, s.run.bench_refine[k], mat, s.run.op, s.run.dense, s.run.dense_limit,
                                         s.run.dense_patches, s.run.bench_seq);
    rows.push_back(r);
    char line[512];
    std::snprintf(line, sizeof line, "%zu,%zu,%.17g,%.17g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%zu,%.6e\n", r.n, r.n_refine,
                  std::abs(r.kappa_e), std::abs(r.kappa_i), r.t_setup, r.t_accel, r.t_ifgf, r.t_seq, r.t_dense,
                  r.t_dense_full, r.dense_rows, r.error);
    csv << line << std::flush;
    std::fprintf(stderr, "  accel %.2fs  ifgf %.2fs  dense %.2fs  error %.3e\n", r.t_accel, r.t_ifgf, r.t_dense,
                 r.error);
  }
  std::vector<double> n, t;
  json jr = json::array();
  for (const auto& r : rows) {
    n.push_back(static_cast<double>(r.n));
    t.push_back(r.t_ifgf);
    jr.push_back({{"n", r.n},
                  {"n_refine", r.n_refine},
                  {"kappa_e", complex_json(r.kappa_e)},
                  {"kappa_i", complex_json(r.kappa_i)},
                  {"t_setup", r.t_setup},
                  {"t_accel", r.t_accel},
                  {"t_ifgf", r.t_ifgf},
                  {"t_seq", r.t_seq},
                  {"t_dense", r.t_dense},
                  {"t_dense_full", r.t_dense_full},
                  {"dense_rows", r.dense_rows},
                  {"error", r.error},
                  {"seq_vec_difference", r.seq_vec_difference}});
  }
  const NLogNFit fit = fit_n_log_n(n, t);
  write_json(s.out / "bench_fm.json", {{"command", "bench-fm"},
                                       {"nc", s.run.nc},
                                       {"rows", jr},
                                       {"ifgf_fit", {{"model", "t = c N log2 N"}, {"c", fit.c}, {"residuals", fit.residuals}}}});
  return 0;
}

int cmd_eval_field(const Session& s, const std::string& densities_arg) {
  const std::string path = densities_arg.empty() ? s.run.eval_densities : densities_arg;
  if (path.empty()) throw ConfigError("eval-field needs a densities file (--densities or eval.densities)");
  const auto disc = make_surface(s.run);
  const DensityFile f = read_density_file(path);
  f.check_matches(disc);
  if (std::abs(f.omega - s.run.materials.omega) > 1e-12 * s.run.materials.omega)
    throw ConfigError("densities were solved at omega=" + std::to_string(f.omega) + ", config has " +
                      std::to_string(s.run.materials.omega));
  const FieldGrid g = make_field_grid(s.run, disc);
  const auto r = evaluate_field_grid(disc, f.dens, g, s.run.materials, s.run.incident, s.run.eval_delta_factor);
  std::ofstream csv(s.out / "fields.csv");
  csv << "# hbie eval-field v" << schema_version << "\n";
  csv << "x,y,z,region,masked,Ex_re,Ex_im,Ey_re,Ey_im,Ez_re,Ez_im,Hx_re,Hx_im,Hy_re,Hy_im,Hz_re,Hz_im\n";
  std::size_t masked = 0;
  char line[640];
  for (std::size_t k = 0; k < g.points.size(); ++k) {
    const Vec3 x = g.points[k];
    const EMField& e = r.fields[k];
    masked += r.masked[k];
    std::snprintf(line, sizeof line,
                  "%.10g,%.10g,%.10g,%s,%d,%.10e,%.10e,%.10e,%.10e,%.10e,%.10e,%.10e,%.10e,%.10e,%.10e,%.10e,%.10e\n",
                  x.x, x.y, x.z, g.region[k] == Region::interior ? "interior" : "exterior", int(r.masked[k]),
                  e.E.x.real(), e.E.x.imag(), e.E.y.real(), e.E.y.imag(), e.E.z.real(), e.E.z.imag(), e.H.x.real(),
                  e.H.x.imag(), e.H.y.real(), e.H.y.imag(), e.H.z.real(), e.H.z.imag());
    csv << line;
  }
  std::fprintf(stderr, "eval-field: %zu points, %zu masked near the surface\n", g.points.size(), masked);
  return 0;
}

int cmd_mesh_info(const Session& s) {
  const auto disc = make_surface(s.run);
  double jmin = 1e300, jmax = 0;
  Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (std::size_t l = 0; l < disc.size(); ++l) {
    jmin = std::min(jmin, disc.jacobians()[l]);
    jmax = std::max(jmax, disc.jacobians()[l]);
    for (int c = 0; c < 3; ++c) {
      lo[c] = std::min(lo[c], disc.points()[l][c]);
      hi[c] = std::max(hi[c], disc.points()[l][c]);
    }
  }
  const SingularityMap map = classify_targets(disc, s.run.op.quadrature);
  IfgfConfig icfg = s.run.op.ifgf;
  const IfgfSummation ifgf(disc.points(), disc.normals(), disc.weights(), s.run.materials.kappa_e,
                           s.run.materials.kappa_i, icfg);
  json levels = json::array();
  for (int d = 1; d <= ifgf.tree().depth(); ++d) {
    json l = {{"level", d}, {"side", ifgf.tree().side(d)}, {"boxes", ifgf.tree().level(d).size()}};
    if (d >= 3) {
      const ConeLevel& c = ifgf.cones().level(d);
      l["radial_intervals"] = c.ns;
      l["polar_intervals"] = c.na;
      l["relevant_segments"] = c.seg.size();
    }
    levels.push_back(l);
  }
  write_json(s.out / "mesh_info.json",
             {{"command", "mesh-info"},
              {"source", s.run.mesh_source},
              {"n", disc.size()},
              {"patches", disc.num_patches()},
              {"nc", disc.nc()},
              {"area", disc.total_area()},
              {"jacobian", {jmin, jmax}},
              {"bounding_box", {{lo.x, lo.y, lo.z}, {hi.x, hi.y, hi.z}}},
              {"singular_pairs", map.num_pairs()},
              {"tree", {{"depth", ifgf.tree().depth()}, {"levels", levels}}}});
  std::printf("N=%zu P=%zu N_C=%zu area=%.12g depth=%d singular pairs=%zu\n", disc.size(), disc.num_patches(),
              disc.nc(), disc.total_area(), ifgf.tree().depth(), map.num_pairs());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dielectric scattering with an accelerated N-Müller boundary integral solver"};
  app.require_subcommand(1);
  std::string config, out, densities;
  std::vector<std::string> overrides;
  bool quiet = false;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config, "configuration file (section.key = value)");
    sub->add_option("-s,--set", overrides, "override a configuration key: key=value");
    sub->add_option("-o,--output", out, "output directory (run.output_dir)");
  };
  auto* solve = app.add_subcommand("solve", "solve for the surface currents of an incident field");
  auto* bench = app.add_subcommand("bench-fm", "time and compare accelerated and dense forward maps");
  auto* validate = app.add_subcommand("validate-sphere", "solve on the unit sphere and compare with the Mie series");
  auto* eval = app.add_subcommand("eval-field", "evaluate fields of solved currents on a grid");
  auto* info = app.add_subcommand("mesh-info", "mesh, tree and cone statistics");
  for (auto* sub : {solve, bench, validate, eval, info}) add_common(sub);
  for (auto* sub : {solve, validate}) sub->add_flag("-q,--quiet", quiet, "do not print GMRES progress");
  eval->add_option("-d,--densities", densities, "HBIE1 densities file (eval.densities)");
  CLI11_PARSE(app, argc, argv);

  try {
    const Session s = open_session(config, overrides, out);
    if (*solve) return cmd_solve(s, quiet);
    if (*bench) return cmd_bench_fm(s);
    if (*validate) return cmd_validate_sphere(s, quiet);
    if (*eval) return cmd_eval_field(s, densities);
    if (*info) return cmd_mesh_info(s);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const MeshError& e) {
    std::fprintf(stderr, "mesh error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
