#include <gtest/gtest.h>

#include <random>

#include "hbie/reference.hpp"

using namespace hbie;

namespace {

// Central-difference curl of one field of an EMField-valued map.
template <class F>
CVec3 fd_curl(const F& f, const Vec3& x, bool magnetic, double h = 1e-5) {
  CVec3 d[3][2];
  for (int a = 0; a < 3; ++a) {
    Vec3 e{};
    e[a] = h;
    const EMField p = f(x + e), m = f(x - e);
    d[a][0] = magnetic ? p.H : p.E;
    d[a][1] = magnetic ? m.H : m.E;
  }
  auto D = [&](int a, int c) { return (d[a][0][c] - d[a][1][c]) / (2 * h); };
  return {D(1, 2) - D(2, 1), D(2, 0) - D(0, 2), D(0, 1) - D(1, 0)};
}

double rel(const CVec3& a, const CVec3& b) { return std::sqrt(norm2(a - b) / norm2(b)); }

MaterialPair dielectric() { return MaterialPair::from_kappa(1.0, 1.0, 2.25, 1.0, 2.0, 3.0); }

}  // namespace

TEST(Materials, OmegaDefaultsFromExteriorWavenumber) {
  const auto m = MaterialPair::from_kappa(2.0, 2.0, 4.0, 1.0, 3.0, 3.0);
  EXPECT_NEAR(m.omega, 1.5, 1e-15);
  EXPECT_THROW(MaterialPair::from_kappa(1.0, 1.0, 2.25, 1.0, 2.0, 2.0), std::invalid_argument);
  EXPECT_THROW(MaterialPair::from_kappa(cplx(1.0, 0.5), 1.0, 1.0, 1.0, 2.0, 2.0), std::invalid_argument);
  const auto w = MaterialPair::from_omega(1.0, 1.0, 2.25, 1.0, 2.0);
  EXPECT_NEAR(std::abs(w.kappa_i - 3.0), 0.0, 1e-15);
  EXPECT_FALSE(w.matched());
}

TEST(Bessel, MatchesClosedFormsAndTabulatedValues) {
  for (cplx z : {cplx(0.3), cplx(2.0, 0.7), cplx(9.5), cplx(pi)}) {
    const CVec j = sph_bessel_j(6, z), y = sph_bessel_y(6, z);
    EXPECT_LT(std::abs(j[0] - std::sin(z) / z), 1e-14 * std::max(1.0, std::abs(j[0])));
    EXPECT_LT(std::abs(y[0] + std::cos(z) / z), 1e-14 * std::max(1.0, std::abs(y[0])));
    // Cross product j_n y_{n-1} - j_{n-1} y_n = 1/z².
    for (int n = 1; n <= 6; ++n)
      EXPECT_LT(std::abs((j[n] * y[n - 1] - j[n - 1] * y[n]) * z * z - 1.0), 1e-10) << z << " n=" << n;
  }
  EXPECT_LT(std::abs(sph_bessel_j(10, cplx(3.0, 0.5))[10] - cplx(-5.877528896698828e-08, 4.066395477444672e-06)),
            1e-18);
  EXPECT_NEAR(sph_bessel_j(3, 20.0)[3].real(), 0.006030359081110787, 1e-15);
  EXPECT_NEAR(sph_bessel_y(5, 2.5)[5].real(), -5.599100154806327, 1e-12);
  EXPECT_EQ(sph_bessel_j(0, 0.0)[0], cplx(1.0));
}

TEST(Incident, PlaneWaveSatisfiesMaxwell) {
  const auto mat = dielectric();
  const auto f = plane_wave(mat, Vec3{0, 0, -1}, Vec3{1, 0, 0});
  const Vec3 x{0.3, -0.2, 0.45};
  const EMField v = f(x);
  EXPECT_LT(std::abs(v.E.x - std::exp(-I * mat.kappa_e * x.z)), 1e-15);
  EXPECT_LT(rel(fd_curl(f, x, false), I * mat.omega * mat.mu_e * v.H), 1e-8);
  EXPECT_LT(rel(fd_curl(f, x, true), -I * mat.omega * mat.eps_e * v.E), 1e-8);
  EXPECT_THROW(plane_wave(mat, Vec3{0, 0, 2}), std::invalid_argument);
  EXPECT_THROW(plane_wave(mat, Vec3{0, 0, 1}, Vec3{0, 1, 1}), std::invalid_argument);
}

TEST(Incident, DipoleSatisfiesMaxwellAndDecays) {
  const auto mat = dielectric();
  const auto f = electric_dipole(Vec3{0.1, 0.2, -0.1}, CVec3{1.0, cplx(0, 0.5), 0.2}, mat);
  for (const Vec3 x : {Vec3{1.2, 0.4, -0.3}, Vec3{-0.5, 2.0, 1.0}}) {
    const EMField v = f(x);
    EXPECT_LT(rel(fd_curl(f, x, false), I * mat.omega * mat.mu_e * v.H), 1e-7);
    EXPECT_LT(rel(fd_curl(f, x, true), -I * mat.omega * mat.eps_e * v.E), 1e-7);
  }
  // Far field falls off like 1/r.
  const Vec3 dir = Vec3{1, 2, 2} * (1.0 / 3.0);
  const double a = std::sqrt(norm2(f(dir * 200.0).E)) * 200.0, b = std::sqrt(norm2(f(dir * 400.0).E)) * 400.0;
  EXPECT_NEAR(a / b, 1.0, 5e-3);
  EXPECT_THROW(f(Vec3{0.1, 0.2, -0.1}), std::domain_error);
}

TEST(Mie, TransmissionConditionsHoldOnTheSurface) {
  const auto mat = MaterialPair::from_kappa(1.0, 1.0, 2.25, 1.2, 2 * pi, 2 * pi * std::sqrt(2.7));
  const MieSolution mie(1.0, mat);
  double worst = 0;
  for (const Vec3& x : fibonacci_sphere(60, 1.0)) {
    const Vec3 n = x;
    const EMField in = mie.interior(x), out = mie.total(x * (1 + 1e-15));
    const double scale = std::sqrt(norm2(out.E) + norm2(out.H));
    worst = std::max(worst, std::sqrt(norm2(cross(to_cvec(n), in.E - out.E))) / scale);
    worst = std::max(worst, std::sqrt(norm2(cross(to_cvec(n), in.H - out.H))) / scale);
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(Mie, FieldsSatisfyMaxwellInsideAndOutside) {
  const auto mat = dielectric();
  const MieSolution mie(1.0, mat);
  auto f = [&](const Vec3& x) { return mie.total(x); };
  const Vec3 xi{0.2, -0.3, 0.4}, xe{0.9, 0.8, -0.7};
  EXPECT_LT(rel(fd_curl(f, xi, false), I * mat.omega * mat.mu_i * mie.total(xi).H), 1e-7);
  EXPECT_LT(rel(fd_curl(f, xi, true), -I * mat.omega * mat.eps_i * mie.total(xi).E), 1e-7);
  EXPECT_LT(rel(fd_curl(f, xe, false), I * mat.omega * mat.mu_e * mie.total(xe).H), 1e-7);
  EXPECT_LT(rel(fd_curl(f, xe, true), -I * mat.omega * mat.eps_e * mie.total(xe).E), 1e-7);
}

TEST(Mie, TruncationIsConverged) {
  const auto mat = MaterialPair::from_kappa(1.0, 1.0, 2.25, 1.0, 2 * pi, 3 * pi);
  const MieSolution a(1.0, mat), b(1.0, mat, MieSolution(1.0, mat).order() + 8);
  double worst = 0;
  for (const Vec3& x : fibonacci_sphere(40, 0.7)) worst = std::max(worst, rel(a.interior(x).E, b.interior(x).E));
  for (const Vec3& x : fibonacci_sphere(40, 1.5)) worst = std::max(worst, rel(a.scattered(x).E, b.scattered(x).E));
  EXPECT_LT(worst, 1e-10);
}

TEST(Mie, MatchedMediaReproduceTheIncidentWave) {
  const auto mat = MaterialPair::from_kappa(1.0, 1.0, 1.0, 1.0, 2.5, 2.5);
  const MieSolution mie(1.0, mat);
  const auto inc = plane_wave(mat);
  for (const Vec3& x : fibonacci_sphere(20, 0.6)) {
    EXPECT_LT(rel(mie.interior(x).E, inc(x).E), 1e-12);
    EXPECT_LT(rel(mie.interior(x).H, inc(x).H), 1e-12);
  }
  for (const Vec3& x : fibonacci_sphere(20, 1.4)) EXPECT_LT(std::sqrt(norm2(mie.scattered(x).E)), 1e-13);
}

TEST(Mie, RejectsPointsInTheWrongRegion) {
  const MieSolution mie(1.0, dielectric());
  EXPECT_THROW(mie.interior(Vec3{0, 0, 1.1}), std::domain_error);
  EXPECT_THROW(mie.scattered(Vec3{0, 0, 0.9}), std::domain_error);
  EXPECT_THROW(MieSolution(0.0, dielectric()), std::invalid_argument);
}

TEST(FieldEvaluation, ZeroDensityGivesIncidentOutsideAndNothingInside) {
  const auto disc = make_sphere_surface(1, 6);
  const auto mat = dielectric();
  const auto inc = plane_wave(mat);
  const CVec y(4 * disc.size(), cplx{});
  const auto pe = fibonacci_sphere(10, 1.6), pi_ = fibonacci_sphere(10, 0.5);
  const auto fe = evaluate_fields(disc, y, pe, Region::exterior, mat, inc);
  const auto fi = evaluate_fields(disc, y, pi_, Region::interior, mat, inc);
  for (std::size_t k = 0; k < pe.size(); ++k) {
    EXPECT_LT(rel(fe[k].E, inc(pe[k]).E), 1e-15);
    EXPECT_EQ(norm2(fi[k].E), 0.0);
  }
}

TEST(FieldEvaluation, RepresentationSatisfiesMaxwell) {
  // Holds only up to quadrature error, so the currents must be smooth.
  const auto disc = make_sphere_surface(2, 8);
  const auto mat = dielectric();
  // Both traces of an incident wave would give a vanishing exterior field; keep only j.
  CVec y = muller_rhs(plane_wave(mat, Vec3{0, 0.6, 0.8}, Vec3{1, 0, 0}), disc, mat);
  std::fill(y.begin(), y.begin() + 2 * disc.size(), cplx{});
  const IncidentField none;
  for (Region r : {Region::exterior, Region::interior}) {
    const Vec3 x = r == Region::exterior ? Vec3{1.8, 0.6, -0.5} : Vec3{0.1, -0.05, 0.15};
    auto f = [&](const Vec3& p) { return evaluate_fields(disc, y, std::vector<Vec3>{p}, r, mat, none)[0]; };
    const bool ext = r == Region::exterior;
    const cplx eps = ext ? mat.eps_e : mat.eps_i, mu = ext ? mat.mu_e : mat.mu_i;
    const EMField v = f(x);
    EXPECT_LT(rel(fd_curl(f, x, false, 1e-4), I * mat.omega * mu * v.H), 1e-5);
    EXPECT_LT(rel(fd_curl(f, x, true, 1e-4), -I * mat.omega * eps * v.E), 1e-5);
  }
}

TEST(FieldEvaluation, MasksPointsNearTheSurface) {
  const auto disc = make_sphere_surface(1, 6);
  const auto mat = dielectric();
  const CVec y(4 * disc.size(), 1.0);
  const std::vector<Vec3> pts{{0, 0, 1.0 + 1e-3}, {0, 0, 2.0}};
  const auto r = evaluate_fields_masked(disc, y, pts, Region::exterior, mat, IncidentField{});
  EXPECT_EQ(r.masked[0], 1);
  EXPECT_EQ(r.masked[1], 0);
  EXPECT_THROW(evaluate_fields(disc, y, pts, Region::exterior, mat, IncidentField{}), std::domain_error);
}
