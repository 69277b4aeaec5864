#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace hbie {

using cplx = std::complex<double>;
using CVec = std::vector<cplx>;

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;
inline constexpr double four_pi = 4.0 * std::numbers::pi;
inline constexpr cplx I{0.0, 1.0};

struct Vec3 {
  double x = 0, y = 0, z = 0;

  constexpr double& operator[](int k) { return k == 0 ? x : (k == 1 ? y : z); }
  constexpr double operator[](int k) const { return k == 0 ? x : (k == 1 ? y : z); }

  constexpr Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  constexpr Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  constexpr Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }
};

constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

/// Complex 3-vector (field values, Cartesian densities).
struct CVec3 {
  cplx x{}, y{}, z{};

  constexpr cplx& operator[](int k) { return k == 0 ? x : (k == 1 ? y : z); }
  constexpr cplx operator[](int k) const { return k == 0 ? x : (k == 1 ? y : z); }
  CVec3& operator+=(const CVec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  CVec3& operator-=(const CVec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  CVec3& operator*=(cplx s) { x *= s; y *= s; z *= s; return *this; }
};

inline CVec3 operator+(CVec3 a, const CVec3& b) { return a += b; }
inline CVec3 operator-(CVec3 a, const CVec3& b) { return a -= b; }
inline CVec3 operator*(cplx s, CVec3 a) { return a *= s; }
inline CVec3 operator*(CVec3 a, cplx s) { return a *= s; }
inline CVec3 to_cvec(const Vec3& a) { return {a.x, a.y, a.z}; }
inline cplx dot(const Vec3& a, const CVec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline CVec3 cross(const Vec3& a, const CVec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline CVec3 cross(const CVec3& a, const CVec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm2(const CVec3& a) { return std::norm(a.x) + std::norm(a.y) + std::norm(a.z); }

/// Helmholtz Green function e^{iκr}/(4πr).
inline cplx green(cplx kappa, double r) { return std::exp(I * kappa * r) / (four_pi * r); }

/// Relative l2 difference ||a-b|| / ||b||.
inline double rel_l2(const CVec& a, const CVec& b) {
  if (a.size() != b.size()) throw std::invalid_argument("rel_l2: size mismatch");
  double num = 0, den = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    num += std::norm(a[k] - b[k]);
    den += std::norm(b[k]);
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

inline double l2_norm(const CVec& a) {
  double s = 0;
  for (const auto& v : a) s += std::norm(v);
  return std::sqrt(s);
}

/// The 8 scalar densities per surface point, ordered
/// (j_x, j_y, j_z, m_x, m_y, m_z, div j, div m); storage is point-major.
struct DensityBlock {
  static constexpr int channels = 8;
  std::size_t n = 0;
  std::vector<cplx> v;

  DensityBlock() = default;
  explicit DensityBlock(std::size_t points) : n(points), v(points * channels) {}
  cplx& operator()(std::size_t l, int c) { return v[l * channels + c]; }
  cplx operator()(std::size_t l, int c) const { return v[l * channels + c]; }
  const cplx* point(std::size_t l) const { return v.data() + l * channels; }
};

/// Single-layer values of all 8 channels and normal derivatives of the 6
/// Cartesian current channels, for both kernels (0: exterior, 1: interior).
struct LayerValues {
  static constexpr int s_stride = 16, d_stride = 12;
  std::size_t n = 0;
  std::vector<cplx> S, D;

  LayerValues() = default;
  explicit LayerValues(std::size_t points) : n(points), S(points * s_stride), D(points * d_stride) {}
  cplx& s(std::size_t l, int kernel, int c) { return S[l * s_stride + kernel * 8 + c]; }
  cplx s(std::size_t l, int kernel, int c) const { return S[l * s_stride + kernel * 8 + c]; }
  cplx& d(std::size_t l, int kernel, int c) { return D[l * d_stride + kernel * 6 + c]; }
  cplx d(std::size_t l, int kernel, int c) const { return D[l * d_stride + kernel * 6 + c]; }
};

}  // namespace hbie
