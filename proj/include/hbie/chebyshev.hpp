#pragma once

// Chebyshev nodes, Fejér quadrature, coefficient transforms, interpolation
// and spectral differentiation on open (Gauss) Chebyshev grids.

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "hbie/common.hpp"

namespace hbie {

/// Row-major rows x cols grid; (i, j) is (u-index, v-index) so that the flat
/// index j + cols * i matches the point numbering of a patch.
template <class T>
class Grid2D {
 public:
  Grid2D() = default;
  Grid2D(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Grid2D(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw std::invalid_argument("Grid2D: size mismatch");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }
  T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  std::span<T> flat() { return data_; }
  std::span<const T> flat() const { return data_; }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<T> data_;
};

struct ChebGrid1D {
  std::size_t n = 0;
  std::vector<double> nodes;  // cos((k+0.5)π/n), decreasing
};

struct FejerRule {
  std::size_t n = 0;
  std::vector<double> weights;
};

struct ChebInterpolant {
  std::vector<cplx> coeffs;  // w̃_0 .. w̃_{n-1}
  std::size_t degree_bound() const { return coeffs.size(); }
};

struct InterpValue {
  cplx value;
  bool extrapolated = false;
};

enum class Axis { u, v };

inline ChebGrid1D cheb_nodes(std::size_t n) {
  if (n == 0) throw std::invalid_argument("cheb_nodes: n must be positive");
  ChebGrid1D g{n, std::vector<double>(n)};
  for (std::size_t k = 0; k < n; ++k)
    g.nodes[k] = std::cos((static_cast<double>(k) + 0.5) * pi / static_cast<double>(n));
  // cos(π/2) is 6e-17, not 0.
  if (n % 2 == 1) g.nodes[n / 2] = 0.0;
  return g;
}

inline FejerRule fejer_weights(std::size_t n) {
  if (n == 0) throw std::invalid_argument("fejer_weights: n must be positive");
  FejerRule r{n, std::vector<double>(n)};
  const double nn = static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    double s = 0;
    for (std::size_t m = 1; m <= n / 2; ++m) {
      const double md = static_cast<double>(m);
      s += std::cos(md * pi * (2.0 * static_cast<double>(k) + 1.0) / nn) / (4.0 * md * md - 1.0);
    }
    r.weights[k] = 2.0 / nn * (1.0 - 2.0 * s);
  }
  return r;
}

/// T_0(x) .. T_{n-1}(x) by the three-term recurrence; valid for |x| > 1 too.
inline void cheb_T(double x, std::span<double> out) {
  if (out.empty()) return;
  out[0] = 1.0;
  if (out.size() > 1) out[1] = x;
  for (std::size_t m = 2; m < out.size(); ++m) out[m] = 2.0 * x * out[m - 1] - out[m - 2];
}

/// T_m and T_m' together (T_m' = m U_{m-1}).
inline void cheb_T_dT(double x, std::span<double> t, std::span<double> dt) {
  const std::size_t n = t.size();
  if (n == 0) return;
  t[0] = 1.0;
  dt[0] = 0.0;
  if (n == 1) return;
  t[1] = x;
  dt[1] = 1.0;
  double u_prev = 1.0, u_cur = 2.0 * x;  // U_0, U_1
  for (std::size_t m = 2; m < n; ++m) {
    t[m] = 2.0 * x * t[m - 1] - t[m - 2];
    dt[m] = static_cast<double>(m) * u_cur;
    const double u_next = 2.0 * x * u_cur - u_prev;
    u_prev = u_cur;
    u_cur = u_next;
  }
}

/// Precomputed per-size operators: nodes, Fejér weights, T_m(x_k), the
/// sample-to-coefficient matrix and the nodal differentiation matrix.
struct ChebOps {
  std::size_t n = 0;
  std::vector<double> nodes, weights;
  std::vector<double> T;     // T[m*n + k] = T_m(x_k)
  std::vector<double> fwd;   // coeff_m = Σ_k fwd[m*n+k] f_k
  std::vector<double> diff;  // f'(x_i) = Σ_k diff[i*n+k] f_k

  explicit ChebOps(std::size_t size) : n(size) {
    nodes = cheb_nodes(n).nodes;
    weights = fejer_weights(n).weights;
    T.resize(n * n);
    std::vector<double> row(n);
    for (std::size_t k = 0; k < n; ++k) {
      cheb_T(nodes[k], row);
      for (std::size_t m = 0; m < n; ++m) T[m * n + k] = row[m];
    }
    fwd.resize(n * n);
    for (std::size_t m = 0; m < n; ++m) {
      const double c = (m == 0 ? 1.0 : 2.0) / static_cast<double>(n);
      for (std::size_t k = 0; k < n; ++k) fwd[m * n + k] = c * T[m * n + k];
    }
    // diff = E' * fwd, with E'[i][m] = T_m'(x_i).
    diff.assign(n * n, 0.0);
    std::vector<double> t(n), dt(n);
    for (std::size_t i = 0; i < n; ++i) {
      cheb_T_dT(nodes[i], t, dt);
      for (std::size_t m = 0; m < n; ++m)
        for (std::size_t k = 0; k < n; ++k) diff[i * n + k] += dt[m] * fwd[m * n + k];
    }
  }
};

/// 1D coefficients of the interpolant through samples at cheb_nodes(n).
template <class T>
std::vector<T> cheb_coefficients(std::span<const T> samples) {
  const std::size_t n = samples.size();
  if (n == 0) throw std::invalid_argument("cheb_coefficients: empty input");
  const auto x = cheb_nodes(n).nodes;
  std::vector<T> c(n, T{});
  std::vector<double> t(n);
  for (std::size_t k = 0; k < n; ++k) {
    cheb_T(x[k], t);
    for (std::size_t m = 0; m < n; ++m) c[m] += samples[k] * t[m];
  }
  for (std::size_t m = 0; m < n; ++m) c[m] *= (m == 0 ? 1.0 : 2.0) / static_cast<double>(n);
  return c;
}

/// Separable 2D transform of a rows x cols sample grid (any shape).
template <class T>
Grid2D<T> cheb_coefficients_2d(const Grid2D<T>& samples) {
  const std::size_t nr = samples.rows(), nc = samples.cols();
  const ChebOps opr(nr), opc(nc);
  Grid2D<T> tmp(nr, nc), out(nr, nc);
  for (std::size_t i = 0; i < nr; ++i)
    for (std::size_t n = 0; n < nc; ++n) {
      T s{};
      for (std::size_t j = 0; j < nc; ++j) s += opc.fwd[n * nc + j] * samples(i, j);
      tmp(i, n) = s;
    }
  for (std::size_t m = 0; m < nr; ++m)
    for (std::size_t n = 0; n < nc; ++n) {
      T s{};
      for (std::size_t i = 0; i < nr; ++i) s += opr.fwd[m * nr + i] * tmp(i, n);
      out(m, n) = s;
    }
  return out;
}

/// Coefficients a_{m,n} with φ(u,v) = Σ a_{m,n} T_m(u) T_n(v) on the square grid.
inline Grid2D<cplx> cheb_transform_2d(const Grid2D<cplx>& samples) {
  if (!samples.square()) throw std::invalid_argument("cheb_transform_2d: sample grid must be square");
  if (samples.rows() == 0) throw std::invalid_argument("cheb_transform_2d: empty grid");
  return cheb_coefficients_2d(samples);
}

/// Direct summation of the 2D expansion at (u, v).
template <class T>
T cheb_eval_2d(const Grid2D<T>& coeffs, double u, double v) {
  std::vector<double> tu(coeffs.rows()), tv(coeffs.cols());
  cheb_T(u, tu);
  cheb_T(v, tv);
  T s{};
  for (std::size_t m = 0; m < coeffs.rows(); ++m) {
    T row{};
    for (std::size_t n = 0; n < coeffs.cols(); ++n) row += coeffs(m, n) * tv[n];
    s += row * tu[m];
  }
  return s;
}

/// Evaluates coefficients back on a rows' x cols' tensor Chebyshev grid.
template <class T>
Grid2D<T> cheb_eval_on_grid(const Grid2D<T>& coeffs, std::size_t rows, std::size_t cols) {
  const auto xu = cheb_nodes(rows).nodes;
  const auto xv = cheb_nodes(cols).nodes;
  const std::size_t mr = coeffs.rows(), mc = coeffs.cols();
  std::vector<double> tu(mr), tv(mc);
  Grid2D<T> tmp(rows, mc), out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    cheb_T(xu[i], tu);
    for (std::size_t n = 0; n < mc; ++n) {
      T s{};
      for (std::size_t m = 0; m < mr; ++m) s += tu[m] * coeffs(m, n);
      tmp(i, n) = s;
    }
  }
  for (std::size_t j = 0; j < cols; ++j) {
    cheb_T(xv[j], tv);
    for (std::size_t i = 0; i < rows; ++i) {
      T s{};
      for (std::size_t n = 0; n < mc; ++n) s += tv[n] * tmp(i, n);
      out(i, j) = s;
    }
  }
  return out;
}

inline ChebInterpolant cheb_interpolant(std::span<const cplx> samples) {
  return ChebInterpolant{cheb_coefficients(samples)};
}

inline InterpValue cheb_interp_eval(const ChebInterpolant& interp, double x) {
  // Clenshaw.
  cplx b1{}, b2{};
  const auto& c = interp.coeffs;
  for (std::size_t m = c.size(); m-- > 1;) {
    const cplx b0 = c[m] + 2.0 * x * b1 - b2;
    b2 = b1;
    b1 = b0;
  }
  const cplx value = c.empty() ? cplx{} : c[0] + x * b1 - b2;
  return {value, std::abs(x) > 1.0};
}

/// Spectral derivative along one parametric direction of a square sample grid.
inline Grid2D<cplx> cheb_diff_grid(const Grid2D<cplx>& samples, Axis axis, const ChebOps* ops = nullptr) {
  if (!samples.square()) throw std::invalid_argument("cheb_diff_grid: sample grid must be square");
  const std::size_t n = samples.rows();
  if (n < 2) throw std::invalid_argument("cheb_diff_grid: need at least 2 nodes");
  std::optional<ChebOps> local;
  if (!ops || ops->n != n) ops = &local.emplace(n);
  Grid2D<cplx> out(n, n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      cplx s{};
      for (std::size_t k = 0; k < n; ++k)
        s += ops->diff[(axis == Axis::u ? a : b) * n + k] * (axis == Axis::u ? samples(k, b) : samples(a, k));
      out(a, b) = s;
    }
  return out;
}

}  // namespace hbie
