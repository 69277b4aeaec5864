#pragma once

// Non-restarted GMRES (modified Gram-Schmidt, Givens rotations).

#include <chrono>
#include <cmath>
#include <complex>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "hbie/common.hpp"

namespace hbie {

struct GmresReport {
  int iterations = 0;
  std::vector<double> residuals;  // relative to ‖b‖, starting with the initial one
  bool converged = false;
  double seconds = 0;
};

using LinearAction = std::function<CVec(std::span<const cplx>)>;

inline cplx cdot(std::span<const cplx> a, std::span<const cplx> b) {
  cplx s{};
  for (std::size_t k = 0; k < a.size(); ++k) s += std::conj(a[k]) * b[k];
  return s;
}

/// Solves A x = b from x = 0. `progress` (optional) sees each new residual.
inline CVec gmres(const LinearAction& apply, std::span<const cplx> b, double tol, int max_iter, GmresReport& report,
                  const std::function<void(int, double)>& progress = {}) {
  if (!(tol > 0)) throw std::invalid_argument("gmres: tolerance must be positive");
  if (max_iter < 1) throw std::invalid_argument("gmres: max_iter must be positive");
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = b.size();
  report = {};
  CVec x(n, cplx{});
  const double bnorm = std::sqrt(std::real(cdot(b, b)));
  if (bnorm == 0) {
    report.converged = true;
    report.residuals = {0.0};
    return x;
  }
  std::vector<CVec> V;
  V.emplace_back(b.begin(), b.end());
  for (auto& v : V[0]) v /= bnorm;
  std::vector<std::vector<cplx>> H;  // columns of the upper Hessenberg matrix, rotated
  std::vector<cplx> cs, sn, g{bnorm};
  report.residuals.push_back(1.0);
  int k = 0;
  while (k < max_iter) {
    CVec w = apply(V[k]);
    if (w.size() != n) throw std::invalid_argument("gmres: operator returned a vector of the wrong length");
    std::vector<cplx> h(k + 2);
    for (int i = 0; i <= k; ++i) {
      h[i] = cdot(V[i], w);
      for (std::size_t t = 0; t < n; ++t) w[t] -= h[i] * V[i][t];
    }
    const double hn = std::sqrt(std::real(cdot(w, w)));
    h[k + 1] = hn;
    for (int i = 0; i < k; ++i) {
      const cplx t = std::conj(cs[i]) * h[i] + std::conj(sn[i]) * h[i + 1];
      h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1];
      h[i] = t;
    }
    // Rotation zeroing h[k+1]: c = h_k/ρ, s = h_{k+1}/ρ.
    const double den = std::hypot(std::abs(h[k]), hn);
    const cplx c = den == 0 ? cplx(1.0) : h[k] / den;
    const cplx s = den == 0 ? cplx(0.0) : cplx(hn / den);
    cs.push_back(c);
    sn.push_back(s);
    h[k] = std::conj(c) * h[k] + std::conj(s) * h[k + 1];
    h[k + 1] = 0;
    g.push_back(-s * g[k]);
    g[k] = std::conj(c) * g[k];
    H.push_back(std::move(h));
    ++k;
    const double res = std::abs(g[k]) / bnorm;
    report.residuals.push_back(std::min(res, report.residuals.back()));
    if (progress) progress(k, res);
    if (res <= tol || hn == 0) break;
    V.emplace_back(std::move(w));
    for (auto& v : V.back()) v /= hn;
  }
  // Back substitution for the k x k triangular system.
  std::vector<cplx> yk(k);
  for (int i = k - 1; i >= 0; --i) {
    cplx s = g[i];
    for (int j = i + 1; j < k; ++j) s -= H[j][i] * yk[j];
    yk[i] = s / H[i][i];
  }
  for (int i = 0; i < k; ++i)
    for (std::size_t t = 0; t < n; ++t) x[t] += yk[i] * V[i][t];
  report.iterations = k;
  report.converged = report.residuals.back() <= tol;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return x;
}

}  // namespace hbie
