#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <random>

#include "hbie/solver.hpp"

using namespace hbie;

namespace {

CVec random_vector(std::size_t n, std::mt19937& rng) {
  std::normal_distribution<double> g;
  CVec v(n);
  for (auto& x : v) x = {g(rng), g(rng)};
  return v;
}

LinearAction dense_action(const Eigen::MatrixXcd& A) {
  return [A](std::span<const cplx> x) {
    Eigen::VectorXcd v = A * Eigen::Map<const Eigen::VectorXcd>(x.data(), static_cast<Eigen::Index>(x.size()));
    return CVec(v.data(), v.data() + v.size());
  };
}

}  // namespace

TEST(Gmres, IdentityConvergesInOneStep) {
  std::mt19937 rng(1);
  const CVec b = random_vector(30, rng);
  GmresReport rep;
  const CVec x = gmres([](std::span<const cplx> v) { return CVec(v.begin(), v.end()); }, b, 1e-12, 10, rep);
  EXPECT_EQ(rep.iterations, 1);
  EXPECT_TRUE(rep.converged);
  for (std::size_t k = 0; k < b.size(); ++k) EXPECT_LT(std::abs(x[k] - b[k]), 1e-14);
}

TEST(Gmres, MatchesDenseDirectSolve) {
  const int n = 50;
  std::mt19937 rng(7);
  std::normal_distribution<double> g;
  Eigen::MatrixXcd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = cplx(g(rng), g(rng)) / std::sqrt(double(n));
  A += 3.0 * Eigen::MatrixXcd::Identity(n, n);
  const CVec b = random_vector(n, rng);
  const Eigen::VectorXcd xe = A.partialPivLu().solve(Eigen::Map<const Eigen::VectorXcd>(b.data(), n));
  GmresReport rep;
  const CVec x = gmres(dense_action(A), b, 1e-13, n, rep);
  EXPECT_TRUE(rep.converged);
  double err = 0;
  for (int k = 0; k < n; ++k) err = std::max(err, std::abs(x[k] - xe(k)));
  EXPECT_LT(err / xe.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Gmres, ResidualHistoryIsMonotoneAndMatchesTrueResidual) {
  const int n = 60;
  std::mt19937 rng(3);
  std::normal_distribution<double> g;
  Eigen::MatrixXcd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = cplx(g(rng), g(rng)) / std::sqrt(double(n));
  A += 1.5 * Eigen::MatrixXcd::Identity(n, n);
  const CVec b = random_vector(n, rng);
  GmresReport rep;
  int calls = 0;
  const CVec x = gmres(dense_action(A), b, 1e-8, 200, rep, [&](int, double) { ++calls; });
  ASSERT_EQ(rep.residuals.size(), static_cast<std::size_t>(rep.iterations + 1));
  EXPECT_EQ(calls, rep.iterations);
  EXPECT_DOUBLE_EQ(rep.residuals[0], 1.0);
  for (std::size_t k = 1; k < rep.residuals.size(); ++k) EXPECT_LE(rep.residuals[k], rep.residuals[k - 1]);
  const Eigen::VectorXcd r = Eigen::Map<const Eigen::VectorXcd>(b.data(), n) -
                             A * Eigen::Map<const Eigen::VectorXcd>(x.data(), n);
  const double rel = r.norm() / Eigen::Map<const Eigen::VectorXcd>(b.data(), n).norm();
  EXPECT_NEAR(rel, rep.residuals.back(), 1e-10);
  EXPECT_LE(rel, 1e-8 * (1 + 1e-6));
}

TEST(Gmres, ZeroRightSideGivesZeroSolution) {
  GmresReport rep;
  int calls = 0;
  const CVec x = gmres(
      [&](std::span<const cplx> v) {
        ++calls;
        return CVec(v.begin(), v.end());
      },
      CVec(8, cplx{}), 1e-6, 10, rep);
  EXPECT_EQ(calls, 0);
  EXPECT_EQ(rep.iterations, 0);
  EXPECT_TRUE(rep.converged);
  for (auto v : x) EXPECT_EQ(v, cplx{});
}

TEST(Gmres, StopsAtIterationLimit) {
  // Cyclic shift: GMRES makes no progress until the full Krylov space is built.
  const int n = 20;
  Eigen::MatrixXcd A = Eigen::MatrixXcd::Zero(n, n);
  for (int i = 0; i < n; ++i) A((i + 1) % n, i) = 1.0;
  CVec b(n, cplx{});
  b[0] = 1.0;
  GmresReport rep;
  gmres(dense_action(A), b, 1e-10, 5, rep);
  EXPECT_EQ(rep.iterations, 5);
  EXPECT_FALSE(rep.converged);
  EXPECT_NEAR(rep.residuals.back(), 1.0, 1e-12);
}

TEST(Gmres, RejectsBadParameters) {
  GmresReport rep;
  const CVec b(4, 1.0);
  auto id = [](std::span<const cplx> v) { return CVec(v.begin(), v.end()); };
  EXPECT_THROW(gmres(id, b, 0.0, 10, rep), std::invalid_argument);
  EXPECT_THROW(gmres(id, b, 1e-6, 0, rep), std::invalid_argument);
  EXPECT_THROW(gmres([](std::span<const cplx>) { return CVec(3); }, b, 1e-6, 10, rep), std::invalid_argument);
}
