#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "fedpac/qp.hpp"
#include "fedpac/rng.hpp"
#include "oracles.hpp"

using namespace fedpac;
using namespace fedpac::qp;

namespace {

oracle::Mat to_rows(const Matrix& m) {
  oracle::Mat out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r].assign(m.row(r).begin(), m.row(r).end());
  return out;
}

SimplexQP random_psd(std::size_t m, std::size_t rank, RngStream& rng) {
  Matrix a(rank, m);
  for (double& v : a.data()) v = rng.normal();
  return {matmul(transpose(a), a)};
}

void check_on_simplex(const Vector& a) {
  for (double v : a) CHECK(v >= 0.0);
  CHECK(std::abs(std::accumulate(a.begin(), a.end(), 0.0) - 1.0) < 1e-12);
}

}  // namespace

TEST_CASE("projection leaves simplex points unchanged") {
  const Vector v{0.2, 0.3, 0.5};
  const auto p = project_simplex(v);
  for (std::size_t i = 0; i < 3; ++i) CHECK(p.alpha[i] == doctest::Approx(v[i]).epsilon(1e-15));
}

TEST_CASE("projection of a dominant coordinate") {
  CHECK(project_simplex(Vector{10, 0}).alpha == Vector{1, 0});
}

TEST_CASE("projection of (0.6, 0.6) against an exhaustive grid") {
  const auto p = project_simplex(Vector{0.6, 0.6});
  // Nearest lattice point at spacing 1e-4.
  double best = INFINITY, best_a = 0;
  for (int i = 0; i <= 10000; ++i) {
    const double a = i * 1e-4;
    const double d = (a - 0.6) * (a - 0.6) + (1 - a - 0.6) * (1 - a - 0.6);
    if (d < best) best = d, best_a = a;
  }
  CHECK(std::abs(p.alpha[0] - best_a) <= 1e-4);
  CHECK(p.alpha[0] == doctest::Approx(0.5));
  CHECK(p.alpha[1] == doctest::Approx(0.5));
}

TEST_CASE("projection rejects empty input") { CHECK_THROWS_AS(project_simplex(Vector{}), QpValidationError); }

TEST_CASE("projection always lands on the simplex") {
  RngStream rng(1, {});
  for (int t = 0; t < 200; ++t) {
    Vector v(1 + rng.below(6));
    for (double& x : v) x = 5 * rng.normal();
    check_on_simplex(project_simplex(v).alpha);
  }
}

TEST_CASE("solve: single client") { CHECK(solve(SimplexQP{Matrix{{3.0}}}, 1e-8).alpha == Vector{1.0}); }

TEST_CASE("solve: diagonal cases") {
  const auto a = solve(SimplexQP{Matrix{{1, 0}, {0, 1}}}, 1e-8).alpha;
  CHECK(a[0] == doctest::Approx(0.5).epsilon(1e-4));
  const auto b = solve(SimplexQP{Matrix{{1, 0}, {0, 2}}}, 1e-8).alpha;
  CHECK(std::abs(b[0] - 2.0 / 3.0) < 1e-4);
  CHECK(std::abs(b[1] - 1.0 / 3.0) < 1e-4);
  const auto grid = oracle::simplex_grid({{1, 0}, {0, 2}}, 10000);
  CHECK(std::abs(b[0] - grid[0]) < 2e-4);
  CHECK(solve(SimplexQP{Matrix{{1, 0}, {0, 100}}}, 1e-8).alpha[0] >= 0.98);
}

TEST_CASE("solve rejects malformed problems") {
  CHECK_THROWS_AS(solve(SimplexQP{Matrix{{1, 0.5}, {0, 1}}}, 1e-8), QpValidationError);
  CHECK_THROWS_AS(solve(SimplexQP{Matrix(2, 3)}, 1e-8), QpValidationError);
  CHECK_THROWS_AS(solve(SimplexQP{Matrix{{1, NAN}, {NAN, 1}}}, 1e-8), QpValidationError);
}

TEST_CASE("iteration cap raises with the best iterate") {
  RngStream rng(2, {});
  const auto problem = random_psd(4, 5, rng);
  try {
    solve(problem, SolverOptions{.tol = 1e-300, .max_iterations = 3});
    FAIL("expected non-convergence");
  } catch (const QpNonConvergence& e) {
    check_on_simplex(e.best().alpha);
    CHECK(objective(problem, e.best().alpha) <= objective(problem, Vector(4, 0.25)) + 1e-15);
  }
}

TEST_CASE("solve matches the closed-form two-point minimizer") {
  RngStream rng(3, {});
  for (int t = 0; t < 50; ++t) {
    const auto problem = random_psd(2, 1 + rng.below(3), rng);
    const auto a = solve(problem, 1e-10).alpha;
    const auto ref = oracle::simplex_qp_2(to_rows(problem.q));
    CHECK(oracle::quad(to_rows(problem.q), a) <= oracle::quad(to_rows(problem.q), ref) + 1e-9);
  }
}

TEST_CASE("solve beats the lattice oracle on random PSD instances") {
  RngStream rng(4, {});
  for (int t = 0; t < 50; ++t) {
    const std::size_t m = 2 + t % 3;
    const auto problem = random_psd(m, t % 4 == 0 ? m - 1 : m + 2, rng);
    const auto a = solve(problem, 1e-8).alpha;
    check_on_simplex(a);
    CHECK(objective(problem, a) <= objective(problem, brute_force_oracle(problem, 1e-3).alpha) + 1e-5);
    CHECK(objective(problem, a) <= objective(problem, Vector(m, 1.0 / m)) + 1e-15);
    if (m <= 3) CHECK(objective(problem, a) <= oracle::quad(to_rows(problem.q), oracle::simplex_grid(to_rows(problem.q), 400)) + 1e-5);
  }
}

TEST_CASE("solve is permutation equivariant") {
  RngStream rng(5, {});
  for (int t = 0; t < 20; ++t) {
    const std::size_t m = 4;
    const auto problem = random_psd(m, m + 1, rng);
    std::vector<std::size_t> perm{2, 0, 3, 1};
    Matrix q(m, m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) q(i, j) = problem.q(perm[i], perm[j]);
    const auto a = solve(problem, 1e-10).alpha;
    const auto b = solve(SimplexQP{q}, 1e-10).alpha;
    for (std::size_t i = 0; i < m; ++i) CHECK(std::abs(b[i] - a[perm[i]]) < 1e-5);
  }
}

TEST_CASE("flat problems resolve to uniform") {
  const auto a = solve(SimplexQP{Matrix(3, 3)}, 1e-8).alpha;
  for (double v : a) CHECK(v == doctest::Approx(1.0 / 3));
  const auto b = solve(SimplexQP{Matrix(3, 3, 1.0)}, 1e-8).alpha;
  for (double v : b) CHECK(v == doctest::Approx(1.0 / 3));
}

TEST_CASE("oracle: zero matrix and refusal above four") {
  const auto z = brute_force_oracle(SimplexQP{Matrix(3, 3)}, 0.1);
  CHECK(objective(SimplexQP{Matrix(3, 3)}, z.alpha) == 0.0);
  check_on_simplex(z.alpha);
  CHECK_THROWS_AS(brute_force_oracle(SimplexQP{Matrix::identity(5)}, 0.1), QpValidationError);
}

TEST_CASE("oracle: diag(1,2,4) at step 1e-2 matches KKT") {
  // KKT: alpha_j proportional to 1/q_jj.
  const double s = 1 + 0.5 + 0.25;
  const Vector kkt{1 / s, 0.5 / s, 0.25 / s};
  const auto a = brute_force_oracle(SimplexQP{Matrix{{1, 0, 0}, {0, 2, 0}, {0, 0, 4}}}, 1e-2).alpha;
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(a[i] - kkt[i]) <= 1e-2);
}

TEST_CASE("oracle vs solve for m = 2") {
  RngStream rng(6, {});
  for (int t = 0; t < 20; ++t) {
    const auto problem = random_psd(2, 2, rng);
    const double gap = objective(problem, brute_force_oracle(problem, 1e-3).alpha) -
                       objective(problem, solve(problem, 1e-8).alpha);
    CHECK(std::abs(gap) <= 1e-5);
  }
}
