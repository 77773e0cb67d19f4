#include <doctest.h>

#include <cmath>

#include "hvdc/error.hpp"
#include "hvdc/nlp_solver.hpp"

using namespace hvdc::nlp;

namespace {

Eigen::SparseMatrix<double> dense_to_sparse(int rows, int cols, std::initializer_list<double> values) {
  Eigen::SparseMatrix<double> j(rows, cols);
  auto it = values.begin();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c, ++it)
      if (*it != 0.0) j.insert(r, c) = *it;
  j.makeCompressed();
  return j;
}

// min x^2 s.t. x >= 1: x* = 1 and the bound multiplier is 2x* = 2.
FunctionalNlp bound_qp() {
  return FunctionalNlp(
      {1.0}, {kInf}, {3.0}, 0, [](auto x) { return x[0] * x[0]; }, [](auto x, auto g) { g[0] = 2.0 * x[0]; },
      [](auto, auto) {}, [](auto) { return Eigen::SparseMatrix<double>(0, 1); });
}

// min (x-2)^2 + (y-1)^2 s.t. x + y - 1 = 0. Stationarity 2(x-2) = lambda,
// 2(y-1) = lambda and x + y = 1 give x = 1, y = 0, lambda = -2.
FunctionalNlp equality_qp() {
  return FunctionalNlp(
      {-kInf, -kInf}, {kInf, kInf}, {0.0, 0.0}, 1,
      [](auto x) { return (x[0] - 2) * (x[0] - 2) + (x[1] - 1) * (x[1] - 1); },
      [](auto x, auto g) {
        g[0] = 2 * (x[0] - 2);
        g[1] = 2 * (x[1] - 1);
      },
      [](auto x, auto c) { c[0] = x[0] + x[1] - 1; }, [](auto) { return dense_to_sparse(1, 2, {1.0, 1.0}); });
}

FunctionalNlp contradictory() {
  return FunctionalNlp(
      {-kInf}, {kInf}, {0.5}, 2, [](auto) { return 0.0; }, [](auto, auto g) { g[0] = 0.0; },
      [](auto x, auto c) {
        c[0] = x[0];
        c[1] = x[0] - 1.0;
      },
      [](auto) { return dense_to_sparse(2, 1, {1.0, 1.0}); });
}

}  // namespace

TEST_CASE("bound-constrained quadratic reaches the bound with multiplier 2") {
  const auto model = bound_qp();
  const auto sol = solve(model);
  REQUIRE(sol.status == SolveStatus::Converged);
  CHECK(std::abs(sol.x[0] - 1.0) <= 1e-8);
  CHECK(std::abs(sol.z_lower[0] - 2.0) <= 1e-6);
}

TEST_CASE("equality-constrained quadratic") {
  const auto model = equality_qp();
  const auto sol = solve(model);
  REQUIRE(sol.status == SolveStatus::Converged);
  CHECK(std::abs(sol.x[0] - 1.0) <= 1e-8);
  CHECK(std::abs(sol.x[1] - 0.0) <= 1e-8);
  CHECK(std::abs(sol.lambda[0] + 2.0) <= 1e-8);
}

TEST_CASE("contradictory equalities are infeasible with a least-violation certificate") {
  const auto model = contradictory();
  const auto sol = solve(model);
  CHECK(sol.status == SolveStatus::Infeasible);
  CHECK(sol.max_residual > 1e-6);
  // Least violation in the max norm sits at x = 0.5 with violation 0.5.
  CHECK(sol.max_residual == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(!sol.message.empty());
  const auto rep = kkt_report(model, sol);
  CHECK(rep.feasibility == sol.max_residual);
}

TEST_CASE("kkt_report agrees on converged problems and detects perturbations") {
  for (const auto& model : {bound_qp(), equality_qp()}) {
    const auto sol = solve(model);
    REQUIRE(sol.status == SolveStatus::Converged);
    const auto rep = kkt_report(model, sol);
    CHECK(rep.feasibility <= 1e-6);
    CHECK(rep.stationarity <= 1e-6);
    CHECK(rep.complementarity <= 1e-6);

    auto moved = sol;
    for (double& v : moved.x) v += 0.1;
    const auto bad = kkt_report(model, moved);
    CHECK(std::max(bad.stationarity_unscaled, bad.feasibility) > 1e-3);
  }
}

TEST_CASE("iterates stay strictly inside bounds and the barrier never increases") {
  const auto model = bound_qp();
  const auto sol = solve(model);
  REQUIRE(!sol.trace.empty());
  double mu = kInf;
  for (const auto& rec : sol.trace) {
    CHECK(rec.min_bound_distance > 0.0);
    if (!rec.restoration) {
      CHECK(rec.mu <= mu);
      mu = rec.mu;
    }
  }
}

TEST_CASE("solve is deterministic") {
  const auto model = equality_qp();
  const auto a = solve(model);
  const auto b = solve(model);
  CHECK(a.x == b.x);
  CHECK(a.lambda == b.lambda);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("dense and sparse linear algebra agree") {
  const auto model = equality_qp();
  SolverOptions dense;
  dense.linear_solver = LinearSolver::Dense;
  SolverOptions sparse;
  sparse.linear_solver = LinearSolver::Sparse;
  const auto a = solve(model, dense);
  const auto b = solve(model, sparse);
  REQUIRE(a.status == SolveStatus::Converged);
  REQUIRE(b.status == SolveStatus::Converged);
  CHECK(std::abs(a.x[0] - b.x[0]) <= 1e-9);
  CHECK(std::abs(a.x[1] - b.x[1]) <= 1e-9);
}

TEST_CASE("non-finite residuals are reported with the constraint") {
  FunctionalNlp model(
      {-kInf}, {kInf}, {0.0}, 1, [](auto x) { return x[0] * x[0]; }, [](auto x, auto g) { g[0] = 2 * x[0]; },
      [](auto, auto c) { c[0] = std::nan(""); }, [](auto) { return dense_to_sparse(1, 1, {1.0}); });
  CHECK_THROWS_WITH_AS(solve(model), doctest::Contains("c[0]"), hvdc::SolverError);
}

TEST_CASE("dimension mismatch is rejected") {
  FunctionalNlp model(
      {0.0, 0.0}, {1.0}, {0.5}, 0, [](auto) { return 0.0; }, [](auto, auto) {}, [](auto, auto) {},
      [](auto) { return Eigen::SparseMatrix<double>(0, 1); });
  CHECK_THROWS_AS(solve(model), hvdc::SolverError);
}

TEST_CASE("variables with equal bounds are held and get closing multipliers") {
  // equality QP with x held at 0.25: y = 0.75, lambda = 2(y-1) = -0.5,
  // and x's bound multiplier balances 2(x-2) - lambda = -3.
  auto base = equality_qp();
  FunctionalNlp held(
      {0.25, -kInf}, {0.25, kInf}, {0.25, 0.0}, 1,
      [&](auto x) { return base.objective(x); }, [&](auto x, auto g) { base.gradient(x, g); },
      [&](auto x, auto c) { base.constraints(x, c); }, [&](auto x) { return base.jacobian(x); });
  const auto sol = solve(held);
  REQUIRE(sol.status == SolveStatus::Converged);
  CHECK(sol.x[0] == 0.25);
  CHECK(std::abs(sol.x[1] - 0.75) <= 1e-8);
  CHECK(std::abs(sol.lambda[0] + 0.5) <= 1e-6);
  CHECK(std::abs(sol.z_upper[0] - 3.0) <= 1e-6);
  CHECK(sol.z_lower[0] == 0.0);
  const auto rep = kkt_report(held, sol);
  CHECK(rep.stationarity <= 1e-6);
  CHECK(rep.feasibility <= 1e-8);
}
