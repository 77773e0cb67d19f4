#pragma once

// Primal-dual interior-point solver for
//
//     min f(x)   s.t.   c(x) = 0,   l <= x <= u
//
// Bounds are handled with logarithmic barriers; each iteration takes a Newton
// step on the perturbed KKT system, truncated by the fraction-to-boundary
// rule and globalized by an Armijo backtracking search on the l1 merit
// function. When progress on c(x) stalls, a feasibility restoration phase
// minimizes ||c(x)||^2 inside the bounds; if that stalls too the problem is
// declared infeasible and the least-violation point is returned.
//
// Multiplier convention: L(x, lambda, zl, zu) = f - lambda' c - zl'(x - l) + zu'(x - u).

#include <Eigen/SparseCore>

#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace hvdc::nlp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

class NlpModel {
 public:
  virtual ~NlpModel() = default;

  virtual std::size_t num_variables() const = 0;
  virtual std::size_t num_constraints() const = 0;
  virtual std::span<const double> lower_bounds() const = 0;
  virtual std::span<const double> upper_bounds() const = 0;
  virtual std::span<const double> initial_point() const = 0;

  virtual double objective(std::span<const double> x) const = 0;
  virtual void gradient(std::span<const double> x, std::span<double> grad) const = 0;
  virtual void constraints(std::span<const double> x, std::span<double> values) const = 0;
  virtual Eigen::SparseMatrix<double> jacobian(std::span<const double> x) const = 0;

  virtual std::string constraint_name(std::size_t i) const { return "c[" + std::to_string(i) + "]"; }
  virtual std::string variable_name(std::size_t j) const { return "x[" + std::to_string(j) + "]"; }
};

/// Small models assembled from callables; used for analytic problems.
class FunctionalNlp final : public NlpModel {
 public:
  using Scalar = std::function<double(std::span<const double>)>;
  using Vector = std::function<void(std::span<const double>, std::span<double>)>;
  using Matrix = std::function<Eigen::SparseMatrix<double>(std::span<const double>)>;

  FunctionalNlp(std::vector<double> lower, std::vector<double> upper, std::vector<double> x0, std::size_t num_constraints,
                Scalar objective, Vector gradient, Vector constraints, Matrix jacobian)
      : lower_(std::move(lower)), upper_(std::move(upper)), x0_(std::move(x0)), m_(num_constraints),
        f_(std::move(objective)), g_(std::move(gradient)), c_(std::move(constraints)), j_(std::move(jacobian)) {}

  std::size_t num_variables() const override { return x0_.size(); }
  std::size_t num_constraints() const override { return m_; }
  std::span<const double> lower_bounds() const override { return lower_; }
  std::span<const double> upper_bounds() const override { return upper_; }
  std::span<const double> initial_point() const override { return x0_; }
  double objective(std::span<const double> x) const override { return f_(x); }
  void gradient(std::span<const double> x, std::span<double> g) const override { g_(x, g); }
  void constraints(std::span<const double> x, std::span<double> c) const override { c_(x, c); }
  Eigen::SparseMatrix<double> jacobian(std::span<const double> x) const override { return j_(x); }

 private:
  std::vector<double> lower_, upper_, x0_;
  std::size_t m_;
  Scalar f_;
  Vector g_, c_;
  Matrix j_;
};

enum class LinearSolver { Auto, Dense, Sparse };

struct SolverOptions {
  /// Overall KKT error target (scaled, as in the termination test).
  double tol = 1e-9;
  /// A solution is only reported Converged within these tolerances.
  double feas_tol = 1e-6;
  double opt_tol = 1e-6;
  int max_iter = 300;
  double mu_init = 0.1;
  double mu_linear_factor = 0.2;
  double mu_superlinear_power = 1.5;
  double barrier_tol_factor = 10.0;
  double tau = 0.995;
  double bound_push = 1e-2;
  /// Initial bound multipliers: 1 when false, mu/slack when true (suits warm starts).
  bool mu_based_bound_mult = false;
  /// Finite bounds are widened by this factor times max(1, |bound|);
  /// a negative value tightens them instead. Zero keeps every iterate
  /// strictly inside the model's own bounds.
  double bound_relax = 0.0;
  double armijo_eta = 1e-4;
  /// Restoration: violation reduction below this over `stall_window` iterations is a stall.
  double stall_reduction = 1e-10;
  int stall_window = 10;
  /// At the iteration cap, a violation above this is reported Infeasible.
  double infeasible_violation = 1e-4;
  int acceptable_iter = 15;
  LinearSolver linear_solver = LinearSolver::Auto;
  std::size_t dense_threshold = 500;
  double hessian_fd_step = 1e-6;
  /// The objective is multiplied by one constant so that its largest
  /// gradient entry at the initial point does not exceed this; 0 disables.
  double obj_scaling_max_gradient = 100.0;
};

enum class SolveStatus { Converged, Infeasible, IterationLimit };

std::string_view to_string(SolveStatus status);

struct IterationRecord {
  int iteration = 0;
  double mu = 0.0;
  double objective = 0.0;
  double violation = 0.0;
  double kkt_error = 0.0;
  double alpha_primal = 0.0;
  /// min over bounded slots of the distance to the nearest finite bound.
  double min_bound_distance = kInf;
  double regularization = 0.0;
  bool restoration = false;
};

struct OpfSolution {
  std::vector<double> x;
  std::vector<double> lambda;
  std::vector<double> z_lower;
  std::vector<double> z_upper;
  double objective_value = 0.0;
  double max_residual = 0.0;
  std::string worst_constraint;
  double kkt_stationarity = 0.0;
  double complementarity = 0.0;
  SolveStatus status = SolveStatus::IterationLimit;
  int iterations = 0;
  std::string message;
  std::vector<IterationRecord> trace;
};

OpfSolution solve(const NlpModel& model, const SolverOptions& options = {});

/// Feasibility, stationarity and complementarity recomputed from the model
/// and the returned primal/dual point, independently of solver bookkeeping.
struct KktReport {
  double feasibility = 0.0;
  double stationarity = 0.0;
  double stationarity_unscaled = 0.0;
  double complementarity = 0.0;
};

KktReport kkt_report(const NlpModel& model, const OpfSolution& solution);

}  // namespace hvdc::nlp
