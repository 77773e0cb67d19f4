#include "hvdc/nlp_solver.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <optional>
#include <sstream>

#include "hvdc/error.hpp"

namespace hvdc::nlp {

std::string_view to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::IterationLimit: return "iteration-limit";
  }
  return "?";
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using SparseMat = Eigen::SparseMatrix<double>;

constexpr double kScaleMax = 100.0;       // s_max in the scaled optimality error
constexpr double kZSafeguard = 1e10;      // bound multipliers kept within this factor of mu / slack
constexpr double kRoundoff = 10.0 * std::numeric_limits<double>::epsilon();  // Armijo slack for merit roundoff
constexpr double kMinCurvature = 1e-12;   // accept a step when d'(W + Sigma)d >= this * d'd

VectorXd to_vec(std::span<const double> s) { return Eigen::Map<const VectorXd>(s.data(), static_cast<Eigen::Index>(s.size())); }
std::span<const double> as_span(const VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

struct Evaluation {
  double f = 0.0;
  VectorXd g;
  VectorXd c;
  SparseMat jac;
};

struct KktErrors {
  double stationarity_scaled = 0.0;
  double stationarity = 0.0;
  double violation = 0.0;
  double complementarity_scaled = 0.0;
  double overall = 0.0;
};

class InteriorPoint {
 public:
  InteriorPoint(const NlpModel& model, const SolverOptions& options);
  OpfSolution run();

 private:
  Evaluation evaluate(const VectorXd& x, bool check_finite) const;
  KktErrors errors(const Evaluation& ev, double mu) const;
  MatrixXd lagrangian_hessian(const VectorXd& x, const VectorXd& lambda) const;
  VectorXd lagrangian_gradient(const VectorXd& x, const VectorXd& lambda) const;
  std::optional<VectorXd> solve_augmented(const MatrixXd& h_block, const SparseMat& jac, double delta_c,
                                          const VectorXd& rhs) const;
  VectorXd initial_multipliers(const Evaluation& ev) const;
  double barrier_value(const VectorXd& x, double f, double mu) const;
  double max_step(const VectorXd& x, const VectorXd& dx) const;
  double max_dual_step(const VectorXd& z, const VectorXd& dz) const;
  double min_bound_distance(const VectorXd& x) const;
  bool restoration(int& iteration, OpfSolution& out);
  void finish(OpfSolution& out, const std::string& message);

  const NlpModel& model_;
  SolverOptions opt_;
  std::size_t n_ = 0;
  std::size_t m_ = 0;
  VectorXd lower_, upper_;
  std::vector<bool> has_lower_, has_upper_;
  bool dense_ = true;

  VectorXd x_, lambda_, zl_, zu_;
  double mu_ = 0.1;
  double nu_ = 1.0;
  double last_delta_w_ = 0.0;
  double obj_scale_ = 1.0;
  std::vector<IterationRecord> trace_;
};

InteriorPoint::InteriorPoint(const NlpModel& model, const SolverOptions& options) : model_(model), opt_(options) {
  n_ = model.num_variables();
  m_ = model.num_constraints();
  const auto lo = model.lower_bounds();
  const auto up = model.upper_bounds();
  const auto x0 = model.initial_point();
  if (lo.size() != n_ || up.size() != n_ || x0.size() != n_) {
    throw SolverError("dimension mismatch: bounds/initial point do not match the number of variables");
  }
  if (m_ > n_ + m_) throw SolverError("dimension mismatch");
  lower_ = to_vec(lo);
  upper_ = to_vec(up);
  has_lower_.resize(n_);
  has_upper_.resize(n_);
  x_ = to_vec(x0);
  for (std::size_t i = 0; i < n_; ++i) {
    double& l = lower_[i];
    double& u = upper_[i];
    if (l > u) throw SolverError("lower bound exceeds upper bound for " + model.variable_name(i));
    // Every finite bound is moved by bound_relax (outward when positive,
    // inward when negative). Ranges too narrow to tighten are relaxed instead
    // so that pinned variables keep a strict interior.
    const double shift_l = opt_.bound_relax * std::max(1.0, std::abs(l));
    const double shift_u = opt_.bound_relax * std::max(1.0, std::abs(u));
    const bool narrow = std::isfinite(l) && std::isfinite(u) && u - l <= 4.0 * (std::abs(shift_l) + std::abs(shift_u));
    if (std::isfinite(l)) l -= narrow ? std::abs(shift_l) : shift_l;
    if (std::isfinite(u)) u += narrow ? std::abs(shift_u) : shift_u;
    has_lower_[i] = std::isfinite(l);
    has_upper_[i] = std::isfinite(u);
    // Project the initial point strictly inside the bounds.
    double push_l = opt_.bound_push * std::max(1.0, std::abs(l));
    double push_u = opt_.bound_push * std::max(1.0, std::abs(u));
    if (has_lower_[i] && has_upper_[i]) {
      push_l = std::min(push_l, opt_.bound_push * (u - l));
      push_u = std::min(push_u, opt_.bound_push * (u - l));
    }
    if (has_lower_[i]) x_[i] = std::max(x_[i], l + push_l);
    if (has_upper_[i]) x_[i] = std::min(x_[i], u - push_u);
  }
  dense_ = opt_.linear_solver == LinearSolver::Dense ||
           (opt_.linear_solver == LinearSolver::Auto && n_ < opt_.dense_threshold);
  zl_ = VectorXd::Zero(static_cast<Eigen::Index>(n_));
  zu_ = VectorXd::Zero(static_cast<Eigen::Index>(n_));
  mu_ = opt_.mu_init;
  for (std::size_t i = 0; i < n_; ++i) {
    if (has_lower_[i]) zl_[i] = opt_.mu_based_bound_mult ? mu_ / (x_[i] - lower_[i]) : 1.0;
    if (has_upper_[i]) zu_[i] = opt_.mu_based_bound_mult ? mu_ / (upper_[i] - x_[i]) : 1.0;
  }
  if (opt_.obj_scaling_max_gradient > 0.0) {
    // One scalar for the objective so that its largest initial gradient
    // entry is at most obj_scaling_max_gradient. Constraints are not touched.
    std::vector<double> g(n_);
    model.gradient(as_span(x_), g);
    double gmax = 0.0;
    for (double v : g)
      if (std::isfinite(v)) gmax = std::max(gmax, std::abs(v));
    if (gmax > opt_.obj_scaling_max_gradient) obj_scale_ = opt_.obj_scaling_max_gradient / gmax;
  }
}

Evaluation InteriorPoint::evaluate(const VectorXd& x, bool check_finite) const {
  Evaluation ev;
  const auto xs = as_span(x);
  ev.f = obj_scale_ * model_.objective(xs);
  ev.g.resize(static_cast<Eigen::Index>(n_));
  model_.gradient(xs, {ev.g.data(), n_});
  ev.g *= obj_scale_;
  ev.c.resize(static_cast<Eigen::Index>(m_));
  model_.constraints(xs, {ev.c.data(), m_});
  ev.jac = model_.jacobian(xs);
  if (static_cast<std::size_t>(ev.jac.rows()) != m_ || static_cast<std::size_t>(ev.jac.cols()) != n_) {
    throw SolverError("dimension mismatch: Jacobian is " + std::to_string(ev.jac.rows()) + "x" +
                      std::to_string(ev.jac.cols()) + ", expected " + std::to_string(m_) + "x" + std::to_string(n_));
  }
  if (check_finite) {
    if (!std::isfinite(ev.f)) throw SolverError("non-finite objective value");
    for (std::size_t i = 0; i < n_; ++i)
      if (!std::isfinite(ev.g[i])) throw SolverError("non-finite objective gradient at " + model_.variable_name(i));
    for (std::size_t i = 0; i < m_; ++i)
      if (!std::isfinite(ev.c[i])) throw SolverError("non-finite residual in constraint " + model_.constraint_name(i));
    for (Eigen::Index k = 0; k < ev.jac.outerSize(); ++k)
      for (SparseMat::InnerIterator it(ev.jac, k); it; ++it)
        if (!std::isfinite(it.value()))
          throw SolverError("non-finite Jacobian entry in constraint " + model_.constraint_name(it.row()));
  }
  return ev;
}

VectorXd InteriorPoint::lagrangian_gradient(const VectorXd& x, const VectorXd& lambda) const {
  VectorXd g(static_cast<Eigen::Index>(n_));
  model_.gradient(as_span(x), {g.data(), n_});
  g *= obj_scale_;
  if (m_ > 0) g -= model_.jacobian(as_span(x)).transpose() * lambda;
  return g;
}

// Central differences of grad f - J' lambda, symmetrized.
MatrixXd InteriorPoint::lagrangian_hessian(const VectorXd& x, const VectorXd& lambda) const {
  const auto n = static_cast<Eigen::Index>(n_);
  MatrixXd h(n, n);
  VectorXd xp = x;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double step = opt_.hessian_fd_step * std::max(1.0, std::abs(x[j]));
    const double orig = xp[j];
    xp[j] = orig + step;
    const VectorXd gp = lagrangian_gradient(xp, lambda);
    xp[j] = orig - step;
    const VectorXd gm = lagrangian_gradient(xp, lambda);
    xp[j] = orig;
    h.col(j) = (gp - gm) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

std::optional<VectorXd> InteriorPoint::solve_augmented(const MatrixXd& h_block, const SparseMat& jac, double delta_c,
                                                       const VectorXd& rhs) const {
  const auto n = static_cast<Eigen::Index>(n_);
  const auto m = static_cast<Eigen::Index>(m_);
  VectorXd sol;
  if (dense_) {
    MatrixXd k = MatrixXd::Zero(n + m, n + m);
    k.topLeftCorner(n, n) = h_block;
    if (m > 0) {
      const MatrixXd jd(jac);
      k.topRightCorner(n, m) = jd.transpose();
      k.bottomLeftCorner(m, n) = jd;
      k.bottomRightCorner(m, m).diagonal().setConstant(-delta_c);
    }
    Eigen::FullPivLU<MatrixXd> lu(k);
    if (!lu.isInvertible()) return std::nullopt;
    sol = lu.solve(rhs);
  } else {
    std::vector<Eigen::Triplet<double>> trip;
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i)
        if (h_block(i, j) != 0.0 || i == j) trip.emplace_back(i, j, h_block(i, j));
    for (Eigen::Index k = 0; k < jac.outerSize(); ++k) {
      for (SparseMat::InnerIterator it(jac, k); it; ++it) {
        trip.emplace_back(n + it.row(), it.col(), it.value());
        trip.emplace_back(it.col(), n + it.row(), it.value());
      }
    }
    for (Eigen::Index i = 0; i < m; ++i) trip.emplace_back(n + i, n + i, -delta_c);
    SparseMat k(n + m, n + m);
    k.setFromTriplets(trip.begin(), trip.end());
    k.makeCompressed();
    Eigen::SparseLU<SparseMat, Eigen::COLAMDOrdering<int>> lu;
    lu.analyzePattern(k);
    lu.factorize(k);
    if (lu.info() != Eigen::Success) return std::nullopt;
    sol = lu.solve(rhs);
    if (lu.info() != Eigen::Success) return std::nullopt;
  }
  if (!sol.allFinite()) return std::nullopt;
  return sol;
}

VectorXd InteriorPoint::initial_multipliers(const Evaluation& ev) const {
  const auto n = static_cast<Eigen::Index>(n_);
  const auto m = static_cast<Eigen::Index>(m_);
  if (m == 0) return VectorXd();
  // Least-squares estimate of lambda from J' lambda = g - zl + zu.
  VectorXd rhs = VectorXd::Zero(n + m);
  rhs.head(n) = ev.g - zl_ + zu_;
  auto sol = solve_augmented(MatrixXd::Identity(n, n), ev.jac, 1e-8, rhs);
  if (!sol) return VectorXd::Zero(m);
  VectorXd lambda = sol->tail(m);
  if (lambda.lpNorm<Eigen::Infinity>() > 1e3) lambda.setZero();
  return lambda;
}

KktErrors InteriorPoint::errors(const Evaluation& ev, double mu) const {
  KktErrors e;
  VectorXd rd = ev.g - zl_ + zu_;
  if (m_ > 0) rd -= ev.jac.transpose() * lambda_;
  e.stationarity = rd.size() ? rd.lpNorm<Eigen::Infinity>() : 0.0;
  e.violation = m_ ? ev.c.lpNorm<Eigen::Infinity>() : 0.0;
  double zsum = zl_.lpNorm<1>() + zu_.lpNorm<1>();
  std::size_t nb = 0;
  double compl_err = 0.0;
  for (std::size_t i = 0; i < n_; ++i) {
    if (has_lower_[i]) {
      ++nb;
      compl_err = std::max(compl_err, std::abs(zl_[i] * (x_[i] - lower_[i]) - mu));
    }
    if (has_upper_[i]) {
      ++nb;
      compl_err = std::max(compl_err, std::abs(zu_[i] * (upper_[i] - x_[i]) - mu));
    }
  }
  const double lsum = m_ ? lambda_.lpNorm<1>() : 0.0;
  const double sd = std::max(kScaleMax, (lsum + zsum) / std::max<double>(1.0, static_cast<double>(m_ + nb))) / kScaleMax;
  const double sc = std::max(kScaleMax, zsum / std::max<double>(1.0, static_cast<double>(nb))) / kScaleMax;
  e.stationarity_scaled = e.stationarity / sd;
  e.complementarity_scaled = compl_err / sc;
  e.overall = std::max({e.stationarity_scaled, e.violation, e.complementarity_scaled});
  return e;
}

double InteriorPoint::barrier_value(const VectorXd& x, double f, double mu) const {
  double v = f;
  for (std::size_t i = 0; i < n_; ++i) {
    if (has_lower_[i]) v -= mu * std::log(x[i] - lower_[i]);
    if (has_upper_[i]) v -= mu * std::log(upper_[i] - x[i]);
  }
  return v;
}

double InteriorPoint::max_step(const VectorXd& x, const VectorXd& dx) const {
  double alpha = 1.0;
  for (std::size_t i = 0; i < n_; ++i) {
    if (has_lower_[i] && dx[i] < 0.0) alpha = std::min(alpha, -opt_.tau * (x[i] - lower_[i]) / dx[i]);
    if (has_upper_[i] && dx[i] > 0.0) alpha = std::min(alpha, opt_.tau * (upper_[i] - x[i]) / dx[i]);
  }
  return alpha;
}

double InteriorPoint::max_dual_step(const VectorXd& z, const VectorXd& dz) const {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (z[i] > 0.0 && dz[i] < 0.0) alpha = std::min(alpha, -opt_.tau * z[i] / dz[i]);
  }
  return alpha;
}

double InteriorPoint::min_bound_distance(const VectorXd& x) const {
  double d = kInf;
  for (std::size_t i = 0; i < n_; ++i) {
    if (has_lower_[i]) d = std::min(d, x[i] - lower_[i]);
    if (has_upper_[i]) d = std::min(d, upper_[i] - x[i]);
  }
  return d;
}

// Gauss-Newton / Levenberg-Marquardt on 0.5 ||c||^2 with a vanishing barrier
// that keeps the iterates inside the bounds. Returns true when the violation
// dropped enough to resume the main loop.
bool InteriorPoint::restoration(int& iteration, OpfSolution& out) {
  Evaluation ev = evaluate(x_, true);
  const double theta_entry = ev.c.lpNorm<Eigen::Infinity>();
  // The barrier must stay well below 0.5 ||c||^2 or it steers the steps.
  double mu_r = std::min(mu_, std::max(1e-16, 1e-4 * theta_entry * theta_entry));
  double rho = 1e-8;
  VectorXd best_x = x_;
  double best_theta = theta_entry;
  std::deque<double> history{theta_entry};

  while (iteration < opt_.max_iter) {
    ++iteration;
    VectorXd grad = ev.jac.transpose() * ev.c;
    MatrixXd h = MatrixXd(ev.jac.transpose() * ev.jac);
    for (std::size_t i = 0; i < n_; ++i) {
      if (has_lower_[i]) {
        const double s = x_[i] - lower_[i];
        grad[i] -= mu_r / s;
        h(i, i) += mu_r / (s * s);
      }
      if (has_upper_[i]) {
        const double s = upper_[i] - x_[i];
        grad[i] += mu_r / s;
        h(i, i) += mu_r / (s * s);
      }
    }
    const double psi0 = 0.5 * ev.c.squaredNorm() + barrier_value(x_, 0.0, mu_r);
    bool accepted = false;
    double alpha = 0.0;
    for (int attempt = 0; attempt < 30 && !accepted; ++attempt) {
      MatrixXd hr = h;
      hr.diagonal().array() += rho * std::max(1.0, ev.c.squaredNorm());
      Eigen::LDLT<MatrixXd> ldlt(hr);
      VectorXd dx = ldlt.solve(-grad);
      if (ldlt.info() != Eigen::Success || !dx.allFinite()) {
        rho *= 10.0;
        continue;
      }
      const double slope = grad.dot(dx);
      alpha = max_step(x_, dx);
      while (alpha > 1e-14) {
        VectorXd trial = x_ + alpha * dx;
        VectorXd c(static_cast<Eigen::Index>(m_));
        model_.constraints(as_span(trial), {c.data(), m_});
        const double psi = 0.5 * c.squaredNorm() + barrier_value(trial, 0.0, mu_r);
        if (std::isfinite(psi) && psi <= psi0 + opt_.armijo_eta * alpha * slope + kRoundoff * std::abs(psi0)) {
          x_ = trial;
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) rho *= 10.0;
    }
    if (accepted) rho = std::max(1e-12, rho / 3.0);
    mu_r = std::max(1e-16, 0.2 * mu_r);

    ev = evaluate(x_, true);
    const double theta = ev.c.lpNorm<Eigen::Infinity>();
    if (theta < best_theta) {
      best_theta = theta;
      best_x = x_;
    }
    IterationRecord rec;
    rec.iteration = iteration;
    rec.mu = mu_r;
    rec.objective = ev.f / obj_scale_;
    rec.violation = theta;
    rec.alpha_primal = accepted ? alpha : 0.0;
    rec.min_bound_distance = min_bound_distance(x_);
    rec.regularization = rho;
    rec.restoration = true;
    trace_.push_back(rec);

    if (theta <= opt_.feas_tol || theta <= 0.1 * theta_entry) {
      lambda_ = initial_multipliers(ev);
      for (std::size_t i = 0; i < n_; ++i) {
        if (has_lower_[i]) zl_[i] = std::min(std::max(zl_[i], mu_ / (x_[i] - lower_[i]) / kZSafeguard), 1e3);
        if (has_upper_[i]) zu_[i] = std::min(std::max(zu_[i], mu_ / (upper_[i] - x_[i]) / kZSafeguard), 1e3);
      }
      return true;
    }
    history.push_back(best_theta);
    if (static_cast<int>(history.size()) > opt_.stall_window) {
      const double reduction = history.front() - history.back();
      history.pop_front();
      if (reduction < opt_.stall_reduction) {
        x_ = best_x;
        std::ostringstream msg;
        msg << "feasibility restoration stalled: violation reduction " << reduction << " over " << opt_.stall_window
            << " iterations at violation " << best_theta;
        out.message = msg.str();
        return false;
      }
    }
  }
  x_ = best_x;
  out.message = "iteration limit reached during feasibility restoration";
  return false;
}

void InteriorPoint::finish(OpfSolution& out, const std::string& message) {
  const Evaluation ev = evaluate(x_, false);
  out.x.assign(x_.data(), x_.data() + x_.size());
  for (double v : lambda_) out.lambda.push_back(v / obj_scale_);
  for (double v : zl_) out.z_lower.push_back(v / obj_scale_);
  for (double v : zu_) out.z_upper.push_back(v / obj_scale_);
  out.objective_value = ev.f / obj_scale_;
  const KktErrors e = errors(ev, 0.0);
  out.max_residual = e.violation;
  out.kkt_stationarity = e.stationarity_scaled;
  out.complementarity = e.complementarity_scaled;
  out.worst_constraint.clear();
  if (m_ > 0) {
    Eigen::Index worst = 0;
    ev.c.cwiseAbs().maxCoeff(&worst);
    out.worst_constraint = model_.constraint_name(static_cast<std::size_t>(worst));
  }
  if (out.message.empty()) out.message = message;
  out.trace = trace_;
}

OpfSolution InteriorPoint::run() {
  OpfSolution out;
  const auto n = static_cast<Eigen::Index>(n_);
  const auto m = static_cast<Eigen::Index>(m_);
  Evaluation ev = evaluate(x_, true);
  lambda_ = initial_multipliers(ev);

  int iteration = 0;
  int acceptable_count = 0;
  const double mu_min = opt_.tol / 10.0;

  while (true) {
    KktErrors err = errors(ev, 0.0);
    if (err.overall <= opt_.tol) {
      out.status = SolveStatus::Converged;
      out.iterations = iteration;
      finish(out, "optimal solution found");
      return out;
    }
    if (err.violation <= opt_.feas_tol && err.stationarity_scaled <= opt_.opt_tol &&
        err.complementarity_scaled <= opt_.opt_tol) {
      if (++acceptable_count >= opt_.acceptable_iter) {
        out.status = SolveStatus::Converged;
        out.iterations = iteration;
        finish(out, "solved to acceptable level");
        return out;
      }
    } else {
      acceptable_count = 0;
    }
    if (iteration >= opt_.max_iter) break;

    // Barrier update (monotone).
    KktErrors err_mu = errors(ev, mu_);
    while (err_mu.overall <= opt_.barrier_tol_factor * mu_ && mu_ > mu_min) {
      mu_ = std::max(mu_min, std::min(opt_.mu_linear_factor * mu_, std::pow(mu_, opt_.mu_superlinear_power)));
      err_mu = errors(ev, mu_);
    }

    std::optional<VectorXd> step;
    VectorXd dx, dlambda;
    double delta_w = 0.0;
    double curvature_term = 0.0;
    {
      const MatrixXd w = lagrangian_hessian(x_, lambda_);
      VectorXd sigma = VectorXd::Zero(n);
      VectorXd grad_barrier = ev.g;
      for (std::size_t i = 0; i < n_; ++i) {
        if (has_lower_[i]) {
          const double s = x_[i] - lower_[i];
          sigma[i] += zl_[i] / s;
          grad_barrier[i] -= mu_ / s;
        }
        if (has_upper_[i]) {
          const double s = upper_[i] - x_[i];
          sigma[i] += zu_[i] / s;
          grad_barrier[i] += mu_ / s;
        }
      }
      VectorXd rhs(n + m);
      rhs.head(n) = -(grad_barrier - (m ? VectorXd(ev.jac.transpose() * lambda_) : VectorXd::Zero(n)));
      if (m) rhs.tail(m) = -ev.c;

      // Dense problems test the inertia condition exactly: the Hessian block
      // must be positive definite on the null space of J.
      MatrixXd null_basis;
      bool exact_inertia = dense_;
      if (exact_inertia) {
        if (m == 0) {
          null_basis = MatrixXd::Identity(n, n);
        } else {
          Eigen::FullPivLU<MatrixXd> jlu{MatrixXd(ev.jac)};
          if (jlu.dimensionOfKernel() > 0) null_basis = jlu.kernel();
        }
      }

      double delta_c = 0.0;
      for (int attempt = 0; attempt < 60; ++attempt) {
        MatrixXd h = w;
        h.diagonal() += sigma;
        h.diagonal().array() += delta_w;
        step = solve_augmented(h, ev.jac, delta_c, rhs);
        bool ok = step.has_value();
        if (!ok && delta_c == 0.0 && m > 0) {
          delta_c = 1e-8 * std::pow(mu_, 0.25);
          continue;
        }
        if (ok) {
          const VectorXd d = step->head(n);
          const double curvature = d.dot(h * d);
          if (exact_inertia) {
            ok = null_basis.cols() == 0 ||
                 Eigen::LLT<MatrixXd>(null_basis.transpose() * h * null_basis).info() == Eigen::Success;
          } else {
            ok = curvature >= kMinCurvature * d.squaredNorm();
          }
          if (ok) curvature_term = 0.5 * std::max(0.0, curvature);
        }
        if (ok) break;
        if (delta_w == 0.0) delta_w = last_delta_w_ == 0.0 ? 1e-4 : std::max(1e-20, last_delta_w_ / 3.0);
        else delta_w *= last_delta_w_ == 0.0 ? 100.0 : 8.0;
        step.reset();
        if (delta_w > 1e40) break;
      }
      if (step && delta_w > 0.0) last_delta_w_ = delta_w;
      if (step) {
        dx = step->head(n);
        dlambda = m ? VectorXd(-step->tail(m)) : VectorXd();
      }
    }

    double alpha = 0.0;
    bool accepted = false;
    if (step) {
      VectorXd dzl = VectorXd::Zero(n);
      VectorXd dzu = VectorXd::Zero(n);
      VectorXd grad_barrier = ev.g;
      for (std::size_t i = 0; i < n_; ++i) {
        if (has_lower_[i]) {
          const double s = x_[i] - lower_[i];
          dzl[i] = mu_ / s - zl_[i] - zl_[i] / s * dx[i];
          grad_barrier[i] -= mu_ / s;
        }
        if (has_upper_[i]) {
          const double s = upper_[i] - x_[i];
          dzu[i] = mu_ / s - zu_[i] + zu_[i] / s * dx[i];
          grad_barrier[i] += mu_ / s;
        }
      }
      // l1 merit penalty: large enough for dx to be a descent direction.
      const double c_norm1 = m ? ev.c.lpNorm<1>() : 0.0;
      const double slope_f = grad_barrier.dot(dx);
      // Smallest penalty that makes dx a descent direction with margin; not
      // kept monotone, since an inflated penalty stalls steps on curved
      // constraints.
      nu_ = m ? 1.1 * (lambda_ + dlambda).lpNorm<Eigen::Infinity>() : 0.0;
      if (c_norm1 > 0.0) nu_ = std::max(nu_, 2.0 * (slope_f + curvature_term) / (0.9 * c_norm1));
      const double slope = slope_f - nu_ * c_norm1;
      const double merit0 = barrier_value(x_, ev.f, mu_) + nu_ * c_norm1;

      alpha = max_step(x_, dx);
      while (alpha > 1e-14) {
        VectorXd trial = x_ + alpha * dx;
        const double f = obj_scale_ * model_.objective(as_span(trial));
        VectorXd c(m);
        model_.constraints(as_span(trial), {c.data(), m_});
        const double merit = barrier_value(trial, f, mu_) + nu_ * (m ? c.lpNorm<1>() : 0.0);
        if (std::isfinite(merit) &&
            merit <= merit0 + opt_.armijo_eta * alpha * std::min(slope, 0.0) + kRoundoff * std::abs(merit0)) {
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (accepted) {
        const double alpha_z = std::min(max_dual_step(zl_, dzl), max_dual_step(zu_, dzu));
        x_ += alpha * dx;
        if (m) lambda_ += alpha * dlambda;
        zl_ += alpha_z * dzl;
        zu_ += alpha_z * dzu;
        for (std::size_t i = 0; i < n_; ++i) {
          if (has_lower_[i]) {
            const double s = x_[i] - lower_[i];
            zl_[i] = std::clamp(zl_[i], mu_ / (kZSafeguard * s), kZSafeguard * mu_ / s);
          }
          if (has_upper_[i]) {
            const double s = upper_[i] - x_[i];
            zu_[i] = std::clamp(zu_[i], mu_ / (kZSafeguard * s), kZSafeguard * mu_ / s);
          }
        }
      }
    }

    if (!accepted) {
      if (!restoration(iteration, out)) {
        out.status = SolveStatus::Infeasible;
        out.iterations = iteration;
        finish(out, "");
        return out;
      }
      ev = evaluate(x_, true);
      continue;
    }

    ++iteration;
    ev = evaluate(x_, true);
    IterationRecord rec;
    rec.iteration = iteration;
    rec.mu = mu_;
    rec.objective = ev.f / obj_scale_;
    rec.violation = m ? ev.c.lpNorm<Eigen::Infinity>() : 0.0;
    rec.kkt_error = err.overall;
    rec.alpha_primal = alpha;
    rec.min_bound_distance = min_bound_distance(x_);
    rec.regularization = delta_w;
    trace_.push_back(rec);
  }

  out.iterations = iteration;
  const KktErrors err = errors(ev, 0.0);
  if (err.violation <= opt_.feas_tol && err.stationarity_scaled <= opt_.opt_tol) {
    out.status = SolveStatus::Converged;
    finish(out, "iteration limit reached at an acceptable point");
  } else if (err.violation > opt_.infeasible_violation) {
    out.status = SolveStatus::Infeasible;
    finish(out, "iteration limit reached with constraint violation above the infeasibility threshold");
  } else {
    out.status = SolveStatus::IterationLimit;
    finish(out, "iteration limit reached");
  }
  return out;
}

// Variables with lo == hi are held as parameters; a barrier on a zero-width
// box has no interior.
class FixedVariablesRemoved final : public NlpModel {
 public:
  FixedVariablesRemoved(const NlpModel& full, std::vector<std::size_t> free) : full_(full), free_(std::move(free)) {
    const auto lo = full.lower_bounds(), up = full.upper_bounds(), x0 = full.initial_point();
    x_full_.assign(x0.begin(), x0.end());
    col_.assign(full.num_variables(), -1);
    for (std::size_t k = 0; k < free_.size(); ++k) {
      col_[free_[k]] = static_cast<int>(k);
      lower_.push_back(lo[free_[k]]);
      upper_.push_back(up[free_[k]]);
      x0_.push_back(x0[free_[k]]);
    }
    for (std::size_t j = 0; j < col_.size(); ++j)
      if (col_[j] < 0) x_full_[j] = lo[j];
  }

  std::size_t num_variables() const override { return free_.size(); }
  std::size_t num_constraints() const override { return full_.num_constraints(); }
  std::span<const double> lower_bounds() const override { return lower_; }
  std::span<const double> upper_bounds() const override { return upper_; }
  std::span<const double> initial_point() const override { return x0_; }

  double objective(std::span<const double> x) const override { return full_.objective(expand(x)); }
  void gradient(std::span<const double> x, std::span<double> grad) const override {
    std::vector<double> g(full_.num_variables());
    full_.gradient(expand(x), g);
    for (std::size_t k = 0; k < free_.size(); ++k) grad[k] = g[free_[k]];
  }
  void constraints(std::span<const double> x, std::span<double> values) const override {
    full_.constraints(expand(x), values);
  }
  Eigen::SparseMatrix<double> jacobian(std::span<const double> x) const override {
    const SparseMat j = full_.jacobian(expand(x));
    std::vector<Eigen::Triplet<double>> t;
    for (Eigen::Index k = 0; k < j.outerSize(); ++k)
      for (SparseMat::InnerIterator it(j, k); it; ++it)
        if (const int c = col_[static_cast<std::size_t>(it.col())]; c >= 0) t.emplace_back(it.row(), c, it.value());
    SparseMat r(j.rows(), static_cast<Eigen::Index>(free_.size()));
    r.setFromTriplets(t.begin(), t.end());
    return r;
  }
  std::string constraint_name(std::size_t i) const override { return full_.constraint_name(i); }
  std::string variable_name(std::size_t j) const override { return full_.variable_name(free_[j]); }

  std::vector<double> expand(std::span<const double> x) const {
    std::vector<double> out = x_full_;
    for (std::size_t k = 0; k < free_.size(); ++k) out[free_[k]] = x[k];
    return out;
  }

 private:
  const NlpModel& full_;
  std::vector<std::size_t> free_;
  std::vector<int> col_;
  std::vector<double> lower_, upper_, x0_, x_full_;
};

OpfSolution solve_reduced(const NlpModel& model, const SolverOptions& options, const std::vector<std::size_t>& free) {
  const FixedVariablesRemoved reduced(model, free);
  InteriorPoint ip(reduced, options);
  OpfSolution sol = ip.run();
  const std::size_t n = model.num_variables();
  const std::vector<double> xr = std::move(sol.x), zl = std::move(sol.z_lower), zu = std::move(sol.z_upper);
  sol.x = reduced.expand(xr);

  // Multipliers of the held variables close the Lagrangian gradient.
  std::vector<double> g(n);
  model.gradient(sol.x, g);
  const SparseMat jac = model.jacobian(sol.x);
  for (Eigen::Index k = 0; k < jac.outerSize(); ++k)
    for (SparseMat::InnerIterator it(jac, k); it; ++it)
      g[static_cast<std::size_t>(it.col())] -= it.value() * sol.lambda[static_cast<std::size_t>(it.row())];
  sol.z_lower.resize(n);
  sol.z_upper.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    sol.z_lower[j] = std::max(0.0, g[j]);
    sol.z_upper[j] = std::max(0.0, -g[j]);
  }
  for (std::size_t k = 0; k < free.size(); ++k) {
    sol.z_lower[free[k]] = zl[k];
    sol.z_upper[free[k]] = zu[k];
  }
  return sol;
}

}  // namespace

OpfSolution solve(const NlpModel& model, const SolverOptions& options) {
  const auto lo = model.lower_bounds(), up = model.upper_bounds();
  std::vector<std::size_t> free;
  for (std::size_t j = 0; j < model.num_variables(); ++j)
    if (!(lo[j] == up[j])) free.push_back(j);
  OpfSolution sol;
  if (free.size() == model.num_variables()) {
    InteriorPoint ip(model, options);
    sol = ip.run();
  } else {
    sol = solve_reduced(model, options, free);
  }
  if (sol.status == SolveStatus::Converged &&
      (sol.max_residual > options.feas_tol || sol.kkt_stationarity > options.opt_tol)) {
    sol.status = SolveStatus::IterationLimit;
  }
  return sol;
}

KktReport kkt_report(const NlpModel& model, const OpfSolution& solution) {
  const std::size_t n = model.num_variables();
  const std::size_t m = model.num_constraints();
  if (solution.x.size() != n || solution.lambda.size() != m || solution.z_lower.size() != n ||
      solution.z_upper.size() != n) {
    throw SolverError("kkt_report: solution dimensions do not match the model");
  }
  KktReport rep;
  std::vector<double> c(m);
  model.constraints(solution.x, c);
  for (double v : c) rep.feasibility = std::max(rep.feasibility, std::abs(v));

  std::vector<double> r(n);
  model.gradient(solution.x, r);
  const Eigen::SparseMatrix<double> jac = model.jacobian(solution.x);
  for (Eigen::Index k = 0; k < jac.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(jac, k); it; ++it) {
      r[static_cast<std::size_t>(it.col())] -= it.value() * solution.lambda[static_cast<std::size_t>(it.row())];
    }
  }
  const auto lo = model.lower_bounds();
  const auto up = model.upper_bounds();
  double lsum = 0.0;
  double zsum = 0.0;
  std::size_t bounded = 0;
  double compl_max = 0.0;
  for (double l : solution.lambda) lsum += std::abs(l);
  for (std::size_t i = 0; i < n; ++i) {
    r[i] += -solution.z_lower[i] + solution.z_upper[i];
    rep.stationarity_unscaled = std::max(rep.stationarity_unscaled, std::abs(r[i]));
    if (std::isfinite(lo[i])) {
      ++bounded;
      zsum += std::abs(solution.z_lower[i]);
      compl_max = std::max(compl_max, std::abs(solution.z_lower[i] * (solution.x[i] - lo[i])));
    }
    if (std::isfinite(up[i])) {
      ++bounded;
      zsum += std::abs(solution.z_upper[i]);
      compl_max = std::max(compl_max, std::abs(solution.z_upper[i] * (up[i] - solution.x[i])));
    }
  }
  const double s_max = 100.0;
  const double sd = std::max(s_max, (lsum + zsum) / std::max(1.0, static_cast<double>(m + bounded))) / s_max;
  const double sc = std::max(s_max, zsum / std::max(1.0, static_cast<double>(bounded))) / s_max;
  rep.stationarity = rep.stationarity_unscaled / sd;
  rep.complementarity = compl_max / sc;
  return rep;
}

}  // namespace hvdc::nlp
