#include "hvdc/opf_problem.hpp"

#include <cmath>

#include "hvdc/error.hpp"

namespace hvdc {

std::string_view to_string(ObjectiveKind kind) { return kind == ObjectiveKind::Cost ? "cost" : "vdev"; }

OpfProblem::OpfProblem(std::shared_ptr<const grid::NetworkCase> network,
                       std::vector<eq::ConverterFormulation> formulation, ObjectiveKind objective,
                       std::optional<std::vector<double>> warm_start)
    : residuals_(std::move(network), std::move(formulation)), objective_(objective) {
  const auto& n = residuals_.network();
  const auto& L = residuals_.layout();
  lower_.assign(L.size(), -nlp::kInf);
  upper_.assign(L.size(), nlp::kInf);
  auto set = [&](int slot, double lo, double hi) {
    if (slot < 0) return;
    lower_[slot] = lo;
    upper_[slot] = hi;
  };
  for (std::size_t i = 0; i < n.ac_buses.size(); ++i) {
    const auto& b = n.ac_buses[i];
    set(L.vm(i), b.v_min, b.v_max);
    set(L.va(i), b.angle_min, b.angle_max);
  }
  for (std::size_t g = 0; g < n.generators.size(); ++g) {
    const auto& gen = n.generators[g];
    set(L.pg(g), gen.p_min, gen.p_max);
    set(L.qg(g), gen.q_min, gen.q_max);
  }
  for (std::size_t d = 0; d < n.dc_buses.size(); ++d) set(L.vdc(d), n.dc_buses[d].v_min, n.dc_buses[d].v_max);
  for (std::size_t c = 0; c < n.converters.size(); ++c) {
    const auto& conv = n.converters[c];
    set(L.pdc(c), conv.p_dc_min, conv.p_dc_max);
    set(L.ic(c), 0.0, conv.i_max);
    const auto& f = residuals_.law(c);
    set(L.k(c), f.k_min, f.k_max);
  }

  if (warm_start) {
    if (warm_start->size() != L.size()) {
      throw SolverError("warm start has " + std::to_string(warm_start->size()) + " entries, layout has " +
                        std::to_string(L.size()));
    }
    x0_ = std::move(*warm_start);
  } else {
    x0_ = flat_start();
  }
}

std::vector<double> OpfProblem::flat_start() const {
  const auto& n = residuals_.network();
  const auto& L = residuals_.layout();
  std::vector<double> x(L.size(), 0.0);
  for (std::size_t i = 0; i < n.ac_buses.size(); ++i) x[L.vm(i)] = 1.0;
  for (std::size_t g = 0; g < n.generators.size(); ++g) {
    const auto& gen = n.generators[g];
    x[L.pg(g)] = 0.5 * (gen.p_min + gen.p_max);
    x[L.qg(g)] = 0.5 * (gen.q_min + gen.q_max);
  }
  for (std::size_t d = 0; d < n.dc_buses.size(); ++d) x[L.vdc(d)] = 1.0;
  for (std::size_t c = 0; c < n.converters.size(); ++c) {
    if (L.k(c) >= 0) x[L.k(c)] = std::sqrt(residuals_.law(c).k_min * residuals_.law(c).k_max);
  }
  return x;
}

void OpfProblem::set_proximal(ProximalTerm term) {
  if (term.center.size() != layout().size()) throw SolverError("proximal center has the wrong dimension");
  proximal_ = std::move(term);
}

double OpfProblem::objective(std::span<const double> x) const {
  double f = objective_ == ObjectiveKind::Cost ? eq::objective_cost(x, residuals_) : eq::objective_vdev(x, residuals_);
  if (proximal_) {
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (layout().key(i).kind == eq::SlotKind::Kdroop) continue;
      const double d = x[i] - proximal_->center[i];
      sum += d * d;
    }
    f += 0.5 * proximal_->weight * sum;
  }
  return f;
}

void OpfProblem::gradient(std::span<const double> x, std::span<double> grad) const {
  if (objective_ == ObjectiveKind::Cost) {
    eq::objective_cost_gradient(x, residuals_, grad);
  } else {
    eq::objective_vdev_gradient(x, residuals_, grad);
  }
  if (proximal_) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (layout().key(i).kind == eq::SlotKind::Kdroop) continue;
      grad[i] += proximal_->weight * (x[i] - proximal_->center[i]);
    }
  }
}

void OpfProblem::constraints(std::span<const double> x, std::span<double> values) const {
  residuals_.evaluate(x, values);
}

Eigen::SparseMatrix<double> OpfProblem::jacobian(std::span<const double> x) const { return residuals_.jacobian(x); }

}  // namespace hvdc
