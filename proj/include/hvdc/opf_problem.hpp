#pragma once

// One OPF stage as a constrained NLP: every residual of a ResidualSet is an
// equality, bounds come from the case, and the objective is cost or Vdev.

#include <memory>
#include <optional>
#include <vector>

#include "hvdc/equations.hpp"
#include "hvdc/nlp_solver.hpp"

namespace hvdc {

enum class ObjectiveKind { Cost, Vdev };

std::string_view to_string(ObjectiveKind kind);

/// weight/2 * sum (x_i - center_i)^2 over every slot except droop gains.
/// Breaks ties in directions the objective does not see.
struct ProximalTerm {
  std::vector<double> center;
  double weight = 0.0;
};

class OpfProblem final : public nlp::NlpModel {
 public:
  /// Flat start unless `warm_start` (in this problem's layout) is given.
  OpfProblem(std::shared_ptr<const grid::NetworkCase> network, std::vector<eq::ConverterFormulation> formulation,
             ObjectiveKind objective, std::optional<std::vector<double>> warm_start = std::nullopt);

  const eq::ResidualSet& residuals() const { return residuals_; }
  const eq::VariableLayout& layout() const { return residuals_.layout(); }
  ObjectiveKind objective_kind() const { return objective_; }

  /// Adds a tie-breaking proximal term to the objective.
  void set_proximal(ProximalTerm term);

  std::size_t num_variables() const override { return lower_.size(); }
  std::size_t num_constraints() const override { return residuals_.size(); }
  std::span<const double> lower_bounds() const override { return lower_; }
  std::span<const double> upper_bounds() const override { return upper_; }
  std::span<const double> initial_point() const override { return x0_; }

  double objective(std::span<const double> x) const override;
  void gradient(std::span<const double> x, std::span<double> grad) const override;
  void constraints(std::span<const double> x, std::span<double> values) const override;
  Eigen::SparseMatrix<double> jacobian(std::span<const double> x) const override;

  std::string constraint_name(std::size_t i) const override { return residuals_.describe(i); }
  std::string variable_name(std::size_t j) const override { return layout().slot_name(j); }

  /// The flat start for this layout.
  std::vector<double> flat_start() const;

 private:
  eq::ResidualSet residuals_;
  ObjectiveKind objective_;
  std::vector<double> lower_, upper_, x0_;
  std::optional<ProximalTerm> proximal_;
};

}  // namespace hvdc
