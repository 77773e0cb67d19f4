#pragma once

// Residuals and objectives of the hybrid AC/DC OPF over a flat variable vector.
//
// Sign conventions (fixed throughout the library):
//  * P_dc > 0 is power injected into the DC grid (AC -> DC, rectifier).
//  * P_c, Q_c are the powers the converter withdraws from its AC bus, so a
//    rectifier has P_c > 0 and the AC balance subtracts them like a load.
//  * Station balance: P_c = P_dc + P_loss in both flow directions.
//  * Converter coupling is the per-unit apparent-power identity
//    P_c^2 + Q_c^2 = (U_c I_c)^2 with U_c the AC bus voltage magnitude.
//  * DC power: P_dc = 2 U_dc I_dc (symmetric-monopole base).

#include <Eigen/SparseCore>

#include <compare>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hvdc/case_model.hpp"

namespace hvdc::eq {

/// How a converter's DC operating point is constrained inside one OPF stage.
enum class ConverterLaw {
  Free,               ///< no control residual; P_dc is a bounded decision variable
  PControl,           ///< P_dc = p_ref
  VControl,           ///< U_dc = u_ref
  Droop,              ///< P_dc - p_ref + (U_dc - u_ref) / k = 0, k fixed
  DroopVariableGain,  ///< same law with k a decision variable in [k_min, k_max]
};

std::string_view to_string(ConverterLaw law);
ConverterLaw converter_law_from_string(std::string_view text);

struct ConverterFormulation {
  int converter_id = 0;
  ConverterLaw law = ConverterLaw::Free;
  double p_ref = 0.0;
  double u_ref = 1.0;
  double k = 0.05;
  double k_min = grid::kDefaultKMin;
  double k_max = grid::kDefaultKMax;

  bool operator==(const ConverterFormulation&) const = default;
};

/// Formulation taken verbatim from each converter's configured control.
std::vector<ConverterFormulation> formulation_from_case(const grid::NetworkCase& network);

enum class SlotKind { Vm, Va, Pg, Qg, Vdc, Pdc, Pc, Qc, Ic, Ploss, Kdroop };

std::string_view to_string(SlotKind kind);

/// Identifies a variable by kind and the id of the owning element.
struct SlotKey {
  SlotKind kind;
  int element;
  auto operator<=>(const SlotKey&) const = default;
};

class VariableLayout {
 public:
  VariableLayout() = default;
  VariableLayout(const grid::NetworkCase& network, std::span<const ConverterFormulation> formulation);

  std::size_t size() const { return keys_.size(); }
  std::size_t reference_bus() const { return reference_bus_; }

  int vm(std::size_t bus) const { return vm_[bus]; }
  /// -1 for the reference bus, whose angle is fixed at zero.
  int va(std::size_t bus) const { return va_[bus]; }
  int pg(std::size_t gen) const { return pg_[gen]; }
  int qg(std::size_t gen) const { return qg_[gen]; }
  int vdc(std::size_t dc_bus) const { return vdc_[dc_bus]; }
  int pdc(std::size_t conv) const { return pdc_[conv]; }
  int pc(std::size_t conv) const { return pc_[conv]; }
  int qc(std::size_t conv) const { return qc_[conv]; }
  int ic(std::size_t conv) const { return ic_[conv]; }
  int ploss(std::size_t conv) const { return ploss_[conv]; }
  /// -1 unless the converter's gain is a decision variable.
  int k(std::size_t conv) const { return k_[conv]; }

  const SlotKey& key(std::size_t slot) const { return keys_[slot]; }
  std::optional<std::size_t> find(SlotKey key) const;
  std::string slot_name(std::size_t slot) const;

 private:
  int push(SlotKind kind, int element);

  std::size_t reference_bus_ = 0;
  std::vector<int> vm_, va_, pg_, qg_, vdc_, pdc_, pc_, qc_, ic_, ploss_, k_;
  std::vector<SlotKey> keys_;
};

/// Copies values for slots present in both layouts; other slots keep `fill`.
std::vector<double> transfer_state(const VariableLayout& from, std::span<const double> x, const VariableLayout& to,
                                   std::vector<double> fill);

/// Sparse bus admittance matrix Y = G + jB stored row-wise.
class AdmittanceMatrix {
 public:
  struct Entry {
    std::size_t col;
    double g;
    double b;
  };

  static AdmittanceMatrix from_case(const grid::NetworkCase& network);

  std::size_t size() const { return rows_.size(); }
  std::span<const Entry> row(std::size_t i) const { return rows_[i]; }
  /// G_ij + jB_ij, zero when the buses are not adjacent.
  std::pair<double, double> at(std::size_t i, std::size_t j) const;

 private:
  std::vector<std::vector<Entry>> rows_;
};

/// P_i and Q_i of the polar power-flow equations at bus i.
std::pair<double, double> ac_injection(std::span<const double> vm, std::span<const double> va,
                                       const AdmittanceMatrix& ybus, std::size_t i);

/// a + b * i_c + c * i_c^2. Throws std::invalid_argument for i_c < 0.
double converter_loss(double i_c, grid::FlowDirection direction, const grid::LossCoefficients& coeffs);
double converter_loss(double i_c, grid::FlowDirection direction, const grid::ConverterStation& station);

enum class ResidualKind {
  AcActiveBalance,
  AcReactiveBalance,
  DcCurrentBalance,
  ConverterPowerBalance,
  ConverterCoupling,
  ConverterLossDef,
  DroopLaw,
  PControlLaw,
  VControlLaw,
};

std::string_view to_string(ResidualKind kind);

struct ResidualEntry {
  ResidualKind kind;
  /// Position of the owning element (bus, DC bus or converter) in the case.
  std::size_t element;
};

/// Every equality of one OPF stage, with value and analytic Jacobian.
class ResidualSet {
 public:
  ResidualSet(std::shared_ptr<const grid::NetworkCase> network, std::vector<ConverterFormulation> formulation);

  const grid::NetworkCase& network() const { return *network_; }
  std::shared_ptr<const grid::NetworkCase> network_ptr() const { return network_; }
  const VariableLayout& layout() const { return layout_; }
  const AdmittanceMatrix& ybus() const { return ybus_; }
  const std::vector<ConverterFormulation>& formulation() const { return formulation_; }
  /// Formulation of the converter at case position `conv`.
  const ConverterFormulation& law(std::size_t conv) const { return formulation_[conv]; }

  std::size_t size() const { return entries_.size(); }
  const ResidualEntry& entry(std::size_t row) const { return entries_[row]; }
  std::string describe(std::size_t row) const;

  void evaluate(std::span<const double> x, std::span<double> out) const;
  std::vector<double> evaluate(std::span<const double> x) const;
  Eigen::SparseMatrix<double> jacobian(std::span<const double> x) const;

  /// Positions of elements attached to a bus.
  std::span<const std::size_t> generators_at(std::size_t bus) const { return gens_at_bus_[bus]; }
  std::span<const std::size_t> converters_at(std::size_t bus) const { return convs_at_bus_[bus]; }
  std::span<const std::size_t> converters_at_dc(std::size_t dc_bus) const { return convs_at_dc_[dc_bus]; }
  /// (neighbour position, Y_dc) pairs with parallel branches merged.
  std::span<const std::pair<std::size_t, double>> dc_neighbours(std::size_t dc_bus) const { return dc_adj_[dc_bus]; }

  using TripletSink = std::vector<Eigen::Triplet<double>>;
  /// Value of one residual row; appends its gradient to `sink` when non-null.
  double row(std::size_t r, std::span<const double> x, TripletSink* sink) const;

 private:
  std::shared_ptr<const grid::NetworkCase> network_;
  std::vector<ConverterFormulation> formulation_;
  VariableLayout layout_;
  AdmittanceMatrix ybus_;
  std::vector<ResidualEntry> entries_;
  std::vector<std::vector<std::size_t>> gens_at_bus_, convs_at_bus_, convs_at_dc_;
  std::vector<std::vector<std::pair<std::size_t, double>>> dc_adj_;
};

struct PowerPair {
  double p;
  double q;
};

struct StationResidual {
  double coupling;
  double balance;
};

PowerPair ac_balance_residual(std::span<const double> x, const ResidualSet& set, std::size_t bus);
double dc_balance_residual(std::span<const double> x, const ResidualSet& set, std::size_t dc_bus);
StationResidual converter_coupling_residual(std::span<const double> x, const ResidualSet& set, std::size_t conv);
double converter_loss_residual(std::span<const double> x, const ResidualSet& set, std::size_t conv);
/// Not defined for Free converters.
double control_law_residual(std::span<const double> x, const ResidualSet& set, std::size_t conv);

/// DC current injected at a DC bus, sum_j Y_ij (U_i - U_j).
double dc_current(std::span<const double> x, const ResidualSet& set, std::size_t dc_bus);

double objective_cost(std::span<const double> x, const ResidualSet& set);
double objective_vdev(std::span<const double> x, const ResidualSet& set);
void objective_cost_gradient(std::span<const double> x, const ResidualSet& set, std::span<double> grad);
void objective_vdev_gradient(std::span<const double> x, const ResidualSet& set, std::span<double> grad);

Eigen::SparseMatrix<double> residual_jacobian(std::span<const double> x, const ResidualSet& set);

}  // namespace hvdc::eq
