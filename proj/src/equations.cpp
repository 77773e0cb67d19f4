#include "hvdc/equations.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "hvdc/error.hpp"

namespace hvdc::eq {

using grid::NetworkCase;

std::string_view to_string(ConverterLaw law) {
  switch (law) {
    case ConverterLaw::Free: return "free";
    case ConverterLaw::PControl: return "P";
    case ConverterLaw::VControl: return "V";
    case ConverterLaw::Droop: return "droop";
    case ConverterLaw::DroopVariableGain: return "droop-variable-gain";
  }
  return "?";
}

ConverterLaw converter_law_from_string(std::string_view text) {
  for (auto law : {ConverterLaw::Free, ConverterLaw::PControl, ConverterLaw::VControl, ConverterLaw::Droop,
                   ConverterLaw::DroopVariableGain}) {
    if (to_string(law) == text) return law;
  }
  throw Error("unknown converter law '" + std::string(text) + "'");
}

std::vector<ConverterFormulation> formulation_from_case(const NetworkCase& network) {
  std::vector<ConverterFormulation> out;
  for (const auto& c : network.converters) {
    ConverterFormulation f;
    f.converter_id = c.id;
    switch (c.control.mode) {
      case grid::ControlMode::PControl: f.law = ConverterLaw::PControl; break;
      case grid::ControlMode::VControl: f.law = ConverterLaw::VControl; break;
      case grid::ControlMode::Droop: f.law = ConverterLaw::Droop; break;
    }
    f.p_ref = c.control.p_ref;
    f.u_ref = c.control.u_ref;
    f.k = c.control.k_droop;
    f.k_min = c.control.k_min;
    f.k_max = c.control.k_max;
    out.push_back(f);
  }
  return out;
}

std::string_view to_string(SlotKind kind) {
  switch (kind) {
    case SlotKind::Vm: return "vm";
    case SlotKind::Va: return "va";
    case SlotKind::Pg: return "pg";
    case SlotKind::Qg: return "qg";
    case SlotKind::Vdc: return "vdc";
    case SlotKind::Pdc: return "pdc";
    case SlotKind::Pc: return "pc";
    case SlotKind::Qc: return "qc";
    case SlotKind::Ic: return "ic";
    case SlotKind::Ploss: return "ploss";
    case SlotKind::Kdroop: return "kdroop";
  }
  return "?";
}

std::string_view to_string(ResidualKind kind) {
  switch (kind) {
    case ResidualKind::AcActiveBalance: return "ac-active-balance";
    case ResidualKind::AcReactiveBalance: return "ac-reactive-balance";
    case ResidualKind::DcCurrentBalance: return "dc-balance";
    case ResidualKind::ConverterPowerBalance: return "converter-power-balance";
    case ResidualKind::ConverterCoupling: return "converter-coupling";
    case ResidualKind::ConverterLossDef: return "converter-loss";
    case ResidualKind::DroopLaw: return "droop-law";
    case ResidualKind::PControlLaw: return "p-control-law";
    case ResidualKind::VControlLaw: return "v-control-law";
  }
  return "?";
}

// ---------------------------------------------------------------------------

int VariableLayout::push(SlotKind kind, int element) {
  keys_.push_back({kind, element});
  return static_cast<int>(keys_.size() - 1);
}

VariableLayout::VariableLayout(const NetworkCase& network, std::span<const ConverterFormulation> formulation) {
  reference_bus_ = grid::reference_bus_index(network);
  for (std::size_t i = 0; i < network.ac_buses.size(); ++i) {
    const int id = network.ac_buses[i].id;
    vm_.push_back(push(SlotKind::Vm, id));
    va_.push_back(i == reference_bus_ ? -1 : push(SlotKind::Va, id));
  }
  for (const auto& g : network.generators) {
    pg_.push_back(push(SlotKind::Pg, g.id));
    qg_.push_back(push(SlotKind::Qg, g.id));
  }
  for (const auto& d : network.dc_buses) vdc_.push_back(push(SlotKind::Vdc, d.id));
  for (std::size_t c = 0; c < network.converters.size(); ++c) {
    const int id = network.converters[c].id;
    pdc_.push_back(push(SlotKind::Pdc, id));
    pc_.push_back(push(SlotKind::Pc, id));
    qc_.push_back(push(SlotKind::Qc, id));
    ic_.push_back(push(SlotKind::Ic, id));
    ploss_.push_back(push(SlotKind::Ploss, id));
    const bool variable_gain = c < formulation.size() && formulation[c].law == ConverterLaw::DroopVariableGain;
    k_.push_back(variable_gain ? push(SlotKind::Kdroop, id) : -1);
  }
}

std::optional<std::size_t> VariableLayout::find(SlotKey key) const {
  for (std::size_t i = 0; i < keys_.size(); ++i)
    if (keys_[i] == key) return i;
  return std::nullopt;
}

std::string VariableLayout::slot_name(std::size_t slot) const {
  const auto& k = keys_.at(slot);
  return std::string(to_string(k.kind)) + "[" + std::to_string(k.element) + "]";
}

std::vector<double> transfer_state(const VariableLayout& from, std::span<const double> x, const VariableLayout& to,
                                   std::vector<double> fill) {
  if (fill.size() != to.size()) throw SolverError("transfer_state: fill vector has wrong dimension");
  std::map<SlotKey, std::size_t> index;
  for (std::size_t i = 0; i < from.size(); ++i) index.emplace(from.key(i), i);
  for (std::size_t i = 0; i < to.size(); ++i) {
    auto it = index.find(to.key(i));
    if (it != index.end()) fill[i] = x[it->second];
  }
  return fill;
}

// ---------------------------------------------------------------------------

AdmittanceMatrix AdmittanceMatrix::from_case(const NetworkCase& network) {
  const std::size_t n = network.ac_buses.size();
  std::vector<std::map<std::size_t, std::pair<double, double>>> acc(n);
  for (std::size_t i = 0; i < n; ++i) {
    acc[i][i] = {network.ac_buses[i].shunt_g, network.ac_buses[i].shunt_b};
  }
  for (const auto& br : network.ac_branches) {
    const std::size_t f = *network.ac_bus_index(br.from);
    const std::size_t t = *network.ac_bus_index(br.to);
    const double gs = br.series_g();
    const double bs = br.series_b();
    const double tau = br.tap_ratio;
    auto& ff = acc[f][f];
    ff.first += gs / (tau * tau);
    ff.second += (bs + 0.5 * br.charging_b) / (tau * tau);
    auto& tt = acc[t][t];
    tt.first += gs;
    tt.second += bs + 0.5 * br.charging_b;
    auto& ft = acc[f][t];
    ft.first -= gs / tau;
    ft.second -= bs / tau;
    auto& tf = acc[t][f];
    tf.first -= gs / tau;
    tf.second -= bs / tau;
  }
  AdmittanceMatrix y;
  y.rows_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& [j, gb] : acc[i]) y.rows_[i].push_back({j, gb.first, gb.second});
  }
  return y;
}

std::pair<double, double> AdmittanceMatrix::at(std::size_t i, std::size_t j) const {
  for (const auto& e : rows_.at(i))
    if (e.col == j) return {e.g, e.b};
  return {0.0, 0.0};
}

std::pair<double, double> ac_injection(std::span<const double> vm, std::span<const double> va,
                                       const AdmittanceMatrix& ybus, std::size_t i) {
  if (i >= ybus.size() || vm.size() != ybus.size() || va.size() != ybus.size()) {
    throw std::out_of_range("ac_injection: bus index or vector size out of range");
  }
  double p = 0.0;
  double q = 0.0;
  for (const auto& e : ybus.row(i)) {
    const double th = va[i] - va[e.col];
    const double c = std::cos(th);
    const double s = std::sin(th);
    p += vm[e.col] * (e.g * c + e.b * s);
    q += vm[e.col] * (e.g * s - e.b * c);
  }
  return {vm[i] * p, vm[i] * q};
}

double converter_loss(double i_c, grid::FlowDirection direction, const grid::LossCoefficients& k) {
  (void)direction;
  if (i_c < 0.0) throw std::invalid_argument("converter_loss: negative converter current");
  return k.a + k.b * i_c + k.c * i_c * i_c;
}

double converter_loss(double i_c, grid::FlowDirection direction, const grid::ConverterStation& station) {
  return converter_loss(i_c, direction, station.loss(direction));
}

// ---------------------------------------------------------------------------

namespace {

std::vector<ConverterFormulation> align_formulation(const NetworkCase& network, std::vector<ConverterFormulation> input) {
  std::vector<ConverterFormulation> aligned;
  for (const auto& c : network.converters) {
    auto it = std::find_if(input.begin(), input.end(), [&](const auto& f) { return f.converter_id == c.id; });
    if (it == input.end()) throw ReferenceError("no formulation given for converter " + std::to_string(c.id));
    if (it->law == ConverterLaw::Droop && !(it->k_min <= it->k && it->k <= it->k_max && it->k_min > 0.0)) {
      throw InvariantError("converter " + std::to_string(c.id) + ": droop gain " + std::to_string(it->k) +
                           " outside [" + std::to_string(it->k_min) + ", " + std::to_string(it->k_max) + "]");
    }
    if (it->law == ConverterLaw::DroopVariableGain && !(it->k_min > 0.0 && it->k_min <= it->k_max)) {
      throw InvariantError("converter " + std::to_string(c.id) + ": invalid droop gain bounds");
    }
    aligned.push_back(*it);
  }
  if (aligned.size() != input.size()) throw ReferenceError("formulation references converters not in the case");
  return aligned;
}

}  // namespace

ResidualSet::ResidualSet(std::shared_ptr<const NetworkCase> network, std::vector<ConverterFormulation> formulation)
    : network_(std::move(network)),
      formulation_(align_formulation(*network_, std::move(formulation))),
      layout_(*network_, formulation_),
      ybus_(AdmittanceMatrix::from_case(*network_)) {
  const auto& n = *network_;
  gens_at_bus_.resize(n.ac_buses.size());
  convs_at_bus_.resize(n.ac_buses.size());
  convs_at_dc_.resize(n.dc_buses.size());
  dc_adj_.resize(n.dc_buses.size());
  for (std::size_t g = 0; g < n.generators.size(); ++g) gens_at_bus_[*n.ac_bus_index(n.generators[g].bus)].push_back(g);
  for (std::size_t c = 0; c < n.converters.size(); ++c) {
    convs_at_bus_[*n.ac_bus_index(n.converters[c].ac_bus)].push_back(c);
    convs_at_dc_[*n.dc_bus_index(n.converters[c].dc_bus)].push_back(c);
  }
  std::vector<std::map<std::size_t, double>> adj(n.dc_buses.size());
  for (const auto& br : n.dc_branches) {
    const std::size_t f = *n.dc_bus_index(br.from);
    const std::size_t t = *n.dc_bus_index(br.to);
    adj[f][t] += br.admittance();
    adj[t][f] += br.admittance();
  }
  for (std::size_t d = 0; d < adj.size(); ++d)
    for (auto [j, y] : adj[d]) dc_adj_[d].emplace_back(j, y);

  for (std::size_t i = 0; i < n.ac_buses.size(); ++i) entries_.push_back({ResidualKind::AcActiveBalance, i});
  for (std::size_t i = 0; i < n.ac_buses.size(); ++i) entries_.push_back({ResidualKind::AcReactiveBalance, i});
  for (std::size_t d = 0; d < n.dc_buses.size(); ++d) entries_.push_back({ResidualKind::DcCurrentBalance, d});
  for (std::size_t c = 0; c < n.converters.size(); ++c) {
    entries_.push_back({ResidualKind::ConverterPowerBalance, c});
    entries_.push_back({ResidualKind::ConverterCoupling, c});
    entries_.push_back({ResidualKind::ConverterLossDef, c});
    switch (formulation_[c].law) {
      case ConverterLaw::Free: break;
      case ConverterLaw::PControl: entries_.push_back({ResidualKind::PControlLaw, c}); break;
      case ConverterLaw::VControl: entries_.push_back({ResidualKind::VControlLaw, c}); break;
      case ConverterLaw::Droop:
      case ConverterLaw::DroopVariableGain: entries_.push_back({ResidualKind::DroopLaw, c}); break;
    }
  }
}

std::string ResidualSet::describe(std::size_t r) const {
  const auto& e = entries_.at(r);
  const auto& n = *network_;
  int id = 0;
  switch (e.kind) {
    case ResidualKind::AcActiveBalance:
    case ResidualKind::AcReactiveBalance: id = n.ac_buses[e.element].id; break;
    case ResidualKind::DcCurrentBalance: id = n.dc_buses[e.element].id; break;
    default: id = n.converters[e.element].id; break;
  }
  return std::string(to_string(e.kind)) + "[" + std::to_string(id) + "]";
}

double ResidualSet::row(std::size_t r, std::span<const double> x, TripletSink* sink) const {
  const auto& e = entries_[r];
  const auto& n = *network_;
  const auto& L = layout_;
  const int row = static_cast<int>(r);
  auto add = [&](int col, double v) {
    if (sink && col >= 0) sink->emplace_back(row, col, v);
  };
  auto angle = [&](std::size_t bus) { return L.va(bus) < 0 ? 0.0 : x[L.va(bus)]; };

  switch (e.kind) {
    case ResidualKind::AcActiveBalance:
    case ResidualKind::AcReactiveBalance: {
      const bool active = e.kind == ResidualKind::AcActiveBalance;
      const std::size_t i = e.element;
      const double ui = x[L.vm(i)];
      const double di = angle(i);
      double sum = 0.0;      // sum_j U_j (G c + B s) for P, (G s - B c) for Q
      double d_ui = 0.0;     // d(injection)/dU_i
      double d_di = 0.0;     // d(injection)/d delta_i
      for (const auto& y : ybus_.row(i)) {
        const double uj = x[L.vm(y.col)];
        const double th = di - angle(y.col);
        const double c = std::cos(th);
        const double s = std::sin(th);
        const double term = active ? (y.g * c + y.b * s) : (y.g * s - y.b * c);
        sum += uj * term;
        if (y.col == i) {
          d_ui += ui * (active ? y.g : -y.b);
        } else {
          const double dterm = active ? (-y.g * s + y.b * c) : (y.g * c + y.b * s);
          d_di += ui * uj * dterm;
          add(L.vm(y.col), -ui * term);
          add(L.va(y.col), ui * uj * dterm);  // d/d delta_j = -dterm
        }
      }
      d_ui += sum;
      const double injection = ui * sum;
      add(L.vm(i), -d_ui);
      add(L.va(i), -d_di);
      double value = -(active ? n.ac_buses[i].load_p : n.ac_buses[i].load_q) - injection;
      for (std::size_t g : gens_at_bus_[i]) {
        const int col = active ? L.pg(g) : L.qg(g);
        value += x[col];
        add(col, 1.0);
      }
      for (std::size_t c : convs_at_bus_[i]) {
        const int col = active ? L.pc(c) : L.qc(c);
        value -= x[col];
        add(col, -1.0);
      }
      return value;
    }
    case ResidualKind::DcCurrentBalance: {
      const std::size_t d = e.element;
      const double ui = x[L.vdc(d)];
      double current = 0.0;
      double ysum = 0.0;
      for (auto [j, y] : dc_adj_[d]) {
        const double uj = x[L.vdc(j)];
        current += y * (ui - uj);
        ysum += y;
        add(L.vdc(j), 2.0 * ui * y);
      }
      add(L.vdc(d), -2.0 * current - 2.0 * ui * ysum);
      double value = -2.0 * ui * current;
      for (std::size_t c : convs_at_dc_[d]) {
        value += x[L.pdc(c)];
        add(L.pdc(c), 1.0);
      }
      return value;
    }
    case ResidualKind::ConverterPowerBalance: {
      const std::size_t c = e.element;
      add(L.pc(c), 1.0);
      add(L.pdc(c), -1.0);
      add(L.ploss(c), -1.0);
      return x[L.pc(c)] - x[L.pdc(c)] - x[L.ploss(c)];
    }
    case ResidualKind::ConverterCoupling: {
      const std::size_t c = e.element;
      const std::size_t bus = *n.ac_bus_index(n.converters[c].ac_bus);
      const double p = x[L.pc(c)];
      const double q = x[L.qc(c)];
      const double u = x[L.vm(bus)];
      const double i = x[L.ic(c)];
      add(L.pc(c), 2.0 * p);
      add(L.qc(c), 2.0 * q);
      add(L.vm(bus), -2.0 * u * i * i);
      add(L.ic(c), -2.0 * u * u * i);
      return p * p + q * q - (u * i) * (u * i);
    }
    case ResidualKind::ConverterLossDef: {
      const std::size_t c = e.element;
      const auto& k = n.converters[c].loss(grid::ConverterStation::direction_for(x[L.pdc(c)]));
      const double i = x[L.ic(c)];
      add(L.ploss(c), 1.0);
      add(L.ic(c), -(k.b + 2.0 * k.c * i));
      return x[L.ploss(c)] - (k.a + k.b * i + k.c * i * i);
    }
    case ResidualKind::DroopLaw: {
      const std::size_t c = e.element;
      const auto& f = formulation_[c];
      const std::size_t d = *n.dc_bus_index(n.converters[c].dc_bus);
      const int kcol = L.k(c);
      const double k = kcol >= 0 ? x[kcol] : f.k;
      const double dv = x[L.vdc(d)] - f.u_ref;
      add(L.pdc(c), 1.0);
      add(L.vdc(d), 1.0 / k);
      add(kcol, -dv / (k * k));
      return x[L.pdc(c)] - f.p_ref + dv / k;
    }
    case ResidualKind::PControlLaw: {
      const std::size_t c = e.element;
      add(L.pdc(c), 1.0);
      return x[L.pdc(c)] - formulation_[c].p_ref;
    }
    case ResidualKind::VControlLaw: {
      const std::size_t c = e.element;
      const std::size_t d = *n.dc_bus_index(n.converters[c].dc_bus);
      add(L.vdc(d), 1.0);
      return x[L.vdc(d)] - formulation_[c].u_ref;
    }
  }
  return 0.0;
}

void ResidualSet::evaluate(std::span<const double> x, std::span<double> out) const {
  if (x.size() != layout_.size() || out.size() != entries_.size()) throw SolverError("ResidualSet::evaluate: dimension mismatch");
  for (std::size_t r = 0; r < entries_.size(); ++r) out[r] = row(r, x, nullptr);
}

std::vector<double> ResidualSet::evaluate(std::span<const double> x) const {
  std::vector<double> out(entries_.size());
  evaluate(x, out);
  return out;
}

Eigen::SparseMatrix<double> ResidualSet::jacobian(std::span<const double> x) const {
  if (x.size() != layout_.size()) throw SolverError("ResidualSet::jacobian: dimension mismatch");
  TripletSink sink;
  sink.reserve(entries_.size() * 8);
  for (std::size_t r = 0; r < entries_.size(); ++r) row(r, x, &sink);
  Eigen::SparseMatrix<double> jac(static_cast<Eigen::Index>(entries_.size()), static_cast<Eigen::Index>(layout_.size()));
  jac.setFromTriplets(sink.begin(), sink.end());
  return jac;
}

// ---------------------------------------------------------------------------

namespace {

std::size_t find_row(const ResidualSet& set, ResidualKind kind, std::size_t element) {
  for (std::size_t r = 0; r < set.size(); ++r) {
    if (set.entry(r).kind == kind && set.entry(r).element == element) return r;
  }
  throw std::out_of_range("no residual " + std::string(to_string(kind)) + " for element " + std::to_string(element));
}

}  // namespace

PowerPair ac_balance_residual(std::span<const double> x, const ResidualSet& set, std::size_t bus) {
  return {set.row(find_row(set, ResidualKind::AcActiveBalance, bus), x, nullptr),
          set.row(find_row(set, ResidualKind::AcReactiveBalance, bus), x, nullptr)};
}

double dc_balance_residual(std::span<const double> x, const ResidualSet& set, std::size_t dc_bus) {
  return set.row(find_row(set, ResidualKind::DcCurrentBalance, dc_bus), x, nullptr);
}

StationResidual converter_coupling_residual(std::span<const double> x, const ResidualSet& set, std::size_t conv) {
  return {set.row(find_row(set, ResidualKind::ConverterCoupling, conv), x, nullptr),
          set.row(find_row(set, ResidualKind::ConverterPowerBalance, conv), x, nullptr)};
}

double converter_loss_residual(std::span<const double> x, const ResidualSet& set, std::size_t conv) {
  return set.row(find_row(set, ResidualKind::ConverterLossDef, conv), x, nullptr);
}

double control_law_residual(std::span<const double> x, const ResidualSet& set, std::size_t conv) {
  for (auto kind : {ResidualKind::DroopLaw, ResidualKind::PControlLaw, ResidualKind::VControlLaw}) {
    for (std::size_t r = 0; r < set.size(); ++r) {
      if (set.entry(r).kind == kind && set.entry(r).element == conv) return set.row(r, x, nullptr);
    }
  }
  throw std::out_of_range("converter " + std::to_string(set.network().converters.at(conv).id) + " has no control law");
}

double dc_current(std::span<const double> x, const ResidualSet& set, std::size_t dc_bus) {
  const auto& L = set.layout();
  double current = 0.0;
  for (auto [j, y] : set.dc_neighbours(dc_bus)) current += y * (x[L.vdc(dc_bus)] - x[L.vdc(j)]);
  return current;
}

double objective_cost(std::span<const double> x, const ResidualSet& set) {
  double total = 0.0;
  const auto& gens = set.network().generators;
  for (std::size_t g = 0; g < gens.size(); ++g) total += gens[g].cost(x[set.layout().pg(g)]);
  return total;
}

double objective_vdev(std::span<const double> x, const ResidualSet& set) {
  double total = 0.0;
  const auto& buses = set.network().dc_buses;
  for (std::size_t d = 0; d < buses.size(); ++d) {
    const double dev = x[set.layout().vdc(d)] - buses[d].v_nominal;
    total += dev * dev;
  }
  return total;
}

void objective_cost_gradient(std::span<const double> x, const ResidualSet& set, std::span<double> grad) {
  std::fill(grad.begin(), grad.end(), 0.0);
  const auto& gens = set.network().generators;
  for (std::size_t g = 0; g < gens.size(); ++g) {
    const int col = set.layout().pg(g);
    grad[col] = 2.0 * gens[g].cost_alpha * x[col] + gens[g].cost_beta;
  }
}

void objective_vdev_gradient(std::span<const double> x, const ResidualSet& set, std::span<double> grad) {
  std::fill(grad.begin(), grad.end(), 0.0);
  const auto& buses = set.network().dc_buses;
  for (std::size_t d = 0; d < buses.size(); ++d) {
    const int col = set.layout().vdc(d);
    grad[col] = 2.0 * (x[col] - buses[d].v_nominal);
  }
}

Eigen::SparseMatrix<double> residual_jacobian(std::span<const double> x, const ResidualSet& set) { return set.jacobian(x); }

}  // namespace hvdc::eq
