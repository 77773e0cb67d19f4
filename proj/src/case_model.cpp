#include "hvdc/case_model.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <span>
#include <sstream>

#include "hvdc/error.hpp"

namespace hvdc::grid {

namespace {

constexpr std::string_view kCaseFormat = "hvdc-case";
constexpr std::string_view kScenarioFormat = "hvdc-scenario";
constexpr int kFormatVersion = 1;

constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    if (pos >= line.size() || line[pos] == '#') break;
    std::size_t end = pos;
    while (end < line.size() && !std::isspace(static_cast<unsigned char>(line[end])) && line[end] != '#') ++end;
    tokens.emplace_back(line.substr(pos, end - pos));
    pos = end;
  }
  return tokens;
}

std::string format_number(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) throw Error("cannot format number");
  std::string out(buf, end);
  return out == "-0" ? "0" : out;
}

struct LineCursor {
  const std::string& source;
  int line;
  const std::vector<std::string>& tokens;
  std::span<const std::string_view> columns;

  double number(std::size_t i) const {
    const std::string& tok = tokens.at(i);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (ec != std::errc{} || ptr != tok.data() + tok.size() || !std::isfinite(value)) {
      throw ParseError(source, line, "field '" + std::string(columns[i]) + "': expected a number, got '" + tok + "'");
    }
    return value;
  }
  int integer(std::size_t i) const {
    const std::string& tok = tokens.at(i);
    int value = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
      throw ParseError(source, line, "field '" + std::string(columns[i]) + "': expected an integer, got '" + tok + "'");
    }
    return value;
  }
  void require(std::size_t min_count, std::size_t max_count) const {
    if (tokens.size() < min_count || tokens.size() > max_count) {
      std::ostringstream msg;
      msg << "expected " << min_count;
      if (max_count != min_count) msg << " to " << max_count;
      msg << " fields (";
      for (std::size_t i = 0; i < columns.size(); ++i) msg << (i ? " " : "") << columns[i];
      msg << "), got " << tokens.size();
      throw ParseError(source, line, msg.str());
    }
  }
};

constexpr std::string_view kBusColumns[] = {"id", "Pd", "Qd", "Gs", "Bs", "Vm", "Va", "Vmax", "Vmin", "angmin", "angmax"};
constexpr std::string_view kGenColumns[] = {"bus", "Pmax", "Pmin", "Qmax", "Qmin", "c2", "c1", "c0"};
constexpr std::string_view kBranchColumns[] = {"fbus", "tbus", "r", "x", "b", "ratio"};
constexpr std::string_view kBusDcColumns[] = {"id", "Vdc", "Vdcmax", "Vdcmin"};
constexpr std::string_view kBranchDcColumns[] = {"fbus", "tbus", "r"};
constexpr std::string_view kConvColumns[] = {"id",    "busac", "busdc", "rec_a", "rec_b", "rec_c", "inv_a", "inv_b", "inv_c",
                                             "Pdcmin", "Pdcmax", "Imax", "mode", "Pref", "Uref", "k", "kmin", "kmax"};

void parse_header(const std::vector<std::string>& tokens, std::string_view expected, const std::string& source, int line) {
  if (tokens.size() != 3 || tokens[0] != "format" || tokens[1] != expected) {
    throw ParseError(source, line, "expected header 'format " + std::string(expected) + " " + std::to_string(kFormatVersion) + "'");
  }
  if (tokens[2] != std::to_string(kFormatVersion)) {
    throw ParseError(source, line, "unsupported format version '" + tokens[2] + "'");
  }
}

std::string join_rest(const std::vector<std::string>& tokens, std::size_t from) {
  std::string out;
  for (std::size_t i = from; i < tokens.size(); ++i) {
    if (i > from) out += ' ';
    out += tokens[i];
  }
  return out;
}

template <typename T>
void check_unique_ids(const std::vector<T>& items, const char* what) {
  std::set<int> seen;
  for (const auto& item : items) {
    if (!seen.insert(item.id).second) throw InvariantError(std::string("duplicate ") + what + " id " + std::to_string(item.id));
  }
}

// Connected components over the vertices that have at least one edge.
bool connected_over_non_isolated(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<std::size_t> parent(n);
  for (std::size_t i = 0; i < n; ++i) parent[i] = i;
  std::function<std::size_t(std::size_t)> find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  std::vector<bool> touched(n, false);
  for (auto [a, b] : edges) {
    touched[a] = touched[b] = true;
    parent[find(a)] = find(b);
  }
  std::optional<std::size_t> root;
  for (std::size_t i = 0; i < n; ++i) {
    if (!touched[i]) continue;
    if (!root) root = find(i);
    else if (find(i) != *root) return false;
  }
  return true;
}

}  // namespace

std::string_view to_string(ControlMode mode) {
  switch (mode) {
    case ControlMode::PControl: return "P";
    case ControlMode::VControl: return "V";
    case ControlMode::Droop: return "droop";
  }
  return "?";
}

ControlMode control_mode_from_string(std::string_view text) {
  if (text == "P") return ControlMode::PControl;
  if (text == "V") return ControlMode::VControl;
  if (text == "droop") return ControlMode::Droop;
  throw Error("unknown control mode '" + std::string(text) + "' (expected P, V or droop)");
}

std::optional<std::size_t> NetworkCase::ac_bus_index(int id) const {
  for (std::size_t i = 0; i < ac_buses.size(); ++i)
    if (ac_buses[i].id == id) return i;
  return std::nullopt;
}
std::optional<std::size_t> NetworkCase::dc_bus_index(int id) const {
  for (std::size_t i = 0; i < dc_buses.size(); ++i)
    if (dc_buses[i].id == id) return i;
  return std::nullopt;
}
std::optional<std::size_t> NetworkCase::generator_index(int id) const {
  for (std::size_t i = 0; i < generators.size(); ++i)
    if (generators[i].id == id) return i;
  return std::nullopt;
}
std::optional<std::size_t> NetworkCase::converter_index(int id) const {
  for (std::size_t i = 0; i < converters.size(); ++i)
    if (converters[i].id == id) return i;
  return std::nullopt;
}

bool NetworkCase::operator==(const NetworkCase& other) const {
  // Compare through the canonical text; every stored field is serialized.
  return serialize_case(*this) == serialize_case(other);
}

NetworkCase parse_case(const std::filesystem::path& path) { return parse_case_text(read_file(path), path.string()); }

NetworkCase parse_case_text(std::string_view text, const std::string& source) {
  NetworkCase network;
  network.name = "unnamed";
  std::string section;
  bool header_seen = false;
  int generator_row = 0;
  int line_no = 0;

  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto tokens = tokenize(raw);
    if (tokens.empty()) continue;
    if (!header_seen) {
      parse_header(tokens, kCaseFormat, source, line_no);
      header_seen = true;
      continue;
    }
    if (tokens.size() == 1 && tokens[0].size() > 2 && tokens[0].front() == '[' && tokens[0].back() == ']') {
      section = tokens[0].substr(1, tokens[0].size() - 2);
      static const std::set<std::string> known{"bus", "gen", "branch", "busdc", "branchdc", "convdc"};
      if (!known.contains(section)) throw ParseError(source, line_no, "unknown section '[" + section + "]'");
      continue;
    }

    if (section.empty()) {
      const std::string& key = tokens[0];
      std::array<std::string_view, 2> cols{"key", "value"};
      LineCursor cur{source, line_no, tokens, cols};
      if (key == "name") {
        if (tokens.size() < 2) throw ParseError(source, line_no, "field 'name': missing value");
        network.name = join_rest(tokens, 1);
      } else if (key == "base_mva") {
        cur.require(2, 2);
        network.s_nominal = cur.number(1);
        if (network.s_nominal <= 0) throw ParseError(source, line_no, "field 'base_mva': must be positive");
      } else if (key == "base_kv_dc") {
        cur.require(2, 2);
        network.v_dc_nominal = cur.number(1);
        if (network.v_dc_nominal <= 0) throw ParseError(source, line_no, "field 'base_kv_dc': must be positive");
      } else if (key == "outaged_generators" || key == "outaged_converters") {
        auto& target = key == "outaged_generators" ? network.outaged_generators : network.outaged_converters;
        for (std::size_t i = 1; i < tokens.size(); ++i) {
          std::array<std::string_view, 2> c2{key, key};
          std::vector<std::string> one{tokens[0], tokens[i]};
          target.insert(LineCursor{source, line_no, one, c2}.integer(1));
        }
      } else {
        throw ParseError(source, line_no, "unknown key '" + key + "'");
      }
      continue;
    }

    const double base = network.s_nominal;
    if (section == "bus") {
      LineCursor cur{source, line_no, tokens, kBusColumns};
      cur.require(9, 11);
      if (tokens.size() == 10) throw ParseError(source, line_no, "field 'angmax': angmin given without angmax");
      AcBus bus;
      bus.id = cur.integer(0);
      bus.load_p = cur.number(1) / base;
      bus.load_q = cur.number(2) / base;
      bus.shunt_g = cur.number(3) / base;
      bus.shunt_b = cur.number(4) / base;
      bus.voltage_setpoint = cur.number(5);
      bus.angle = deg_to_rad(cur.number(6));
      bus.v_max = cur.number(7);
      bus.v_min = cur.number(8);
      if (tokens.size() == 11) {
        bus.angle_min = deg_to_rad(cur.number(9));
        bus.angle_max = deg_to_rad(cur.number(10));
      }
      network.ac_buses.push_back(bus);
    } else if (section == "gen") {
      LineCursor cur{source, line_no, tokens, kGenColumns};
      cur.require(8, 8);
      Generator gen;
      gen.id = ++generator_row;
      while (network.outaged_generators.contains(gen.id)) gen.id = ++generator_row;
      gen.bus = cur.integer(0);
      gen.p_max = cur.number(1) / base;
      gen.p_min = cur.number(2) / base;
      gen.q_max = cur.number(3) / base;
      gen.q_min = cur.number(4) / base;
      gen.cost_alpha = cur.number(5) * base * base;
      gen.cost_beta = cur.number(6) * base;
      gen.cost_gamma = cur.number(7);
      network.generators.push_back(gen);
    } else if (section == "branch") {
      LineCursor cur{source, line_no, tokens, kBranchColumns};
      cur.require(5, 6);
      AcBranch br;
      br.from = cur.integer(0);
      br.to = cur.integer(1);
      br.r = cur.number(2);
      br.x = cur.number(3);
      br.charging_b = cur.number(4);
      if (tokens.size() == 6) {
        const double ratio = cur.number(5);
        br.tap_ratio = ratio == 0.0 ? 1.0 : ratio;  // Matpower: 0 means nominal
      }
      if (br.r == 0.0 && br.x == 0.0) throw ParseError(source, line_no, "field 'x': zero series impedance");
      network.ac_branches.push_back(br);
    } else if (section == "busdc") {
      LineCursor cur{source, line_no, tokens, kBusDcColumns};
      cur.require(2, 4);
      if (tokens.size() == 3) throw ParseError(source, line_no, "field 'Vdcmin': Vdcmax given without Vdcmin");
      DcBus bus;
      bus.id = cur.integer(0);
      bus.v_nominal = cur.number(1);
      if (tokens.size() == 4) {
        bus.v_max = cur.number(2);
        bus.v_min = cur.number(3);
      }
      network.dc_buses.push_back(bus);
    } else if (section == "branchdc") {
      LineCursor cur{source, line_no, tokens, kBranchDcColumns};
      cur.require(3, 3);
      network.dc_branches.push_back({cur.integer(0), cur.integer(1), cur.number(2)});
    } else if (section == "convdc") {
      LineCursor cur{source, line_no, tokens, kConvColumns};
      cur.require(16, 18);
      if (tokens.size() == 17) throw ParseError(source, line_no, "field 'kmax': kmin given without kmax");
      ConverterStation conv;
      conv.id = cur.integer(0);
      conv.ac_bus = cur.integer(1);
      conv.dc_bus = cur.integer(2);
      conv.rectifier_loss = {cur.number(3), cur.number(4), cur.number(5)};
      conv.inverter_loss = {cur.number(6), cur.number(7), cur.number(8)};
      conv.p_dc_min = cur.number(9) / base;
      conv.p_dc_max = cur.number(10) / base;
      conv.i_max = cur.number(11);
      try {
        conv.control.mode = control_mode_from_string(tokens[12]);
      } catch (const Error& e) {
        throw ParseError(source, line_no, std::string("field 'mode': ") + e.what());
      }
      conv.control.p_ref = cur.number(13) / base;
      conv.control.u_ref = cur.number(14);
      conv.control.k_droop = cur.number(15);
      if (tokens.size() == 18) {
        conv.control.k_min = cur.number(16);
        conv.control.k_max = cur.number(17);
      }
      network.converters.push_back(conv);
    }
  }
  if (!header_seen) throw ParseError(source, line_no == 0 ? 1 : line_no, "empty file: missing format header");
  validate_case(network);
  return network;
}

std::string serialize_case(const NetworkCase& n) {
  const double base = n.s_nominal;
  std::ostringstream out;
  auto num = [](double v) { return format_number(v); };
  out << "format " << kCaseFormat << ' ' << kFormatVersion << '\n';
  out << "name " << n.name << '\n';
  out << "base_mva " << num(n.s_nominal) << '\n';
  out << "base_kv_dc " << num(n.v_dc_nominal) << '\n';
  if (!n.outaged_generators.empty()) {
    out << "outaged_generators";
    for (int id : n.outaged_generators) out << ' ' << id;
    out << '\n';
  }
  if (!n.outaged_converters.empty()) {
    out << "outaged_converters";
    for (int id : n.outaged_converters) out << ' ' << id;
    out << '\n';
  }

  out << "\n[bus]\n# id Pd Qd Gs Bs Vm Va Vmax Vmin angmin angmax\n";
  for (const auto& b : n.ac_buses) {
    out << b.id << ' ' << num(b.load_p * base) << ' ' << num(b.load_q * base) << ' ' << num(b.shunt_g * base) << ' '
        << num(b.shunt_b * base) << ' ' << num(b.voltage_setpoint) << ' ' << num(rad_to_deg(b.angle)) << ' '
        << num(b.v_max) << ' ' << num(b.v_min) << ' ' << num(rad_to_deg(b.angle_min)) << ' '
        << num(rad_to_deg(b.angle_max)) << '\n';
  }

  // Generator ids are positional; outaged rows are skipped on re-parse
  // because their ids are listed in outaged_generators.
  out << "\n[gen]\n# bus Pmax Pmin Qmax Qmin c2 c1 c0\n";
  for (const auto& g : n.generators) {
    out << g.bus << ' ' << num(g.p_max * base) << ' ' << num(g.p_min * base) << ' ' << num(g.q_max * base) << ' '
        << num(g.q_min * base) << ' ' << num(g.cost_alpha / (base * base)) << ' ' << num(g.cost_beta / base) << ' '
        << num(g.cost_gamma) << '\n';
  }

  out << "\n[branch]\n# fbus tbus r x b ratio\n";
  for (const auto& br : n.ac_branches) {
    out << br.from << ' ' << br.to << ' ' << num(br.r) << ' ' << num(br.x) << ' ' << num(br.charging_b) << ' '
        << num(br.tap_ratio) << '\n';
  }

  if (!n.dc_buses.empty()) {
    out << "\n[busdc]\n# id Vdc Vdcmax Vdcmin\n";
    for (const auto& b : n.dc_buses) {
      out << b.id << ' ' << num(b.v_nominal) << ' ' << num(b.v_max) << ' ' << num(b.v_min) << '\n';
    }
  }
  if (!n.dc_branches.empty()) {
    out << "\n[branchdc]\n# fbus tbus r\n";
    for (const auto& br : n.dc_branches) out << br.from << ' ' << br.to << ' ' << num(br.resistance) << '\n';
  }
  if (!n.converters.empty()) {
    out << "\n[convdc]\n# id busac busdc rec_a rec_b rec_c inv_a inv_b inv_c Pdcmin Pdcmax Imax mode Pref Uref k kmin kmax\n";
    for (const auto& c : n.converters) {
      out << c.id << ' ' << c.ac_bus << ' ' << c.dc_bus << ' ' << num(c.rectifier_loss.a) << ' '
          << num(c.rectifier_loss.b) << ' ' << num(c.rectifier_loss.c) << ' ' << num(c.inverter_loss.a) << ' '
          << num(c.inverter_loss.b) << ' ' << num(c.inverter_loss.c) << ' ' << num(c.p_dc_min * base) << ' '
          << num(c.p_dc_max * base) << ' ' << num(c.i_max) << ' ' << to_string(c.control.mode) << ' '
          << num(c.control.p_ref * base) << ' ' << num(c.control.u_ref) << ' ' << num(c.control.k_droop) << ' '
          << num(c.control.k_min) << ' ' << num(c.control.k_max) << '\n';
    }
  }
  return out.str();
}

CaseDiagnostics validate_case(const NetworkCase& n) {
  CaseDiagnostics diag;
  check_unique_ids(n.ac_buses, "AC bus");
  check_unique_ids(n.dc_buses, "DC bus");
  check_unique_ids(n.converters, "converter");
  check_unique_ids(n.generators, "generator");

  for (const auto& b : n.ac_buses) {
    const std::string who = "AC bus " + std::to_string(b.id);
    if (!(b.v_min > 0.0)) throw InvariantError(who + ": Vmin must be positive");
    if (!(b.v_min <= b.v_max)) throw InvariantError(who + ": Vmin exceeds Vmax");
    if (!(b.angle_min <= 0.0 && 0.0 <= b.angle_max)) throw InvariantError(who + ": angle bounds must contain 0");
  }
  if (n.generators.empty()) throw InvariantError("case has no in-service generator");
  for (const auto& g : n.generators) {
    const std::string who = "generator " + std::to_string(g.id);
    if (!n.ac_bus_index(g.bus)) throw ReferenceError(who + " references AC bus " + std::to_string(g.bus) + " which is not defined");
    if (!(g.p_min <= g.p_max)) throw InvariantError(who + ": Pmin exceeds Pmax");
    if (!(g.q_min <= g.q_max)) throw InvariantError(who + ": Qmin exceeds Qmax");
    if (!(g.cost_alpha >= 0.0)) throw InvariantError(who + ": quadratic cost coefficient must be non-negative");
  }
  std::vector<std::pair<std::size_t, std::size_t>> ac_edges;
  for (std::size_t k = 0; k < n.ac_branches.size(); ++k) {
    const auto& br = n.ac_branches[k];
    const std::string who = "AC branch " + std::to_string(k + 1) + " (" + std::to_string(br.from) + "-" + std::to_string(br.to) + ")";
    auto f = n.ac_bus_index(br.from);
    auto t = n.ac_bus_index(br.to);
    if (!f) throw ReferenceError(who + " references AC bus " + std::to_string(br.from) + " which is not defined");
    if (!t) throw ReferenceError(who + " references AC bus " + std::to_string(br.to) + " which is not defined");
    if (br.from == br.to) throw InvariantError(who + ": from and to bus are the same");
    if (!(br.tap_ratio > 0.0)) throw InvariantError(who + ": tap ratio must be positive");
    ac_edges.emplace_back(*f, *t);
  }
  if (!connected_over_non_isolated(n.ac_buses.size(), ac_edges)) throw InvariantError("AC network is not connected");

  for (const auto& b : n.dc_buses) {
    if (!(b.v_min <= b.v_nominal && b.v_nominal <= b.v_max)) {
      throw InvariantError("DC bus " + std::to_string(b.id) + ": nominal voltage outside [Vdcmin, Vdcmax]");
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> dc_edges;
  std::vector<int> dc_degree(n.dc_buses.size(), 0);
  for (std::size_t k = 0; k < n.dc_branches.size(); ++k) {
    const auto& br = n.dc_branches[k];
    const std::string who = "DC branch " + std::to_string(k + 1) + " (" + std::to_string(br.from) + "-" + std::to_string(br.to) + ")";
    auto f = n.dc_bus_index(br.from);
    auto t = n.dc_bus_index(br.to);
    if (!f) throw ReferenceError(who + " references DC bus " + std::to_string(br.from) + " which is not defined");
    if (!t) throw ReferenceError(who + " references DC bus " + std::to_string(br.to) + " which is not defined");
    if (br.from == br.to) throw InvariantError(who + ": from and to bus are the same");
    if (!(br.resistance > 0.0)) throw InvariantError(who + ": resistance must be positive");
    dc_edges.emplace_back(*f, *t);
    ++dc_degree[*f];
    ++dc_degree[*t];
  }
  if (!connected_over_non_isolated(n.dc_buses.size(), dc_edges)) throw InvariantError("DC network is not connected");

  std::vector<bool> dc_has_converter(n.dc_buses.size(), false);
  for (const auto& c : n.converters) {
    const std::string who = "converter " + std::to_string(c.id);
    if (!n.ac_bus_index(c.ac_bus)) throw ReferenceError(who + " references AC bus " + std::to_string(c.ac_bus) + " which is not defined");
    auto d = n.dc_bus_index(c.dc_bus);
    if (!d) throw ReferenceError(who + " references DC bus " + std::to_string(c.dc_bus) + " which is not defined");
    dc_has_converter[*d] = true;
    for (const auto* loss : {&c.rectifier_loss, &c.inverter_loss}) {
      if (!(loss->a >= 0.0 && loss->b >= 0.0 && loss->c >= 0.0)) throw InvariantError(who + ": loss coefficients must be non-negative");
    }
    if (!(c.p_dc_min <= c.p_dc_max)) throw InvariantError(who + ": Pdcmin exceeds Pdcmax");
    if (!(c.i_max > 0.0)) throw InvariantError(who + ": Imax must be positive");
    const auto& ctl = c.control;
    if (!(ctl.k_min > 0.0 && ctl.k_min <= ctl.k_max)) throw InvariantError(who + ": droop gain bounds must satisfy 0 < kmin <= kmax");
    if (ctl.mode == ControlMode::Droop && !(ctl.k_min <= ctl.k_droop && ctl.k_droop <= ctl.k_max)) {
      throw InvariantError(who + ": droop gain outside [kmin, kmax]");
    }
  }

  for (std::size_t i = 0; i < n.ac_buses.size(); ++i) {
    bool touched = std::any_of(ac_edges.begin(), ac_edges.end(), [i](auto e) { return e.first == i || e.second == i; });
    if (!touched && n.ac_buses.size() > 1) diag.warnings.push_back("AC bus " + std::to_string(n.ac_buses[i].id) + " is isolated");
  }
  for (std::size_t i = 0; i < n.dc_buses.size(); ++i) {
    if (!dc_has_converter[i] && dc_degree[i] <= 1) {
      diag.warnings.push_back("DC bus " + std::to_string(n.dc_buses[i].id) + " is a leaf without converter injection");
    }
  }
  return diag;
}

Scenario parse_scenario(const std::filesystem::path& path) { return parse_scenario_text(read_file(path), path.string()); }

Scenario parse_scenario_text(std::string_view text, const std::string& source) {
  Scenario scenario;
  scenario.name = "unnamed";
  bool header_seen = false;
  int line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto tokens = tokenize(raw);
    if (tokens.empty()) continue;
    if (!header_seen) {
      parse_header(tokens, kScenarioFormat, source, line_no);
      header_seen = true;
      continue;
    }
    const std::string& key = tokens[0];
    if (key == "name") {
      if (tokens.size() < 2) throw ParseError(source, line_no, "field 'name': missing value");
      scenario.name = join_rest(tokens, 1);
    } else if (key == "generator_outage" || key == "converter_outage") {
      if (tokens.size() < 2) throw ParseError(source, line_no, "field '" + key + "': missing id");
      auto& target = key == "generator_outage" ? scenario.generator_outages : scenario.converter_outages;
      for (std::size_t i = 1; i < tokens.size(); ++i) {
        std::array<std::string_view, 2> cols{key, key};
        std::vector<std::string> one{tokens[0], tokens[i]};
        target.insert(LineCursor{source, line_no, one, cols}.integer(1));
      }
    } else {
      throw ParseError(source, line_no, "unknown key '" + key + "'");
    }
  }
  if (!header_seen) throw ParseError(source, 1, "empty file: missing format header");
  return scenario;
}

std::string serialize_scenario(const Scenario& s) {
  std::ostringstream out;
  out << "format " << kScenarioFormat << ' ' << kFormatVersion << '\n';
  out << "name " << s.name << '\n';
  for (int id : s.generator_outages) out << "generator_outage " << id << '\n';
  for (int id : s.converter_outages) out << "converter_outage " << id << '\n';
  return out.str();
}

NetworkCase apply_scenario(const NetworkCase& network, const Scenario& scenario) {
  NetworkCase out = network;
  for (int id : scenario.generator_outages) {
    if (network.outaged_generators.contains(id)) continue;
    auto idx = network.generator_index(id);
    if (!idx) throw ReferenceError("scenario '" + scenario.name + "' references unknown generator " + std::to_string(id));
    out.outaged_generators.insert(id);
  }
  for (int id : scenario.converter_outages) {
    if (network.outaged_converters.contains(id)) continue;
    if (!network.converter_index(id)) {
      throw ReferenceError("scenario '" + scenario.name + "' references unknown converter " + std::to_string(id));
    }
    out.outaged_converters.insert(id);
  }
  std::erase_if(out.generators, [&](const Generator& g) { return out.outaged_generators.contains(g.id); });
  std::erase_if(out.converters, [&](const ConverterStation& c) { return out.outaged_converters.contains(c.id); });
  validate_case(out);
  return out;
}

std::size_t reference_bus_index(const NetworkCase& network) {
  for (std::size_t i = 0; i < network.ac_buses.size(); ++i) {
    for (const auto& g : network.generators)
      if (g.bus == network.ac_buses[i].id) return i;
  }
  throw InvariantError("no AC bus hosts a generator");
}

}  // namespace hvdc::grid
