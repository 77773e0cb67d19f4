#include <doctest.h>

#include <string>

#include "hvdc/case_model.hpp"
#include "hvdc/error.hpp"

using namespace hvdc;
using namespace hvdc::grid;

namespace {

const std::string kDataDir = HVDC_DATA_DIR;

const char* kTwoBus = R"(format hvdc-case 1
name two_bus
base_mva 100
base_kv_dc 200
[bus]
1  0   0   0 0 1.0 0 1.1 0.9
2  50  20  0 0 1.0 0 1.1 0.9
[gen]
1  200 0 100 -100 0.01 10 5
[branch]
1 2 0.01 0.1 0.0
)";

// Three AC buses and a DC chain 1-2-3; converter 3 sits alone on DC bus 3.
const char* kChain = R"(format hvdc-case 1
name chain
base_mva 100
base_kv_dc 200
[bus]
1  0   0  0 0 1.0 0 1.1 0.9
2  50  10 0 0 1.0 0 1.1 0.9
3  40  10 0 0 1.0 0 1.1 0.9
[gen]
1  300 0 100 -100 0.01 10 5
3  100 0 50  -50  0.02 12 0
[branch]
1 2 0.01 0.1 0.0
2 3 0.01 0.1 0.0
[busdc]
1 1.0
2 1.0
3 1.0
[branchdc]
1 2 0.01
2 3 0.01
[convdc]
1 1 1  0.011 0.003 0.004  0.011 0.003 0.007  -100 100 2.0 droop 0 1.0 0.05
2 2 2  0.011 0.003 0.004  0.011 0.003 0.007  -100 100 2.0 droop 0 1.0 0.05
3 3 3  0.011 0.003 0.004  0.011 0.003 0.007  -100 100 2.0 P     0 1.0 0.05
)";

std::string replace_once(std::string text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  REQUIRE(pos != std::string::npos);
  return text.replace(pos, from.size(), to);
}

}  // namespace

TEST_CASE("minimal pure-AC case parses with zero converters") {
  const auto net = parse_case_text(kTwoBus);
  CHECK(net.ac_buses.size() == 2);
  CHECK(net.generators.size() == 1);
  CHECK(net.converters.empty());
  CHECK(net.dc_buses.empty());
  // MW on a 100 MVA base
  CHECK(net.ac_buses[1].load_p == doctest::Approx(0.5));
  CHECK(net.ac_buses[1].load_q == doctest::Approx(0.2));
  CHECK(net.generators[0].p_max == doctest::Approx(2.0));
  // cost per MW^2 rescaled to per pu^2
  CHECK(net.generators[0].cost_alpha == doctest::Approx(100.0));
  CHECK(net.generators[0].cost_beta == doctest::Approx(1000.0));
}

TEST_CASE("bundled cases round-trip through the canonical text form") {
  for (const char* name : {"three_terminal", "nordic_like", "ieee9_ac"}) {
    CAPTURE(name);
    const auto net = parse_case(kDataDir + "/cases/" + name + ".case");
    const auto text = serialize_case(net);
    const auto again = parse_case_text(text);
    CHECK(again == net);
    CHECK(serialize_case(again) == text);
  }
}

TEST_CASE("loss coefficient sets survive the round trip bit for bit") {
  const auto net = parse_case_text(kChain);
  const auto back = parse_case_text(serialize_case(net));
  for (const auto& c : back.converters) {
    CHECK(c.rectifier_loss == LossCoefficients{0.011, 0.003, 0.004});
    CHECK(c.inverter_loss == LossCoefficients{0.011, 0.003, 0.007});
  }
}

TEST_CASE("nordic-like header carries the 100 MVA / 200 kV bases") {
  const auto net = parse_case(kDataDir + "/cases/nordic_like.case");
  CHECK(net.s_nominal == 100.0);
  CHECK(net.v_dc_nominal == 200.0);
}

TEST_CASE("parse errors carry the line number") {
  SUBCASE("unknown key") {
    const auto text = replace_once(kTwoBus, "base_kv_dc 200", "bogus 1");
    try {
      parse_case_text(text, "t.case");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 4);
      CHECK(std::string(e.what()).find("t.case:4") == 0);
    }
  }
  SUBCASE("non-numeric field") {
    const auto text = replace_once(kTwoBus, "2  50  20", "2  5x  20");
    try {
      parse_case_text(text);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 7);
      CHECK(std::string(e.what()).find("Pd") != std::string::npos);
    }
  }
  SUBCASE("missing header") { CHECK_THROWS_AS(parse_case_text("name x\n"), ParseError); }
}

TEST_CASE("dangling converter reference names the converter and the bus") {
  const auto text = replace_once(kChain, "2 2 2  0.011", "2 2 99  0.011");
  try {
    parse_case_text(text);
    FAIL("expected ReferenceError");
  } catch (const ReferenceError& e) {
    const std::string what = e.what();
    CHECK(what.find("converter 2") != std::string::npos);
    CHECK(what.find("99") != std::string::npos);
  }
}

TEST_CASE("invariant violations name the element") {
  const auto text = replace_once(kTwoBus, "1.0 0 1.1 0.9\n2", "1.0 0 0.8 0.9\n2");
  CHECK_THROWS_WITH_AS(parse_case_text(text), doctest::Contains("bus 1"), InvariantError);
}

TEST_CASE("empty scenario is the identity") {
  const auto net = parse_case_text(kChain);
  const auto out = apply_scenario(net, Scenario{"none", {}, {}});
  CHECK(out == net);
}

TEST_CASE("generator outage removes exactly one generator") {
  const auto net = parse_case_text(kChain);
  const auto copy = net;
  const auto out = apply_scenario(net, Scenario{"g2", {2}, {}});
  CHECK(out.generators.size() == net.generators.size() - 1);
  CHECK(out.ac_buses == net.ac_buses);
  CHECK(out.converters == net.converters);
  CHECK(out.generators[0].id == 1);
  CHECK(net == copy);
}

TEST_CASE("converter outage on a leaf DC bus warns instead of failing") {
  const auto net = parse_case_text(kChain);
  CHECK(validate_case(net).warnings.empty());
  const auto out = apply_scenario(net, Scenario{"c3", {}, {3}});
  CHECK(out.converters.size() == 2);
  CHECK(out.dc_buses.size() == 3);
  const auto diag = validate_case(out);
  REQUIRE(diag.warnings.size() == 1);
  CHECK(diag.warnings[0].find("DC bus 3") != std::string::npos);
}

TEST_CASE("applying a scenario twice equals applying it once") {
  const auto net = parse_case(kDataDir + "/cases/nordic_like.case");
  for (const char* f : {"scenario1_normal", "scenario2_gen16", "scenario3_mmc4"}) {
    const auto sc = parse_scenario(kDataDir + "/scenarios/" + f + ".scn");
    const auto once = apply_scenario(net, sc);
    CHECK(apply_scenario(once, sc) == once);
  }
}

TEST_CASE("outaged elements survive serialization") {
  const auto net = parse_case_text(kChain);
  const auto out = apply_scenario(net, Scenario{"mix", {2}, {3}});
  CHECK(parse_case_text(serialize_case(out)) == out);
}

TEST_CASE("scenario referencing an unknown generator names the id") {
  const auto net = parse_case_text(kChain);
  CHECK_THROWS_WITH_AS(apply_scenario(net, Scenario{"bad", {42}, {}}), doctest::Contains("42"), ReferenceError);
}

TEST_CASE("scenario text round-trips") {
  const auto sc = parse_scenario_text("format hvdc-scenario 1\nname s\ngenerator_outage 3\nconverter_outage 1\n");
  CHECK(sc.name == "s");
  CHECK(sc.generator_outages == std::set<int>{3});
  CHECK(sc.converter_outages == std::set<int>{1});
  const auto again = parse_scenario_text(serialize_scenario(sc));
  CHECK(again.name == sc.name);
  CHECK(again.generator_outages == sc.generator_outages);
  CHECK(again.converter_outages == sc.converter_outages);
}

TEST_CASE("reference bus is the first bus hosting a generator") {
  const auto net = parse_case_text(kChain);
  CHECK(reference_bus_index(net) == 0);
  const auto out = apply_scenario(net, Scenario{"g1", {1}, {}});
  CHECK(reference_bus_index(out) == 2);
}
