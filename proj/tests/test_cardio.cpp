#include <doctest.h>

#include <cmath>
#include <fstream>

#include "neuralme/cardio_model.hpp"
#include "neuralme/flow_solver.hpp"
#include "neuralme/network.hpp"
#include "neuralme/ode.hpp"
#include "support.hpp"

using namespace neuralme;
using namespace testsupport;

TEST_CASE("load_network: bundled files have the advertised shape") {
  auto desk = desk7();
  CHECK(desk.segments.size() == 7);
  CHECK(desk.terminals.size() == 4);
  CHECK(desk.observed_segments.size() == 4);
  CHECK(desk.root == "n0");

  auto full = full_net();
  CHECK(full.segments.size() == 116);
  CHECK(full.terminals.size() == 46);
  CHECK(full.observed_segments.size() == 10);
}

TEST_CASE("load_network: minimal tree and validation failures") {
  auto net = parse_network(mini_net_json(true), "mini");
  CHECK(net.segments.size() == 1);
  CHECK(net.terminals.size() == 1);
  CHECK(net.observed_segments.size() == 1);

  SUBCASE("duplicate observed id") {
    std::string s = mini_net_json(false);
    s.replace(s.find("\"observed\": []"), 14, "\"observed\": [\"s1\",\"s1\"]");
    CHECK_THROWS_WITH_AS(parse_network(s, "dup"),
                         doctest::Contains("listed twice"), ValidationError);
  }
  SUBCASE("cycle") {
    // a1: n0->n1, a2: n1->n2, a3: n2->n1 gives n1 two parents
    std::string s = R"({"schema_version":1,
      "segments":[
       {"id":"a1","from":"n0","to":"n1","length":0.1,"inlet_diameter":0.01,"outlet_diameter":0.01,"wall_thickness":0.001,"elastic_modulus":5e5},
       {"id":"a2","from":"n1","to":"n2","length":0.1,"inlet_diameter":0.01,"outlet_diameter":0.01,"wall_thickness":0.001,"elastic_modulus":5e5},
       {"id":"a3","from":"n2","to":"n1","length":0.1,"inlet_diameter":0.01,"outlet_diameter":0.01,"wall_thickness":0.001,"elastic_modulus":5e5}],
      "terminals":{"n2":{"r_proximal":1e7,"r_distal":1e8,"compliance":1e-9,"venous_pressure":600}},
      "observed":[]})";
    CHECK_THROWS_AS(parse_network(s, "cycle"), ValidationError);
  }
  SUBCASE("leaf without windkessel") {
    std::string s = mini_net_json(false);
    const auto pos = s.find("\"n1\"", s.find("\"terminals\""));
    s.replace(pos, 4, "\"n0\""); // windkessel moves off the leaf
    CHECK_THROWS_WITH_AS(parse_network(s, "leaf"),
                         doctest::Contains("no windkessel"), ValidationError);
  }
  SUBCASE("parse error carries position context") {
    CHECK_THROWS_AS(parse_network("{ not json", "bad"), ParseError);
  }
  SUBCASE("unsupported schema version") {
    std::string s = mini_net_json(false);
    s.replace(s.find("\"schema_version\": 1"), 19, "\"schema_version\": 9");
    CHECK_THROWS_AS(parse_network(s, "v9"), ParseError);
  }
}

TEST_CASE("pipe_resistance: hand value, d^4 law, monotonicity") {
  FluidProps fluid;
  SegmentGeometry g{0.1, 0.01, 0.01, 0.001, 5e5};
  // 128 * 4e-3 * 0.1 / (pi * 1e-8), evaluated independently
  CHECK(rel_err(pipe_resistance(g, fluid), 1.6297466e6) < 1e-6);

  SegmentGeometry g2 = g;
  g2.inlet_diameter = g2.outlet_diameter = 0.02;
  CHECK(rel_err(pipe_resistance(g, fluid) / pipe_resistance(g2, fluid), 16.0) <
        1e-12);

  // strictly decreasing in d, increasing in L and mu
  SegmentGeometry gd = g;
  gd.inlet_diameter = gd.outlet_diameter = 0.0101;
  CHECK(pipe_resistance(gd, fluid) < pipe_resistance(g, fluid));
  SegmentGeometry gl = g;
  gl.length = 0.11;
  CHECK(pipe_resistance(gl, fluid) > pipe_resistance(g, fluid));
  FluidProps thick = fluid;
  thick.dynamic_viscosity *= 1.1;
  CHECK(pipe_resistance(g, thick) > pipe_resistance(g, fluid));
}

TEST_CASE("heart_inflow: period, peak, periodicity and stroke volume") {
  FluidProps fluid;
  HeartProfile h{73.0, 7e-5, 0.3};
  const double T = h.period();
  CHECK(rel_err(3.0 * T, 2.466) < 1e-3); // three cycles at 73 bpm

  const double t_sys = h.systolic_fraction * T;
  const double peak = fluid.density * 3.14159265358979323846 * h.stroke_volume /
                      (2.0 * t_sys);
  CHECK(rel_err(heart_inflow(0.5 * t_sys, h, fluid), peak) < 1e-12);
  CHECK(heart_inflow(t_sys + 1e-6, h, fluid) == 0.0);
  CHECK(rel_err(heart_inflow(0.1, h, fluid), heart_inflow(0.1 + 2 * T, h, fluid)) <
        1e-9);

  // Simpson quadrature of volume flow over one period equals SV
  const int n = 20000;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double t = T * i / n;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * heart_inflow(t, h, fluid) / fluid.density;
  }
  acc *= T / (3.0 * n);
  CHECK(rel_err(acc, h.stroke_volume) < 1e-6);
}

TEST_CASE("solve_flows: single pipe follows the Ohm analogy") {
  auto net = parse_network(mini_net_json(true), "mini");
  DynamicPressures dyn;
  dyn.clamped["n0"] = 2000.0; // root clamp stands in for an upstream source
  dyn.clamped["n1"] = 1000.0; // placeholder site
  dyn.terminal["n1"] = 900.0; // windkessel compliance pressure behind r1
  auto sol = solve_flows(net, dyn, 0.0, net.fluid);

  const double R = pipe_resistance(net.segments[0].geometry, net.fluid);
  CHECK(rel_err(sol.segment_flows.at("s1"), 1000.0 / R) < 1e-12);
  CHECK(rel_err(sol.terminal_flows.at("n1"),
                100.0 / net.terminals.at("n1").r_proximal) < 1e-12);
}

TEST_CASE("solve_flows: symmetric junction splits evenly, conservation holds") {
  auto net = desk7();
  DynamicPressures dyn;
  for (const auto& [node, wk] : net.terminals) dyn.terminal[node] = 1.1e4;
  // placeholder sites need values too (s1->n1, s3->n3, s4->n4, s7->n7)
  dyn.clamped["n1"] = 1.3e4;
  dyn.clamped["n3"] = 1.25e4;
  dyn.clamped["n4"] = 1.2e4;
  dyn.clamped["n7"] = 1.2e4;
  auto sol = solve_flows(net, dyn, 8e-5, net.fluid);
  CHECK(sol.conservation_residual < 1e-10);

  // s4/s5 leave the same node; s5 feeds an unclamped symmetric leaf
  CHECK(sol.segment_flows.count("s4") == 1);

  // symmetric two-leaf tree: equal children get exactly half the inflow
  std::string sym = R"({"schema_version":1,
    "fluid": {"density": 1060.0, "dynamic_viscosity": 4.0e-3},
    "segments":[
     {"id":"t","from":"r","to":"j","length":0.1,"inlet_diameter":0.012,"outlet_diameter":0.012,"wall_thickness":0.001,"elastic_modulus":5e5},
     {"id":"l","from":"j","to":"a","length":0.08,"inlet_diameter":0.006,"outlet_diameter":0.006,"wall_thickness":0.0006,"elastic_modulus":8e5},
     {"id":"r2","from":"j","to":"b","length":0.08,"inlet_diameter":0.006,"outlet_diameter":0.006,"wall_thickness":0.0006,"elastic_modulus":8e5}],
    "terminals":{
     "a":{"r_proximal":4e7,"r_distal":5e8,"compliance":6e-9,"venous_pressure":667},
     "b":{"r_proximal":4e7,"r_distal":5e8,"compliance":6e-9,"venous_pressure":667}},
    "observed":[]})";
  auto net2 = parse_network(sym, "sym");
  DynamicPressures dyn2;
  dyn2.terminal["a"] = 1.2e4;
  dyn2.terminal["b"] = 1.2e4;
  auto sol2 = solve_flows(net2, dyn2, 8e-5, net2.fluid);
  // branch flows come from small pressure differences between ~1e4 Pa
  // absolute values, which bounds the attainable relative accuracy
  const double q = 8e-5 / net2.fluid.density;
  CHECK(rel_err(sol2.segment_flows.at("l"), 0.5 * q) < 1e-9);
  CHECK(rel_err(sol2.segment_flows.at("r2"), 0.5 * q) < 1e-9);
  CHECK(sol2.conservation_residual < 1e-10);
}

TEST_CASE("solve_flows: desk tree matches an independent dense solve") {
  auto net = desk7();
  DynamicPressures dyn;
  Rng rng(17);
  for (const auto& [node, wk] : net.terminals)
    dyn.terminal[node] = rng.uniform(1.0e4, 1.3e4);
  for (const auto& sid : net.observed_segments)
    dyn.clamped[net.segment(sid).to_node] = rng.uniform(1.1e4, 1.4e4);
  const double inflow = 8.5e-5;
  auto sol = solve_flows(net, dyn, inflow, net.fluid);

  // brute-force oracle: dense KCL assembly over all nodes with clamps
  // eliminated by substitution, solved with full-pivot LU
  const int n = static_cast<int>(net.nodes.size());
  std::vector<int> unknown_ids;
  for (int i = 0; i < n; ++i)
    if (!dyn.clamped.count(net.nodes[i])) unknown_ids.push_back(i);
  const int nu = static_cast<int>(unknown_ids.size());
  auto uidx = [&](int node) {
    for (int k = 0; k < nu; ++k)
      if (unknown_ids[k] == node) return k;
    return -1;
  };
  Mat G = Mat::Zero(nu, nu);
  Vec b = Vec::Zero(nu);
  auto pressure_of = [&](const std::string& name) {
    return dyn.clamped.count(name) ? dyn.clamped.at(name) : 0.0;
  };
  for (const auto& seg : net.segments) {
    const double g = 1.0 / pipe_resistance(seg.geometry, net.fluid);
    const int a = net.node_index(seg.from_node);
    const int bn = net.node_index(seg.to_node);
    const int ua = uidx(a), ub = uidx(bn);
    if (ua >= 0) G(ua, ua) += g;
    if (ub >= 0) G(ub, ub) += g;
    if (ua >= 0 && ub >= 0) {
      G(ua, ub) -= g;
      G(ub, ua) -= g;
    } else if (ua >= 0) {
      b[ua] += g * pressure_of(seg.to_node);
    } else if (ub >= 0) {
      b[ub] += g * pressure_of(seg.from_node);
    }
  }
  for (const auto& [node, p_c] : dyn.terminal) {
    const int ua = uidx(net.node_index(node));
    const double g = 1.0 / net.terminals.at(node).r_proximal;
    if (ua >= 0) {
      G(ua, ua) += g;
      b[ua] += g * p_c;
    }
  }
  b[uidx(net.node_index(net.root))] += inflow / net.fluid.density;
  const Vec p = G.fullPivLu().solve(b);

  for (int k = 0; k < nu; ++k) {
    const auto& name = net.nodes[unknown_ids[k]];
    CHECK(rel_err(sol.node_pressures.at(name), p[k]) < 1e-10);
  }
}

TEST_CASE("solve_flows: missing leaf pressure is rejected") {
  auto net = parse_network(mini_net_json(false), "mini");
  DynamicPressures dyn; // leaf n1 not covered
  CHECK_THROWS_AS(solve_flows(net, dyn, 1e-5, net.fluid), ValidationError);
}

TEST_CASE("build_model: state counts across variants") {
  auto desk = desk7();
  HeartProfile heart;
  CHECK(build_model(desk, CardioVariant::simple_C, desk.fluid, heart)
            ->description()
            .n_states == 4 + 4);
  CHECK(build_model(desk, CardioVariant::simple_LC, desk.fluid, heart)
            ->description()
            .n_states == 4 + 8);
  CHECK(build_model(desk, CardioVariant::reference_elastic, desk.fluid, heart)
            ->description()
            .n_states == 4 + 7);

  auto full = full_net();
  auto mc = build_model(full, CardioVariant::simple_C, full.fluid, heart);
  CHECK(mc->description().n_states == 56); // 46 windkessels + 10 placeholders
  CHECK(mc->description().partition.n_wk == 46);
  auto mlc = build_model(full, CardioVariant::simple_LC, full.fluid, heart);
  CHECK(mlc->description().n_states == 66); // 46 + 2*10
}

TEST_CASE("build_model: long constant-inflow run settles on the analytic state") {
  auto net = desk7();
  HeartProfile heart;
  for (auto variant : {CardioVariant::simple_C, CardioVariant::simple_LC}) {
    auto model = build_model(net, variant, net.fluid, heart);
    const double q_mass = model->mean_inflow();
    const Vec x_ss = model->steady_state(q_mass);

    // derivatives vanish at the analytic equilibrium
    Vec u(1);
    u[0] = q_mass;
    Vec dx;
    model->derivatives(0.0, x_ss, u, dx);
    CHECK(dx.lpNorm<Eigen::Infinity>() < 1e-4); // pressures are O(1e4) Pa/s

    // fixed-step integration from a disturbed state converges to it:
    // 20 windkessel time constants at constant inflow
    const auto& wk = net.terminals.begin()->second;
    const double tau = wk.r_distal * wk.compliance;
    Vec x0 = x_ss;
    x0.head(net.terminals.size()).array() += 2000.0; // perturb the beds
    SolverConfig cfg;
    cfg.method = OdeMethod::rk4;
    cfg.fixed_step = 5e-3;
    cfg.save_times = {0.0, 20.0 * tau};
    ModelRhs rhs(*model, [&](double, Vec& uu) { uu[0] = q_mass; });
    const Trajectory traj = integrate(rhs, x0, cfg);
    const Vec x_end = traj.states.row(1);
    for (int k = 0; k < static_cast<int>(net.terminals.size()); ++k)
      CHECK(std::abs(x_end[k] - x_ss[k]) < 1e-3 * std::abs(x_ss[k]));
  }
}

TEST_CASE("build_model: static network responds linearly to inflow scaling") {
  auto net = desk7();
  HeartProfile heart;
  auto model = build_model(net, CardioVariant::simple_C, net.fluid, heart);
  const int n = model->description().n_states;

  // pick the venous-offset part of the steady state at two inflow levels
  const double q1 = model->mean_inflow();
  const Vec x1 = model->steady_state(q1);
  const Vec x2 = model->steady_state(2.0 * q1);
  // the static net grounds everywhere to the common venous pressure, so
  // every state offset above it scales with the inflow
  const double p_ven = net.terminals.begin()->second.venous_pressure;
  for (int i = 0; i < n; ++i)
    CHECK(rel_err(x2[i] - p_ven, 2.0 * (x1[i] - p_ven)) < 1e-9);
}

TEST_CASE("reference_waveforms: sample counts, rate scaling, periodicity") {
  auto net = desk7();
  HeartProfile heart{73.0, 7e-5, 0.3};
  auto ds = reference_waveforms(net, net.fluid, heart, 3, 40.0, "p1");
  CHECK(ds.n_samples() == 99);
  CHECK(ds.n_channels() == 4);
  // 66 samples fall inside the last two cycles
  const double T = heart.period();
  int in_window = 0;
  for (double t : ds.times)
    if (t >= T) ++in_window;
  CHECK(in_window == 66);

  auto ds80 = reference_waveforms(net, net.fluid, heart, 3, 80.0, "p1");
  CHECK(std::abs(ds80.n_samples() - 2 * ds.n_samples()) <= 1);

  // cycles 2 and 3 agree within 2% after the transient; compare on a
  // period-aligned grid so the phases match exactly
  auto model =
      build_model(net, CardioVariant::reference_elastic, net.fluid, heart);
  SolverConfig cfg;
  cfg.method = OdeMethod::rk45;
  cfg.rel_tol = 1e-8;
  cfg.abs_tol = 1e-5;
  const int per_cycle = 33;
  for (int k = 0; k <= 3 * per_cycle; ++k)
    cfg.save_times.push_back(T * k / per_cycle);
  ModelRhs rhs(*model, [&](double t, Vec& u) {
    u[0] = heart_inflow(t, heart, net.fluid);
  });
  const Trajectory traj = integrate(rhs, model->steady_state(), cfg);
  const auto& cols = model->observed_state_indices();
  for (int c : cols)
    for (int k = per_cycle; k < 2 * per_cycle; ++k) {
      const double p2 = traj.states(k, c);
      const double p3 = traj.states(k + per_cycle, c);
      CHECK(std::abs(p2 - p3) <= 0.02 * std::abs(p3));
    }

  CHECK_THROWS_AS(reference_waveforms(net, net.fluid, heart, 1, 40.0),
                  ValidationError);
}
