#include "neuralme/cardio_model.hpp"

#include <algorithm>
#include <cmath>

#include "neuralme/ode.hpp"

namespace neuralme {

const char* to_string(CardioVariant v) {
  switch (v) {
    case CardioVariant::simple_C: return "simple_C";
    case CardioVariant::simple_LC: return "simple_LC";
    case CardioVariant::reference_elastic: return "reference_elastic";
  }
  return "?";
}

CardioVariant cardio_variant_from_string(const std::string& s) {
  if (s == "simple_C" || s == "c" || s == "C") return CardioVariant::simple_C;
  if (s == "simple_LC" || s == "lc" || s == "LC") return CardioVariant::simple_LC;
  if (s == "reference_elastic" || s == "reference" || s == "elastic")
    return CardioVariant::reference_elastic;
  throw ValidationError("unknown cardio variant '" + s + "'");
}

namespace {

/// Static (all capacitors flow-free) nodal pressures: terminals appear as
/// R1+R2 branches to venous pressure, optional Dirichlet clamps pin LC
/// nodes. Returns pressures for network nodes plus, for the elastic
/// variant, mid-segment nodes appended in segment order.
Eigen::VectorXd static_pressures(const ArterialNetwork& net,
                                 const FluidProps& fluid, double mass_inflow,
                                 bool split_segments,
                                 const std::map<int, double>& clamps) {
  const int n_net = static_cast<int>(net.nodes.size());
  const int n_mid = split_segments ? static_cast<int>(net.segments.size()) : 0;
  NodalSolver solver;
  for (int i = 0; i < n_net + n_mid; ++i) solver.add_node();
  for (const auto& [node, p] : clamps) solver.set_dirichlet(node);

  for (size_t i = 0; i < net.segments.size(); ++i) {
    const auto& s = net.segments[i];
    const double R = pipe_resistance(s.geometry, fluid);
    const int a = net.node_index(s.from_node);
    const int b = net.node_index(s.to_node);
    if (split_segments) {
      const int mid = n_net + static_cast<int>(i);
      solver.add_resistor(a, mid, 0.5 * R);
      solver.add_resistor(mid, b, 0.5 * R);
    } else {
      solver.add_resistor(a, b, R);
    }
  }
  Eigen::VectorXd externals(static_cast<int>(net.terminals.size()));
  for (const auto& name : net.terminal_nodes()) {
    const auto& wk = net.terminals.at(name);
    const int slot = solver.add_external();
    solver.add_external_resistor(net.node_index(name), slot,
                                 wk.r_proximal + wk.r_distal);
    externals[slot] = wk.venous_pressure;
  }
  solver.finalize();

  Eigen::VectorXd pressures = Eigen::VectorXd::Zero(n_net + n_mid);
  for (const auto& [node, p] : clamps) pressures[node] = p;
  std::vector<std::pair<int, double>> inj{
      {net.node_index(net.root), mass_inflow / fluid.density}};
  solver.solve(pressures, externals, inj);
  return pressures;
}

} // namespace

std::unique_ptr<CardioModel>
build_model(const ArterialNetwork& net, CardioVariant variant,
            const FluidProps& fluid, const HeartProfile& heart,
            const std::optional<std::vector<PlaceholderParams>>&
                placeholder_override) {
  fluid.validate();
  heart.validate();

  auto m = std::unique_ptr<CardioModel>(new CardioModel());
  m->variant_ = variant;
  m->net_ = net;
  m->net_.validate();
  m->fluid_ = fluid;
  m->heart_ = heart;
  const ArterialNetwork& n = m->net_;

  const bool elastic = variant == CardioVariant::reference_elastic;
  const int n_net_nodes = static_cast<int>(n.nodes.size());
  const int n_mid = elastic ? static_cast<int>(n.segments.size()) : 0;
  m->n_solver_nodes_ = n_net_nodes + n_mid;
  m->root_ = n.node_index(n.root);

  for (int i = 0; i < m->n_solver_nodes_; ++i) m->solver_.add_node();

  // windkessel terminals, discovery order
  const auto term_nodes = n.terminal_nodes();
  const int n_wk = static_cast<int>(term_nodes.size());
  for (int k = 0; k < n_wk; ++k) {
    CardioModel::Terminal t;
    t.node = n.node_index(term_nodes[k]);
    t.ext = m->solver_.add_external();
    t.state = k;
    t.wk = n.terminals.at(term_nodes[k]);
    m->solver_.add_external_resistor(t.node, t.ext, t.wk.r_proximal);
    m->terminals_.push_back(t);
  }

  int n_art = 0;
  if (!elastic) {
    const auto& obs = n.observed_segments;
    if (placeholder_override && placeholder_override->size() != obs.size())
      throw ValidationError("placeholder override size != observed count");
    const PlaceholderKind kind = variant == CardioVariant::simple_C
                                     ? PlaceholderKind::C
                                     : PlaceholderKind::LC;
    const int per = kind == PlaceholderKind::C ? 1 : 2;
    n_art = per * static_cast<int>(obs.size());
    for (size_t i = 0; i < obs.size(); ++i) {
      CardioModel::Placeholder ph;
      ph.node = n.node_index(n.segment(obs[i]).to_node);
      ph.p_state = n_wk + per * static_cast<int>(i);
      ph.q_state = kind == PlaceholderKind::LC ? ph.p_state + 1 : -1;
      ph.params = placeholder_override ? (*placeholder_override)[i]
                                       : n.placeholder.for_segment(obs[i], kind);
      ph.params.kind = kind;
      m->solver_.set_dirichlet(ph.node);
      m->placeholders_.push_back(ph);
      m->observed_states_.push_back(ph.p_state);
    }
  } else {
    n_art = static_cast<int>(n.segments.size());
    for (int i = 0; i < n_art; ++i) {
      CardioModel::ElasticState es;
      es.node = n_net_nodes + i;
      es.state = n_wk + i;
      es.compliance = segment_compliance(n.segments[i].geometry);
      m->solver_.set_dirichlet(es.node);
      m->elastic_.push_back(es);
    }
    for (const auto& id : n.observed_segments) {
      int si = -1;
      for (int i = 0; i < n_art; ++i)
        if (n.segments[i].id == id) si = i;
      m->observed_states_.push_back(n_wk + si);
    }
  }

  // pipe branches
  for (size_t i = 0; i < n.segments.size(); ++i) {
    const auto& s = n.segments[i];
    const double R = pipe_resistance(s.geometry, fluid);
    const int a = n.node_index(s.from_node);
    const int b = n.node_index(s.to_node);
    if (elastic) {
      const int mid = n_net_nodes + static_cast<int>(i);
      m->solver_.add_resistor(a, mid, 0.5 * R);
      m->solver_.add_resistor(mid, b, 0.5 * R);
    } else {
      m->solver_.add_resistor(a, b, R);
    }
  }
  m->solver_.finalize();

  // incident branch lists for the net-inflow terms at state nodes
  m->incident_.assign(m->n_solver_nodes_, {});
  for (const auto& br : m->solver_.branches()) {
    m->incident_[br.a].emplace_back(br.b, br.conductance);
    if (br.b >= 0) m->incident_[br.b].emplace_back(br.a, br.conductance);
  }

  // auto reference pressure: the node's static steady pressure at the mean
  // heart inflow, so an untouched LC shunt carries no flow at equilibrium
  if (variant == CardioVariant::simple_LC) {
    bool need_auto = false;
    for (const auto& ph : m->placeholders_)
      if (ph.params.reference_pressure <= 0.0) need_auto = true;
    if (need_auto) {
      const Eigen::VectorXd ps =
          static_pressures(n, fluid, m->mean_inflow(), false, {});
      for (auto& ph : m->placeholders_)
        if (ph.params.reference_pressure <= 0.0)
          ph.params.reference_pressure = ps[ph.node];
    }
  }
  for (const auto& ph : m->placeholders_)
    m->placeholders_effective_.push_back(ph.params);

  // description
  m->desc_.n_states = n_wk + n_art;
  m->desc_.n_inputs = 1;
  m->desc_.input_names = {"m_flow_heart"};
  m->desc_.partition = StatePartition::contiguous(n_wk, n_art);
  for (const auto& name : term_nodes)
    m->desc_.state_names.push_back("p_wk[" + name + "]");
  if (!elastic) {
    for (size_t i = 0; i < n.observed_segments.size(); ++i) {
      m->desc_.state_names.push_back("p_art[" + n.observed_segments[i] + "]");
      if (variant == CardioVariant::simple_LC)
        m->desc_.state_names.push_back("q_art[" + n.observed_segments[i] + "]");
    }
  } else {
    for (const auto& s : n.segments)
      m->desc_.state_names.push_back("p_seg[" + s.id + "]");
  }
  m->desc_.validate();

  m->pressures_.resize(m->n_solver_nodes_);
  m->externals_.resize(n_wk);
  return m;
}

void CardioModel::eval(double, const Vec& x, const Vec& u, Vec& dxdt,
                       bool homogeneous) {
  dxdt.resize(desc_.n_states);
  pressures_.setZero();

  for (const auto& t : terminals_) externals_[t.ext] = x[t.state];
  for (const auto& ph : placeholders_) pressures_[ph.node] = x[ph.p_state];
  for (const auto& es : elastic_) pressures_[es.node] = x[es.state];

  std::vector<std::pair<int, double>> inj{{root_, u[0] / fluid_.density}};
  solver_.solve(pressures_, externals_, inj);

  for (const auto& t : terminals_) {
    const double p_c = x[t.state];
    const double q_in = (pressures_[t.node] - p_c) / t.wk.r_proximal;
    const double p_ven = homogeneous ? 0.0 : t.wk.venous_pressure;
    dxdt[t.state] = (q_in - (p_c - p_ven) / t.wk.r_distal) / t.wk.compliance;
  }

  auto net_inflow = [&](int node) {
    double q = 0.0;
    for (const auto& [other, g] : incident_[node]) {
      const double po = other >= 0 ? pressures_[other] : externals_[~other];
      q += g * (po - pressures_[node]);
    }
    return q;
  };

  for (const auto& ph : placeholders_) {
    const double q_net = net_inflow(ph.node);
    if (ph.q_state < 0) {
      dxdt[ph.p_state] = q_net / ph.params.capacitance;
    } else {
      const double q_l = x[ph.q_state];
      const double p_ref = homogeneous ? 0.0 : ph.params.reference_pressure;
      dxdt[ph.p_state] = (q_net - q_l) / ph.params.capacitance;
      dxdt[ph.q_state] = (x[ph.p_state] - p_ref) / ph.params.inertance;
    }
  }

  for (const auto& es : elastic_)
    dxdt[es.state] = net_inflow(es.node) / es.compliance;
}

void CardioModel::derivatives(double t, const Vec& x, const Vec& u, Vec& dxdt) {
  check_args(x, u);
  eval(t, x, u, dxdt, false);
}

void CardioModel::jvp(double t, const Vec& x, const Vec& u, const Vec& v_x,
                      const Vec& v_u, Vec& out) {
  check_args(x, u);
  if (v_x.size() != desc_.n_states)
    throw DimensionMismatch("jvp seed v_x", desc_.n_states, v_x.size());
  if (v_u.size() != desc_.n_inputs)
    throw DimensionMismatch("jvp seed v_u", desc_.n_inputs, v_u.size());
  // affine rhs: the directional derivative is the homogeneous evaluation of
  // the seed itself, independent of the linearization point
  eval(t, v_x, v_u, out, true);
}

void CardioModel::ensure_jacobian() {
  if (jac_ready_) return;
  const int n = desc_.n_states;
  if (n > 256)
    throw CapabilityMissing("dense jacobian cache refused for n_states > 256");
  A_.resize(n, n);
  B_.resize(n);
  Vec e = Vec::Zero(n);
  Vec eu = Vec::Zero(1);
  Vec col(n);
  for (int j = 0; j < n; ++j) {
    e[j] = 1.0;
    eval(0.0, e, eu, col, true);
    A_.col(j) = col;
    e[j] = 0.0;
  }
  eu[0] = 1.0;
  eval(0.0, e, eu, col, true);
  B_ = col;
  jac_ready_ = true;
}

void CardioModel::vjp(double, const Vec& x, const Vec& u, const Vec& w,
                      Vec& w_x, Vec& w_u) {
  check_args(x, u);
  if (w.size() != desc_.n_states)
    throw DimensionMismatch("vjp seed", desc_.n_states, w.size());
  ensure_jacobian();
  w_x.noalias() = A_.transpose() * w;
  w_u.resize(1);
  w_u[0] = B_.dot(w);
}

std::unique_ptr<MEModel> CardioModel::clone() const {
  auto m = build_model(net_, variant_, fluid_, heart_,
                       variant_ == CardioVariant::reference_elastic
                           ? std::nullopt
                           : std::make_optional(placeholders_effective_));
  m->jac_ready_ = jac_ready_;
  m->A_ = A_;
  m->B_ = B_;
  return m;
}

Vec CardioModel::input_at(double t) const {
  Vec u(1);
  u[0] = heart_inflow(t, heart_, fluid_);
  return u;
}

double CardioModel::mean_inflow() const {
  return fluid_.density * heart_.stroke_volume / heart_.period();
}

Vec CardioModel::steady_state(double mass_inflow) const {
  std::map<int, double> clamps;
  for (const auto& ph : placeholders_)
    if (ph.q_state >= 0) clamps[ph.node] = ph.params.reference_pressure;

  const bool elastic = variant_ == CardioVariant::reference_elastic;
  const Eigen::VectorXd ps =
      static_pressures(net_, fluid_, mass_inflow, elastic, clamps);

  Vec x(desc_.n_states);
  for (const auto& t : terminals_) {
    const double q = (ps[t.node] - t.wk.venous_pressure) /
                     (t.wk.r_proximal + t.wk.r_distal);
    x[t.state] = t.wk.venous_pressure + q * t.wk.r_distal;
  }
  for (const auto& ph : placeholders_) {
    x[ph.p_state] = ps[ph.node];
    if (ph.q_state >= 0) {
      // the inductor carries whatever net flow the clamp extracts
      double q = 0.0;
      for (const auto& [other, g] : incident_[ph.node]) {
        if (other >= 0) {
          q += g * (ps[other] - ps[ph.node]);
        } else {
          // terminal branch: conductance here is 1/R1, but the static path
          // runs through R1+R2 to venous pressure
          const auto& t = terminals_[~other];
          q += (t.wk.venous_pressure - ps[ph.node]) /
               (t.wk.r_proximal + t.wk.r_distal);
        }
      }
      x[ph.q_state] = q;
    }
  }
  for (const auto& es : elastic_) x[es.state] = ps[es.node];
  return x;
}

Dataset reference_waveforms(const ArterialNetwork& net, const FluidProps& fluid,
                            const HeartProfile& heart, int n_cycles,
                            double rate, const std::string& label) {
  if (n_cycles < 2)
    throw ValidationError("reference_waveforms: need n_cycles >= 2");
  if (rate <= 0.0) throw ValidationError("reference_waveforms: rate <= 0");
  if (net.observed_segments.empty())
    throw ValidationError("reference_waveforms: network has no observed segments");

  auto model =
      build_model(net, CardioVariant::reference_elastic, fluid, heart);

  SolverConfig cfg;
  cfg.method = OdeMethod::rk45;
  cfg.rel_tol = 1e-8;
  cfg.abs_tol = 1e-5; // pressures are O(1e4) Pa
  const double t_end = n_cycles * heart.period();
  for (long k = 0;; ++k) {
    const double t = static_cast<double>(k) / rate;
    if (t > t_end) break;
    cfg.save_times.push_back(t);
  }

  ModelRhs rhs(*model, [&](double t, Vec& u) {
    u[0] = heart_inflow(t, heart, fluid);
  });
  const Vec x0 = model->steady_state();
  const Trajectory traj = integrate(rhs, x0, cfg);

  Dataset ds;
  ds.times = traj.times;
  ds.rate = rate;
  ds.segment_ids = net.observed_segments;
  ds.patient.heart_rate = heart.heart_rate;
  ds.patient.label = label;
  const auto& cols = model->observed_state_indices();
  ds.pressures.resize(traj.states.rows(), static_cast<long>(cols.size()));
  for (size_t c = 0; c < cols.size(); ++c)
    ds.pressures.col(static_cast<long>(c)) = traj.states.col(cols[c]);
  return ds;
}

} // namespace neuralme
