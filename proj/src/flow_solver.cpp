#include "neuralme/flow_solver.hpp"

#include <cmath>
#include <limits>

namespace neuralme {

int NodalSolver::add_node() {
  dirichlet_.push_back(0);
  return n_nodes_++;
}

int NodalSolver::add_external() { return n_ext_++; }

void NodalSolver::set_dirichlet(int node) { dirichlet_.at(node) = 1; }

void NodalSolver::add_resistor(int a, int b, double resistance) {
  if (resistance <= 0.0)
    throw ValidationError("resistor branch with non-positive resistance");
  branches_.push_back({a, b, 1.0 / resistance});
}

void NodalSolver::add_external_resistor(int node, int ext, double resistance) {
  if (resistance <= 0.0)
    throw ValidationError("external branch with non-positive resistance");
  branches_.push_back({node, ~ext, 1.0 / resistance});
}

void NodalSolver::finalize() {
  unknown_of_node_.assign(n_nodes_, -1);
  n_unknown_ = 0;
  for (int n = 0; n < n_nodes_; ++n)
    if (!dirichlet_[n]) unknown_of_node_[n] = n_unknown_++;

  std::vector<Eigen::Triplet<double>> trip;
  for (const auto& br : branches_) {
    const int ua = unknown_of_node_[br.a];
    const int ub = br.b >= 0 ? unknown_of_node_[br.b] : -1;
    if (ua >= 0) trip.emplace_back(ua, ua, br.conductance);
    if (ub >= 0) trip.emplace_back(ub, ub, br.conductance);
    if (ua >= 0 && ub >= 0) {
      trip.emplace_back(ua, ub, -br.conductance);
      trip.emplace_back(ub, ua, -br.conductance);
    }
  }
  G_.resize(n_unknown_, n_unknown_);
  G_.setFromTriplets(trip.begin(), trip.end());
  if (n_unknown_ > 0) {
    llt_.compute(G_);
    if (llt_.info() != Eigen::Success)
      throw SingularSystem("nodal conductance matrix is not SPD; "
                           "network is degenerate");
  }
  b_.resize(n_unknown_);
  p_.resize(n_unknown_);
  r_.resize(n_unknown_);
  finalized_ = true;
}

void NodalSolver::solve(Eigen::VectorXd& pressures,
                        const Eigen::VectorXd& externals,
                        const std::vector<std::pair<int, double>>& injections) {
  if (!finalized_) throw ValidationError("NodalSolver::solve before finalize");
  if (pressures.size() != n_nodes_)
    throw DimensionMismatch("NodalSolver pressures", n_nodes_, pressures.size());
  if (externals.size() != n_ext_)
    throw DimensionMismatch("NodalSolver externals", n_ext_, externals.size());

  if (n_unknown_ > 0) {
    b_.setZero();
    for (const auto& br : branches_) {
      const int ua = unknown_of_node_[br.a];
      const int ub = br.b >= 0 ? unknown_of_node_[br.b] : -2;
      const double pb = br.b >= 0 ? pressures[br.b] : externals[~br.b];
      if (ua >= 0 && ub < 0) b_[ua] += br.conductance * pb;
      if (ua < 0 && ub >= 0) b_[ub] += br.conductance * pressures[br.a];
    }
    for (const auto& [node, q] : injections) {
      const int un = unknown_of_node_.at(node);
      if (un >= 0) b_[un] += q;
    }

    p_ = llt_.solve(b_);
    // refinement sweeps keep the conservation residual near round-off even
    // when conductances span several decades; stop once it hits the floor
    double prev = std::numeric_limits<double>::infinity();
    for (int sweep = 0; sweep < 3; ++sweep) {
      r_.noalias() = b_ - G_ * p_;
      const double rnorm = r_.norm();
      if (!(rnorm < prev)) break;
      prev = rnorm;
      p_ += llt_.solve(r_);
    }

    for (int n = 0; n < n_nodes_; ++n)
      if (unknown_of_node_[n] >= 0) pressures[n] = p_[unknown_of_node_[n]];
  }

  // flow-conservation residual at every unknown node, relative to the
  // local flow scale
  Eigen::VectorXd net = Eigen::VectorXd::Zero(n_unknown_);
  Eigen::VectorXd scale = Eigen::VectorXd::Zero(n_unknown_);
  for (const auto& br : branches_) {
    const double pa = pressures[br.a];
    const double pb = br.b >= 0 ? pressures[br.b] : externals[~br.b];
    const double q = br.conductance * (pa - pb); // flow a -> b
    const int ua = unknown_of_node_[br.a];
    const int ub = br.b >= 0 ? unknown_of_node_[br.b] : -1;
    if (ua >= 0) {
      net[ua] -= q;
      scale[ua] += std::abs(q);
    }
    if (ub >= 0) {
      net[ub] += q;
      scale[ub] += std::abs(q);
    }
  }
  for (const auto& [node, q] : injections) {
    const int un = unknown_of_node_.at(node);
    if (un >= 0) {
      net[un] += q;
      scale[un] += std::abs(q);
    }
  }
  // imbalance relative to the solve's peak nodal flow. A node whose own
  // flows sit at the rounding floor (the root during diastole solves
  // "pipe flow = 0") would make a row-relative ratio meaningless.
  const double global_scale = n_unknown_ > 0 ? scale.maxCoeff() : 0.0;
  last_residual_ =
      n_unknown_ > 0
          ? net.lpNorm<Eigen::Infinity>() / std::max(global_scale, 1e-300)
          : 0.0;
  max_residual_ = std::max(max_residual_, last_residual_);
}

double pipe_resistance(const SegmentGeometry& g, const FluidProps& fluid) {
  g.validate("pipe_resistance");
  const double d = g.mean_diameter();
  const double pi = 3.14159265358979323846;
  return 128.0 * fluid.dynamic_viscosity * g.length / (pi * d * d * d * d);
}

double segment_compliance(const SegmentGeometry& g) {
  const double pi = 3.14159265358979323846;
  const double r = 0.5 * g.mean_diameter();
  return 3.0 * pi * r * r * r * g.length /
         (2.0 * g.elastic_modulus * g.wall_thickness);
}

double heart_inflow(double t, const HeartProfile& heart,
                    const FluidProps& fluid) {
  const double T = heart.period();
  const double t_sys = heart.systolic_fraction * T;
  double tau = std::fmod(t, T);
  if (tau < 0.0) tau += T;
  if (tau >= t_sys) return 0.0;
  const double pi = 3.14159265358979323846;
  const double peak = fluid.density * pi * heart.stroke_volume / (2.0 * t_sys);
  return peak * std::sin(pi * tau / t_sys);
}

FlowSolution solve_flows(const ArterialNetwork& net,
                         const DynamicPressures& dynamic, double inflow,
                         const FluidProps& fluid) {
  const int n = static_cast<int>(net.nodes.size());
  if (n == 0)
    throw ValidationError("solve_flows: network has not been validated");

  NodalSolver solver;
  for (int i = 0; i < n; ++i) solver.add_node();

  for (const auto& [name, p] : dynamic.clamped)
    solver.set_dirichlet(net.node_index(name));

  // terminal entries couple through the windkessel proximal resistor
  std::vector<std::pair<std::string, int>> term_ext; // node -> ext slot
  for (const auto& [name, p_c] : dynamic.terminal) {
    auto it = net.terminals.find(name);
    if (it == net.terminals.end())
      throw ValidationError("solve_flows: node '" + name +
                            "' has no windkessel terminal");
    const int ext = solver.add_external();
    solver.add_external_resistor(net.node_index(name), ext,
                                 it->second.r_proximal);
    term_ext.emplace_back(name, ext);
  }

  for (const auto& name : net.nodes) {
    if (!net.is_leaf(name)) continue;
    if (!dynamic.clamped.count(name) && !dynamic.terminal.count(name))
      throw ValidationError("solve_flows: leaf '" + name +
                            "' has no dynamic pressure");
  }

  std::vector<double> resistance(net.segments.size());
  for (size_t i = 0; i < net.segments.size(); ++i) {
    resistance[i] = pipe_resistance(net.segments[i].geometry, fluid);
    solver.add_resistor(net.node_index(net.segments[i].from_node),
                        net.node_index(net.segments[i].to_node), resistance[i]);
  }
  solver.finalize();

  Eigen::VectorXd pressures = Eigen::VectorXd::Zero(n);
  for (const auto& [name, p] : dynamic.clamped)
    pressures[net.node_index(name)] = p;
  Eigen::VectorXd externals(solver.n_externals());
  for (const auto& [name, ext] : term_ext)
    externals[ext] = dynamic.terminal.at(name);

  std::vector<std::pair<int, double>> injections;
  if (inflow != 0.0)
    injections.emplace_back(net.node_index(net.root), inflow / fluid.density);

  solver.solve(pressures, externals, injections);

  FlowSolution sol;
  sol.conservation_residual = solver.last_residual();
  for (int i = 0; i < n; ++i) sol.node_pressures[net.nodes[i]] = pressures[i];
  for (size_t i = 0; i < net.segments.size(); ++i) {
    const auto& s = net.segments[i];
    sol.segment_flows[s.id] =
        (pressures[net.node_index(s.from_node)] -
         pressures[net.node_index(s.to_node)]) /
        resistance[i];
  }
  for (const auto& [name, ext] : term_ext) {
    const auto& wk = net.terminals.at(name);
    sol.terminal_flows[name] =
        (pressures[net.node_index(name)] - externals[ext]) / wk.r_proximal;
  }
  return sol;
}

} // namespace neuralme
