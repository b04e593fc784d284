#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <map>
#include <string>
#include <vector>

#include "neuralme/errors.hpp"
#include "neuralme/network.hpp"

namespace neuralme {

/// Linear nodal analysis over a resistive branch graph. Node pressures at
/// Dirichlet nodes are supplied per solve; the remaining pressures follow
/// from flow conservation. The conductance matrix is constant, so it is
/// assembled and Cholesky-factorized once; each solve is a pair of
/// triangular sweeps plus one iterative-refinement step.
class NodalSolver {
public:
  int add_node();
  int add_external(); // fixed-pressure slot filled per solve
  void set_dirichlet(int node);
  void add_resistor(int a, int b, double resistance);
  void add_external_resistor(int node, int ext, double resistance);

  void finalize();

  /// pressures[n] must hold the Dirichlet values on entry; unknown entries
  /// are overwritten with the solution. injections are volume flows into
  /// nodes (m^3/s).
  void solve(Eigen::VectorXd& pressures, const Eigen::VectorXd& externals,
             const std::vector<std::pair<int, double>>& injections);

  int n_nodes() const { return n_nodes_; }
  int n_externals() const { return n_ext_; }
  int n_unknowns() const { return n_unknown_; }

  /// Flow-conservation residual of the most recent solve (worst junction
  /// imbalance relative to the solve's peak nodal flow), and the maximum
  /// seen over the solver's lifetime.
  double last_residual() const { return last_residual_; }
  double max_residual_seen() const { return max_residual_; }

  /// Signed branch flow a->b for branch index as returned by add_resistor
  /// order; convenience for callers that keep their own branch bookkeeping.
  struct Branch {
    int a, b;      // b < 0 encodes external slot ~b
    double conductance;
  };
  const std::vector<Branch>& branches() const { return branches_; }

private:
  int n_nodes_ = 0;
  int n_ext_ = 0;
  int n_unknown_ = 0;
  bool finalized_ = false;
  std::vector<char> dirichlet_;
  std::vector<Branch> branches_;
  std::vector<int> unknown_of_node_; // -1 for Dirichlet nodes

  Eigen::SparseMatrix<double> G_;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt_;

  // per-solve scratch
  Eigen::VectorXd b_, p_, r_;
  double last_residual_ = 0.0;
  double max_residual_ = 0.0;
};

/// Boundary values for the public network solve. `clamped` entries pin the
/// named node's pressure exactly (placeholder states); `terminal` entries
/// give the windkessel compliance pressure behind that terminal's proximal
/// resistor. Every leaf must be covered by one of the two maps.
struct DynamicPressures {
  std::map<std::string, double> clamped;
  std::map<std::string, double> terminal;
};

struct FlowSolution {
  std::map<std::string, double> node_pressures;
  std::map<std::string, double> segment_flows;  // signed, from -> to, m^3/s
  std::map<std::string, double> terminal_flows; // into each windkessel, m^3/s
  double conservation_residual = 0.0;           // relative, max over junctions
};

/// One-shot linear nodal solve of the pipe-resistance graph: pressures at
/// all nodes and signed volume flows per segment. inflow is the heart mass
/// flow (kg/s) injected at the root.
FlowSolution solve_flows(const ArterialNetwork& net,
                         const DynamicPressures& dynamic, double inflow,
                         const FluidProps& fluid);

/// Hagen-Poiseuille resistance of a cylindrical pipe at the mean diameter:
/// R = 128 mu L / (pi d^4).
double pipe_resistance(const SegmentGeometry& g, const FluidProps& fluid);

/// Lumped compliance of an elastic segment: C = 3 pi r^3 L / (2 E h).
double segment_compliance(const SegmentGeometry& g);

/// Predetermined heart mass flow (kg/s): half-sine systolic pulse, zero in
/// diastole, periodic with the heart period; integrates to one stroke
/// volume per period.
double heart_inflow(double t, const HeartProfile& heart, const FluidProps& fluid);

} // namespace neuralme
