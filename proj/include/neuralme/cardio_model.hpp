#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "neuralme/dataset.hpp"
#include "neuralme/flow_solver.hpp"
#include "neuralme/me_model.hpp"
#include "neuralme/network.hpp"

namespace neuralme {

enum class CardioVariant { simple_C, simple_LC, reference_elastic };

const char* to_string(CardioVariant v);
CardioVariant cardio_variant_from_string(const std::string& s);

/// First-principle arterial model over the static pipe network.
///
/// State layout x = x_wk | x_art:
///   x_wk  one compliance pressure per windkessel terminal (discovery order)
///   x_art simple_C:  placeholder pressure per observed segment
///         simple_LC: (pressure, inductor flow) pairs per observed segment
///         reference_elastic: one mid-segment compliance pressure per segment
///
/// The right-hand side is affine in (x, u): pipe flows come from a linear
/// nodal solve with the state pressures as boundary values, so the analytic
/// jvp is the same evaluation with the constant offsets (venous and
/// reference pressures) zeroed.
class CardioModel final : public MEModel {
public:
  const MEModelDescription& description() const override { return desc_; }
  void derivatives(double t, const Vec& x, const Vec& u, Vec& dxdt) override;

  bool has_analytic_jvp() const override { return true; }
  void jvp(double t, const Vec& x, const Vec& u, const Vec& v_x,
           const Vec& v_u, Vec& out) override;

  bool has_analytic_vjp() const override { return true; }
  void vjp(double t, const Vec& x, const Vec& u, const Vec& w, Vec& w_x,
           Vec& w_u) override;

  std::unique_ptr<MEModel> clone() const override;

  CardioVariant variant() const { return variant_; }
  const ArterialNetwork& network() const { return net_; }
  const FluidProps& fluid() const { return fluid_; }
  const HeartProfile& heart() const { return heart_; }

  /// Pressure-state index per observed segment (dataset column order).
  const std::vector<int>& observed_state_indices() const { return observed_states_; }

  /// Heart mass flow as the model input vector at time t.
  Vec input_at(double t) const;

  /// Mean heart mass flow over one period (kg/s).
  double mean_inflow() const;

  /// Analytic equilibrium under constant mass inflow: capacitors carry no
  /// flow, windkessels sit at p_ven + Q R2, LC nodes at their reference
  /// pressure with the inductor carrying the residual node flow.
  Vec steady_state(double mass_inflow) const;
  Vec steady_state() const { return steady_state(mean_inflow()); }

  /// Effective placeholder parameters per observed segment (after the
  /// auto reference-pressure resolution).
  const std::vector<PlaceholderParams>& placeholder_params() const {
    return placeholders_effective_;
  }

  /// Flow-conservation residual bookkeeping from the embedded nodal solver.
  double max_conservation_residual() const { return solver_.max_residual_seen(); }

  friend std::unique_ptr<CardioModel>
  build_model(const ArterialNetwork&, CardioVariant, const FluidProps&,
              const HeartProfile&,
              const std::optional<std::vector<PlaceholderParams>>&);

private:
  CardioModel() = default;

  void eval(double t, const Vec& x, const Vec& u, Vec& dxdt, bool homogeneous);
  void ensure_jacobian();

  MEModelDescription desc_;
  CardioVariant variant_ = CardioVariant::simple_C;
  ArterialNetwork net_;
  FluidProps fluid_;
  HeartProfile heart_;

  NodalSolver solver_;
  int n_solver_nodes_ = 0;
  int root_ = 0;

  struct Terminal {
    int node;
    int ext;
    int state;
    WindkesselParams wk;
  };
  std::vector<Terminal> terminals_;

  struct Placeholder {
    int node;
    int p_state;
    int q_state; // -1 for C
    PlaceholderParams params;
  };
  std::vector<Placeholder> placeholders_;
  std::vector<PlaceholderParams> placeholders_effective_;

  struct ElasticState {
    int node;
    int state;
    double compliance;
  };
  std::vector<ElasticState> elastic_;

  // state node -> incident (neighbor-or-external, conductance); externals
  // are encoded as ~ext like in NodalSolver::Branch
  std::vector<std::vector<std::pair<int, double>>> incident_;
  std::vector<int> observed_states_;

  // evaluation scratch
  Vec pressures_, externals_;

  // lazily assembled structural jacobian for the reverse product
  bool jac_ready_ = false;
  Mat A_;
  Vec B_;
};

/// Builds the model instance for a validated network. Placeholder
/// parameters default to the network's placeholder config; an explicit
/// per-observed-segment list overrides it (used by clone and tests).
std::unique_ptr<CardioModel>
build_model(const ArterialNetwork& net, CardioVariant variant,
            const FluidProps& fluid, const HeartProfile& heart,
            const std::optional<std::vector<PlaceholderParams>>&
                placeholder_override = std::nullopt);

/// Integrates the elastic reference model with the adaptive solver at tight
/// tolerance and samples the observed-segment pressures at `rate` over
/// n_cycles heart periods. The full record is returned; discarding the
/// transient is the trainer's job.
Dataset reference_waveforms(const ArterialNetwork& net, const FluidProps& fluid,
                            const HeartProfile& heart, int n_cycles,
                            double rate, const std::string& label = "");

} // namespace neuralme
