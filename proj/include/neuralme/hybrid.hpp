#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "neuralme/dataset.hpp"
#include "neuralme/me_model.hpp"
#include "neuralme/network.hpp"
#include "neuralme/ode.hpp"

namespace neuralme {

/// Frozen per-channel affine normalization. pre maps physical values into
/// an ANN-compliant range, post is its exact algebraic inverse.
struct AffineScaler {
  Vec shift; // per-channel mean
  Vec scale; // per-channel 1/std
  std::vector<std::uint8_t> degenerate; // zero-variance channels, scale forced to 1

  int channels() const { return static_cast<int>(shift.size()); }
  void pre(const Vec& x, Vec& out) const { out = (x - shift).cwiseProduct(scale); }
  void post(const Vec& y, Vec& out) const { out = y.cwiseQuotient(scale) + shift; }
  Vec pre(const Vec& x) const { Vec o; pre(x, o); return o; }
  Vec post(const Vec& y) const { Vec o; post(y, o); return o; }
  void validate() const;
};

struct ScalerSet {
  AffineScaler state; // layers #2/#4
  AffineScaler deriv; // layers #8/#11
};

struct LayerSpec {
  int index;          // 1-based, as in the topology table
  std::string type;
  int in_main, in_side;   // side = -1 unless the layer splits/merges
  int out_main, out_side;
  std::string activation; // "none" or "tanh"
};

/// The 12-layer NeuralFMU stack: separation, pre/bias/post around the
/// state block, merge, FMU, separation, pre/dense-tanh/dense/post around
/// the derivative block, merge.
struct HybridTopology {
  int n_wk = 0;
  int n_obs = 0;
  PlaceholderKind variant = PlaceholderKind::C;
  int hidden_width = 30;

  int n_art() const {
    return variant == PlaceholderKind::C ? n_obs : 2 * n_obs;
  }
  int n_states() const { return n_wk + n_art(); }

  std::vector<LayerSpec> layers() const;
  void validate() const;
};

HybridTopology build_topology(int n_wk, int n_obs, PlaceholderKind variant,
                              int hidden_width = 30);

/// Trainable parameters in a stable flat order:
///   [ state_bias | dense1 weights (col-major, hidden x n_art) | dense1 bias
///   | dense2 weights (col-major, n_art x hidden) | dense2 bias ]
struct ParameterVector {
  int n_art = 0;
  int hidden = 0;
  Vec flat;

  struct Freeze {
    bool state_bias = false;
    bool dense1 = false;
    bool dense2 = false;
  } frozen;

  static long size_for(int n_art, int hidden) {
    return n_art + static_cast<long>(hidden) * n_art + hidden +
           static_cast<long>(n_art) * hidden + n_art;
  }
  long size() const { return size_for(n_art, hidden); }

  long off_bias() const { return 0; }
  long off_w1() const { return n_art; }
  long off_b1() const { return off_w1() + static_cast<long>(hidden) * n_art; }
  long off_w2() const { return off_b1() + hidden; }
  long off_b2() const { return off_w2() + static_cast<long>(n_art) * hidden; }

  Eigen::Map<const Vec> state_bias() const {
    return {flat.data() + off_bias(), n_art};
  }
  Eigen::Map<const Mat> w1() const {
    return {flat.data() + off_w1(), hidden, n_art};
  }
  Eigen::Map<const Vec> b1() const { return {flat.data() + off_b1(), hidden}; }
  Eigen::Map<const Mat> w2() const {
    return {flat.data() + off_w2(), n_art, hidden};
  }
  Eigen::Map<const Vec> b2() const { return {flat.data() + off_b2(), n_art}; }

  Eigen::Map<Vec> state_bias() { return {flat.data() + off_bias(), n_art}; }
  Eigen::Map<Mat> w1() { return {flat.data() + off_w1(), hidden, n_art}; }
  Eigen::Map<Vec> b1() { return {flat.data() + off_b1(), hidden}; }
  Eigen::Map<Mat> w2() { return {flat.data() + off_w2(), n_art, hidden}; }
  Eigen::Map<Vec> b2() { return {flat.data() + off_b2(), n_art}; }

  /// Zeroes the gradient slices of frozen groups; parameter values are
  /// never touched by freezing.
  void zero_frozen(Vec& grad) const;
};

/// state_bias and dense2 start at zero; dense1 is Glorot-uniform. Together
/// with the residual connection the initial hybrid dynamics equal the
/// inner model's exactly.
ParameterVector init_params(const HybridTopology& topo, std::uint64_t rng_seed);

/// Per-channel statistics from the training data: shift = mean,
/// scale = 1/std. State scalers come from the pressures, derivative
/// scalers from central-difference derivative estimates of the same data.
/// LC inductor-flow channels have no data column; their statistics follow
/// from the pressure statistics through the inductor law (amplitude
/// std_p/(L*omega) at the heart frequency, derivative std_p/L).
ScalerSet fit_scalers(const Dataset& data, const HybridTopology& topo,
                      const std::vector<PlaceholderParams>* lc_params = nullptr);

/// The assembled NeuralFMU. Windkessel channels pass through both ANN
/// blocks untouched; the derivative ANN acts as a residual correction on
/// the arterial channels (switchable to the plain stacked form).
class HybridModel {
public:
  HybridModel(HybridTopology topo, ParameterVector params, ScalerSet scalers,
              std::unique_ptr<MEModel> inner);

  /// x_hat_dot = merge(wk derivatives, corrected arterial derivatives).
  void rhs(double t, const Vec& x, const Vec& u, Vec& out);

  /// Reverse pass through layers #12..#1. grad_flat accumulates (+=) the
  /// parameter gradient with frozen groups zeroed.
  void vjp(double t, const Vec& x, const Vec& u, const Vec& w, Vec& w_x,
           Vec& w_u, Vec& grad_flat);

  HybridModel clone() const;

  const HybridTopology& topology() const { return topo_; }
  ParameterVector& params() { return params_; }
  const ParameterVector& params() const { return params_; }
  const ScalerSet& scalers() const { return scalers_; }
  MEModel& inner() { return *inner_; }
  const MEModel& inner() const { return *inner_; }

  bool bypass_mode = false;    // test hook: route around both ANNs
  bool residual_skip = true;   // additive skip around the derivative ANN

private:
  HybridTopology topo_;
  ParameterVector params_;
  ScalerSet scalers_;
  std::unique_ptr<MEModel> inner_;

  // scratch
  Vec x_art_, x_wk_, x_hat_, dx_fmu_, dx_art_, z1_, h_, y_, out_art_;
};

/// Binds a hybrid model and its input function for the integrators and the
/// discrete adjoint.
class HybridRhs : public AdjointRhs {
public:
  using InputFn = std::function<void(double, Vec&)>;
  HybridRhs(HybridModel& model, InputFn input);

  int dim() const override;
  void eval(double t, const Vec& x, Vec& dxdt) override;
  int n_params() const override;
  void vjp(double t, const Vec& x, const Vec& w, Vec& w_x,
           Vec& grad_p) override;

private:
  HybridModel& model_;
  InputFn input_;
  Vec u_, w_u_;
};

} // namespace neuralme
