#include "neuralme/hybrid.hpp"

#include <cmath>

#include "neuralme/rng.hpp"

namespace neuralme {

void AffineScaler::validate() const {
  if (shift.size() != scale.size())
    throw ValidationError("AffineScaler: shift/scale size mismatch");
  for (long i = 0; i < scale.size(); ++i)
    if (scale[i] == 0.0 || !std::isfinite(scale[i]) || !std::isfinite(shift[i]))
      throw ValidationError("AffineScaler: invalid constants");
}

void HybridTopology::validate() const {
  if (n_wk <= 0 || n_obs <= 0 || hidden_width <= 0)
    throw ValidationError("HybridTopology: all counts must be positive");
}

HybridTopology build_topology(int n_wk, int n_obs, PlaceholderKind variant,
                              int hidden_width) {
  HybridTopology t;
  t.n_wk = n_wk;
  t.n_obs = n_obs;
  t.variant = variant;
  t.hidden_width = hidden_width;
  t.validate();
  return t;
}

std::vector<LayerSpec> HybridTopology::layers() const {
  const int na = n_art(), ns = n_states(), hw = hidden_width;
  return {
      {1, "state vector separation", ns, -1, na, n_wk, "none"},
      {2, "data pre-processing", na, -1, na, -1, "none"},
      {3, "bias", na, -1, na, -1, "none"},
      {4, "data post-processing", na, -1, na, -1, "none"},
      {5, "state vector merging", na, n_wk, ns, -1, "none"},
      {6, "FMU", ns, -1, ns, -1, "none"},
      {7, "derivative vector separation", ns, -1, na, n_wk, "none"},
      {8, "data pre-processing", na, -1, na, -1, "none"},
      {9, "dense", na, -1, hw, -1, "tanh"},
      {10, "dense", hw, -1, na, -1, "none"},
      {11, "data post-processing", na, -1, na, -1, "none"},
      {12, "derivative vector merging", na, n_wk, ns, -1, "none"},
  };
}

void ParameterVector::zero_frozen(Vec& grad) const {
  if (grad.size() != size())
    throw DimensionMismatch("zero_frozen", size(), grad.size());
  if (frozen.state_bias) grad.segment(off_bias(), n_art).setZero();
  if (frozen.dense1)
    grad.segment(off_w1(), static_cast<long>(hidden) * n_art + hidden).setZero();
  if (frozen.dense2)
    grad.segment(off_w2(), static_cast<long>(n_art) * hidden + n_art).setZero();
}

ParameterVector init_params(const HybridTopology& topo, std::uint64_t rng_seed) {
  topo.validate();
  ParameterVector p;
  p.n_art = topo.n_art();
  p.hidden = topo.hidden_width;
  p.flat = Vec::Zero(p.size());

  // Glorot-uniform hidden layer; the output layer stays zero so the
  // residual branch starts silent.
  Rng rng(rng_seed);
  const double bound = std::sqrt(6.0 / (p.n_art + p.hidden));
  auto w1 = p.w1();
  for (long c = 0; c < w1.cols(); ++c)
    for (long r = 0; r < w1.rows(); ++r) w1(r, c) = rng.uniform(-bound, bound);
  return p;
}

ScalerSet fit_scalers(const Dataset& data, const HybridTopology& topo,
                      const std::vector<PlaceholderParams>* lc_params) {
  data.validate();
  if (data.n_channels() != topo.n_obs)
    throw DimensionMismatch("fit_scalers channels", topo.n_obs,
                            data.n_channels());
  if (data.n_samples() < 3)
    throw ValidationError("fit_scalers: need at least 3 samples");
  const bool lc = topo.variant == PlaceholderKind::LC;
  if (lc && (!lc_params || static_cast<int>(lc_params->size()) != topo.n_obs))
    throw ValidationError(
        "fit_scalers: LC topology needs per-segment placeholder params");

  const int n_samp = data.n_samples();
  const double dt = 1.0 / data.rate;

  // central-difference derivative estimates, one-sided at the ends
  Mat deriv(n_samp, topo.n_obs);
  deriv.row(0) = (data.pressures.row(1) - data.pressures.row(0)) / dt;
  for (int k = 1; k < n_samp - 1; ++k)
    deriv.row(k) =
        (data.pressures.row(k + 1) - data.pressures.row(k - 1)) / (2.0 * dt);
  deriv.row(n_samp - 1) =
      (data.pressures.row(n_samp - 1) - data.pressures.row(n_samp - 2)) / dt;

  auto moments = [&](const Mat& m, int col, double& mean, double& stdev) {
    mean = m.col(col).mean();
    stdev = std::sqrt((m.col(col).array() - mean).square().mean());
  };

  const int na = topo.n_art();
  ScalerSet s;
  s.state.shift = Vec::Zero(na);
  s.state.scale = Vec::Ones(na);
  s.state.degenerate.assign(na, 0);
  s.deriv = s.state;

  const double omega = 2.0 * 3.14159265358979323846 * data.patient.heart_rate / 60.0;
  for (int i = 0; i < topo.n_obs; ++i) {
    const int p_ch = lc ? 2 * i : i;
    double mean, stdev;
    moments(data.pressures, i, mean, stdev);
    s.state.shift[p_ch] = mean;
    if (stdev > 0.0) {
      s.state.scale[p_ch] = 1.0 / stdev;
    } else {
      s.state.degenerate[p_ch] = 1;
    }

    double dmean, dstd;
    moments(deriv, i, dmean, dstd);
    s.deriv.shift[p_ch] = dmean;
    if (dstd > 0.0) {
      s.deriv.scale[p_ch] = 1.0 / dstd;
    } else {
      s.deriv.degenerate[p_ch] = 1;
    }

    if (lc) {
      // inductor flow q obeys L q' = p - p_ref: amplitude ~ std_p/(L w),
      // derivative std exactly std_p/L
      const int q_ch = 2 * i + 1;
      const double L = (*lc_params)[i].inertance;
      const double p_ref = (*lc_params)[i].reference_pressure;
      if (stdev > 0.0) {
        s.state.shift[q_ch] = 0.0;
        s.state.scale[q_ch] = L * omega / stdev;
        s.deriv.shift[q_ch] = (mean - p_ref) / L;
        s.deriv.scale[q_ch] = L / stdev;
      } else {
        s.state.degenerate[q_ch] = 1;
        s.deriv.degenerate[q_ch] = 1;
      }
    }
  }
  s.state.validate();
  s.deriv.validate();
  return s;
}

HybridModel::HybridModel(HybridTopology topo, ParameterVector params,
                         ScalerSet scalers, std::unique_ptr<MEModel> inner)
    : topo_(topo), params_(std::move(params)), scalers_(std::move(scalers)),
      inner_(std::move(inner)) {
  topo_.validate();
  const auto& part = inner_->description().partition;
  if (part.n_wk != topo_.n_wk || part.n_art != topo_.n_art())
    throw ValidationError("HybridModel: inner partition inconsistent with topology");
  if (params_.n_art != topo_.n_art() || params_.hidden != topo_.hidden_width)
    throw ValidationError("HybridModel: parameter dims inconsistent with topology");
  if (scalers_.state.channels() != topo_.n_art() ||
      scalers_.deriv.channels() != topo_.n_art())
    throw ValidationError("HybridModel: scaler dims inconsistent with topology");
}

void HybridModel::rhs(double t, const Vec& x, const Vec& u, Vec& out) {
  if (bypass_mode) {
    inner_->derivatives(t, x, u, out);
    return;
  }
  const auto& part = inner_->description().partition;
  if (x.size() != part.n_states())
    throw DimensionMismatch("hybrid rhs state", part.n_states(), x.size());
  const int na = topo_.n_art();

  // layers #1-#5: state separation, bias between the scalers, merge.
  // post(pre(x) + b) collapses to x + b/scale, which keeps the untouched
  // channels bit-exact.
  x_hat_ = x;
  for (int i = 0; i < na; ++i) {
    const int idx = part.art_indices[i];
    x_hat_[idx] = x[idx] + params_.state_bias()[i] / scalers_.state.scale[i];
  }

  // layer #6
  inner_->derivatives(t, x_hat_, u, dx_fmu_);

  // layers #7-#12: derivative separation, dense-tanh-dense between the
  // scalers, merge back with the windkessel derivatives untouched
  dx_art_.resize(na);
  for (int i = 0; i < na; ++i) dx_art_[i] = dx_fmu_[part.art_indices[i]];

  scalers_.deriv.pre(dx_art_, z1_);
  h_ = (params_.w1() * z1_ + params_.b1()).array().tanh();
  y_ = params_.w2() * h_ + params_.b2();

  out = dx_fmu_;
  if (residual_skip) {
    // scaled-domain skip: post(pre(dx) + y) = dx + y/scale
    for (int i = 0; i < na; ++i)
      out[part.art_indices[i]] =
          dx_art_[i] + y_[i] / scalers_.deriv.scale[i];
  } else {
    for (int i = 0; i < na; ++i)
      out[part.art_indices[i]] =
          y_[i] / scalers_.deriv.scale[i] + scalers_.deriv.shift[i];
  }
}

void HybridModel::vjp(double t, const Vec& x, const Vec& u, const Vec& w,
                      Vec& w_x, Vec& w_u, Vec& grad_flat) {
  if (grad_flat.size() != params_.size())
    throw DimensionMismatch("hybrid vjp grad", params_.size(), grad_flat.size());
  if (bypass_mode) {
    neuralme::vjp(*inner_, t, x, u, w, w_x, w_u);
    return;
  }
  const auto& part = inner_->description().partition;
  if (w.size() != part.n_states())
    throw DimensionMismatch("hybrid vjp seed", part.n_states(), w.size());
  const int na = topo_.n_art();

  // forward pass to recover the intermediates
  x_hat_ = x;
  for (int i = 0; i < na; ++i) {
    const int idx = part.art_indices[i];
    x_hat_[idx] = x[idx] + params_.state_bias()[i] / scalers_.state.scale[i];
  }
  inner_->derivatives(t, x_hat_, u, dx_fmu_);
  dx_art_.resize(na);
  for (int i = 0; i < na; ++i) dx_art_[i] = dx_fmu_[part.art_indices[i]];
  scalers_.deriv.pre(dx_art_, z1_);
  h_ = (params_.w1() * z1_ + params_.b1()).array().tanh();

  // reverse through #12..#8
  Vec w_art(na);
  for (int i = 0; i < na; ++i) w_art[i] = w[part.art_indices[i]];

  Vec dL_dy = w_art.cwiseQuotient(scalers_.deriv.scale);
  Vec dL_dh = params_.w2().transpose() * dL_dy;
  Vec dL_da1 = dL_dh.cwiseProduct((1.0 - h_.array().square()).matrix());
  Vec dL_dz1 = params_.w1().transpose() * dL_da1;

  Vec grad = Vec::Zero(params_.size());
  ParameterVector gview = params_; // reuse the offset bookkeeping
  gview.flat = std::move(grad);
  gview.b2() += dL_dy;
  gview.w2() += dL_dy * h_.transpose();
  gview.b1() += dL_da1;
  gview.w1() += dL_da1 * z1_.transpose();

  // adjoint of the FMU output: art channels get the pre-scaler pullback
  // plus, in skip mode, the direct residual path
  Vec w_fmu = w;
  for (int i = 0; i < na; ++i) {
    double g = dL_dz1[i] * scalers_.deriv.scale[i];
    if (residual_skip) g += w_art[i];
    w_fmu[part.art_indices[i]] = g;
  }

  // layer #6 reverse through the inner model at the shifted point
  neuralme::vjp(*inner_, t, x_hat_, u, w_fmu, w_x, w_u);

  // layers #5..#1: x_hat = x + bias/scale, identity in x
  for (int i = 0; i < na; ++i)
    gview.state_bias()[i] += w_x[part.art_indices[i]] / scalers_.state.scale[i];

  params_.zero_frozen(gview.flat);
  grad_flat += gview.flat;
}

HybridModel HybridModel::clone() const {
  HybridModel copy(topo_, params_, scalers_, inner_->clone());
  copy.bypass_mode = bypass_mode;
  copy.residual_skip = residual_skip;
  return copy;
}

HybridRhs::HybridRhs(HybridModel& model, InputFn input)
    : model_(model), input_(std::move(input)),
      u_(model.inner().description().n_inputs),
      w_u_(model.inner().description().n_inputs) {}

int HybridRhs::dim() const { return model_.inner().description().n_states; }

void HybridRhs::eval(double t, const Vec& x, Vec& dxdt) {
  input_(t, u_);
  model_.rhs(t, x, u_, dxdt);
}

int HybridRhs::n_params() const {
  return static_cast<int>(model_.params().size());
}

void HybridRhs::vjp(double t, const Vec& x, const Vec& w, Vec& w_x,
                    Vec& grad_p) {
  input_(t, u_);
  model_.vjp(t, x, u_, w, w_x, w_u_, grad_p);
}

} // namespace neuralme
