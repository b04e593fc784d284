#include "neuralme/me_model.hpp"

#include <algorithm>
#include <set>

namespace neuralme {

StatePartition StatePartition::contiguous(int n_wk, int n_art) {
  StatePartition p;
  p.n_wk = n_wk;
  p.n_art = n_art;
  p.art_indices.resize(n_art);
  for (int i = 0; i < n_art; ++i) p.art_indices[i] = n_wk + i;
  return p;
}

void StatePartition::validate() const {
  if (n_wk < 0 || n_art < 0)
    throw ValidationError("StatePartition: negative state counts");
  if (static_cast<int>(art_indices.size()) != n_art)
    throw ValidationError("StatePartition: art_indices size != n_art");
  std::set<int> seen;
  for (int idx : art_indices) {
    if (idx < 0 || idx >= n_states())
      throw ValidationError("StatePartition: art index out of range");
    if (!seen.insert(idx).second)
      throw ValidationError("StatePartition: duplicate art index");
  }
}

void StatePartition::split(const Vec& x, Vec& wk, Vec& art) const {
  if (x.size() != n_states())
    throw DimensionMismatch("StatePartition::split", n_states(), x.size());
  art.resize(n_art);
  wk.resize(n_wk);
  std::vector<char> is_art(n_states(), 0);
  for (int i = 0; i < n_art; ++i) {
    art[i] = x[art_indices[i]];
    is_art[art_indices[i]] = 1;
  }
  int k = 0;
  for (int i = 0; i < n_states(); ++i)
    if (!is_art[i]) wk[k++] = x[i];
}

void StatePartition::merge(const Vec& wk, const Vec& art, Vec& x) const {
  if (wk.size() != n_wk)
    throw DimensionMismatch("StatePartition::merge wk", n_wk, wk.size());
  if (art.size() != n_art)
    throw DimensionMismatch("StatePartition::merge art", n_art, art.size());
  x.resize(n_states());
  std::vector<char> is_art(n_states(), 0);
  for (int i = 0; i < n_art; ++i) {
    x[art_indices[i]] = art[i];
    is_art[art_indices[i]] = 1;
  }
  int k = 0;
  for (int i = 0; i < n_states(); ++i)
    if (!is_art[i]) x[i] = wk[k++];
}

std::vector<int> StatePartition::wk_indices() const {
  std::vector<char> is_art(n_states(), 0);
  for (int idx : art_indices) is_art[idx] = 1;
  std::vector<int> out;
  out.reserve(n_wk);
  for (int i = 0; i < n_states(); ++i)
    if (!is_art[i]) out.push_back(i);
  return out;
}

void MEModelDescription::validate() const {
  if (n_states < 0 || n_inputs < 0)
    throw ValidationError("MEModelDescription: negative counts");
  partition.validate();
  if (n_states != partition.n_wk + partition.n_art)
    throw ValidationError("MEModelDescription: n_states != n_wk + n_art");
  if (static_cast<int>(state_names.size()) != n_states)
    throw ValidationError("MEModelDescription: state_names size mismatch");
  if (static_cast<int>(input_names.size()) != n_inputs)
    throw ValidationError("MEModelDescription: input_names size mismatch");
  std::set<std::string> names(state_names.begin(), state_names.end());
  for (const auto& n : input_names) names.insert(n);
  if (names.size() != state_names.size() + input_names.size())
    throw ValidationError("MEModelDescription: duplicate names");
}

void MEModel::jvp(double, const Vec&, const Vec&, const Vec&, const Vec&,
                  Vec&) {
  throw CapabilityMissing("model does not provide an analytic jvp");
}

void MEModel::vjp(double, const Vec&, const Vec&, const Vec&, Vec&, Vec&) {
  throw CapabilityMissing("model does not provide an analytic vjp");
}

Vec MEModel::derivatives(double t, const Vec& x, const Vec& u) {
  Vec dxdt(description().n_states);
  derivatives(t, x, u, dxdt);
  return dxdt;
}

void MEModel::check_args(const Vec& x, const Vec& u) const {
  const auto& d = description();
  if (x.size() != d.n_states)
    throw DimensionMismatch("state vector", d.n_states, x.size());
  if (u.size() != d.n_inputs)
    throw DimensionMismatch("input vector", d.n_inputs, u.size());
  if (!x.allFinite()) throw NonFiniteInput("NaN/Inf in state vector");
  if (!u.allFinite()) throw NonFiniteInput("NaN/Inf in input vector");
}

Vec jvp_fd(MEModel& m, double t, const Vec& x, const Vec& u, const Vec& v_x,
           const Vec& v_u, double eps) {
  if (eps <= 0.0) throw ValidationError("jvp_fd: eps must be positive");
  const auto& d = m.description();
  if (v_x.size() != d.n_states)
    throw DimensionMismatch("jvp_fd seed v_x", d.n_states, v_x.size());
  if (v_u.size() != d.n_inputs)
    throw DimensionMismatch("jvp_fd seed v_u", d.n_inputs, v_u.size());

  const double h = eps * std::max(1.0, x.lpNorm<Eigen::Infinity>());
  Vec f_plus(d.n_states), f_minus(d.n_states);
  m.derivatives(t, x + h * v_x, u + h * v_u, f_plus);
  m.derivatives(t, x - h * v_x, u - h * v_u, f_minus);
  Vec out = (f_plus - f_minus) / (2.0 * h);
  if (!out.allFinite())
    throw NonFiniteResult("jvp_fd: perturbed evaluation produced NaN/Inf");
  return out;
}

void vjp(MEModel& m, double t, const Vec& x, const Vec& u, const Vec& w,
         Vec& w_x, Vec& w_u) {
  const auto& d = m.description();
  if (w.size() != d.n_states)
    throw DimensionMismatch("vjp seed", d.n_states, w.size());

  if (m.has_analytic_vjp()) {
    m.vjp(t, x, u, w, w_x, w_u);
    return;
  }
  if (!m.has_analytic_jvp())
    throw CapabilityMissing("vjp: neither analytic vjp nor jvp available");
  if (d.n_states > 256)
    throw CapabilityMissing(
        "vjp: dense fallback refused for n_states > 256");

  // Assemble the jacobian column by column from basis jvps, then apply the
  // transpose. One column per state and per input.
  w_x.resize(d.n_states);
  w_u.resize(d.n_inputs);
  Vec e_x = Vec::Zero(d.n_states);
  Vec e_u = Vec::Zero(d.n_inputs);
  Vec col(d.n_states);
  for (int j = 0; j < d.n_states; ++j) {
    e_x[j] = 1.0;
    m.jvp(t, x, u, e_x, e_u, col);
    w_x[j] = w.dot(col);
    e_x[j] = 0.0;
  }
  for (int j = 0; j < d.n_inputs; ++j) {
    e_u[j] = 1.0;
    m.jvp(t, x, u, e_x, e_u, col);
    w_u[j] = w.dot(col);
    e_u[j] = 0.0;
  }
}

} // namespace neuralme
