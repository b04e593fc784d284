#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "neuralme/errors.hpp"

namespace neuralme {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Split of the concatenated state vector x = x_wk | x_art.
struct StatePartition {
  int n_wk = 0;
  int n_art = 0;
  std::vector<int> art_indices; // n_art distinct entries in [0, n_states)

  int n_states() const { return n_wk + n_art; }

  /// Canonical layout: windkessel block first, arterial block last.
  static StatePartition contiguous(int n_wk, int n_art);

  void validate() const;

  void split(const Vec& x, Vec& wk, Vec& art) const;
  void merge(const Vec& wk, const Vec& art, Vec& x) const;
  std::vector<int> wk_indices() const;
};

struct MEModelDescription {
  int n_states = 0;
  int n_inputs = 0;
  std::vector<std::string> state_names;
  std::vector<std::string> input_names;
  StatePartition partition;

  void validate() const;
};

/// Model-exchange contract: given (t, x, u) the model produces dx/dt and,
/// when the capability is advertised, directional derivatives through its
/// analytic/structural path. Instances own mutable evaluation scratch and
/// are single-threaded; clone() yields an independent instance for
/// concurrent use.
class MEModel {
public:
  virtual ~MEModel() = default;

  virtual const MEModelDescription& description() const = 0;

  /// dxdt = f(t, x, u). Pure in (t, x, u, parameters): repeated calls with
  /// identical arguments are bit-identical.
  virtual void derivatives(double t, const Vec& x, const Vec& u, Vec& dxdt) = 0;

  virtual bool has_analytic_jvp() const { return false; }

  /// out = (df/dx) v_x + (df/du) v_u via the model's analytic path.
  /// Throws CapabilityMissing when not advertised; callers fall back to
  /// jvp_fd.
  virtual void jvp(double t, const Vec& x, const Vec& u, const Vec& v_x,
                   const Vec& v_u, Vec& out);

  virtual bool has_analytic_vjp() const { return false; }

  /// w_x = (df/dx)^T w, w_u = (df/du)^T w.
  virtual void vjp(double t, const Vec& x, const Vec& u, const Vec& w,
                   Vec& w_x, Vec& w_u);

  virtual std::unique_ptr<MEModel> clone() const = 0;

  Vec derivatives(double t, const Vec& x, const Vec& u);

  void check_args(const Vec& x, const Vec& u) const;
};

/// Central-difference directional derivative with step h = eps*max(1,||x||inf).
/// Pressure-scale states make a relative step necessary to avoid cancellation.
Vec jvp_fd(MEModel& m, double t, const Vec& x, const Vec& u, const Vec& v_x,
           const Vec& v_u, double eps = 1e-6);

/// Reverse product dispatcher: analytic vjp when present, otherwise a dense
/// assembly from n_states + n_inputs analytic jvp calls on basis vectors
/// (allowed up to n_states <= 256). Throws CapabilityMissing when neither
/// path exists.
void vjp(MEModel& m, double t, const Vec& x, const Vec& u, const Vec& w,
         Vec& w_x, Vec& w_u);

} // namespace neuralme
