#pragma once

#include <functional>
#include <vector>

#include "neuralme/me_model.hpp"

namespace neuralme {

enum class OdeMethod { rk4, rk45 };

struct SolverConfig {
  OdeMethod method = OdeMethod::rk4;
  /// Step for rk4. When set (> 0) together with method rk45, the embedded
  /// pair runs on the fixed grid instead of adapting - used by convergence
  /// studies.
  double fixed_step = 0.0;
  double rel_tol = 1e-6;
  double abs_tol = 1e-9;
  long max_steps = 20'000'000;
  std::vector<double> save_times;

  void validate() const;
};

struct SolveStats {
  long n_rhs_evals = 0;
  long n_steps = 0;
  long n_rejected = 0;
  double wall_time = 0.0;
};

struct Trajectory {
  std::vector<double> times; // == cfg.save_times
  Mat states;                // one row per save time
  SolveStats stats;
};

/// Record of the accepted fixed-grid steps; replaying it forward through
/// the same rhs reproduces the trajectory bit-exactly.
struct AdjointTape {
  struct Step {
    double t;
    double h;
    Vec x; // state at step start
  };
  std::vector<Step> steps;
  /// For each saved row: index of the step that ends at that save time,
  /// or -1 for the row at t0.
  std::vector<long> save_step;
};

/// Right-hand side surface for the integrators. Time-dependent inputs are
/// bound inside the implementation (see ModelRhs).
class OdeRhs {
public:
  virtual ~OdeRhs() = default;
  virtual int dim() const = 0;
  virtual void eval(double t, const Vec& x, Vec& dxdt) = 0;
};

/// rhs + the reverse-mode products the discrete adjoint needs.
class AdjointRhs : public OdeRhs {
public:
  virtual int n_params() const = 0;
  /// w_x = (df/dx)^T w; grad_p += (df/dp)^T w, both at (t, x).
  virtual void vjp(double t, const Vec& x, const Vec& w, Vec& w_x,
                   Vec& grad_p) = 0;
};

/// Binds an MEModel and its input function into a plain rhs.
class ModelRhs : public OdeRhs {
public:
  using InputFn = std::function<void(double, Vec&)>;
  ModelRhs(MEModel& model, InputFn input);

  int dim() const override { return model_.description().n_states; }
  void eval(double t, const Vec& x, Vec& dxdt) override;

private:
  MEModel& model_;
  InputFn input_;
  Vec u_;
};

/// Integrates x' = f(t, x) from x0 given at save_times.front() and samples
/// the trajectory at the requested times. rk4 walks a fixed grid that hits
/// every save time exactly (steps subdivided as needed); rk45 is the
/// Dormand-Prince 5(4) pair with PI step control and dense output.
Trajectory integrate(OdeRhs& f, const Vec& x0, const SolverConfig& cfg,
                     AdjointTape* tape = nullptr);

struct LossGradientResult {
  double loss = 0.0;
  Vec grad_params;
  Vec grad_x0;
  Trajectory trajectory;
};

/// Loss over a trajectory; when grad_states is non-null it must be filled
/// with dLoss/dstates (same shape as Trajectory::states).
using TrajectoryLossFn = std::function<double(const Trajectory&, Mat* grad_states)>;

/// Exact reverse-mode differentiation of the rk4 step recursion (discrete
/// adjoint): backprop through the recorded steps with one vjp per stage.
/// The loss value equals the plain forward evaluation bit-for-bit.
LossGradientResult loss_gradient(AdjointRhs& f, const Vec& x0,
                                 const SolverConfig& cfg,
                                 const TrajectoryLossFn& loss);

} // namespace neuralme
