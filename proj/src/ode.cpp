#include "neuralme/ode.hpp"

#include <chrono>
#include <cmath>

namespace neuralme {

void SolverConfig::validate() const {
  if (method == OdeMethod::rk4 && fixed_step <= 0.0)
    throw ValidationError("SolverConfig: rk4 requires fixed_step > 0");
  if (rel_tol <= 0.0 || abs_tol <= 0.0)
    throw ValidationError("SolverConfig: tolerances must be positive");
  if (save_times.empty())
    throw ValidationError("SolverConfig: save_times must not be empty");
  for (size_t i = 1; i < save_times.size(); ++i)
    if (save_times[i] <= save_times[i - 1])
      throw ValidationError("SolverConfig: save_times must increase strictly");
  if (max_steps <= 0) throw ValidationError("SolverConfig: max_steps <= 0");
}

ModelRhs::ModelRhs(MEModel& model, InputFn input)
    : model_(model), input_(std::move(input)),
      u_(model.description().n_inputs) {}

void ModelRhs::eval(double t, const Vec& x, Vec& dxdt) {
  input_(t, u_);
  model_.derivatives(t, x, u_, dxdt);
}

namespace {

struct Rk4Stages {
  Vec k1, k2, k3, k4, x2, x3, x4;
  void resize(int n) {
    k1.resize(n); k2.resize(n); k3.resize(n); k4.resize(n);
    x2.resize(n); x3.resize(n); x4.resize(n);
  }
};

// classic 4-stage step; x_out may alias x only after the stages are done
void rk4_step(OdeRhs& f, double t, double h, const Vec& x, Rk4Stages& s,
              Vec& x_out) {
  f.eval(t, x, s.k1);
  s.x2 = x + (0.5 * h) * s.k1;
  f.eval(t + 0.5 * h, s.x2, s.k2);
  s.x3 = x + (0.5 * h) * s.k2;
  f.eval(t + 0.5 * h, s.x3, s.k3);
  s.x4 = x + h * s.k3;
  f.eval(t + h, s.x4, s.k4);
  x_out = x + (h / 6.0) * (s.k1 + 2.0 * s.k2 + 2.0 * s.k3 + s.k4);
}

/// Number of uniform substeps that tile [a, b] with width <= h. The slack
/// factor keeps an exact integer ratio from rounding up to an extra step.
long substep_count(double a, double b, double h) {
  return std::max(1L, static_cast<long>(std::ceil((b - a) / h * (1.0 - 1e-12))));
}

// Dormand-Prince 5(4) tableau
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                 a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                 b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
constexpr double d1 = -12715105075.0 / 11282082432.0,
                 d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0,
                 d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0,
                 d7 = 69997945.0 / 29380423.0;

struct Dopri5 {
  int n;
  Vec k1, k2, k3, k4, k5, k6, k7, xs, x_new, err;
  Vec rcont1, rcont2, rcont3, rcont4, rcont5;

  explicit Dopri5(int dim) : n(dim) {
    for (Vec* v : {&k1, &k2, &k3, &k4, &k5, &k6, &k7, &xs, &x_new, &err,
                   &rcont1, &rcont2, &rcont3, &rcont4, &rcont5})
      v->resize(n);
  }

  /// One trial step from (t, x); k1 must hold f(t, x) on entry (FSAL).
  /// Leaves f(t+h, x_new) in k7.
  void step(OdeRhs& f, double t, double h, const Vec& x) {
    xs = x + h * (a21 * k1);
    f.eval(t + c2 * h, xs, k2);
    xs = x + h * (a31 * k1 + a32 * k2);
    f.eval(t + c3 * h, xs, k3);
    xs = x + h * (a41 * k1 + a42 * k2 + a43 * k3);
    f.eval(t + c4 * h, xs, k4);
    xs = x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    f.eval(t + c5 * h, xs, k5);
    xs = x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    f.eval(t + h, xs, k6);
    x_new = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    f.eval(t + h, x_new, k7);
    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
  }

  double error_norm(const Vec& x, double abs_tol, double rel_tol) const {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double sc =
          abs_tol + rel_tol * std::max(std::abs(x[i]), std::abs(x_new[i]));
      const double q = err[i] / sc;
      acc += q * q;
    }
    return std::sqrt(acc / n);
  }

  void prepare_dense(double h, const Vec& x) {
    rcont1 = x;
    rcont2 = x_new - x;
    rcont3 = h * k1 - rcont2;
    rcont4 = rcont2 - h * k7 - rcont3;
    rcont5 = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
  }

  /// Quartic interpolant; exact at both step ends by construction.
  void dense(double theta, Vec& out) const {
    out = rcont1 +
          theta * (rcont2 +
                   (1.0 - theta) *
                       (rcont3 + theta * (rcont4 + (1.0 - theta) * rcont5)));
  }
};

Trajectory integrate_rk4(OdeRhs& f, const Vec& x0, const SolverConfig& cfg,
                         AdjointTape* tape) {
  const int n = f.dim();
  const auto& save = cfg.save_times;
  Trajectory traj;
  traj.times = save;
  traj.states.resize(save.size(), n);
  traj.states.row(0) = x0;
  if (tape) {
    tape->steps.clear();
    tape->save_step.assign(save.size(), -1);
  }

  Rk4Stages stages;
  stages.resize(n);
  Vec x = x0;
  long total_steps = 0;
  for (size_t a = 0; a + 1 < save.size(); ++a) {
    const double t_a = save[a], t_b = save[a + 1];
    const long m = substep_count(t_a, t_b, cfg.fixed_step);
    const double h = (t_b - t_a) / static_cast<double>(m);
    for (long i = 0; i < m; ++i) {
      if (++total_steps > cfg.max_steps)
        throw MaxStepsExceeded("rk4: max_steps exceeded");
      const double t = t_a + h * static_cast<double>(i);
      if (tape) tape->steps.push_back({t, h, x});
      rk4_step(f, t, h, x, stages, x);
      if (!x.allFinite()) throw NonFiniteState(t + h);
    }
    traj.states.row(a + 1) = x;
    if (tape) tape->save_step[a + 1] = static_cast<long>(tape->steps.size()) - 1;
  }
  traj.stats.n_steps = total_steps;
  traj.stats.n_rhs_evals = 4 * total_steps;
  return traj;
}

Trajectory integrate_rk45_fixed(OdeRhs& f, const Vec& x0,
                                const SolverConfig& cfg) {
  const int n = f.dim();
  const auto& save = cfg.save_times;
  Trajectory traj;
  traj.times = save;
  traj.states.resize(save.size(), n);
  traj.states.row(0) = x0;

  Dopri5 dp(n);
  Vec x = x0;
  long total_steps = 0;
  for (size_t a = 0; a + 1 < save.size(); ++a) {
    const double t_a = save[a], t_b = save[a + 1];
    const long m = substep_count(t_a, t_b, cfg.fixed_step);
    const double h = (t_b - t_a) / static_cast<double>(m);
    for (long i = 0; i < m; ++i) {
      if (++total_steps > cfg.max_steps)
        throw MaxStepsExceeded("rk45 fixed: max_steps exceeded");
      const double t = t_a + h * static_cast<double>(i);
      f.eval(t, x, dp.k1);
      dp.step(f, t, h, x);
      x = dp.x_new;
      if (!x.allFinite()) throw NonFiniteState(t + h);
    }
    traj.states.row(a + 1) = x;
  }
  traj.stats.n_steps = total_steps;
  traj.stats.n_rhs_evals = 7 * total_steps;
  return traj;
}

Trajectory integrate_rk45(OdeRhs& f, const Vec& x0, const SolverConfig& cfg) {
  const int n = f.dim();
  const auto& save = cfg.save_times;
  Trajectory traj;
  traj.times = save;
  traj.states.resize(save.size(), n);
  traj.states.row(0) = x0;
  if (save.size() == 1) return traj;

  const double t_end = save.back();
  double t = save.front();
  Vec x = x0;
  Dopri5 dp(n);
  f.eval(t, x, dp.k1);
  long n_evals = 1;

  const double span = t_end - t;
  double h = span * 1e-3;
  double err_old = 1e-4;
  size_t next_save = 1;
  long n_steps = 0, n_rejected = 0;
  Vec dense_out(n);

  while (t < t_end) {
    if (n_steps + n_rejected >= cfg.max_steps)
      throw MaxStepsExceeded("rk45: max_steps exceeded");
    if (h < 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t)))
      throw StepUnderflow("rk45: step size underflow at t = " + std::to_string(t));
    if (t + h > t_end) h = t_end - t;

    dp.step(f, t, h, x);
    n_evals += 6;
    const double err = dp.error_norm(x, cfg.abs_tol, cfg.rel_tol);

    if (err <= 1.0) {
      dp.prepare_dense(h, x);
      while (next_save < save.size() && save[next_save] <= t + h) {
        const double theta = (save[next_save] - t) / h;
        if (theta >= 1.0) {
          traj.states.row(next_save) = dp.x_new;
        } else {
          dp.dense(theta, dense_out);
          traj.states.row(next_save) = dense_out;
        }
        ++next_save;
      }
      t += h;
      x = dp.x_new;
      if (!x.allFinite()) throw NonFiniteState(t);
      dp.k1 = dp.k7; // FSAL
      ++n_steps;

      const double safe_err = std::max(err, 1e-10);
      double fac = 0.9 * std::pow(safe_err, -0.7 / 5.0) *
                   std::pow(std::max(err_old, 1e-10), 0.4 / 5.0);
      fac = std::min(5.0, std::max(0.2, fac));
      h *= fac;
      err_old = safe_err;
    } else {
      ++n_rejected;
      const double fac = std::max(0.2, 0.9 * std::pow(err, -0.2));
      h *= fac;
    }
  }
  traj.stats.n_steps = n_steps;
  traj.stats.n_rejected = n_rejected;
  traj.stats.n_rhs_evals = n_evals;
  return traj;
}

} // namespace

Trajectory integrate(OdeRhs& f, const Vec& x0, const SolverConfig& cfg,
                     AdjointTape* tape) {
  cfg.validate();
  if (x0.size() != f.dim())
    throw DimensionMismatch("integrate x0", f.dim(), x0.size());
  if (!x0.allFinite()) throw NonFiniteInput("integrate: x0 not finite");

  const auto t_start = std::chrono::steady_clock::now();
  Trajectory traj;
  if (cfg.method == OdeMethod::rk4) {
    traj = integrate_rk4(f, x0, cfg, tape);
  } else if (cfg.fixed_step > 0.0) {
    traj = integrate_rk45_fixed(f, x0, cfg);
  } else {
    traj = integrate_rk45(f, x0, cfg);
  }
  traj.stats.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return traj;
}

LossGradientResult loss_gradient(AdjointRhs& f, const Vec& x0,
                                 const SolverConfig& cfg,
                                 const TrajectoryLossFn& loss) {
  if (cfg.method != OdeMethod::rk4)
    throw ValidationError(
        "loss_gradient requires the rk4 method (deterministic fixed grid)");
  AdjointTape tape;
  LossGradientResult res;
  res.trajectory = integrate(f, x0, cfg, &tape);

  const int n = f.dim();
  Mat grad_states = Mat::Zero(res.trajectory.states.rows(), n);
  res.loss = loss(res.trajectory, &grad_states);

  res.grad_params = Vec::Zero(f.n_params());
  Vec lambda = Vec::Zero(n);

  // save rows keyed by the step that produces them
  std::vector<long> row_of_step(tape.steps.size(), -1);
  long t0_row = -1;
  for (size_t r = 0; r < tape.save_step.size(); ++r) {
    if (tape.save_step[r] >= 0)
      row_of_step[tape.save_step[r]] = static_cast<long>(r);
    else
      t0_row = static_cast<long>(r);
  }

  Rk4Stages st;
  st.resize(n);
  Vec s4(n), s3(n), s2(n), s1(n);
  Vec a1(n), a2(n), a3(n), a4(n);
  Vec x_end(n);

  for (long i = static_cast<long>(tape.steps.size()) - 1; i >= 0; --i) {
    if (row_of_step[i] >= 0) lambda += grad_states.row(row_of_step[i]);

    const auto& step = tape.steps[i];
    const double t = step.t, h = step.h;
    const Vec& x = step.x;
    // recompute the stage states exactly as the forward pass did
    f.eval(t, x, st.k1);
    st.x2 = x + (0.5 * h) * st.k1;
    f.eval(t + 0.5 * h, st.x2, st.k2);
    st.x3 = x + (0.5 * h) * st.k2;
    f.eval(t + 0.5 * h, st.x3, st.k3);
    st.x4 = x + h * st.k3;

    s4 = (h / 6.0) * lambda;
    f.vjp(t + h, st.x4, s4, a4, res.grad_params);
    s3 = (h / 3.0) * lambda + h * a4;
    f.vjp(t + 0.5 * h, st.x3, s3, a3, res.grad_params);
    s2 = (h / 3.0) * lambda + (0.5 * h) * a3;
    f.vjp(t + 0.5 * h, st.x2, s2, a2, res.grad_params);
    s1 = (h / 6.0) * lambda + (0.5 * h) * a2;
    f.vjp(t, x, s1, a1, res.grad_params);

    lambda += a1 + a2 + a3 + a4;
  }
  if (t0_row >= 0) lambda += grad_states.row(t0_row);
  res.grad_x0 = lambda;
  return res;
}

} // namespace neuralme
