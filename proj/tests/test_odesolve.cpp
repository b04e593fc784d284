#include <doctest.h>

#include <cmath>

#include "neuralme/cardio_model.hpp"
#include "neuralme/ode.hpp"
#include "support.hpp"

using namespace neuralme;
using namespace testsupport;

namespace {

/// Single windkessel with the compliance tuned for a given decay constant;
/// zero inflow turns it into the classic RC problem.
std::unique_ptr<CardioModel> windkessel_with_tau(double tau, double& p_ven,
                                                 double& r2) {
  std::string s = mini_net_json(false);
  r2 = 5.2e8;
  const double c = tau / r2;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "\"compliance\": %.17g", c);
  const auto pos = s.find("\"compliance\": 1.9e-9");
  s.replace(pos, 20, buf);
  auto net = parse_network(s, "wk");
  p_ven = net.terminals.at("n1").venous_pressure;
  HeartProfile heart;
  return build_model(net, CardioVariant::simple_C, net.fluid, heart);
}

struct LinearRhs final : AdjointRhs {
  Mat A;
  explicit LinearRhs(Mat a) : A(std::move(a)) {}
  int dim() const override { return static_cast<int>(A.rows()); }
  void eval(double, const Vec& x, Vec& dx) override { dx = A * x; }
  int n_params() const override { return 0; }
  void vjp(double, const Vec&, const Vec& w, Vec& w_x, Vec&) override {
    w_x = A.transpose() * w;
  }
};

/// x' = -x + p (per-channel forcing parameters), for gradient plumbing.
struct ForcedRhs final : AdjointRhs {
  int n;
  Vec p;
  explicit ForcedRhs(Vec params) : n(static_cast<int>(params.size())), p(params) {}
  int dim() const override { return n; }
  void eval(double, const Vec& x, Vec& dx) override { dx = -x + p; }
  int n_params() const override { return n; }
  void vjp(double, const Vec&, const Vec& w, Vec& w_x, Vec& grad) override {
    w_x = -w;
    grad += w;
  }
};

} // namespace

TEST_CASE("rk4: exponential decay to 1e-8") {
  Mat A = -Mat::Identity(1, 1);
  LinearRhs f(A);
  SolverConfig cfg;
  cfg.method = OdeMethod::rk4;
  cfg.fixed_step = 0.01;
  cfg.save_times = {0.0, 1.0};
  const Trajectory traj = integrate(f, Vec::Ones(1), cfg);
  CHECK(std::abs(traj.states(1, 0) - std::exp(-1.0)) < 1e-8);
  CHECK(traj.stats.n_steps == 100);
  CHECK(traj.stats.n_rhs_evals == 400);
}

TEST_CASE("rk45: windkessel decay matches the analytic RC solution") {
  double p_ven, r2;
  auto model = windkessel_with_tau(0.5, p_ven, r2);
  SolverConfig cfg;
  cfg.method = OdeMethod::rk45;
  cfg.rel_tol = 1e-8;
  cfg.abs_tol = 1e-8;
  for (int k = 0; k <= 20; ++k) cfg.save_times.push_back(0.1 * k);

  Vec x0(1);
  x0[0] = p_ven + 2000.0;
  ModelRhs rhs(*model, [](double, Vec& u) { u[0] = 0.0; });
  const Trajectory traj = integrate(rhs, x0, cfg);
  for (int k = 0; k <= 20; ++k) {
    const double expect = p_ven + 2000.0 * std::exp(-0.1 * k / 0.5);
    CHECK(rel_err(traj.states(k, 0), expect) < 1e-6);
  }
  CHECK(traj.stats.n_rejected < traj.stats.n_steps);
}

TEST_CASE("rk4: halving the step cuts the windkessel error ~16x") {
  double p_ven, r2;
  auto model = windkessel_with_tau(0.05, p_ven, r2);
  ModelRhs rhs(*model, [](double, Vec& u) { u[0] = 0.0; });
  Vec x0(1);
  x0[0] = p_ven + 2000.0;

  auto error_at = [&](double h) {
    SolverConfig cfg;
    cfg.method = OdeMethod::rk4;
    cfg.fixed_step = h;
    cfg.save_times = {0.0, 0.2};
    const Trajectory t = integrate(rhs, x0, cfg);
    return std::abs(t.states(1, 0) - (p_ven + 2000.0 * std::exp(-0.2 / 0.05)));
  };
  const double ratio = error_at(4e-3) / error_at(2e-3);
  CHECK(ratio >= 12.0);
  CHECK(ratio <= 20.0);
}

TEST_CASE("empirical order: rk4 >= 3.8 and rk45 >= 4.5 on windkessel decay") {
  double p_ven, r2;
  auto model = windkessel_with_tau(0.05, p_ven, r2);
  ModelRhs rhs(*model, [](double, Vec& u) { u[0] = 0.0; });
  Vec x0(1);
  x0[0] = p_ven + 2000.0;
  const double expect = p_ven + 2000.0 * std::exp(-0.2 / 0.05);

  auto error_at = [&](OdeMethod method, double h) {
    SolverConfig cfg;
    cfg.method = method;
    cfg.fixed_step = h;
    cfg.save_times = {0.0, 0.2};
    return std::abs(integrate(rhs, x0, cfg).states(1, 0) - expect);
  };

  const double ord_rk4 =
      std::log2(error_at(OdeMethod::rk4, 8e-3) / error_at(OdeMethod::rk4, 4e-3));
  CHECK(ord_rk4 >= 3.8);

  const double ord_rk45 = std::log2(error_at(OdeMethod::rk45, 8e-3) /
                                    error_at(OdeMethod::rk45, 4e-3));
  CHECK(ord_rk45 >= 4.5);
}

TEST_CASE("rk45: dense output is exact at step endpoints and deterministic") {
  Mat A(2, 2);
  A << 0.0, 1.0, -4.0, -0.1; // damped oscillator
  LinearRhs f(A);
  Vec x0(2);
  x0 << 1.0, 0.0;

  SolverConfig sparse;
  sparse.method = OdeMethod::rk45;
  sparse.save_times = {0.0, 2.0};
  SolverConfig dense = sparse;
  dense.save_times = {0.0, 0.37, 0.8, 1.11, 2.0};

  const Trajectory t1 = integrate(f, x0, sparse);
  const Trajectory t2 = integrate(f, x0, dense);
  // saving never alters the step sequence, and the clamped final step ends
  // exactly at t_end, so the last rows agree bit for bit
  for (int i = 0; i < 2; ++i)
    CHECK(t1.states(1, i) == t2.states(4, i));

  const Trajectory t3 = integrate(f, x0, dense);
  for (long r = 0; r < t2.states.rows(); ++r)
    for (int i = 0; i < 2; ++i) CHECK(t2.states(r, i) == t3.states(r, i));
}

TEST_CASE("rk4: save grid is hit exactly and the tape replays bit-exactly") {
  Mat A(2, 2);
  A << -0.3, 0.2, 0.1, -0.4;
  LinearRhs f(A);
  Vec x0(2);
  x0 << 1.0, -1.0;

  SolverConfig cfg;
  cfg.method = OdeMethod::rk4;
  cfg.fixed_step = 0.03; // does not divide the save spacing
  cfg.save_times = {0.0, 0.1, 0.25, 0.4};
  AdjointTape tape;
  const Trajectory traj = integrate(f, x0, cfg, &tape);
  CHECK(traj.times == cfg.save_times);
  REQUIRE(tape.save_step.size() == 4);
  CHECK(tape.save_step[0] == -1);

  // replay: stepping through the tape reproduces every saved state
  Vec x = tape.steps[0].x;
  Vec k1(2), k2(2), k3(2), k4(2), xs(2);
  size_t row = 1;
  for (size_t i = 0; i < tape.steps.size(); ++i) {
    const auto& st = tape.steps[i];
    for (int j = 0; j < 2; ++j) CHECK(st.x[j] == x[j]);
    f.eval(st.t, x, k1);
    xs = x + (0.5 * st.h) * k1;
    f.eval(st.t + 0.5 * st.h, xs, k2);
    xs = x + (0.5 * st.h) * k2;
    f.eval(st.t + 0.5 * st.h, xs, k3);
    xs = x + st.h * k3;
    f.eval(st.t + st.h, xs, k4);
    x = x + (st.h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (row < 4 && tape.save_step[row] == static_cast<long>(i)) {
      for (int j = 0; j < 2; ++j) CHECK(traj.states(row, j) == x[j]);
      ++row;
    }
  }
  CHECK(row == 4);
}

TEST_CASE("integrate: error paths") {
  Mat A = -Mat::Identity(1, 1);
  LinearRhs f(A);
  SolverConfig cfg;
  cfg.method = OdeMethod::rk4;
  cfg.fixed_step = 1e-6;
  cfg.save_times = {0.0, 1.0};
  cfg.max_steps = 10;
  CHECK_THROWS_AS(integrate(f, Vec::Ones(1), cfg), MaxStepsExceeded);

  struct Blowup final : OdeRhs {
    int dim() const override { return 1; }
    void eval(double, const Vec& x, Vec& dx) override {
      dx.resize(1);
      dx[0] = x[0] * x[0]; // finite-time blowup
    }
  } g;
  SolverConfig cfg2;
  cfg2.method = OdeMethod::rk4;
  cfg2.fixed_step = 0.1;
  cfg2.save_times = {0.0, 5.0};
  Vec big(1);
  big[0] = 1e80;
  CHECK_THROWS_AS(integrate(g, big, cfg2), NonFiniteState);

  SolverConfig bad;
  bad.method = OdeMethod::rk4;
  bad.fixed_step = 0.0;
  bad.save_times = {0.0, 1.0};
  CHECK_THROWS_AS(integrate(f, Vec::Ones(1), bad), ValidationError);

  SolverConfig unsorted;
  unsorted.method = OdeMethod::rk45;
  unsorted.save_times = {0.0, 1.0, 0.5};
  CHECK_THROWS_AS(integrate(f, Vec::Ones(1), unsorted), ValidationError);
}

TEST_CASE("loss_gradient: zero-weight loss gives zero gradients") {
  ForcedRhs f(Vec::Ones(3));
  SolverConfig cfg;
  cfg.method = OdeMethod::rk4;
  cfg.fixed_step = 0.02;
  cfg.save_times = {0.0, 0.5, 1.0};
  auto res = loss_gradient(f, Vec::Zero(3), cfg,
                           [](const Trajectory&, Mat*) { return 0.0; });
  CHECK(res.loss == 0.0);
  CHECK(res.grad_params.norm() == 0.0);
  CHECK(res.grad_x0.norm() == 0.0);
}

TEST_CASE("loss_gradient: loss equals a plain forward evaluation bit-for-bit") {
  ForcedRhs f(Vec::Constant(2, 0.7));
  SolverConfig cfg;
  cfg.method = OdeMethod::rk4;
  cfg.fixed_step = 0.05;
  cfg.save_times = {0.0, 0.3, 0.9};
  Vec x0(2);
  x0 << 0.2, -0.4;

  auto loss_fn = [](const Trajectory& t, Mat* g) {
    double acc = 0.0;
    for (long r = 0; r < t.states.rows(); ++r)
      acc += t.states.row(r).squaredNorm();
    if (g) {
      for (long r = 0; r < t.states.rows(); ++r)
        g->row(r) = 2.0 * t.states.row(r);
    }
    return acc;
  };
  const auto res = loss_gradient(f, x0, cfg, loss_fn);
  const Trajectory ref = integrate(f, x0, cfg);
  CHECK(res.loss == loss_fn(ref, nullptr));
}

TEST_CASE("loss_gradient: x0 gradient of |x(T)|^2 on a linear system vs FD") {
  Rng rng(9);
  Mat A(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) A(i, j) = rng.uniform(-1.0, 1.0);
  A -= 1.5 * Mat::Identity(3, 3);
  LinearRhs f(A);
  SolverConfig cfg;
  cfg.method = OdeMethod::rk4;
  cfg.fixed_step = 0.01;
  cfg.save_times = {0.0, 1.0};
  const Vec x0 = random_vec(rng, 3, -1.0, 1.0);

  auto loss_fn = [](const Trajectory& t, Mat* g) {
    const long last = t.states.rows() - 1;
    if (g) g->row(last) = 2.0 * t.states.row(last);
    return t.states.row(last).squaredNorm();
  };
  const auto res = loss_gradient(f, x0, cfg, loss_fn);

  // discretization-matched oracle: central differences of the rolled-out
  // discrete loss, not the continuous adjoint
  Vec fd(3);
  for (int i = 0; i < 3; ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x0[i]));
    Vec xp = x0, xm = x0;
    xp[i] += h;
    xm[i] -= h;
    fd[i] = (loss_fn(integrate(f, xp, cfg), nullptr) -
             loss_fn(integrate(f, xm, cfg), nullptr)) /
            (2.0 * h);
  }
  CHECK(rel_err(res.grad_x0, fd) < 1e-6);
}

TEST_CASE("loss_gradient: parameter gradient on the forced system vs FD") {
  Vec p0 = Vec::Constant(3, 0.4);
  SolverConfig cfg;
  cfg.method = OdeMethod::rk4;
  cfg.fixed_step = 0.02;
  cfg.save_times = {0.0, 0.4, 0.8};
  const Vec x0 = Vec::Zero(3);
  auto loss_fn = [](const Trajectory& t, Mat* g) {
    const long last = t.states.rows() - 1;
    if (g) g->row(last) = 2.0 * t.states.row(last);
    return t.states.row(last).squaredNorm();
  };

  ForcedRhs f(p0);
  const auto res = loss_gradient(f, x0, cfg, loss_fn);
  for (int i = 0; i < 3; ++i) {
    const double h = 1e-6;
    Vec pp = p0, pm = p0;
    pp[i] += h;
    pm[i] -= h;
    ForcedRhs fp(pp), fm(pm);
    const double fd = (loss_fn(integrate(fp, x0, cfg), nullptr) -
                       loss_fn(integrate(fm, x0, cfg), nullptr)) /
                      (2.0 * h);
    CHECK(rel_err(res.grad_params[i], fd) < 1e-6);
  }

  SolverConfig wrong = cfg;
  wrong.method = OdeMethod::rk45;
  CHECK_THROWS_AS(loss_gradient(f, x0, wrong, loss_fn), ValidationError);
}
