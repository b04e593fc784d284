#include "support.hpp"

#include <atomic>
#include <cmath>

namespace testsupport {

fs::path data_dir() { return NEURALME_DATA_DIR; }

ArterialNetwork desk7() { return load_network(data_dir() / "desk7.net"); }

ArterialNetwork full_net() {
  return load_network(data_dir() / "full_arterial.net");
}

std::string mini_net_json(bool observed) {
  std::string obs = observed ? "\"s1\"" : "";
  return R"({
  "schema_version": 1,
  "fluid": {"density": 1060.0, "dynamic_viscosity": 4.0e-3},
  "segments": [
    {"id": "s1", "from": "n0", "to": "n1", "length": 0.1,
     "inlet_diameter": 0.01, "outlet_diameter": 0.01,
     "wall_thickness": 0.001, "elastic_modulus": 5.0e5}
  ],
  "terminals": {
    "n1": {"r_proximal": 4.0e7, "r_distal": 5.2e8,
            "compliance": 1.9e-9, "venous_pressure": 667.0}
  },
  "observed": [)" + obs + R"(]
})";
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("neuralme_test_" + tag + "_" + std::to_string(counter++));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

LinearModel::LinearModel(Mat A, Mat B, Vec c, bool with_jvp, bool with_vjp)
    : A_(std::move(A)), B_(std::move(B)), c_(std::move(c)),
      with_jvp_(with_jvp), with_vjp_(with_vjp) {
  desc_.n_states = static_cast<int>(A_.rows());
  desc_.n_inputs = static_cast<int>(B_.cols());
  for (int i = 0; i < desc_.n_states; ++i)
    desc_.state_names.push_back("x" + std::to_string(i));
  for (int i = 0; i < desc_.n_inputs; ++i)
    desc_.input_names.push_back("u" + std::to_string(i));
  desc_.partition = StatePartition::contiguous(desc_.n_states, 0);
}

void LinearModel::derivatives(double, const Vec& x, const Vec& u, Vec& dxdt) {
  check_args(x, u);
  dxdt = A_ * x + B_ * u + c_;
}

void LinearModel::jvp(double, const Vec&, const Vec&, const Vec& v_x,
                      const Vec& v_u, Vec& out) {
  if (!with_jvp_) throw CapabilityMissing("LinearModel jvp disabled");
  out = A_ * v_x + B_ * v_u;
}

void LinearModel::vjp(double, const Vec&, const Vec&, const Vec& w, Vec& w_x,
                      Vec& w_u) {
  if (!with_vjp_) throw CapabilityMissing("LinearModel vjp disabled");
  w_x = A_.transpose() * w;
  w_u = B_.transpose() * w;
}

std::unique_ptr<MEModel> LinearModel::clone() const {
  return std::make_unique<LinearModel>(*this);
}

NonlinModel::NonlinModel() {
  desc_.n_states = 3;
  desc_.n_inputs = 1;
  desc_.state_names = {"x0", "x1", "x2"};
  desc_.input_names = {"u0"};
  desc_.partition = StatePartition::contiguous(3, 0);
}

void NonlinModel::derivatives(double, const Vec& x, const Vec& u, Vec& dxdt) {
  check_args(x, u);
  // third derivatives are O(10), which keeps the central-difference
  // truncation error above the rounding floor across the eps sweep
  dxdt.resize(3);
  dxdt[0] = -x[0] * x[0] * x[0] + std::sin(3.0 * x[1]) + u[0] * u[0];
  dxdt[1] = x[0] * x[2] - 0.5 * x[1];
  dxdt[2] = std::cos(2.0 * x[2]) + u[0];
}

void NonlinModel::jvp(double, const Vec& x, const Vec& u, const Vec& v_x,
                      const Vec& v_u, Vec& out) {
  out.resize(3);
  out[0] = -3.0 * x[0] * x[0] * v_x[0] + 3.0 * std::cos(3.0 * x[1]) * v_x[1] +
           2.0 * u[0] * v_u[0];
  out[1] = x[2] * v_x[0] - 0.5 * v_x[1] + x[0] * v_x[2];
  out[2] = -2.0 * std::sin(2.0 * x[2]) * v_x[2] + v_u[0];
}

std::unique_ptr<MEModel> NonlinModel::clone() const {
  return std::make_unique<NonlinModel>(*this);
}

Vec random_vec(Rng& rng, int n, double lo, double hi) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

double rel_err(const Vec& got, const Vec& want) {
  const double scale = std::max(want.lpNorm<Eigen::Infinity>(), 1e-300);
  return (got - want).lpNorm<Eigen::Infinity>() / scale;
}

double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

} // namespace testsupport
