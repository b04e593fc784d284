#pragma once

#include <filesystem>
#include <string>

#include "neuralme/cardio_model.hpp"
#include "neuralme/me_model.hpp"
#include "neuralme/network.hpp"
#include "neuralme/rng.hpp"

namespace testsupport {

using namespace neuralme;
namespace fs = std::filesystem;

fs::path data_dir();
ArterialNetwork desk7();
ArterialNetwork full_net();

/// Single pipe feeding one windkessel; `observed` marks the segment as a
/// placeholder site.
std::string mini_net_json(bool observed);

/// Scratch directory under the system temp root, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

private:
  fs::path path_;
};

/// x' = A x + B u + c with a switchable analytic jvp/vjp, for exercising
/// the capability dispatch.
class LinearModel final : public MEModel {
public:
  LinearModel(Mat A, Mat B, Vec c, bool with_jvp = true, bool with_vjp = false);

  const MEModelDescription& description() const override { return desc_; }
  void derivatives(double t, const Vec& x, const Vec& u, Vec& dxdt) override;
  bool has_analytic_jvp() const override { return with_jvp_; }
  void jvp(double t, const Vec& x, const Vec& u, const Vec& v_x,
           const Vec& v_u, Vec& out) override;
  bool has_analytic_vjp() const override { return with_vjp_; }
  void vjp(double t, const Vec& x, const Vec& u, const Vec& w, Vec& w_x,
           Vec& w_u) override;
  std::unique_ptr<MEModel> clone() const override;

  const Mat& A() const { return A_; }

private:
  Mat A_, B_;
  Vec c_;
  bool with_jvp_, with_vjp_;
  MEModelDescription desc_;
};

/// Smooth nonlinear 3-state model with a hand-coded analytic jvp and no
/// vjp; the finite-difference convergence checks run against it.
class NonlinModel final : public MEModel {
public:
  NonlinModel();
  const MEModelDescription& description() const override { return desc_; }
  void derivatives(double t, const Vec& x, const Vec& u, Vec& dxdt) override;
  bool has_analytic_jvp() const override { return true; }
  void jvp(double t, const Vec& x, const Vec& u, const Vec& v_x,
           const Vec& v_u, Vec& out) override;
  std::unique_ptr<MEModel> clone() const override;

private:
  MEModelDescription desc_;
};

Vec random_vec(Rng& rng, int n, double lo, double hi);

double rel_err(const Vec& got, const Vec& want);
double rel_err(double got, double want);

inline bool bits_equal(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) return false;
  for (long i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

} // namespace testsupport
