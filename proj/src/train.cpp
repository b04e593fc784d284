#include "neuralme/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "neuralme/flow_solver.hpp"

namespace neuralme {

void TrainConfig::validate(int n_obs, int n_samples) const {
  if (epochs < 0) throw ValidationError("train: epochs must be >= 0");
  if (learning_rate <= 0.0) throw ValidationError("train: learning_rate <= 0");
  if (lr_final_factor <= 0.0 || lr_final_factor > 1.0)
    throw ValidationError("train: lr_final_factor must lie in (0,1]");
  if (subset_size < 1 || subset_size > n_obs)
    throw ValidationError("train: subset_size must lie in [1, n_obs]");
  if (horizon.initial < 1 || horizon.initial > n_samples)
    throw ValidationError("train: horizon.initial out of range");
  if (horizon.increment < 1 || horizon.cadence < 1)
    throw ValidationError("train: horizon growth parameters must be positive");
  if (unfreeze_threshold <= 0.0 || unfreeze_threshold >= 1.0)
    throw ValidationError("train: unfreeze_threshold must lie in (0,1)");
  if (grad_clip <= 0.0) throw ValidationError("train: grad_clip <= 0");
}

TrainConfig train_config_from_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open train config '" + path.string() + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.lr_final_factor = j.value("lr_final_factor", c.lr_final_factor);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.subset_size = j.value("subset_size", c.subset_size);
  if (j.contains("horizon")) {
    c.horizon.initial = j["horizon"].value("initial", c.horizon.initial);
    c.horizon.increment = j["horizon"].value("increment", c.horizon.increment);
    c.horizon.cadence = j["horizon"].value("cadence", c.horizon.cadence);
  }
  c.unfreeze_threshold = j.value("unfreeze_threshold", c.unfreeze_threshold);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  c.solver_step = j.value("solver_step", c.solver_step);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  return c;
}

double loss_mse_horizon(const Trajectory& pred, const Dataset& data,
                        int horizon, const std::vector<int>& subset,
                        const std::vector<int>& channel_states,
                        Mat* grad_states) {
  if (horizon < 1 || horizon > static_cast<int>(data.times.size()) ||
      horizon > pred.states.rows())
    throw DimensionMismatch("loss horizon", data.times.size(), horizon);
  if (subset.empty()) throw ValidationError("loss: subset must not be empty");
  if (channel_states.size() != static_cast<size_t>(data.n_channels()))
    throw DimensionMismatch("loss channel map", data.n_channels(),
                            channel_states.size());
  for (int k = 0; k < horizon; ++k)
    if (std::abs(pred.times[k] - data.times[k]) > 1e-9)
      throw ValidationError("loss: prediction grid does not match the data grid");

  if (grad_states) grad_states->setZero();
  const double norm = 1.0 / (static_cast<double>(horizon) * subset.size());
  double acc = 0.0;
  for (int c : subset) {
    if (c < 0 || c >= data.n_channels())
      throw ValidationError("loss: subset index out of range");
    const int col = channel_states[c];
    for (int k = 0; k < horizon; ++k) {
      const double err = pred.states(k, col) - data.pressures(k, c);
      acc += err * err * norm;
      if (grad_states) (*grad_states)(k, col) += 2.0 * err * norm;
    }
  }
  return acc;
}

std::vector<int> sample_subset(Rng& rng, int n_obs, int k) {
  if (k < 0 || k > n_obs)
    throw ValidationError("sample_subset: k must lie in [0, n_obs]");
  std::vector<int> pool(n_obs);
  for (int i = 0; i < n_obs; ++i) pool[i] = i;
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(rng.uniform_index(n_obs - i));
    std::swap(pool[i], pool[j]);
  }
  std::vector<int> out(pool.begin(), pool.begin() + k);
  std::sort(out.begin(), out.end());
  return out;
}

void adam_step(Vec& params, const Vec& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  if (grads.size() != params.size())
    throw DimensionMismatch("adam_step", params.size(), grads.size());
  if (state.m.size() == 0) {
    state.m = Vec::Zero(params.size());
    state.v = Vec::Zero(params.size());
  }
  state.t += 1;
  state.m = beta1 * state.m + (1.0 - beta1) * grads;
  state.v = beta2 * state.v + (1.0 - beta2) * grads.cwiseProduct(grads);
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  params -= (lr / bc1) * state.m.cwiseQuotient(
                (state.v / bc2).cwiseSqrt().array().matrix() +
                Vec::Constant(params.size(), eps));
}

namespace {

HeartProfile heart_for(const CardioModel& cardio, const Dataset& data) {
  HeartProfile h = cardio.heart();
  h.heart_rate = data.patient.heart_rate;
  return h;
}

HybridRhs::InputFn make_input(const FluidProps& fluid, const HeartProfile& heart) {
  return [fluid, heart](double t, Vec& u) {
    u[0] = heart_inflow(t, heart, fluid);
  };
}

/// One-cycle warm-up from the analytic steady state: the rollout's initial
/// state at the data window start. The gradient is not propagated through
/// the warm-up.
Vec warmup_x0(HybridModel& m, const CardioModel& cardio, const Dataset& data,
              const HeartProfile& heart, double step) {
  const double mean_mass =
      cardio.fluid().density * heart.stroke_volume / heart.period();
  Vec x_ss = cardio.steady_state(mean_mass);
  const double t0 = data.times.front();
  if (t0 <= 0.0) return x_ss;
  SolverConfig cfg;
  cfg.method = OdeMethod::rk4;
  cfg.fixed_step = step;
  cfg.save_times = {0.0, t0};
  HybridRhs rhs(m, make_input(cardio.fluid(), heart));
  return integrate(rhs, x_ss, cfg).states.row(1);
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

TrainResult train(HybridModel& m, const Dataset& data, const TrainConfig& cfg) {
  data.validate();
  auto* cardio = dynamic_cast<CardioModel*>(&m.inner());
  if (!cardio)
    throw ValidationError("train: the hybrid must wrap a cardio model");
  const auto& channels = cardio->observed_state_indices();
  if (channels.size() != static_cast<size_t>(data.n_channels()))
    throw DimensionMismatch("train channels", channels.size(),
                            data.n_channels());
  const int n_obs = data.n_channels();
  const int n_samples = data.n_samples();
  cfg.validate(n_obs, n_samples);

  const double step = cfg.solver_step > 0.0 ? cfg.solver_step
                                            : 1.0 / (4.0 * data.rate);
  const HeartProfile heart = heart_for(*cardio, data);
  auto input = make_input(cardio->fluid(), heart);

  Metrics metrics;
  if (cfg.epochs == 0) {
    const Metrics eval = evaluate(m, data, step);
    metrics.per_segment_mse = eval.per_segment_mse;
    metrics.total_mse = eval.total_mse;
    metrics.seconds_per_pulse = eval.seconds_per_pulse;
    return {m.params().flat, metrics};
  }

  // schedule: horizon grows by `increment` every `cadence` epochs and must
  // reach the full window inside the first 90% of the budget
  const int growth_steps = std::max(
      0, (n_samples - cfg.horizon.initial + cfg.horizon.increment - 1) /
             cfg.horizon.increment);
  int cadence = cfg.horizon.cadence;
  if (growth_steps > 0)
    cadence = std::max(
        1, std::min(cadence, static_cast<int>(0.9 * cfg.epochs) / growth_steps));
  auto horizon_at = [&](int epoch) {
    const long h = cfg.horizon.initial +
                   static_cast<long>(cfg.horizon.increment) * (epoch / cadence);
    return static_cast<int>(std::min<long>(h, n_samples));
  };

  Rng rng(cfg.rng_seed);
  m.params().frozen.state_bias = false;
  m.params().frozen.dense1 = true;
  m.params().frozen.dense2 = true;

  AdamState adam;
  double initial_loss = 0.0;
  double best_loss = std::numeric_limits<double>::infinity();
  Vec best_params = m.params().flat;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const int horizon = horizon_at(epoch);
    const auto subset = sample_subset(rng, n_obs, cfg.subset_size);
    const Vec x0 = warmup_x0(m, *cardio, data, heart, step);

    SolverConfig scfg;
    scfg.method = OdeMethod::rk4;
    scfg.fixed_step = step;
    scfg.save_times.assign(data.times.begin(), data.times.begin() + horizon);

    HybridRhs rhs(m, input);
    auto lg = loss_gradient(
        rhs, x0, scfg, [&](const Trajectory& traj, Mat* grad) {
          return loss_mse_horizon(traj, data, horizon, subset, channels, grad);
        });

    const bool frozen_now = m.params().frozen.dense1;
    metrics.history.push_back({epoch, lg.loss, horizon, subset, frozen_now});

    if (!std::isfinite(lg.loss)) {
      metrics.diverged = true;
      break;
    }
    if (epoch == 0) initial_loss = lg.loss;
    if (lg.loss < best_loss) {
      best_loss = lg.loss;
      best_params = m.params().flat;
    }

    const double gnorm = lg.grad_params.norm();
    if (gnorm > cfg.grad_clip) lg.grad_params *= cfg.grad_clip / gnorm;

    const double lr =
        cfg.epochs > 1
            ? cfg.learning_rate *
                  std::pow(cfg.lr_final_factor,
                           static_cast<double>(epoch) / (cfg.epochs - 1))
            : cfg.learning_rate;
    adam_step(m.params().flat, lg.grad_params, adam, lr, cfg.beta1, cfg.beta2,
              cfg.adam_eps);

    if (frozen_now && lg.loss <= cfg.unfreeze_threshold * initial_loss) {
      m.params().frozen.dense1 = false;
      m.params().frozen.dense2 = false;
      metrics.unfreeze_epoch = epoch;
    }
  }

  m.params().flat = best_params;
  const Metrics eval = evaluate(m, data, step);
  metrics.per_segment_mse = eval.per_segment_mse;
  metrics.total_mse = eval.total_mse;
  metrics.seconds_per_pulse = eval.seconds_per_pulse;
  return {best_params, metrics};
}

Metrics evaluate(HybridModel& m, const Dataset& data, double solver_step) {
  data.validate();
  auto* cardio = dynamic_cast<CardioModel*>(&m.inner());
  if (!cardio)
    throw ValidationError("evaluate: the hybrid must wrap a cardio model");
  const auto& channels = cardio->observed_state_indices();
  const double step =
      solver_step > 0.0 ? solver_step : 1.0 / (4.0 * data.rate);
  const HeartProfile heart = heart_for(*cardio, data);

  const Vec x0 = warmup_x0(m, *cardio, data, heart, step);
  SolverConfig cfg;
  cfg.method = OdeMethod::rk4;
  cfg.fixed_step = step;
  cfg.save_times = data.times;
  HybridRhs rhs(m, make_input(cardio->fluid(), heart));
  const Trajectory traj = integrate(rhs, x0, cfg);

  Metrics out;
  const int n_obs = data.n_channels();
  const int n = data.n_samples();
  out.per_segment_mse = Vec::Zero(n_obs);
  for (int c = 0; c < n_obs; ++c) {
    double acc = 0.0;
    for (int k = 0; k < n; ++k) {
      const double err = traj.states(k, channels[c]) - data.pressures(k, c);
      acc += err * err;
    }
    out.per_segment_mse[c] = acc / n;
  }
  out.total_mse = out.per_segment_mse.mean();
  const double pulses =
      (data.times.back() - data.times.front()) / heart.period();
  out.seconds_per_pulse =
      pulses > 0.0 ? traj.stats.wall_time / pulses : traj.stats.wall_time;
  return out;
}

BenchReport benchmark(CardioModel& reference,
                      std::vector<std::pair<std::string, HybridModel*>> hybrids,
                      double n_cycles, double rate, int repetitions) {
  if (repetitions < 3)
    throw ValidationError("benchmark: repetitions must be >= 3");
  if (n_cycles < 1.0) throw ValidationError("benchmark: n_cycles < 1");

  const HeartProfile heart = reference.heart();
  const double t_end = n_cycles * heart.period();
  std::vector<double> save;
  for (long k = 0;; ++k) {
    const double t = static_cast<double>(k) / rate;
    if (t > t_end) break;
    save.push_back(t);
  }

  BenchReport report;
  auto run_subject = [&](const std::string& name, auto&& once) {
    BenchEntry entry;
    entry.name = name;
    once(); // warm-up iteration, excluded
    for (int r = 0; r < repetitions; ++r)
      entry.seconds_per_pulse.push_back(once() / n_cycles);
    entry.median = median_of(entry.seconds_per_pulse);
    report.entries.push_back(std::move(entry));
  };

  {
    SolverConfig cfg;
    cfg.method = OdeMethod::rk45;
    cfg.rel_tol = 1e-9;
    cfg.abs_tol = 1e-6;
    cfg.save_times = save;
    const Vec x0 = reference.steady_state();
    run_subject("reference_elastic", [&]() {
      ModelRhs rhs(reference, [&](double t, Vec& u) {
        u[0] = heart_inflow(t, heart, reference.fluid());
      });
      return integrate(rhs, x0, cfg).stats.wall_time;
    });
  }

  for (auto& [name, hm] : hybrids) {
    auto* cardio = dynamic_cast<CardioModel*>(&hm->inner());
    if (!cardio)
      throw ValidationError("benchmark: hybrid must wrap a cardio model");
    SolverConfig cfg;
    cfg.method = OdeMethod::rk4;
    cfg.fixed_step = 1.0 / (4.0 * rate);
    cfg.save_times = save;
    const Vec x0 = cardio->steady_state();
    run_subject(name, [&, hm]() {
      HybridRhs rhs(*hm, make_input(cardio->fluid(), cardio->heart()));
      return integrate(rhs, x0, cfg).stats.wall_time;
    });
  }

  if (report.entries.size() >= 2 && report.entries[1].median > 0.0)
    report.speedup = report.entries[0].median / report.entries[1].median;
  return report;
}

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<EpochRecord>& history) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open metrics CSV '" + path.string() + "'");
  f << "epoch,loss,horizon,subset,frozen\n";
  for (const auto& r : history) {
    f << r.epoch << ',';
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", r.loss);
    f << buf << ',' << r.horizon << ',';
    for (size_t i = 0; i < r.subset.size(); ++i) {
      if (i) f << '|';
      f << r.subset[i];
    }
    f << ',' << (r.frozen ? 1 : 0) << '\n';
  }
}

int worker_cap() {
  const char* env = std::getenv("NEURALME_THREADS");
  const int hw = std::max(1u, std::thread::hardware_concurrency());
  if (!env) return hw;
  const int v = std::atoi(env);
  return std::max(1, std::min(v > 0 ? v : 1, hw));
}

} // namespace neuralme
