#include "neuralme/cli.hpp"

#include <ctime>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "neuralme/cardio_model.hpp"
#include "neuralme/checkpoint.hpp"
#include "neuralme/dataset.hpp"
#include "neuralme/fsutil.hpp"
#include "neuralme/train.hpp"

namespace neuralme {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string timestamp_utc() {
  std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

/// Every flag that affects numerics lands in `options`; inputs are recorded
/// with content hashes so a run can be reproduced bit-for-bit (timing
/// fields excluded).
void write_manifest(const fs::path& dir, const std::string& command,
                    const std::vector<std::string>& argv, const json& options,
                    const std::vector<fs::path>& inputs) {
  json j;
  j["tool"] = "neuralme";
  j["version"] = kToolVersion;
  j["command"] = command;
  j["argv"] = argv;
  j["options"] = options;
  j["timestamp"] = timestamp_utc();
  json in = json::object();
  for (const auto& p : inputs) in[p.string()] = file_hash_hex(p);
  j["inputs"] = in;
  fs::create_directories(dir);
  std::ofstream f(dir / "manifest.json", std::ios::binary);
  if (!f) throw ParseError("cannot write manifest in '" + dir.string() + "'");
  f << j.dump(1) << '\n';
}

struct HeartFlags {
  double bpm = 73.0;
  double stroke_volume = 7e-5;
  double systolic_fraction = 0.3;

  void attach(CLI::App* cmd) {
    cmd->add_option("--bpm", bpm, "Heart rate, beats per minute");
    cmd->add_option("--sv", stroke_volume, "Stroke volume, m^3");
    cmd->add_option("--sys-frac", systolic_fraction,
                    "Systolic fraction of the period");
  }
  HeartProfile profile() const { return {bpm, stroke_volume, systolic_fraction}; }
  json to_json() const {
    return {{"bpm", bpm},
            {"stroke_volume", stroke_volume},
            {"systolic_fraction", systolic_fraction}};
  }
};

void print_topology(const HybridTopology& topo) {
  std::cout << "hybrid topology: " << topo.n_states() << " states ("
            << topo.n_wk << " windkessel | " << topo.n_art()
            << " arterial), variant "
            << (topo.variant == PlaceholderKind::C ? "C" : "LC") << "\n";
  for (const auto& l : topo.layers()) {
    std::cout << "  #" << l.index << "  " << l.type << "  ";
    if (l.in_side >= 0)
      std::cout << l.in_main << "|" << l.in_side;
    else
      std::cout << l.in_main;
    std::cout << " -> ";
    if (l.out_side >= 0)
      std::cout << l.out_main << "|" << l.out_side;
    else
      std::cout << l.out_main;
    std::cout << "  [" << l.activation << "]\n";
  }
}

fs::path output_dir_for(const std::string& out_dir, const fs::path& primary) {
  if (!out_dir.empty()) return out_dir;
  const fs::path parent = primary.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

Trajectory simulate_fixed(HybridModel& m, const CardioModel& cardio,
                          const HeartProfile& heart, double n_cycles,
                          double rate, double step) {
  SolverConfig cfg;
  cfg.method = OdeMethod::rk4;
  cfg.fixed_step = step > 0.0 ? step : 1.0 / (4.0 * rate);
  const double t_end = n_cycles * heart.period();
  for (long k = 0;; ++k) {
    const double t = static_cast<double>(k) / rate;
    if (t > t_end) break;
    cfg.save_times.push_back(t);
  }
  const double mean_mass =
      cardio.fluid().density * heart.stroke_volume / heart.period();
  const Vec x0 = cardio.steady_state(mean_mass);
  HybridRhs rhs(m, [&](double t, Vec& u) {
    u[0] = heart_inflow(t, heart, cardio.fluid());
  });
  return integrate(rhs, x0, cfg);
}

/// Wraps a plain cardio model in a pass-through hybrid so the simulate
/// path is shared.
HybridModel bypass_hybrid(const ArterialNetwork& net, CardioVariant variant,
                          const FluidProps& fluid, const HeartProfile& heart) {
  auto inner = build_model(net, variant, fluid, heart);
  const auto& part = inner->description().partition;
  const int n_obs = static_cast<int>(net.observed_segments.size());
  HybridTopology topo = build_topology(
      part.n_wk, std::max(1, n_obs),
      variant == CardioVariant::simple_LC ? PlaceholderKind::LC
                                          : PlaceholderKind::C,
      1);
  if (topo.n_art() != part.n_art)
    throw ValidationError("simulate: network has no observed segments");
  ParameterVector params = init_params(topo, 0);
  ScalerSet scalers;
  scalers.state.shift = Vec::Zero(topo.n_art());
  scalers.state.scale = Vec::Ones(topo.n_art());
  scalers.state.degenerate.assign(topo.n_art(), 0);
  scalers.deriv = scalers.state;
  HybridModel m(topo, std::move(params), std::move(scalers), std::move(inner));
  m.bypass_mode = true;
  return m;
}

int cmd_generate(const std::vector<std::string>& argv, CLI::App& sub,
                 const std::string& network_path, const HeartFlags& heart,
                 int cycles, double rate, const std::string& out,
                 const std::string& out_dir, const std::string& label) {
  (void)sub;
  ArterialNetwork net = load_network(network_path);
  Dataset ds = reference_waveforms(net, net.fluid, heart.profile(), cycles,
                                   rate, label);
  const fs::path out_path(out);
  if (!out_path.parent_path().empty())
    fs::create_directories(out_path.parent_path());
  write_waveform_csv(out_path, ds.times, ds.pressures, ds.segment_ids);
  json opts = {{"network", network_path}, {"heart", heart.to_json()},
               {"cycles", cycles},        {"rate", rate},
               {"label", label},          {"output", out}};
  write_manifest(output_dir_for(out_dir, out_path), "generate", argv, opts,
                 {network_path});
  std::cout << "wrote " << ds.n_samples() << " samples x " << ds.n_channels()
            << " segments to " << out << "\n";
  return 0;
}

int cmd_simulate(const std::vector<std::string>& argv,
                 const std::string& network_path, const std::string& model,
                 const std::string& checkpoint, const HeartFlags& heart,
                 int cycles, double rate, double step,
                 const std::string& out, const std::string& out_dir) {
  const fs::path out_path(out);
  if (!out_path.parent_path().empty())
    fs::create_directories(out_path.parent_path());
  std::vector<fs::path> inputs;

  if (model == "reference") {
    ArterialNetwork net = load_network(network_path);
    inputs.push_back(network_path);
    Dataset ds =
        reference_waveforms(net, net.fluid, heart.profile(), cycles, rate);
    write_waveform_csv(out_path, ds.times, ds.pressures, ds.segment_ids);
  } else if (model == "hybrid") {
    if (checkpoint.empty())
      throw ValidationError("simulate: --checkpoint required for --model hybrid");
    Checkpoint ck = load_checkpoint(checkpoint);
    const std::string net_path =
        network_path.empty() ? ck.network_file : network_path;
    ArterialNetwork net = load_network(net_path);
    inputs.push_back(net_path);
    inputs.push_back(checkpoint);
    HybridModel m = rebuild_hybrid(ck, net);
    auto& cardio = dynamic_cast<CardioModel&>(m.inner());
    HeartProfile h = heart.profile();
    Trajectory traj = simulate_fixed(m, cardio, h, cycles, rate, step);
    const auto& cols = cardio.observed_state_indices();
    Mat p(traj.states.rows(), static_cast<long>(cols.size()));
    for (size_t c = 0; c < cols.size(); ++c)
      p.col(static_cast<long>(c)) = traj.states.col(cols[c]);
    write_waveform_csv(out_path, traj.times, p, net.observed_segments);
  } else {
    ArterialNetwork net = load_network(network_path);
    inputs.push_back(network_path);
    const CardioVariant variant = cardio_variant_from_string(model);
    HybridModel m = bypass_hybrid(net, variant, net.fluid, heart.profile());
    auto& cardio = dynamic_cast<CardioModel&>(m.inner());
    Trajectory traj =
        simulate_fixed(m, cardio, heart.profile(), cycles, rate, step);
    const auto& cols = cardio.observed_state_indices();
    Mat p(traj.states.rows(), static_cast<long>(cols.size()));
    for (size_t c = 0; c < cols.size(); ++c)
      p.col(static_cast<long>(c)) = traj.states.col(cols[c]);
    write_waveform_csv(out_path, traj.times, p, net.observed_segments);
  }

  json opts = {{"network", network_path}, {"model", model},
               {"checkpoint", checkpoint}, {"heart", heart.to_json()},
               {"cycles", cycles},         {"rate", rate},
               {"step", step},             {"output", out}};
  write_manifest(output_dir_for(out_dir, out_path), "simulate", argv, opts,
                 inputs);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_train(const std::vector<std::string>& argv,
              const std::string& network_path, const std::string& variant_str,
              const std::string& data_path, const std::string& config_path,
              std::uint64_t seed, int hidden, bool no_skip,
              const HeartFlags& heart, double rate,
              const std::string& out_dir) {
  ArterialNetwork net = load_network(network_path);
  const CardioVariant variant = cardio_variant_from_string(variant_str);
  if (variant == CardioVariant::reference_elastic)
    throw ValidationError("train: variant must be c or lc");

  TrainConfig cfg;
  if (!config_path.empty()) cfg = train_config_from_json(config_path);
  if (seed != 0) cfg.rng_seed = seed;

  Dataset raw = read_waveform_csv(data_path);
  raw.patient.heart_rate = heart.bpm;
  Dataset data = build_dataset(raw, heart.bpm, rate);

  auto inner = build_model(net, variant, net.fluid, heart.profile());
  const auto& part = inner->description().partition;
  HybridTopology topo = build_topology(
      part.n_wk, static_cast<int>(net.observed_segments.size()),
      variant == CardioVariant::simple_LC ? PlaceholderKind::LC
                                          : PlaceholderKind::C,
      hidden);
  print_topology(topo);

  const auto& ph = inner->placeholder_params();
  ScalerSet scalers = fit_scalers(
      data, topo, topo.variant == PlaceholderKind::LC ? &ph : nullptr);
  ParameterVector params = init_params(topo, cfg.rng_seed);
  CardioModel* cardio = inner.get();
  HybridModel m(topo, std::move(params), std::move(scalers), std::move(inner));
  m.residual_skip = !no_skip;

  TrainResult result = train(m, data, cfg);

  fs::create_directories(out_dir.empty() ? "." : out_dir);
  const fs::path dir = out_dir.empty() ? "." : out_dir;
  Checkpoint ck = make_checkpoint(m, *cardio, network_path,
                                  file_hash_hex(network_path), cfg.rng_seed);
  save_checkpoint(dir / "checkpoint.json", ck);
  write_metrics_csv(dir / "metrics.csv", result.metrics.history);

  json opts = {{"network", network_path},
               {"variant", variant_str},
               {"data", data_path},
               {"config", config_path},
               {"seed", cfg.rng_seed},
               {"hidden", hidden},
               {"skip", !no_skip},
               {"heart", heart.to_json()},
               {"rate", rate},
               {"train_config",
                {{"epochs", cfg.epochs},
                 {"learning_rate", cfg.learning_rate},
                 {"subset_size", cfg.subset_size},
                 {"horizon",
                  {{"initial", cfg.horizon.initial},
                   {"increment", cfg.horizon.increment},
                   {"cadence", cfg.horizon.cadence}}},
                 {"unfreeze_threshold", cfg.unfreeze_threshold},
                 {"solver_step", cfg.solver_step},
                 {"grad_clip", cfg.grad_clip}}}};
  std::vector<fs::path> inputs = {network_path, data_path};
  if (!config_path.empty()) inputs.push_back(config_path);
  write_manifest(dir, "train", argv, opts, inputs);

  std::cout << "trained " << cfg.epochs << " epochs; final total MSE "
            << result.metrics.total_mse << " Pa^2";
  if (result.metrics.unfreeze_epoch >= 0)
    std::cout << "; derivative ANN unlocked at epoch "
              << result.metrics.unfreeze_epoch;
  if (result.metrics.diverged) std::cout << "; DIVERGED (best kept)";
  std::cout << "\ncheckpoint: " << (dir / "checkpoint.json").string() << "\n";
  return 0;
}

int cmd_eval(const std::vector<std::string>& argv,
             const std::string& checkpoint_path,
             const std::vector<std::string>& data_paths,
             const std::string& network_override, double bpm, double rate,
             const std::string& out_dir) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  const std::string net_path =
      network_override.empty() ? ck.network_file : network_override;
  ArterialNetwork net = load_network(net_path);

  auto eval_one = [&](const std::string& data_path) {
    HybridModel m = rebuild_hybrid(ck, net); // independent instance per worker
    Dataset raw = read_waveform_csv(data_path);
    raw.patient.heart_rate = bpm;
    Dataset data = build_dataset(raw, bpm, rate);
    return evaluate(m, data);
  };

  std::vector<Metrics> results(data_paths.size());
  const int cap = worker_cap();
  if (data_paths.size() > 1 && cap > 1) {
    std::vector<std::future<Metrics>> futs;
    for (const auto& p : data_paths)
      futs.push_back(std::async(std::launch::async, eval_one, p));
    for (size_t i = 0; i < futs.size(); ++i) results[i] = futs[i].get();
  } else {
    for (size_t i = 0; i < data_paths.size(); ++i)
      results[i] = eval_one(data_paths[i]);
  }

  const fs::path dir = out_dir.empty() ? "." : out_dir;
  fs::create_directories(dir);
  json report = json::array();
  for (size_t i = 0; i < data_paths.size(); ++i) {
    const auto& met = results[i];
    json per_seg = json::object();
    for (int c = 0; c < met.per_segment_mse.size(); ++c)
      per_seg[net.observed_segments[c]] = met.per_segment_mse[c];
    report.push_back({{"data", data_paths[i]},
                      {"per_segment_mse", per_seg},
                      {"total_mse", met.total_mse},
                      {"seconds_per_pulse", met.seconds_per_pulse}});
    std::cout << data_paths[i] << ": total MSE " << met.total_mse << " Pa^2\n";
    for (int c = 0; c < met.per_segment_mse.size(); ++c)
      std::cout << "  " << net.observed_segments[c] << ": "
                << met.per_segment_mse[c] << " Pa^2\n";
  }
  {
    std::ofstream f(dir / "eval.json", std::ios::binary);
    f << report.dump(1) << '\n';
  }

  json opts = {{"checkpoint", checkpoint_path}, {"network", net_path},
               {"data", data_paths},            {"bpm", bpm},
               {"rate", rate}};
  std::vector<fs::path> inputs = {checkpoint_path, net_path};
  for (const auto& p : data_paths) inputs.emplace_back(p);
  write_manifest(dir, "eval", argv, opts, inputs);
  return 0;
}

int cmd_bench(const std::vector<std::string>& argv,
              const std::string& network_path, int reps, double cycles,
              double rate, std::uint64_t seed, const std::string& out_dir) {
  ArterialNetwork net = load_network(network_path);
  HeartProfile heart;
  auto reference =
      build_model(net, CardioVariant::reference_elastic, net.fluid, heart);

  auto make_hybrid = [&](CardioVariant v) {
    auto inner = build_model(net, v, net.fluid, heart);
    const auto& part = inner->description().partition;
    HybridTopology topo = build_topology(
        part.n_wk, static_cast<int>(net.observed_segments.size()),
        v == CardioVariant::simple_LC ? PlaceholderKind::LC
                                      : PlaceholderKind::C);
    ParameterVector params = init_params(topo, seed);
    ScalerSet scalers;
    scalers.state.shift = Vec::Zero(topo.n_art());
    scalers.state.scale = Vec::Ones(topo.n_art());
    scalers.state.degenerate.assign(topo.n_art(), 0);
    scalers.deriv = scalers.state;
    return HybridModel(topo, std::move(params), std::move(scalers),
                       std::move(inner));
  };

  HybridModel hc = make_hybrid(CardioVariant::simple_C);
  HybridModel hlc = make_hybrid(CardioVariant::simple_LC);
  BenchReport report = benchmark(
      *reference, {{"hybrid_C", &hc}, {"hybrid_LC", &hlc}}, cycles, rate, reps);

  json j;
  j["repetitions"] = reps;
  j["cycles"] = cycles;
  json entries = json::array();
  for (const auto& e : report.entries) {
    entries.push_back({{"name", e.name},
                       {"seconds_per_pulse", e.seconds_per_pulse},
                       {"median", e.median}});
    std::cout << e.name << ": median " << e.median << " s per pulse wave\n";
  }
  j["entries"] = entries;
  j["speedup_reference_over_hybrid"] = report.speedup;
  std::cout << "speedup reference/hybrid_C: " << report.speedup << "x\n";

  const fs::path dir = out_dir.empty() ? "." : out_dir;
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "bench.json", std::ios::binary);
    f << j.dump(1) << '\n';
  }
  json opts = {{"network", network_path}, {"repetitions", reps},
               {"cycles", cycles},        {"rate", rate},
               {"seed", seed}};
  write_manifest(dir, "bench", argv, opts, {network_path});
  return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"NeuralME: hybrid modeling of the arterial windkessel network"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand(
      "generate", "Simulate the elastic reference model and export waveforms");
  std::string gen_network, gen_out, gen_out_dir, gen_label = "patient1";
  HeartFlags gen_heart;
  int gen_cycles = 3;
  double gen_rate = 40.0;
  gen->add_option("--network", gen_network, "Network file")->required();
  gen_heart.attach(gen);
  gen->add_option("--cycles", gen_cycles, "Number of cardiac cycles");
  gen->add_option("--rate", gen_rate, "Sampling rate, Hz");
  gen->add_option("-o,--output", gen_out, "Output waveform CSV")->required();
  gen->add_option("--out-dir", gen_out_dir, "Directory for the run manifest");
  gen->add_option("--label", gen_label, "Patient label");

  // simulate
  auto* sim = app.add_subcommand("simulate",
                                 "Simulate a model variant and export waveforms");
  std::string sim_network, sim_model = "c", sim_checkpoint, sim_out, sim_out_dir;
  HeartFlags sim_heart;
  int sim_cycles = 3;
  double sim_rate = 40.0, sim_step = 0.0;
  sim->add_option("--network", sim_network, "Network file");
  sim->add_option("--model", sim_model, "c | lc | reference | hybrid");
  sim->add_option("--checkpoint", sim_checkpoint, "Checkpoint (hybrid model)");
  sim_heart.attach(sim);
  sim->add_option("--cycles", sim_cycles, "Number of cardiac cycles");
  sim->add_option("--rate", sim_rate, "Sampling rate, Hz");
  sim->add_option("--step", sim_step, "Fixed rk4 step, s (0 = rate/4 rule)");
  sim->add_option("-o,--output", sim_out, "Output waveform CSV")->required();
  sim->add_option("--out-dir", sim_out_dir, "Directory for the run manifest");

  // train
  auto* tr = app.add_subcommand("train", "Train a NeuralFMU on waveform data");
  std::string tr_network, tr_variant = "c", tr_data, tr_config, tr_out_dir = ".";
  HeartFlags tr_heart;
  std::uint64_t tr_seed = 0;
  int tr_hidden = 30;
  bool tr_no_skip = false;
  double tr_rate = 40.0;
  tr->add_option("--network", tr_network, "Network file")->required();
  tr->add_option("--variant", tr_variant, "c | lc")->required();
  tr->add_option("--data", tr_data, "Training waveform CSV")->required();
  tr->add_option("--config", tr_config, "Training config JSON");
  tr->add_option("--seed", tr_seed, "RNG seed (overrides config)");
  tr->add_option("--hidden", tr_hidden, "Hidden width of the derivative ANN");
  tr->add_flag("--no-skip", tr_no_skip,
               "Disable the residual connection (plain stacked form)");
  tr_heart.attach(tr);
  tr->add_option("--rate", tr_rate, "Training sample rate, Hz");
  tr->add_option("--out-dir", tr_out_dir, "Output directory");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint against data");
  std::string ev_checkpoint, ev_network, ev_out_dir = ".";
  std::vector<std::string> ev_data;
  double ev_bpm = 73.0, ev_rate = 40.0;
  ev->add_option("--checkpoint", ev_checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "Waveform CSV (repeatable)")->required();
  ev->add_option("--network", ev_network, "Network override");
  ev->add_option("--bpm", ev_bpm, "Heart rate of the evaluation data");
  ev->add_option("--rate", ev_rate, "Evaluation sample rate, Hz");
  ev->add_option("--out-dir", ev_out_dir, "Output directory");

  // bench
  auto* be = app.add_subcommand(
      "bench", "Time the reference model against the hybrids");
  std::string be_network, be_out_dir = ".";
  int be_reps = 9;
  double be_cycles = 3.0, be_rate = 40.0;
  std::uint64_t be_seed = 1;
  be->add_option("--network", be_network, "Network file")->required();
  be->add_option("--reps", be_reps, "Timed repetitions per model");
  be->add_option("--cycles", be_cycles, "Pulse waves per repetition");
  be->add_option("--rate", be_rate, "Output sampling rate, Hz");
  be->add_option("--seed", be_seed, "Hybrid init seed");
  be->add_option("--out-dir", be_out_dir, "Output directory");

  std::vector<std::string> argv_copy = args;
  try {
    // CLI11 parses reversed argv without the program name
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) { // --help / --version
      (void)app.exit(e);
      return 0;
    }
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed())
      return cmd_generate(argv_copy, *gen, gen_network, gen_heart, gen_cycles,
                          gen_rate, gen_out, gen_out_dir, gen_label);
    if (sim->parsed())
      return cmd_simulate(argv_copy, sim_network, sim_model, sim_checkpoint,
                          sim_heart, sim_cycles, sim_rate, sim_step, sim_out,
                          sim_out_dir);
    if (tr->parsed())
      return cmd_train(argv_copy, tr_network, tr_variant, tr_data, tr_config,
                       tr_seed, tr_hidden, tr_no_skip, tr_heart, tr_rate,
                       tr_out_dir);
    if (ev->parsed())
      return cmd_eval(argv_copy, ev_checkpoint, ev_data, ev_network, ev_bpm,
                      ev_rate, ev_out_dir);
    if (be->parsed())
      return cmd_bench(argv_copy, be_network, be_reps, be_cycles, be_rate,
                       be_seed, be_out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  std::cerr << "usage error: no subcommand\n";
  return 1;
}

} // namespace neuralme
