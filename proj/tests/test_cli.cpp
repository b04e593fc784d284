#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "neuralme/cli.hpp"
#include "neuralme/dataset.hpp"
#include "neuralme/fsutil.hpp"
#include "support.hpp"

using namespace neuralme;
using namespace testsupport;

namespace {

std::string desk_path() { return (data_dir() / "desk7.net").string(); }

int cli(std::initializer_list<std::string> args) {
  return run_cli(std::vector<std::string>(args));
}

} // namespace

TEST_CASE("cli: exit codes for usage and runtime failures") {
  CHECK(cli({"generate"}) == 1);              // missing required flags
  CHECK(cli({"nonsense"}) == 1);              // unknown subcommand
  CHECK(cli({}) == 1);                        // no subcommand
  TempDir dir("cli_err");
  CHECK(cli({"generate", "--network", "/nonexistent.net", "-o",
             (dir / "x.csv").string()}) == 2); // file error at runtime
}

TEST_CASE("cli: generate writes the CSV schema and a manifest") {
  TempDir dir("cli_gen");
  const auto out = dir / "p1.csv";
  CHECK(cli({"generate", "--network", desk_path(), "--bpm", "73", "--cycles",
             "3", "--rate", "40", "-o", out.string(), "--out-dir",
             dir.path().string()}) == 0);

  Dataset ds = read_waveform_csv(out);
  CHECK(ds.n_channels() == 4); // column count = observed segments
  CHECK(ds.n_samples() == 99);
  CHECK(ds.segment_ids == std::vector<std::string>{"s1", "s3", "s4", "s7"});

  std::ifstream mf(dir / "manifest.json");
  REQUIRE(mf.good());
  nlohmann::json j;
  mf >> j;
  CHECK(j["command"] == "generate");
  CHECK(j["options"].contains("rate"));
  CHECK(j["options"].contains("heart"));
  CHECK(j["inputs"].size() == 1);
  // recorded hash matches the file on disk
  for (auto& [path, hash] : j["inputs"].items())
    CHECK(hash.get<std::string>() == file_hash_hex(path));
}

TEST_CASE("cli: generate and simulate produce identical reference CSVs") {
  TempDir dir("cli_round");
  const auto a = dir / "gen.csv";
  const auto b = dir / "sim.csv";
  REQUIRE(cli({"generate", "--network", desk_path(), "--cycles", "3", "--rate",
               "40", "-o", a.string(), "--out-dir", dir.path().string()}) == 0);
  REQUIRE(cli({"simulate", "--network", desk_path(), "--model", "reference",
               "--cycles", "3", "--rate", "40", "-o", b.string(), "--out-dir",
               dir.path().string()}) == 0);
  CHECK(read_file(a) == read_file(b));
}

TEST_CASE("cli: train smoke run, then eval and hybrid simulate") {
  TempDir dir("cli_train");
  const auto data_csv = dir / "train.csv";
  REQUIRE(cli({"generate", "--network", desk_path(), "--cycles", "3", "--rate",
               "500", "-o", data_csv.string(), "--out-dir",
               dir.path().string()}) == 0);

  // a tiny config keeps the smoke run fast
  const auto cfg_path = dir / "cfg.json";
  {
    std::ofstream f(cfg_path);
    f << R"({"epochs": 6, "rng_seed": 5, "horizon": {"initial": 8, "increment": 8, "cadence": 2}})";
  }
  const auto run_dir = dir / "run";
  REQUIRE(cli({"train", "--network", desk_path(), "--variant", "c", "--data",
               data_csv.string(), "--config", cfg_path.string(), "--out-dir",
               run_dir.string()}) == 0);
  CHECK(std::filesystem::exists(run_dir / "checkpoint.json"));
  CHECK(std::filesystem::exists(run_dir / "metrics.csv"));
  CHECK(std::filesystem::exists(run_dir / "manifest.json"));

  // metrics CSV carries one row per epoch
  std::ifstream mf(run_dir / "metrics.csv");
  std::string line;
  int rows = -1;
  while (std::getline(mf, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 6);

  const auto eval_dir = dir / "eval";
  CHECK(cli({"eval", "--checkpoint", (run_dir / "checkpoint.json").string(),
             "--data", data_csv.string(), "--bpm", "73", "--out-dir",
             eval_dir.string()}) == 0);
  CHECK(std::filesystem::exists(eval_dir / "eval.json"));
  {
    std::ifstream f(eval_dir / "eval.json");
    nlohmann::json j;
    f >> j;
    REQUIRE(j.is_array());
    CHECK(j[0]["per_segment_mse"].size() == 4);
    CHECK(j[0]["total_mse"].get<double>() > 0.0);
  }

  const auto sim_csv = dir / "hybrid.csv";
  CHECK(cli({"simulate", "--model", "hybrid", "--checkpoint",
             (run_dir / "checkpoint.json").string(), "--network", desk_path(),
             "--cycles", "3", "--rate", "40", "-o", sim_csv.string(),
             "--out-dir", dir.path().string()}) == 0);
  Dataset sim = read_waveform_csv(sim_csv);
  CHECK(sim.n_channels() == 4);
}

TEST_CASE("cli: waveform csv round-trips bit-exactly") {
  TempDir dir("cli_csv");
  Rng rng(55);
  std::vector<double> times;
  Mat cols(25, 3);
  for (int k = 0; k < 25; ++k) {
    times.push_back(k / 40.0);
    for (int c = 0; c < 3; ++c) cols(k, c) = rng.uniform(1e3, 2e4);
  }
  const auto path = dir / "wave.csv";
  write_waveform_csv(path, times, cols, {"x", "y", "z"});
  Dataset back = read_waveform_csv(path);
  for (int k = 0; k < 25; ++k) {
    CHECK(back.times[k] == times[k]);
    for (int c = 0; c < 3; ++c) CHECK(back.pressures(k, c) == cols(k, c));
  }

  // a second write of the parsed data reproduces the bytes
  const auto path2 = dir / "wave2.csv";
  write_waveform_csv(path2, back.times, back.pressures, back.segment_ids);
  CHECK(read_file(path) == read_file(path2));
}
