// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "epifuse/commands.hpp"

using namespace epifuse;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// small config that exercises every method quickly
const char* kSmallConfig = R"({
  "rig": {"cameras": 4, "resolution": [32, 32], "focal_px": 30.0},
  "dataset": {"samples": 24, "seed": 17},
  "training": {"steps": 6, "batch_size": 4, "learning_rate": 0.4}
})";

}  // namespace

TEST_CASE("config: defaults validate and survive a JSON round-trip") {
  ExperimentConfig config = parse_config("{}");
  CHECK_NOTHROW(config.validate());
  CHECK(config.lambda == 0.5);
  CHECK(config.rig.cameras == 8);
  CHECK(config.rig.heights_m == std::vector<double>{0.9, 2.3});
  CHECK(config.corruption.probability == 0.203);
  CHECK(config.dataset.train_fraction == 0.75);
  ExperimentConfig back = parse_config(config_to_json(config));
  CHECK(config_to_json(back) == config_to_json(config));
}

TEST_CASE("config: lambda outside [0,1] is invalid") {
  CHECK_THROWS_AS(parse_config(R"({"fusion": {"lambda": 1.2}})"), ConfigInvalid);
}

TEST_CASE("config: unknown keys are rejected") {
  CHECK_THROWS_AS(parse_config(R"({"rigg": {}})"), ConfigInvalid);
  CHECK_THROWS_AS(parse_config(R"({"rig": {"cameras": 8, "zoom": 2}})"), ConfigInvalid);
  CHECK_THROWS_AS(parse_config(R"({"methods": ["nofuse", "psf"]})"), ConfigInvalid);
  CHECK_THROWS_AS(parse_config("[1,2]"), ConfigInvalid);
  CHECK_THROWS_AS(parse_config("{"), ConfigInvalid);
}

TEST_CASE("cmd_gen_data + cmd_train + cmd_eval run end to end from a dataset dir") {
  TempDir data("epifuse_cli_data");
  TempDir train("epifuse_cli_train");
  TempDir eval("epifuse_cli_eval");
  ExperimentConfig config = parse_config(kSmallConfig);
  cmd_gen_data(config, data.path.string());
  CHECK(fs::exists(data.path / "manifest.json"));
  CHECK(fs::exists(data.path / "samples.bin"));

  cmd_train(config, data.path.string(), train.path.string());
  CHECK(fs::exists(train.path / "checkpoint.json"));
  CHECK(fs::exists(train.path / "loss_curve.csv"));

  cmd_eval(config, data.path.string(), (train.path / "checkpoint.json").string(),
           eval.path.string());
  for (const char* m : {"nofuse", "heuristic", "score", "ransac", "adafuse"}) {
    CHECK(fs::exists(eval.path / (std::string("report_") + m + ".json")));
    CHECK(fs::exists(eval.path / (std::string("report_") + m + ".csv")));
  }
}

TEST_CASE("cmd_eval without a checkpoint refuses adafuse") {
  TempDir eval("epifuse_cli_nockpt");
  ExperimentConfig config = parse_config(kSmallConfig);
  CHECK_THROWS_AS(cmd_eval(config, std::nullopt, std::nullopt, eval.path.string()),
                  CheckpointMissing);
}

TEST_CASE("cmd_eval on a missing dataset directory reports DatasetMissing") {
  TempDir eval("epifuse_cli_nodata");
  ExperimentConfig config = parse_config(kSmallConfig);
  config.methods = {"nofuse"};
  CHECK_THROWS_AS(cmd_eval(config, "/nonexistent/dataset", std::nullopt, eval.path.string()),
                  DatasetMissing);
}

TEST_CASE("streamed and dataset-backed evaluation agree byte for byte") {
  TempDir data("epifuse_cli_stream_data");
  TempDir eval_disk("epifuse_cli_eval_disk");
  TempDir eval_gen("epifuse_cli_eval_gen");
  ExperimentConfig config = parse_config(kSmallConfig);
  config.methods = {"nofuse", "heuristic"};
  cmd_gen_data(config, data.path.string());
  cmd_eval(config, data.path.string(), std::nullopt, eval_disk.path.string());
  cmd_eval(config, std::nullopt, std::nullopt, eval_gen.path.string());
  for (const char* m : {"nofuse", "heuristic"}) {
    std::string name = std::string("report_") + m + ".json";
    CHECK(read_bytes(eval_disk.path / name) == read_bytes(eval_gen.path / name));
  }
}

TEST_CASE("zero-corruption nofuse evaluation has only quantization error") {
  // higher-resolution rig so decoding quantization stays well under 5 mm
  ExperimentConfig config = parse_config(R"({
    "rig": {"cameras": 8, "resolution": [128, 128], "focal_px": 118.0},
    "corruption": {"probability": 0.0},
    "dataset": {"samples": 80, "seed": 23},
    "methods": ["nofuse"]
  })");
  TempDir eval("epifuse_cli_quant");
  cmd_eval(config, std::nullopt, std::nullopt, eval.path.string());
  std::string json = read_bytes(eval.path / "report_nofuse.json");
  auto pos = json.find("\"mpjpe_mm\"");
  REQUIRE(pos != std::string::npos);
  auto mean_pos = json.find("\"mean\"", pos);
  double mean_mm = std::strtod(json.c_str() + json.find(':', mean_pos) + 1, nullptr);
  CHECK(mean_mm > 0.0);
  CHECK(mean_mm < 5.0);
}

TEST_CASE("cmd_compare twice produces byte-identical outputs") {
  TempDir a("epifuse_cli_cmp_a");
  TempDir b("epifuse_cli_cmp_b");
  ExperimentConfig config = parse_config(kSmallConfig);
  cmd_compare(config, a.path.string());
  cmd_compare(config, b.path.string());
  for (const char* name : {"compare.csv", "compare_buckets.csv", "compare.json",
                           "loss_curve.csv"})
    CHECK(read_bytes(a.path / name) == read_bytes(b.path / name));
}

TEST_CASE("the installed binary wires the subcommands") {
  TempDir out("epifuse_cli_bin");
  fs::path config_path = out.path / "config.json";
  fs::create_directories(out.path);
  std::ofstream(config_path) << R"({
    "rig": {"cameras": 4, "resolution": [16, 16], "focal_px": 15.0},
    "dataset": {"samples": 6, "seed": 3},
    "methods": ["nofuse"]
  })";
  std::string cmd = std::string(EPIFUSE_BIN) + " eval --config " + config_path.string() +
                    " --out " + (out.path / "eval").string();
  CHECK(std::system(cmd.c_str()) == 0);
  CHECK(fs::exists(out.path / "eval" / "report_nofuse.json"));

  std::string bad = std::string(EPIFUSE_BIN) + " eval --config " + config_path.string() +
                    " --methods adafuse --out " + (out.path / "bad").string() +
                    " 2>/dev/null";
  CHECK(std::system(bad.c_str()) != 0);
}
