// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "epifuse/commands.hpp"

namespace {

epifuse::ExperimentConfig resolve_config(const std::optional<std::string>& config_path,
                                         const std::optional<std::uint64_t>& seed,
                                         const std::optional<std::string>& methods_csv) {
  epifuse::ExperimentConfig config =
      config_path ? epifuse::load_config(*config_path) : epifuse::parse_config("{}");
  if (seed) config.dataset.seed = *seed;
  if (methods_csv) {
    config.methods.clear();
    std::string csv = *methods_csv;
    std::size_t start = 0;
    while (start <= csv.size()) {
      std::size_t comma = csv.find(',', start);
      std::string token = csv.substr(start, comma == std::string::npos ? csv.size() - start
                                                                       : comma - start);
      if (!token.empty()) config.methods.push_back(token);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    config.validate();
  }
  return config;
}

int fail(const std::string& kind, const std::string& detail) {
  nlohmann::json err{{"error", kind}, {"detail", detail}};
  std::fprintf(stderr, "%s\n", err.dump().c_str());
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multiview heatmap fusion and robust triangulation toolkit"};
  app.require_subcommand(1);

  std::optional<std::string> config_path, dataset_dir, checkpoint, methods_csv;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file (defaults used when omitted)");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "override dataset seed");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate and write a dataset");
  add_common(gen);
  CLI::App* train = app.add_subcommand("train", "train the fusion weight network");
  add_common(train);
  train->add_option("--dataset", dataset_dir, "read samples from a dataset directory");
  CLI::App* eval = app.add_subcommand("eval", "evaluate methods on the validation split");
  add_common(eval);
  eval->add_option("--dataset", dataset_dir, "read samples from a dataset directory");
  eval->add_option("--checkpoint", checkpoint, "checkpoint.json for adafuse");
  eval->add_option("--methods", methods_csv, "comma-separated method list");
  CLI::App* compare = app.add_subcommand("compare", "train + evaluate all configured methods");
  add_common(compare);
  compare->add_option("--methods", methods_csv, "comma-separated method list");

  CLI11_PARSE(app, argc, argv);

  try {
    epifuse::ExperimentConfig config = resolve_config(config_path, seed, methods_csv);
    if (gen->parsed()) epifuse::cmd_gen_data(config, out_dir);
    if (train->parsed()) epifuse::cmd_train(config, dataset_dir, out_dir);
    if (eval->parsed()) epifuse::cmd_eval(config, dataset_dir, checkpoint, out_dir);
    if (compare->parsed()) epifuse::cmd_compare(config, out_dir);
  } catch (const epifuse::ConfigInvalid& e) {
    return fail("ConfigInvalid", e.what());
  } catch (const epifuse::DatasetMissing& e) {
    return fail("DatasetMissing", e.what());
  } catch (const epifuse::CheckpointMissing& e) {
    return fail("CheckpointMissing", e.what());
  } catch (const epifuse::Error& e) {
    return fail("Error", e.what());
  } catch (const std::exception& e) {
    return fail("Unexpected", e.what());
  }
  return 0;
}
