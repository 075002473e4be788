// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include "epifuse/config.hpp"

namespace epifuse {

// Batch drivers behind the CLI subcommands. All outputs are pure functions
// of the configuration; reruns produce byte-identical files.

// Materializes the configured dataset under out_dir.
void cmd_gen_data(const ExperimentConfig& config, const std::string& out_dir);

// Trains the weight net on the train split (the leading train_fraction of
// the dataset) and writes checkpoint.json/checkpoint.bin plus
// loss_curve.csv under out_dir. Samples come from dataset_dir when given,
// otherwise they are generated on the fly from the config.
void cmd_train(const ExperimentConfig& config,
               const std::optional<std::string>& dataset_dir, const std::string& out_dir);

// Evaluates the requested methods on the validation split and writes
// report_<method>.json/.csv under out_dir. adafuse requires a checkpoint.
void cmd_eval(const ExperimentConfig& config,
              const std::optional<std::string>& dataset_dir,
              const std::optional<std::string>& checkpoint_path, const std::string& out_dir);

// gen (in memory) + train + eval for every configured method; writes the
// consolidated compare.csv, compare_buckets.csv and compare.json.
void cmd_compare(const ExperimentConfig& config, const std::string& out_dir);

}  // namespace epifuse
