// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "epifuse/pipeline.hpp"
#include "epifuse/synthdata.hpp"
#include "epifuse/weightnet.hpp"

namespace epifuse {

// Experiment configuration. Defaults reproduce the headline synthetic
// experiment: 8 cameras every 45 degrees on a 2 m circle at 0.9/2.3 m,
// lambda = 0.5, PCKh t = 0.5, ~20% occluded joints.
struct RigConfig {
  int cameras = 8;
  double radius_m = 2.0;
  std::vector<double> heights_m = {0.9, 2.3};
  double focal_px = 62.0;
  int width = 64;
  int height = 64;
};

struct HeatmapConfig {
  double sigma_px = 2.0;
  double suppress_temperature = 30.0;
  double soft_argmax_temperature = 40.0;
};

struct DatasetConfig {
  int samples = 2000;
  std::uint64_t seed = 7;
  double train_fraction = 0.75;
};

struct TrainingConfig {
  double learning_rate = 0.4;
  double momentum = 0.9;
  int steps = 100;
  int batch_size = 16;
  std::uint64_t seed = 11;
};

struct RansacConfig {
  double threshold_px_at_256 = 10.0;
  int min_inliers = 2;
};

struct ExperimentConfig {
  RigConfig rig;
  HeatmapConfig heatmap;
  CorruptionSpec corruption;
  PoseLimits pose;
  double lambda = 0.5;
  RansacConfig ransac;
  TrainingConfig training;
  DatasetConfig dataset;
  std::vector<std::string> methods = {"nofuse", "heuristic", "score", "ransac", "adafuse"};
  bool emit_plots = false;

  void validate() const;  // throws ConfigInvalid

  std::vector<CameraModel> build_cameras() const;
  DatasetSpec dataset_spec() const;
  WeightNetConfig weightnet_config() const;
  TrainConfig train_config() const;
  PipelineOptions pipeline_options() const;
  std::vector<Method> method_list() const;
  int train_count() const;  // first train_fraction of the samples
};

// Parses JSON, applying defaults for missing keys and rejecting unknown ones.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& config);

}  // namespace epifuse
