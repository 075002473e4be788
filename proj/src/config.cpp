// SPDX-License-Identifier: Apache-2.0
#include "epifuse/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace epifuse {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::set<std::string>& known,
                    const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigInvalid("unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void get_if(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigInvalid(msg); };
  if (rig.cameras < 2) fail("rig.cameras must be >= 2");
  if (rig.radius_m <= 0) fail("rig.radius_m must be positive");
  if (rig.heights_m.empty()) fail("rig.heights_m must be non-empty");
  if (rig.focal_px <= 0) fail("rig.focal_px must be positive");
  if (rig.width <= 0 || rig.height <= 0) fail("rig resolution must be positive");
  if (rig.width % 8 != 0 || rig.height % 8 != 0)
    fail("rig resolution must be divisible by 8 (weight-net pooling)");
  if (heatmap.sigma_px <= 0) fail("heatmap.sigma_px must be positive");
  if (heatmap.suppress_temperature <= 0) fail("heatmap.suppress_temperature must be positive");
  if (heatmap.soft_argmax_temperature <= 0)
    fail("heatmap.soft_argmax_temperature must be positive");
  if (lambda < 0.0 || lambda > 1.0) fail("lambda must lie in [0,1]");
  try {
    corruption.validate();
  } catch (const Error& e) {
    fail(std::string("corruption: ") + e.what());
  }
  if (pose.joint_angle_rad < 0 || pose.bone_scale < 0 || pose.bone_scale > 0.25 ||
      pose.yaw_rad < 0 || pose.disc_radius_m < 0)
    fail("invalid pose limits");
  if (ransac.threshold_px_at_256 < 0) fail("ransac.threshold_px_at_256 must be >= 0");
  if (ransac.min_inliers < 2) fail("ransac.min_inliers must be >= 2");
  if (training.learning_rate < 0) fail("training.learning_rate must be >= 0");
  if (training.momentum < 0 || training.momentum >= 1) fail("training.momentum must lie in [0,1)");
  if (training.steps < 0) fail("training.steps must be >= 0");
  if (training.batch_size < 1) fail("training.batch_size must be >= 1");
  if (dataset.samples < 1) fail("dataset.samples must be >= 1");
  if (dataset.train_fraction <= 0.0 || dataset.train_fraction >= 1.0)
    fail("dataset.train_fraction must lie in (0,1)");
  if (methods.empty()) fail("methods must be non-empty");
  for (const auto& m : methods)
    if (!method_from_name(m)) fail("unknown method '" + m + "'");
}

std::vector<CameraModel> ExperimentConfig::build_cameras() const {
  return build_rig(rig.cameras, rig.radius_m, rig.heights_m, rig.width, rig.height,
                   rig.focal_px);
}

DatasetSpec ExperimentConfig::dataset_spec() const {
  DatasetSpec spec;
  spec.rig = build_cameras();
  spec.width = rig.width;
  spec.height = rig.height;
  spec.sigma = heatmap.sigma_px;
  spec.corruption = corruption;
  spec.pose_limits = pose;
  spec.base_seed = dataset.seed;
  spec.sample_count = dataset.samples;
  return spec;
}

WeightNetConfig ExperimentConfig::weightnet_config() const {
  WeightNetConfig cfg;
  cfg.width = rig.width;
  cfg.height = rig.height;
  cfg.soft_argmax_temperature = heatmap.soft_argmax_temperature;
  return cfg;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig cfg;
  cfg.learning_rate = training.learning_rate;
  cfg.momentum = training.momentum;
  cfg.steps = training.steps;
  cfg.batch_size = training.batch_size;
  cfg.seed = training.seed;
  return cfg;
}

PipelineOptions ExperimentConfig::pipeline_options() const {
  PipelineOptions opt;
  opt.lambda = lambda;
  opt.ransac_threshold_px_at_256 = ransac.threshold_px_at_256;
  opt.ransac_min_inliers = ransac.min_inliers;
  return opt;
}

std::vector<Method> ExperimentConfig::method_list() const {
  std::vector<Method> out;
  for (const auto& name : methods) out.push_back(*method_from_name(name));
  return out;
}

int ExperimentConfig::train_count() const {
  int n = static_cast<int>(std::ceil(dataset.train_fraction * dataset.samples));
  return std::min(std::max(n, 1), dataset.samples - 1);
}

ExperimentConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigInvalid(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigInvalid("config root must be an object");

  ExperimentConfig cfg;
  try {
    reject_unknown(doc, {"rig", "heatmap", "corruption", "pose", "fusion", "ransac",
                         "training", "dataset", "methods", "emit_plots"},
                   "config");
    if (doc.contains("rig")) {
      const json& j = doc.at("rig");
      reject_unknown(j, {"cameras", "radius_m", "heights_m", "focal_px", "resolution"}, "rig");
      get_if(j, "cameras", cfg.rig.cameras);
      get_if(j, "radius_m", cfg.rig.radius_m);
      get_if(j, "heights_m", cfg.rig.heights_m);
      get_if(j, "focal_px", cfg.rig.focal_px);
      if (j.contains("resolution")) {
        cfg.rig.width = j.at("resolution").at(0).get<int>();
        cfg.rig.height = j.at("resolution").at(1).get<int>();
      }
    }
    if (doc.contains("heatmap")) {
      const json& j = doc.at("heatmap");
      reject_unknown(j, {"sigma_px", "suppress_temperature", "soft_argmax_temperature"},
                     "heatmap");
      get_if(j, "sigma_px", cfg.heatmap.sigma_px);
      get_if(j, "suppress_temperature", cfg.heatmap.suppress_temperature);
      get_if(j, "soft_argmax_temperature", cfg.heatmap.soft_argmax_temperature);
    }
    if (doc.contains("corruption")) {
      const json& j = doc.at("corruption");
      reject_unknown(j,
                     {"probability", "blank_weight", "ghost_weight", "noise_weight",
                      "ghost_shift_min_px", "ghost_shift_max_px", "noise_amplitude"},
                     "corruption");
      get_if(j, "probability", cfg.corruption.probability);
      get_if(j, "blank_weight", cfg.corruption.blank_weight);
      get_if(j, "ghost_weight", cfg.corruption.ghost_weight);
      get_if(j, "noise_weight", cfg.corruption.noise_weight);
      get_if(j, "ghost_shift_min_px", cfg.corruption.ghost_shift_min_px);
      get_if(j, "ghost_shift_max_px", cfg.corruption.ghost_shift_max_px);
      get_if(j, "noise_amplitude", cfg.corruption.noise_amplitude);
    }
    if (doc.contains("pose")) {
      const json& j = doc.at("pose");
      reject_unknown(j, {"joint_angle_rad", "bone_scale", "yaw_rad", "disc_radius_m"}, "pose");
      get_if(j, "joint_angle_rad", cfg.pose.joint_angle_rad);
      get_if(j, "bone_scale", cfg.pose.bone_scale);
      get_if(j, "yaw_rad", cfg.pose.yaw_rad);
      get_if(j, "disc_radius_m", cfg.pose.disc_radius_m);
    }
    if (doc.contains("fusion")) {
      const json& j = doc.at("fusion");
      reject_unknown(j, {"lambda"}, "fusion");
      get_if(j, "lambda", cfg.lambda);
    }
    if (doc.contains("ransac")) {
      const json& j = doc.at("ransac");
      reject_unknown(j, {"threshold_px_at_256", "min_inliers"}, "ransac");
      get_if(j, "threshold_px_at_256", cfg.ransac.threshold_px_at_256);
      get_if(j, "min_inliers", cfg.ransac.min_inliers);
    }
    if (doc.contains("training")) {
      const json& j = doc.at("training");
      reject_unknown(j, {"learning_rate", "momentum", "steps", "batch_size", "seed"},
                     "training");
      get_if(j, "learning_rate", cfg.training.learning_rate);
      get_if(j, "momentum", cfg.training.momentum);
      get_if(j, "steps", cfg.training.steps);
      get_if(j, "batch_size", cfg.training.batch_size);
      get_if(j, "seed", cfg.training.seed);
    }
    if (doc.contains("dataset")) {
      const json& j = doc.at("dataset");
      reject_unknown(j, {"samples", "seed", "train_fraction"}, "dataset");
      get_if(j, "samples", cfg.dataset.samples);
      get_if(j, "seed", cfg.dataset.seed);
      get_if(j, "train_fraction", cfg.dataset.train_fraction);
    }
    get_if(doc, "methods", cfg.methods);
    get_if(doc, "emit_plots", cfg.emit_plots);
  } catch (const json::exception& e) {
    throw ConfigInvalid(std::string("malformed config value: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigInvalid("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  json doc;
  doc["rig"] = {{"cameras", c.rig.cameras},
                {"radius_m", c.rig.radius_m},
                {"heights_m", c.rig.heights_m},
                {"focal_px", c.rig.focal_px},
                {"resolution", {c.rig.width, c.rig.height}}};
  doc["heatmap"] = {{"sigma_px", c.heatmap.sigma_px},
                    {"suppress_temperature", c.heatmap.suppress_temperature},
                    {"soft_argmax_temperature", c.heatmap.soft_argmax_temperature}};
  doc["corruption"] = {{"probability", c.corruption.probability},
                       {"blank_weight", c.corruption.blank_weight},
                       {"ghost_weight", c.corruption.ghost_weight},
                       {"noise_weight", c.corruption.noise_weight},
                       {"ghost_shift_min_px", c.corruption.ghost_shift_min_px},
                       {"ghost_shift_max_px", c.corruption.ghost_shift_max_px},
                       {"noise_amplitude", c.corruption.noise_amplitude}};
  doc["pose"] = {{"joint_angle_rad", c.pose.joint_angle_rad},
                 {"bone_scale", c.pose.bone_scale},
                 {"yaw_rad", c.pose.yaw_rad},
                 {"disc_radius_m", c.pose.disc_radius_m}};
  doc["fusion"] = {{"lambda", c.lambda}};
  doc["ransac"] = {{"threshold_px_at_256", c.ransac.threshold_px_at_256},
                   {"min_inliers", c.ransac.min_inliers}};
  doc["training"] = {{"learning_rate", c.training.learning_rate},
                     {"momentum", c.training.momentum},
                     {"steps", c.training.steps},
                     {"batch_size", c.training.batch_size},
                     {"seed", c.training.seed}};
  doc["dataset"] = {{"samples", c.dataset.samples},
                    {"seed", c.dataset.seed},
                    {"train_fraction", c.dataset.train_fraction}};
  doc["methods"] = c.methods;
  doc["emit_plots"] = c.emit_plots;
  return doc.dump(2);
}

}  // namespace epifuse
