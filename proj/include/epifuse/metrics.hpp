// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "epifuse/geometry.hpp"

namespace epifuse {

// Percentage of joints with ||pred - gt|| strictly below
// t * (0.025 * bbox_width). Throws EmptySet on empty input.
double pckh(const std::vector<Vec2>& pred, const std::vector<Vec2>& gt,
            double bbox_width, double t = 0.5);

// Mean per-joint position error in millimetres, protocol 1 (no alignment).
// Inputs are in metres.
double mpjpe(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt);

struct BucketStat {
  double mean = 0.0;
  std::size_t count = 0;
};

// Buckets per-joint errors by the number of views in which the joint is
// occluded; flags are shaped [view][joint].
std::map<int, BucketStat> group_by_occluded_views(
    const std::vector<double>& per_joint_errors,
    const std::vector<std::vector<std::uint8_t>>& flags);

// Aggregated evaluation of one method over a dataset.
struct EvalReport {
  std::string method;
  std::vector<std::string> joint_types;

  std::vector<double> pckh_by_type;           // percent, all joints
  double pckh_mean = 0.0;
  std::vector<double> pckh_occluded_by_type;  // occluded (view, joint) entries only
  double pckh_occluded_mean = 0.0;

  std::vector<double> mpjpe_by_type_mm;
  double mpjpe_mean_mm = 0.0;
  std::vector<double> mpjpe_occluded_by_type_mm;  // joints occluded in >= 1 view
  double mpjpe_occluded_mean_mm = 0.0;

  std::vector<BucketStat> buckets;  // index = number of occluded views, 0..V

  std::string to_json() const;
  // one row per joint type (plus a "mean" row): metric columns side by side
  std::string to_csv() const;
};

}  // namespace epifuse
