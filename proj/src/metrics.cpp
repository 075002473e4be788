// SPDX-License-Identifier: Apache-2.0
#include "epifuse/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace epifuse {

double pckh(const std::vector<Vec2>& pred, const std::vector<Vec2>& gt,
            double bbox_width, double t) {
  if (pred.empty() || pred.size() != gt.size()) throw EmptySet();
  if (!(bbox_width > 0.0)) throw Error("bbox_width must be positive");
  const double threshold = t * (0.025 * bbox_width);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if ((pred[i] - gt[i]).norm() < threshold) ++correct;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(pred.size());
}

double mpjpe(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
  if (pred.empty() || pred.size() != gt.size()) throw EmptySet();
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += (pred[i] - gt[i]).norm();
  return 1000.0 * sum / static_cast<double>(pred.size());
}

std::map<int, BucketStat> group_by_occluded_views(
    const std::vector<double>& per_joint_errors,
    const std::vector<std::vector<std::uint8_t>>& flags) {
  std::map<int, std::pair<double, std::size_t>> sums;
  for (std::size_t j = 0; j < per_joint_errors.size(); ++j) {
    int occluded = 0;
    for (const auto& view : flags) occluded += view.at(j) ? 1 : 0;
    auto& bucket = sums[occluded];
    bucket.first += per_joint_errors[j];
    bucket.second += 1;
  }
  std::map<int, BucketStat> out;
  for (const auto& [count, sum] : sums)
    out[count] = BucketStat{sum.first / static_cast<double>(sum.second), sum.second};
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::json doc;
  doc["method"] = method;
  doc["joint_types"] = joint_types;
  doc["pckh"] = {{"by_type", pckh_by_type}, {"mean", pckh_mean}};
  doc["pckh_occluded"] = {{"by_type", pckh_occluded_by_type}, {"mean", pckh_occluded_mean}};
  doc["mpjpe_mm"] = {{"by_type", mpjpe_by_type_mm}, {"mean", mpjpe_mean_mm}};
  doc["mpjpe_occluded_mm"] = {{"by_type", mpjpe_occluded_by_type_mm},
                              {"mean", mpjpe_occluded_mean_mm}};
  nlohmann::json buckets_json = nlohmann::json::array();
  for (std::size_t k = 0; k < buckets.size(); ++k)
    buckets_json.push_back({{"occluded_views", k},
                            {"mean_mpjpe_mm", buckets[k].mean},
                            {"count", buckets[k].count}});
  doc["buckets"] = buckets_json;
  return doc.dump(2);
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "method,joint_type,pckh,pckh_occluded,mpjpe_mm,mpjpe_occluded_mm\n";
  for (std::size_t i = 0; i < joint_types.size(); ++i) {
    out << method << ',' << joint_types[i] << ',' << fmt(pckh_by_type[i]) << ','
        << fmt(pckh_occluded_by_type[i]) << ',' << fmt(mpjpe_by_type_mm[i]) << ','
        << fmt(mpjpe_occluded_by_type_mm[i]) << '\n';
  }
  out << method << ",mean," << fmt(pckh_mean) << ',' << fmt(pckh_occluded_mean) << ','
      << fmt(mpjpe_mean_mm) << ',' << fmt(mpjpe_occluded_mean_mm) << '\n';
  return out.str();
}

}  // namespace epifuse
