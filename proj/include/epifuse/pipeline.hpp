// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "epifuse/fusion.hpp"
#include "epifuse/metrics.hpp"
#include "epifuse/synthdata.hpp"
#include "epifuse/triangulation.hpp"
#include "epifuse/weightnet.hpp"

namespace epifuse {

enum class Method { NoFuse, Heuristic, Score, Ransac, AdaFuse };

std::string method_name(Method m);
std::optional<Method> method_from_name(const std::string& name);

struct PipelineOptions {
  double lambda = 0.5;
  double ransac_threshold_px_at_256 = 10.0;
  int ransac_min_inliers = 2;
};

// 2D poses are decoded by hard argmax of the (fused) heatmaps; the spatial
// SoftMax suppression step preserves the argmax, so the decode operates on
// the fused maps directly. 3D poses come from DLT over all views, except the
// RANSAC baseline which applies consensus triangulation to the unfused poses.
struct SamplePredictions {
  std::vector<std::vector<Vec2>> pred2d;  // [view][joint], heatmap pixels
  std::vector<Vec3> pred3d;               // [joint], metres
};

SamplePredictions run_method_on_sample(const MultiviewSample& sample,
                                       const std::vector<CameraModel>& rig,
                                       const LineTables& tables, Method method,
                                       const PipelineOptions& options,
                                       const WeightNetParams* adafuse_params);

// Evaluates every requested method over the provider; deterministic and
// independent of the thread count.
std::map<Method, EvalReport> evaluate_methods(const SampleProvider& samples,
                                              const std::vector<CameraModel>& rig,
                                              const LineTables& tables,
                                              const std::vector<Method>& methods,
                                              const PipelineOptions& options,
                                              const WeightNetParams* adafuse_params);

}  // namespace epifuse
