// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "epifuse/geometry.hpp"
#include "epifuse/heatmap.hpp"

namespace epifuse {

// Per-view, per-joint heatmaps plus the matching cameras.
struct ViewStack {
  std::vector<std::vector<HeatmapGrid>> views;  // [view][joint]
  std::vector<CameraModel> cameras;

  int view_count() const { return static_cast<int>(views.size()); }
  int joint_count() const { return views.empty() ? 0 : static_cast<int>(views[0].size()); }
  void validate() const;
};

// Per-view, per-joint fusion weights (omega in the adaptive rule).
struct FusionWeights {
  std::vector<std::vector<double>> omega;  // [view][joint]
};

// Rasterized epipolar-line lookup tables between every ordered view pair at
// the heatmap resolution, plus the pairwise fundamental matrices.
// For the reverse direction of a pair the transpose of the forward matrix is
// reused (renormalized), so pair geometry is exactly symmetric.
struct LineTables {
  int view_count = 0;
  int width = 0;
  int height = 0;

  struct PairTable {
    std::vector<std::int32_t> offsets;  // size pixels+1 (CSR)
    std::vector<std::int32_t> indices;  // pixel indices in the target view
  };

  std::vector<Mat3> fundamental;     // (v,u) at v*views+u; x_u^T F x_v = 0
  std::vector<std::uint8_t> valid;   // 0 when the pair baseline is degenerate
  std::vector<PairTable> pairs;

  bool pair_valid(int v, int u) const { return valid[static_cast<std::size_t>(v) * view_count + u] != 0; }
  const Mat3& f(int v, int u) const { return fundamental[static_cast<std::size_t>(v) * view_count + u]; }
  const PairTable& pair(int v, int u) const { return pairs[static_cast<std::size_t>(v) * view_count + u]; }
};

// Builds the tables; throws DegenerateBaseline unless allow_degenerate is
// set, in which case degenerate pairs are marked invalid and fusion drops
// them from the contributing sum.
LineTables precompute_line_tables(const std::vector<CameraModel>& cameras,
                                  int width, int height,
                                  bool allow_degenerate = false);

// Maximum response along the epipolar line of every pixel of view v, for
// every contributing view and joint. Layout: [contributor][pixel][joint
// padded to a multiple of 8].
struct LineMaxBlock {
  std::vector<int> contributors;  // ascending view indices != v with valid F
  int joints = 0;
  int joints_padded = 0;
  int pixels = 0;
  std::vector<float> values;

  float at(int contributor_slot, int pixel, int joint) const {
    return values[(static_cast<std::size_t>(contributor_slot) * pixels + pixel) * joints_padded + joint];
  }
};

LineMaxBlock line_max_block(const std::vector<std::vector<HeatmapGrid>>& views,
                            const LineTables& tables, int v);
inline LineMaxBlock line_max_block(const ViewStack& stack, const LineTables& tables, int v) {
  return line_max_block(stack.views, tables, v);
}

// fused_v[j][x] = own_w[j] * H_v[j][x] + sum_ci contrib_w[ci][j] * block[ci][x][j].
// Shared by both fusion rules; lets callers reuse one block for several
// weightings of the same stack.
std::vector<HeatmapGrid> fuse_view(const ViewStack& stack, int v,
                                   const LineMaxBlock& block,
                                   const std::vector<double>& own_w,
                                   const std::vector<std::vector<double>>& contrib_w);

// H^v(x) <- lambda * H^v(x) + (1-lambda)/N * sum_u max over epipolar line.
ViewStack heuristic_fuse(const ViewStack& stack, double lambda, const LineTables& tables);

// Normalization used by the adaptive rule: weights sum to one over views for
// each joint. Throws AllZeroWeights when a joint's weights sum below 1e-12.
std::vector<std::vector<double>> normalize_fusion_weights(const FusionWeights& weights,
                                                          int views, int joints);

// H^v(x) <- w_v * H^v(x) + sum_{u != v} w_u * max over epipolar line, with
// weights first normalized per joint to sum to one over views.
ViewStack adaptive_fuse(const ViewStack& stack, const FusionWeights& weights,
                        const LineTables& tables);

// spatial_softmax applied to every fused heatmap.
ViewStack suppress(const ViewStack& stack, double temperature);

}  // namespace epifuse
