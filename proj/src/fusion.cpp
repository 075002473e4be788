// SPDX-License-Identifier: Apache-2.0
#include "epifuse/fusion.hpp"

#include <algorithm>
#include <cmath>

namespace epifuse {

void ViewStack::validate() const {
  if (views.size() != cameras.size()) throw Error("views/cameras count mismatch");
  if (views.size() < 2) throw InsufficientViews();
  int joints = static_cast<int>(views[0].size());
  int w = joints > 0 ? views[0][0].width : 0;
  int h = joints > 0 ? views[0][0].height : 0;
  for (const auto& view : views) {
    if (static_cast<int>(view.size()) != joints) throw Error("joint count mismatch");
    for (const auto& grid : view)
      if (grid.width != w || grid.height != h) throw Error("heatmap resolution mismatch");
  }
}

LineTables precompute_line_tables(const std::vector<CameraModel>& cameras,
                                  int width, int height, bool allow_degenerate) {
  const int n = static_cast<int>(cameras.size());
  LineTables tables;
  tables.view_count = n;
  tables.width = width;
  tables.height = height;
  tables.fundamental.assign(static_cast<std::size_t>(n) * n, Mat3::Zero());
  tables.valid.assign(static_cast<std::size_t>(n) * n, 0);
  tables.pairs.resize(static_cast<std::size_t>(n) * n);

  std::vector<CameraModel> scaled(cameras.begin(), cameras.end());
  for (auto& cam : scaled)
    if (cam.width != width || cam.height != height) cam = cam.scaled_to(width, height);

  for (int v = 0; v < n; ++v) {
    for (int u = v + 1; u < n; ++u) {
      Mat3 fwd;
      try {
        fwd = fundamental_from_projections(scaled[v], scaled[u]).m;
      } catch (const DegenerateBaseline&) {
        if (!allow_degenerate) throw;
        continue;
      }
      tables.fundamental[static_cast<std::size_t>(v) * n + u] = fwd;
      tables.fundamental[static_cast<std::size_t>(u) * n + v] =
          fix_fundamental_sign(fwd.transpose());
      tables.valid[static_cast<std::size_t>(v) * n + u] = 1;
      tables.valid[static_cast<std::size_t>(u) * n + v] = 1;
    }
  }

  const int pixels = width * height;
  std::vector<std::int32_t> raster;
  for (int v = 0; v < n; ++v) {
    for (int u = 0; u < n; ++u) {
      if (u == v || !tables.pair_valid(v, u)) continue;
      auto& pt = tables.pairs[static_cast<std::size_t>(v) * n + u];
      pt.offsets.resize(pixels + 1);
      pt.offsets[0] = 0;
      pt.indices.reserve(static_cast<std::size_t>(pixels) * std::max(width, height) / 2);
      FundamentalMatrix f{tables.f(v, u)};
      for (int p = 0; p < pixels; ++p) {
        Vec2 x(p % width, p / width);
        try {
          EpipolarLine line = epipolar_line(f, x);
          rasterize_line(line, width, height, raster);
          pt.indices.insert(pt.indices.end(), raster.begin(), raster.end());
        } catch (const DegenerateLine&) {
          // pixel at the epipole: no line, contributes nothing
        }
        pt.offsets[p + 1] = static_cast<std::int32_t>(pt.indices.size());
      }
      pt.indices.shrink_to_fit();
    }
  }
  return tables;
}

namespace {

constexpr int pad_to_8(int j) { return (j + 7) & ~7; }

// view heatmaps repacked as [pixel][joint padded]
std::vector<float> pack_view(const std::vector<HeatmapGrid>& view, int jp) {
  const int joints = static_cast<int>(view.size());
  const int pixels = view[0].width * view[0].height;
  std::vector<float> packed(static_cast<std::size_t>(pixels) * jp, 0.0f);
  for (int j = 0; j < joints; ++j) {
    const float* src = view[j].values.data();
    float* dst = packed.data() + j;
    for (int p = 0; p < pixels; ++p) dst[static_cast<std::size_t>(p) * jp] = src[p];
  }
  return packed;
}

void check_fusable(const ViewStack& stack, const LineTables& tables) {
  stack.validate();
  if (tables.view_count != stack.view_count())
    throw Error("line tables built for a different view count");
  if (stack.joint_count() == 0) throw Error("empty stack");
  if (stack.views[0][0].width != tables.width || stack.views[0][0].height != tables.height)
    throw Error("line tables built for a different resolution");
}

}  // namespace

LineMaxBlock line_max_block(const std::vector<std::vector<HeatmapGrid>>& views,
                            const LineTables& tables, int v) {
  const int n = static_cast<int>(views.size());
  const int joints = views.empty() ? 0 : static_cast<int>(views[0].size());
  const int jp = pad_to_8(joints);
  const int pixels = tables.width * tables.height;

  LineMaxBlock block;
  block.joints = joints;
  block.joints_padded = jp;
  block.pixels = pixels;
  for (int u = 0; u < n; ++u)
    if (u != v && tables.pair_valid(v, u)) block.contributors.push_back(u);
  block.values.assign(static_cast<std::size_t>(block.contributors.size()) * pixels * jp, 0.0f);

  std::vector<float> acc(jp);
  for (std::size_t ci = 0; ci < block.contributors.size(); ++ci) {
    const int u = block.contributors[ci];
    const std::vector<float> packed = pack_view(views[u], jp);
    const auto& pt = tables.pair(v, u);
    float* out = block.values.data() + ci * static_cast<std::size_t>(pixels) * jp;
    for (int p = 0; p < pixels; ++p) {
      std::fill(acc.begin(), acc.end(), 0.0f);
      const std::int32_t* idx = pt.indices.data() + pt.offsets[p];
      const std::int32_t* end = pt.indices.data() + pt.offsets[p + 1];
      for (; idx != end; ++idx) {
        const float* src = packed.data() + static_cast<std::size_t>(*idx) * jp;
        for (int k = 0; k < jp; ++k) acc[k] = std::max(acc[k], src[k]);
      }
      std::copy(acc.begin(), acc.end(), out + static_cast<std::size_t>(p) * jp);
    }
  }
  return block;
}

std::vector<HeatmapGrid> fuse_view(const ViewStack& stack, int v,
                                   const LineMaxBlock& block,
                                   const std::vector<double>& own_w,
                                   const std::vector<std::vector<double>>& contrib_w) {
  const int joints = stack.joint_count();
  const int jp = block.joints_padded;
  const int w = stack.views[v][0].width;
  const int h = stack.views[v][0].height;
  const int pixels = w * h;

  std::vector<HeatmapGrid> fused(joints, HeatmapGrid(w, h));
  std::vector<double> acc(joints);
  for (int p = 0; p < pixels; ++p) {
    for (int j = 0; j < joints; ++j)
      acc[j] = own_w[j] * static_cast<double>(stack.views[v][j].values[p]);
    for (std::size_t ci = 0; ci < block.contributors.size(); ++ci) {
      const float* m = block.values.data() +
                       (ci * static_cast<std::size_t>(pixels) + p) * jp;
      const std::vector<double>& wj = contrib_w[ci];
      for (int j = 0; j < joints; ++j) acc[j] += wj[j] * static_cast<double>(m[j]);
    }
    for (int j = 0; j < joints; ++j) fused[j].values[p] = static_cast<float>(acc[j]);
  }
  return fused;
}

ViewStack heuristic_fuse(const ViewStack& stack, double lambda, const LineTables& tables) {
  if (lambda < 0.0 || lambda > 1.0) throw Error("lambda must lie in [0,1]");
  check_fusable(stack, tables);
  const int n = stack.view_count();
  const int joints = stack.joint_count();

  ViewStack out;
  out.cameras = stack.cameras;
  out.views.resize(n);
  for (int v = 0; v < n; ++v) {
    LineMaxBlock block = line_max_block(stack, tables, v);
    const double contributing = static_cast<double>(block.contributors.size());
    const double share = contributing > 0 ? (1.0 - lambda) / contributing : 0.0;
    std::vector<double> own_w(joints, lambda);
    std::vector<std::vector<double>> contrib_w(block.contributors.size(),
                                               std::vector<double>(joints, share));
    out.views[v] = fuse_view(stack, v, block, own_w, contrib_w);
  }
  return out;
}

std::vector<std::vector<double>> normalize_fusion_weights(const FusionWeights& weights,
                                                          int views, int joints) {
  if (static_cast<int>(weights.omega.size()) != views) throw Error("weight shape mismatch");
  for (const auto& row : weights.omega)
    if (static_cast<int>(row.size()) != joints) throw Error("weight shape mismatch");
  std::vector<std::vector<double>> norm(views, std::vector<double>(joints));
  for (int j = 0; j < joints; ++j) {
    double sum = 0.0;
    for (int v = 0; v < views; ++v) {
      double w = weights.omega[v][j];
      if (!(w >= 0.0) || !std::isfinite(w)) throw Error("weights must be finite and >= 0");
      sum += w;
    }
    if (sum < 1e-12) throw AllZeroWeights();
    for (int v = 0; v < views; ++v) norm[v][j] = weights.omega[v][j] / sum;
  }
  return norm;
}

ViewStack adaptive_fuse(const ViewStack& stack, const FusionWeights& weights,
                        const LineTables& tables) {
  check_fusable(stack, tables);
  const int n = stack.view_count();
  const int joints = stack.joint_count();
  std::vector<std::vector<double>> norm = normalize_fusion_weights(weights, n, joints);

  ViewStack out;
  out.cameras = stack.cameras;
  out.views.resize(n);
  for (int v = 0; v < n; ++v) {
    LineMaxBlock block = line_max_block(stack, tables, v);
    std::vector<std::vector<double>> contrib_w;
    contrib_w.reserve(block.contributors.size());
    for (int u : block.contributors) contrib_w.push_back(norm[u]);
    out.views[v] = fuse_view(stack, v, block, norm[v], contrib_w);
  }
  return out;
}

ViewStack suppress(const ViewStack& stack, double temperature) {
  ViewStack out;
  out.cameras = stack.cameras;
  out.views.resize(stack.views.size());
  for (std::size_t v = 0; v < stack.views.size(); ++v) {
    out.views[v].reserve(stack.views[v].size());
    for (const auto& grid : stack.views[v])
      out.views[v].push_back(spatial_softmax(grid, temperature));
  }
  return out;
}

}  // namespace epifuse
