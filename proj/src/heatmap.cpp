// SPDX-License-Identifier: Apache-2.0
#include "epifuse/heatmap.hpp"

#include <algorithm>
#include <cmath>

namespace epifuse {

HeatmapGrid render_gaussian(const Vec2& center, double sigma, int width, int height) {
  if (sigma <= 0.0) throw Error("sigma must be positive");
  HeatmapGrid grid(width, height);
  // separable: exp(-(du^2+dv^2)/2s^2) = exp(-du^2/2s^2) * exp(-dv^2/2s^2)
  const double inv = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> fx(static_cast<std::size_t>(width));
  std::vector<double> fy(static_cast<std::size_t>(height));
  for (int x = 0; x < width; ++x) {
    double d = x - center.x();
    fx[x] = std::exp(-d * d * inv);
  }
  for (int y = 0; y < height; ++y) {
    double d = y - center.y();
    fy[y] = std::exp(-d * d * inv);
  }
  for (int y = 0; y < height; ++y) {
    float* row = grid.values.data() + static_cast<std::size_t>(y) * width;
    for (int x = 0; x < width; ++x) row[x] = static_cast<float>(fy[y] * fx[x]);
  }
  return grid;
}

PeakEstimate hard_argmax(const HeatmapGrid& h) {
  if (h.size() == 0) throw Error("empty grid");
  std::size_t best = 0;
  float best_v = h.values[0];
  for (std::size_t i = 1; i < h.size(); ++i) {
    if (h.values[i] > best_v) {
      best_v = h.values[i];
      best = i;
    }
  }
  return PeakEstimate{static_cast<double>(best % h.width),
                      static_cast<double>(best / h.width), best_v};
}

double bilinear_at(const HeatmapGrid& h, double x, double y) {
  double cx = std::clamp(x, 0.0, static_cast<double>(h.width - 1));
  double cy = std::clamp(y, 0.0, static_cast<double>(h.height - 1));
  int x0 = std::min(static_cast<int>(cx), h.width - 2 >= 0 ? h.width - 2 : 0);
  int y0 = std::min(static_cast<int>(cy), h.height - 2 >= 0 ? h.height - 2 : 0);
  if (h.width == 1) x0 = 0;
  if (h.height == 1) y0 = 0;
  int x1 = std::min(x0 + 1, h.width - 1);
  int y1 = std::min(y0 + 1, h.height - 1);
  double tx = cx - x0;
  double ty = cy - y0;
  double v00 = h.at(x0, y0), v10 = h.at(x1, y0);
  double v01 = h.at(x0, y1), v11 = h.at(x1, y1);
  return (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11);
}

PeakEstimate soft_argmax(const HeatmapGrid& h, double temperature) {
  if (temperature <= 0.0) throw Error("temperature must be positive");
  float vmax = 0.0f;
  for (float v : h.values) vmax = std::max(vmax, v);
  if (vmax <= 0.0f) throw AllZero();
  // zero pixels carry zero probability, so the expectation stays inside the
  // convex hull of the support
  double wsum = 0.0, ex = 0.0, ey = 0.0;
  for (int y = 0; y < h.height; ++y) {
    const float* row = h.values.data() + static_cast<std::size_t>(y) * h.width;
    for (int x = 0; x < h.width; ++x) {
      if (row[x] <= 0.0f) continue;
      double w = std::exp(temperature * (static_cast<double>(row[x]) - vmax));
      wsum += w;
      ex += w * x;
      ey += w * y;
    }
  }
  PeakEstimate peak;
  peak.x = ex / wsum;
  peak.y = ey / wsum;
  peak.score = bilinear_at(h, peak.x, peak.y);
  return peak;
}

void rasterize_line(const EpipolarLine& line, int width, int height,
                    std::vector<std::int32_t>& pixel_indices) {
  pixel_indices.clear();
  const double a = line.a, b = line.b, c = line.c;
  // Symmetric rigs put samples exactly on half-integer ties, where rounding
  // would flip with ulp-level noise in the line coefficients; the nudge
  // moves the tie off that set so equal lines rasterize identically.
  constexpr double tie_nudge = 1e-9;
  if (std::abs(b) >= std::abs(a)) {
    // x-major: one sample per column, v = -(a u + c)/b
    for (int u = 0; u < width; ++u) {
      double v = -(a * u + c) / b;
      long vi = std::lround(v + tie_nudge);
      if (vi >= 0 && vi < height)
        pixel_indices.push_back(static_cast<std::int32_t>(vi * width + u));
    }
  } else {
    for (int v = 0; v < height; ++v) {
      double u = -(b * v + c) / a;
      long ui = std::lround(u + tie_nudge);
      if (ui >= 0 && ui < width)
        pixel_indices.push_back(static_cast<std::int32_t>(static_cast<long>(v) * width + ui));
    }
  }
}

LineSample max_on_line(const HeatmapGrid& h, const EpipolarLine& line) {
  std::vector<std::int32_t> pixels;
  rasterize_line(line, h.width, h.height, pixels);
  if (pixels.empty()) return LineSample{0.0, std::nullopt};
  std::int32_t best = pixels[0];
  float best_v = h.values[pixels[0]];
  for (std::int32_t idx : pixels) {
    if (h.values[idx] > best_v) {
      best_v = h.values[idx];
      best = idx;
    }
  }
  return LineSample{static_cast<double>(best_v),
                    std::make_pair(static_cast<int>(best % h.width),
                                   static_cast<int>(best / h.width))};
}

HeatmapGrid spatial_softmax(const HeatmapGrid& h, double temperature) {
  if (temperature <= 0.0) throw Error("temperature must be positive");
  float vmax = 0.0f;
  for (float v : h.values) vmax = std::max(vmax, v);
  // closed form of softmax + rescale-to-input-max:
  // out = vmax * exp(T * (v - vmax))
  HeatmapGrid out(h.width, h.height);
  const double m = static_cast<double>(vmax);
  for (std::size_t i = 0; i < h.size(); ++i)
    out.values[i] =
        static_cast<float>(m * std::exp(temperature * (static_cast<double>(h.values[i]) - m)));
  return out;
}

}  // namespace epifuse
