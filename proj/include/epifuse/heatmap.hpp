// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "epifuse/errors.hpp"
#include "epifuse/geometry.hpp"

namespace epifuse {

// Non-negative per-pixel joint likelihood, row-major float32 storage.
struct HeatmapGrid {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  HeatmapGrid() = default;
  HeatmapGrid(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0.0f) {}

  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return values.size(); }

  bool operator==(const HeatmapGrid& other) const = default;
};

struct PeakEstimate {
  double x = 0.0;
  double y = 0.0;
  double score = 0.0;
};

struct LineSample {
  double value = 0.0;
  std::optional<std::pair<int, int>> location;  // empty when the line misses the grid
};

// values[y,x] = exp(-((x-cx)^2 + (y-cy)^2) / (2 sigma^2)); the center may lie
// outside the grid, leaving only a truncated tail.
HeatmapGrid render_gaussian(const Vec2& center, double sigma, int width, int height);

// Location and value of the maximum; ties broken by smallest row-major index.
PeakEstimate hard_argmax(const HeatmapGrid& h);

// Expectation of pixel coordinates under softmax(temperature * values),
// restricted to nonzero pixels; score is the input grid bilinearly
// interpolated at the expectation. Throws AllZero on an all-zero grid.
PeakEstimate soft_argmax(const HeatmapGrid& h, double temperature);

double bilinear_at(const HeatmapGrid& h, double x, double y);

// Rasterizes the line across the grid at one-pixel steps along its major
// axis (both endpoints included) and returns the maximum sample.
LineSample max_on_line(const HeatmapGrid& h, const EpipolarLine& line);
void rasterize_line(const EpipolarLine& line, int width, int height,
                    std::vector<std::int32_t>& pixel_indices);

// softmax(temperature * values) rescaled so the output maximum equals the
// input maximum; order of values and argmax location are preserved.
HeatmapGrid spatial_softmax(const HeatmapGrid& h, double temperature);

}  // namespace epifuse
