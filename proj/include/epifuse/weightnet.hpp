// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "epifuse/fusion.hpp"
#include "epifuse/synthdata.hpp"

namespace epifuse {

// Network sizes. The topology is fixed (conv -> ReLU -> average pool -> FC
// for appearance; shared FC over [sampson, s_i, s_j] pair features averaged
// over pairs for geometry; three FC layers -> softplus for the head); only
// the heatmap resolution varies in practice.
struct WeightNetConfig {
  int width = 64;
  int height = 64;
  int conv_channels = 8;
  int pool = 8;
  int appearance_dim = 128;
  int geometry_dim = 256;
  int head1_dim = 128;
  int head2_dim = 64;
  double soft_argmax_temperature = 40.0;

  int pooled_dim() const { return (width / pool) * (height / pool) * conv_channels; }
  void validate() const;
  bool operator==(const WeightNetConfig&) const = default;
};

struct ParamSlice {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// All parameters in one flat vector with named slices; shapes are fixed at
// construction and reload is bit-exact.
struct WeightNetParams {
  WeightNetConfig config;
  std::vector<ParamSlice> slices;
  std::vector<double> flat;
  std::uint64_t init_seed = 0;
  std::uint64_t trained_steps = 0;

  const ParamSlice& slice(const std::string& name) const;
  const double* data(const std::string& name) const { return flat.data() + slice(name).offset; }
  double* data(const std::string& name) { return flat.data() + const_cast<const WeightNetParams*>(this)->slice(name).offset; }
};

WeightNetParams init_weightnet(const WeightNetConfig& config, std::uint64_t seed);

// conv3x3 -> ReLU -> pool -> FC -> ReLU, parameters shared across views and
// joints. Throws ShapeMismatch when the grid is not at the configured size.
Eigen::VectorXd appearance_embed(const HeatmapGrid& h, const WeightNetParams& params);

// Per-view soft-argmax peak with an all-zero fallback at the grid center.
std::vector<PeakEstimate> decode_peaks(const ViewStack& stack, int joint,
                                       const WeightNetParams& params);

// Shared FC over [sampson distance, s_i, s_j] per other view, averaged.
Eigen::VectorXd geometry_embed(const std::vector<PeakEstimate>& peaks,
                               const LineTables& fmatrices, int view_index,
                               const WeightNetParams& params);

// One positive weight per (view, joint).
FusionWeights predict_weights(const ViewStack& stack, const WeightNetParams& params,
                              const LineTables& tables);

// ScoreFuse: the weight is the maximum heatmap value.
double score_weight(const HeatmapGrid& h);

// ---- training ----------------------------------------------------------

// Constant per-sample quantities consumed by the loss: Gram matrices of the
// fused-map coefficients against themselves and the clean targets, plus the
// geometry pair features.
struct SampleFeatures {
  int views = 0;
  int joints = 0;
  std::vector<Eigen::MatrixXd> gram;    // [(v * joints) + j], V x V
  std::vector<Eigen::VectorXd> gram_b;  // dot with the clean target
  std::vector<double> gram_c;           // squared norm of the clean target
  std::vector<std::array<double, 3>> pair_feats;  // [((v*J)+j)*(V-1) + slot]
  std::vector<int> pair_slot_count;               // valid slots per (v, j)
};

SampleFeatures compute_sample_features(const MultiviewSample& sample,
                                       const LineTables& tables,
                                       const WeightNetConfig& config);

// Mean over heatmap entries of (adaptive_fuse(corrupted, w(params)) - clean)^2
// for one sample; accumulates d/dparams into grad when non-null.
double sample_loss_and_grad(const MultiviewSample& sample, const SampleFeatures& features,
                            const LineTables& tables, const WeightNetParams& params,
                            std::vector<double>* grad);

struct TrainConfig {
  double learning_rate = 0.4;
  double momentum = 0.9;
  int steps = 100;
  int batch_size = 16;
  std::uint64_t seed = 11;  // parameter initialization
};

struct TrainResult {
  WeightNetParams params;
  std::vector<double> loss_curve;  // steps + 1 entries, loss_curve[0] is initial
};

// Plain gradient descent with momentum over batches cycled sequentially
// through the provider; bit-deterministic for a given (seed, data) and
// independent of EPIFUSE_THREADS.
TrainResult train_weightnet(const SampleProvider& samples, const LineTables& tables,
                            const WeightNetConfig& netcfg, const TrainConfig& cfg);

// Checkpoints: JSON manifest next to a little-endian float32 payload.
void save_checkpoint(const std::string& dir, const WeightNetParams& params);
WeightNetParams load_checkpoint(const std::string& manifest_path);

}  // namespace epifuse
