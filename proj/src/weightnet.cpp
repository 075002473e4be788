// SPDX-License-Identifier: Apache-2.0
#include "epifuse/weightnet.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <unordered_map>

#include <json.hpp>

#include "epifuse/parallel.hpp"
#include "epifuse/rng.hpp"

namespace epifuse {

namespace {

using Eigen::VectorXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ConstVecMap = Eigen::Map<const VectorXd>;

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x > 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

void WeightNetConfig::validate() const {
  if (width <= 0 || height <= 0) throw Error("invalid resolution");
  if (pool <= 0 || width % pool != 0 || height % pool != 0)
    throw Error("resolution must be divisible by the pooling size");
  if (conv_channels <= 0 || appearance_dim <= 0 || geometry_dim <= 0 || head1_dim <= 0 ||
      head2_dim <= 0)
    throw Error("invalid network sizes");
  if (soft_argmax_temperature <= 0) throw Error("invalid soft-argmax temperature");
}

const ParamSlice& WeightNetParams::slice(const std::string& name) const {
  for (const auto& s : slices)
    if (s.name == name) return s;
  throw Error("unknown parameter slice " + name);
}

WeightNetParams init_weightnet(const WeightNetConfig& config, std::uint64_t seed) {
  config.validate();
  WeightNetParams p;
  p.config = config;
  p.init_seed = seed;

  const int c = config.conv_channels;
  const int pooled = config.pooled_dim();
  const int da = config.appearance_dim;
  const int dg = config.geometry_dim;
  const int h1 = config.head1_dim;
  const int h2 = config.head2_dim;
  auto add = [&p](const std::string& name, std::vector<int> shape) {
    std::size_t size = 1;
    for (int d : shape) size *= static_cast<std::size_t>(d);
    std::size_t offset = p.slices.empty() ? 0 : p.slices.back().offset + p.slices.back().size;
    p.slices.push_back(ParamSlice{name, std::move(shape), offset, size});
  };
  add("conv_w", {c, 3, 3});
  add("conv_b", {c});
  add("app_fc_w", {da, pooled});
  add("app_fc_b", {da});
  add("geo_fc_w", {dg, 3});
  add("geo_fc_b", {dg});
  add("head1_w", {h1, da + dg});
  add("head1_b", {h1});
  add("head2_w", {h2, h1});
  add("head2_b", {h2});
  add("head3_w", {1, h2});
  add("head3_b", {1});
  p.flat.assign(p.slices.back().offset + p.slices.back().size, 0.0);

  Rng rng(seed);
  auto fill_normal = [&](const std::string& name, double stddev) {
    const ParamSlice& s = p.slice(name);
    for (std::size_t i = 0; i < s.size; ++i) p.flat[s.offset + i] = stddev * rng.normal();
  };
  fill_normal("conv_w", std::sqrt(2.0 / 9.0));
  fill_normal("app_fc_w", std::sqrt(2.0 / pooled));
  // sampson distances are unbounded (px^2), so the geometry FC starts small
  fill_normal("geo_fc_w", 0.01);
  fill_normal("head1_w", std::sqrt(2.0 / (da + dg)));
  fill_normal("head2_w", std::sqrt(2.0 / h1));
  fill_normal("head3_w", std::sqrt(2.0 / h2));
  return p;
}

namespace {

struct MapTrace {
  std::vector<double> conv_relu;  // channels * pixels
  VectorXd pooled;
  VectorXd fc_pre;
  VectorXd embedding;
};

// conv activations stored channel-interleaved: plane[pixel * C + c].
// Channel count specialized at compile time so the inner loops vectorize.
template <int C>
void conv3x3_relu_impl(const HeatmapGrid& h, int w, int ht, const double* cw,
                       const double* cb, std::vector<double>& plane) {
  const std::size_t pixels = static_cast<std::size_t>(w) * ht;
  plane.resize(pixels * C);

  // weights regrouped per tap so the channel loop is contiguous
  double wt[9 * C];
  for (int c = 0; c < C; ++c)
    for (int t = 0; t < 9; ++t) wt[t * C + c] = cw[c * 9 + t];

  double acc[C];
  const float* in = h.values.data();
  for (int y = 0; y < ht; ++y) {
    const bool y_interior = y > 0 && y < ht - 1;
    double* out_row = plane.data() + static_cast<std::size_t>(y) * w * C;
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < C; ++c) acc[c] = cb[c];
      if (y_interior && x > 0 && x < w - 1) {
        for (int ky = 0; ky < 3; ++ky) {
          const float* src = in + static_cast<std::size_t>(y + ky - 1) * w + (x - 1);
          for (int kx = 0; kx < 3; ++kx) {
            const double v = static_cast<double>(src[kx]);
            const double* tap = wt + (ky * 3 + kx) * C;
            for (int c = 0; c < C; ++c) acc[c] += tap[c] * v;
          }
        }
      } else {
        for (int ky = 0; ky < 3; ++ky) {
          const int ys = y + ky - 1;
          if (ys < 0 || ys >= ht) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int xs = x + kx - 1;
            if (xs < 0 || xs >= w) continue;
            const double v = static_cast<double>(in[static_cast<std::size_t>(ys) * w + xs]);
            const double* tap = wt + (ky * 3 + kx) * C;
            for (int c = 0; c < C; ++c) acc[c] += tap[c] * v;
          }
        }
      }
      double* out = out_row + static_cast<std::size_t>(x) * C;
      for (int c = 0; c < C; ++c) out[c] = acc[c] > 0.0 ? acc[c] : 0.0;
    }
  }
}

void conv3x3_relu(const HeatmapGrid& h, const WeightNetParams& p,
                  std::vector<double>& plane) {
  const WeightNetConfig& cfg = p.config;
  const double* cw = p.data("conv_w");
  const double* cb = p.data("conv_b");
  switch (cfg.conv_channels) {
    case 8: conv3x3_relu_impl<8>(h, cfg.width, cfg.height, cw, cb, plane); break;
    case 4: conv3x3_relu_impl<4>(h, cfg.width, cfg.height, cw, cb, plane); break;
    case 16: conv3x3_relu_impl<16>(h, cfg.width, cfg.height, cw, cb, plane); break;
    default: throw Error("unsupported conv channel count");
  }
}

// gradient of the conv parameters given d(conv output) in interleaved layout
template <int C>
void conv3x3_param_grad_impl(const HeatmapGrid& input, int w, int ht,
                             const std::vector<double>& dconv, double* g_conv_w,
                             double* g_conv_b) {
  const float* in = input.values.data();
  double gw_tap[9 * C] = {0.0};
  double gb[C] = {0.0};
  for (int y = 0; y < ht; ++y) {
    const bool y_interior = y > 0 && y < ht - 1;
    for (int x = 0; x < w; ++x) {
      const double* d = dconv.data() + (static_cast<std::size_t>(y) * w + x) * C;
      for (int c = 0; c < C; ++c) gb[c] += d[c];
      if (y_interior && x > 0 && x < w - 1) {
        for (int ky = 0; ky < 3; ++ky) {
          const float* src = in + static_cast<std::size_t>(y + ky - 1) * w + (x - 1);
          for (int kx = 0; kx < 3; ++kx) {
            const double val = static_cast<double>(src[kx]);
            double* gt = gw_tap + (ky * 3 + kx) * C;
            for (int c = 0; c < C; ++c) gt[c] += val * d[c];
          }
        }
      } else {
        for (int ky = 0; ky < 3; ++ky) {
          const int ys = y + ky - 1;
          if (ys < 0 || ys >= ht) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int xs = x + kx - 1;
            if (xs < 0 || xs >= w) continue;
            const double val = static_cast<double>(in[static_cast<std::size_t>(ys) * w + xs]);
            double* gt = gw_tap + (ky * 3 + kx) * C;
            for (int c = 0; c < C; ++c) gt[c] += val * d[c];
          }
        }
      }
    }
  }
  for (int c = 0; c < C; ++c) {
    g_conv_b[c] += gb[c];
    for (int t = 0; t < 9; ++t) g_conv_w[c * 9 + t] += gw_tap[t * C + c];
  }
}

void conv3x3_param_grad(const HeatmapGrid& input, int channels, int w, int ht,
                        const std::vector<double>& dconv, double* g_conv_w,
                        double* g_conv_b) {
  switch (channels) {
    case 8: conv3x3_param_grad_impl<8>(input, w, ht, dconv, g_conv_w, g_conv_b); break;
    case 4: conv3x3_param_grad_impl<4>(input, w, ht, dconv, g_conv_w, g_conv_b); break;
    case 16: conv3x3_param_grad_impl<16>(input, w, ht, dconv, g_conv_w, g_conv_b); break;
    default: throw Error("unsupported conv channel count");
  }
}

void appearance_forward(const HeatmapGrid& h, const WeightNetParams& p, MapTrace& trace) {
  const WeightNetConfig& cfg = p.config;
  if (h.width != cfg.width || h.height != cfg.height) throw ShapeMismatch();
  const int w = cfg.width, ht = cfg.height, channels = cfg.conv_channels, pool = cfg.pool;
  conv3x3_relu(h, p, trace.conv_relu);

  const int wb = w / pool, hb = ht / pool;
  const double inv = 1.0 / (pool * pool);
  trace.pooled.resize(cfg.pooled_dim());
  std::vector<double> sums(channels);
  for (int by = 0; by < hb; ++by) {
    for (int bx = 0; bx < wb; ++bx) {
      std::fill(sums.begin(), sums.end(), 0.0);
      for (int dy = 0; dy < pool; ++dy) {
        const double* row = trace.conv_relu.data() +
                            (static_cast<std::size_t>(by * pool + dy) * w + bx * pool) * channels;
        for (int dx = 0; dx < pool; ++dx)
          for (int c = 0; c < channels; ++c) sums[c] += row[dx * channels + c];
      }
      for (int c = 0; c < channels; ++c)
        trace.pooled[(c * hb + by) * wb + bx] = sums[c] * inv;
    }
  }

  ConstMatMap fw(p.data("app_fc_w"), cfg.appearance_dim, cfg.pooled_dim());
  ConstVecMap fb(p.data("app_fc_b"), cfg.appearance_dim);
  trace.fc_pre = fw * trace.pooled + fb;
  trace.embedding = trace.fc_pre.cwiseMax(0.0);
}

struct HeadTrace {
  VectorXd input;  // [appearance; geometry]
  VectorXd h1, h2;  // post-ReLU
  double z = 0.0;
  double omega = 0.0;
};

// buffers reused across calls on each pool thread
struct LossWorkspace {
  std::vector<MapTrace> app;
  std::vector<VectorXd> geo;
  std::vector<HeadTrace> head;
  std::vector<double> dconv;
  std::vector<double> dpool_block;
};
thread_local LossWorkspace tls_loss_workspace;

void head_forward(const VectorXd& appearance, const VectorXd& geometry,
                  const WeightNetParams& p, HeadTrace& t) {
  const WeightNetConfig& cfg = p.config;
  const int din = cfg.appearance_dim + cfg.geometry_dim;
  t.input.resize(din);
  t.input << appearance, geometry;
  ConstMatMap w1(p.data("head1_w"), cfg.head1_dim, din);
  ConstVecMap b1(p.data("head1_b"), cfg.head1_dim);
  ConstMatMap w2(p.data("head2_w"), cfg.head2_dim, cfg.head1_dim);
  ConstVecMap b2(p.data("head2_b"), cfg.head2_dim);
  ConstMatMap w3(p.data("head3_w"), 1, cfg.head2_dim);
  t.h1 = (w1 * t.input + b1).cwiseMax(0.0);
  t.h2 = (w2 * t.h1 + b2).cwiseMax(0.0);
  t.z = (w3 * t.h2)(0) + p.data("head3_b")[0];
  t.omega = softplus(t.z);
}

// valid other views of v, ascending
std::vector<int> other_views(const LineTables& tables, int v) {
  std::vector<int> others;
  for (int u = 0; u < tables.view_count; ++u)
    if (u != v && tables.pair_valid(v, u)) others.push_back(u);
  return others;
}

VectorXd geometry_forward(const std::vector<std::array<double, 3>>& feats,
                          const WeightNetParams& p) {
  const WeightNetConfig& cfg = p.config;
  ConstMatMap gw(p.data("geo_fc_w"), cfg.geometry_dim, 3);
  ConstVecMap gb(p.data("geo_fc_b"), cfg.geometry_dim);
  VectorXd acc = VectorXd::Zero(cfg.geometry_dim);
  for (const auto& f : feats) {
    Eigen::Vector3d x(f[0], f[1], f[2]);
    acc += gw * x + gb;
  }
  if (!feats.empty()) acc /= static_cast<double>(feats.size());
  else acc = gb;
  return acc;
}

}  // namespace

Eigen::VectorXd appearance_embed(const HeatmapGrid& h, const WeightNetParams& params) {
  MapTrace trace;
  appearance_forward(h, params, trace);
  return trace.embedding;
}

std::vector<PeakEstimate> decode_peaks(const ViewStack& stack, int joint,
                                       const WeightNetParams& params) {
  std::vector<PeakEstimate> peaks;
  peaks.reserve(stack.views.size());
  for (const auto& view : stack.views) {
    const HeatmapGrid& g = view[joint];
    try {
      peaks.push_back(soft_argmax(g, params.config.soft_argmax_temperature));
    } catch (const AllZero&) {
      peaks.push_back(PeakEstimate{0.5 * (g.width - 1), 0.5 * (g.height - 1), 0.0});
    }
  }
  return peaks;
}

namespace {

std::vector<std::array<double, 3>> pair_features_for_view(
    const std::vector<PeakEstimate>& peaks, const LineTables& tables, int v) {
  std::vector<std::array<double, 3>> feats;
  for (int u : other_views(tables, v)) {
    double dist = sampson_distance(FundamentalMatrix{tables.f(v, u)},
                                   Vec2(peaks[v].x, peaks[v].y), Vec2(peaks[u].x, peaks[u].y));
    feats.push_back({dist, peaks[v].score, peaks[u].score});
  }
  return feats;
}

}  // namespace

Eigen::VectorXd geometry_embed(const std::vector<PeakEstimate>& peaks,
                               const LineTables& fmatrices, int view_index,
                               const WeightNetParams& params) {
  if (peaks.size() < 2) throw InsufficientViews();
  return geometry_forward(pair_features_for_view(peaks, fmatrices, view_index), params);
}

FusionWeights predict_weights(const ViewStack& stack, const WeightNetParams& params,
                              const LineTables& tables) {
  stack.validate();
  const int views = stack.view_count();
  const int joints = stack.joint_count();
  FusionWeights w;
  w.omega.assign(views, std::vector<double>(joints, 0.0));
  MapTrace app;
  HeadTrace head;
  for (int j = 0; j < joints; ++j) {
    std::vector<PeakEstimate> peaks = decode_peaks(stack, j, params);
    for (int v = 0; v < views; ++v) {
      appearance_forward(stack.views[v][j], params, app);
      VectorXd geo = geometry_forward(pair_features_for_view(peaks, tables, v), params);
      head_forward(app.embedding, geo, params, head);
      // softplus is positive; the floor guards against double underflow so
      // the omega > 0 contract survives saturated inputs
      w.omega[v][j] = std::max(head.omega, 1e-9);
    }
  }
  return w;
}

double score_weight(const HeatmapGrid& h) {
  float vmax = 0.0f;
  for (float v : h.values) vmax = std::max(vmax, v);
  return static_cast<double>(vmax);
}

SampleFeatures compute_sample_features(const MultiviewSample& sample,
                                       const LineTables& tables,
                                       const WeightNetConfig& config) {
  const int views = static_cast<int>(sample.corrupted.size());
  const int joints = static_cast<int>(sample.corrupted[0].size());
  const int pixels = tables.width * tables.height;

  SampleFeatures f;
  f.views = views;
  f.joints = joints;
  f.gram.assign(static_cast<std::size_t>(views) * joints, Eigen::MatrixXd());
  f.gram_b.assign(static_cast<std::size_t>(views) * joints, VectorXd());
  f.gram_c.assign(static_cast<std::size_t>(views) * joints, 0.0);
  f.pair_feats.clear();

  std::vector<double> cvals(views);
  for (int v = 0; v < views; ++v) {
    LineMaxBlock block = line_max_block(sample.corrupted, tables, v);
    std::vector<int> slot_of(views, -1);
    for (std::size_t s = 0; s < block.contributors.size(); ++s)
      slot_of[block.contributors[s]] = static_cast<int>(s);
    for (int j = 0; j < joints; ++j) {
      Eigen::MatrixXd g = Eigen::MatrixXd::Zero(views, views);
      VectorXd b = VectorXd::Zero(views);
      double c = 0.0;
      const float* own = sample.corrupted[v][j].values.data();
      const float* target = sample.clean[v][j].values.data();
      for (int p = 0; p < pixels; ++p) {
        for (int k = 0; k < views; ++k) {
          if (k == v)
            cvals[k] = static_cast<double>(own[p]);
          else if (slot_of[k] >= 0)
            cvals[k] = static_cast<double>(block.at(slot_of[k], p, j));
          else
            cvals[k] = 0.0;
        }
        const double gt = static_cast<double>(target[p]);
        c += gt * gt;
        for (int k = 0; k < views; ++k) {
          b[k] += cvals[k] * gt;
          const double ck = cvals[k];
          for (int l = k; l < views; ++l) g(k, l) += ck * cvals[l];
        }
      }
      for (int k = 0; k < views; ++k)
        for (int l = 0; l < k; ++l) g(k, l) = g(l, k);
      f.gram[static_cast<std::size_t>(v) * joints + j] = std::move(g);
      f.gram_b[static_cast<std::size_t>(v) * joints + j] = std::move(b);
      f.gram_c[static_cast<std::size_t>(v) * joints + j] = c;
    }
  }

  // geometry pair features (constant: the heatmaps are frozen inputs)
  WeightNetParams peek;  // only the temperature is needed for decoding
  peek.config = config;
  ViewStack stack;
  stack.views = sample.corrupted;
  f.pair_feats.resize(static_cast<std::size_t>(views) * joints * std::max(1, views - 1));
  f.pair_slot_count.assign(static_cast<std::size_t>(views) * joints, 0);
  for (int j = 0; j < joints; ++j) {
    std::vector<PeakEstimate> peaks = decode_peaks(stack, j, peek);
    for (int v = 0; v < views; ++v) {
      auto feats = pair_features_for_view(peaks, tables, v);
      f.pair_slot_count[static_cast<std::size_t>(v) * joints + j] =
          static_cast<int>(feats.size());
      for (std::size_t s = 0; s < feats.size(); ++s)
        f.pair_feats[(static_cast<std::size_t>(v) * joints + j) * std::max(1, views - 1) + s] =
            feats[s];
    }
  }
  return f;
}

double sample_loss_and_grad(const MultiviewSample& sample, const SampleFeatures& features,
                            const LineTables& tables, const WeightNetParams& params,
                            std::vector<double>* grad) {
  const WeightNetConfig& cfg = params.config;
  const int views = features.views;
  const int joints = features.joints;
  const int pixels = tables.width * tables.height;
  const double inv_z = 1.0 / (static_cast<double>(views) * joints * pixels);
  const int din = cfg.appearance_dim + cfg.geometry_dim;
  const int max_slots = std::max(1, views - 1);

  // forward: omega for every (view, joint)
  LossWorkspace& ws = tls_loss_workspace;
  ws.app.resize(static_cast<std::size_t>(views) * joints);
  ws.geo.resize(static_cast<std::size_t>(views) * joints);
  ws.head.resize(static_cast<std::size_t>(views) * joints);
  std::vector<MapTrace>& app = ws.app;
  std::vector<VectorXd>& geo = ws.geo;
  std::vector<HeadTrace>& head = ws.head;
  for (int v = 0; v < views; ++v) {
    for (int j = 0; j < joints; ++j) {
      const std::size_t idx = static_cast<std::size_t>(v) * joints + j;
      appearance_forward(sample.corrupted[v][j], params, app[idx]);
      std::vector<std::array<double, 3>> feats(
          features.pair_feats.begin() + idx * max_slots,
          features.pair_feats.begin() + idx * max_slots + features.pair_slot_count[idx]);
      geo[idx] = geometry_forward(feats, params);
      head_forward(app[idx].embedding, geo[idx], params, head[idx]);
    }
  }

  // Loss via the per-(v,j) Gram forms of the fused maps. The weights enter
  // scaled by 1/V rather than by their sum: under sum normalization the
  // training optimum drifts weight onto blank or dim views (they dilute the
  // shared ridge artifacts), inverting the quality signal the weights are
  // meant to carry. The 1/V scale leaves decoded argmaxes unchanged and
  // makes down-weighting corrupted views the descent direction.
  double loss = 0.0;
  const double inv_views = 1.0 / static_cast<double>(views);
  std::vector<VectorXd> omega_bar(joints), dl_domega_bar(joints);
  for (int j = 0; j < joints; ++j) {
    VectorXd omega(views);
    for (int v = 0; v < views; ++v) omega[v] = head[static_cast<std::size_t>(v) * joints + j].omega;
    omega_bar[j] = omega * inv_views;
    dl_domega_bar[j] = VectorXd::Zero(views);
    for (int v = 0; v < views; ++v) {
      const std::size_t idx = static_cast<std::size_t>(v) * joints + j;
      const Eigen::MatrixXd& g = features.gram[idx];
      const VectorXd& b = features.gram_b[idx];
      VectorXd gw = g * omega_bar[j];
      loss += inv_z * (omega_bar[j].dot(gw) - 2.0 * b.dot(omega_bar[j]) + features.gram_c[idx]);
      if (grad) dl_domega_bar[j] += (2.0 * inv_z) * (gw - b);
    }
  }
  if (!grad) return loss;

  // backward
  ConstMatMap w1(params.data("head1_w"), cfg.head1_dim, din);
  ConstMatMap w2(params.data("head2_w"), cfg.head2_dim, cfg.head1_dim);
  ConstMatMap w3(params.data("head3_w"), 1, cfg.head2_dim);
  ConstMatMap fw(params.data("app_fc_w"), cfg.appearance_dim, cfg.pooled_dim());

  auto gslice = [&](const char* name) { return grad->data() + params.slice(name).offset; };
  double* g_conv_w = gslice("conv_w");
  double* g_conv_b = gslice("conv_b");
  Eigen::Map<RowMat> g_fw(gslice("app_fc_w"), cfg.appearance_dim, cfg.pooled_dim());
  Eigen::Map<VectorXd> g_fb(gslice("app_fc_b"), cfg.appearance_dim);
  Eigen::Map<RowMat> g_gw(gslice("geo_fc_w"), cfg.geometry_dim, 3);
  Eigen::Map<VectorXd> g_gb(gslice("geo_fc_b"), cfg.geometry_dim);
  Eigen::Map<RowMat> g_w1(gslice("head1_w"), cfg.head1_dim, din);
  Eigen::Map<VectorXd> g_b1(gslice("head1_b"), cfg.head1_dim);
  Eigen::Map<RowMat> g_w2(gslice("head2_w"), cfg.head2_dim, cfg.head1_dim);
  Eigen::Map<VectorXd> g_b2(gslice("head2_b"), cfg.head2_dim);
  Eigen::Map<RowMat> g_w3(gslice("head3_w"), 1, cfg.head2_dim);
  Eigen::Map<VectorXd> g_b3(gslice("head3_b"), 1);

  const int w = cfg.width, ht = cfg.height, channels = cfg.conv_channels, pool = cfg.pool;
  const std::size_t grid_pixels = static_cast<std::size_t>(w) * ht;
  const int wb = w / pool, hb = ht / pool;
  const double pool_inv = 1.0 / (pool * pool);
  ws.dconv.resize(grid_pixels * channels);
  ws.dpool_block.resize(channels);
  std::vector<double>& dconv = ws.dconv;
  std::vector<double>& dpool_block = ws.dpool_block;

  // stack the per-map vectors so parameter gradients become single GEMMs
  const int maps = views * joints;
  const int da = cfg.appearance_dim, dg = cfg.geometry_dim;
  Eigen::MatrixXd X(maps, din), H1(maps, cfg.head1_dim), H2(maps, cfg.head2_dim);
  Eigen::MatrixXd POOLED(maps, cfg.pooled_dim()), MEANF = Eigen::MatrixXd::Zero(maps, 3);
  Eigen::VectorXd DZ(maps);
  for (int j = 0; j < joints; ++j) {
    for (int v = 0; v < views; ++v) {
      const std::size_t idx = static_cast<std::size_t>(v) * joints + j;
      const HeadTrace& ht_trace = head[idx];
      DZ[idx] = sigmoid(ht_trace.z) * dl_domega_bar[j][v] * inv_views;
      X.row(idx) = ht_trace.input;
      H1.row(idx) = ht_trace.h1;
      H2.row(idx) = ht_trace.h2;
      POOLED.row(idx) = app[idx].pooled;
      const int slots = features.pair_slot_count[idx];
      if (slots > 0) {
        Eigen::Vector3d mean_f = Eigen::Vector3d::Zero();
        for (int sl = 0; sl < slots; ++sl) {
          const auto& pf = features.pair_feats[idx * max_slots + sl];
          mean_f += Eigen::Vector3d(pf[0], pf[1], pf[2]);
        }
        MEANF.row(idx) = mean_f.transpose() / static_cast<double>(slots);
      }
    }
  }

  Eigen::MatrixXd DH2 = (DZ * w3).cwiseProduct((H2.array() > 0.0).cast<double>().matrix());
  Eigen::MatrixXd DH1 = (DH2 * w2).cwiseProduct((H1.array() > 0.0).cast<double>().matrix());
  Eigen::MatrixXd DX = DH1 * w1;
  Eigen::MatrixXd DFC = DX.leftCols(da).cwiseProduct(
      [&] {
        Eigen::MatrixXd mask(maps, da);
        for (int i = 0; i < maps; ++i)
          mask.row(i) = (app[i].fc_pre.array() > 0.0).cast<double>().matrix().transpose();
        return mask;
      }());
  Eigen::MatrixXd DGEO = DX.rightCols(dg);
  Eigen::MatrixXd DPOOLED = DFC * fw;

  g_w3.noalias() += DZ.transpose() * H2;
  g_b3[0] += DZ.sum();
  g_w2.noalias() += DH2.transpose() * H1;
  g_b2 += DH2.colwise().sum().transpose();
  g_w1.noalias() += DH1.transpose() * X;
  g_b1 += DH1.colwise().sum().transpose();
  g_fw.noalias() += DFC.transpose() * POOLED;
  g_fb += DFC.colwise().sum().transpose();
  g_gw.noalias() += DGEO.transpose() * MEANF;
  g_gb += DGEO.colwise().sum().transpose();

  // per-map: unpool through the ReLU mask, then conv parameter gradients
  for (int idx = 0; idx < maps; ++idx) {
    const MapTrace& at = app[idx];
    std::fill(dconv.begin(), dconv.end(), 0.0);
    for (int by = 0; by < hb; ++by) {
      for (int bx = 0; bx < wb; ++bx) {
        for (int c = 0; c < channels; ++c)
          dpool_block[c] = DPOOLED(idx, (c * hb + by) * wb + bx) * pool_inv;
        for (int dy = 0; dy < pool; ++dy) {
          std::size_t base =
              (static_cast<std::size_t>(by * pool + dy) * w + bx * pool) * channels;
          const double* relu = at.conv_relu.data() + base;
          double* dst = dconv.data() + base;
          for (int dx2 = 0; dx2 < pool; ++dx2)
            for (int c = 0; c < channels; ++c)
              if (relu[dx2 * channels + c] > 0.0) dst[dx2 * channels + c] += dpool_block[c];
        }
      }
    }
    const int v = idx / joints, j = idx % joints;
    conv3x3_param_grad(sample.corrupted[v][j], channels, w, ht, dconv, g_conv_w, g_conv_b);
  }
  return loss;
}

TrainResult train_weightnet(const SampleProvider& samples, const LineTables& tables,
                            const WeightNetConfig& netcfg, const TrainConfig& cfg) {
  if (samples.size() == 0) throw Error("empty training set");
  if (cfg.steps < 0 || cfg.batch_size <= 0) throw Error("invalid training config");

  WeightNetParams params = init_weightnet(netcfg, cfg.seed);
  const std::size_t total = params.flat.size();
  const std::size_t n = samples.size();
  const std::size_t batch = std::min<std::size_t>(cfg.batch_size, n);

  std::unordered_map<std::size_t, SampleFeatures> feature_cache;
  std::mutex cache_mutex;
  auto features_of = [&](std::size_t index, const MultiviewSample& sample) -> const SampleFeatures& {
    {
      std::lock_guard<std::mutex> lock(cache_mutex);
      auto it = feature_cache.find(index);
      if (it != feature_cache.end()) return it->second;
    }
    SampleFeatures f = compute_sample_features(sample, tables, netcfg);
    std::lock_guard<std::mutex> lock(cache_mutex);
    return feature_cache.emplace(index, std::move(f)).first->second;
  };

  std::vector<double> velocity(total, 0.0);
  std::vector<double> grad(total, 0.0);
  std::vector<std::vector<double>> slot_grads(batch);
  std::vector<double> slot_loss(batch, 0.0);
  std::vector<double> curve;
  curve.reserve(cfg.steps + 1);

  for (int step = 0; step <= cfg.steps; ++step) {
    const bool want_grad = step < cfg.steps;
    parallel_for(batch, [&](std::size_t k) {
      std::size_t index = (static_cast<std::size_t>(step) * batch + k) % n;
      MultiviewSample sample = samples.get(index);
      const SampleFeatures& feats = features_of(index, sample);
      if (want_grad) {
        slot_grads[k].assign(total, 0.0);
        slot_loss[k] = sample_loss_and_grad(sample, feats, tables, params, &slot_grads[k]);
      } else {
        slot_loss[k] = sample_loss_and_grad(sample, feats, tables, params, nullptr);
      }
    });
    double loss = 0.0;
    for (std::size_t k = 0; k < batch; ++k) loss += slot_loss[k];
    loss /= static_cast<double>(batch);
    if (!std::isfinite(loss)) throw NonFiniteLoss(static_cast<std::size_t>(step));
    curve.push_back(loss);
    if (!want_grad) break;

    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t k = 0; k < batch; ++k) {
      const std::vector<double>& g = slot_grads[k];
      for (std::size_t i = 0; i < total; ++i) grad[i] += g[i];
    }
    const double inv_batch = 1.0 / static_cast<double>(batch);
    for (std::size_t i = 0; i < total; ++i) {
      velocity[i] = cfg.momentum * velocity[i] - cfg.learning_rate * (grad[i] * inv_batch);
      params.flat[i] += velocity[i];
    }
  }
  params.trained_steps = static_cast<std::uint64_t>(cfg.steps);
  return TrainResult{std::move(params), std::move(curve)};
}

void save_checkpoint(const std::string& dir, const WeightNetParams& params) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json doc;
  doc["format_version"] = 1;
  doc["config"] = {{"width", params.config.width},
                   {"height", params.config.height},
                   {"conv_channels", params.config.conv_channels},
                   {"pool", params.config.pool},
                   {"appearance_dim", params.config.appearance_dim},
                   {"geometry_dim", params.config.geometry_dim},
                   {"head1_dim", params.config.head1_dim},
                   {"head2_dim", params.config.head2_dim},
                   {"soft_argmax_temperature", params.config.soft_argmax_temperature}};
  doc["init_seed"] = params.init_seed;
  doc["trained_steps"] = params.trained_steps;
  nlohmann::json slices = nlohmann::json::array();
  for (const auto& s : params.slices)
    slices.push_back({{"name", s.name}, {"shape", s.shape}, {"offset", s.offset}, {"size", s.size}});
  doc["slices"] = slices;
  doc["payload"] = {{"file", "checkpoint.bin"}, {"count", params.flat.size()}};

  std::ofstream mf(fs::path(dir) / "checkpoint.json", std::ios::binary);
  if (!mf) throw Error("cannot write checkpoint manifest in " + dir);
  mf << doc.dump(2);
  std::vector<float> payload(params.flat.begin(), params.flat.end());
  std::ofstream bf(fs::path(dir) / "checkpoint.bin", std::ios::binary);
  if (!bf) throw Error("cannot write checkpoint payload in " + dir);
  bf.write(reinterpret_cast<const char*>(payload.data()),
           static_cast<std::streamsize>(payload.size() * sizeof(float)));
}

WeightNetParams load_checkpoint(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream mf(manifest_path, std::ios::binary);
  if (!mf) throw CheckpointMissing("no checkpoint at " + manifest_path);
  nlohmann::json doc = nlohmann::json::parse(mf);
  if (doc.at("format_version").get<int>() != 1) throw FormatVersionMismatch();

  WeightNetConfig cfg;
  const auto& jc = doc.at("config");
  cfg.width = jc.at("width").get<int>();
  cfg.height = jc.at("height").get<int>();
  cfg.conv_channels = jc.at("conv_channels").get<int>();
  cfg.pool = jc.at("pool").get<int>();
  cfg.appearance_dim = jc.at("appearance_dim").get<int>();
  cfg.geometry_dim = jc.at("geometry_dim").get<int>();
  cfg.head1_dim = jc.at("head1_dim").get<int>();
  cfg.head2_dim = jc.at("head2_dim").get<int>();
  cfg.soft_argmax_temperature = jc.at("soft_argmax_temperature").get<double>();

  WeightNetParams params = init_weightnet(cfg, doc.at("init_seed").get<std::uint64_t>());
  params.trained_steps = doc.at("trained_steps").get<std::uint64_t>();

  std::size_t count = doc.at("payload").at("count").get<std::size_t>();
  if (count != params.flat.size()) throw TruncatedPayload("checkpoint size mismatch");
  fs::path payload_path =
      fs::path(manifest_path).parent_path() / doc.at("payload").at("file").get<std::string>();
  std::ifstream bf(payload_path, std::ios::binary | std::ios::ate);
  if (!bf) throw CheckpointMissing("no payload at " + payload_path.string());
  if (static_cast<std::size_t>(bf.tellg()) != count * sizeof(float)) throw TruncatedPayload();
  std::vector<float> payload(count);
  bf.seekg(0);
  bf.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  for (std::size_t i = 0; i < count; ++i) params.flat[i] = static_cast<double>(payload[i]);
  return params;
}

}  // namespace epifuse
