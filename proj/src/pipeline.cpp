// SPDX-License-Identifier: Apache-2.0
#include "epifuse/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "epifuse/parallel.hpp"

namespace epifuse {

std::string method_name(Method m) {
  switch (m) {
    case Method::NoFuse: return "nofuse";
    case Method::Heuristic: return "heuristic";
    case Method::Score: return "score";
    case Method::Ransac: return "ransac";
    case Method::AdaFuse: return "adafuse";
  }
  return "unknown";
}

std::optional<Method> method_from_name(const std::string& name) {
  if (name == "nofuse") return Method::NoFuse;
  if (name == "heuristic") return Method::Heuristic;
  if (name == "score") return Method::Score;
  if (name == "ransac") return Method::Ransac;
  if (name == "adafuse") return Method::AdaFuse;
  return std::nullopt;
}

namespace {

bool uses_fusion(Method m) {
  return m == Method::Heuristic || m == Method::Score || m == Method::AdaFuse;
}

std::vector<std::vector<Vec2>> argmax_decode(const std::vector<std::vector<HeatmapGrid>>& views) {
  std::vector<std::vector<Vec2>> out(views.size());
  for (std::size_t v = 0; v < views.size(); ++v) {
    out[v].reserve(views[v].size());
    for (const auto& grid : views[v]) {
      PeakEstimate p = hard_argmax(grid);
      out[v].emplace_back(p.x, p.y);
    }
  }
  return out;
}

Vec3 robust_dlt(const std::vector<Observation2D>& obs,
                const std::vector<CameraModel>& cameras) {
  try {
    return triangulate_dlt(obs, cameras);
  } catch (const Error&) {
    return Vec3(0.0, 0.0, 1.0);  // rig center; degenerate decodes only
  }
}

std::vector<Observation2D> to_observations(const std::vector<std::vector<Vec2>>& pred2d,
                                           int joint) {
  std::vector<Observation2D> obs;
  obs.reserve(pred2d.size());
  for (std::size_t v = 0; v < pred2d.size(); ++v)
    obs.push_back(Observation2D{static_cast<int>(v), pred2d[v][joint], 1.0});
  return obs;
}

// All requested methods for one sample, sharing the per-view line-max blocks.
std::vector<SamplePredictions> predict_methods(const MultiviewSample& sample,
                                               const std::vector<CameraModel>& scaled_rig,
                                               const LineTables& tables,
                                               const std::vector<Method>& methods,
                                               const PipelineOptions& options,
                                               const WeightNetParams* adafuse_params) {
  const int views = static_cast<int>(sample.corrupted.size());
  const int joints = static_cast<int>(sample.corrupted[0].size());

  bool need_nofuse = false, need_fusion = false;
  for (Method m : methods) {
    if (m == Method::NoFuse || m == Method::Ransac) need_nofuse = true;
    if (uses_fusion(m)) need_fusion = true;
  }

  ViewStack stack;
  stack.views = sample.corrupted;
  stack.cameras = scaled_rig;

  std::vector<std::vector<Vec2>> nofuse2d;
  if (need_nofuse) nofuse2d = argmax_decode(sample.corrupted);

  // fused 2D decodes per fusion method
  std::vector<std::vector<std::vector<Vec2>>> fused2d(methods.size());
  if (need_fusion) {
    std::vector<std::vector<double>> score_norm, ada_norm;
    for (Method m : methods) {
      if (m == Method::Score) {
        FusionWeights w;
        w.omega.assign(views, std::vector<double>(joints, 0.0));
        for (int v = 0; v < views; ++v)
          for (int j = 0; j < joints; ++j) w.omega[v][j] = score_weight(sample.corrupted[v][j]);
        score_norm = normalize_fusion_weights(w, views, joints);
      } else if (m == Method::AdaFuse) {
        if (!adafuse_params) throw CheckpointMissing("adafuse requires a trained checkpoint");
        FusionWeights w = predict_weights(stack, *adafuse_params, tables);
        ada_norm = normalize_fusion_weights(w, views, joints);
      }
    }
    for (std::size_t mi = 0; mi < methods.size(); ++mi)
      if (uses_fusion(methods[mi]))
        fused2d[mi].assign(views, std::vector<Vec2>(joints));

    for (int v = 0; v < views; ++v) {
      LineMaxBlock block = line_max_block(stack.views, tables, v);
      auto decode_into = [&](std::size_t mi, const std::vector<double>& own,
                             const std::vector<std::vector<double>>& contrib) {
        std::vector<HeatmapGrid> fused = fuse_view(stack, v, block, own, contrib);
        for (int j = 0; j < joints; ++j) {
          PeakEstimate p = hard_argmax(fused[j]);
          fused2d[mi][v][j] = Vec2(p.x, p.y);
        }
      };
      for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        Method m = methods[mi];
        if (m == Method::Heuristic) {
          const double contributing = static_cast<double>(block.contributors.size());
          const double share = contributing > 0 ? (1.0 - options.lambda) / contributing : 0.0;
          std::vector<double> own(joints, options.lambda);
          std::vector<std::vector<double>> contrib(block.contributors.size(),
                                                   std::vector<double>(joints, share));
          decode_into(mi, own, contrib);
        } else if (m == Method::Score || m == Method::AdaFuse) {
          const auto& norm = m == Method::Score ? score_norm : ada_norm;
          std::vector<std::vector<double>> contrib;
          contrib.reserve(block.contributors.size());
          for (int u : block.contributors) contrib.push_back(norm[u]);
          decode_into(mi, norm[v], contrib);
        }
      }
    }
  }

  const double ransac_threshold =
      options.ransac_threshold_px_at_256 * static_cast<double>(tables.width) / 256.0;

  std::vector<SamplePredictions> out(methods.size());
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    Method m = methods[mi];
    SamplePredictions& pred = out[mi];
    pred.pred2d = uses_fusion(m) ? fused2d[mi] : nofuse2d;
    pred.pred3d.resize(joints);
    for (int j = 0; j < joints; ++j) {
      std::vector<Observation2D> obs = to_observations(pred.pred2d, j);
      if (m == Method::Ransac) {
        try {
          pred.pred3d[j] =
              triangulate_ransac(obs, scaled_rig, ransac_threshold, options.ransac_min_inliers)
                  .point;
        } catch (const Error&) {
          pred.pred3d[j] = robust_dlt(obs, scaled_rig);  // no consensus: plain DLT
        }
      } else {
        pred.pred3d[j] = robust_dlt(obs, scaled_rig);
      }
    }
  }
  return out;
}

std::vector<CameraModel> scale_rig(const std::vector<CameraModel>& rig, int w, int h) {
  std::vector<CameraModel> scaled;
  scaled.reserve(rig.size());
  for (const auto& cam : rig)
    scaled.push_back(cam.width == w && cam.height == h ? cam : cam.scaled_to(w, h));
  return scaled;
}

}  // namespace

SamplePredictions run_method_on_sample(const MultiviewSample& sample,
                                       const std::vector<CameraModel>& rig,
                                       const LineTables& tables, Method method,
                                       const PipelineOptions& options,
                                       const WeightNetParams* adafuse_params) {
  std::vector<CameraModel> scaled = scale_rig(rig, tables.width, tables.height);
  return predict_methods(sample, scaled, tables, {method}, options, adafuse_params)[0];
}

std::map<Method, EvalReport> evaluate_methods(const SampleProvider& samples,
                                              const std::vector<CameraModel>& rig,
                                              const LineTables& tables,
                                              const std::vector<Method>& methods,
                                              const PipelineOptions& options,
                                              const WeightNetParams* adafuse_params) {
  const std::size_t n = samples.size();
  const std::vector<CameraModel> scaled = scale_rig(rig, tables.width, tables.height);
  const int views = static_cast<int>(rig.size());

  struct SampleEval {
    // per method: correctness per (view, joint) and 3D error per joint
    std::vector<std::vector<std::uint8_t>> correct2d;
    std::vector<std::vector<double>> err3d;
    std::vector<std::vector<std::uint8_t>> occluded;  // [view][joint]
  };
  std::vector<SampleEval> evals(n);

  parallel_for(n, [&](std::size_t i) {
    MultiviewSample sample = samples.get(i);
    const int joints = static_cast<int>(sample.corrupted[0].size());
    std::vector<SamplePredictions> preds =
        predict_methods(sample, scaled, tables, methods, options, adafuse_params);

    auto gt2d = project_skeleton(sample.skeleton, scaled, tables.width, tables.height);
    std::vector<double> threshold(views);
    for (int v = 0; v < views; ++v) {
      double lo = gt2d[v][0].x(), hi = gt2d[v][0].x();
      for (int j = 1; j < joints; ++j) {
        lo = std::min(lo, gt2d[v][j].x());
        hi = std::max(hi, gt2d[v][j].x());
      }
      threshold[v] = 0.5 * 0.025 * std::max(hi - lo, 1e-9);
    }

    SampleEval& eval = evals[i];
    eval.occluded = sample.occluded;
    eval.correct2d.resize(methods.size());
    eval.err3d.resize(methods.size());
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      eval.correct2d[mi].assign(static_cast<std::size_t>(views) * joints, 0);
      eval.err3d[mi].resize(joints);
      for (int v = 0; v < views; ++v)
        for (int j = 0; j < joints; ++j)
          eval.correct2d[mi][static_cast<std::size_t>(v) * joints + j] =
              (preds[mi].pred2d[v][j] - gt2d[v][j]).norm() < threshold[v] ? 1 : 0;
      for (int j = 0; j < joints; ++j)
        eval.err3d[mi][j] = (preds[mi].pred3d[j] - sample.skeleton.joints[j]).norm();
    }
  });

  // sequential aggregation in sample order
  const auto& types = joint_type_names();
  const int ntypes = static_cast<int>(types.size());
  std::map<Method, EvalReport> reports;
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    std::vector<std::size_t> total2d(ntypes, 0), good2d(ntypes, 0);
    std::vector<std::size_t> total2d_occ(ntypes, 0), good2d_occ(ntypes, 0);
    std::vector<double> err3d_sum(ntypes, 0.0), err3d_occ_sum(ntypes, 0.0);
    std::vector<std::size_t> count3d(ntypes, 0), count3d_occ(ntypes, 0);
    std::vector<double> bucket_sum(views + 1, 0.0);
    std::vector<std::size_t> bucket_count(views + 1, 0);

    for (const SampleEval& eval : evals) {
      const int joints = static_cast<int>(eval.err3d[mi].size());
      for (int j = 0; j < joints; ++j) {
        const int t = joint_type_index(j);
        int occ_views = 0;
        for (int v = 0; v < views; ++v) {
          bool occ = eval.occluded[v][j] != 0;
          occ_views += occ ? 1 : 0;
          bool good = eval.correct2d[mi][static_cast<std::size_t>(v) * joints + j] != 0;
          ++total2d[t];
          good2d[t] += good ? 1 : 0;
          if (occ) {
            ++total2d_occ[t];
            good2d_occ[t] += good ? 1 : 0;
          }
        }
        const double err = eval.err3d[mi][j];
        err3d_sum[t] += err;
        ++count3d[t];
        if (occ_views > 0) {
          err3d_occ_sum[t] += err;
          ++count3d_occ[t];
        }
        bucket_sum[occ_views] += err;
        ++bucket_count[occ_views];
      }
    }

    EvalReport report;
    report.method = method_name(methods[mi]);
    report.joint_types = types;
    auto pct = [](std::size_t good, std::size_t total) {
      return total == 0 ? 0.0 : 100.0 * static_cast<double>(good) / static_cast<double>(total);
    };
    auto mean_mm = [](double sum, std::size_t count) {
      return count == 0 ? 0.0 : 1000.0 * sum / static_cast<double>(count);
    };
    std::size_t g_all = 0, t_all = 0, g_occ = 0, t_occ = 0, c3 = 0, c3o = 0;
    double e3 = 0.0, e3o = 0.0;
    for (int t = 0; t < ntypes; ++t) {
      report.pckh_by_type.push_back(pct(good2d[t], total2d[t]));
      report.pckh_occluded_by_type.push_back(pct(good2d_occ[t], total2d_occ[t]));
      report.mpjpe_by_type_mm.push_back(mean_mm(err3d_sum[t], count3d[t]));
      report.mpjpe_occluded_by_type_mm.push_back(mean_mm(err3d_occ_sum[t], count3d_occ[t]));
      g_all += good2d[t]; t_all += total2d[t];
      g_occ += good2d_occ[t]; t_occ += total2d_occ[t];
      e3 += err3d_sum[t]; c3 += count3d[t];
      e3o += err3d_occ_sum[t]; c3o += count3d_occ[t];
    }
    report.pckh_mean = pct(g_all, t_all);
    report.pckh_occluded_mean = pct(g_occ, t_occ);
    report.mpjpe_mean_mm = mean_mm(e3, c3);
    report.mpjpe_occluded_mean_mm = mean_mm(e3o, c3o);
    for (int k = 0; k <= views; ++k)
      report.buckets.push_back(
          BucketStat{bucket_count[k] == 0 ? 0.0 : 1000.0 * bucket_sum[k] / bucket_count[k],
                     bucket_count[k]});
    reports[methods[mi]] = std::move(report);
  }
  return reports;
}

}  // namespace epifuse
