// SPDX-License-Identifier: Apache-2.0
#include "epifuse/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>

namespace epifuse {

namespace {

namespace fs = std::filesystem;

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// Providers for the validation/train split, either from disk or generated.
std::unique_ptr<SampleProvider> make_provider(const ExperimentConfig& config,
                                              const std::optional<std::string>& dataset_dir,
                                              int begin, int count) {
  if (dataset_dir) {
    auto disk = std::make_unique<DiskSampleProvider>(*dataset_dir);
    if (static_cast<int>(disk->size()) < begin + count)
      throw DatasetMissing("dataset has fewer samples than the config expects");
    // wrap with an offset window
    class Window : public SampleProvider {
     public:
      Window(std::unique_ptr<DiskSampleProvider> inner, int begin, int count)
          : inner_(std::move(inner)), begin_(begin), count_(count) {}
      std::size_t size() const override { return count_; }
      MultiviewSample get(std::size_t i) const override { return inner_->get(begin_ + i); }

     private:
      std::unique_ptr<DiskSampleProvider> inner_;
      int begin_;
      int count_;
    };
    return std::make_unique<Window>(std::move(disk), begin, count);
  }
  return std::make_unique<GeneratingSampleProvider>(config.dataset_spec(), begin, count);
}

std::string loss_curve_csv(const std::vector<double>& curve) {
  std::ostringstream out;
  out << "step,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, curve[i]);
    out << buf;
  }
  return out.str();
}

// minimal standalone vector plot (convenience output only)
std::string polyline_svg(const std::vector<double>& ys, const std::string& title) {
  const int w = 640, h = 360, margin = 40;
  double lo = ys.empty() ? 0.0 : ys[0], hi = lo;
  for (double y : ys) {
    lo = std::min(lo, y);
    hi = std::max(hi, y);
  }
  if (hi <= lo) hi = lo + 1.0;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<text x=\"" << margin
      << "\" y=\"20\" font-size=\"14\">" << title << "</text>\n<polyline fill=\"none\" "
      << "stroke=\"black\" points=\"";
  for (std::size_t i = 0; i < ys.size(); ++i) {
    double x = margin + (w - 2.0 * margin) * (ys.size() > 1 ? i / double(ys.size() - 1) : 0.0);
    double y = h - margin - (h - 2.0 * margin) * (ys[i] - lo) / (hi - lo);
    out << fmt(x) << ',' << fmt(y) << ' ';
  }
  out << "\"/>\n</svg>\n";
  return out.str();
}

std::string bucket_chart_svg(const std::map<Method, EvalReport>& reports) {
  const int w = 640, h = 360, margin = 40;
  double hi = 1.0;
  for (const auto& [m, r] : reports)
    for (const auto& b : r.buckets)
      if (b.count > 0) hi = std::max(hi, b.mean);
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << margin << "\" y=\"20\" font-size=\"14\">mean MPJPE (mm) by occluded-view count</text>\n";
  const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"};
  int ci = 0, legend_y = 36;
  for (const auto& [m, r] : reports) {
    const char* color = colors[ci % 5];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    std::size_t nb = r.buckets.size();
    for (std::size_t k = 0; k < nb; ++k) {
      double x = margin + (w - 2.0 * margin) * (nb > 1 ? k / double(nb - 1) : 0.0);
      double y = h - margin - (h - 2.0 * margin) * (r.buckets[k].mean / hi);
      out << fmt(x) << ',' << fmt(y) << ' ';
    }
    out << "\"/>\n<text x=\"" << (w - margin - 120) << "\" y=\"" << legend_y
        << "\" font-size=\"12\" fill=\"" << color << "\">" << method_name(m) << "</text>\n";
    legend_y += 16;
    ++ci;
  }
  out << "</svg>\n";
  return out.str();
}

std::map<Method, EvalReport> run_eval(const ExperimentConfig& config,
                                      const std::optional<std::string>& dataset_dir,
                                      const WeightNetParams* params) {
  const int train = config.train_count();
  const int eval_count = config.dataset.samples - train;
  auto provider = make_provider(config, dataset_dir, train, eval_count);
  LineTables tables =
      precompute_line_tables(config.build_cameras(), config.rig.width, config.rig.height);
  return evaluate_methods(*provider, config.build_cameras(), tables, config.method_list(),
                          config.pipeline_options(), params);
}

void write_reports(const std::map<Method, EvalReport>& reports, const std::string& out_dir) {
  fs::create_directories(out_dir);
  for (const auto& [method, report] : reports) {
    write_file(fs::path(out_dir) / ("report_" + report.method + ".json"), report.to_json());
    write_file(fs::path(out_dir) / ("report_" + report.method + ".csv"), report.to_csv());
  }
}

void write_compare_files(const std::map<Method, EvalReport>& reports,
                         const ExperimentConfig& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ostringstream csv;
  csv << "method,joint_type,pckh,pckh_occluded,mpjpe_mm,mpjpe_occluded_mm\n";
  for (const auto& [method, r] : reports) {
    for (std::size_t t = 0; t < r.joint_types.size(); ++t)
      csv << r.method << ',' << r.joint_types[t] << ',' << fmt(r.pckh_by_type[t]) << ','
          << fmt(r.pckh_occluded_by_type[t]) << ',' << fmt(r.mpjpe_by_type_mm[t]) << ','
          << fmt(r.mpjpe_occluded_by_type_mm[t]) << '\n';
    csv << r.method << ",mean," << fmt(r.pckh_mean) << ',' << fmt(r.pckh_occluded_mean) << ','
        << fmt(r.mpjpe_mean_mm) << ',' << fmt(r.mpjpe_occluded_mean_mm) << '\n';
  }
  write_file(fs::path(out_dir) / "compare.csv", csv.str());

  std::ostringstream buckets;
  buckets << "method,occluded_views,count,mean_mpjpe_mm\n";
  for (const auto& [method, r] : reports)
    for (std::size_t k = 0; k < r.buckets.size(); ++k)
      buckets << r.method << ',' << k << ',' << r.buckets[k].count << ','
              << fmt(r.buckets[k].mean) << '\n';
  write_file(fs::path(out_dir) / "compare_buckets.csv", buckets.str());

  nlohmann::json doc;
  for (const auto& [method, r] : reports)
    doc[r.method] = nlohmann::json::parse(r.to_json());
  write_file(fs::path(out_dir) / "compare.json", doc.dump(2));

  if (config.emit_plots)
    write_file(fs::path(out_dir) / "compare_buckets.svg", bucket_chart_svg(reports));
}

WeightNetParams train_from_config(const ExperimentConfig& config,
                                  const std::optional<std::string>& dataset_dir,
                                  std::vector<double>* curve_out) {
  auto provider = make_provider(config, dataset_dir, 0, config.train_count());
  LineTables tables =
      precompute_line_tables(config.build_cameras(), config.rig.width, config.rig.height);
  TrainResult result =
      train_weightnet(*provider, tables, config.weightnet_config(), config.train_config());
  if (curve_out) *curve_out = result.loss_curve;
  return std::move(result.params);
}

}  // namespace

void cmd_gen_data(const ExperimentConfig& config, const std::string& out_dir) {
  config.validate();
  DatasetSpec spec = config.dataset_spec();
  GeneratingSampleProvider provider(spec, 0, spec.sample_count);
  write_dataset(out_dir, spec, provider);
}

void cmd_train(const ExperimentConfig& config,
               const std::optional<std::string>& dataset_dir, const std::string& out_dir) {
  config.validate();
  std::vector<double> curve;
  WeightNetParams params = train_from_config(config, dataset_dir, &curve);
  fs::create_directories(out_dir);
  save_checkpoint(out_dir, params);
  write_file(fs::path(out_dir) / "loss_curve.csv", loss_curve_csv(curve));
  if (config.emit_plots)
    write_file(fs::path(out_dir) / "loss_curve.svg", polyline_svg(curve, "training loss"));
}

void cmd_eval(const ExperimentConfig& config,
              const std::optional<std::string>& dataset_dir,
              const std::optional<std::string>& checkpoint_path, const std::string& out_dir) {
  config.validate();
  WeightNetParams params;
  const WeightNetParams* params_ptr = nullptr;
  bool wants_adafuse = false;
  for (Method m : config.method_list()) wants_adafuse |= m == Method::AdaFuse;
  if (wants_adafuse) {
    if (!checkpoint_path) throw CheckpointMissing("adafuse evaluation requires --checkpoint");
    params = load_checkpoint(*checkpoint_path);
    params_ptr = &params;
  }
  write_reports(run_eval(config, dataset_dir, params_ptr), out_dir);
}

void cmd_compare(const ExperimentConfig& config, const std::string& out_dir) {
  config.validate();
  WeightNetParams params;
  const WeightNetParams* params_ptr = nullptr;
  bool wants_adafuse = false;
  for (Method m : config.method_list()) wants_adafuse |= m == Method::AdaFuse;
  std::vector<double> curve;
  if (wants_adafuse) {
    params = train_from_config(config, std::nullopt, &curve);
    params_ptr = &params;
  }
  auto reports = run_eval(config, std::nullopt, params_ptr);
  write_compare_files(reports, config, out_dir);
  if (wants_adafuse) {
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "loss_curve.csv", loss_curve_csv(curve));
    if (config.emit_plots)
      write_file(fs::path(out_dir) / "loss_curve.svg", polyline_svg(curve, "training loss"));
  }
}

}  // namespace epifuse
