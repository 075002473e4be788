// SPDX-License-Identifier: Apache-2.0
#include "epifuse/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "epifuse/rng.hpp"

namespace epifuse {

namespace {

constexpr double kPi = 3.141592653589793;
constexpr double kLookAtHeight = 1.0;

const char* kJointNames[kJointCount] = {
    "root", "belly", "neck",
    "left_hip", "right_hip", "left_knee", "right_knee", "left_ankle", "right_ankle",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
};

const char* kTypeNames[9] = {"root", "belly", "neck", "hip", "knee",
                             "ankle", "shoulder", "elbow", "wrist"};

const int kTypeOfJoint[kJointCount] = {0, 1, 2, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7, 8, 8};

}  // namespace

const char* joint_name(int joint) { return kJointNames[joint]; }
const char* joint_type_name(int joint) { return kTypeNames[kTypeOfJoint[joint]]; }
int joint_type_index(int joint) { return kTypeOfJoint[joint]; }

const std::vector<std::string>& joint_type_names() {
  static const std::vector<std::string> names(kTypeNames, kTypeNames + 9);
  return names;
}

bool Skeleton3D::operator==(const Skeleton3D& other) const {
  for (int j = 0; j < kJointCount; ++j)
    if (joints[j] != other.joints[j]) return false;
  return true;
}

const Skeleton3D& template_skeleton() {
  // dyadic coordinates (multiples of 1/64)
  static const Skeleton3D tmpl = [] {
    Skeleton3D s;
    s.joints[kRoot] = Vec3(0.0, 0.0, 1.0);
    s.joints[kBelly] = Vec3(0.0, 0.0, 1.15625);
    s.joints[kNeck] = Vec3(0.0, 0.0, 1.4375);
    s.joints[kLeftHip] = Vec3(0.125, 0.0, 0.9375);
    s.joints[kRightHip] = Vec3(-0.125, 0.0, 0.9375);
    s.joints[kLeftKnee] = Vec3(0.140625, 0.0, 0.546875);
    s.joints[kRightKnee] = Vec3(-0.140625, 0.0, 0.546875);
    s.joints[kLeftAnkle] = Vec3(0.15625, 0.0, 0.125);
    s.joints[kRightAnkle] = Vec3(-0.15625, 0.0, 0.125);
    s.joints[kLeftShoulder] = Vec3(0.1875, 0.0, 1.40625);
    s.joints[kRightShoulder] = Vec3(-0.1875, 0.0, 1.40625);
    s.joints[kLeftElbow] = Vec3(0.453125, 0.0, 1.3125);
    s.joints[kRightElbow] = Vec3(-0.453125, 0.0, 1.3125);
    s.joints[kLeftWrist] = Vec3(0.6875, 0.0, 1.34375);
    s.joints[kRightWrist] = Vec3(-0.6875, 0.0, 1.34375);
    return s;
  }();
  return tmpl;
}

const std::vector<std::pair<int, int>>& skeleton_bones() {
  static const std::vector<std::pair<int, int>> bones = {
      {kBelly, kRoot},         {kNeck, kBelly},
      {kLeftHip, kRoot},       {kRightHip, kRoot},
      {kLeftKnee, kLeftHip},   {kRightKnee, kRightHip},
      {kLeftAnkle, kLeftKnee}, {kRightAnkle, kRightKnee},
      {kLeftShoulder, kNeck},  {kRightShoulder, kNeck},
      {kLeftElbow, kLeftShoulder}, {kRightElbow, kRightShoulder},
      {kLeftWrist, kLeftElbow},    {kRightWrist, kRightElbow},
  };
  return bones;
}

Skeleton3D sample_pose(std::uint64_t seed, const PoseLimits& limits) {
  Rng rng(seed);
  const Skeleton3D& tmpl = template_skeleton();
  Skeleton3D out = tmpl;
  std::array<Mat3, kJointCount> acc;
  acc[kRoot] = Mat3::Identity();

  for (const auto& [child, parent] : skeleton_bones()) {
    // zero limits draw zero offsets, so the template survives bit-exactly
    double angle = rng.uniform(0.0, limits.joint_angle_rad);
    double az = rng.uniform(0.0, 2.0 * kPi);
    double el = std::acos(std::clamp(2.0 * rng.uniform() - 1.0, -1.0, 1.0));
    if (angle > 0.0) {
      Vec3 axis(std::sin(el) * std::cos(az), std::sin(el) * std::sin(az), std::cos(el));
      acc[child] = acc[parent] * Eigen::AngleAxisd(angle, axis).toRotationMatrix();
    } else {
      acc[child] = acc[parent];
    }
    double scale = 1.0 + rng.uniform(-limits.bone_scale, limits.bone_scale);
    Vec3 bone = tmpl.joints[child] - tmpl.joints[parent];
    out.joints[child] = out.joints[parent] + acc[child] * (scale * bone);
  }

  double yaw = rng.uniform(0.0, limits.yaw_rad);
  double r = limits.disc_radius_m * std::sqrt(rng.uniform());
  double theta = rng.uniform(0.0, 2.0 * kPi);
  if (yaw > 0.0) {
    Mat3 rz = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
    Vec3 pivot = out.joints[kRoot];
    for (auto& p : out.joints) p = pivot + rz * (p - pivot);
  }
  if (r > 0.0) {
    Vec3 shift(r * std::cos(theta), r * std::sin(theta), 0.0);
    for (auto& p : out.joints) p += shift;
  }
  return out;
}

std::vector<CameraModel> build_rig(int n, double radius_m,
                                   const std::vector<double>& heights_m,
                                   int width, int height, double focal_px) {
  if (n < 2) throw Error("rig needs at least 2 cameras");
  if (heights_m.empty()) throw Error("rig needs at least one height");
  const Vec3 target(0.0, 0.0, kLookAtHeight);
  const Vec3 up = Vec3::UnitZ();
  std::vector<CameraModel> rig;
  rig.reserve(n);
  for (int i = 0; i < n; ++i) {
    double azimuth = 2.0 * kPi * i / n;
    Vec3 pos(radius_m * std::cos(azimuth), radius_m * std::sin(azimuth),
             heights_m[i % heights_m.size()]);
    Vec3 forward = (target - pos).normalized();
    Vec3 right = (-up).cross(forward).normalized();
    Vec3 down = forward.cross(right);  // unit because forward is orthogonal to right

    CameraModel cam;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * pos;
    cam.intrinsics = Mat3::Identity();
    cam.intrinsics(0, 0) = focal_px;
    cam.intrinsics(1, 1) = focal_px;
    cam.intrinsics(0, 2) = 0.5 * (width - 1);
    cam.intrinsics(1, 2) = 0.5 * (height - 1);
    cam.width = width;
    cam.height = height;
    rig.push_back(cam);
  }
  return rig;
}

void CorruptionSpec::validate() const {
  if (probability < 0.0 || probability > 1.0) throw Error("corruption probability outside [0,1]");
  double sum = blank_weight + ghost_weight + noise_weight;
  if (blank_weight < 0 || ghost_weight < 0 || noise_weight < 0 || std::abs(sum - 1.0) > 1e-9)
    throw Error("corruption mode mix must be non-negative and sum to 1");
  if (ghost_shift_min_px < 0 || ghost_shift_max_px < ghost_shift_min_px)
    throw Error("invalid ghost shift range");
  if (noise_amplitude < 0) throw Error("invalid noise amplitude");
}

std::vector<std::vector<Vec2>> project_skeleton(const Skeleton3D& skeleton,
                                                const std::vector<CameraModel>& rig,
                                                int width, int height) {
  std::vector<std::vector<Vec2>> out(rig.size(), std::vector<Vec2>(kJointCount));
  for (std::size_t v = 0; v < rig.size(); ++v) {
    CameraModel cam = rig[v];
    if (cam.width != width || cam.height != height) cam = cam.scaled_to(width, height);
    for (int j = 0; j < kJointCount; ++j) out[v][j] = project(cam, skeleton.joints[j]);
  }
  return out;
}

namespace {

// Ghost center placed so that the corrupted argmax pixel sits at least
// shift_min away from the true projection even after grid quantization.
Vec2 ghost_center(Rng& rng, const Vec2& gt, const CorruptionSpec& spec, int width,
                  int height) {
  const double lo = 1.0, hi_x = width - 2.0, hi_y = height - 2.0;
  double length = rng.uniform(spec.ghost_shift_min_px, spec.ghost_shift_max_px);
  double phi = rng.uniform(0.0, 2.0 * kPi);
  Vec2 dirs[3];
  dirs[0] = Vec2(std::cos(phi), std::sin(phi));
  dirs[1] = -dirs[0];
  Vec2 to_center(0.5 * (width - 1) - gt.x(), 0.5 * (height - 1) - gt.y());
  dirs[2] = to_center.norm() > 1e-9 ? Vec2(to_center.normalized()) : Vec2(1.0, 0.0);
  for (const Vec2& dir : dirs) {
    for (int push = 0; push <= 4; ++push) {
      Vec2 c = gt + (length + push) * dir;
      Vec2 snapped(std::round(c.x()), std::round(c.y()));
      if ((snapped - gt).norm() >= spec.ghost_shift_min_px + 0.5 && c.x() >= lo &&
          c.x() <= hi_x && c.y() >= lo && c.y() <= hi_y)
        return c;
    }
  }
  return Vec2(std::clamp(gt.x() + length, lo, hi_x), std::clamp(gt.y(), lo, hi_y));
}

}  // namespace

MultiviewSample render_sample(const Skeleton3D& skeleton,
                              const std::vector<CameraModel>& rig,
                              int width, int height, double sigma,
                              const CorruptionSpec& corruption, std::uint64_t seed) {
  corruption.validate();
  const int views = static_cast<int>(rig.size());
  auto gt2d = project_skeleton(skeleton, rig, width, height);

  for (int j = 0; j < kJointCount; ++j) {
    int visible = 0;
    for (int v = 0; v < views; ++v) {
      CameraModel cam = rig[v];
      if (depth_in_camera(cam, skeleton.joints[j]) > 0) ++visible;
    }
    if (visible < 2) throw Error("joint without positive depth in at least 2 views");
  }

  Rng rng(seed);
  std::vector<std::vector<std::uint8_t>> draw(views,
                                              std::vector<std::uint8_t>(kJointCount, 0));
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    for (int v = 0; v < views; ++v)
      for (int j = 0; j < kJointCount; ++j)
        draw[v][j] = rng.uniform() < corruption.probability ? 1 : 0;
    ok = true;
    for (int j = 0; j < kJointCount && ok; ++j) {
      int clear = 0;
      for (int v = 0; v < views; ++v) clear += draw[v][j] ? 0 : 1;
      if (clear == 0) ok = false;
    }
  }
  if (!ok) throw TooFewVisibleViews();

  MultiviewSample sample;
  sample.skeleton = skeleton;
  sample.seed = seed;
  sample.clean.resize(views);
  sample.corrupted.resize(views);
  sample.occluded.assign(views, std::vector<std::uint8_t>(kJointCount, 0));
  for (int v = 0; v < views; ++v) {
    sample.clean[v].reserve(kJointCount);
    sample.corrupted[v].reserve(kJointCount);
    for (int j = 0; j < kJointCount; ++j) {
      HeatmapGrid clean = render_gaussian(gt2d[v][j], sigma, width, height);
      HeatmapGrid corrupt = clean;
      if (draw[v][j]) {
        double pick = rng.uniform();
        if (pick < corruption.blank_weight) {
          std::fill(corrupt.values.begin(), corrupt.values.end(), 0.0f);
        } else if (pick < corruption.blank_weight + corruption.ghost_weight) {
          Vec2 center = ghost_center(rng, gt2d[v][j], corruption, width, height);
          double amp = rng.uniform(0.5, 0.9);
          corrupt = render_gaussian(center, sigma, width, height);
          for (auto& value : corrupt.values) value = static_cast<float>(amp * value);
        } else {
          for (auto& value : corrupt.values)
            value = static_cast<float>(rng.uniform(0.0, corruption.noise_amplitude));
        }
      }
      sample.occluded[v][j] = corrupt == clean ? 0 : 1;
      sample.clean[v].push_back(std::move(clean));
      sample.corrupted[v].push_back(std::move(corrupt));
    }
  }
  return sample;
}

std::uint64_t DatasetSpec::sample_seed(int index) const {
  return mix_seed(base_seed, static_cast<std::uint64_t>(index));
}

MultiviewSample generate_sample(const DatasetSpec& spec, int index) {
  std::uint64_t seed = spec.sample_seed(index);
  Skeleton3D pose = sample_pose(mix_seed(seed, 0), spec.pose_limits);
  return render_sample(pose, spec.rig, spec.width, spec.height, spec.sigma,
                       spec.corruption, mix_seed(seed, 1));
}

Dataset generate_dataset(const DatasetSpec& spec) {
  Dataset out;
  out.spec = spec;
  out.samples.reserve(spec.sample_count);
  for (int i = 0; i < spec.sample_count; ++i) out.samples.push_back(generate_sample(spec, i));
  return out;
}

namespace {

nlohmann::json corruption_to_json(const CorruptionSpec& c) {
  return nlohmann::json{{"probability", c.probability},
                        {"blank_weight", c.blank_weight},
                        {"ghost_weight", c.ghost_weight},
                        {"noise_weight", c.noise_weight},
                        {"ghost_shift_min_px", c.ghost_shift_min_px},
                        {"ghost_shift_max_px", c.ghost_shift_max_px},
                        {"noise_amplitude", c.noise_amplitude}};
}

CorruptionSpec corruption_from_json(const nlohmann::json& j) {
  CorruptionSpec c;
  c.probability = j.at("probability").get<double>();
  c.blank_weight = j.at("blank_weight").get<double>();
  c.ghost_weight = j.at("ghost_weight").get<double>();
  c.noise_weight = j.at("noise_weight").get<double>();
  c.ghost_shift_min_px = j.at("ghost_shift_min_px").get<double>();
  c.ghost_shift_max_px = j.at("ghost_shift_max_px").get<double>();
  c.noise_amplitude = j.at("noise_amplitude").get<double>();
  return c;
}

nlohmann::json limits_to_json(const PoseLimits& l) {
  return nlohmann::json{{"joint_angle_rad", l.joint_angle_rad},
                        {"bone_scale", l.bone_scale},
                        {"yaw_rad", l.yaw_rad},
                        {"disc_radius_m", l.disc_radius_m}};
}

PoseLimits limits_from_json(const nlohmann::json& j) {
  PoseLimits l;
  l.joint_angle_rad = j.at("joint_angle_rad").get<double>();
  l.bone_scale = j.at("bone_scale").get<double>();
  l.yaw_rad = j.at("yaw_rad").get<double>();
  l.disc_radius_m = j.at("disc_radius_m").get<double>();
  return l;
}

template <typename T>
void append_raw(std::vector<char>& buffer, const T* data, std::size_t count) {
  const char* bytes = reinterpret_cast<const char*>(data);
  buffer.insert(buffer.end(), bytes, bytes + count * sizeof(T));
}

std::size_t sample_payload_bytes(const DatasetSpec& spec) {
  std::size_t views = spec.rig.size();
  std::size_t grid = static_cast<std::size_t>(spec.width) * spec.height;
  return kJointCount * 3 * sizeof(double) +
         2 * views * kJointCount * grid * sizeof(float) + views * kJointCount;
}

}  // namespace

void write_dataset(const std::string& dir, const DatasetSpec& spec,
                   const SampleProvider& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  const std::size_t per_sample = sample_payload_bytes(spec);
  std::ofstream bf(fs::path(dir) / "samples.bin", std::ios::binary);
  if (!bf) throw Error("cannot write samples.bin in " + dir);

  std::vector<std::size_t> offsets;
  std::vector<std::uint64_t> seeds;
  std::vector<char> buffer;
  std::size_t written = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    MultiviewSample sample = samples.get(i);
    buffer.clear();
    buffer.reserve(per_sample);
    for (int j = 0; j < kJointCount; ++j) {
      double xyz[3] = {sample.skeleton.joints[j].x(), sample.skeleton.joints[j].y(),
                       sample.skeleton.joints[j].z()};
      append_raw(buffer, xyz, 3);
    }
    for (const auto& maps : {&sample.clean, &sample.corrupted})
      for (const auto& view : *maps)
        for (const auto& grid : view) append_raw(buffer, grid.values.data(), grid.size());
    for (const auto& view : sample.occluded) append_raw(buffer, view.data(), view.size());
    if (buffer.size() != per_sample) throw Error("sample payload size mismatch");
    bf.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    offsets.push_back(written);
    seeds.push_back(sample.seed);
    written += buffer.size();
  }
  bf.close();

  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["rig"] = nlohmann::json::parse(rig_to_json(spec.rig));
  manifest["resolution"] = {spec.width, spec.height};
  manifest["sigma"] = spec.sigma;
  manifest["corruption"] = corruption_to_json(spec.corruption);
  manifest["pose_limits"] = limits_to_json(spec.pose_limits);
  manifest["base_seed"] = spec.base_seed;
  manifest["sample_count"] = offsets.size();
  manifest["sample_seeds"] = seeds;
  manifest["payload"] = {{"file", "samples.bin"},
                         {"total_bytes", written},
                         {"offsets", offsets}};
  std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!mf) throw Error("cannot write manifest in " + dir);
  mf << manifest.dump(2);
}

void write_dataset(const std::string& dir, const Dataset& dataset) {
  write_dataset(dir, dataset.spec, MemorySampleProvider(dataset.samples));
}

namespace {

struct ManifestInfo {
  DatasetSpec spec;
  std::string payload_path;
  std::vector<std::size_t> offsets;
  std::vector<std::uint64_t> seeds;
  std::size_t sample_bytes = 0;
};

ManifestInfo load_manifest(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!mf) throw DatasetMissing("no manifest.json in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(mf);
  if (manifest.at("format_version").get<int>() != 1) throw FormatVersionMismatch();

  ManifestInfo info;
  DatasetSpec& spec = info.spec;
  spec.rig = rig_from_json(manifest.at("rig").dump());
  spec.width = manifest.at("resolution").at(0).get<int>();
  spec.height = manifest.at("resolution").at(1).get<int>();
  spec.sigma = manifest.at("sigma").get<double>();
  spec.corruption = corruption_from_json(manifest.at("corruption"));
  spec.pose_limits = limits_from_json(manifest.at("pose_limits"));
  spec.base_seed = manifest.at("base_seed").get<std::uint64_t>();
  spec.sample_count = manifest.at("sample_count").get<int>();

  const auto& payload_info = manifest.at("payload");
  info.payload_path =
      (fs::path(dir) / payload_info.at("file").get<std::string>()).string();
  info.offsets = payload_info.at("offsets").get<std::vector<std::size_t>>();
  info.seeds = manifest.at("sample_seeds").get<std::vector<std::uint64_t>>();
  info.sample_bytes = sample_payload_bytes(spec);
  if (info.offsets.size() != static_cast<std::size_t>(spec.sample_count) ||
      info.seeds.size() != info.offsets.size())
    throw TruncatedPayload("manifest offset/seed table inconsistent");

  std::size_t expected = payload_info.at("total_bytes").get<std::size_t>();
  std::ifstream bf(info.payload_path, std::ios::binary | std::ios::ate);
  if (!bf) throw TruncatedPayload("missing payload file");
  std::size_t file_size = static_cast<std::size_t>(bf.tellg());
  if (file_size != expected || expected != info.sample_bytes * info.offsets.size())
    throw TruncatedPayload();
  for (std::size_t off : info.offsets)
    if (off + info.sample_bytes > file_size) throw TruncatedPayload();
  return info;
}

MultiviewSample parse_sample(const DatasetSpec& spec, const char* p, std::uint64_t seed) {
  const std::size_t views = spec.rig.size();
  const std::size_t grid = static_cast<std::size_t>(spec.width) * spec.height;
  MultiviewSample sample;
  sample.seed = seed;
  for (int j = 0; j < kJointCount; ++j) {
    double xyz[3];
    std::memcpy(xyz, p, sizeof(xyz));
    p += sizeof(xyz);
    sample.skeleton.joints[j] = Vec3(xyz[0], xyz[1], xyz[2]);
  }
  for (auto* maps : {&sample.clean, &sample.corrupted}) {
    maps->assign(views, {});
    for (std::size_t v = 0; v < views; ++v) {
      (*maps)[v].reserve(kJointCount);
      for (int j = 0; j < kJointCount; ++j) {
        HeatmapGrid g(spec.width, spec.height);
        std::memcpy(g.values.data(), p, grid * sizeof(float));
        p += grid * sizeof(float);
        (*maps)[v].push_back(std::move(g));
      }
    }
  }
  sample.occluded.assign(views, std::vector<std::uint8_t>(kJointCount));
  for (std::size_t v = 0; v < views; ++v) {
    std::memcpy(sample.occluded[v].data(), p, kJointCount);
    p += kJointCount;
  }
  return sample;
}

}  // namespace

DiskSampleProvider::DiskSampleProvider(const std::string& dir) {
  ManifestInfo info = load_manifest(dir);
  spec_ = std::move(info.spec);
  payload_path_ = std::move(info.payload_path);
  offsets_ = std::move(info.offsets);
  seeds_ = std::move(info.seeds);
  sample_bytes_ = info.sample_bytes;
}

MultiviewSample DiskSampleProvider::get(std::size_t index) const {
  std::ifstream bf(payload_path_, std::ios::binary);
  if (!bf) throw TruncatedPayload("missing payload file");
  bf.seekg(static_cast<std::streamoff>(offsets_.at(index)));
  std::vector<char> buffer(sample_bytes_);
  bf.read(buffer.data(), static_cast<std::streamsize>(sample_bytes_));
  if (static_cast<std::size_t>(bf.gcount()) != sample_bytes_) throw TruncatedPayload();
  return parse_sample(spec_, buffer.data(), seeds_.at(index));
}

Dataset read_dataset(const std::string& dir) {
  DiskSampleProvider provider(dir);
  Dataset dataset;
  dataset.spec = provider.spec();
  dataset.samples.reserve(provider.size());
  for (std::size_t i = 0; i < provider.size(); ++i) dataset.samples.push_back(provider.get(i));
  return dataset;
}

}  // namespace epifuse
