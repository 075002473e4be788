// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "epifuse/fusion.hpp"
#include "epifuse/geometry.hpp"
#include "epifuse/heatmap.hpp"

namespace epifuse {

inline constexpr int kJointCount = 15;

enum JointId : int {
  kRoot = 0, kBelly, kNeck,
  kLeftHip, kRightHip, kLeftKnee, kRightKnee, kLeftAnkle, kRightAnkle,
  kLeftShoulder, kRightShoulder, kLeftElbow, kRightElbow, kLeftWrist, kRightWrist,
};

const char* joint_name(int joint);
// Left/right pairs collapse onto one type (root, belly, neck, hip, knee,
// ankle, shoulder, elbow, wrist).
const char* joint_type_name(int joint);
const std::vector<std::string>& joint_type_names();  // 9 entries, fixed order
int joint_type_index(int joint);

struct Skeleton3D {
  std::array<Vec3, kJointCount> joints;
  bool operator==(const Skeleton3D& other) const;
};

// Standing pose with the arms spread; joint coordinates are dyadic so that
// forward kinematics with identity transforms reproduces them bit-exactly.
const Skeleton3D& template_skeleton();
// (child, parent) bone list of the kinematic tree, topologically ordered.
const std::vector<std::pair<int, int>>& skeleton_bones();

struct PoseLimits {
  double joint_angle_rad = 0.25;   // per-bone random rotation limit
  double bone_scale = 0.10;        // bone lengths scaled by [1-s, 1+s]
  double yaw_rad = 6.283185307179586;  // global rotation about the vertical axis
  double disc_radius_m = 0.15;     // root translation within a horizontal disc
};

// Deterministic per seed; zero limits reproduce the template exactly.
Skeleton3D sample_pose(std::uint64_t seed, const PoseLimits& limits = {});

// Cameras evenly spaced in azimuth on a circle, alternating over the given
// heights, each looking at (0, 0, 1.0 m) with world-up; fx = fy = focal and
// the principal point at the image center.
std::vector<CameraModel> build_rig(int n, double radius_m,
                                   const std::vector<double>& heights_m,
                                   int width, int height, double focal_px);

struct CorruptionSpec {
  double probability = 0.203;      // per (view, joint)
  double blank_weight = 0.3;
  double ghost_weight = 0.5;
  double noise_weight = 0.2;
  double ghost_shift_min_px = 8.0;
  double ghost_shift_max_px = 16.0;
  double noise_amplitude = 0.3;
  void validate() const;
};

struct MultiviewSample {
  Skeleton3D skeleton;
  std::vector<std::vector<HeatmapGrid>> clean;      // [view][joint]
  std::vector<std::vector<HeatmapGrid>> corrupted;  // [view][joint]
  std::vector<std::vector<std::uint8_t>> occluded;  // [view][joint]
  std::uint64_t seed = 0;
};

// Clean heatmaps are Gaussians at the projected joints; occluded entries are
// blanked, ghost-shifted or replaced with a noise floor, and the flag records
// whether the map actually changed. Throws TooFewVisibleViews when a joint
// keeps being drawn occluded in every view after 100 attempts.
MultiviewSample render_sample(const Skeleton3D& skeleton,
                              const std::vector<CameraModel>& rig,
                              int width, int height, double sigma,
                              const CorruptionSpec& corruption, std::uint64_t seed);

// Dataset parameters: every byte of every sample is a pure function
// of these fields.
struct DatasetSpec {
  std::vector<CameraModel> rig;
  int width = 64;
  int height = 64;
  double sigma = 2.0;
  CorruptionSpec corruption;
  PoseLimits pose_limits;
  std::uint64_t base_seed = 7;
  int sample_count = 0;

  std::uint64_t sample_seed(int index) const;
};

MultiviewSample generate_sample(const DatasetSpec& spec, int index);

struct Dataset {
  DatasetSpec spec;
  std::vector<MultiviewSample> samples;
};

Dataset generate_dataset(const DatasetSpec& spec);

// Deterministic random access to samples. Implementations hold the samples,
// regenerate them from a DatasetSpec, or read them lazily from disk.
class SampleProvider {
 public:
  virtual ~SampleProvider() = default;
  virtual std::size_t size() const = 0;
  virtual MultiviewSample get(std::size_t index) const = 0;
};

class MemorySampleProvider : public SampleProvider {
 public:
  explicit MemorySampleProvider(std::vector<MultiviewSample> samples)
      : samples_(std::move(samples)) {}
  std::size_t size() const override { return samples_.size(); }
  MultiviewSample get(std::size_t index) const override { return samples_.at(index); }

 private:
  std::vector<MultiviewSample> samples_;
};

// Streams samples straight from the generator; `begin` offsets into the
// dataset (e.g. to address a train/validation split without materializing it).
class GeneratingSampleProvider : public SampleProvider {
 public:
  GeneratingSampleProvider(DatasetSpec spec, int begin, int count)
      : spec_(std::move(spec)), begin_(begin), count_(count) {}
  std::size_t size() const override { return count_; }
  MultiviewSample get(std::size_t index) const override {
    return generate_sample(spec_, begin_ + static_cast<int>(index));
  }

 private:
  DatasetSpec spec_;
  int begin_;
  int count_;
};

// Reads one sample at a time from a dataset directory.
class DiskSampleProvider : public SampleProvider {
 public:
  explicit DiskSampleProvider(const std::string& dir);
  std::size_t size() const override { return offsets_.size(); }
  MultiviewSample get(std::size_t index) const override;
  const DatasetSpec& spec() const { return spec_; }

 private:
  DatasetSpec spec_;
  std::string payload_path_;
  std::vector<std::size_t> offsets_;
  std::vector<std::uint64_t> seeds_;
  std::size_t sample_bytes_ = 0;
};

// Directory layout: manifest.json + samples.bin (skeleton float64, heatmaps
// little-endian float32 view-major/joint-major/row-major, flags u8). Samples
// are streamed one at a time, so arbitrarily large datasets can be written.
void write_dataset(const std::string& dir, const DatasetSpec& spec,
                   const SampleProvider& samples);
void write_dataset(const std::string& dir, const Dataset& dataset);
Dataset read_dataset(const std::string& dir);

// Ground-truth 2D projections (heatmap coordinates) of a skeleton.
std::vector<std::vector<Vec2>> project_skeleton(const Skeleton3D& skeleton,
                                                const std::vector<CameraModel>& rig,
                                                int width, int height);

}  // namespace epifuse
