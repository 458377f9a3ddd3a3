#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cosemdepth/geometry.hpp"
#include "cosemdepth/tensor.hpp"

namespace cosemdepth {

// Semantic class set shared by the generator and the evaluation kit.
enum SemanticClass : int {
  kSky = 0,
  kWater = 1,
  kTrees = 2,
  kLand = 3,
  kVehicle = 4,
  kRocks = 5,
  kRoad = 6,
  kBuilding = 7,
  kOthers = 8,
};
constexpr int kNumSemanticClasses = 9;
const std::array<std::string, kNumSemanticClasses>& semantic_class_names();
const std::array<std::array<std::uint8_t, 3>, kNumSemanticClasses>& default_class_palette();

enum class ShapeType { kBox, kSphere, kCone, kPlanePatch };

struct Primitive {
  ShapeType shape = ShapeType::kBox;
  Pose pose;                                    // local-to-world
  Eigen::Vector3d size = {1.0, 1.0, 1.0};       // box: full extents; sphere: x=radius;
                                                // cone: x=base radius, z=height;
                                                // plane-patch: x,y extents
  int class_index = kOthers;
  std::array<std::uint8_t, 3> color = {200, 200, 200};
};

struct TerrainSpec {
  bool enabled = true;
  double amplitude = 0.0;   // meters; 0 gives the flat plane z = 0
  double frequency = 0.1;   // cycles per meter
  int class_index = kLand;
  std::array<std::uint8_t, 3> color = {150, 120, 80};
};

struct SceneSpec {
  std::uint64_t seed = 0;
  TerrainSpec terrain;
  std::vector<Primitive> primitives;
  std::array<std::uint8_t, 3> sky_color = {135, 206, 235};
  std::array<std::array<std::uint8_t, 3>, kNumSemanticClasses> class_palette =
      default_class_palette();

  void validate() const;
  std::string to_json() const;
  static SceneSpec from_json(const std::string& json_text);
  static SceneSpec load(const std::string& path);
  // Deterministic toy world: undulating ground, a road strip, a water patch,
  // and an assortment of boxes/spheres/cones drawn from `seed`.
  static SceneSpec procedural(std::uint64_t seed);
};

enum class PitchMode { kNadir, kForward };

struct TrajectorySpec {
  std::vector<Pose> waypoints;
  int frame_count = 2;
  double frame_rate = 20.0;  // Hz
  PitchMode pitch_mode = PitchMode::kNadir;

  void validate() const;
  // Smooth sweep across the procedural scene at the given altitude.
  static TrajectorySpec procedural(std::uint64_t seed, PitchMode mode, int frame_count,
                                   double altitude);
};

struct FrameSample {
  std::vector<std::uint8_t> rgb;  // H*W*3 interleaved
  DepthMap depth;
  Tensor seg;  // (H, W) class indices stored as doubles
  Pose pose;
  CameraIntrinsics intrinsics;
  int frame_index = 0;
};

// Terrain height at a world (x, y) position; deterministic in scene.seed.
double terrain_height(const SceneSpec& scene, double x, double y);

// Per-pixel ray cast. Depth is the optical-axis z-coordinate of the nearest
// hit, not the Euclidean ray length. Misses (and hits beyond max_depth)
// become Sky with depth exactly max_depth.
FrameSample render_frame(const SceneSpec& scene, const Pose& pose,
                         const CameraIntrinsics& intr, double max_depth);

// Positions by natural cubic spline through the waypoints, orientations by
// piecewise spherical-linear interpolation; exactly frame_count poses.
std::vector<Pose> generate_trajectory(const TrajectorySpec& spec);

// Square-window median with clamp-to-edge padding. Even windows cover
// offsets [-(w-1)/2, w/2]; the lower median is returned, so class maps are
// never averaged.
Tensor median_filter(const Tensor& map, int window);

// ---------------------------------------------------------------------------
// On-disk dataset format
//
// root/trajectory_<id>/rgb/<frame:06>.png      8-bit RGB
//                     depth/<frame:06>.png     16-bit grayscale, meters = value * scale
//                     seg/<frame:06>.png       8-bit class index
//                     poses.csv                frame,x,y,z,qw,qx,qy,qz
//                     meta.json                intrinsics, depth scale, palette, frame rate, seed
// ---------------------------------------------------------------------------

struct DatasetMeta {
  CameraIntrinsics intrinsics;
  double depth_scale = 0.0;  // 0 selects max_depth / 65535 at write time
  double max_depth = 80.0;
  std::array<std::array<std::uint8_t, 3>, kNumSemanticClasses> class_palette =
      default_class_palette();
  double frame_rate = 20.0;
  std::uint64_t seed = 0;
};

struct Trajectory {
  int id = 0;
  DatasetMeta meta;
  std::vector<FrameSample> frames;
};

void write_trajectory(const std::string& root, int trajectory_id,
                      const std::vector<FrameSample>& samples, DatasetMeta meta);
Trajectory read_trajectory(const std::string& trajectory_dir);
std::vector<Trajectory> read_dataset(const std::string& root);

struct GenerateOptions {
  SceneSpec scene;
  TrajectorySpec trajectory;
  CameraIntrinsics intrinsics;   // default: symmetric 90 deg FOV
  double max_depth = 80.0;
  int median_window = 10;        // applied to depth and seg, not rgb
  bool apply_median = true;
  int trajectory_id = 0;
};

// Renders a full trajectory (parallel per frame, deterministic output) and
// writes it under `root`.
void generate_dataset(const GenerateOptions& opts, const std::string& root);

}  // namespace cosemdepth
