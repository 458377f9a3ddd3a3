#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cosemdepth/tensor.hpp"

namespace cosemdepth {

// Camera axis convention used across the whole project: +z forward along the
// optical axis, +x right, +y down. Pixel coordinates (i, j) are
// (column, row) with pixel centers at integer coordinates.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  void validate() const;
  // Symmetric pinhole camera with a 90 degree horizontal field of view:
  // fx = width / 2, principal point at the image center.
  static CameraIntrinsics symmetric_fov90(int width, int height);
  // Intrinsics of the same camera observed at a resolution downscaled by
  // `factor` (block centers stay aligned with the original pixel grid).
  CameraIntrinsics downscaled(int factor) const;
};

struct Pose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();  // camera-to-world

  void validate(double tol = 1e-6) const;
};

// Rigid transform taking coordinates in frame b to coordinates in frame a,
// i.e. X_a = rotation * X_b + translation.
struct MotionTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static MotionTransform identity() { return {}; }
  MotionTransform compose(const MotionTransform& other) const;
  MotionTransform inverse() const;
  void validate(double tol = 1e-6) const;
  bool near_zero_translation(double eps = 1e-9) const {
    return translation.norm() < eps;
  }
};

struct DepthMap {
  Tensor values;             // (H, W), meters
  double max_depth = 80.0;   // sentinel ceiling carried by sky pixels

  int height() const { return values.dim(0); }
  int width() const { return values.dim(1); }
};

struct ParallaxMap {
  Tensor values;  // (H, W), pixels of perceived motion

  int height() const { return values.dim(0); }
  int width() const { return values.dim(1); }
};

struct LabeledPointCloud {
  std::vector<Eigen::Vector3d> points;            // camera frame, meters
  std::vector<int> labels;                        // class index per point
  std::vector<std::array<std::uint8_t, 3>> colors;  // RGB per point
};

Eigen::Matrix3d matrix_from_quaternion(const Eigen::Quaterniond& q);
Eigen::Quaterniond quaternion_from_matrix(const Eigen::Matrix3d& m);

// Relative motion between two absolute poses per t = R_a^-1 (p_b - p_a),
// r = R_a^-1 R_b. The result maps frame-b camera coordinates to frame a.
MotionTransform relative_transform(const Pose& pose_a, const Pose& pose_b);

Eigen::Vector2d project(const Eigen::Vector3d& point, const CameraIntrinsics& intr);
Eigen::Vector3d unproject(double i, double j, double depth, const CameraIntrinsics& intr);

enum class Interp { kNearest, kBilinear };

struct WarpResult {
  Tensor values;  // (H, W); out-of-frame pixels carry the fill value 0
  Tensor valid;   // (H, W) 0/1 mask
};

// Samples `source` at the location each target pixel reprojects to:
// unproject with the target-frame depth, transform by `motion`
// (target -> source coordinates), project, then interpolate.
WarpResult warp_map(const Tensor& source, const DepthMap& target_depth,
                    const MotionTransform& motion, const CameraIntrinsics& intr,
                    Interp interp);

// The printed parallax equation divides by (z * z_V + t_z); the alternative
// reading z * (z_V + t_z) is selectable for experimentation.
enum class ParallaxDenominator { kAsPrinted, kDepthScaled };

// Per-pixel constants of the parallax relation for a fixed (motion, intr)
// pair. The virtual camera V shares the current frame's origin and the
// previous frame's orientation; its pixel coordinates do not depend on depth.
struct ParallaxGeometry {
  CameraIntrinsics intr;
  MotionTransform motion;
  ParallaxDenominator mode = ParallaxDenominator::kAsPrinted;
  bool zero_translation = false;
  Tensor numer;    // (H, W): sqrt((fx tx - tz i_V')^2 + (fy ty - tz j_V')^2)
  Tensor axis;     // (H, W): z_V / z, the virtual-frame depth per unit depth
  Tensor ray_x;    // (H, W): rotated ray components r*d
  Tensor ray_y;
  Tensor ray_z;    // equals `axis`

  static ParallaxGeometry make(const MotionTransform& motion,
                               const CameraIntrinsics& intr,
                               ParallaxDenominator mode = ParallaxDenominator::kAsPrinted);

  // Inverts the parallax relation for depth at one pixel. Returns nullopt for
  // degenerate pixels (behind the virtual camera, zero translation, rho = 0,
  // or non-positive solutions).
  std::optional<double> depth_at(int y, int x, double rho) const;
  // Forward parallax at one pixel; nullopt when the denominator is not
  // positive or the point falls behind the virtual camera.
  std::optional<double> parallax_at(int y, int x, double depth) const;
};

struct ParallaxResult {
  ParallaxMap parallax;
  Tensor valid;  // 0/1 mask; masked pixels carry parallax 0
};

struct DepthFromParallaxResult {
  DepthMap depth;
  Tensor valid;  // 0/1 mask; masked pixels are clamped to max_depth
};

ParallaxResult parallax_from_depth(const DepthMap& depth, const MotionTransform& motion,
                                   const CameraIntrinsics& intr,
                                   ParallaxDenominator mode = ParallaxDenominator::kAsPrinted);

DepthFromParallaxResult depth_from_parallax(const ParallaxMap& parallax,
                                            const MotionTransform& motion,
                                            const CameraIntrinsics& intr, double max_depth,
                                            ParallaxDenominator mode = ParallaxDenominator::kAsPrinted);

// One point per pixel with depth < max_depth_trunc, positioned by unproject.
LabeledPointCloud point_cloud_from_maps(const DepthMap& depth, const Tensor& labels,
                                        const CameraIntrinsics& intr, double max_depth_trunc);
LabeledPointCloud point_cloud_from_maps(const DepthMap& depth,
                                        const std::vector<std::uint8_t>& rgb_interleaved,
                                        const CameraIntrinsics& intr, double max_depth_trunc);

// ASCII point-cloud format: header lines (count, fields), one point per line.
void save_point_cloud(const LabeledPointCloud& cloud, const std::string& path);

}  // namespace cosemdepth
