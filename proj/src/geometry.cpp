#include "cosemdepth/geometry.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace cosemdepth {

namespace {
constexpr double kZeroTranslationEps = 1e-9;
constexpr double kFrontEps = 1e-9;
}  // namespace

void CameraIntrinsics::validate() const {
  require(fx > 0.0 && fy > 0.0, "intrinsics: focal lengths must be positive");
  require(width > 0 && height > 0, "intrinsics: image size must be positive");
  require(cx >= 0.0 && cx < width, "intrinsics: cx out of image");
  require(cy >= 0.0 && cy < height, "intrinsics: cy out of image");
}

CameraIntrinsics CameraIntrinsics::symmetric_fov90(int width, int height) {
  CameraIntrinsics intr;
  intr.width = width;
  intr.height = height;
  intr.fx = width / 2.0;
  intr.fy = width / 2.0;
  intr.cx = (width - 1) / 2.0;
  intr.cy = (height - 1) / 2.0;
  return intr;
}

CameraIntrinsics CameraIntrinsics::downscaled(int factor) const {
  require(factor >= 1, "intrinsics: downscale factor must be >= 1");
  require(width % factor == 0 && height % factor == 0,
          "intrinsics: resolution not divisible by downscale factor");
  CameraIntrinsics out;
  out.width = width / factor;
  out.height = height / factor;
  out.fx = fx / factor;
  out.fy = fy / factor;
  // Integer pixel centers: block center (s*i + (s-1)/2) maps to i.
  out.cx = (cx - (factor - 1) / 2.0) / factor;
  out.cy = (cy - (factor - 1) / 2.0) / factor;
  return out;
}

void Pose::validate(double tol) const {
  require(std::fabs(orientation.norm() - 1.0) <= tol,
          "pose: orientation quaternion is not unit length");
}

MotionTransform MotionTransform::compose(const MotionTransform& other) const {
  MotionTransform out;
  out.rotation = rotation * other.rotation;
  out.translation = rotation * other.translation + translation;
  return out;
}

MotionTransform MotionTransform::inverse() const {
  MotionTransform out;
  out.rotation = rotation.transpose();
  out.translation = -(rotation.transpose() * translation);
  return out;
}

void MotionTransform::validate(double tol) const {
  const Eigen::Matrix3d err = rotation * rotation.transpose() - Eigen::Matrix3d::Identity();
  require(err.cwiseAbs().maxCoeff() <= tol, "motion: rotation is not orthonormal");
  require(std::fabs(rotation.determinant() - 1.0) <= tol,
          "motion: rotation determinant is not +1");
}

Eigen::Matrix3d matrix_from_quaternion(const Eigen::Quaterniond& q) {
  return q.normalized().toRotationMatrix();
}

Eigen::Quaterniond quaternion_from_matrix(const Eigen::Matrix3d& m) {
  Eigen::Quaterniond q(m);
  return q.normalized();
}

MotionTransform relative_transform(const Pose& pose_a, const Pose& pose_b) {
  pose_a.validate();
  pose_b.validate();
  const Eigen::Matrix3d ra_inv = matrix_from_quaternion(pose_a.orientation).transpose();
  MotionTransform out;
  out.translation = ra_inv * (pose_b.position - pose_a.position);
  out.rotation = ra_inv * matrix_from_quaternion(pose_b.orientation);
  return out;
}

Eigen::Vector2d project(const Eigen::Vector3d& point, const CameraIntrinsics& intr) {
  require(point.z() > 0.0, "project: point is behind the camera (z <= 0)");
  return {intr.fx * point.x() / point.z() + intr.cx,
          intr.fy * point.y() / point.z() + intr.cy};
}

Eigen::Vector3d unproject(double i, double j, double depth, const CameraIntrinsics& intr) {
  require(depth > 0.0, "unproject: depth must be positive");
  return {(i - intr.cx) * depth / intr.fx, (j - intr.cy) * depth / intr.fy, depth};
}

namespace {

// Bilinear tap with zero fill outside the image.
double sample_bilinear(const Tensor& src, double u, double v) {
  const int h = src.dim(0), w = src.dim(1);
  const int x0 = static_cast<int>(std::floor(u));
  const int y0 = static_cast<int>(std::floor(v));
  const double fu = u - x0, fv = v - y0;
  double acc = 0.0;
  for (int dy = 0; dy <= 1; ++dy) {
    for (int dx = 0; dx <= 1; ++dx) {
      const int x = x0 + dx, y = y0 + dy;
      if (x < 0 || x >= w || y < 0 || y >= h) continue;
      const double wgt = (dx ? fu : 1.0 - fu) * (dy ? fv : 1.0 - fv);
      acc += wgt * src.at(y, x);
    }
  }
  return acc;
}

}  // namespace

WarpResult warp_map(const Tensor& source, const DepthMap& target_depth,
                    const MotionTransform& motion, const CameraIntrinsics& intr,
                    Interp interp) {
  require(source.rank() == 2, "warp_map: source must be a 2D map");
  require(source.same_shape(target_depth.values),
          "warp_map: source and depth resolutions differ");
  require(target_depth.height() == intr.height && target_depth.width() == intr.width,
          "warp_map: intrinsics resolution mismatch");
  motion.validate();

  const int h = intr.height, w = intr.width;
  WarpResult out{Tensor({h, w}), Tensor({h, w})};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double z = target_depth.values.at(y, x);
      if (!(z > 0.0)) continue;
      const Eigen::Vector3d p = unproject(x, y, z, intr);
      const Eigen::Vector3d q = motion.rotation * p + motion.translation;
      if (q.z() <= kFrontEps) continue;
      const double u = intr.fx * q.x() / q.z() + intr.cx;
      const double v = intr.fy * q.y() / q.z() + intr.cy;
      if (u < 0.0 || u > w - 1.0 || v < 0.0 || v > h - 1.0) continue;
      if (interp == Interp::kNearest) {
        const int xi = static_cast<int>(std::lround(u));
        const int yi = static_cast<int>(std::lround(v));
        out.values.at(y, x) = source.at(yi, xi);
      } else {
        out.values.at(y, x) = sample_bilinear(source, u, v);
      }
      out.valid.at(y, x) = 1.0;
    }
  }
  return out;
}

ParallaxGeometry ParallaxGeometry::make(const MotionTransform& motion,
                                        const CameraIntrinsics& intr,
                                        ParallaxDenominator mode) {
  intr.validate();
  motion.validate();
  ParallaxGeometry g;
  g.intr = intr;
  g.motion = motion;
  g.mode = mode;
  g.zero_translation = motion.translation.norm() < kZeroTranslationEps;
  const int h = intr.height, w = intr.width;
  g.numer = Tensor({h, w});
  g.axis = Tensor({h, w});
  g.ray_x = Tensor({h, w});
  g.ray_y = Tensor({h, w});
  g.ray_z = Tensor({h, w});
  const Eigen::Matrix3d& r = motion.rotation;
  const Eigen::Vector3d& t = motion.translation;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::Vector3d d((x - intr.cx) / intr.fx, (y - intr.cy) / intr.fy, 1.0);
      const Eigen::Vector3d rd = r * d;
      g.ray_x.at(y, x) = rd.x();
      g.ray_y.at(y, x) = rd.y();
      g.ray_z.at(y, x) = rd.z();
      g.axis.at(y, x) = rd.z();
      if (rd.z() <= kFrontEps) {
        g.numer.at(y, x) = -1.0;  // behind the virtual camera, marks invalid
        continue;
      }
      // Centered virtual-camera pixel coordinates (depth-independent).
      const double iv = intr.fx * rd.x() / rd.z();
      const double jv = intr.fy * rd.y() / rd.z();
      const double nx = intr.fx * t.x() - t.z() * iv;
      const double ny = intr.fy * t.y() - t.z() * jv;
      g.numer.at(y, x) = std::sqrt(nx * nx + ny * ny);
    }
  }
  return g;
}

std::optional<double> ParallaxGeometry::parallax_at(int y, int x, double depth) const {
  const double n = numer.at(y, x);
  const double a = axis.at(y, x);
  if (n < 0.0 || a <= kFrontEps || depth <= 0.0) return std::nullopt;
  const double tz = motion.translation.z();
  const double zv = depth * a;
  const double denom = (mode == ParallaxDenominator::kAsPrinted)
                           ? depth * zv + tz
                           : depth * (zv + tz);
  if (denom <= 0.0) return std::nullopt;
  return n / denom;
}

std::optional<double> ParallaxGeometry::depth_at(int y, int x, double rho) const {
  const double n = numer.at(y, x);
  const double a = axis.at(y, x);
  if (n < 0.0 || a <= kFrontEps || zero_translation || rho <= 0.0) return std::nullopt;
  const double tz = motion.translation.z();
  if (mode == ParallaxDenominator::kAsPrinted) {
    // rho = n / (a z^2 + tz)  =>  z = sqrt((n / rho - tz) / a)
    const double s = (n / rho - tz) / a;
    if (s <= 0.0) return std::nullopt;
    return std::sqrt(s);
  }
  // rho = n / (z (a z + tz))  =>  a z^2 + tz z - n / rho = 0
  const double disc = tz * tz + 4.0 * a * n / rho;
  if (disc < 0.0) return std::nullopt;
  const double z = (-tz + std::sqrt(disc)) / (2.0 * a);
  if (z <= 0.0) return std::nullopt;
  return z;
}

ParallaxResult parallax_from_depth(const DepthMap& depth, const MotionTransform& motion,
                                   const CameraIntrinsics& intr, ParallaxDenominator mode) {
  require(depth.height() == intr.height && depth.width() == intr.width,
          "parallax_from_depth: resolution mismatch");
  const ParallaxGeometry g = ParallaxGeometry::make(motion, intr, mode);
  const int h = intr.height, w = intr.width;
  ParallaxResult out{ParallaxMap{Tensor({h, w})}, Tensor({h, w})};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto rho = g.parallax_at(y, x, depth.values.at(y, x));
      if (rho.has_value()) {
        out.parallax.values.at(y, x) = *rho;
        out.valid.at(y, x) = 1.0;
      }
    }
  }
  return out;
}

DepthFromParallaxResult depth_from_parallax(const ParallaxMap& parallax,
                                            const MotionTransform& motion,
                                            const CameraIntrinsics& intr, double max_depth,
                                            ParallaxDenominator mode) {
  require(parallax.height() == intr.height && parallax.width() == intr.width,
          "depth_from_parallax: resolution mismatch");
  require(max_depth > 0.0, "depth_from_parallax: max_depth must be positive");
  const ParallaxGeometry g = ParallaxGeometry::make(motion, intr, mode);
  const int h = intr.height, w = intr.width;
  DepthFromParallaxResult out{DepthMap{Tensor({h, w}), max_depth}, Tensor({h, w})};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double rho = parallax.values.at(y, x);
      require(rho >= 0.0, "depth_from_parallax: parallax must be non-negative");
      const auto z = g.depth_at(y, x, rho);
      if (z.has_value() && *z <= max_depth) {
        out.depth.values.at(y, x) = *z;
        out.valid.at(y, x) = 1.0;
      } else {
        out.depth.values.at(y, x) = max_depth;
      }
    }
  }
  return out;
}

namespace {

template <typename EmitLabel>
LabeledPointCloud build_cloud(const DepthMap& depth, const CameraIntrinsics& intr,
                              double max_depth_trunc, EmitLabel&& emit) {
  require(depth.height() == intr.height && depth.width() == intr.width,
          "point_cloud_from_maps: resolution mismatch");
  LabeledPointCloud cloud;
  for (int y = 0; y < intr.height; ++y) {
    for (int x = 0; x < intr.width; ++x) {
      const double z = depth.values.at(y, x);
      if (!(z > 0.0) || z >= max_depth_trunc) continue;
      cloud.points.push_back(unproject(x, y, z, intr));
      emit(cloud, y, x);
    }
  }
  return cloud;
}

}  // namespace

LabeledPointCloud point_cloud_from_maps(const DepthMap& depth, const Tensor& labels,
                                        const CameraIntrinsics& intr, double max_depth_trunc) {
  require(labels.same_shape(depth.values), "point_cloud_from_maps: label shape mismatch");
  return build_cloud(depth, intr, max_depth_trunc,
                     [&](LabeledPointCloud& c, int y, int x) {
                       c.labels.push_back(static_cast<int>(std::lround(labels.at(y, x))));
                     });
}

LabeledPointCloud point_cloud_from_maps(const DepthMap& depth,
                                        const std::vector<std::uint8_t>& rgb_interleaved,
                                        const CameraIntrinsics& intr, double max_depth_trunc) {
  require(static_cast<std::int64_t>(rgb_interleaved.size()) == depth.values.size() * 3,
          "point_cloud_from_maps: rgb buffer size mismatch");
  const int w = depth.width();
  return build_cloud(depth, intr, max_depth_trunc,
                     [&](LabeledPointCloud& c, int y, int x) {
                       const size_t o = (static_cast<size_t>(y) * w + x) * 3;
                       c.colors.push_back({rgb_interleaved[o], rgb_interleaved[o + 1],
                                           rgb_interleaved[o + 2]});
                     });
}

void save_point_cloud(const LabeledPointCloud& cloud, const std::string& path) {
  std::ofstream os(path);
  require(os.good(), "save_point_cloud: cannot open " + path);
  os << "points " << cloud.points.size() << "\n";
  os << "fields x y z label r g b\n";
  char buf[256];
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    const Eigen::Vector3d& p = cloud.points[i];
    const int label = i < cloud.labels.size() ? cloud.labels[i] : -1;
    int r = 0, g = 0, b = 0;
    if (i < cloud.colors.size()) {
      r = cloud.colors[i][0];
      g = cloud.colors[i][1];
      b = cloud.colors[i][2];
    }
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %d %d %d %d\n", p.x(), p.y(), p.z(),
                  label, r, g, b);
    os << buf;
  }
  require(os.good(), "save_point_cloud: write failed for " + path);
}

}  // namespace cosemdepth
