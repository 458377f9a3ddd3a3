#include "cosemdepth/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <random>
#include <thread>

namespace cosemdepth {

using nlohmann::json;

const std::array<std::string, kNumSemanticClasses>& semantic_class_names() {
  static const std::array<std::string, kNumSemanticClasses> names = {
      "Sky", "Water", "Trees", "Land", "Vehicle", "Rocks", "Road", "Building", "Others"};
  return names;
}

const std::array<std::array<std::uint8_t, 3>, kNumSemanticClasses>& default_class_palette() {
  static const std::array<std::array<std::uint8_t, 3>, kNumSemanticClasses> palette = {{
      {135, 206, 235},  // Sky
      {30, 110, 200},   // Water
      {30, 140, 40},    // Trees
      {150, 120, 80},   // Land
      {220, 40, 40},    // Vehicle
      {120, 120, 120},  // Rocks
      {70, 70, 70},     // Road
      {200, 160, 60},   // Building
      {230, 80, 200},   // Others
  }};
  return palette;
}

void SceneSpec::validate() const {
  for (const Primitive& p : primitives) {
    require(p.class_index >= 0 && p.class_index < kNumSemanticClasses,
            "scene: primitive class index out of [0,8]");
    require(p.size.minCoeff() > 0.0, "scene: primitive size must be positive");
    p.pose.validate();
  }
  require(terrain.class_index >= 0 && terrain.class_index < kNumSemanticClasses,
          "scene: terrain class index out of [0,8]");
}

void TrajectorySpec::validate() const {
  require(waypoints.size() >= 2, "trajectory: need at least 2 waypoints");
  require(frame_count >= 2, "trajectory: frame_count must be >= 2");
  require(frame_rate > 0.0, "trajectory: frame_rate must be positive");
  for (const Pose& p : waypoints) p.validate();
  // All-identical waypoints describe a hover and are allowed; partially
  // coincident adjacent waypoints leave the spline tangents ill-defined.
  bool all_same = true;
  bool any_adjacent_same = false;
  for (size_t i = 1; i < waypoints.size(); ++i) {
    const bool same = (waypoints[i].position - waypoints[i - 1].position).norm() < 1e-12;
    any_adjacent_same = any_adjacent_same || same;
    all_same = all_same && same;
  }
  require(all_same || !any_adjacent_same, "trajectory: coincident adjacent waypoints");
}

// ---------------------------------------------------------------------------
// terrain + primitive intersections
// ---------------------------------------------------------------------------

namespace {

struct TerrainWaves {
  double p1, p2, p3, p4;  // seeded phases
};

TerrainWaves terrain_waves(std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  auto u = [&rng]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 * M_PI; };
  return {u(), u(), u(), u()};
}

double height_at(const TerrainSpec& t, const TerrainWaves& w, double x, double y) {
  if (!t.enabled || t.amplitude == 0.0) return 0.0;
  const double f = 2.0 * M_PI * t.frequency;
  return t.amplitude * (0.55 * std::sin(f * x + w.p1) * std::cos(f * y + w.p2) +
                        0.30 * std::sin(1.7 * f * x + 0.9 * f * y + w.p3) +
                        0.15 * std::cos(2.3 * f * y - 1.1 * f * x + w.p4));
}

struct Hit {
  double s = 0.0;  // ray parameter == camera z-depth (direction has unit z in camera frame)
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  int class_index = 0;
  std::array<std::uint8_t, 3> color = {0, 0, 0};
};

constexpr double kRayEps = 1e-6;

// Each intersect_* works in the primitive's local frame and returns the
// smallest s > kRayEps, with the world-frame surface normal.

std::optional<double> slab_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                               const Eigen::Vector3d& half, int* axis_out, double* sign_out) {
  double s_near = -1e300, s_far = 1e300;
  int axis = 0;
  double sign = 1.0;
  for (int i = 0; i < 3; ++i) {
    if (std::fabs(d[i]) < 1e-14) {
      if (std::fabs(o[i]) > half[i]) return std::nullopt;
      continue;
    }
    double t0 = (-half[i] - o[i]) / d[i];
    double t1 = (half[i] - o[i]) / d[i];
    double face = -1.0;
    if (t0 > t1) {
      std::swap(t0, t1);
      face = 1.0;
    }
    if (t0 > s_near) {
      s_near = t0;
      axis = i;
      sign = face;
    }
    s_far = std::min(s_far, t1);
    if (s_near > s_far) return std::nullopt;
  }
  if (s_near <= kRayEps) return std::nullopt;  // origin inside or box behind
  *axis_out = axis;
  *sign_out = sign;
  return s_near;
}

std::optional<Hit> intersect_primitive(const Primitive& prim, const Eigen::Vector3d& origin,
                                       const Eigen::Vector3d& dir) {
  const Eigen::Matrix3d r = prim.pose.orientation.toRotationMatrix();
  const Eigen::Vector3d o = r.transpose() * (origin - prim.pose.position);
  const Eigen::Vector3d d = r.transpose() * dir;
  std::optional<double> s;
  Eigen::Vector3d n_local = Eigen::Vector3d::UnitZ();

  switch (prim.shape) {
    case ShapeType::kBox: {
      int axis = 0;
      double sign = 1.0;
      s = slab_box(o, d, prim.size * 0.5, &axis, &sign);
      if (s) {
        n_local = Eigen::Vector3d::Zero();
        n_local[axis] = sign;
      }
      break;
    }
    case ShapeType::kSphere: {
      const double rad = prim.size.x();
      const double a = d.squaredNorm();
      const double b = 2.0 * o.dot(d);
      const double c = o.squaredNorm() - rad * rad;
      const double disc = b * b - 4.0 * a * c;
      if (disc < 0.0) break;
      const double sq = std::sqrt(disc);
      double root = (-b - sq) / (2.0 * a);
      if (root <= kRayEps) root = (-b + sq) / (2.0 * a);
      if (root <= kRayEps) break;
      s = root;
      n_local = (o + root * d).normalized();
      break;
    }
    case ShapeType::kCone: {
      // Base disk at z = 0 with radius size.x, apex at (0, 0, size.z).
      const double rad = prim.size.x();
      const double hgt = prim.size.z();
      const double k = rad / hgt;
      // Lateral: x^2 + y^2 = k^2 (h - z)^2
      const double a = d.x() * d.x() + d.y() * d.y() - k * k * d.z() * d.z();
      const double m = hgt - o.z();
      const double b = 2.0 * (o.x() * d.x() + o.y() * d.y() + k * k * m * d.z());
      const double c = o.x() * o.x() + o.y() * o.y() - k * k * m * m;
      double best = 1e300;
      if (std::fabs(a) > 1e-14) {
        const double disc = b * b - 4.0 * a * c;
        if (disc >= 0.0) {
          const double sq = std::sqrt(disc);
          for (double root : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
            if (root <= kRayEps || root >= best) continue;
            const double z = o.z() + root * d.z();
            if (z < 0.0 || z > hgt) continue;
            best = root;
            const Eigen::Vector3d p = o + root * d;
            const double rl = std::hypot(p.x(), p.y());
            if (rl > 1e-12)
              n_local = Eigen::Vector3d(p.x() / rl, p.y() / rl, k).normalized();
          }
        }
      }
      // Base disk.
      if (std::fabs(d.z()) > 1e-14) {
        const double root = -o.z() / d.z();
        if (root > kRayEps && root < best) {
          const Eigen::Vector3d p = o + root * d;
          if (p.x() * p.x() + p.y() * p.y() <= rad * rad) {
            best = root;
            n_local = -Eigen::Vector3d::UnitZ();
          }
        }
      }
      if (best < 1e300) s = best;
      break;
    }
    case ShapeType::kPlanePatch: {
      if (std::fabs(d.z()) < 1e-14) break;
      const double root = -o.z() / d.z();
      if (root <= kRayEps) break;
      const Eigen::Vector3d p = o + root * d;
      if (std::fabs(p.x()) > prim.size.x() * 0.5 || std::fabs(p.y()) > prim.size.y() * 0.5)
        break;
      s = root;
      n_local = Eigen::Vector3d(0.0, 0.0, d.z() < 0.0 ? 1.0 : -1.0);
      break;
    }
  }
  if (!s) return std::nullopt;
  Hit hit;
  hit.s = *s;
  hit.normal = r * n_local;
  hit.class_index = prim.class_index;
  hit.color = prim.color;
  return hit;
}

std::optional<Hit> intersect_terrain(const SceneSpec& scene, const TerrainWaves& waves,
                                     const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                                     double s_max) {
  const TerrainSpec& t = scene.terrain;
  if (!t.enabled) return std::nullopt;
  auto make_hit = [&](double s) {
    Hit hit;
    hit.s = s;
    const Eigen::Vector3d p = origin + s * dir;
    const double e = 1e-4;
    const double gx = (height_at(t, waves, p.x() + e, p.y()) -
                       height_at(t, waves, p.x() - e, p.y())) / (2.0 * e);
    const double gy = (height_at(t, waves, p.x(), p.y() + e) -
                       height_at(t, waves, p.x(), p.y() - e)) / (2.0 * e);
    hit.normal = Eigen::Vector3d(-gx, -gy, 1.0).normalized();
    hit.class_index = t.class_index;
    hit.color = t.color;
    return hit;
  };

  if (t.amplitude == 0.0) {
    if (std::fabs(dir.z()) < 1e-14) return std::nullopt;
    const double s = -origin.z() / dir.z();
    if (s <= kRayEps || s >= s_max) return std::nullopt;
    return make_hit(s);
  }

  // March then bisect. f(s) = ray_z(s) - height(x(s), y(s)); camera above.
  auto f = [&](double s) {
    const Eigen::Vector3d p = origin + s * dir;
    return p.z() - height_at(t, waves, p.x(), p.y());
  };
  const double slope_bound =
      t.amplitude * 2.0 * M_PI * t.frequency * 2.5 * dir.head<2>().norm() + std::fabs(dir.z());
  const double step = std::min(0.25, 0.35 / std::max(slope_bound, 1.0));
  double s_prev = kRayEps;
  double f_prev = f(s_prev);
  if (f_prev <= 0.0) return std::nullopt;  // origin at/below terrain
  for (double s = step; s_prev < s_max; s += step) {
    const double sc = std::min(s, s_max);
    const double fc = f(sc);
    if (fc <= 0.0) {
      double lo = s_prev, hi = sc;
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0)
          lo = mid;
        else
          hi = mid;
      }
      return make_hit(0.5 * (lo + hi));
    }
    s_prev = sc;
    f_prev = fc;
    if (sc >= s_max) break;
  }
  return std::nullopt;
}

}  // namespace

double terrain_height(const SceneSpec& scene, double x, double y) {
  return height_at(scene.terrain, terrain_waves(scene.seed), x, y);
}

FrameSample render_frame(const SceneSpec& scene, const Pose& pose,
                         const CameraIntrinsics& intr, double max_depth) {
  scene.validate();
  pose.validate();
  intr.validate();
  require(max_depth > 0.0, "render_frame: max_depth must be positive");

  const TerrainWaves waves = terrain_waves(scene.seed);
  const Eigen::Matrix3d rot = pose.orientation.toRotationMatrix();
  const Eigen::Vector3d light = Eigen::Vector3d(0.35, 0.25, 0.9).normalized();
  const int h = intr.height, w = intr.width;

  FrameSample frame;
  frame.rgb.assign(static_cast<size_t>(h) * w * 3, 0);
  frame.depth = DepthMap{Tensor({h, w}), max_depth};
  frame.seg = Tensor({h, w});
  frame.pose = pose;
  frame.intrinsics = intr;

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Direction with unit z in the camera frame, so the ray parameter is
      // the optical-axis depth directly.
      const Eigen::Vector3d d_cam((x - intr.cx) / intr.fx, (y - intr.cy) / intr.fy, 1.0);
      const Eigen::Vector3d dir = rot * d_cam;
      std::optional<Hit> best;
      for (const Primitive& prim : scene.primitives) {
        auto hit = intersect_primitive(prim, pose.position, dir);
        if (hit && (!best || hit->s < best->s)) best = hit;
      }
      const double s_max = best ? std::min(best->s, max_depth) : max_depth;
      auto ground = intersect_terrain(scene, waves, pose.position, dir, s_max);
      if (ground && (!best || ground->s < best->s)) best = ground;

      const size_t o = (static_cast<size_t>(y) * w + x) * 3;
      if (!best || best->s >= max_depth) {
        frame.depth.values.at(y, x) = max_depth;
        frame.seg.at(y, x) = static_cast<double>(kSky);
        frame.rgb[o] = scene.sky_color[0];
        frame.rgb[o + 1] = scene.sky_color[1];
        frame.rgb[o + 2] = scene.sky_color[2];
        continue;
      }
      frame.depth.values.at(y, x) = best->s;
      frame.seg.at(y, x) = static_cast<double>(best->class_index);
      // Two-sided Lambert with a flat ambient term.
      const double lambert = std::fabs(best->normal.dot(light));
      const double shade = 0.35 + 0.65 * lambert;
      for (int c = 0; c < 3; ++c)
        frame.rgb[o + c] =
            static_cast<std::uint8_t>(std::min(255.0, std::round(best->color[c] * shade)));
    }
  }
  return frame;
}

// ---------------------------------------------------------------------------
// trajectories
// ---------------------------------------------------------------------------

namespace {

// Natural cubic spline second derivatives for knots at 0..n-1.
std::vector<double> spline_second_derivs(const std::vector<double>& y) {
  const int n = static_cast<int>(y.size());
  std::vector<double> m(static_cast<size_t>(n), 0.0);
  if (n < 3) return m;
  std::vector<double> a(static_cast<size_t>(n), 0.0), b(static_cast<size_t>(n), 0.0),
      c(static_cast<size_t>(n), 0.0), r(static_cast<size_t>(n), 0.0);
  for (int i = 1; i < n - 1; ++i) {
    a[i] = 1.0;
    b[i] = 4.0;
    c[i] = 1.0;
    r[i] = 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]);
  }
  // Thomas algorithm on the interior unknowns (natural ends: m0 = m_{n-1} = 0).
  for (int i = 2; i < n - 1; ++i) {
    const double f = a[i] / b[i - 1];
    b[i] -= f * c[i - 1];
    r[i] -= f * r[i - 1];
  }
  for (int i = n - 2; i >= 1; --i)
    m[i] = (r[i] - c[i] * (i + 1 <= n - 2 ? m[i + 1] : 0.0)) / b[i];
  return m;
}

double spline_eval(const std::vector<double>& y, const std::vector<double>& m, double u) {
  const int n = static_cast<int>(y.size());
  const int i = std::min(std::max(static_cast<int>(std::floor(u)), 0), n - 2);
  const double t = u - i;
  const double h = 1.0;
  return y[i] * (1.0 - t) + y[i + 1] * t +
         ((1.0 - t) * ((1.0 - t) * (1.0 - t) - 1.0) * m[i] + t * (t * t - 1.0) * m[i + 1]) *
             (h * h) / 6.0;
}

}  // namespace

std::vector<Pose> generate_trajectory(const TrajectorySpec& spec) {
  spec.validate();
  const int n = static_cast<int>(spec.waypoints.size());
  std::vector<double> xs, ys, zs;
  for (const Pose& p : spec.waypoints) {
    xs.push_back(p.position.x());
    ys.push_back(p.position.y());
    zs.push_back(p.position.z());
  }
  const auto mx = spline_second_derivs(xs);
  const auto my = spline_second_derivs(ys);
  const auto mz = spline_second_derivs(zs);

  std::vector<Pose> out;
  out.reserve(static_cast<size_t>(spec.frame_count));
  for (int k = 0; k < spec.frame_count; ++k) {
    const double u = spec.frame_count == 1
                         ? 0.0
                         : static_cast<double>(k) * (n - 1) / (spec.frame_count - 1);
    Pose p;
    p.position = {spline_eval(xs, mx, u), spline_eval(ys, my, u), spline_eval(zs, mz, u)};
    const int i = std::min(std::max(static_cast<int>(std::floor(u)), 0), n - 2);
    const double t = u - i;
    p.orientation = spec.waypoints[static_cast<size_t>(i)].orientation.slerp(
        t, spec.waypoints[static_cast<size_t>(i + 1)].orientation);
    p.orientation.normalize();
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// median filter
// ---------------------------------------------------------------------------

Tensor median_filter(const Tensor& map, int window) {
  require(map.rank() == 2, "median_filter: expects a 2D map");
  require(window >= 1, "median_filter: window must be >= 1");
  const int h = map.dim(0), w = map.dim(1);
  const int lo = -(window - 1) / 2;
  const int hi = window / 2;
  Tensor out({h, w});
  std::vector<double> buf(static_cast<size_t>(window) * window);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      size_t k = 0;
      for (int dy = lo; dy <= hi; ++dy) {
        const int yy = std::min(std::max(y + dy, 0), h - 1);
        for (int dx = lo; dx <= hi; ++dx) {
          const int xx = std::min(std::max(x + dx, 0), w - 1);
          buf[k++] = map.at(yy, xx);
        }
      }
      const size_t mid = (buf.size() - 1) / 2;  // lower median: an actual sample
      std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(mid), buf.end());
      out.at(y, x) = buf[mid];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// procedural scene / trajectory
// ---------------------------------------------------------------------------

SceneSpec SceneSpec::procedural(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto u01 = [&rng]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  auto uni = [&](double a, double b) { return a + (b - a) * u01(); };

  SceneSpec scene;
  scene.seed = seed;
  scene.terrain.enabled = true;
  scene.terrain.amplitude = 0.5;
  scene.terrain.frequency = 0.1;

  const auto& pal = scene.class_palette;
  auto tinted = [&](int cls, double k) {
    std::array<std::uint8_t, 3> c;
    for (int i = 0; i < 3; ++i)
      c[static_cast<size_t>(i)] = static_cast<std::uint8_t>(
          std::min(255.0, pal[static_cast<size_t>(cls)][static_cast<size_t>(i)] * k));
    return c;
  };
  auto ground_z = [&](double x, double y) { return terrain_height(scene, x, y); };

  // Road strip crossing the scene, slightly above the terrain peaks.
  {
    Primitive road;
    road.shape = ShapeType::kPlanePatch;
    road.class_index = kRoad;
    road.color = pal[kRoad];
    road.size = {60.0, 3.2, 1.0};
    const double yaw = uni(-0.35, 0.35);
    road.pose.position = {0.0, uni(-2.0, 2.0), scene.terrain.amplitude + 0.05};
    road.pose.orientation = Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()));
    scene.primitives.push_back(road);
  }
  // Water patch.
  {
    Primitive water;
    water.shape = ShapeType::kPlanePatch;
    water.class_index = kWater;
    water.color = pal[kWater];
    water.size = {uni(6.0, 10.0), uni(5.0, 8.0), 1.0};
    water.pose.position = {uni(-8.0, 8.0), uni(4.0, 9.0), scene.terrain.amplitude + 0.02};
    water.pose.orientation = Eigen::Quaterniond::Identity();
    scene.primitives.push_back(water);
  }
  // Buildings.
  for (int i = 0; i < 6; ++i) {
    Primitive b;
    b.shape = ShapeType::kBox;
    b.class_index = kBuilding;
    b.color = tinted(kBuilding, uni(0.8, 1.1));
    b.size = {uni(1.4, 3.0), uni(1.4, 3.0), uni(1.2, 2.8)};
    const double x = uni(-14.0, 14.0);
    const double y = uni(-10.0, -3.5);
    b.pose.position = {x, y, ground_z(x, y) + b.size.z() * 0.5 - 0.05};
    b.pose.orientation =
        Eigen::Quaterniond(Eigen::AngleAxisd(uni(0.0, M_PI), Eigen::Vector3d::UnitZ()));
    scene.primitives.push_back(b);
  }
  // Trees (cones).
  for (int i = 0; i < 10; ++i) {
    Primitive t;
    t.shape = ShapeType::kCone;
    t.class_index = kTrees;
    t.color = tinted(kTrees, uni(0.8, 1.2));
    const double radius = uni(0.7, 1.4);
    t.size = {radius, radius, uni(1.6, 3.2)};
    const double x = uni(-16.0, 16.0);
    const double y = uni(-12.0, 12.0);
    t.pose.position = {x, y, ground_z(x, y) - 0.05};
    scene.primitives.push_back(t);
  }
  // Rocks (spheres, partially buried).
  for (int i = 0; i < 6; ++i) {
    Primitive r;
    r.shape = ShapeType::kSphere;
    r.class_index = kRocks;
    r.color = tinted(kRocks, uni(0.7, 1.1));
    const double radius = uni(0.35, 0.9);
    r.size = {radius, radius, radius};
    const double x = uni(-16.0, 16.0);
    const double y = uni(-12.0, 12.0);
    r.pose.position = {x, y, ground_z(x, y) + radius * 0.5};
    scene.primitives.push_back(r);
  }
  // Vehicles on the road.
  for (int i = 0; i < 2; ++i) {
    Primitive v;
    v.shape = ShapeType::kBox;
    v.class_index = kVehicle;
    v.color = tinted(kVehicle, uni(0.8, 1.2));
    v.size = {1.0, 0.5, 0.4};
    v.pose.position = {uni(-10.0, 10.0), uni(-1.0, 1.0), scene.terrain.amplitude + 0.05 + 0.2};
    v.pose.orientation =
        Eigen::Quaterniond(Eigen::AngleAxisd(uni(-0.3, 0.3), Eigen::Vector3d::UnitZ()));
    scene.primitives.push_back(v);
  }
  // A couple of unclassified objects.
  for (int i = 0; i < 2; ++i) {
    Primitive o;
    o.shape = ShapeType::kBox;
    o.class_index = kOthers;
    o.color = pal[kOthers];
    o.size = {0.6, 0.6, 0.8};
    const double x = uni(-12.0, 12.0);
    const double y = uni(2.0, 12.0);
    o.pose.position = {x, y, ground_z(x, y) + 0.35};
    scene.primitives.push_back(o);
  }
  return scene;
}

TrajectorySpec TrajectorySpec::procedural(std::uint64_t seed, PitchMode mode, int frame_count,
                                          double altitude) {
  std::mt19937_64 rng(seed ^ 0xc2b2ae3d27d4eb4full);
  auto u01 = [&rng]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  auto uni = [&](double a, double b) { return a + (b - a) * u01(); };

  // Nadir: camera +z (forward) points at world -z; +x stays aligned with
  // world +x. Forward: pitched slightly below the horizon along +x.
  Eigen::Quaterniond base;
  if (mode == PitchMode::kNadir) {
    base = Eigen::Quaterniond(Eigen::AngleAxisd(M_PI, Eigen::Vector3d::UnitX()));
  } else {
    // Camera forward = world +x, camera down (+y) = world -z, then pitch down.
    Eigen::Matrix3d m;
    m.col(0) = Eigen::Vector3d(0.0, -1.0, 0.0);   // camera +x -> world -y
    m.col(1) = Eigen::Vector3d(0.0, 0.0, -1.0);   // camera +y -> world -z
    m.col(2) = Eigen::Vector3d(1.0, 0.0, 0.0);    // camera +z -> world +x
    base = Eigen::Quaterniond(m) *
           Eigen::Quaterniond(Eigen::AngleAxisd(-0.25, Eigen::Vector3d::UnitX()));
  }

  TrajectorySpec spec;
  spec.frame_count = frame_count;
  spec.pitch_mode = mode;
  const double heading = uni(-0.4, 0.4);
  const double speed = 16.0;                       // m/s at 20 FPS: 0.8 m per frame
  const double length = speed / spec.frame_rate * (frame_count - 1);
  const Eigen::Vector3d dir(std::cos(heading), std::sin(heading), 0.0);
  const Eigen::Vector3d start = -0.5 * length * dir + Eigen::Vector3d(0.0, uni(-2.0, 2.0), 0.0);
  const int n_way = 4;
  for (int i = 0; i < n_way; ++i) {
    const double f = static_cast<double>(i) / (n_way - 1);
    Pose p;
    p.position = start + f * length * dir;
    p.position.z() = altitude + uni(-0.25, 0.25);
    const double yaw = uni(-0.06, 0.06);
    p.orientation =
        (Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ())) * base)
            .normalized();
    spec.waypoints.push_back(p);
  }
  return spec;
}

// ---------------------------------------------------------------------------
// scene JSON
// ---------------------------------------------------------------------------

namespace {

const char* shape_name(ShapeType s) {
  switch (s) {
    case ShapeType::kBox: return "box";
    case ShapeType::kSphere: return "sphere";
    case ShapeType::kCone: return "cone";
    case ShapeType::kPlanePatch: return "plane-patch";
  }
  return "box";
}

ShapeType shape_from_name(const std::string& s) {
  if (s == "box") return ShapeType::kBox;
  if (s == "sphere") return ShapeType::kSphere;
  if (s == "cone") return ShapeType::kCone;
  if (s == "plane-patch") return ShapeType::kPlanePatch;
  throw std::invalid_argument("scene: unknown shape '" + s + "'");
}

json color_json(const std::array<std::uint8_t, 3>& c) {
  return json::array({c[0], c[1], c[2]});
}

std::array<std::uint8_t, 3> color_from_json(const json& j) {
  return {j.at(0).get<std::uint8_t>(), j.at(1).get<std::uint8_t>(), j.at(2).get<std::uint8_t>()};
}

}  // namespace

std::string SceneSpec::to_json() const {
  json j;
  j["seed"] = seed;
  j["terrain"] = {{"enabled", terrain.enabled},
                  {"amplitude", terrain.amplitude},
                  {"frequency", terrain.frequency},
                  {"class", terrain.class_index},
                  {"color", color_json(terrain.color)}};
  j["sky_color"] = color_json(sky_color);
  json pal = json::array();
  for (const auto& c : class_palette) pal.push_back(color_json(c));
  j["class_palette"] = pal;
  json prims = json::array();
  for (const Primitive& p : primitives) {
    json pj;
    pj["shape"] = shape_name(p.shape);
    pj["class"] = p.class_index;
    pj["color"] = color_json(p.color);
    pj["position"] = {p.pose.position.x(), p.pose.position.y(), p.pose.position.z()};
    pj["orientation"] = {p.pose.orientation.w(), p.pose.orientation.x(), p.pose.orientation.y(),
                         p.pose.orientation.z()};
    pj["size"] = {p.size.x(), p.size.y(), p.size.z()};
    prims.push_back(pj);
  }
  j["primitives"] = prims;
  return j.dump(2);
}

SceneSpec SceneSpec::from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  SceneSpec s;
  s.seed = j.value("seed", 0ull);
  if (j.contains("terrain")) {
    const json& t = j.at("terrain");
    s.terrain.enabled = t.value("enabled", true);
    s.terrain.amplitude = t.value("amplitude", 0.0);
    s.terrain.frequency = t.value("frequency", 0.1);
    s.terrain.class_index = t.value("class", static_cast<int>(kLand));
    if (t.contains("color")) s.terrain.color = color_from_json(t.at("color"));
  }
  if (j.contains("sky_color")) s.sky_color = color_from_json(j.at("sky_color"));
  if (j.contains("class_palette")) {
    const json& pal = j.at("class_palette");
    require(pal.size() == kNumSemanticClasses, "scene: class_palette must list 9 colors");
    for (size_t i = 0; i < kNumSemanticClasses; ++i) s.class_palette[i] = color_from_json(pal[i]);
  }
  for (const json& pj : j.value("primitives", json::array())) {
    Primitive p;
    p.shape = shape_from_name(pj.at("shape").get<std::string>());
    p.class_index = pj.at("class").get<int>();
    if (pj.contains("color")) p.color = color_from_json(pj.at("color"));
    const json& pos = pj.at("position");
    p.pose.position = {pos.at(0).get<double>(), pos.at(1).get<double>(), pos.at(2).get<double>()};
    if (pj.contains("orientation")) {
      const json& q = pj.at("orientation");
      p.pose.orientation = Eigen::Quaterniond(q.at(0).get<double>(), q.at(1).get<double>(),
                                              q.at(2).get<double>(), q.at(3).get<double>());
      p.pose.orientation.normalize();
    }
    const json& sz = pj.at("size");
    p.size = {sz.at(0).get<double>(), sz.at(1).get<double>(), sz.at(2).get<double>()};
    s.primitives.push_back(p);
  }
  s.validate();
  return s;
}

SceneSpec SceneSpec::load(const std::string& path) {
  std::ifstream is(path);
  require(is.good(), "scene: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return from_json(text);
}

}  // namespace cosemdepth
