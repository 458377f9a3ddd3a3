#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <thread>

#include "cosemdepth/png_io.hpp"
#include "cosemdepth/synthgen.hpp"

namespace cosemdepth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string frame_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d.png", index);
  return buf;
}

json intrinsics_json(const CameraIntrinsics& intr) {
  return {{"fx", intr.fx}, {"fy", intr.fy}, {"cx", intr.cx},
          {"cy", intr.cy}, {"width", intr.width}, {"height", intr.height}};
}

CameraIntrinsics intrinsics_from_json(const json& j) {
  CameraIntrinsics intr;
  intr.fx = j.at("fx").get<double>();
  intr.fy = j.at("fy").get<double>();
  intr.cx = j.at("cx").get<double>();
  intr.cy = j.at("cy").get<double>();
  intr.width = j.at("width").get<int>();
  intr.height = j.at("height").get<int>();
  intr.validate();
  return intr;
}

}  // namespace

void write_trajectory(const std::string& root, int trajectory_id,
                      const std::vector<FrameSample>& samples, DatasetMeta meta) {
  require(!samples.empty(), "write_trajectory: no samples");
  const int h = samples.front().intrinsics.height;
  const int w = samples.front().intrinsics.width;
  for (const FrameSample& s : samples) {
    require(s.intrinsics.height == h && s.intrinsics.width == w,
            "write_trajectory: inconsistent resolutions within the trajectory");
    require(static_cast<int>(s.depth.height()) == h && static_cast<int>(s.seg.dim(0)) == h,
            "write_trajectory: map resolution mismatch");
  }
  if (meta.depth_scale <= 0.0) meta.depth_scale = meta.max_depth / 65535.0;

  const fs::path dir = fs::path(root) / ("trajectory_" + std::to_string(trajectory_id));
  fs::create_directories(dir / "rgb");
  fs::create_directories(dir / "depth");
  fs::create_directories(dir / "seg");

  std::ofstream poses(dir / "poses.csv");
  require(poses.good(), "write_trajectory: cannot write poses.csv");
  poses << "frame,x,y,z,qw,qx,qy,qz\n";
  char line[512];

  for (const FrameSample& s : samples) {
    write_png_rgb8((dir / "rgb" / frame_name(s.frame_index)).string(), w, h, s.rgb);

    std::vector<std::uint16_t> q(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = std::round(s.depth.values.at(y, x) / meta.depth_scale);
        q[static_cast<size_t>(y) * w + x] =
            static_cast<std::uint16_t>(std::min(65535.0, std::max(0.0, v)));
      }
    write_png_gray16((dir / "depth" / frame_name(s.frame_index)).string(), w, h, q);

    std::vector<std::uint8_t> seg(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        seg[static_cast<size_t>(y) * w + x] =
            static_cast<std::uint8_t>(std::lround(s.seg.at(y, x)));
    write_png_gray8((dir / "seg" / frame_name(s.frame_index)).string(), w, h, seg);

    const Pose& p = s.pose;
    std::snprintf(line, sizeof(line),
                  "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", s.frame_index,
                  p.position.x(), p.position.y(), p.position.z(), p.orientation.w(),
                  p.orientation.x(), p.orientation.y(), p.orientation.z());
    poses << line;
  }
  poses.close();

  json meta_j;
  meta_j["format_version"] = 1;
  meta_j["intrinsics"] = intrinsics_json(meta.intrinsics);
  meta_j["depth_scale"] = meta.depth_scale;
  meta_j["max_depth"] = meta.max_depth;
  json pal = json::array();
  for (const auto& c : meta.class_palette) pal.push_back(json::array({c[0], c[1], c[2]}));
  meta_j["class_palette"] = pal;
  json names = json::array();
  for (const auto& n : semantic_class_names()) names.push_back(n);
  meta_j["class_names"] = names;
  meta_j["frame_rate"] = meta.frame_rate;
  meta_j["seed"] = meta.seed;
  std::ofstream mf(dir / "meta.json");
  require(mf.good(), "write_trajectory: cannot write meta.json");
  mf << meta_j.dump(2) << "\n";
}

Trajectory read_trajectory(const std::string& trajectory_dir) {
  const fs::path dir(trajectory_dir);
  require(fs::exists(dir / "meta.json"),
          "read_trajectory: missing meta.json in " + trajectory_dir);

  Trajectory traj;
  {
    const std::string name = dir.filename().string();
    const auto us = name.rfind('_');
    if (us != std::string::npos) traj.id = std::atoi(name.c_str() + us + 1);
  }
  {
    std::ifstream mf(dir / "meta.json");
    json meta_j;
    mf >> meta_j;
    traj.meta.intrinsics = intrinsics_from_json(meta_j.at("intrinsics"));
    traj.meta.depth_scale = meta_j.at("depth_scale").get<double>();
    traj.meta.max_depth = meta_j.at("max_depth").get<double>();
    traj.meta.frame_rate = meta_j.value("frame_rate", 20.0);
    traj.meta.seed = meta_j.value("seed", 0ull);
    if (meta_j.contains("class_palette")) {
      const json& pal = meta_j.at("class_palette");
      for (size_t i = 0; i < std::min<size_t>(pal.size(), kNumSemanticClasses); ++i)
        traj.meta.class_palette[i] = {pal[i].at(0).get<std::uint8_t>(),
                                      pal[i].at(1).get<std::uint8_t>(),
                                      pal[i].at(2).get<std::uint8_t>()};
    }
  }

  std::ifstream poses(dir / "poses.csv");
  require(poses.good(), "read_trajectory: missing poses.csv in " + trajectory_dir);
  std::string header;
  std::getline(poses, header);
  require(header == "frame,x,y,z,qw,qx,qy,qz",
          "read_trajectory: unexpected poses.csv header in " + trajectory_dir);

  const int w = traj.meta.intrinsics.width;
  const int h = traj.meta.intrinsics.height;
  std::string line;
  while (std::getline(poses, line)) {
    if (line.empty()) continue;
    FrameSample s;
    Pose& p = s.pose;
    double qw, qx, qy, qz;
    const int got =
        std::sscanf(line.c_str(), "%d,%lg,%lg,%lg,%lg,%lg,%lg,%lg", &s.frame_index,
                    &p.position.x(), &p.position.y(), &p.position.z(), &qw, &qx, &qy, &qz);
    require(got == 8, "read_trajectory: malformed poses.csv row '" + line + "'");
    p.orientation = Eigen::Quaterniond(qw, qx, qy, qz);
    s.intrinsics = traj.meta.intrinsics;

    const std::string fname = frame_name(s.frame_index);
    const std::string where = " (frame " + std::to_string(s.frame_index) + " of " +
                              trajectory_dir + ")";

    const PngImage rgb = read_png((dir / "rgb" / fname).string());
    require(rgb.width == w && rgb.height == h && rgb.channels == 3 && rgb.bit_depth == 8,
            "read_trajectory: bad rgb image" + where);
    s.rgb = rgb.data8;

    const PngImage dep = read_png((dir / "depth" / fname).string());
    require(dep.width == w && dep.height == h && dep.channels == 1 && dep.bit_depth == 16,
            "read_trajectory: bad depth image" + where);
    s.depth = DepthMap{Tensor({h, w}), traj.meta.max_depth};
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::uint16_t q = dep.data16[static_cast<size_t>(y) * w + x];
        // The top code is the far-plane sentinel and decodes to max_depth
        // exactly, which keeps the sky/depth coupling intact after a round
        // trip through the quantized format.
        s.depth.values.at(y, x) =
            q == 65535 ? traj.meta.max_depth : q * traj.meta.depth_scale;
      }

    const PngImage seg = read_png((dir / "seg" / fname).string());
    require(seg.width == w && seg.height == h && seg.channels == 1 && seg.bit_depth == 8,
            "read_trajectory: bad seg image" + where);
    s.seg = Tensor({h, w});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        s.seg.at(y, x) = static_cast<double>(seg.data8[static_cast<size_t>(y) * w + x]);

    traj.frames.push_back(std::move(s));
  }
  require(!traj.frames.empty(), "read_trajectory: no frames in " + trajectory_dir);
  return traj;
}

std::vector<Trajectory> read_dataset(const std::string& root) {
  require(fs::exists(root), "read_dataset: no such directory " + root);
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() &&
        entry.path().filename().string().rfind("trajectory_", 0) == 0)
      dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  require(!dirs.empty(), "read_dataset: no trajectory_* directories under " + root);
  std::vector<Trajectory> out;
  for (const auto& d : dirs) out.push_back(read_trajectory(d.string()));
  return out;
}

void generate_dataset(const GenerateOptions& opts, const std::string& root) {
  opts.scene.validate();
  opts.trajectory.validate();
  opts.intrinsics.validate();

  const std::vector<Pose> poses = generate_trajectory(opts.trajectory);
  std::vector<FrameSample> frames(poses.size());

  // Frames render independently; output is a pure function of (scene, pose),
  // so the worker count cannot change a single byte of the result.
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned workers = std::min<unsigned>(hw, static_cast<unsigned>(poses.size()));
  std::vector<std::thread> pool;
  std::atomic<size_t> next{0};
  for (unsigned t = 0; t < workers; ++t) {
    pool.emplace_back([&]() {
      for (size_t i = next.fetch_add(1); i < poses.size(); i = next.fetch_add(1)) {
        frames[i] = render_frame(opts.scene, poses[i], opts.intrinsics, opts.max_depth);
        frames[i].frame_index = static_cast<int>(i);
      }
    });
  }
  for (auto& th : pool) th.join();

  if (opts.apply_median && opts.median_window > 1) {
    for (FrameSample& f : frames) {
      f.depth.values = median_filter(f.depth.values, opts.median_window);
      f.seg = median_filter(f.seg, opts.median_window);
      // Re-impose the far-plane sentinel on majority-sky windows; the
      // converse direction (depth at max_depth under a non-sky label) cannot
      // occur with the lower-median convention.
      for (int y = 0; y < f.intrinsics.height; ++y)
        for (int x = 0; x < f.intrinsics.width; ++x)
          if (f.seg.at(y, x) == static_cast<double>(kSky))
            f.depth.values.at(y, x) = opts.max_depth;
    }
  }

  // Consecutive views must overlap; otherwise the parallax supervision is
  // meaningless.
  for (size_t i = 1; i < frames.size(); ++i) {
    const MotionTransform motion = relative_transform(frames[i - 1].pose, frames[i].pose);
    const WarpResult warped = warp_map(frames[i - 1].seg, frames[i].depth, motion,
                                       opts.intrinsics, Interp::kNearest);
    double frac = 0.0;
    for (std::int64_t k = 0; k < warped.valid.size(); ++k) frac += warped.valid[k];
    frac /= static_cast<double>(warped.valid.size());
    require(frac > 0.3, "generate_dataset: consecutive frames " + std::to_string(i - 1) +
                            "," + std::to_string(i) + " overlap below 0.3");
  }

  DatasetMeta meta;
  meta.intrinsics = opts.intrinsics;
  meta.max_depth = opts.max_depth;
  meta.class_palette = opts.scene.class_palette;
  meta.frame_rate = opts.trajectory.frame_rate;
  meta.seed = opts.scene.seed;
  write_trajectory(root, opts.trajectory_id, frames, meta);
}

}  // namespace cosemdepth
