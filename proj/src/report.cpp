#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "cosemdepth/evalkit.hpp"
#include "cosemdepth/png_io.hpp"
#include "cosemdepth/synthgen.hpp"

namespace cosemdepth {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// canvas
// ---------------------------------------------------------------------------

namespace {

// 5x7 glyphs, column-major bits (bit y set = pixel on), for digits, caps and
// a few symbols; enough for axis labels.
const std::map<char, std::array<std::uint8_t, 5>>& font() {
  static const std::map<char, std::array<std::uint8_t, 5>> f = {
      {'0', {0x3e, 0x51, 0x49, 0x45, 0x3e}}, {'1', {0x00, 0x42, 0x7f, 0x40, 0x00}},
      {'2', {0x42, 0x61, 0x51, 0x49, 0x46}}, {'3', {0x21, 0x41, 0x45, 0x4b, 0x31}},
      {'4', {0x18, 0x14, 0x12, 0x7f, 0x10}}, {'5', {0x27, 0x45, 0x45, 0x45, 0x39}},
      {'6', {0x3c, 0x4a, 0x49, 0x49, 0x30}}, {'7', {0x01, 0x71, 0x09, 0x05, 0x03}},
      {'8', {0x36, 0x49, 0x49, 0x49, 0x36}}, {'9', {0x06, 0x49, 0x49, 0x29, 0x1e}},
      {'A', {0x7e, 0x11, 0x11, 0x11, 0x7e}}, {'B', {0x7f, 0x49, 0x49, 0x49, 0x36}},
      {'C', {0x3e, 0x41, 0x41, 0x41, 0x22}}, {'D', {0x7f, 0x41, 0x41, 0x22, 0x1c}},
      {'E', {0x7f, 0x49, 0x49, 0x49, 0x41}}, {'F', {0x7f, 0x09, 0x09, 0x09, 0x01}},
      {'G', {0x3e, 0x41, 0x49, 0x49, 0x7a}}, {'H', {0x7f, 0x08, 0x08, 0x08, 0x7f}},
      {'I', {0x00, 0x41, 0x7f, 0x41, 0x00}}, {'J', {0x20, 0x40, 0x41, 0x3f, 0x01}},
      {'K', {0x7f, 0x08, 0x14, 0x22, 0x41}}, {'L', {0x7f, 0x40, 0x40, 0x40, 0x40}},
      {'M', {0x7f, 0x02, 0x0c, 0x02, 0x7f}}, {'N', {0x7f, 0x04, 0x08, 0x10, 0x7f}},
      {'O', {0x3e, 0x41, 0x41, 0x41, 0x3e}}, {'P', {0x7f, 0x09, 0x09, 0x09, 0x06}},
      {'Q', {0x3e, 0x41, 0x51, 0x21, 0x5e}}, {'R', {0x7f, 0x09, 0x19, 0x29, 0x46}},
      {'S', {0x46, 0x49, 0x49, 0x49, 0x31}}, {'T', {0x01, 0x01, 0x7f, 0x01, 0x01}},
      {'U', {0x3f, 0x40, 0x40, 0x40, 0x3f}}, {'V', {0x1f, 0x20, 0x40, 0x20, 0x1f}},
      {'W', {0x3f, 0x40, 0x38, 0x40, 0x3f}}, {'X', {0x63, 0x14, 0x08, 0x14, 0x63}},
      {'Y', {0x07, 0x08, 0x70, 0x08, 0x07}}, {'Z', {0x61, 0x51, 0x49, 0x45, 0x43}},
      {'.', {0x00, 0x60, 0x60, 0x00, 0x00}}, {'-', {0x08, 0x08, 0x08, 0x08, 0x08}},
      {'_', {0x40, 0x40, 0x40, 0x40, 0x40}}, {':', {0x00, 0x36, 0x36, 0x00, 0x00}},
      {'/', {0x20, 0x10, 0x08, 0x04, 0x02}}, {'%', {0x23, 0x13, 0x08, 0x64, 0x62}},
      {' ', {0x00, 0x00, 0x00, 0x00, 0x00}},
  };
  return f;
}

}  // namespace

Canvas::Canvas(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b)
    : width(w), height(h), pixels(static_cast<size_t>(w) * h * 3) {
  fill_rect(0, 0, w, h, r, g, b);
}

void Canvas::fill_rect(int x0, int y0, int w, int h, std::uint8_t r, std::uint8_t g,
                       std::uint8_t b) {
  for (int y = std::max(0, y0); y < std::min(height, y0 + h); ++y)
    for (int x = std::max(0, x0); x < std::min(width, x0 + w); ++x) {
      const size_t o = (static_cast<size_t>(y) * width + x) * 3;
      pixels[o] = r;
      pixels[o + 1] = g;
      pixels[o + 2] = b;
    }
}

void Canvas::draw_text(int x, int y, const std::string& text, std::uint8_t r, std::uint8_t g,
                       std::uint8_t b, int scale) {
  int cx = x;
  for (char raw : text) {
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
    auto it = font().find(c);
    if (it != font().end()) {
      for (int col = 0; col < 5; ++col)
        for (int row = 0; row < 7; ++row)
          if (it->second[static_cast<size_t>(col)] & (1 << row))
            fill_rect(cx + col * scale, y + row * scale, scale, scale, r, g, b);
    }
    cx += 6 * scale;
  }
}

void Canvas::blit_rgb(int x0, int y0, const std::vector<std::uint8_t>& rgb, int w, int h) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int tx = x0 + x, ty = y0 + y;
      if (tx < 0 || tx >= width || ty < 0 || ty >= height) continue;
      const size_t src = (static_cast<size_t>(y) * w + x) * 3;
      const size_t dst = (static_cast<size_t>(ty) * width + tx) * 3;
      pixels[dst] = rgb[src];
      pixels[dst + 1] = rgb[src + 1];
      pixels[dst + 2] = rgb[src + 2];
    }
}

void Canvas::save(const std::string& path) const {
  write_png_rgb8(path, width, height, pixels);
}

std::array<std::uint8_t, 3> colormap_value(double v, double lo, double hi) {
  double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
  t = std::min(1.0, std::max(0.0, t));
  // Compact viridis-like ramp: dark purple -> teal -> yellow.
  const double r = std::min(1.0, std::max(0.0, -0.3 + 1.8 * t * t));
  const double g = std::min(1.0, std::max(0.0, 0.05 + 0.95 * t));
  const double b = std::min(1.0, std::max(0.0, 0.45 + 0.5 * t - 1.1 * t * t));
  return {static_cast<std::uint8_t>(r * 255), static_cast<std::uint8_t>(g * 255),
          static_cast<std::uint8_t>(b * 255)};
}

// ---------------------------------------------------------------------------
// report emission
// ---------------------------------------------------------------------------

namespace {

void plot_metric_bars(const std::vector<RunRecord>& runs, const std::string& path) {
  // Collect per-class IoU metric names across runs.
  std::vector<std::string> keys;
  for (const RunRecord& r : runs)
    for (const auto& [k, v] : r.metrics)
      if (k.rfind("iou_", 0) == 0 && std::find(keys.begin(), keys.end(), k) == keys.end())
        keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  if (keys.empty()) keys = {"miou"};

  const int bar_w = 26, group_gap = 18, left = 60, bottom = 40, top = 30;
  const int plot_h = 180;
  const int width =
      left + static_cast<int>(keys.size()) * (static_cast<int>(runs.size()) * bar_w + group_gap) +
      20;
  Canvas canvas(std::max(width, 320), top + plot_h + bottom);
  const std::array<std::array<std::uint8_t, 3>, 4> colors = {
      {{70, 120, 200}, {220, 140, 60}, {90, 180, 90}, {180, 80, 160}}};

  canvas.fill_rect(left, top + plot_h, canvas.width - left - 10, 1, 0, 0, 0);
  for (int tick = 0; tick <= 4; ++tick) {
    const int y = top + plot_h - tick * plot_h / 4;
    char label[16];
    std::snprintf(label, sizeof(label), "%.2f", tick / 4.0);
    canvas.draw_text(8, y - 3, label, 0, 0, 0);
    canvas.fill_rect(left - 4, y, 4, 1, 0, 0, 0);
  }
  int x = left + 4;
  for (const std::string& key : keys) {
    for (size_t ri = 0; ri < runs.size(); ++ri) {
      auto it = runs[ri].metrics.find(key);
      if (it != runs[ri].metrics.end()) {
        const double v = std::min(1.0, std::max(0.0, it->second));
        const int h = static_cast<int>(std::round(v * plot_h));
        const auto& c = colors[ri % colors.size()];
        canvas.fill_rect(x, top + plot_h - h, bar_w - 4, h, c[0], c[1], c[2]);
      }
      x += bar_w;
    }
    canvas.draw_text(x - static_cast<int>(runs.size()) * bar_w, top + plot_h + 8,
                     key.substr(0, 10), 0, 0, 0);
    x += group_gap;
  }
  int ly = 8;
  for (size_t ri = 0; ri < runs.size(); ++ri) {
    const auto& c = colors[ri % colors.size()];
    canvas.fill_rect(left + static_cast<int>(ri) * 140, ly, 10, 10, c[0], c[1], c[2]);
    canvas.draw_text(left + static_cast<int>(ri) * 140 + 14, ly + 1,
                     runs[ri].run_id.substr(0, 18), 0, 0, 0);
  }
  canvas.save(path);
}

void plot_depth_bars(const std::vector<RunRecord>& runs, const std::string& path) {
  const std::vector<std::string> keys = {"rmse", "abs_rel", "delta1", "delta2", "delta3"};
  const int bar_w = 26, group_gap = 18, left = 60, bottom = 40, top = 30;
  const int plot_h = 180;
  double max_v = 1.0;
  for (const RunRecord& r : runs)
    for (const std::string& k : keys) {
      auto it = r.metrics.find(k);
      if (it != r.metrics.end()) max_v = std::max(max_v, it->second);
    }
  const int width =
      left + static_cast<int>(keys.size()) * (static_cast<int>(runs.size()) * bar_w + group_gap) +
      20;
  Canvas canvas(std::max(width, 320), top + plot_h + bottom);
  const std::array<std::array<std::uint8_t, 3>, 4> colors = {
      {{70, 120, 200}, {220, 140, 60}, {90, 180, 90}, {180, 80, 160}}};
  canvas.fill_rect(left, top + plot_h, canvas.width - left - 10, 1, 0, 0, 0);
  int x = left + 4;
  for (const std::string& key : keys) {
    for (size_t ri = 0; ri < runs.size(); ++ri) {
      auto it = runs[ri].metrics.find(key);
      if (it != runs[ri].metrics.end()) {
        const int h = static_cast<int>(std::round(it->second / max_v * plot_h));
        const auto& c = colors[ri % colors.size()];
        canvas.fill_rect(x, top + plot_h - h, bar_w - 4, h, c[0], c[1], c[2]);
      }
      x += bar_w;
    }
    canvas.draw_text(x - static_cast<int>(runs.size()) * bar_w, top + plot_h + 8, key, 0, 0, 0);
    x += group_gap;
  }
  canvas.save(path);
}

}  // namespace

void emit_report(const std::vector<RunRecord>& runs, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream os(fs::path(out_dir) / "summary.csv");
  require(os.good(), "emit_report: cannot write summary.csv");
  os << "run_id,dataset,split,metric,value\n";
  char line[512];
  for (const RunRecord& r : runs) {
    for (const auto& [k, v] : r.metrics) {
      std::snprintf(line, sizeof(line), "%s,%s,%s,%s,%.17g\n", r.run_id.c_str(),
                    r.dataset.c_str(), r.split.c_str(), k.c_str(), v);
      os << line;
    }
  }
  os.close();
  if (!runs.empty()) {
    plot_metric_bars(runs, (fs::path(out_dir) / "per_class_iou.png").string());
    plot_depth_bars(runs, (fs::path(out_dir) / "depth_metrics.png").string());
  }
}

std::vector<RunRecord> parse_report(const std::string& summary_csv_path) {
  std::ifstream is(summary_csv_path);
  require(is.good(), "parse_report: cannot open " + summary_csv_path);
  std::string line;
  std::getline(is, line);
  require(line == "run_id,dataset,split,metric,value", "parse_report: unexpected header");
  std::map<std::string, RunRecord> by_key;
  std::vector<std::string> order;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string run_id, dataset, split, metric, value;
    std::getline(ss, run_id, ',');
    std::getline(ss, dataset, ',');
    std::getline(ss, split, ',');
    std::getline(ss, metric, ',');
    std::getline(ss, value, ',');
    const std::string key = run_id + "|" + dataset + "|" + split;
    if (by_key.find(key) == by_key.end()) {
      by_key[key] = RunRecord{run_id, dataset, split, {}};
      order.push_back(key);
    }
    by_key[key].metrics[metric] = std::strtod(value.c_str(), nullptr);
  }
  std::vector<RunRecord> out;
  for (const std::string& k : order) out.push_back(by_key[k]);
  return out;
}

}  // namespace cosemdepth
