#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cosemdepth/geometry.hpp"
#include "cosemdepth/tensor.hpp"

namespace cosemdepth {

struct DepthMetrics {
  double rmse = 0.0;
  double abs_rel = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
};

struct SegMetrics {
  // IoU per class; absent classes (no pixels in either map) are flagged by
  // an empty optional rather than contributing zero.
  std::vector<std::optional<double>> per_class_iou;
  double miou = 0.0;  // mean over present classes
};

// Streaming accumulators so whole-split metrics aggregate pixel-wise across
// many frames.
struct DepthMetricAccumulator {
  double cap = 80.0;
  std::int64_t n = 0;
  double sum_sq = 0.0;
  double sum_rel = 0.0;
  std::int64_t n_d1 = 0, n_d2 = 0, n_d3 = 0;
  std::vector<double> rel_errors;  // kept for median statistics
  bool keep_rel_errors = false;

  void add(const Tensor& pred, const Tensor& gt);
  DepthMetrics result() const;
  double median_abs_rel() const;
};

struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;  // counts[gt * num_classes + pred]

  explicit ConfusionMatrix(int num_classes = 0);
  void add(const Tensor& pred_classes, const Tensor& gt_classes);
  SegMetrics result() const;
  double pixel_accuracy() const;
};

// Both maps are clamped to the cap first; RMSE, AbsRel, and the three
// delta-threshold accuracies (1.25, 1.25^2, 1.25^3) follow.
DepthMetrics depth_metrics(const Tensor& pred, const Tensor& gt, double max_depth_cap);
SegMetrics seg_metrics(const Tensor& pred_classes, const Tensor& gt_classes, int num_classes);

struct ClassMapping {
  std::map<int, int> target_of;          // source class -> target class
  std::vector<std::string> source_names;  // optional, for error messages

  int map_or_throw(int source) const;
};

// Element-wise relabel; throws when an unmapped label is encountered.
Tensor map_classes(const Tensor& seg_map, const ClassMapping& mapping);

// MidAir's 14 original labels reduced to the paper's 7-class set
// {Sky, Water, Land, Trees, Boulders, Road, Others}.
ClassMapping midair_to_seven();
// MidAir mapped into the 9-class common aerial set
// {Sky, Water, Trees, Land, Vehicle, Rocks, Road, Building, Others}.
ClassMapping midair_to_common9();
const std::vector<std::string>& midair_class_names();

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

struct RunRecord {
  std::string run_id;
  std::string dataset;
  std::string split;
  std::map<std::string, double> metrics;  // metric name -> value
};

// Writes summary.csv (run id, dataset, split, metric, value) plus static
// plot images (per-class IoU bars, depth error histogram) into out_dir.
void emit_report(const std::vector<RunRecord>& runs, const std::string& out_dir);
std::vector<RunRecord> parse_report(const std::string& summary_csv_path);

// Simple raster canvas used for report plots and qualitative grids.
struct Canvas {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // H*W*3

  Canvas(int w, int h, std::uint8_t r = 255, std::uint8_t g = 255, std::uint8_t b = 255);
  void fill_rect(int x0, int y0, int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  void draw_text(int x, int y, const std::string& text, std::uint8_t r, std::uint8_t g,
                 std::uint8_t b, int scale = 1);
  void blit_rgb(int x0, int y0, const std::vector<std::uint8_t>& rgb, int w, int h);
  void save(const std::string& path) const;
};

// Maps value in [lo, hi] to a viridis-like color ramp.
std::array<std::uint8_t, 3> colormap_value(double v, double lo, double hi);

}  // namespace cosemdepth
