#include "cosemdepth/evalkit.hpp"

#include <algorithm>
#include <cmath>

namespace cosemdepth {

void DepthMetricAccumulator::add(const Tensor& pred, const Tensor& gt) {
  require(pred.same_shape(gt), "depth_metrics: shape mismatch");
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    require(pred[i] > 0.0 && gt[i] > 0.0, "depth_metrics: depths must be positive");
    const double p = std::min(pred[i], cap);
    const double g = std::min(gt[i], cap);
    const double err = p - g;
    sum_sq += err * err;
    const double rel = std::fabs(err) / g;
    sum_rel += rel;
    if (keep_rel_errors) rel_errors.push_back(rel);
    const double ratio = std::max(p / g, g / p);
    if (ratio < 1.25) ++n_d1;
    if (ratio < 1.25 * 1.25) ++n_d2;
    if (ratio < 1.25 * 1.25 * 1.25) ++n_d3;
    ++n;
  }
}

DepthMetrics DepthMetricAccumulator::result() const {
  require(n > 0, "depth_metrics: no pixels accumulated");
  DepthMetrics m;
  const double dn = static_cast<double>(n);
  m.rmse = std::sqrt(sum_sq / dn);
  m.abs_rel = sum_rel / dn;
  m.delta1 = static_cast<double>(n_d1) / dn;
  m.delta2 = static_cast<double>(n_d2) / dn;
  m.delta3 = static_cast<double>(n_d3) / dn;
  // Threshold accuracies are monotone in the exponent by construction.
  require(m.delta1 <= m.delta2 && m.delta2 <= m.delta3, "depth_metrics: delta monotonicity");
  return m;
}

double DepthMetricAccumulator::median_abs_rel() const {
  require(keep_rel_errors && !rel_errors.empty(), "median_abs_rel: no samples kept");
  std::vector<double> v = rel_errors;
  const size_t mid = (v.size() - 1) / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  return v[mid];
}

DepthMetrics depth_metrics(const Tensor& pred, const Tensor& gt, double max_depth_cap) {
  DepthMetricAccumulator acc;
  acc.cap = max_depth_cap;
  acc.add(pred, gt);
  return acc.result();
}

ConfusionMatrix::ConfusionMatrix(int num_classes_)
    : num_classes(num_classes_),
      counts(static_cast<size_t>(num_classes_) * static_cast<size_t>(num_classes_), 0) {}

void ConfusionMatrix::add(const Tensor& pred_classes, const Tensor& gt_classes) {
  require(pred_classes.same_shape(gt_classes), "seg_metrics: shape mismatch");
  for (std::int64_t i = 0; i < pred_classes.size(); ++i) {
    const int p = static_cast<int>(std::lround(pred_classes[i]));
    const int g = static_cast<int>(std::lround(gt_classes[i]));
    require(p >= 0 && p < num_classes && g >= 0 && g < num_classes,
            "seg_metrics: class index out of range");
    ++counts[static_cast<size_t>(g) * num_classes + p];
  }
}

SegMetrics ConfusionMatrix::result() const {
  SegMetrics m;
  m.per_class_iou.assign(static_cast<size_t>(num_classes), std::nullopt);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::int64_t tp = counts[static_cast<size_t>(c) * num_classes + c];
    std::int64_t fp = 0, fn = 0;
    for (int o = 0; o < num_classes; ++o) {
      if (o == c) continue;
      fp += counts[static_cast<size_t>(o) * num_classes + c];
      fn += counts[static_cast<size_t>(c) * num_classes + o];
    }
    const std::int64_t denom = tp + fp + fn;
    if (denom == 0) continue;  // absent from both maps: flagged, not zeroed
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    m.per_class_iou[static_cast<size_t>(c)] = iou;
    sum += iou;
    ++present;
  }
  m.miou = present > 0 ? sum / present : 0.0;
  return m;
}

double ConfusionMatrix::pixel_accuracy() const {
  std::int64_t correct = 0, total = 0;
  for (int g = 0; g < num_classes; ++g)
    for (int p = 0; p < num_classes; ++p) {
      const std::int64_t c = counts[static_cast<size_t>(g) * num_classes + p];
      total += c;
      if (g == p) correct += c;
    }
  return total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

SegMetrics seg_metrics(const Tensor& pred_classes, const Tensor& gt_classes, int num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.add(pred_classes, gt_classes);
  return cm.result();
}

int ClassMapping::map_or_throw(int source) const {
  auto it = target_of.find(source);
  if (it == target_of.end()) {
    std::string name = source < static_cast<int>(source_names.size()) && source >= 0
                           ? " ('" + source_names[static_cast<size_t>(source)] + "')"
                           : "";
    throw std::invalid_argument("map_classes: unmapped label " + std::to_string(source) + name);
  }
  return it->second;
}

Tensor map_classes(const Tensor& seg_map, const ClassMapping& mapping) {
  require(seg_map.rank() == 2, "map_classes: expects a 2D map");
  Tensor out(seg_map.shape());
  for (std::int64_t i = 0; i < seg_map.size(); ++i)
    out[i] = static_cast<double>(mapping.map_or_throw(static_cast<int>(std::lround(seg_map[i]))));
  return out;
}

const std::vector<std::string>& midair_class_names() {
  static const std::vector<std::string> names = {
      "sky",           "animals",      "trees",        "dirt ground", "ground vegetation",
      "rocky ground",  "boulders",     "empty",        "water",       "man-made construction",
      "road",          "train track",  "road sign",    "others"};
  return names;
}

ClassMapping midair_to_seven() {
  // Targets: 0 Sky, 1 Water, 2 Land, 3 Trees, 4 Boulders, 5 Road, 6 Others.
  ClassMapping m;
  m.source_names = midair_class_names();
  m.target_of = {{0, 0},  // sky
                 {1, 6},  // animals -> others
                 {2, 3},  // trees
                 {3, 2},  // dirt ground -> land
                 {4, 2},  // ground vegetation -> land
                 {5, 2},  // rocky ground -> land
                 {6, 4},  // boulders
                 {7, 6},  // empty -> others
                 {8, 1},  // water
                 {9, 6},  // man-made construction -> others
                 {10, 5},  // road
                 {11, 6},  // train track -> others
                 {12, 6},  // road sign -> others
                 {13, 6}};  // others
  return m;
}

ClassMapping midair_to_common9() {
  // Targets follow the 9-class common set used across datasets.
  ClassMapping m;
  m.source_names = midair_class_names();
  m.target_of = {{0, 0},   // sky
                 {1, 8},   // animals -> others
                 {2, 2},   // trees
                 {3, 3},   // dirt ground -> land
                 {4, 3},   // ground vegetation -> land
                 {5, 3},   // rocky ground -> land
                 {6, 5},   // boulders -> rocks
                 {7, 8},   // empty -> others
                 {8, 1},   // water
                 {9, 7},   // man-made construction -> building
                 {10, 6},  // road
                 {11, 8},  // train track -> others
                 {12, 8},  // road sign -> others
                 {13, 8}};  // others
  return m;
}

}  // namespace cosemdepth
