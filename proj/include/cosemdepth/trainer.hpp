#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cosemdepth/checkpoint.hpp"
#include "cosemdepth/evalkit.hpp"
#include "cosemdepth/net.hpp"
#include "cosemdepth/objectives.hpp"
#include "cosemdepth/synthgen.hpp"

namespace cosemdepth {

struct AugmentConfig {
  bool flip = true;          // horizontal/vertical mirroring
  bool rotation = true;      // multiples of 90 degrees (exact, no resampling)
  bool color_jitter = true;  // contrast, brightness, hue, saturation on RGB only
  double contrast = 0.2;
  double brightness = 0.15;
  double hue = 0.1;       // radians of rotation about the gray axis
  double saturation = 0.25;
};

struct StopCriteria {
  // Training stops early once every enabled threshold is met on validation.
  std::optional<double> min_seg_accuracy;
  std::optional<double> min_delta1;
  std::optional<double> max_median_abs_rel;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 3;
  int epochs = 10;
  double loss_weight = kDefaultLossWeight;  // w in total = depth + w * semantic
  AugmentConfig augment;
  std::uint64_t seed = 0;
  int sequence_length = 3;
  double max_depth_cap = 80.0;
  bool include_sky = true;
  // Optional second training dataset with an a:b sampling ratio; the epoch
  // size becomes 2x the smaller dataset.
  std::string mix_root_b;
  int mix_ratio_a = 1;
  int mix_ratio_b = 1;
  // Optional two-phase learning-rate drop (fixed rate by default).
  bool lr_drop = false;
  int lr_drop_epoch = 70;
  double lr_drop_factor = 0.1;
  StopCriteria stop;
  int workers = 0;  // 0: min(batch_size, hardware)

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

// One training/evaluation sample: a window of consecutive frames.
struct SequenceSample {
  std::vector<Tensor> rgb;    // (3,H,W) in [0,1]
  std::vector<Tensor> depth;  // (H,W) meters
  std::vector<Tensor> seg;    // (H,W) class indices
  std::vector<Tensor> valid;  // (H,W) 0/1, all ones unless augmentation invalidates
  std::vector<MotionTransform> motions;  // motions[i]: frame i coords <- frame i+1
  CameraIntrinsics intr;
  double max_depth = 80.0;
};

// Loaded dataset with sliding sequence windows.
class SequenceDataset {
 public:
  SequenceDataset() = default;
  SequenceDataset(const std::string& root, int sequence_length, int stride = 1);

  std::int64_t size() const { return static_cast<std::int64_t>(windows_.size()); }
  SequenceSample sample(std::int64_t index) const;
  const CameraIntrinsics& intrinsics() const { return intr_; }
  double max_depth() const { return max_depth_; }
  int num_trajectories() const { return static_cast<int>(trajectories_.size()); }

 private:
  std::vector<Trajectory> trajectories_;
  std::vector<std::pair<int, int>> windows_;  // (trajectory, start frame)
  int sequence_length_ = 2;
  CameraIntrinsics intr_;
  double max_depth_ = 80.0;
};

// Identical geometric transform for every frame of the sequence, with the
// inter-frame motions conjugated to stay consistent; color jitter on RGB
// only. Deterministic in rng_state.
SequenceSample augment(const SequenceSample& sample, const AugmentConfig& cfg,
                       std::uint64_t rng_state);

// Deterministic interleaved sampling from two datasets honoring ratio a:b
// within +-1 over any window of (a+b) draws.
class MixSampler {
 public:
  MixSampler(std::int64_t count_a, std::int64_t count_b, int ratio_a, int ratio_b,
             std::uint64_t seed);

  struct Draw {
    int dataset;        // 0 or 1
    std::int64_t index;
  };
  Draw next();

 private:
  std::int64_t refill(int which);
  std::int64_t count_[2];
  int ratio_[2];
  std::int64_t emitted_[2] = {0, 0};
  std::vector<std::int64_t> order_[2];
  size_t cursor_[2] = {0, 0};
  std::uint64_t seed_;
  std::uint64_t pass_[2] = {0, 0};
};

struct EpochRecord {
  int epoch = 0;
  double train_depth_loss = 0.0;
  double train_semantic_loss = 0.0;
  double train_total_loss = 0.0;
  std::map<std::string, double> val_metrics;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  Checkpoint init;
  Checkpoint best;
  Checkpoint last;
  bool diverged = false;
  bool stopped_early = false;
};

// Supervised training. When out_dir is non-empty the run directory receives
// config.json, train_log.csv, best.ckpt and last.ckpt. Best checkpoint:
// highest validation mIoU, ties broken by lower RMSE (RMSE alone for
// depth-only models).
TrainResult train(const ArchConfig& arch, ModelMode mode, const TrainConfig& cfg,
                  const std::string& train_root, const std::string& val_root,
                  const std::string& out_dir = "");

struct EvalResult {
  DepthMetrics depth;
  SegMetrics seg;
  double pixel_accuracy = 0.0;
  double median_abs_rel = 0.0;
  std::int64_t frames_evaluated = 0;
};

// Runs the checkpoint over every window of the split (stride 1 predicts each
// frame once) and aggregates pixel-level metrics. cap is the evaluation
// depth cap (80 or 200 in the standard protocols).
EvalResult evaluate(const Checkpoint& ckpt, const std::string& dataset_root, double cap,
                    int stride = 1, const std::string& qualitative_dir = "");

// Renders rgb / gt / prediction grids for the first frames of a dataset.
void save_qualitative_grid(const Checkpoint& ckpt, const std::string& dataset_root,
                           const std::string& out_path, int max_rows = 4);

}  // namespace cosemdepth
