#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cosemdepth/autodiff.hpp"
#include "cosemdepth/geometry.hpp"
#include "cosemdepth/tensor.hpp"

namespace cosemdepth {

struct ArchConfig {
  int num_levels = 5;
  std::vector<int> filters_per_level = {16, 32, 64, 96, 128};
  std::vector<int> split_k_per_level = {1, 2, 2, 4, 4};
  int sncv_radius = 3;
  int pscv_candidates = 5;    // odd, centered on the running estimate
  double pscv_step = 1.25;    // multiplicative spacing between hypotheses
  int num_classes = 9;
  int sequence_length = 3;
  int semantic_refiner_layers = 5;
  // The parallax refiner is a stack of 7 convolutions: 6 hidden + output.
  std::vector<int> depth_refiner_filters = {128, 128, 96, 64, 32, 16};
  // Hidden widths of the semantic refiner (semantic_refiner_layers - 1).
  std::vector<int> semantic_refiner_filters = {64, 64, 48, 32};
  int parallax_feature_channels = 16;
  double max_depth = 80.0;
  double min_depth = 0.1;
  double leaky_slope = 0.1;
  ParallaxDenominator parallax_denominator = ParallaxDenominator::kAsPrinted;

  void validate() const;
  std::string to_json() const;
  static ArchConfig from_json(const std::string& text);
  // A compact config for small-scale experiments and the end-to-end tests.
  static ArchConfig compact(int num_levels = 5, int num_classes = 9);
};

// Named parameter tensors in canonical (lexicographic) order.
struct ParamStore {
  std::map<std::string, Tensor> tensors;

  std::int64_t total_size() const;
  std::int64_t size_with_prefix(const std::string& prefix) const;
};

enum class ModelMode { kJoint, kDepthOnly, kSemanticOnly };
std::string mode_name(ModelMode m);
ModelMode mode_from_name(const std::string& name);

// Per-frame decoder outputs, level index 0 = finest (half input resolution).
struct FrameOutputs {
  std::vector<Var> parallax;       // (1, H_l, W_l) per level
  std::vector<Var> parallax_feats;
  std::vector<Var> depth;          // parallax converted to depth per level
  std::vector<Tensor> depth_valid; // 0/1 masks from the conversion
  std::vector<Var> seg_logits;     // (Nc, H_l, W_l) per level
  bool has_depth = false;
  bool has_semantics = false;
};

struct SequenceForward {
  std::vector<FrameOutputs> frames;
  std::map<std::string, Var> param_vars;  // set when params are leaves
};

// Inference output for the last frame of a sequence, at full input
// resolution (decoders run at half resolution; nearest-neighbor upscale).
struct JointOutput {
  DepthMap depth;
  Tensor depth_valid;
  Tensor seg_logits;  // (Nc, H, W)
  Tensor seg_probs;   // (Nc, H, W)
  std::vector<Tensor> level_parallax;
};

class CoSemDepthModel {
 public:
  CoSemDepthModel(ArchConfig cfg, ModelMode mode);

  const ArchConfig& config() const { return cfg_; }
  ModelMode mode() const { return mode_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  void init_params(std::uint64_t seed);
  std::int64_t param_count() const { return params_.total_size(); }
  std::int64_t encoder_param_count() const { return params_.size_with_prefix("encoder."); }
  std::string fingerprint() const;

  // Shared pyramidal encoder for one frame; rgb is (3, H, W) in [0, 1].
  std::vector<Var> encoder_forward(Tape& tape, const std::map<std::string, Var>& pv,
                                   Var rgb) const;

  // Depth decoder for one frame: coarse-to-fine preprocessing (upscale,
  // split/normalize, SNCV, PSCV, recompute) plus the parallax refiner.
  // prev_parallax may be empty for the cold-start path (zero state).
  FrameOutputs depth_decoder_forward(Tape& tape, const std::map<std::string, Var>& pv,
                                     const std::vector<Var>& pyramid_t,
                                     const std::vector<Var>& pyramid_prev,
                                     const std::vector<Var>& prev_parallax,
                                     const MotionTransform& motion,
                                     const CameraIntrinsics& intr) const;

  FrameOutputs semantic_decoder_forward(Tape& tape, const std::map<std::string, Var>& pv,
                                        const std::vector<Var>& pyramid_t) const;

  // Full sequence pass. frames_rgb.size() == motions.size() + 1. Depth is
  // decoded for frames with a motion (t >= 1); semantics for the same frames
  // (or frame 0 when the sequence has a single frame).
  SequenceForward forward(Tape& tape, const std::vector<Tensor>& frames_rgb,
                          const std::vector<MotionTransform>& motions,
                          const CameraIntrinsics& intr, bool params_as_leaves) const;

  JointOutput infer(const std::vector<Tensor>& frames_rgb,
                    const std::vector<MotionTransform>& motions,
                    const CameraIntrinsics& intr) const;

  // Registers every parameter on the tape (leaves when training).
  std::map<std::string, Var> register_params(Tape& tape, bool as_leaves) const;

 private:
  void build_param_shapes();
  int depth_refiner_input_channels(int level) const;
  int semantic_refiner_input_channels(int level) const;

  ArchConfig cfg_;
  ModelMode mode_;
  ParamStore params_;
};

// Closed-form parameter count used by tests and the structural-identity
// check; counts 3x3 convs with bias from the layer shape recurrence.
std::int64_t analytic_param_count(const ArchConfig& cfg, ModelMode mode);

}  // namespace cosemdepth
