#pragma once

#include <utility>
#include <vector>

#include "cosemdepth/autodiff.hpp"
#include "cosemdepth/tensor.hpp"

namespace cosemdepth {

constexpr double kDefaultLossWeight = 0.15;

struct LossBreakdown {
  double depth_loss = 0.0;
  double semantic_loss = 0.0;
  double total = 0.0;
  std::vector<std::pair<double, double>> per_level;  // (depth, semantic) per level
  double w = kDefaultLossWeight;
};

struct DepthLossOptions {
  bool include_sky = true;   // when false, pixels at gt >= max_depth are masked out
  double max_depth = 80.0;
};

// Multi-level log-L1 depth loss: sum over levels of
// (2^(l+1) / N_p^l) * sum_i |log d_i - log dhat_i| with l = 1 at the
// coarsest level. Predictions are listed finest-first (index 0 = finest);
// ground truth is at twice the finest prediction resolution and is
// downscaled per level by nearest neighbor. Masked pixels are excluded from
// N_p^l. Throws on non-positive depths.
Var depth_loss_graph(Tape& tape, const std::vector<Var>& per_level_depth,
                     const Tensor& gt_depth, const std::vector<Tensor>& valid_masks,
                     const DepthLossOptions& opts, std::vector<double>* per_level_terms);

// Multi-level categorical cross-entropy: sum over levels of the per-pixel
// mean of -log p_target; ground-truth classes are downscaled per level by
// nearest neighbor. Throws on out-of-range class indices.
Var semantic_loss_graph(Tape& tape, const std::vector<Var>& per_level_logits,
                        const Tensor& gt_classes, const Tensor& valid,
                        std::vector<double>* per_level_terms);

// Plain (non-graph) evaluations used by oracles and reporting.
double depth_loss(const std::vector<Tensor>& per_level_depth, const Tensor& gt_depth,
                  const std::vector<Tensor>& valid_masks, const DepthLossOptions& opts,
                  std::vector<double>* per_level_terms = nullptr);
double semantic_loss(const std::vector<Tensor>& per_level_logits, const Tensor& gt_classes,
                     const Tensor& valid, std::vector<double>* per_level_terms = nullptr);

// total = depth + w * semantic, with the per-level pairs carried through.
LossBreakdown joint_loss(double depth_term, const std::vector<double>& depth_levels,
                         double semantic_term, const std::vector<double>& semantic_levels,
                         double w);

// Nearest-neighbor downscale of a (H, W) map by an integer factor
// (top-left sample of each block). Shared by both losses and the trainer.
Tensor downscale_nearest(const Tensor& map, int factor);

}  // namespace cosemdepth
