#include "cosemdepth/objectives.hpp"

#include <cmath>

namespace cosemdepth {

Tensor downscale_nearest(const Tensor& map, int factor) {
  require(map.rank() == 2, "downscale_nearest: expects a 2D map");
  require(factor >= 1, "downscale_nearest: bad factor");
  const int h = map.dim(0), w = map.dim(1);
  require(h % factor == 0 && w % factor == 0, "downscale_nearest: resolution not divisible");
  Tensor out({h / factor, w / factor});
  for (int y = 0; y < h / factor; ++y)
    for (int x = 0; x < w / factor; ++x) out.at(y, x) = map.at(y * factor, x * factor);
  return out;
}

Var depth_loss_graph(Tape& tape, const std::vector<Var>& per_level_depth,
                     const Tensor& gt_depth, const std::vector<Tensor>& valid_masks,
                     const DepthLossOptions& opts, std::vector<double>* per_level_terms) {
  require(!per_level_depth.empty(), "depth_loss: no levels");
  require(valid_masks.empty() || valid_masks.size() == per_level_depth.size(),
          "depth_loss: mask count mismatch");
  require(gt_depth.rank() == 2, "depth_loss: gt must be (H,W)");
  const int levels = static_cast<int>(per_level_depth.size());
  const int gt_h = gt_depth.dim(0), gt_w = gt_depth.dim(1);

  std::vector<Var> terms;
  std::vector<double> coeffs;
  for (int i = 0; i < levels; ++i) {
    const Var pred = per_level_depth[static_cast<size_t>(i)];
    const Tensor& pv = tape.value(pred);
    require(pv.rank() == 3 && pv.dim(0) == 1, "depth_loss: predictions must be (1,H,W)");
    const int h = pv.dim(1), w = pv.dim(2);
    const int factor = gt_h / h;
    require(factor >= 1 && h * factor == gt_h && w * factor == gt_w,
            "depth_loss: level resolution does not divide the ground truth");
    const Tensor gt_l = downscale_nearest(gt_depth, factor);

    // Weight 2^(l+1) with l = 1 at the coarsest level; predictions arrive
    // finest-first, so index i maps to l = levels - i.
    const double level_weight = std::pow(2.0, (levels - i) + 1);

    Tensor weights({1, h, w});
    std::int64_t n_valid = 0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double g = gt_l.at(y, x);
        require(g > 0.0, "depth_loss: non-positive ground-truth depth");
        require(pv.at(0, y, x) > 0.0, "depth_loss: non-positive predicted depth");
        bool ok = true;
        if (!valid_masks.empty()) ok = valid_masks[static_cast<size_t>(i)].at(y, x) != 0.0;
        if (!opts.include_sky && g >= opts.max_depth) ok = false;
        if (ok) {
          weights.at(0, y, x) = 1.0;
          ++n_valid;
        }
      }
    }
    if (n_valid == 0) {
      terms.push_back(tape.constant(Tensor::scalar(0.0)));
      coeffs.push_back(1.0);
      continue;
    }
    const double scale = level_weight / static_cast<double>(n_valid);
    for (std::int64_t k = 0; k < weights.size(); ++k) weights[k] *= scale;

    Tensor log_gt({1, h, w});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) log_gt.at(0, y, x) = std::log(gt_l.at(y, x));

    const Var diff = tape.sub(tape.log_(pred), tape.constant(std::move(log_gt)));
    terms.push_back(tape.weighted_sum(tape.abs_(diff), std::move(weights)));
    coeffs.push_back(1.0);
  }

  if (per_level_terms) {
    per_level_terms->clear();
    for (const Var& t : terms) per_level_terms->push_back(tape.value(t)[0]);
  }
  return tape.sum_scaled(terms, coeffs);
}

Var semantic_loss_graph(Tape& tape, const std::vector<Var>& per_level_logits,
                        const Tensor& gt_classes, const Tensor& valid,
                        std::vector<double>* per_level_terms) {
  require(!per_level_logits.empty(), "semantic_loss: no levels");
  require(gt_classes.rank() == 2, "semantic_loss: gt must be (H,W)");
  require(valid.same_shape(gt_classes), "semantic_loss: mask shape mismatch");
  const int gt_h = gt_classes.dim(0), gt_w = gt_classes.dim(1);

  std::vector<Var> terms;
  std::vector<double> coeffs;
  for (const Var& logits : per_level_logits) {
    const Tensor& lv = tape.value(logits);
    require(lv.rank() == 3, "semantic_loss: logits must be (C,H,W)");
    const int h = lv.dim(1), w = lv.dim(2);
    const int factor = gt_h / h;
    require(factor >= 1 && h * factor == gt_h && w * factor == gt_w,
            "semantic_loss: level resolution does not divide the ground truth");
    const Tensor gt_l = downscale_nearest(gt_classes, factor);
    const Tensor valid_l = downscale_nearest(valid, factor);
    terms.push_back(tape.softmax_cross_entropy(logits, gt_l, valid_l));
    coeffs.push_back(1.0);
  }
  if (per_level_terms) {
    per_level_terms->clear();
    for (const Var& t : terms) per_level_terms->push_back(tape.value(t)[0]);
  }
  return tape.sum_scaled(terms, coeffs);
}

double depth_loss(const std::vector<Tensor>& per_level_depth, const Tensor& gt_depth,
                  const std::vector<Tensor>& valid_masks, const DepthLossOptions& opts,
                  std::vector<double>* per_level_terms) {
  Tape tape;
  std::vector<Var> preds;
  for (const Tensor& t : per_level_depth) preds.push_back(tape.constant(t));
  const Var loss = depth_loss_graph(tape, preds, gt_depth, valid_masks, opts, per_level_terms);
  return tape.value(loss)[0];
}

double semantic_loss(const std::vector<Tensor>& per_level_logits, const Tensor& gt_classes,
                     const Tensor& valid, std::vector<double>* per_level_terms) {
  Tape tape;
  std::vector<Var> logits;
  for (const Tensor& t : per_level_logits) logits.push_back(tape.constant(t));
  const Var loss = semantic_loss_graph(tape, logits, gt_classes, valid, per_level_terms);
  return tape.value(loss)[0];
}

LossBreakdown joint_loss(double depth_term, const std::vector<double>& depth_levels,
                         double semantic_term, const std::vector<double>& semantic_levels,
                         double w) {
  LossBreakdown out;
  out.depth_loss = depth_term;
  out.semantic_loss = semantic_term;
  out.w = w;
  out.total = depth_term + w * semantic_term;
  const size_t n = std::max(depth_levels.size(), semantic_levels.size());
  for (size_t i = 0; i < n; ++i)
    out.per_level.push_back({i < depth_levels.size() ? depth_levels[i] : 0.0,
                             i < semantic_levels.size() ? semantic_levels[i] : 0.0});
  return out;
}

}  // namespace cosemdepth
