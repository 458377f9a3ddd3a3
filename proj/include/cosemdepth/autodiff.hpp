#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <vector>

#include "cosemdepth/geometry.hpp"
#include "cosemdepth/tensor.hpp"

namespace cosemdepth {

// Reverse-mode automatic differentiation over Tensor values. A Tape owns the
// computation graph of one forward pass; backward() accumulates gradients for
// every node flagged as requiring them. Nodes only reference earlier nodes,
// so insertion order is a topological order.
//
// Tapes are independent: one tape per worker thread is safe. All math is
// 64-bit and single-threaded per tape, which keeps training bit-reproducible
// regardless of how samples are scheduled across workers.

class Tape;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  Var constant(Tensor value);          // no gradient tracked
  Var leaf(Tensor value);              // gradient tracked (parameters, states)

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;     // valid after backward()
  Tensor grad_or_zero(Var v) const;    // zeros when no gradient reached the node
  bool requires_grad(Var v) const;
  std::int64_t node_count() const { return static_cast<std::int64_t>(nodes_.size()); }

  void backward(Var scalar_loss);

  // ----- elementwise / structural ops -----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  Var leaky_relu(Var a, double slope);
  Var relu(Var a) { return leaky_relu(a, 0.0); }
  Var exp_clamped(Var a, double lo = -30.0, double hi = 30.0);
  Var log_(Var a);           // requires strictly positive values
  Var abs_(Var a);
  Var concat_channels(const std::vector<Var>& parts);
  Var slice_channels(Var a, int begin, int count);
  Var upsample2_nearest(Var a);
  Var channel_sum(Var a);    // (C,H,W) -> (1,H,W)
  Var weighted_sum(Var a, Tensor weights);  // -> scalar sum(w * a)
  Var sum_scaled(const std::vector<Var>& scalars, const std::vector<double>& coeffs);

  // ----- network layers -----
  Var conv2d(Var x, Var w, Var b, int stride, int pad);
  // Per-channel standardization over the spatial dims (no learned affine).
  Var dinl(Var x, double eps = 1e-5);
  // Channels split into k contiguous groups; each per-pixel group vector is
  // scaled to unit L2 norm.
  Var group_l2_normalize(Var x, int k, double eps = 1e-8);
  // Spatial neighborhood cost volume: dot(center, neighbor)/C for every
  // offset in [-radius, radius]^2; out-of-bounds neighbors contribute 0.
  Var sncv(Var f, int radius);
  // Per-pixel correlation cost between two same-shape feature maps.
  Var channel_mean_dot(Var a, Var b);
  // Samples src at continuous coordinates; coords is (2,H,W) carrying (u,v)
  // per target pixel in source pixel units. Out-of-image taps contribute 0.
  Var bilinear_sample(Var src, Var coords);
  // Softmax over the channel dim.
  Var softmax_channels(Var logits);
  // Mean of -log softmax(target) over pixels with valid != 0.
  Var softmax_cross_entropy(Var logits, const Tensor& target_classes, const Tensor& valid);

  // ----- differentiable camera geometry -----
  // Depth from parallax per the configured denominator mode, clamped into
  // [min_depth, max_depth]. Degenerate pixels emit max_depth with zero
  // gradient; out_mask (optional) receives the 0/1 validity mask.
  Var parallax_to_depth(Var rho, const ParallaxGeometry& geom, double min_depth,
                        double max_depth, Tensor* out_mask = nullptr);
  // Source-frame sampling coordinates for each target pixel given its depth
  // under geom.motion (target -> source coordinates). Pixels that land behind
  // the source camera get far out-of-image coordinates and zero gradient.
  Var reproject_coords(Var depth, const ParallaxGeometry& geom);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(Tape&)> back;
  };

  int push(Tensor value, bool needs_grad, std::function<void(Tape&)> back);
  Tensor& grad_buf(int id);
  const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }

  std::deque<Node> nodes_;
};

}  // namespace cosemdepth
