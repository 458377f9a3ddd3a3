#include "cosemdepth/autodiff.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace cosemdepth {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::MatrixXd;
constexpr double kFrontEps = 1e-9;
constexpr double kOobSentinel = -1e9;
}  // namespace

int Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

Var Tape::constant(Tensor value) { return {push(std::move(value), false, nullptr)}; }
Var Tape::leaf(Tensor value) { return {push(std::move(value), true, nullptr)}; }

const Tensor& Tape::value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<size_t>(v.id)];
  require(!n.grad.empty(), "grad(): backward has not reached this node");
  return n.grad;
}

Tensor Tape::grad_or_zero(Var v) const {
  const Node& n = nodes_[static_cast<size_t>(v.id)];
  return n.grad.empty() ? Tensor::zeros(n.value.shape()) : n.grad;
}

bool Tape::requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].needs_grad; }

void Tape::backward(Var scalar_loss) {
  require(scalar_loss.valid(), "backward: invalid loss var");
  const Node& loss = nodes_[static_cast<size_t>(scalar_loss.id)];
  require(loss.value.size() == 1, "backward: loss must be a scalar");
  grad_buf(scalar_loss.id)[0] = 1.0;
  for (int id = scalar_loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad || n.grad.empty() || !n.back) continue;
    n.back(*this);
  }
}

// ---------------------------------------------------------------------------
// elementwise / structural
// ---------------------------------------------------------------------------

Var Tape::add(Var a, Var b) {
  const Tensor& va = val(a.id);
  const Tensor& vb = val(b.id);
  require(va.same_shape(vb), "add: shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
  Tensor out(va.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  const bool ng = requires_grad(a) || requires_grad(b);
  const int ia = a.id, ib = b.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ia, ib](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      if (t.requires_grad({ia})) {
        Tensor& ga = t.grad_buf(ia);
        for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (t.requires_grad({ib})) {
        Tensor& gb = t.grad_buf(ib);
        for (std::int64_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    };
  }
  return {self};
}

Var Tape::sub(Var a, Var b) {
  const Tensor& va = val(a.id);
  const Tensor& vb = val(b.id);
  require(va.same_shape(vb), "sub: shape mismatch");
  Tensor out(va.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
  const bool ng = requires_grad(a) || requires_grad(b);
  const int ia = a.id, ib = b.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ia, ib](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      if (t.requires_grad({ia})) {
        Tensor& ga = t.grad_buf(ia);
        for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (t.requires_grad({ib})) {
        Tensor& gb = t.grad_buf(ib);
        for (std::int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    };
  }
  return {self};
}

Var Tape::mul(Var a, Var b) {
  const Tensor& va = val(a.id);
  const Tensor& vb = val(b.id);
  require(va.same_shape(vb), "mul: shape mismatch");
  Tensor out(va.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  const bool ng = requires_grad(a) || requires_grad(b);
  const int ia = a.id, ib = b.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ia, ib](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      const Tensor& va2 = t.val(ia);
      const Tensor& vb2 = t.val(ib);
      if (t.requires_grad({ia})) {
        Tensor& ga = t.grad_buf(ia);
        for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb2[i];
      }
      if (t.requires_grad({ib})) {
        Tensor& gb = t.grad_buf(ib);
        for (std::int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va2[i];
      }
    };
  }
  return {self};
}

Var Tape::scale(Var a, double c) {
  const Tensor& va = val(a.id);
  Tensor out(va.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = va[i] * c;
  const bool ng = requires_grad(a);
  const int ia = a.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ia, c](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      Tensor& ga = t.grad_buf(ia);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    };
  }
  return {self};
}

Var Tape::add_scalar(Var a, double c) {
  const Tensor& va = val(a.id);
  Tensor out(va.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = va[i] + c;
  const bool ng = requires_grad(a);
  const int ia = a.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ia](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      Tensor& ga = t.grad_buf(ia);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
  }
  return {self};
}

Var Tape::leaky_relu(Var a, double slope) {
  const Tensor& va = val(a.id);
  Tensor out(va.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = va[i] > 0.0 ? va[i] : slope * va[i];
  const bool ng = requires_grad(a);
  const int ia = a.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ia, slope](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      const Tensor& x = t.val(ia);
      Tensor& ga = t.grad_buf(ia);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (x[i] > 0.0 ? 1.0 : slope);
    };
  }
  return {self};
}

Var Tape::exp_clamped(Var a, double lo, double hi) {
  const Tensor& va = val(a.id);
  Tensor out(va.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) {
    const double x = std::min(std::max(va[i], lo), hi);
    out[i] = std::exp(x);
  }
  const bool ng = requires_grad(a);
  const int ia = a.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ia, lo, hi](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      const Tensor& x = t.val(ia);
      const Tensor& y = t.val(self);
      Tensor& ga = t.grad_buf(ia);
      for (std::int64_t i = 0; i < g.size(); ++i)
        if (x[i] > lo && x[i] < hi) ga[i] += g[i] * y[i];
    };
  }
  return {self};
}

Var Tape::log_(Var a) {
  const Tensor& va = val(a.id);
  Tensor out(va.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) {
    require(va[i] > 0.0, "log: non-positive input");
    out[i] = std::log(va[i]);
  }
  const bool ng = requires_grad(a);
  const int ia = a.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ia](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      const Tensor& x = t.val(ia);
      Tensor& ga = t.grad_buf(ia);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
    };
  }
  return {self};
}

Var Tape::abs_(Var a) {
  const Tensor& va = val(a.id);
  Tensor out(va.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::fabs(va[i]);
  const bool ng = requires_grad(a);
  const int ia = a.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ia](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      const Tensor& x = t.val(ia);
      Tensor& ga = t.grad_buf(ia);
      for (std::int64_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
    };
  }
  return {self};
}

Var Tape::concat_channels(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat: no inputs");
  const Tensor& first = val(parts[0].id);
  require(first.rank() == 3, "concat: expects (C,H,W) tensors");
  const int h = first.dim(1), w = first.dim(2);
  int ctotal = 0;
  bool ng = false;
  for (Var p : parts) {
    const Tensor& v = val(p.id);
    require(v.rank() == 3 && v.dim(1) == h && v.dim(2) == w, "concat: spatial shape mismatch");
    ctotal += v.dim(0);
    ng = ng || requires_grad(p);
  }
  Tensor out({ctotal, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::int64_t off = 0;
  std::vector<int> ids;
  std::vector<int> chans;
  for (Var p : parts) {
    const Tensor& v = val(p.id);
    std::copy(v.data(), v.data() + v.size(), out.data() + off);
    off += v.size();
    ids.push_back(p.id);
    chans.push_back(v.dim(0));
  }
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ids, chans, plane](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      std::int64_t off2 = 0;
      for (size_t k = 0; k < ids.size(); ++k) {
        const std::int64_t n = chans[k] * plane;
        if (t.requires_grad({ids[k]})) {
          Tensor& gp = t.grad_buf(ids[k]);
          for (std::int64_t i = 0; i < n; ++i) gp[i] += g[off2 + i];
        }
        off2 += n;
      }
    };
  }
  return {self};
}

Var Tape::slice_channels(Var a, int begin, int count) {
  const Tensor& va = val(a.id);
  require(va.rank() == 3, "slice: expects (C,H,W)");
  require(begin >= 0 && count > 0 && begin + count <= va.dim(0), "slice: channel range");
  const int h = va.dim(1), w = va.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor out({count, h, w});
  std::copy(va.data() + begin * plane, va.data() + (begin + count) * plane, out.data());
  const bool ng = requires_grad(a);
  const int ia = a.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ia, begin, plane](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      Tensor& ga = t.grad_buf(ia);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[begin * plane + i] += g[i];
    };
  }
  return {self};
}

Var Tape::upsample2_nearest(Var a) {
  const Tensor& va = val(a.id);
  require(va.rank() == 3, "upsample2: expects (C,H,W)");
  const int c = va.dim(0), h = va.dim(1), w = va.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < 2 * h; ++y)
      for (int x = 0; x < 2 * w; ++x) out.at(ci, y, x) = va.at(ci, y / 2, x / 2);
  const bool ng = requires_grad(a);
  const int ia = a.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ia, c, h, w](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      Tensor& ga = t.grad_buf(ia);
      for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < 2 * h; ++y)
          for (int x = 0; x < 2 * w; ++x) ga.at(ci, y / 2, x / 2) += g.at(ci, y, x);
    };
  }
  return {self};
}

Var Tape::channel_sum(Var a) {
  const Tensor& va = val(a.id);
  require(va.rank() == 3, "channel_sum: expects (C,H,W)");
  const int c = va.dim(0), h = va.dim(1), w = va.dim(2);
  Tensor out({1, h, w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(0, y, x) += va.at(ci, y, x);
  const bool ng = requires_grad(a);
  const int ia = a.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ia, c, h, w](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      Tensor& ga = t.grad_buf(ia);
      for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) ga.at(ci, y, x) += g.at(0, y, x);
    };
  }
  return {self};
}

Var Tape::weighted_sum(Var a, Tensor weights) {
  const Tensor& va = val(a.id);
  require(va.same_shape(weights), "weighted_sum: weight shape mismatch");
  double acc = 0.0;
  for (std::int64_t i = 0; i < va.size(); ++i) acc += va[i] * weights[i];
  const bool ng = requires_grad(a);
  const int ia = a.id;
  auto wgt = std::make_shared<Tensor>(std::move(weights));
  int self = push(Tensor::scalar(acc), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ia, wgt](Tape& t) {
      const double g = t.nodes_[static_cast<size_t>(self)].grad[0];
      Tensor& ga = t.grad_buf(ia);
      for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += g * (*wgt)[i];
    };
  }
  return {self};
}

Var Tape::sum_scaled(const std::vector<Var>& scalars, const std::vector<double>& coeffs) {
  require(scalars.size() == coeffs.size() && !scalars.empty(), "sum_scaled: arity mismatch");
  double acc = 0.0;
  bool ng = false;
  for (size_t i = 0; i < scalars.size(); ++i) {
    const Tensor& v = val(scalars[i].id);
    require(v.size() == 1, "sum_scaled: inputs must be scalars");
    acc += coeffs[i] * v[0];
    ng = ng || requires_grad(scalars[i]);
  }
  std::vector<int> ids;
  for (Var v : scalars) ids.push_back(v.id);
  int self = push(Tensor::scalar(acc), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ids, coeffs](Tape& t) {
      const double g = t.nodes_[static_cast<size_t>(self)].grad[0];
      for (size_t i = 0; i < ids.size(); ++i)
        if (t.requires_grad({ids[i]})) t.grad_buf(ids[i])[0] += g * coeffs[i];
    };
  }
  return {self};
}

// ---------------------------------------------------------------------------
// conv2d via im2col + GEMM
// ---------------------------------------------------------------------------

namespace {

void im2col(const Tensor& x, int kh, int kw, int stride, int pad, int ho, int wo,
            ColMat& col) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  col.resize(static_cast<Eigen::Index>(c) * kh * kw, static_cast<Eigen::Index>(ho) * wo);
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const Eigen::Index pcol = static_cast<Eigen::Index>(oy) * wo + ox;
      Eigen::Index row = 0;
      for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride + ky - pad;
          for (int kx = 0; kx < kw; ++kx, ++row) {
            const int ix = ox * stride + kx - pad;
            col(row, pcol) = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x.at(ci, iy, ix) : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ColMat& col, int c, int h, int w, int kh, int kw, int stride, int pad,
                int ho, int wo, Tensor& dx) {
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const Eigen::Index pcol = static_cast<Eigen::Index>(oy) * wo + ox;
      Eigen::Index row = 0;
      for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride + ky - pad;
          for (int kx = 0; kx < kw; ++kx, ++row) {
            const int ix = ox * stride + kx - pad;
            if (iy >= 0 && iy < h && ix >= 0 && ix < w) dx.at(ci, iy, ix) += col(row, pcol);
          }
        }
      }
    }
  }
}

}  // namespace

Var Tape::conv2d(Var x, Var w, Var b, int stride, int pad) {
  const Tensor& vx = val(x.id);
  const Tensor& vw = val(w.id);
  const Tensor& vb = val(b.id);
  require(vx.rank() == 3 && vw.rank() == 4, "conv2d: expects (C,H,W) and (OC,C,kh,kw)");
  require(vw.dim(1) == vx.dim(0), "conv2d: input channel mismatch");
  require(vb.rank() == 1 && vb.dim(0) == vw.dim(0), "conv2d: bias shape mismatch");
  require(stride >= 1, "conv2d: bad stride");
  const int c = vx.dim(0), h = vx.dim(1), wd = vx.dim(2);
  const int oc = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  require(ho > 0 && wo > 0, "conv2d: output would be empty");

  ColMat col;
  im2col(vx, kh, kw, stride, pad, ho, wo, col);
  Tensor out({oc, ho, wo});
  {
    Eigen::Map<const RowMat> wm(vw.data(), oc, static_cast<Eigen::Index>(c) * kh * kw);
    Eigen::Map<RowMat> om(out.data(), oc, static_cast<Eigen::Index>(ho) * wo);
    om.noalias() = wm * col;
    for (int o = 0; o < oc; ++o) om.row(o).array() += vb[o];
  }

  const bool ng = requires_grad(x) || requires_grad(w) || requires_grad(b);
  const int ix = x.id, iw = w.id, ib = b.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ix, iw, ib, stride, pad, c, h, wd, oc, kh, kw, ho,
                          wo](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      Eigen::Map<const RowMat> gm(g.data(), oc, static_cast<Eigen::Index>(ho) * wo);
      const Tensor& vw2 = t.val(iw);
      Eigen::Map<const RowMat> wm(vw2.data(), oc, static_cast<Eigen::Index>(c) * kh * kw);

      if (t.requires_grad({ib})) {
        Tensor& gb = t.grad_buf(ib);
        for (int o = 0; o < oc; ++o) gb[o] += gm.row(o).sum();
      }
      if (t.requires_grad({iw})) {
        ColMat col2;
        im2col(t.val(ix), kh, kw, stride, pad, ho, wo, col2);
        Tensor& gw = t.grad_buf(iw);
        Eigen::Map<RowMat> gwm(gw.data(), oc, static_cast<Eigen::Index>(c) * kh * kw);
        gwm.noalias() += gm * col2.transpose();
      }
      if (t.requires_grad({ix})) {
        ColMat dcol = wm.transpose() * gm;
        Tensor& gx = t.grad_buf(ix);
        col2im_add(dcol, c, h, wd, kh, kw, stride, pad, ho, wo, gx);
      }
    };
  }
  return {self};
}

// ---------------------------------------------------------------------------
// normalization layers
// ---------------------------------------------------------------------------

Var Tape::dinl(Var x, double eps) {
  const Tensor& vx = val(x.id);
  require(vx.rank() == 3, "dinl: expects (C,H,W)");
  const int c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
  const std::int64_t n = static_cast<std::int64_t>(h) * w;
  Tensor out(vx.shape());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
  for (int ci = 0; ci < c; ++ci) {
    const double* src = vx.data() + ci * n;
    double mu = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mu += src[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = src[i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(ci)] = is;
    double* dst = out.data() + ci * n;
    for (std::int64_t i = 0; i < n; ++i) dst[i] = (src[i] - mu) * is;
  }
  const bool ng = requires_grad(x);
  const int ixid = x.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ixid, c, n, inv_std](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      const Tensor& y = t.val(self);
      Tensor& gx = t.grad_buf(ixid);
      for (int ci = 0; ci < c; ++ci) {
        const double* gp = g.data() + ci * n;
        const double* yp = y.data() + ci * n;
        double gmean = 0.0, gymean = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
          gmean += gp[i];
          gymean += gp[i] * yp[i];
        }
        gmean /= static_cast<double>(n);
        gymean /= static_cast<double>(n);
        const double is = (*inv_std)[static_cast<size_t>(ci)];
        double* gxp = gx.data() + ci * n;
        for (std::int64_t i = 0; i < n; ++i)
          gxp[i] += is * (gp[i] - gmean - yp[i] * gymean);
      }
    };
  }
  return {self};
}

Var Tape::group_l2_normalize(Var x, int k, double eps) {
  const Tensor& vx = val(x.id);
  require(vx.rank() == 3, "group_l2_normalize: expects (C,H,W)");
  const int c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
  require(k >= 1 && c % k == 0,
          "group_l2_normalize: channel count " + std::to_string(c) +
              " not divisible by K=" + std::to_string(k));
  const int gsz = c / k;
  Tensor out(vx.shape());
  auto inv_norm = std::make_shared<Tensor>(Tensor({k, h, w}));
  for (int gi = 0; gi < k; ++gi) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        double ss = eps;
        for (int ci = gi * gsz; ci < (gi + 1) * gsz; ++ci) {
          const double v = vx.at(ci, y, xx);
          ss += v * v;
        }
        const double in = 1.0 / std::sqrt(ss);
        inv_norm->at(gi, y, xx) = in;
        for (int ci = gi * gsz; ci < (gi + 1) * gsz; ++ci)
          out.at(ci, y, xx) = vx.at(ci, y, xx) * in;
      }
    }
  }
  const bool ng = requires_grad(x);
  const int ixid = x.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ixid, k, gsz, h, w, inv_norm](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      const Tensor& y = t.val(self);
      Tensor& gx = t.grad_buf(ixid);
      for (int gi = 0; gi < k; ++gi) {
        for (int yy = 0; yy < h; ++yy) {
          for (int xx = 0; xx < w; ++xx) {
            double gy = 0.0;
            for (int ci = gi * gsz; ci < (gi + 1) * gsz; ++ci)
              gy += g.at(ci, yy, xx) * y.at(ci, yy, xx);
            const double in = inv_norm->at(gi, yy, xx);
            for (int ci = gi * gsz; ci < (gi + 1) * gsz; ++ci)
              gx.at(ci, yy, xx) += in * (g.at(ci, yy, xx) - y.at(ci, yy, xx) * gy);
          }
        }
      }
    };
  }
  return {self};
}

// ---------------------------------------------------------------------------
// cost volumes
// ---------------------------------------------------------------------------

Var Tape::sncv(Var f, int radius) {
  const Tensor& vf = val(f.id);
  require(vf.rank() == 3, "sncv: expects (C,H,W)");
  require(radius >= 1, "sncv: radius must be >= 1");
  const int c = vf.dim(0), h = vf.dim(1), w = vf.dim(2);
  const int side = 2 * radius + 1;
  Tensor out({side * side, h, w});
  const double inv_c = 1.0 / static_cast<double>(c);
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const int o = (dy + radius) * side + (dx + radius);
      for (int y = 0; y < h; ++y) {
        const int yn = y + dy;
        if (yn < 0 || yn >= h) continue;
        for (int x = 0; x < w; ++x) {
          const int xn = x + dx;
          if (xn < 0 || xn >= w) continue;
          double acc = 0.0;
          for (int ci = 0; ci < c; ++ci) acc += vf.at(ci, y, x) * vf.at(ci, yn, xn);
          out.at(o, y, x) = acc * inv_c;
        }
      }
    }
  }
  const bool ng = requires_grad(f);
  const int ifid = f.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ifid, radius, c, h, w, side, inv_c](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      const Tensor& vf2 = t.val(ifid);
      Tensor& gf = t.grad_buf(ifid);
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const int o = (dy + radius) * side + (dx + radius);
          for (int y = 0; y < h; ++y) {
            const int yn = y + dy;
            if (yn < 0 || yn >= h) continue;
            for (int x = 0; x < w; ++x) {
              const int xn = x + dx;
              if (xn < 0 || xn >= w) continue;
              const double gv = g.at(o, y, x) * inv_c;
              if (gv == 0.0) continue;
              for (int ci = 0; ci < c; ++ci) {
                gf.at(ci, y, x) += gv * vf2.at(ci, yn, xn);
                gf.at(ci, yn, xn) += gv * vf2.at(ci, y, x);
              }
            }
          }
        }
      }
    };
  }
  return {self};
}

Var Tape::channel_mean_dot(Var a, Var b) {
  const Tensor& va = val(a.id);
  const Tensor& vb = val(b.id);
  require(va.rank() == 3 && va.same_shape(vb), "channel_mean_dot: shape mismatch");
  const int c = va.dim(0), h = va.dim(1), w = va.dim(2);
  const double inv_c = 1.0 / static_cast<double>(c);
  Tensor out({1, h, w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(0, y, x) += va.at(ci, y, x) * vb.at(ci, y, x) * inv_c;
  const bool ng = requires_grad(a) || requires_grad(b);
  const int ia = a.id, ib = b.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ia, ib, c, h, w, inv_c](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      const Tensor& va2 = t.val(ia);
      const Tensor& vb2 = t.val(ib);
      if (t.requires_grad({ia})) {
        Tensor& ga = t.grad_buf(ia);
        for (int ci = 0; ci < c; ++ci)
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
              ga.at(ci, y, x) += g.at(0, y, x) * vb2.at(ci, y, x) * inv_c;
      }
      if (t.requires_grad({ib})) {
        Tensor& gb = t.grad_buf(ib);
        for (int ci = 0; ci < c; ++ci)
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
              gb.at(ci, y, x) += g.at(0, y, x) * va2.at(ci, y, x) * inv_c;
      }
    };
  }
  return {self};
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

Var Tape::bilinear_sample(Var src, Var coords) {
  const Tensor& vs = val(src.id);
  const Tensor& vc = val(coords.id);
  require(vs.rank() == 3 && vc.rank() == 3 && vc.dim(0) == 2, "bilinear_sample: bad shapes");
  const int c = vs.dim(0), hs = vs.dim(1), ws = vs.dim(2);
  const int h = vc.dim(1), w = vc.dim(2);
  Tensor out({c, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u = vc.at(0, y, x);
      const double v = vc.at(1, y, x);
      if (u <= kOobSentinel / 2 || v <= kOobSentinel / 2) continue;
      const int x0 = static_cast<int>(std::floor(u));
      const int y0 = static_cast<int>(std::floor(v));
      const double fu = u - x0, fv = v - y0;
      for (int dy = 0; dy <= 1; ++dy) {
        for (int dx = 0; dx <= 1; ++dx) {
          const int xi = x0 + dx, yi = y0 + dy;
          if (xi < 0 || xi >= ws || yi < 0 || yi >= hs) continue;
          const double wgt = (dx ? fu : 1.0 - fu) * (dy ? fv : 1.0 - fv);
          if (wgt == 0.0) continue;
          for (int ci = 0; ci < c; ++ci) out.at(ci, y, x) += wgt * vs.at(ci, yi, xi);
        }
      }
    }
  }
  const bool ng = requires_grad(src) || requires_grad(coords);
  const int is = src.id, ic = coords.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, is, ic, c, hs, ws, h, w](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      const Tensor& vs2 = t.val(is);
      const Tensor& vc2 = t.val(ic);
      const bool need_src = t.requires_grad({is});
      const bool need_crd = t.requires_grad({ic});
      Tensor* gs = need_src ? &t.grad_buf(is) : nullptr;
      Tensor* gc = need_crd ? &t.grad_buf(ic) : nullptr;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double u = vc2.at(0, y, x);
          const double v = vc2.at(1, y, x);
          if (u <= kOobSentinel / 2 || v <= kOobSentinel / 2) continue;
          const int x0 = static_cast<int>(std::floor(u));
          const int y0 = static_cast<int>(std::floor(v));
          const double fu = u - x0, fv = v - y0;
          double du = 0.0, dv = 0.0;
          for (int ci = 0; ci < c; ++ci) {
            const double gv = g.at(ci, y, x);
            if (gv == 0.0) continue;
            double tap[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
            for (int dy = 0; dy <= 1; ++dy)
              for (int dx = 0; dx <= 1; ++dx) {
                const int xi = x0 + dx, yi = y0 + dy;
                if (xi < 0 || xi >= ws || yi < 0 || yi >= hs) continue;
                tap[dy][dx] = vs2.at(ci, yi, xi);
                if (need_src) {
                  const double wgt = (dx ? fu : 1.0 - fu) * (dy ? fv : 1.0 - fv);
                  if (wgt != 0.0) gs->at(ci, yi, xi) += gv * wgt;
                }
              }
            if (need_crd) {
              du += gv * ((1.0 - fv) * (tap[0][1] - tap[0][0]) + fv * (tap[1][1] - tap[1][0]));
              dv += gv * ((1.0 - fu) * (tap[1][0] - tap[0][0]) + fu * (tap[1][1] - tap[0][1]));
            }
          }
          if (need_crd) {
            gc->at(0, y, x) += du;
            gc->at(1, y, x) += dv;
          }
        }
      }
    };
  }
  return {self};
}

// ---------------------------------------------------------------------------
// softmax / cross entropy
// ---------------------------------------------------------------------------

Var Tape::softmax_channels(Var logits) {
  const Tensor& vl = val(logits.id);
  require(vl.rank() == 3, "softmax: expects (C,H,W)");
  const int c = vl.dim(0), h = vl.dim(1), w = vl.dim(2);
  Tensor out(vl.shape());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double m = vl.at(0, y, x);
      for (int ci = 1; ci < c; ++ci) m = std::max(m, vl.at(ci, y, x));
      double s = 0.0;
      for (int ci = 0; ci < c; ++ci) s += std::exp(vl.at(ci, y, x) - m);
      for (int ci = 0; ci < c; ++ci) out.at(ci, y, x) = std::exp(vl.at(ci, y, x) - m) / s;
    }
  }
  const bool ng = requires_grad(logits);
  const int il = logits.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, il, c, h, w](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      const Tensor& p = t.val(self);
      Tensor& gl = t.grad_buf(il);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          double dot = 0.0;
          for (int ci = 0; ci < c; ++ci) dot += g.at(ci, y, x) * p.at(ci, y, x);
          for (int ci = 0; ci < c; ++ci)
            gl.at(ci, y, x) += p.at(ci, y, x) * (g.at(ci, y, x) - dot);
        }
      }
    };
  }
  return {self};
}

Var Tape::softmax_cross_entropy(Var logits, const Tensor& target_classes, const Tensor& valid) {
  const Tensor& vl = val(logits.id);
  require(vl.rank() == 3, "cross_entropy: expects (C,H,W) logits");
  const int c = vl.dim(0), h = vl.dim(1), w = vl.dim(2);
  require(target_classes.rank() == 2 && target_classes.dim(0) == h && target_classes.dim(1) == w,
          "cross_entropy: target shape mismatch");
  require(valid.same_shape(target_classes), "cross_entropy: mask shape mismatch");

  auto probs = std::make_shared<Tensor>(Tensor(vl.shape()));
  auto tgt = std::make_shared<Tensor>(target_classes);
  auto msk = std::make_shared<Tensor>(valid);
  std::int64_t n_valid = 0;
  double loss = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double m = vl.at(0, y, x);
      for (int ci = 1; ci < c; ++ci) m = std::max(m, vl.at(ci, y, x));
      double s = 0.0;
      for (int ci = 0; ci < c; ++ci) s += std::exp(vl.at(ci, y, x) - m);
      for (int ci = 0; ci < c; ++ci) probs->at(ci, y, x) = std::exp(vl.at(ci, y, x) - m) / s;
      if (valid.at(y, x) == 0.0) continue;
      const int tc = static_cast<int>(std::lround(target_classes.at(y, x)));
      require(tc >= 0 && tc < c, "cross_entropy: class index " + std::to_string(tc) +
                                     " out of range [0," + std::to_string(c) + ")");
      loss += (std::log(s) + m) - vl.at(tc, y, x);
      ++n_valid;
    }
  }
  const double inv_n = n_valid > 0 ? 1.0 / static_cast<double>(n_valid) : 0.0;
  loss *= inv_n;
  const bool ng = requires_grad(logits);
  const int il = logits.id;
  int self = push(Tensor::scalar(loss), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, il, c, h, w, probs, tgt, msk, inv_n](Tape& t) {
      const double g = t.nodes_[static_cast<size_t>(self)].grad[0] * inv_n;
      Tensor& gl = t.grad_buf(il);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (msk->at(y, x) == 0.0) continue;
          const int tc = static_cast<int>(std::lround(tgt->at(y, x)));
          for (int ci = 0; ci < c; ++ci) {
            const double onehot = ci == tc ? 1.0 : 0.0;
            gl.at(ci, y, x) += g * (probs->at(ci, y, x) - onehot);
          }
        }
      }
    };
  }
  return {self};
}

// ---------------------------------------------------------------------------
// differentiable camera geometry
// ---------------------------------------------------------------------------

Var Tape::parallax_to_depth(Var rho, const ParallaxGeometry& geom, double min_depth,
                            double max_depth, Tensor* out_mask) {
  const Tensor& vr = val(rho.id);
  require(vr.rank() == 3 && vr.dim(0) == 1, "parallax_to_depth: expects (1,H,W)");
  const int h = vr.dim(1), w = vr.dim(2);
  require(h == geom.intr.height && w == geom.intr.width,
          "parallax_to_depth: geometry resolution mismatch");
  require(min_depth > 0.0 && max_depth > min_depth, "parallax_to_depth: bad depth range");

  Tensor out({1, h, w});
  auto deriv = std::make_shared<Tensor>(Tensor({1, h, w}));
  Tensor mask({h, w});
  const double tz = geom.motion.translation.z();
  const bool printed = geom.mode == ParallaxDenominator::kAsPrinted;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double n = geom.numer.at(y, x);
      const double a = geom.axis.at(y, x);
      const double r = vr.at(0, y, x);
      double z = max_depth, dz = 0.0;
      bool ok = false;
      if (!geom.zero_translation && n >= 0.0 && a > kFrontEps && r > 0.0) {
        if (printed) {
          const double s = (n / r - tz) / a;
          if (s > min_depth * min_depth && s < max_depth * max_depth) {
            z = std::sqrt(s);
            dz = -(n / (r * r)) / (2.0 * z * a);
            ok = true;
          } else {
            z = s <= min_depth * min_depth ? min_depth : max_depth;
            ok = s > 0.0;
          }
        } else {
          const double disc = tz * tz + 4.0 * a * n / r;
          if (disc > 0.0) {
            const double zr = (-tz + std::sqrt(disc)) / (2.0 * a);
            if (zr > min_depth && zr < max_depth) {
              z = zr;
              dz = -(n / (r * r)) / std::sqrt(disc);
              ok = true;
            } else {
              z = zr <= min_depth ? min_depth : max_depth;
              ok = zr > 0.0;
            }
          }
        }
      }
      out.at(0, y, x) = z;
      deriv->at(0, y, x) = dz;
      mask.at(y, x) = ok ? 1.0 : 0.0;
    }
  }
  if (out_mask) *out_mask = mask;
  const bool ng = requires_grad(rho);
  const int ir = rho.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, ir, deriv](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      Tensor& gr = t.grad_buf(ir);
      for (std::int64_t i = 0; i < g.size(); ++i) gr[i] += g[i] * (*deriv)[i];
    };
  }
  return {self};
}

Var Tape::reproject_coords(Var depth, const ParallaxGeometry& geom) {
  const Tensor& vz = val(depth.id);
  require(vz.rank() == 3 && vz.dim(0) == 1, "reproject_coords: expects (1,H,W)");
  const int h = vz.dim(1), w = vz.dim(2);
  require(h == geom.intr.height && w == geom.intr.width,
          "reproject_coords: geometry resolution mismatch");
  const Eigen::Vector3d& tr = geom.motion.translation;
  const CameraIntrinsics& intr = geom.intr;

  Tensor out({2, h, w});
  auto deriv = std::make_shared<Tensor>(Tensor({2, h, w}));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double z = vz.at(0, y, x);
      const double rx = geom.ray_x.at(y, x);
      const double ry = geom.ray_y.at(y, x);
      const double rz = geom.ray_z.at(y, x);
      const double qx = z * rx + tr.x();
      const double qy = z * ry + tr.y();
      const double qz = z * rz + tr.z();
      if (qz <= kFrontEps) {
        out.at(0, y, x) = kOobSentinel;
        out.at(1, y, x) = kOobSentinel;
        continue;
      }
      out.at(0, y, x) = intr.fx * qx / qz + intr.cx;
      out.at(1, y, x) = intr.fy * qy / qz + intr.cy;
      const double inv_qz2 = 1.0 / (qz * qz);
      deriv->at(0, y, x) = intr.fx * (rx * tr.z() - rz * tr.x()) * inv_qz2;
      deriv->at(1, y, x) = intr.fy * (ry * tr.z() - rz * tr.y()) * inv_qz2;
    }
  }
  const bool ng = requires_grad(depth);
  const int iz = depth.id;
  int self = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_.back().back = [self, iz, deriv, h, w](Tape& t) {
      const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
      Tensor& gz = t.grad_buf(iz);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          gz.at(0, y, x) +=
              g.at(0, y, x) * deriv->at(0, y, x) + g.at(1, y, x) * deriv->at(1, y, x);
    };
  }
  return {self};
}

}  // namespace cosemdepth
