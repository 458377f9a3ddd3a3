#include "cosemdepth/net.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <random>

namespace cosemdepth {

using nlohmann::json;

void ArchConfig::validate() const {
  require(num_levels == 4 || num_levels == 5 || num_levels == 6,
          "arch: num_levels must be 4, 5, or 6");
  require(static_cast<int>(filters_per_level.size()) == num_levels,
          "arch: filters_per_level must list one entry per level");
  require(static_cast<int>(split_k_per_level.size()) == num_levels,
          "arch: split_k_per_level must list one entry per level");
  for (int i = 0; i < num_levels; ++i) {
    require(filters_per_level[static_cast<size_t>(i)] > 0, "arch: filter counts must be positive");
    const int k = split_k_per_level[static_cast<size_t>(i)];
    require(k >= 1 && filters_per_level[static_cast<size_t>(i)] % k == 0,
            "arch: filters at level " + std::to_string(i + 1) + " not divisible by K");
  }
  require(sncv_radius >= 1, "arch: sncv_radius must be >= 1");
  require(pscv_candidates >= 3 && pscv_candidates % 2 == 1,
          "arch: pscv_candidates must be odd and >= 3");
  require(pscv_step > 1.0, "arch: pscv_step must exceed 1");
  require(num_classes >= 2, "arch: need at least 2 classes");
  require(sequence_length >= 1, "arch: sequence_length must be >= 1");
  require(static_cast<int>(depth_refiner_filters.size()) == 6,
          "arch: parallax refiner is a stack of 7 convolutions (6 hidden widths)");
  require(semantic_refiner_layers >= 2, "arch: semantic refiner needs >= 2 layers");
  require(static_cast<int>(semantic_refiner_filters.size()) == semantic_refiner_layers - 1,
          "arch: semantic_refiner_filters must list semantic_refiner_layers-1 widths");
  require(parallax_feature_channels >= 1, "arch: parallax_feature_channels must be >= 1");
  require(max_depth > min_depth && min_depth > 0.0, "arch: bad depth range");
}

std::string ArchConfig::to_json() const {
  json j;
  j["num_levels"] = num_levels;
  j["filters_per_level"] = filters_per_level;
  j["split_k_per_level"] = split_k_per_level;
  j["sncv_radius"] = sncv_radius;
  j["pscv_candidates"] = pscv_candidates;
  j["pscv_step"] = pscv_step;
  j["num_classes"] = num_classes;
  j["sequence_length"] = sequence_length;
  j["semantic_refiner_layers"] = semantic_refiner_layers;
  j["depth_refiner_filters"] = depth_refiner_filters;
  j["semantic_refiner_filters"] = semantic_refiner_filters;
  j["parallax_feature_channels"] = parallax_feature_channels;
  j["max_depth"] = max_depth;
  j["min_depth"] = min_depth;
  j["leaky_slope"] = leaky_slope;
  j["parallax_denominator"] =
      parallax_denominator == ParallaxDenominator::kAsPrinted ? "as_printed" : "depth_scaled";
  return j.dump();
}

ArchConfig ArchConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  ArchConfig c;
  c.num_levels = j.at("num_levels").get<int>();
  c.filters_per_level = j.at("filters_per_level").get<std::vector<int>>();
  c.split_k_per_level = j.at("split_k_per_level").get<std::vector<int>>();
  c.sncv_radius = j.at("sncv_radius").get<int>();
  c.pscv_candidates = j.at("pscv_candidates").get<int>();
  c.pscv_step = j.at("pscv_step").get<double>();
  c.num_classes = j.at("num_classes").get<int>();
  c.sequence_length = j.at("sequence_length").get<int>();
  c.semantic_refiner_layers = j.at("semantic_refiner_layers").get<int>();
  c.depth_refiner_filters = j.at("depth_refiner_filters").get<std::vector<int>>();
  c.semantic_refiner_filters = j.at("semantic_refiner_filters").get<std::vector<int>>();
  c.parallax_feature_channels = j.at("parallax_feature_channels").get<int>();
  c.max_depth = j.at("max_depth").get<double>();
  c.min_depth = j.at("min_depth").get<double>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  c.parallax_denominator = j.value("parallax_denominator", "as_printed") == std::string("as_printed")
                               ? ParallaxDenominator::kAsPrinted
                               : ParallaxDenominator::kDepthScaled;
  c.validate();
  return c;
}

ArchConfig ArchConfig::compact(int num_levels, int num_classes) {
  ArchConfig c;
  c.num_levels = num_levels;
  c.num_classes = num_classes;
  if (num_levels == 4) {
    c.filters_per_level = {8, 12, 16, 24};
    c.split_k_per_level = {1, 2, 2, 4};
  } else if (num_levels == 5) {
    c.filters_per_level = {8, 12, 16, 24, 32};
    c.split_k_per_level = {1, 2, 2, 4, 4};
  } else {
    c.filters_per_level = {8, 12, 16, 24, 32, 32};
    c.split_k_per_level = {1, 2, 2, 4, 4, 4};
  }
  c.sncv_radius = 2;
  c.depth_refiner_filters = {24, 24, 16, 16, 12, 12};
  c.semantic_refiner_layers = 4;
  c.semantic_refiner_filters = {24, 20, 16};
  c.parallax_feature_channels = 8;
  c.validate();
  return c;
}

std::int64_t ParamStore::total_size() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : tensors) n += t.size();
  return n;
}

std::int64_t ParamStore::size_with_prefix(const std::string& prefix) const {
  std::int64_t n = 0;
  for (const auto& [name, t] : tensors)
    if (name.rfind(prefix, 0) == 0) n += t.size();
  return n;
}

std::string mode_name(ModelMode m) {
  switch (m) {
    case ModelMode::kJoint: return "joint";
    case ModelMode::kDepthOnly: return "depth_only";
    case ModelMode::kSemanticOnly: return "semantic_only";
  }
  return "joint";
}

ModelMode mode_from_name(const std::string& name) {
  if (name == "joint") return ModelMode::kJoint;
  if (name == "depth_only") return ModelMode::kDepthOnly;
  if (name == "semantic_only") return ModelMode::kSemanticOnly;
  throw std::invalid_argument("unknown model mode '" + name + "'");
}

// ---------------------------------------------------------------------------
// parameter shapes / init
// ---------------------------------------------------------------------------

CoSemDepthModel::CoSemDepthModel(ArchConfig cfg, ModelMode mode)
    : cfg_(std::move(cfg)), mode_(mode) {
  cfg_.validate();
  build_param_shapes();
}

int CoSemDepthModel::depth_refiner_input_channels(int level) const {
  const int c = cfg_.filters_per_level[static_cast<size_t>(level - 1)];
  const int side = 2 * cfg_.sncv_radius + 1;
  // normalized encoder features + SNCV + PSCV + upscaled parallax
  // + upscaled parallax features + recomputed prior-time parallax
  return c + side * side + cfg_.pscv_candidates + 1 + cfg_.parallax_feature_channels + 1;
}

int CoSemDepthModel::semantic_refiner_input_channels(int level) const {
  const int c = cfg_.filters_per_level[static_cast<size_t>(level - 1)];
  // normalized encoder features + upscaled semantic features + upscaled logits
  return c + 4 + cfg_.num_classes;
}

void CoSemDepthModel::build_param_shapes() {
  auto conv = [&](const std::string& name, int out_c, int in_c) {
    params_.tensors[name + ".w"] = Tensor({out_c, in_c, 3, 3});
    params_.tensors[name + ".b"] = Tensor({out_c});
  };

  for (int l = 1; l <= cfg_.num_levels; ++l) {
    const int out_c = cfg_.filters_per_level[static_cast<size_t>(l - 1)];
    const int in_c = l == 1 ? 3 : cfg_.filters_per_level[static_cast<size_t>(l - 2)];
    conv("encoder.l" + std::to_string(l) + ".conv1", out_c, in_c);
    conv("encoder.l" + std::to_string(l) + ".conv2", out_c, out_c);
  }

  if (mode_ != ModelMode::kSemanticOnly) {
    for (int l = 1; l <= cfg_.num_levels; ++l) {
      const std::string base = "depth.l" + std::to_string(l) + ".conv";
      int in_c = depth_refiner_input_channels(l);
      for (size_t i = 0; i < cfg_.depth_refiner_filters.size(); ++i) {
        conv(base + std::to_string(i + 1), cfg_.depth_refiner_filters[i], in_c);
        in_c = cfg_.depth_refiner_filters[i];
      }
      conv(base + "7", 1 + cfg_.parallax_feature_channels, in_c);
    }
  }

  if (mode_ != ModelMode::kDepthOnly) {
    for (int l = 1; l <= cfg_.num_levels; ++l) {
      const std::string base = "sem.l" + std::to_string(l) + ".conv";
      int in_c = semantic_refiner_input_channels(l);
      for (size_t i = 0; i < cfg_.semantic_refiner_filters.size(); ++i) {
        conv(base + std::to_string(i + 1), cfg_.semantic_refiner_filters[i], in_c);
        in_c = cfg_.semantic_refiner_filters[i];
      }
      conv(base + std::to_string(cfg_.semantic_refiner_layers), 4 + cfg_.num_classes, in_c);
    }
  }
}

void CoSemDepthModel::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto u01 = [&rng]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  for (auto& [name, t] : params_.tensors) {
    if (name.size() >= 2 && name.substr(name.size() - 2) == ".b") {
      t.fill(0.0);
      continue;
    }
    const int fan_in = t.dim(1) * t.dim(2) * t.dim(3);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = (2.0 * u01() - 1.0) * limit;
  }
  // Parallax output bias encodes the x2-per-level scaling law so the initial
  // estimates start at a plausible magnitude at every level.
  if (mode_ != ModelMode::kSemanticOnly) {
    for (int l = 1; l <= cfg_.num_levels; ++l) {
      Tensor& b = params_.tensors.at("depth.l" + std::to_string(l) + ".conv7.b");
      b[0] = (1.0 - l) * std::log(2.0);
    }
  }
}

std::string CoSemDepthModel::fingerprint() const {
  const std::string text = cfg_.to_json() + "|" + mode_name(mode_);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : text) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::map<std::string, Var> CoSemDepthModel::register_params(Tape& tape, bool as_leaves) const {
  std::map<std::string, Var> pv;
  for (const auto& [name, t] : params_.tensors)
    pv[name] = as_leaves ? tape.leaf(t) : tape.constant(t);
  return pv;
}

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

std::vector<Var> CoSemDepthModel::encoder_forward(Tape& tape,
                                                  const std::map<std::string, Var>& pv,
                                                  Var rgb) const {
  const Tensor& v = tape.value(rgb);
  require(v.rank() == 3 && v.dim(0) == 3, "encoder: expects (3,H,W) input");
  const int div = 1 << cfg_.num_levels;
  require(v.dim(1) % div == 0 && v.dim(2) % div == 0,
          "encoder: input dims " + v.shape_str() + " must be divisible by 2^" +
              std::to_string(cfg_.num_levels));

  std::vector<Var> pyramid;
  Var x = rgb;
  for (int l = 1; l <= cfg_.num_levels; ++l) {
    const std::string base = "encoder.l" + std::to_string(l) + ".conv";
    x = tape.conv2d(x, pv.at(base + "1.w"), pv.at(base + "1.b"), 2, 1);
    if (l == 1) x = tape.dinl(x);
    x = tape.leaky_relu(x, cfg_.leaky_slope);
    x = tape.conv2d(x, pv.at(base + "2.w"), pv.at(base + "2.b"), 1, 1);
    x = tape.leaky_relu(x, cfg_.leaky_slope);
    pyramid.push_back(x);
  }
  return pyramid;
}

FrameOutputs CoSemDepthModel::depth_decoder_forward(
    Tape& tape, const std::map<std::string, Var>& pv, const std::vector<Var>& pyramid_t,
    const std::vector<Var>& pyramid_prev, const std::vector<Var>& prev_parallax,
    const MotionTransform& motion, const CameraIntrinsics& intr) const {
  require(static_cast<int>(pyramid_t.size()) == cfg_.num_levels,
          "depth_decoder: pyramid level count mismatch");
  require(pyramid_prev.size() == pyramid_t.size(), "depth_decoder: previous pyramid mismatch");
  require(prev_parallax.empty() ||
              static_cast<int>(prev_parallax.size()) == cfg_.num_levels,
          "depth_decoder: parallax state level count mismatch");

  const int levels = cfg_.num_levels;
  FrameOutputs out;
  out.has_depth = true;
  out.parallax.resize(static_cast<size_t>(levels));
  out.parallax_feats.resize(static_cast<size_t>(levels));
  out.depth.resize(static_cast<size_t>(levels));
  out.depth_valid.resize(static_cast<size_t>(levels));

  Var rho_coarser, feats_coarser;
  for (int l = levels; l >= 1; --l) {
    const CameraIntrinsics intr_l = intr.downscaled(1 << l);
    const ParallaxGeometry geom =
        ParallaxGeometry::make(motion, intr_l, cfg_.parallax_denominator);
    const int h = intr_l.height, w = intr_l.width;
    const int k = cfg_.split_k_per_level[static_cast<size_t>(l - 1)];

    const Var f_t = tape.group_l2_normalize(pyramid_t[static_cast<size_t>(l - 1)], k);
    const Var f_p = tape.group_l2_normalize(pyramid_prev[static_cast<size_t>(l - 1)], k);

    Var rho_up, feats_up;
    if (l == levels) {
      rho_up = tape.constant(Tensor({1, h, w}));
      feats_up = tape.constant(Tensor({cfg_.parallax_feature_channels, h, w}));
    } else {
      // Parallax values double when the map moves to a 2x finer grid.
      rho_up = tape.scale(tape.upsample2_nearest(rho_coarser), 2.0);
      feats_up = tape.upsample2_nearest(feats_coarser);
    }

    Var rho_prev = prev_parallax.empty() ? tape.constant(Tensor({1, h, w}))
                                         : prev_parallax[static_cast<size_t>(l - 1)];

    // Recompute layer: warp the prior-time parallax into the current frame
    // using the current running depth estimate.
    const Var est_src = (l == levels) ? rho_prev : rho_up;
    const Var est_depth =
        tape.parallax_to_depth(est_src, geom, cfg_.min_depth, cfg_.max_depth);
    const Var est_coords = tape.reproject_coords(est_depth, geom);
    const Var rho_recomputed = tape.bilinear_sample(rho_prev, est_coords);

    // PSCV: sweep candidates around the running estimate; at the coarsest
    // level the recomputed prior is the only estimate available.
    const Var center = (l == levels) ? rho_recomputed : rho_up;
    std::vector<Var> costs;
    const int mid = (cfg_.pscv_candidates - 1) / 2;
    for (int c = 0; c < cfg_.pscv_candidates; ++c) {
      const double factor = std::pow(cfg_.pscv_step, c - mid);
      const Var cand = tape.scale(center, factor);
      const Var z = tape.parallax_to_depth(cand, geom, cfg_.min_depth, cfg_.max_depth);
      const Var coords = tape.reproject_coords(z, geom);
      const Var warped = tape.bilinear_sample(f_p, coords);
      costs.push_back(tape.channel_mean_dot(f_t, warped));
    }

    const Var sncv_vol = tape.sncv(f_t, cfg_.sncv_radius);

    std::vector<Var> inputs = {f_t, sncv_vol};
    inputs.insert(inputs.end(), costs.begin(), costs.end());
    inputs.push_back(rho_up);
    inputs.push_back(feats_up);
    inputs.push_back(rho_recomputed);
    Var x = tape.concat_channels(inputs);

    const std::string base = "depth.l" + std::to_string(l) + ".conv";
    for (size_t i = 0; i < cfg_.depth_refiner_filters.size(); ++i) {
      x = tape.conv2d(x, pv.at(base + std::to_string(i + 1) + ".w"),
                      pv.at(base + std::to_string(i + 1) + ".b"), 1, 1);
      x = tape.leaky_relu(x, cfg_.leaky_slope);
    }
    x = tape.conv2d(x, pv.at(base + "7.w"), pv.at(base + "7.b"), 1, 1);

    const Var rho = tape.exp_clamped(tape.slice_channels(x, 0, 1));
    const Var feats = tape.leaky_relu(
        tape.slice_channels(x, 1, cfg_.parallax_feature_channels), cfg_.leaky_slope);

    Tensor mask;
    const Var depth = tape.parallax_to_depth(rho, geom, cfg_.min_depth, cfg_.max_depth, &mask);

    out.parallax[static_cast<size_t>(l - 1)] = rho;
    out.parallax_feats[static_cast<size_t>(l - 1)] = feats;
    out.depth[static_cast<size_t>(l - 1)] = depth;
    out.depth_valid[static_cast<size_t>(l - 1)] = mask;
    rho_coarser = rho;
    feats_coarser = feats;
  }
  return out;
}

FrameOutputs CoSemDepthModel::semantic_decoder_forward(Tape& tape,
                                                       const std::map<std::string, Var>& pv,
                                                       const std::vector<Var>& pyramid_t) const {
  require(static_cast<int>(pyramid_t.size()) == cfg_.num_levels,
          "semantic_decoder: pyramid level count mismatch");
  const int levels = cfg_.num_levels;
  FrameOutputs out;
  out.has_semantics = true;
  out.seg_logits.resize(static_cast<size_t>(levels));

  Var logits_coarser, feats_coarser;
  for (int l = levels; l >= 1; --l) {
    const Tensor& fshape = tape.value(pyramid_t[static_cast<size_t>(l - 1)]);
    const int h = fshape.dim(1), w = fshape.dim(2);

    const Var f_norm = tape.group_l2_normalize(pyramid_t[static_cast<size_t>(l - 1)], 1);
    Var logits_up, feats_up;
    if (l == levels) {
      logits_up = tape.constant(Tensor({cfg_.num_classes, h, w}));
      feats_up = tape.constant(Tensor({4, h, w}));
    } else {
      logits_up = tape.upsample2_nearest(logits_coarser);
      feats_up = tape.upsample2_nearest(feats_coarser);
    }

    Var x = tape.concat_channels({f_norm, feats_up, logits_up});
    const std::string base = "sem.l" + std::to_string(l) + ".conv";
    for (size_t i = 0; i < cfg_.semantic_refiner_filters.size(); ++i) {
      x = tape.conv2d(x, pv.at(base + std::to_string(i + 1) + ".w"),
                      pv.at(base + std::to_string(i + 1) + ".b"), 1, 1);
      x = tape.leaky_relu(x, cfg_.leaky_slope);
    }
    x = tape.conv2d(x, pv.at(base + std::to_string(cfg_.semantic_refiner_layers) + ".w"),
                    pv.at(base + std::to_string(cfg_.semantic_refiner_layers) + ".b"), 1, 1);

    const Var feats = tape.leaky_relu(tape.slice_channels(x, 0, 4), cfg_.leaky_slope);
    const Var logits = tape.slice_channels(x, 4, cfg_.num_classes);
    out.seg_logits[static_cast<size_t>(l - 1)] = logits;
    logits_coarser = logits;
    feats_coarser = feats;
  }
  return out;
}

SequenceForward CoSemDepthModel::forward(Tape& tape, const std::vector<Tensor>& frames_rgb,
                                         const std::vector<MotionTransform>& motions,
                                         const CameraIntrinsics& intr,
                                         bool params_as_leaves) const {
  require(!frames_rgb.empty(), "forward: empty sequence");
  require(motions.size() == frames_rgb.size() - 1,
          "forward: need exactly sequence_length-1 motions, got " +
              std::to_string(motions.size()) + " for " + std::to_string(frames_rgb.size()) +
              " frames");
  const bool wants_depth = mode_ != ModelMode::kSemanticOnly;
  require(!wants_depth || frames_rgb.size() >= 2,
          "forward: the depth branch needs a sequence of at least 2 frames");

  SequenceForward seq;
  seq.param_vars = register_params(tape, params_as_leaves);
  const auto& pv = seq.param_vars;

  std::vector<Var> prev_pyramid;
  std::vector<Var> prev_parallax;
  for (size_t t = 0; t < frames_rgb.size(); ++t) {
    const std::vector<Var> pyramid = encoder_forward(tape, pv, tape.constant(frames_rgb[t]));
    FrameOutputs fo;
    if (t >= 1) {
      const MotionTransform& motion = motions[t - 1];
      if (wants_depth) {
        fo = depth_decoder_forward(tape, pv, pyramid, prev_pyramid, prev_parallax, motion, intr);
        prev_parallax = fo.parallax;
      }
      if (mode_ != ModelMode::kDepthOnly) {
        FrameOutputs sem = semantic_decoder_forward(tape, pv, pyramid);
        fo.seg_logits = std::move(sem.seg_logits);
        fo.has_semantics = true;
      }
    } else if (frames_rgb.size() == 1 && mode_ != ModelMode::kDepthOnly) {
      fo = semantic_decoder_forward(tape, pv, pyramid);
    }
    seq.frames.push_back(std::move(fo));
    prev_pyramid = pyramid;
  }
  return seq;
}

JointOutput CoSemDepthModel::infer(const std::vector<Tensor>& frames_rgb,
                                   const std::vector<MotionTransform>& motions,
                                   const CameraIntrinsics& intr) const {
  Tape tape;
  const SequenceForward seq = forward(tape, frames_rgb, motions, intr, false);
  const FrameOutputs& last = seq.frames.back();

  JointOutput out;
  const int h = intr.height, w = intr.width;
  if (last.has_depth) {
    Tape& t = tape;
    const Var depth_full = t.upsample2_nearest(last.depth[0]);
    const Tensor& dv = t.value(depth_full);
    out.depth = DepthMap{Tensor({h, w}), cfg_.max_depth};
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.depth.values.at(y, x) = dv.at(0, y, x);
    out.depth_valid = Tensor({h, w});
    const Tensor& mask_half = last.depth_valid[0];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.depth_valid.at(y, x) = mask_half.at(y / 2, x / 2);
    for (const Var& rho : last.parallax) out.level_parallax.push_back(tape.value(rho));
  }
  if (last.has_semantics) {
    const Var probs_half = tape.softmax_channels(last.seg_logits[0]);
    out.seg_logits = tape.value(tape.upsample2_nearest(last.seg_logits[0]));
    out.seg_probs = tape.value(tape.upsample2_nearest(probs_half));
  }
  return out;
}

std::int64_t analytic_param_count(const ArchConfig& cfg, ModelMode mode) {
  auto conv_params = [](int out_c, int in_c) {
    return static_cast<std::int64_t>(out_c) * in_c * 9 + out_c;
  };
  std::int64_t n = 0;
  for (int l = 1; l <= cfg.num_levels; ++l) {
    const int out_c = cfg.filters_per_level[static_cast<size_t>(l - 1)];
    const int in_c = l == 1 ? 3 : cfg.filters_per_level[static_cast<size_t>(l - 2)];
    n += conv_params(out_c, in_c) + conv_params(out_c, out_c);
  }
  const int side = 2 * cfg.sncv_radius + 1;
  if (mode != ModelMode::kSemanticOnly) {
    for (int l = 1; l <= cfg.num_levels; ++l) {
      int in_c = cfg.filters_per_level[static_cast<size_t>(l - 1)] + side * side +
                 cfg.pscv_candidates + 1 + cfg.parallax_feature_channels + 1;
      for (int f : cfg.depth_refiner_filters) {
        n += conv_params(f, in_c);
        in_c = f;
      }
      n += conv_params(1 + cfg.parallax_feature_channels, in_c);
    }
  }
  if (mode != ModelMode::kDepthOnly) {
    for (int l = 1; l <= cfg.num_levels; ++l) {
      int in_c = cfg.filters_per_level[static_cast<size_t>(l - 1)] + 4 + cfg.num_classes;
      for (int f : cfg.semantic_refiner_filters) {
        n += conv_params(f, in_c);
        in_c = f;
      }
      n += conv_params(4 + cfg.num_classes, in_c);
    }
  }
  return n;
}

}  // namespace cosemdepth
