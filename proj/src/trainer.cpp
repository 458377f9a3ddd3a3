#include "cosemdepth/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <thread>

namespace cosemdepth {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  require(learning_rate > 0.0, "train: learning_rate must be positive");
  require(batch_size >= 1, "train: batch_size must be >= 1");
  require(epochs >= 0, "train: epochs must be >= 0");
  require(sequence_length >= 1, "train: sequence_length must be >= 1");
  require(mix_ratio_a >= 1 && mix_ratio_b >= 1, "train: mix ratio parts must be >= 1");
  require(max_depth_cap > 0.0, "train: max_depth_cap must be positive");
}

std::string TrainConfig::to_json() const {
  json j;
  j["learning_rate"] = learning_rate;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["loss_weight"] = loss_weight;
  j["augment"] = {{"flip", augment.flip},
                  {"rotation", augment.rotation},
                  {"color_jitter", augment.color_jitter},
                  {"contrast", augment.contrast},
                  {"brightness", augment.brightness},
                  {"hue", augment.hue},
                  {"saturation", augment.saturation}};
  j["seed"] = seed;
  j["sequence_length"] = sequence_length;
  j["max_depth_cap"] = max_depth_cap;
  j["include_sky"] = include_sky;
  j["mix_root_b"] = mix_root_b;
  j["mix_ratio_a"] = mix_ratio_a;
  j["mix_ratio_b"] = mix_ratio_b;
  j["lr_drop"] = lr_drop;
  j["lr_drop_epoch"] = lr_drop_epoch;
  j["lr_drop_factor"] = lr_drop_factor;
  j["workers"] = workers;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", 1e-4);
  c.beta1 = j.value("beta1", 0.9);
  c.beta2 = j.value("beta2", 0.999);
  c.batch_size = j.value("batch_size", 3);
  c.epochs = j.value("epochs", 10);
  c.loss_weight = j.value("loss_weight", kDefaultLossWeight);
  if (j.contains("augment")) {
    const json& a = j.at("augment");
    c.augment.flip = a.value("flip", true);
    c.augment.rotation = a.value("rotation", true);
    c.augment.color_jitter = a.value("color_jitter", true);
    c.augment.contrast = a.value("contrast", 0.2);
    c.augment.brightness = a.value("brightness", 0.15);
    c.augment.hue = a.value("hue", 0.1);
    c.augment.saturation = a.value("saturation", 0.25);
  }
  c.seed = j.value("seed", 0ull);
  c.sequence_length = j.value("sequence_length", 3);
  c.max_depth_cap = j.value("max_depth_cap", 80.0);
  c.include_sky = j.value("include_sky", true);
  c.mix_root_b = j.value("mix_root_b", std::string());
  c.mix_ratio_a = j.value("mix_ratio_a", 1);
  c.mix_ratio_b = j.value("mix_ratio_b", 1);
  c.lr_drop = j.value("lr_drop", false);
  c.lr_drop_epoch = j.value("lr_drop_epoch", 70);
  c.lr_drop_factor = j.value("lr_drop_factor", 0.1);
  c.workers = j.value("workers", 0);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

SequenceDataset::SequenceDataset(const std::string& root, int sequence_length, int stride)
    : sequence_length_(sequence_length) {
  require(sequence_length >= 1, "dataset: sequence_length must be >= 1");
  require(stride >= 1, "dataset: stride must be >= 1");
  trajectories_ = read_dataset(root);
  intr_ = trajectories_.front().meta.intrinsics;
  max_depth_ = trajectories_.front().meta.max_depth;
  for (size_t t = 0; t < trajectories_.size(); ++t) {
    const auto& traj = trajectories_[t];
    require(traj.meta.intrinsics.width == intr_.width &&
                traj.meta.intrinsics.height == intr_.height,
            "dataset: trajectories disagree on resolution");
    const int frames = static_cast<int>(traj.frames.size());
    for (int s = 0; s + sequence_length <= frames; s += stride)
      windows_.push_back({static_cast<int>(t), s});
  }
  require(!windows_.empty(), "dataset: no complete sequence windows in " + root);
}

SequenceSample SequenceDataset::sample(std::int64_t index) const {
  require(index >= 0 && index < size(), "dataset: sample index out of range");
  const auto [ti, start] = windows_[static_cast<size_t>(index)];
  const Trajectory& traj = trajectories_[static_cast<size_t>(ti)];
  SequenceSample s;
  s.intr = intr_;
  s.max_depth = traj.meta.max_depth;
  const int h = intr_.height, w = intr_.width;
  for (int k = 0; k < sequence_length_; ++k) {
    const FrameSample& f = traj.frames[static_cast<size_t>(start + k)];
    Tensor rgb({3, h, w});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const size_t o = (static_cast<size_t>(y) * w + x) * 3;
        rgb.at(0, y, x) = f.rgb[o] / 255.0;
        rgb.at(1, y, x) = f.rgb[o + 1] / 255.0;
        rgb.at(2, y, x) = f.rgb[o + 2] / 255.0;
      }
    s.rgb.push_back(std::move(rgb));
    s.depth.push_back(f.depth.values);
    s.seg.push_back(f.seg);
    s.valid.push_back(Tensor::full({h, w}, 1.0));
    if (k > 0)
      s.motions.push_back(relative_transform(traj.frames[static_cast<size_t>(start + k - 1)].pose,
                                             traj.frames[static_cast<size_t>(start + k)].pose));
  }
  return s;
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

namespace {

std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a + 0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

struct Dihedral {
  bool flip = false;  // horizontal mirror, applied before rotation
  int k = 0;          // quarter turns
};

// Pixel permutation: p' = R^k(F(p)) with F:(i,j)->(W-1-i,j) and
// R:(i,j)->(W-1-j,i). Requires square maps when k is odd.
void dihedral_map(const Dihedral& d, int w, int h, int i, int j, int* io, int* jo) {
  int x = d.flip ? w - 1 - i : i;
  int y = j;
  int cw = w, ch = h;
  for (int r = 0; r < (d.k & 3); ++r) {
    const int nx = cw - 1 - y;
    const int ny = x;
    x = nx;
    y = ny;
    std::swap(cw, ch);
  }
  *io = x;
  *jo = y;
}

Tensor dihedral_apply_map(const Tensor& in, const Dihedral& d) {
  const int h = in.dim(in.rank() - 2), w = in.dim(in.rank() - 1);
  if (d.k & 1) require(w == h, "augment: quarter-turn rotation needs square maps");
  Tensor out(in.shape());
  const int c = in.rank() == 3 ? in.dim(0) : 1;
  for (int ci = 0; ci < c; ++ci)
    for (int j = 0; j < h; ++j)
      for (int i = 0; i < w; ++i) {
        int io, jo;
        dihedral_map(d, w, h, i, j, &io, &jo);
        if (in.rank() == 3)
          out.at(ci, jo, io) = in.at(ci, j, i);
        else
          out.at(jo, io) = in.at(j, i);
      }
  return out;
}

Eigen::Matrix3d dihedral_matrix(const Dihedral& d) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  if (d.flip) m = Eigen::Vector3d(-1.0, 1.0, 1.0).asDiagonal() * m;
  Eigen::Matrix3d rot;
  rot << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
  for (int r = 0; r < (d.k & 3); ++r) m = rot * m;
  return m;
}

void color_jitter(Tensor& rgb, double contrast, double brightness, double hue,
                  double saturation) {
  const int h = rgb.dim(1), w = rgb.dim(2);
  // Hue: rotation about the gray axis.
  const Eigen::Vector3d axis = Eigen::Vector3d::Ones().normalized();
  const Eigen::Matrix3d hrot = Eigen::AngleAxisd(hue, axis).toRotationMatrix();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      Eigen::Vector3d v(rgb.at(0, y, x), rgb.at(1, y, x), rgb.at(2, y, x));
      const double luma = 0.299 * v.x() + 0.587 * v.y() + 0.114 * v.z();
      v = Eigen::Vector3d::Constant(luma) + (v - Eigen::Vector3d::Constant(luma)) * (1.0 + saturation);
      v = hrot * v;
      v = (v.array() - 0.5) * (1.0 + contrast) + 0.5 + brightness;
      for (int c = 0; c < 3; ++c)
        rgb.at(c, y, x) = std::min(1.0, std::max(0.0, v[c]));
    }
  }
}

}  // namespace

SequenceSample augment(const SequenceSample& sample, const AugmentConfig& cfg,
                       std::uint64_t rng_state) {
  std::mt19937_64 rng(rng_state);
  auto u01 = [&rng]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

  Dihedral d;
  if (cfg.flip) d.flip = u01() < 0.5;
  if (cfg.rotation) d.k = static_cast<int>(u01() * 4.0) & 3;
  const bool jitter = cfg.color_jitter;
  const double contrast = jitter ? (2.0 * u01() - 1.0) * cfg.contrast : 0.0;
  const double brightness = jitter ? (2.0 * u01() - 1.0) * cfg.brightness : 0.0;
  const double hue = jitter ? (2.0 * u01() - 1.0) * cfg.hue : 0.0;
  const double saturation = jitter ? (2.0 * u01() - 1.0) * cfg.saturation : 0.0;

  SequenceSample out;
  out.intr = sample.intr;
  out.max_depth = sample.max_depth;
  const bool geometric = d.flip || d.k != 0;
  const Eigen::Matrix3d m = dihedral_matrix(d);

  for (size_t t = 0; t < sample.rgb.size(); ++t) {
    Tensor rgb = geometric ? dihedral_apply_map(sample.rgb[t], d) : sample.rgb[t];
    if (jitter) color_jitter(rgb, contrast, brightness, hue, saturation);
    out.rgb.push_back(std::move(rgb));
    out.depth.push_back(geometric ? dihedral_apply_map(sample.depth[t], d) : sample.depth[t]);
    out.seg.push_back(geometric ? dihedral_apply_map(sample.seg[t], d) : sample.seg[t]);
    out.valid.push_back(geometric ? dihedral_apply_map(sample.valid[t], d) : sample.valid[t]);
  }
  for (const MotionTransform& motion : sample.motions) {
    MotionTransform mt;
    mt.rotation = m * motion.rotation * m.transpose();
    mt.translation = m * motion.translation;
    out.motions.push_back(mt);
  }
  return out;
}

// ---------------------------------------------------------------------------
// mix sampler
// ---------------------------------------------------------------------------

MixSampler::MixSampler(std::int64_t count_a, std::int64_t count_b, int ratio_a, int ratio_b,
                       std::uint64_t seed)
    : seed_(seed) {
  require(count_a > 0, "mix_sampler: dataset a is empty");
  require(ratio_a >= 0 && ratio_b >= 0 && ratio_a + ratio_b > 0, "mix_sampler: bad ratio");
  require(ratio_b == 0 || count_b > 0, "mix_sampler: dataset b is empty");
  count_[0] = count_a;
  count_[1] = count_b;
  ratio_[0] = ratio_a;
  ratio_[1] = ratio_b;
}

std::int64_t MixSampler::refill(int which) {
  if (cursor_[which] >= order_[which].size()) {
    order_[which].resize(static_cast<size_t>(count_[which]));
    std::iota(order_[which].begin(), order_[which].end(), 0);
    std::mt19937_64 rng(mix64(seed_, 0x517cc1b727220a95ull * (which + 1) + pass_[which]));
    std::shuffle(order_[which].begin(), order_[which].end(), rng);
    cursor_[which] = 0;
    ++pass_[which];
  }
  return order_[which][cursor_[which]++];
}

MixSampler::Draw MixSampler::next() {
  // Largest-deficit interleave keeps every (a+b)-window within +-1 of the
  // exact ratio.
  const double total = static_cast<double>(emitted_[0] + emitted_[1] + 1);
  const double want_a = total * ratio_[0] / (ratio_[0] + ratio_[1]);
  int which;
  if (ratio_[1] == 0)
    which = 0;
  else if (ratio_[0] == 0)
    which = 1;
  else
    which = (static_cast<double>(emitted_[0]) + 0.5 <= want_a - 0.5 + 1e-12) ||
                    (want_a - static_cast<double>(emitted_[0]) >= 1.0 - 1e-12)
                ? 0
                : 1;
  ++emitted_[which];
  return {which, refill(which)};
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

namespace {

struct SampleResult {
  std::map<std::string, Tensor> grads;
  double depth_loss = 0.0;
  double semantic_loss = 0.0;
  double total = 0.0;
  bool finite = true;
};

SampleResult process_sample(const CoSemDepthModel& model, const SequenceSample& s,
                            const TrainConfig& cfg, bool want_grads) {
  Tape tape;
  const SequenceForward seq = model.forward(tape, s.rgb, s.motions, s.intr, want_grads);

  const bool depth_branch = model.mode() != ModelMode::kSemanticOnly;
  const bool sem_branch = model.mode() != ModelMode::kDepthOnly;

  std::vector<Var> depth_terms, sem_terms;
  for (size_t t = 0; t < seq.frames.size(); ++t) {
    const FrameOutputs& fo = seq.frames[t];
    if (fo.has_depth) {
      std::vector<Tensor> masks;
      for (size_t l = 0; l < fo.depth_valid.size(); ++l) {
        Tensor mask = fo.depth_valid[l];
        const int factor = s.valid[t].dim(0) / mask.dim(0);
        const Tensor va = downscale_nearest(s.valid[t], factor);
        for (std::int64_t i = 0; i < mask.size(); ++i) mask[i] *= va[i];
        masks.push_back(std::move(mask));
      }
      DepthLossOptions dopts;
      dopts.include_sky = cfg.include_sky;
      dopts.max_depth = s.max_depth;
      depth_terms.push_back(
          depth_loss_graph(tape, fo.depth, s.depth[t], masks, dopts, nullptr));
    }
    if (fo.has_semantics && !fo.seg_logits.empty())
      sem_terms.push_back(
          semantic_loss_graph(tape, fo.seg_logits, s.seg[t], s.valid[t], nullptr));
  }

  SampleResult res;
  std::vector<Var> parts;
  std::vector<double> coeffs;
  Var depth_total, sem_total;
  if (depth_branch && !depth_terms.empty()) {
    depth_total = tape.sum_scaled(depth_terms,
                                  std::vector<double>(depth_terms.size(),
                                                      1.0 / static_cast<double>(depth_terms.size())));
    res.depth_loss = tape.value(depth_total)[0];
    parts.push_back(depth_total);
    coeffs.push_back(1.0);
  }
  if (sem_branch && !sem_terms.empty()) {
    sem_total = tape.sum_scaled(sem_terms,
                                std::vector<double>(sem_terms.size(),
                                                    1.0 / static_cast<double>(sem_terms.size())));
    res.semantic_loss = tape.value(sem_total)[0];
    parts.push_back(sem_total);
    coeffs.push_back(depth_branch ? cfg.loss_weight : 1.0);
  }
  require(!parts.empty(), "train: nothing to supervise (no decoded frames)");
  const Var total = tape.sum_scaled(parts, coeffs);
  res.total = tape.value(total)[0];
  res.finite = std::isfinite(res.total);
  if (want_grads && res.finite) {
    tape.backward(total);
    for (const auto& [name, var] : seq.param_vars) res.grads[name] = tape.grad_or_zero(var);
  }
  return res;
}

struct AdamState {
  std::map<std::string, Tensor> m, v;
  std::int64_t t = 0;
};

void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& st,
               double lr, double beta1, double beta2) {
  ++st.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
  constexpr double eps = 1e-8;
  for (auto& [name, p] : params.tensors) {
    const Tensor& g = grads.at(name);
    Tensor& m = st.m[name];
    Tensor& v = st.v[name];
    if (m.empty()) m = Tensor::zeros(p.shape());
    if (v.empty()) v = Tensor::zeros(p.shape());
    for (std::int64_t i = 0; i < p.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

std::map<std::string, double> run_validation(const CoSemDepthModel& model,
                                             const SequenceDataset& val,
                                             const TrainConfig& cfg, int workers) {
  const bool depth_branch = model.mode() != ModelMode::kSemanticOnly;
  const bool sem_branch = model.mode() != ModelMode::kDepthOnly;
  const std::int64_t n = val.size();

  struct Partial {
    DepthMetricAccumulator depth;
    ConfusionMatrix seg;
  };
  std::vector<Partial> partials;
  partials.reserve(static_cast<size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    Partial p{DepthMetricAccumulator{}, ConfusionMatrix(model.config().num_classes)};
    p.depth.cap = cfg.max_depth_cap;
    p.depth.keep_rel_errors = true;
    partials.push_back(std::move(p));
  }

  std::atomic<std::int64_t> next{0};
  auto work = [&]() {
    for (std::int64_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      const SequenceSample s = val.sample(i);
      const JointOutput out = model.infer(s.rgb, s.motions, s.intr);
      const size_t last = s.rgb.size() - 1;
      if (depth_branch) {
        Tensor gt = s.depth[last];
        for (std::int64_t k = 0; k < gt.size(); ++k)
          gt[k] = std::min(gt[k], cfg.max_depth_cap);
        Tensor pred = out.depth.values;
        for (std::int64_t k = 0; k < pred.size(); ++k)
          pred[k] = std::min(pred[k], cfg.max_depth_cap);
        partials[static_cast<size_t>(i)].depth.add(pred, gt);
      }
      if (sem_branch) {
        const int h = s.intr.height, w = s.intr.width;
        Tensor pred_classes({h, w});
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            int best = 0;
            double bv = out.seg_probs.at(0, y, x);
            for (int c = 1; c < model.config().num_classes; ++c)
              if (out.seg_probs.at(c, y, x) > bv) {
                bv = out.seg_probs.at(c, y, x);
                best = c;
              }
            pred_classes.at(y, x) = best;
          }
        partials[static_cast<size_t>(i)].seg.add(pred_classes, s.seg[last]);
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < std::max(1, workers); ++t) pool.emplace_back(work);
  for (auto& th : pool) th.join();

  // Deterministic merge in window order.
  DepthMetricAccumulator dacc;
  dacc.cap = cfg.max_depth_cap;
  dacc.keep_rel_errors = true;
  ConfusionMatrix cm(model.config().num_classes);
  for (const Partial& p : partials) {
    dacc.n += p.depth.n;
    dacc.sum_sq += p.depth.sum_sq;
    dacc.sum_rel += p.depth.sum_rel;
    dacc.n_d1 += p.depth.n_d1;
    dacc.n_d2 += p.depth.n_d2;
    dacc.n_d3 += p.depth.n_d3;
    dacc.rel_errors.insert(dacc.rel_errors.end(), p.depth.rel_errors.begin(),
                           p.depth.rel_errors.end());
    for (size_t k = 0; k < cm.counts.size(); ++k) cm.counts[k] += p.seg.counts[k];
  }

  std::map<std::string, double> metrics;
  if (depth_branch && dacc.n > 0) {
    const DepthMetrics dm = dacc.result();
    metrics["rmse"] = dm.rmse;
    metrics["abs_rel"] = dm.abs_rel;
    metrics["delta1"] = dm.delta1;
    metrics["delta2"] = dm.delta2;
    metrics["delta3"] = dm.delta3;
    metrics["median_abs_rel"] = dacc.median_abs_rel();
  }
  if (sem_branch) {
    const SegMetrics sm = cm.result();
    metrics["miou"] = sm.miou;
    metrics["pixel_accuracy"] = cm.pixel_accuracy();
  }
  return metrics;
}

bool better_checkpoint(const std::map<std::string, double>& cand,
                       const std::map<std::string, double>& best, ModelMode mode) {
  auto get = [](const std::map<std::string, double>& m, const std::string& k, double fallback) {
    auto it = m.find(k);
    return it == m.end() ? fallback : it->second;
  };
  if (mode == ModelMode::kDepthOnly)
    return get(cand, "rmse", 1e300) < get(best, "rmse", 1e300);
  const double cm = get(cand, "miou", -1.0), bm = get(best, "miou", -1.0);
  if (cm != bm) return cm > bm;
  return get(cand, "rmse", 1e300) < get(best, "rmse", 1e300);
}

}  // namespace

TrainResult train(const ArchConfig& arch, ModelMode mode, const TrainConfig& cfg,
                  const std::string& train_root, const std::string& val_root,
                  const std::string& out_dir) {
  cfg.validate();
  arch.validate();

  SequenceDataset data_a(train_root, cfg.sequence_length);
  std::optional<SequenceDataset> data_b;
  if (!cfg.mix_root_b.empty()) data_b.emplace(cfg.mix_root_b, cfg.sequence_length);
  SequenceDataset val(val_root, cfg.sequence_length, cfg.sequence_length);

  CoSemDepthModel model(arch, mode);
  model.init_params(cfg.seed);

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const int workers = cfg.workers > 0
                          ? cfg.workers
                          : static_cast<int>(std::min<unsigned>(hw, cfg.batch_size));

  // Epoch size: with mixing, 2x the smaller dataset; otherwise one pass.
  const std::int64_t epoch_size =
      data_b ? 2 * std::min(data_a.size(), data_b->size()) : data_a.size();

  std::ofstream log;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream cf(fs::path(out_dir) / "config.json");
    json full;
    full["train"] = json::parse(cfg.to_json());
    full["arch"] = json::parse(arch.to_json());
    full["mode"] = mode_name(mode);
    cf << full.dump(2) << "\n";
    log.open(fs::path(out_dir) / "train_log.csv");
    log << "step,epoch,depth,semantic,total,w,lr\n";
  }

  TrainResult result;
  {
    const auto val_metrics = run_validation(model, val, cfg, workers);
    result.init = Checkpoint::from_model(model, 0, val_metrics);
  }
  result.best = result.init;
  result.last = result.init;

  AdamState adam;
  std::int64_t global_step = 0;
  MixSampler mixer(data_a.size(), data_b ? data_b->size() : 1,
                   data_b ? cfg.mix_ratio_a : 1, data_b ? cfg.mix_ratio_b : 0, cfg.seed);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Deterministic sample order for this epoch.
    std::vector<std::pair<int, std::int64_t>> order;
    if (data_b) {
      for (std::int64_t i = 0; i < epoch_size; ++i) {
        const auto d = mixer.next();
        order.push_back({d.dataset, d.index});
      }
    } else {
      std::vector<std::int64_t> idx(static_cast<size_t>(data_a.size()));
      std::iota(idx.begin(), idx.end(), 0);
      std::mt19937_64 rng(mix64(cfg.seed, 0xe7037ed1a0b428dbull + epoch));
      std::shuffle(idx.begin(), idx.end(), rng);
      for (std::int64_t i : idx) order.push_back({0, i});
    }

    const double lr = cfg.lr_drop && epoch > cfg.lr_drop_epoch
                          ? cfg.learning_rate * cfg.lr_drop_factor
                          : cfg.learning_rate;

    double ep_depth = 0.0, ep_sem = 0.0, ep_total = 0.0;
    std::int64_t ep_batches = 0;
    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(cfg.batch_size)) {
      const size_t bsz = std::min(static_cast<size_t>(cfg.batch_size), order.size() - pos);
      std::vector<SequenceSample> batch;
      for (size_t b = 0; b < bsz; ++b) {
        const auto [ds, idx] = order[pos + b];
        SequenceSample raw = ds == 0 ? data_a.sample(idx) : data_b->sample(idx);
        batch.push_back(augment(raw, cfg.augment,
                                mix64(cfg.seed, (static_cast<std::uint64_t>(epoch) << 32) ^
                                                    static_cast<std::uint64_t>(pos + b))));
      }

      std::vector<SampleResult> results(bsz);
      std::atomic<size_t> next{0};
      auto work = [&]() {
        for (size_t i = next.fetch_add(1); i < bsz; i = next.fetch_add(1))
          results[i] = process_sample(model, batch[i], cfg, true);
      };
      std::vector<std::thread> pool;
      for (int t = 0; t < workers; ++t) pool.emplace_back(work);
      for (auto& th : pool) th.join();

      double batch_depth = 0.0, batch_sem = 0.0, batch_total = 0.0;
      bool finite = true;
      for (const SampleResult& r : results) {
        batch_depth += r.depth_loss;
        batch_sem += r.semantic_loss;
        batch_total += r.total;
        finite = finite && r.finite;
      }
      batch_depth /= static_cast<double>(bsz);
      batch_sem /= static_cast<double>(bsz);
      batch_total /= static_cast<double>(bsz);
      if (!finite || !std::isfinite(batch_total)) {
        // Divergence: stop immediately, keeping the last good checkpoint.
        result.diverged = true;
        if (log.is_open()) log.flush();
        return result;
      }

      // Deterministic gradient reduction in sample order.
      std::map<std::string, Tensor> grads;
      for (const auto& [name, t] : model.params().tensors) grads[name] = Tensor::zeros(t.shape());
      for (const SampleResult& r : results)
        for (auto& [name, g] : grads) {
          const Tensor& gs = r.grads.at(name);
          for (std::int64_t i = 0; i < g.size(); ++i) g[i] += gs[i];
        }
      const double inv_b = 1.0 / static_cast<double>(bsz);
      for (auto& [name, g] : grads)
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] *= inv_b;

      adam_step(model.params(), grads, adam, lr, cfg.beta1, cfg.beta2);
      ++global_step;
      ep_depth += batch_depth;
      ep_sem += batch_sem;
      ep_total += batch_total;
      ++ep_batches;
      if (log.is_open()) {
        char row[256];
        std::snprintf(row, sizeof(row), "%lld,%d,%.17g,%.17g,%.17g,%g,%g\n",
                      static_cast<long long>(global_step), epoch, batch_depth, batch_sem,
                      batch_total, cfg.loss_weight, lr);
        log << row;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_depth_loss = ep_depth / std::max<std::int64_t>(1, ep_batches);
    rec.train_semantic_loss = ep_sem / std::max<std::int64_t>(1, ep_batches);
    rec.train_total_loss = ep_total / std::max<std::int64_t>(1, ep_batches);
    rec.val_metrics = run_validation(model, val, cfg, workers);
    result.history.push_back(rec);

    result.last = Checkpoint::from_model(model, epoch, rec.val_metrics);
    if (better_checkpoint(rec.val_metrics, result.best.metrics, mode) ||
        result.best.epoch == 0)
      result.best = result.last;

    if (!out_dir.empty()) {
      result.best.save((fs::path(out_dir) / "best.ckpt").string());
      result.last.save((fs::path(out_dir) / "last.ckpt").string());
    }

    // Early stop once every enabled validation threshold is met.
    const auto& st = cfg.stop;
    if (st.min_seg_accuracy || st.min_delta1 || st.max_median_abs_rel) {
      auto get = [&](const std::string& k, double fallback) {
        auto it = rec.val_metrics.find(k);
        return it == rec.val_metrics.end() ? fallback : it->second;
      };
      bool ok = true;
      if (st.min_seg_accuracy) ok = ok && get("pixel_accuracy", -1.0) >= *st.min_seg_accuracy;
      if (st.min_delta1) ok = ok && get("delta1", -1.0) >= *st.min_delta1;
      if (st.max_median_abs_rel)
        ok = ok && get("median_abs_rel", 1e300) <= *st.max_median_abs_rel;
      if (ok) {
        result.stopped_early = true;
        break;
      }
    }
  }
  if (log.is_open()) log.flush();
  return result;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

EvalResult evaluate(const Checkpoint& ckpt, const std::string& dataset_root, double cap,
                    int stride, const std::string& qualitative_dir) {
  const CoSemDepthModel model = ckpt.to_model();
  const int n_seq = std::max(2, model.config().sequence_length);
  const int window = model.mode() == ModelMode::kSemanticOnly
                         ? std::max(1, model.config().sequence_length)
                         : n_seq;
  SequenceDataset data(dataset_root, window, stride);

  TrainConfig vcfg;
  vcfg.max_depth_cap = cap;
  vcfg.sequence_length = window;
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const auto metrics = [&] {
    TrainConfig c = vcfg;
    return run_validation_public(model, data, c, static_cast<int>(hw));
  }();

  EvalResult res;
  res.frames_evaluated = data.size();
  auto get = [&](const std::string& k) {
    auto it = metrics.find(k);
    return it == metrics.end() ? 0.0 : it->second;
  };
  res.depth.rmse = get("rmse");
  res.depth.abs_rel = get("abs_rel");
  res.depth.delta1 = get("delta1");
  res.depth.delta2 = get("delta2");
  res.depth.delta3 = get("delta3");
  res.median_abs_rel = get("median_abs_rel");
  res.pixel_accuracy = get("pixel_accuracy");
  res.seg.miou = get("miou");

  if (!qualitative_dir.empty())
    save_qualitative_grid(ckpt, dataset_root,
                          (fs::path(qualitative_dir) / "qualitative.png").string());
  return res;
}

void save_qualitative_grid(const Checkpoint& ckpt, const std::string& dataset_root,
                           const std::string& out_path, int max_rows) {
  const CoSemDepthModel model = ckpt.to_model();
  const int window = std::max(2, model.config().sequence_length);
  SequenceDataset data(dataset_root, window, window);
  const int rows = static_cast<int>(std::min<std::int64_t>(max_rows, data.size()));
  require(rows > 0, "qualitative grid: dataset has no windows");
  const int h = data.intrinsics().height, w = data.intrinsics().width;
  const int pad = 4;
  const int cols = 5;  // rgb | gt seg | pred seg | gt depth | pred depth
  Canvas canvas(cols * (w + pad) + pad, rows * (h + pad) + pad, 24, 24, 24);
  const auto& palette = default_class_palette();

  for (int r = 0; r < rows; ++r) {
    const SequenceSample s = data.sample(r);
    const JointOutput out = model.infer(s.rgb, s.motions, s.intr);
    const size_t last = s.rgb.size() - 1;
    auto cell_x = [&](int c) { return pad + c * (w + pad); };
    const int y0 = pad + r * (h + pad);

    std::vector<std::uint8_t> rgb(static_cast<size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          rgb[(static_cast<size_t>(y) * w + x) * 3 + c] =
              static_cast<std::uint8_t>(s.rgb[last].at(c, y, x) * 255.0);
    canvas.blit_rgb(cell_x(0), y0, rgb, w, h);

    auto seg_image = [&](const Tensor& classes) {
      std::vector<std::uint8_t> img(static_cast<size_t>(h) * w * 3);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int c = std::min(kNumSemanticClasses - 1,
                                 std::max(0, static_cast<int>(std::lround(classes.at(y, x)))));
          for (int k = 0; k < 3; ++k)
            img[(static_cast<size_t>(y) * w + x) * 3 + k] = palette[static_cast<size_t>(c)][static_cast<size_t>(k)];
        }
      return img;
    };
    canvas.blit_rgb(cell_x(1), y0, seg_image(s.seg[last]), w, h);

    if (!out.seg_probs.empty()) {
      Tensor pred_classes({h, w});
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          int best = 0;
          double bv = out.seg_probs.at(0, y, x);
          for (int c = 1; c < model.config().num_classes; ++c)
            if (out.seg_probs.at(c, y, x) > bv) {
              bv = out.seg_probs.at(c, y, x);
              best = c;
            }
          pred_classes.at(y, x) = best;
        }
      canvas.blit_rgb(cell_x(2), y0, seg_image(pred_classes), w, h);
    }

    auto depth_image = [&](const Tensor& depth) {
      double lo = 1e300, hi = -1e300;
      for (std::int64_t i = 0; i < depth.size(); ++i) {
        lo = std::min(lo, depth[i]);
        hi = std::max(hi, depth[i]);
      }
      std::vector<std::uint8_t> img(static_cast<size_t>(h) * w * 3);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const auto c = colormap_value(depth.at(y, x), lo, hi);
          for (int k = 0; k < 3; ++k)
            img[(static_cast<size_t>(y) * w + x) * 3 + k] = c[static_cast<size_t>(k)];
        }
      return img;
    };
    canvas.blit_rgb(cell_x(3), y0, depth_image(s.depth[last]), w, h);
    if (!out.depth.values.empty()) canvas.blit_rgb(cell_x(4), y0, depth_image(out.depth.values), w, h);
  }
  fs::create_directories(fs::path(out_path).parent_path());
  canvas.save(out_path);
}

}  // namespace cosemdepth
