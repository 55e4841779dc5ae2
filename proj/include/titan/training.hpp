#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "titan/checkpoint.hpp"
#include "titan/losses.hpp"
#include "titan/metrics.hpp"
#include "titan/network.hpp"
#include "titan/projection.hpp"
#include "titan/rng.hpp"
#include "titan/synthdata.hpp"

namespace titan::train {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 6;
  double dropout_p = 0.2;
  double gp_lambda = 10.0;
  double flip_prob = 0.5;
  double drop_prob = 0.5;      // chance a sample gets point dropout at all
  double drop_fraction = 0.5;  // fraction of points removed when it does
  int critic_steps_per_gen = 5;
  int max_epochs = 1;
  std::uint64_t seed = 0;
  int val_interval = 1;  // epochs between validation/checkpoint passes

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;

  void validate() const {
    // Zero is allowed as a diagnostic no-op ("dry") setting; negatives never.
    if (!(learning_rate >= 0)) throw InvalidInput("train: learning_rate must be non-negative");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
      throw InvalidInput("train: betas must lie in [0,1)");
    if (batch_size < 1) throw InvalidInput("train: batch_size must be positive");
    for (double p : {dropout_p, flip_prob, drop_prob, drop_fraction})
      if (!(p >= 0 && p <= 1)) throw InvalidInput("train: probabilities must lie in [0,1]");
    if (dropout_p >= 1) throw InvalidInput("train: dropout_p must lie in [0,1)");
    if (gp_lambda < 0) throw InvalidInput("train: gp_lambda must be non-negative");
    if (critic_steps_per_gen < 0) throw InvalidInput("train: critic_steps_per_gen must be >= 0");
    if (max_epochs < 0) throw InvalidInput("train: max_epochs must be >= 0");
    if (val_interval < 1) throw InvalidInput("train: val_interval must be >= 1");
  }
};

/// How raw paired samples become network tensors: the full-sweep projection
/// grid, the azimuth window kept for the camera-facing crop, and target sizes.
struct PipelineConfig {
  ProjectionConfig proj{};      // full 360-degree LiDAR grid
  double cam_hfov_deg = 360.0;  // azimuth window centered on forward
  int num_classes = 14;
  int cam_width = 1241;
  int cam_height = 376;
  double range_scale = 80.0;  // geometry channels are divided by this
  SwdConfig swd{};            // distribution distance used in validation rows

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;

  /// Width of the cropped projection handed to the generator.
  int crop_width() const {
    if (cam_hfov_deg >= 360.0) return proj.width;
    const double half = cam_hfov_deg / 2.0;
    const long c0 = std::lround(azimuth_to_column(deg2rad(half), proj.width));
    const long c1 = std::lround(azimuth_to_column(deg2rad(-half), proj.width));
    return static_cast<int>(c1 - c0);
  }

  void validate() const {
    proj.validate();
    if (!(cam_hfov_deg > 0 && cam_hfov_deg <= 360))
      throw InvalidInput("pipeline: cam_hfov_deg must lie in (0,360]");
    if (num_classes < 2) throw InvalidInput("pipeline: need at least two classes");
    if (cam_width < 1 || cam_height < 1) throw InvalidInput("pipeline: bad camera size");
    if (!(range_scale > 0)) throw InvalidInput("pipeline: range_scale must be positive");
  }
};

// ---------------------------------------------------------------------------
// Sample preparation
// ---------------------------------------------------------------------------

/// A sample after projection, cropping, and tensor assembly. All tensors are
/// constants; the graph starts at the generator's parameters.
template <typename S>
struct Prepared {
  ad::Tensor<S> input;         // [5+C, h, w_in] masked LiDAR channels + one-hot
  ArrayXXi seg_labels;         // [H, W] camera ground-truth class ids
  ad::Tensor<S> seg_onehot;    // [C, H, W] the same, one-hot
  ad::Tensor<S> depth_target;  // [1, H, W] min-max normalized camera depth
  ArrayXX<S> guide;            // [H, W] the normalized depth, as the smoothness guide
  ad::Tensor<S> condition;     // [C, H, W] input semantics resized to camera grid
};

/// The generator-facing half of a prepared sample: the masked multi-channel
/// input tensor plus the semantic condition, along with the projection
/// intermediates they were assembled from.
template <typename S>
struct PreparedInput {
  ad::Tensor<S> input;      // [5+C, h, w_in]
  ad::Tensor<S> condition;  // [C, H, W]
  RangeImage<S> image;      // cropped range image
  ArrayXXi lidar_labels;    // [h, w_in] per-pixel class ids, 0 where void
};

template <typename S>
PreparedInput<S> prepare_input(const PointCloud<float>& raw,
                               const std::vector<std::uint32_t>& labels,
                               const PipelineConfig& pc) {
  pc.validate();
  const int C = pc.num_classes;
  const int H = pc.cam_height, W = pc.cam_width;

  PointCloud<S> cloud;
  cloud.pts = raw.pts.template cast<S>();
  RangeImage<S> img = spherical_project(cloud, pc.proj);
  if (pc.cam_hfov_deg < 360.0)
    img = crop_to_camera_fov(img, -pc.cam_hfov_deg / 2.0, pc.cam_hfov_deg / 2.0);
  const ArrayXXi lid_labels = project_labels(img, labels);

  const int h = img.height, w = img.width;
  const auto plane = static_cast<std::int64_t>(h) * w;
  const S inv_scale = S(1) / static_cast<S>(pc.range_scale);

  PreparedInput<S> out;
  ArrayX<S> in = ArrayX<S>::Zero((5 + C) * plane);
  ArrayX<S> lidar_onehot = ArrayX<S>::Zero(static_cast<std::int64_t>(C) * plane);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      if (!img.mask(v, u)) continue;
      const std::int64_t px = static_cast<std::int64_t>(v) * w + u;
      in[0 * plane + px] = img.range(v, u) * inv_scale;
      in[1 * plane + px] = img.x(v, u) * inv_scale;
      in[2 * plane + px] = img.y(v, u) * inv_scale;
      in[3 * plane + px] = img.z(v, u) * inv_scale;
      in[4 * plane + px] = img.intensity(v, u);
      const int lab = lid_labels(v, u);
      if (lab < 0 || lab >= C)
        throw InvalidInput("prepare_input: point label " + std::to_string(lab) +
                           " outside [0," + std::to_string(C) + ")");
      in[(5 + lab) * plane + px] = S(1);
      lidar_onehot[static_cast<std::int64_t>(lab) * plane + px] = S(1);
    }
  out.input = ad::Tensor<S>::constant(std::move(in), {5 + C, h, w});
  out.condition = ad::nearest_resize(
      ad::Tensor<S>::constant(std::move(lidar_onehot), {C, h, w}), H, W);
  out.image = std::move(img);
  out.lidar_labels = lid_labels;
  return out;
}

template <typename S>
Prepared<S> prepare_sample(const synth::PairedSample& s, const PipelineConfig& pc) {
  pc.validate();
  const int C = pc.num_classes;
  const int H = pc.cam_height, W = pc.cam_width;
  if (s.cam_segments.rows() != H || s.cam_segments.cols() != W)
    throw InvalidInput("prepare_sample: camera segment map is " +
                       std::to_string(s.cam_segments.rows()) + "x" +
                       std::to_string(s.cam_segments.cols()) + ", pipeline expects " +
                       std::to_string(H) + "x" + std::to_string(W));
  if (s.cam_depth.rows() != H || s.cam_depth.cols() != W)
    throw InvalidInput("prepare_sample: camera depth size mismatch");

  Prepared<S> out;
  PreparedInput<S> pin = prepare_input<S>(s.cloud, s.lidar_labels, pc);
  out.input = std::move(pin.input);
  out.condition = std::move(pin.condition);

  out.seg_labels = s.cam_segments;
  const auto cam_plane = static_cast<std::int64_t>(H) * W;
  ArrayX<S> onehot = ArrayX<S>::Zero(static_cast<std::int64_t>(C) * cam_plane);
  for (int v = 0; v < H; ++v)
    for (int u = 0; u < W; ++u) {
      const int lab = s.cam_segments(v, u);
      if (lab < 0 || lab >= C)
        throw InvalidInput("prepare_sample: camera label " + std::to_string(lab) +
                           " outside [0," + std::to_string(C) + ")");
      onehot[lab * cam_plane + static_cast<std::int64_t>(v) * W + u] = S(1);
    }
  out.seg_onehot = ad::Tensor<S>::constant(std::move(onehot), {C, H, W});

  // Per-sample min-max depth normalization; void pixels are zero and anchor
  // the minimum, so the map reduces to division by the maximum.
  const float dmax = s.cam_depth.maxCoeff();
  ArrayXX<float> norm = dmax > 0 ? ArrayXX<float>(s.cam_depth / dmax)
                                 : ArrayXX<float>(ArrayXX<float>::Zero(H, W));
  out.guide = norm.template cast<S>();
  ArrayX<S> dt(cam_plane);
  for (int v = 0; v < H; ++v)
    for (int u = 0; u < W; ++u) dt[static_cast<std::int64_t>(v) * W + u] = out.guide(v, u);
  out.depth_target = ad::Tensor<S>::constant(std::move(dt), {1, H, W});
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

/// Bernoulli point subsampling that keeps the per-point labels aligned with
/// the surviving points. The draw sequence matches drop_points, so the cloud
/// half of the result is identical to calling that directly.
template <typename S>
std::pair<PointCloud<S>, std::vector<std::uint32_t>> drop_points_paired(
    const PointCloud<S>& cloud, const std::vector<std::uint32_t>& labels, double fraction,
    std::uint64_t seed) {
  if (static_cast<std::int64_t>(labels.size()) != cloud.size())
    throw InvalidInput("drop_points_paired: label/point count mismatch");
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw InvalidInput("drop_points_paired: fraction must lie in [0,1]");
  if (fraction == 0.0) return {cloud, labels};
  Rng rng(seed);
  std::vector<std::int64_t> keep;
  keep.reserve(cloud.size());
  for (std::int64_t i = 0; i < cloud.size(); ++i)
    if (!rng.bernoulli(fraction)) keep.push_back(i);
  PointCloud<S> out_cloud;
  out_cloud.pts.resize(static_cast<std::int64_t>(keep.size()), 4);
  std::vector<std::uint32_t> out_labels(keep.size());
  for (std::size_t j = 0; j < keep.size(); ++j) {
    out_cloud.pts.row(static_cast<std::int64_t>(j)) = cloud.pts.row(keep[j]);
    out_labels[j] = labels[static_cast<std::size_t>(keep[j])];
  }
  return {std::move(out_cloud), std::move(out_labels)};
}

/// Training-time augmentation: a coin-flip lateral mirror (cloud and camera
/// targets together) and a coin-flip random point dropout. The projection is
/// recomputed downstream from the returned cloud, never mirrored in place.
inline synth::PairedSample augment(const synth::PairedSample& s, const TrainConfig& cfg,
                                   Rng& rng) {
  synth::PairedSample out = s;
  if (rng.bernoulli(cfg.flip_prob)) {
    out.cloud = flip_cloud(out.cloud);
    out.cam_segments = ArrayXXi(out.cam_segments.rowwise().reverse());
    out.cam_depth = ArrayXX<float>(out.cam_depth.rowwise().reverse());
    if (out.cam_rgb) {
      synth::RgbImage& im = *out.cam_rgb;
      for (int y = 0; y < im.height; ++y)
        for (int x = 0; x < im.width / 2; ++x)
          for (int c = 0; c < 3; ++c)
            std::swap(im.rgb[static_cast<std::size_t>(3 * (y * im.width + x) + c)],
                      im.rgb[static_cast<std::size_t>(3 * (y * im.width + im.width - 1 - x) + c)]);
    }
  }
  if (rng.bernoulli(cfg.drop_prob)) {
    const std::uint64_t seed = rng.next_u64();
    auto [cloud, labels] = drop_points_paired(out.cloud, out.lidar_labels, cfg.drop_fraction, seed);
    out.cloud = std::move(cloud);
    out.lidar_labels = std::move(labels);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adaptive-moment estimation with bias correction:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
template <typename S>
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps, std::size_t num_params)
      : lr_(static_cast<S>(lr)),
        b1_(static_cast<S>(beta1)),
        b2_(static_cast<S>(beta2)),
        eps_(static_cast<S>(eps)),
        m_(num_params),
        v_(num_params) {}

  void step(const std::vector<nn::ParamRef<S>>& refs, const std::vector<ad::Tensor<S>>& grads) {
    if (refs.size() != m_.size() || grads.size() != m_.size())
      throw InvalidInput("adam: parameter/gradient count mismatch");
    ++t_;
    const S c1 = S(1) - static_cast<S>(std::pow(static_cast<double>(b1_), static_cast<double>(t_)));
    const S c2 = S(1) - static_cast<S>(std::pow(static_cast<double>(b2_), static_cast<double>(t_)));
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const ArrayX<S>& g = grads[i].value();
      if (m_[i].size() == 0) {
        m_[i] = ArrayX<S>::Zero(g.size());
        v_[i] = ArrayX<S>::Zero(g.size());
      }
      m_[i] = b1_ * m_[i] + (S(1) - b1_) * g;
      v_[i] = b2_ * v_[i] + (S(1) - b2_) * g.square();
      refs[i].tensor->raw() -= lr_ * (m_[i] / c1) / ((v_[i] / c2).sqrt() + eps_);
    }
  }

  std::int64_t t() const { return t_; }
  void set_t(std::int64_t t) { t_ = t; }
  std::vector<ArrayX<S>>& moment1() { return m_; }
  std::vector<ArrayX<S>>& moment2() { return v_; }
  const std::vector<ArrayX<S>>& moment1() const { return m_; }
  const std::vector<ArrayX<S>>& moment2() const { return v_; }

 private:
  S lr_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::vector<ArrayX<S>> m_, v_;
};

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

/// A validation summary; also the trailing columns of every metric-log row.
struct ValRow {
  double miou = std::numeric_limits<double>::quiet_NaN();
  double absrel = std::numeric_limits<double>::quiet_NaN();
  double swd_avg = std::numeric_limits<double>::quiet_NaN();
};

inline constexpr const char* kCsvHeader =
    "step,wce,ls,ids,mae,ssim,d_adv,g_adv,miou,absrel,swd_avg";

/// Owns the generator/critic pair, both optimizers, and the step/epoch
/// counters; drives the alternating adversarial updates.
///
/// Randomness discipline: parameter init draws from streams 0 and 1 of the
/// config seed; epoch e shuffles with stream 2+2e and feeds augmentation,
/// dropout, and gradient-penalty mixing from stream 3+2e. Checkpoints land on
/// epoch boundaries, so a resumed run re-derives exactly the streams the
/// uninterrupted run would have used and no generator state needs saving.
template <typename S>
class Trainer {
 public:
  Trainer(const nn::GeneratorConfig& gcfg, const nn::CriticConfig& ccfg, const TrainConfig& tcfg,
          const PipelineConfig& pcfg)
      : gcfg_(with_dropout(gcfg, tcfg.dropout_p)),
        ccfg_(ccfg),
        tcfg_(tcfg),
        pcfg_(pcfg),
        root_(tcfg.seed),
        gen_(make_generator(gcfg_, tcfg.seed)),
        critic_(make_critic(ccfg_, tcfg.seed)),
        opt_g_(tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.adam_eps, gen_.params().size()),
        opt_d_(tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.adam_eps,
               critic_.params().size()) {
    tcfg_.validate();
    pcfg_.validate();
    if (gcfg_.input_width != pcfg_.crop_width() || gcfg_.input_height != pcfg_.proj.height)
      throw InvalidInput("trainer: generator input " + std::to_string(gcfg_.input_width) + "x" +
                         std::to_string(gcfg_.input_height) + " does not match pipeline crop " +
                         std::to_string(pcfg_.crop_width()) + "x" +
                         std::to_string(pcfg_.proj.height));
    if (gcfg_.output_width != pcfg_.cam_width || gcfg_.output_height != pcfg_.cam_height)
      throw InvalidInput("trainer: generator output does not match camera size");
    if (gcfg_.num_classes != pcfg_.num_classes || ccfg_.num_classes != pcfg_.num_classes)
      throw InvalidInput("trainer: class count mismatch across configs");
    if (ccfg_.input_width != pcfg_.cam_width || ccfg_.input_height != pcfg_.cam_height)
      throw InvalidInput("trainer: critic input does not match camera size");
    freqs_.freq = ArrayX<S>::Constant(gcfg_.num_classes, S(1) / static_cast<S>(gcfg_.num_classes));
  }

  nn::Generator<S>& generator() { return gen_; }
  nn::Critic<S>& critic() { return critic_; }
  const nn::GeneratorConfig& generator_config() const { return gcfg_; }
  const TrainConfig& train_config() const { return tcfg_; }
  const PipelineConfig& pipeline_config() const { return pcfg_; }
  std::int64_t step() const { return step_; }
  int epoch() const { return epoch_; }
  std::int64_t gen_updates() const { return gen_updates_; }
  std::int64_t critic_updates() const { return critic_updates_; }
  const ValRow& last_validation() const { return last_val_; }

  void set_class_frequencies(const ClassFrequencies<S>& f) {
    f.validate();
    freqs_ = f;
  }

  /// One adversarial round: critic_steps_per_gen critic updates, then one
  /// generator update. Throws TrainingDivergence naming the first non-finite
  /// loss component.
  LossReport<S> train_step(const std::vector<Prepared<S>>& batch, Rng& rng) {
    if (batch.empty()) throw InvalidInput("train_step: empty batch");
    LossReport<S> rep;
    const S invn = S(1) / static_cast<S>(batch.size());
    auto critic_fn = [this](const ad::Tensor<S>& a, const ad::Tensor<S>& b,
                            const ad::Tensor<S>& c) { return critic_(a, b, c); };
    const ad::Tensor<S> zero_depth =
        ad::Tensor<S>::zeros({1, pcfg_.cam_height, pcfg_.cam_width});

    for (int k = 0; k < tcfg_.critic_steps_per_gen; ++k) {
      std::vector<CriticPair<S>> real, fake;
      std::vector<ad::Tensor<S>> conds;
      {
        ad::NoGradGuard ng;
        for (const auto& p : batch) {
          auto [logits, depth] = gen_.forward(p.input);
          fake.push_back({ad::softmax_ch(logits),
                          gcfg_.depth_head ? depth : zero_depth});
          real.push_back({p.seg_onehot, gcfg_.depth_head ? p.depth_target : zero_depth});
          conds.push_back(p.condition);
        }
      }
      ad::Tensor<S> dl =
          wgan_gp_d_loss(critic_fn, real, fake, conds, rng, static_cast<S>(tcfg_.gp_lambda));
      rep.d_adv = dl.item();
      if (!std::isfinite(rep.d_adv)) throw TrainingDivergence("d_adv");
      auto refs = critic_.params();
      std::vector<ad::Tensor<S>> leaves;
      leaves.reserve(refs.size());
      for (auto& r : refs) leaves.push_back(*r.tensor);
      opt_d_.step(refs, ad::grad(dl, leaves));
      ++critic_updates_;
    }

    std::vector<CriticPair<S>> fake;
    std::vector<ad::Tensor<S>> conds;
    ad::Tensor<S> wce, ls, ids, mae_t, ssim_t;
    auto acc = [](ad::Tensor<S>& a, ad::Tensor<S> x) {
      a = a.defined() ? ad::add(a, std::move(x)) : std::move(x);
    };
    for (const auto& p : batch) {
      auto [logits, depth] = gen_.forward(p.input, &rng);
      ad::Tensor<S> probs = ad::softmax_ch(logits);
      acc(wce, weighted_cross_entropy(probs, p.seg_labels, freqs_));
      acc(ls, lovasz_softmax(probs, p.seg_labels));
      if (gcfg_.depth_head) {
        acc(ids, inverse_depth_smoothness(depth, p.guide));
        acc(mae_t, mae(depth, p.depth_target));
        acc(ssim_t, ssim_loss(depth, p.depth_target));
      }
      fake.push_back({std::move(probs), gcfg_.depth_head ? depth : zero_depth});
      conds.push_back(p.condition);
    }
    ad::Tensor<S> g_adv = wgan_gp_g_loss(critic_fn, fake, conds);

    const auto component = [&](const char* name, const ad::Tensor<S>& t) {
      if (!t.defined()) return S(0);
      const S v = t.item() * invn;
      if (!std::isfinite(v)) throw TrainingDivergence(name);
      return v;
    };
    rep.wce = component("wce", wce);
    rep.ls = component("ls", ls);
    rep.ids = component("ids", ids);
    rep.mae = component("mae", mae_t);
    rep.ssim_loss = component("ssim", ssim_t);
    rep.g_adv = g_adv.item();
    if (!std::isfinite(rep.g_adv)) throw TrainingDivergence("g_adv");

    ad::Tensor<S> total = ad::scale(ad::add(wce, ls), invn);
    if (gcfg_.depth_head)
      total = ad::add(total, ad::scale(ad::add(ad::add(ids, mae_t), ssim_t), invn));
    total = ad::add(total, g_adv);

    auto refs = gen_.params();
    std::vector<ad::Tensor<S>> leaves;
    leaves.reserve(refs.size());
    for (auto& r : refs) leaves.push_back(*r.tensor);
    opt_g_.step(refs, ad::grad(total, leaves));
    ++gen_updates_;
    ++step_;
    total_loss(rep);
    return rep;
  }

  /// Accumulated confusion mIoU, mean per-sample AbsRel on normalized depth,
  /// and the pyramid sliced distance between predicted and target depth sets.
  ValRow validate(const std::vector<Prepared<S>>& val) {
    if (val.empty()) throw InvalidInput("validate: empty validation set");
    ad::NoGradGuard ng;
    Confusion cm = Confusion::Zero(pcfg_.num_classes, pcfg_.num_classes);
    double absrel_sum = 0;
    int absrel_n = 0;
    std::vector<ArrayXX<double>> pred_depths, true_depths;
    for (const auto& p : val) {
      auto [logits, depth] = gen_.forward(p.input);
      cm += confusion(argmax_channels(logits), p.seg_labels, pcfg_.num_classes);
      if (!gcfg_.depth_head) continue;
      ArrayXX<double> pd(pcfg_.cam_height, pcfg_.cam_width);
      const auto& dv = depth.value();
      for (int v = 0; v < pcfg_.cam_height; ++v)
        for (int u = 0; u < pcfg_.cam_width; ++u)
          pd(v, u) = static_cast<double>(dv[static_cast<std::int64_t>(v) * pcfg_.cam_width + u]);
      const ArrayXX<double> gd = p.guide.template cast<double>();
      const ArrayXXb mask = gd > 0.0;
      if (mask.any()) {
        absrel_sum += depth_metrics(pd, gd, mask).absrel;
        ++absrel_n;
      }
      pred_depths.push_back(std::move(pd));
      true_depths.push_back(gd);
    }
    ValRow row;
    row.miou = iou(cm).miou;
    if (gcfg_.depth_head && absrel_n > 0) absrel_sum /= absrel_n;
    if (gcfg_.depth_head) {
      row.absrel = absrel_n > 0 ? absrel_sum : std::numeric_limits<double>::quiet_NaN();
      row.swd_avg = swd(true_depths, pred_depths, pcfg_.swd).average_x1e3;
    }
    last_val_ = row;
    return row;
  }

  /// Epoch loop: seeded shuffle, augmentation, alternating updates, one log
  /// row per generator step, and a validation row plus an atomic checkpoint
  /// every val_interval epochs. `run_meta` is embedded verbatim in each
  /// checkpoint so downstream tools can reconstruct the run's settings.
  void fit(const std::vector<synth::PairedSample>& train_set,
           const std::vector<synth::PairedSample>& val_set,
           const std::filesystem::path& run_dir,
           const nlohmann::json& run_meta = nlohmann::json::object()) {
    if (train_set.empty()) throw InvalidInput("fit: empty training set");
    if (val_set.empty()) throw InvalidInput("fit: empty validation set");
    std::filesystem::create_directories(run_dir);

    std::vector<ArrayXXi> gt;
    gt.reserve(train_set.size());
    for (const auto& s : train_set) gt.push_back(s.cam_segments);
    freqs_ = ClassFrequencies<S>::from_labels(gt, pcfg_.num_classes);

    const bool fresh = (epoch_ == 0 && step_ == 0);
    const bool had_csv = std::filesystem::exists(run_dir / "log.csv");
    std::ofstream csv(run_dir / "log.csv",
                      fresh ? std::ios::trunc : (std::ios::out | std::ios::app));
    if (!csv) throw IoError((run_dir / "log.csv").string() + ": cannot open for writing");
    csv.precision(9);
    if (fresh || !had_csv) csv << kCsvHeader << '\n';
    if (fresh) save_checkpoint(run_dir / "ckpt_e0.tck", run_meta);

    std::vector<Prepared<S>> val;
    val.reserve(val_set.size());
    for (const auto& s : val_set) val.push_back(prepare_sample<S>(s, pcfg_));

    const int B = tcfg_.batch_size;
    const auto n = static_cast<std::int64_t>(train_set.size());
    LossReport<S> rep;
    for (int e = epoch_; e < tcfg_.max_epochs; ++e) {
      Rng shuffle_rng = root_.stream(2 + 2 * static_cast<std::uint64_t>(e));
      Rng step_rng = root_.stream(3 + 2 * static_cast<std::uint64_t>(e));
      std::vector<std::int64_t> order(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
      for (std::int64_t i = n - 1; i > 0; --i)
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, i))]);

      for (std::int64_t start = 0; start + B <= n; start += B) {
        std::vector<Prepared<S>> batch;
        batch.reserve(static_cast<std::size_t>(B));
        for (int b = 0; b < B; ++b) {
          const auto& s = train_set[static_cast<std::size_t>(order[static_cast<std::size_t>(start + b)])];
          batch.push_back(prepare_sample<S>(augment(s, tcfg_, step_rng), pcfg_));
        }
        rep = train_step(batch, step_rng);
        write_row(csv, rep);
      }
      epoch_ = e + 1;
      if (epoch_ % tcfg_.val_interval == 0 || epoch_ == tcfg_.max_epochs) {
        validate(val);
        write_row(csv, rep);
        save_checkpoint(run_dir / ("ckpt_e" + std::to_string(epoch_) + ".tck"), run_meta);
      }
    }
  }

  /// Full resumable state: both networks, both optimizers, and the counters.
  ck::Checkpoint to_checkpoint(const nlohmann::json& run_meta = nlohmann::json::object()) {
    ck::Checkpoint c;
    c.meta["format"] = "titan-train/1";
    c.meta["epoch"] = epoch_;
    c.meta["step"] = step_;
    c.meta["gen_updates"] = gen_updates_;
    c.meta["critic_updates"] = critic_updates_;
    c.meta["opt_g_t"] = opt_g_.t();
    c.meta["opt_d_t"] = opt_d_.t();
    c.meta["last_miou"] = to_meta(last_val_.miou);
    c.meta["last_absrel"] = to_meta(last_val_.absrel);
    c.meta["last_swd"] = to_meta(last_val_.swd_avg);
    c.meta["run"] = run_meta;
    c.store("gen.", gen_.params());
    c.store("", critic_.params());
    store_moments(c, "opt_g", gen_.params(), opt_g_);
    store_moments(c, "opt_d", critic_.params(), opt_d_);
    c.store_array("class_freq", ArrayX<S>(freqs_.freq));
    return c;
  }

  void load_checkpoint(const ck::Checkpoint& c) {
    if (!c.meta.contains("format") || c.meta["format"] != "titan-train/1")
      throw InvalidInput("checkpoint: not a training snapshot");
    c.restore("gen.", gen_.params());
    c.restore("", critic_.params());
    load_moments(c, "opt_g", gen_.params(), opt_g_);
    load_moments(c, "opt_d", critic_.params(), opt_d_);
    opt_g_.set_t(c.meta.at("opt_g_t").get<std::int64_t>());
    opt_d_.set_t(c.meta.at("opt_d_t").get<std::int64_t>());
    epoch_ = c.meta.at("epoch").get<int>();
    step_ = c.meta.at("step").get<std::int64_t>();
    gen_updates_ = c.meta.at("gen_updates").get<std::int64_t>();
    critic_updates_ = c.meta.at("critic_updates").get<std::int64_t>();
    last_val_.miou = from_meta(c.meta.at("last_miou"));
    last_val_.absrel = from_meta(c.meta.at("last_absrel"));
    last_val_.swd_avg = from_meta(c.meta.at("last_swd"));
    freqs_.freq = c.load_array<S>("class_freq");
  }

  void save_checkpoint(const std::filesystem::path& path,
                       const nlohmann::json& run_meta = nlohmann::json::object()) {
    ck::save(path, to_checkpoint(run_meta));
  }

  /// Per-pixel argmax over the channel dimension of a [C,H,W] tensor.
  static ArrayXXi argmax_channels(const ad::Tensor<S>& logits) {
    const auto& sh = logits.shape();
    const int C = sh[0], H = sh[1], W = sh[2];
    const auto plane = static_cast<std::int64_t>(H) * W;
    const auto& v = logits.value();
    ArrayXXi out(H, W);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const std::int64_t px = static_cast<std::int64_t>(y) * W + x;
        int best = 0;
        S best_v = v[px];
        for (int c = 1; c < C; ++c)
          if (v[c * plane + px] > best_v) {
            best_v = v[c * plane + px];
            best = c;
          }
        out(y, x) = best;
      }
    return out;
  }

 private:
  // JSON has no NaN literal; unfilled metrics round-trip as null.
  static nlohmann::json to_meta(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  }
  static double from_meta(const nlohmann::json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
  }

  static nn::GeneratorConfig with_dropout(nn::GeneratorConfig g, double p) {
    g.dropout_p = p;  // the training config is the single source of truth
    return g;
  }
  static nn::Generator<S> make_generator(const nn::GeneratorConfig& cfg, std::uint64_t seed) {
    Rng r = Rng(seed).stream(0);
    return nn::Generator<S>(cfg, r);
  }
  static nn::Critic<S> make_critic(const nn::CriticConfig& cfg, std::uint64_t seed) {
    Rng r = Rng(seed).stream(1);
    return nn::Critic<S>(cfg, r);
  }

  static void store_moments(ck::Checkpoint& c, const std::string& tag,
                            const std::vector<nn::ParamRef<S>>& refs, const Adam<S>& opt) {
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const auto n = refs[i].tensor->numel();
      const ArrayX<S> zero = ArrayX<S>::Zero(n);
      c.store_array(tag + ".m." + refs[i].name,
                    opt.moment1()[i].size() ? opt.moment1()[i] : zero);
      c.store_array(tag + ".v." + refs[i].name,
                    opt.moment2()[i].size() ? opt.moment2()[i] : zero);
    }
  }
  static void load_moments(const ck::Checkpoint& c, const std::string& tag,
                           const std::vector<nn::ParamRef<S>>& refs, Adam<S>& opt) {
    for (std::size_t i = 0; i < refs.size(); ++i) {
      opt.moment1()[i] = c.load_array<S>(tag + ".m." + refs[i].name);
      opt.moment2()[i] = c.load_array<S>(tag + ".v." + refs[i].name);
    }
  }

  void write_row(std::ofstream& csv, const LossReport<S>& rep) const {
    csv << step_ << ',' << rep.wce << ',' << rep.ls << ',' << rep.ids << ',' << rep.mae << ','
        << rep.ssim_loss << ',' << rep.d_adv << ',' << rep.g_adv << ',' << last_val_.miou << ','
        << last_val_.absrel << ',' << last_val_.swd_avg << '\n';
  }

  nn::GeneratorConfig gcfg_;
  nn::CriticConfig ccfg_;
  TrainConfig tcfg_;
  PipelineConfig pcfg_;
  Rng root_;
  nn::Generator<S> gen_;
  nn::Critic<S> critic_;
  Adam<S> opt_g_, opt_d_;
  ClassFrequencies<S> freqs_;
  std::int64_t step_ = 0;
  int epoch_ = 0;
  std::int64_t gen_updates_ = 0, critic_updates_ = 0;
  ValRow last_val_;
};

}  // namespace titan::train
