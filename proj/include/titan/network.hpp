#pragma once

// Conditional generator and joint critic.
//
// The generator is a feature-pyramid encoder/decoder. Every encoder level
// receives the network input resampled to that level's resolution through a
// per-level injection adapter, implemented as a parallel convolution whose
// output adds into the level's pre-activation -- algebraically identical to
// concatenating the resampled input and widening the level's first
// convolution, but ablation-friendly: disabling the pyramid removes only the
// adapter tensors and leaves every other parameter shape untouched. The
// decoder mirrors the encoder with U-Net skips; each decoder level output is
// tapped, resampled to the output size, and added into the prediction head's
// first convolution (the same split-convolution equivalence). The head
// resizes the final decoder features to the output size and applies two
// convolutions, the second producing the segmentation logits. A three-layer
// convolutional depth head consumes those logits; its output is folded
// through |x|, which keeps depth non-negative without the saturating tail
// that lets a softplus head die under early adversarial pressure.
//
// The critic scores the joint (segment, depth) candidate conditioned on the
// source segment map: strided convolutions over the channel concatenation,
// global average pooling, and a linear map to one scalar. No squashing and no
// normalization layers, as a Wasserstein critic with gradient penalty wants.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "titan/ad/ops.hpp"
#include "titan/ad/tensor.hpp"
#include "titan/common.hpp"
#include "titan/rng.hpp"

namespace titan::nn {

template <typename S>
struct ParamRef {
  std::string name;
  ad::Tensor<S>* tensor;
};

/// 2D convolution module: weight [Cout, Cin*kh*kw], bias [Cout], He-normal
/// initialization scaled by the fan-in.
template <typename S>
struct Conv2d {
  ad::Tensor<S> w, b;
  int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;

  Conv2d() = default;
  Conv2d(int cin_, int cout_, int k_, int stride_, int pad_, Rng& rng)
      : cin(cin_), cout(cout_), k(k_), stride(stride_), pad(pad_) {
    const std::int64_t fan_in = static_cast<std::int64_t>(cin) * k * k;
    const S std_dev = std::sqrt(S(2) / static_cast<S>(fan_in));
    ArrayX<S> wv(static_cast<std::int64_t>(cout) * fan_in);
    for (std::int64_t i = 0; i < wv.size(); ++i) wv[i] = static_cast<S>(rng.normal()) * std_dev;
    w = ad::Tensor<S>::leaf(std::move(wv), {cout, static_cast<int>(fan_in)});
    b = ad::Tensor<S>::leaf(ArrayX<S>::Zero(cout), {cout});
  }

  ad::Tensor<S> operator()(const ad::Tensor<S>& x) const {
    return ad::conv2d(x, w, b, k, k, stride, pad);
  }

  std::int64_t param_count() const { return w.numel() + b.numel(); }

  void collect(const std::string& prefix, std::vector<ParamRef<S>>& out) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
  }
};

struct GeneratorConfig {
  int in_channels = 19;  // 5 range-image channels + num_classes one-hot planes
  int num_classes = 14;
  int encoder_depth = 4;  // pyramid levels; level k runs at input/2^k
  int base_width = 47;    // level-k feature width is base_width * 2^k
  int head_width = 58;    // prediction-head and depth-head feature width
  int input_width = 512;
  int input_height = 64;
  int output_width = 1241;
  int output_height = 376;
  double dropout_p = 0.2;
  bool pyramid = true;     // input-injection adapters + decoder taps
  bool depth_head = true;  // emit a depth map alongside the logits

  void validate() const {
    if (encoder_depth < 2) throw InvalidInput("generator config: encoder_depth must be >= 2");
    if (in_channels != 5 + num_classes)
      throw InvalidInput("generator config: in_channels must equal 5 + num_classes");
    if (num_classes < 2) throw InvalidInput("generator config: need at least two classes");
    if (base_width < 1 || head_width < 1)
      throw InvalidInput("generator config: widths must be positive");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0))
      throw InvalidInput("generator config: dropout_p must lie in [0,1)");
    if (input_width < 1 || input_height < 1)
      throw InvalidInput("generator config: input size must be positive");
    if (output_width < input_width || output_height < input_height)
      throw InvalidInput("generator config: output size must be >= input size componentwise");
    const int down = 1 << (encoder_depth - 1);
    if (input_width % down != 0 || input_height % down != 0)
      throw InvalidInput("generator config: input size must be divisible by 2^(encoder_depth-1)");
    if (input_height / down < 1 || input_width / down < 1)
      throw InvalidInput("generator config: input too small for the encoder depth");
  }

  int width(int level) const { return base_width << level; }

  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

template <typename S>
class Generator {
 public:
  Generator() = default;

  Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int L = cfg.encoder_depth;
    for (int k = 0; k < L; ++k) {
      const int win = k == 0 ? cfg.in_channels : cfg.width(k - 1);
      const int wout = cfg.width(k);
      enc_c1_.emplace_back(win, wout, 3, k == 0 ? 1 : 2, 1, rng);
      enc_c2_.emplace_back(wout, wout, 3, 1, 1, rng);
      if (cfg.pyramid) inj_.emplace_back(cfg.in_channels, wout, 3, 1, 1, rng);
    }
    // Decoder level 0 is the bottleneck; level j>0 upsamples and fuses the
    // encoder skip at the matching resolution.
    dec_c1_.emplace_back(cfg.width(L - 1), cfg.width(L - 1), 3, 1, 1, rng);
    dec_c2_.emplace_back(cfg.width(L - 1), cfg.width(L - 1), 3, 1, 1, rng);
    for (int j = 1; j < L; ++j) {
      const int skip = cfg.width(L - 1 - j);
      const int win = cfg.width(L - j) + skip;
      dec_c1_.emplace_back(win, skip, 3, 1, 1, rng);
      dec_c2_.emplace_back(skip, skip, 3, 1, 1, rng);
    }
    if (cfg.pyramid)
      for (int j = 0; j < L; ++j) {
        const int wd = j == 0 ? cfg.width(L - 1) : cfg.width(L - 1 - j);
        taps_.emplace_back(wd, cfg.head_width, 3, 1, 1, rng);
      }
    head_refine_ = Conv2d<S>(cfg.width(0), cfg.head_width, 3, 1, 1, rng);
    head_final_ = Conv2d<S>(cfg.head_width, cfg.num_classes, 3, 1, 1, rng);
    if (cfg.depth_head) {
      depth1_ = Conv2d<S>(cfg.num_classes, cfg.head_width, 3, 1, 1, rng);
      depth2_ = Conv2d<S>(cfg.head_width, cfg.head_width, 3, 1, 1, rng);
      depth3_ = Conv2d<S>(cfg.head_width, 1, 3, 1, 1, rng);
    }
  }

  const GeneratorConfig& config() const { return cfg_; }
  int num_injection_adapters() const { return static_cast<int>(inj_.size()); }
  int num_decoder_taps() const { return static_cast<int>(taps_.size()); }

  /// Forward pass on one sample [in_channels, input_height, input_width].
  /// Passing a dropout rng enables training-mode dropout; with none the pass
  /// is a pure function of (parameters, input). Returns segmentation logits
  /// [C, out_h, out_w] and depth [1, out_h, out_w] (undefined when the depth
  /// head is disabled).
  std::pair<ad::Tensor<S>, ad::Tensor<S>> forward(const ad::Tensor<S>& x,
                                                  Rng* dropout_rng = nullptr) const {
    const auto& sh = x.shape();
    if (sh.size() != 3 || sh[0] != cfg_.in_channels || sh[1] != cfg_.input_height ||
        sh[2] != cfg_.input_width)
      throw InvalidInput("generator: input shape " + ad::shape_str(sh) + " does not match config");
    const int L = cfg_.encoder_depth;
    const S slope = S(0.1);

    std::vector<ad::Tensor<S>> enc;
    ad::Tensor<S> cur = x;
    for (int k = 0; k < L; ++k) {
      ad::Tensor<S> pre = enc_c1_[k](cur);
      if (cfg_.pyramid) {
        // Inject the input resampled to this level's resolution (nearest keeps
        // the one-hot planes hard).
        const auto& ps = pre.shape();
        ad::Tensor<S> xk = k == 0 ? x : ad::nearest_resize(x, ps[1], ps[2]);
        pre = ad::add(pre, inj_[k](xk));
      }
      ad::Tensor<S> a = ad::leaky_relu(pre, slope);
      cur = ad::leaky_relu(ad::add(a, enc_c2_[k](a)), slope);
      enc.push_back(cur);
    }

    std::vector<ad::Tensor<S>> dec;
    ad::Tensor<S> d = block(dec_c1_[0], dec_c2_[0], enc[L - 1], slope);
    if (dropout_rng && cfg_.dropout_p > 0) d = ad::dropout(d, cfg_.dropout_p, *dropout_rng);
    dec.push_back(d);
    for (int j = 1; j < L; ++j) {
      const auto& ss = enc[L - 1 - j].shape();
      ad::Tensor<S> up = ad::bilinear_resize(d, ss[1], ss[2]);
      d = block(dec_c1_[j], dec_c2_[j], ad::concat_ch(up, enc[L - 1 - j]), slope);
      if (dropout_rng && cfg_.dropout_p > 0) d = ad::dropout(d, cfg_.dropout_p, *dropout_rng);
      dec.push_back(d);
    }

    ad::Tensor<S> base = ad::bilinear_resize(dec[L - 1], cfg_.output_height, cfg_.output_width);
    ad::Tensor<S> pre = head_refine_(base);
    if (cfg_.pyramid)
      for (int j = 0; j < L; ++j)
        pre = ad::add(pre, ad::bilinear_resize(taps_[j](dec[j]), cfg_.output_height,
                                               cfg_.output_width));
    ad::Tensor<S> h1 = ad::leaky_relu(pre, slope);
    ad::Tensor<S> seg_logits = head_final_(h1);

    ad::Tensor<S> depth;
    if (cfg_.depth_head) {
      ad::Tensor<S> z = ad::leaky_relu(depth1_(seg_logits), slope);
      z = ad::leaky_relu(depth2_(z), slope);
      depth = ad::abs_(depth3_(z));
    }
    return {seg_logits, depth};
  }

  std::vector<ParamRef<S>> params() {
    std::vector<ParamRef<S>> out;
    for (std::size_t k = 0; k < enc_c1_.size(); ++k) {
      const std::string p = "enc" + std::to_string(k);
      enc_c1_[k].collect(p + ".c1", out);
      enc_c2_[k].collect(p + ".c2", out);
    }
    for (std::size_t k = 0; k < inj_.size(); ++k)
      inj_[k].collect("enc" + std::to_string(k) + ".inj", out);
    for (std::size_t j = 0; j < dec_c1_.size(); ++j) {
      const std::string p = "dec" + std::to_string(j);
      dec_c1_[j].collect(p + ".c1", out);
      dec_c2_[j].collect(p + ".c2", out);
    }
    for (std::size_t j = 0; j < taps_.size(); ++j)
      taps_[j].collect("head.tap" + std::to_string(j), out);
    head_refine_.collect("head.refine", out);
    head_final_.collect("head.final", out);
    if (cfg_.depth_head) {
      depth1_.collect("depth.c1", out);
      depth2_.collect("depth.c2", out);
      depth3_.collect("depth.c3", out);
    }
    return out;
  }

  std::int64_t param_count() {
    std::int64_t n = 0;
    for (const auto& p : params()) n += p.tensor->numel();
    return n;
  }

 private:
  static ad::Tensor<S> block(const Conv2d<S>& c1, const Conv2d<S>& c2, const ad::Tensor<S>& x,
                             S slope) {
    ad::Tensor<S> a = ad::leaky_relu(c1(x), slope);
    return ad::leaky_relu(ad::add(a, c2(a)), slope);
  }

  GeneratorConfig cfg_;
  std::vector<Conv2d<S>> enc_c1_, enc_c2_, inj_;
  std::vector<Conv2d<S>> dec_c1_, dec_c2_, taps_;
  Conv2d<S> head_refine_, head_final_;
  Conv2d<S> depth1_, depth2_, depth3_;
};

struct CriticConfig {
  int num_classes = 14;  // input channels are 2*num_classes + 1
  int base_width = 16;
  int levels = 3;  // strided halvings before pooling
  int input_width = 1241;
  int input_height = 376;

  void validate() const {
    if (num_classes < 2) throw InvalidInput("critic config: need at least two classes");
    if (base_width < 1) throw InvalidInput("critic config: base_width must be positive");
    if (levels < 1) throw InvalidInput("critic config: need at least one level");
    if (input_width < (1 << levels) || input_height < (1 << levels))
      throw InvalidInput("critic config: input too small for the level count");
  }

  int in_channels() const { return 2 * num_classes + 1; }

  friend bool operator==(const CriticConfig&, const CriticConfig&) = default;
};

/// Joint Wasserstein critic over (condition one-hot, candidate one-hot,
/// candidate depth). Produces one unsquashed scalar per sample.
template <typename S>
class Critic {
 public:
  Critic() = default;

  Critic(const CriticConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    int cin = cfg.in_channels();
    for (int k = 0; k < cfg.levels; ++k) {
      const int cout = cfg.base_width << k;
      convs_.emplace_back(cin, cout, 3, 2, 1, rng);
      cin = cout;
    }
    const S std_dev = std::sqrt(S(2) / static_cast<S>(cin));
    ArrayX<S> wv(cin);
    for (int i = 0; i < cin; ++i) wv[i] = static_cast<S>(rng.normal()) * std_dev;
    fc_w_ = ad::Tensor<S>::leaf(std::move(wv), {1, cin});
    fc_b_ = ad::Tensor<S>::leaf(ArrayX<S>::Zero(1), {1});
  }

  const CriticConfig& config() const { return cfg_; }

  /// Scores one (candidate segment, candidate depth) pair under the condition.
  ad::Tensor<S> operator()(const ad::Tensor<S>& seg, const ad::Tensor<S>& depth,
                           const ad::Tensor<S>& condition) const {
    check_input(seg, cfg_.num_classes, "candidate segment");
    check_input(depth, 1, "candidate depth");
    check_input(condition, cfg_.num_classes, "condition");
    ad::Tensor<S> x = ad::concat_ch(std::vector<ad::Tensor<S>>{condition, seg, depth});
    for (const auto& conv : convs_) x = ad::leaky_relu(conv(x), S(0.1));
    const auto& sh = x.shape();
    ad::Tensor<S> pooled =
        ad::scale(ad::spatial_sum(x), S(1) / static_cast<S>(sh[1] * sh[2]));  // [C,1,1]
    ad::Tensor<S> score = ad::matmul(fc_w_, ad::reshape(pooled, {sh[0], 1}));
    return ad::add(ad::reshape(score, {1}), fc_b_);
  }

  std::vector<ParamRef<S>> params() {
    std::vector<ParamRef<S>> out;
    for (std::size_t k = 0; k < convs_.size(); ++k)
      convs_[k].collect("critic.conv" + std::to_string(k), out);
    out.push_back({"critic.fc.w", &fc_w_});
    out.push_back({"critic.fc.b", &fc_b_});
    return out;
  }

  std::int64_t param_count() {
    std::int64_t n = 0;
    for (const auto& p : params()) n += p.tensor->numel();
    return n;
  }

 private:
  void check_input(const ad::Tensor<S>& t, int ch, const char* what) const {
    const auto& sh = t.shape();
    if (sh.size() != 3 || sh[0] != ch || sh[1] != cfg_.input_height || sh[2] != cfg_.input_width)
      throw InvalidInput(std::string("critic: ") + what + " shape " + ad::shape_str(sh) +
                         " does not match config");
  }

  CriticConfig cfg_;
  std::vector<Conv2d<S>> convs_;
  ad::Tensor<S> fc_w_, fc_b_;
};

}  // namespace titan::nn
