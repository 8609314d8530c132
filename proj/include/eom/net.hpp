#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "eom/rng.hpp"
#include "eom/tensor.hpp"

namespace eom {

struct NetConfig {
  int in_channels = 5;
  int base_channels = 8;
  int depth = 2;
  std::vector<int> dilation_rates = {2, 4, 8};
  bool attention_enabled = true;
  bool norm_enabled = true;
  double output_scale = 30.0;  // horizon T; predictions live in (0, T)

  void validate() const {
    if (depth < 1) throw std::invalid_argument("depth must be >= 1");
    if (dilation_rates.empty()) throw std::invalid_argument("dilation_rates must be nonempty");
    if (output_scale <= 0.0) throw std::invalid_argument("output_scale must be positive");
    if (in_channels < 1 || base_channels < 1) throw std::invalid_argument("bad channel counts");
  }
};

template <class S>
struct Conv2dLayer {
  Tensor<S> weight, bias;
  int stride = 1, dilation = 1, padding = 0;

  Conv2dLayer() = default;
  Conv2dLayer(int in_ch, int out_ch, int kernel, int stride_, int dilation_, int padding_,
              Rng& rng, double bias_init = 0.0) {
    stride = stride_;
    dilation = dilation_;
    padding = padding_;
    int fan_in = in_ch * kernel * kernel;
    double limit = std::sqrt(6.0 / fan_in);
    std::vector<S> w(static_cast<size_t>(out_ch) * in_ch * kernel * kernel);
    for (auto& v : w) v = static_cast<S>(rng.uniform(-limit, limit));
    weight = Tensor<S>::from({out_ch, in_ch, kernel, kernel}, std::move(w), true);
    bias = Tensor<S>::full({out_ch}, static_cast<S>(bias_init), true);
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    return conv2d(x, weight, bias, stride, dilation, padding);
  }

  void collect(std::vector<std::pair<std::string, Tensor<S>>>& out, const std::string& name) const {
    out.emplace_back(name + ".weight", weight);
    out.emplace_back(name + ".bias", bias);
  }
};

// Per-channel normalization with running statistics for evaluation.
template <class S>
struct BatchNorm2d {
  Tensor<S> gamma, beta;
  Tensor<S> run_mean, run_var;  // state, not trained
  S momentum = S(0.9);
  S eps = S(1e-5);
  bool enabled = true;

  BatchNorm2d() = default;
  BatchNorm2d(int channels, bool enabled_) : enabled(enabled_) {
    gamma = Tensor<S>::full({channels}, S(1), true);
    beta = Tensor<S>::zeros({channels}, true);
    run_mean = Tensor<S>::zeros({channels});
    run_var = Tensor<S>::full({channels}, S(1));
  }

  Tensor<S> operator()(const Tensor<S>& x, bool train) {
    if (!enabled) return x;
    int C = x.dim(1);
    if (train) {
      Tensor<S> mu = channel_mean(x);
      Tensor<S> centered = add_channel(x, neg(mu));
      Tensor<S> var = channel_mean(mul(centered, centered));
      for (int c = 0; c < C; ++c) {
        run_mean.val()[c] = momentum * run_mean.val()[c] + (S(1) - momentum) * mu.val()[c];
        run_var.val()[c] = momentum * run_var.val()[c] + (S(1) - momentum) * var.val()[c];
      }
      Tensor<S> xn = mul_channel(centered, rsqrt_eps(var, eps));
      return add_channel(mul_channel(xn, gamma), beta);
    }
    std::vector<S> neg_mean(C), inv_std(C);
    for (int c = 0; c < C; ++c) {
      neg_mean[c] = -run_mean.val()[c];
      inv_std[c] = S(1) / std::sqrt(run_var.val()[c] + eps);
    }
    Tensor<S> xn = mul_channel(add_channel(x, Tensor<S>::from({C}, std::move(neg_mean))),
                               Tensor<S>::from({C}, std::move(inv_std)));
    return add_channel(mul_channel(xn, gamma), beta);
  }

  void collect(std::vector<std::pair<std::string, Tensor<S>>>& out, const std::string& name) const {
    if (!enabled) return;
    out.emplace_back(name + ".gamma", gamma);
    out.emplace_back(name + ".beta", beta);
    out.emplace_back(name + ".run_mean", run_mean);
    out.emplace_back(name + ".run_var", run_var);
  }
};

// conv-norm-relu twice
template <class S>
struct ConvBlock {
  Conv2dLayer<S> c1, c2;
  BatchNorm2d<S> n1, n2;

  ConvBlock() = default;
  ConvBlock(int in_ch, int out_ch, bool norm, Rng& rng)
      : c1(in_ch, out_ch, 3, 1, 1, 1, rng), c2(out_ch, out_ch, 3, 1, 1, 1, rng),
        n1(out_ch, norm), n2(out_ch, norm) {}

  Tensor<S> operator()(const Tensor<S>& x, bool train) {
    Tensor<S> y = relu(n1(c1(x), train));
    return relu(n2(c2(y), train));
  }

  void collect(std::vector<std::pair<std::string, Tensor<S>>>& out, const std::string& name) const {
    c1.collect(out, name + ".c1");
    c2.collect(out, name + ".c2");
    n1.collect(out, name + ".n1");
    n2.collect(out, name + ".n2");
  }
};

// Spatial self-attention: key/query branches, a location-wise softmax mask,
// and a residual skip.
template <class S>
struct AttentionUnit {
  Conv2dLayer<S> key, query;
  std::vector<S> last_mask;  // most recent W, {n * h * w}
  int last_mask_batch = 0;

  AttentionUnit() = default;
  AttentionUnit(int channels, Rng& rng)
      : key(channels, channels, 3, 1, 1, 1, rng), query(channels, channels, 3, 1, 1, 1, rng) {}

  Tensor<S> operator()(const Tensor<S>& f) {
    Tensor<S> k = key(f);
    Tensor<S> q = query(f);
    Tensor<S> scores = channel_dot(k, q);
    Tensor<S> w = spatial_softmax(scores);
    last_mask = w.val();
    last_mask_batch = f.dim(0);
    return add(mul_spatial(w, f), f);
  }

  void collect(std::vector<std::pair<std::string, Tensor<S>>>& out, const std::string& name) const {
    key.collect(out, name + ".key");
    query.collect(out, name + ".query");
  }
};

// U-Net with a dilated bottleneck and optional spatial attention after it.
// Output is sigmoid-scaled into (0, output_scale).
template <class S>
class UNet {
 public:
  UNet() = default;

  UNet(const NetConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0xAD));
    int ch = cfg.in_channels;
    for (int i = 0; i < cfg.depth; ++i) {
      int out = cfg.base_channels << i;
      enc_.emplace_back(ch, out, cfg.norm_enabled, rng);
      ch = out;
    }
    int bott = cfg.base_channels << cfg.depth;
    for (size_t j = 0; j < cfg.dilation_rates.size(); ++j) {
      int d = cfg.dilation_rates[j];
      bneck_.emplace_back(j == 0 ? ch : bott, bott, 3, 1, d, d, rng);
      bneck_norm_.emplace_back(bott, cfg.norm_enabled);
    }
    ch = bott;
    if (cfg.attention_enabled) attn_ = AttentionUnit<S>(ch, rng);
    for (int i = cfg.depth - 1; i >= 0; --i) {
      int out = cfg.base_channels << i;
      up_.emplace_back(ch, out, 3, 1, 1, 1, rng);
      up_norm_.emplace_back(out, cfg.norm_enabled);
      dec_.emplace_back(out * 2, out, cfg.norm_enabled, rng);
      ch = out;
    }
    head_ = Conv2dLayer<S>(ch, 1, 1, 1, 1, 0, rng, -3.0);
  }

  Tensor<S> forward(const Tensor<S>& x, bool train) {
    if (x.ndim() != 4 || x.dim(1) != cfg_.in_channels)
      throw std::invalid_argument("forward: expected {n," + std::to_string(cfg_.in_channels) +
                                  ",h,w} input");
    int div = 1 << cfg_.depth;
    if (x.dim(2) % div != 0 || x.dim(3) % div != 0)
      throw std::invalid_argument("forward: spatial size must be divisible by 2^depth = " +
                                  std::to_string(div));
    Tensor<S> h = x;
    std::vector<Tensor<S>> skips;
    for (int i = 0; i < cfg_.depth; ++i) {
      h = enc_[i](h, train);
      skips.push_back(h);
      h = maxpool2(h);
    }
    for (size_t j = 0; j < bneck_.size(); ++j) h = relu(bneck_norm_[j](bneck_[j](h), train));
    if (cfg_.attention_enabled) h = attn_(h);
    for (int i = 0; i < cfg_.depth; ++i) {
      h = upsample_nearest2(h);
      h = relu(up_norm_[i](up_[i](h), train));
      h = concat_channels(h, skips[cfg_.depth - 1 - i]);
      h = dec_[i](h, train);
    }
    return scalar_mul(sigmoid(head_(h)), static_cast<S>(cfg_.output_scale));
  }

  std::vector<std::pair<std::string, Tensor<S>>> named_params() const {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    for (size_t i = 0; i < enc_.size(); ++i) enc_[i].collect(out, "enc" + std::to_string(i));
    for (size_t j = 0; j < bneck_.size(); ++j) {
      bneck_[j].collect(out, "bneck" + std::to_string(j));
      bneck_norm_[j].collect(out, "bneck" + std::to_string(j) + ".norm");
    }
    if (cfg_.attention_enabled) attn_.collect(out, "attn");
    for (size_t i = 0; i < up_.size(); ++i) {
      up_[i].collect(out, "up" + std::to_string(i));
      up_norm_[i].collect(out, "up" + std::to_string(i) + ".norm");
      dec_[i].collect(out, "dec" + std::to_string(i));
    }
    head_.collect(out, "head");
    return out;
  }

  // trainable parameters only (running statistics excluded)
  std::vector<Tensor<S>> params() const {
    std::vector<Tensor<S>> out;
    for (auto& [name, t] : named_params())
      if (t.requires_grad()) out.push_back(t);
    return out;
  }

  size_t param_count() const {
    size_t n = 0;
    for (const auto& [name, t] : named_params())
      if (t.requires_grad()) n += t.numel();
    return n;
  }

  const NetConfig& config() const { return cfg_; }
  const std::vector<S>& last_attention_mask() const { return attn_.last_mask; }
  int last_attention_batch() const { return attn_.last_mask_batch; }

  void save(const std::string& path) const {
    auto named = named_params();
    save_checkpoint(path, named);
  }

  void load(const std::string& path) {
    auto named = named_params();
    load_checkpoint(path, named);
  }

 private:
  NetConfig cfg_;
  std::vector<ConvBlock<S>> enc_;
  std::vector<Conv2dLayer<S>> bneck_;
  std::vector<BatchNorm2d<S>> bneck_norm_;
  AttentionUnit<S> attn_;
  std::vector<Conv2dLayer<S>> up_;
  std::vector<BatchNorm2d<S>> up_norm_;
  std::vector<ConvBlock<S>> dec_;
  Conv2dLayer<S> head_;
};

}  // namespace eom
