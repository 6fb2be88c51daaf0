#pragma once

#include <string>

#include "mpcg/core/rng.hpp"
#include "mpcg/nn/params.hpp"
#include "mpcg/ops/conv.hpp"
#include "mpcg/ops/elementwise.hpp"
#include "mpcg/ops/pool_resize.hpp"
#include "mpcg/ops/shape_ops.hpp"

namespace mpcg::nn {

/// Channel attention: a shared bottleneck MLP over the global-average and
/// global-max pooled channel vectors, sigmoid-gated back onto the input.
class ChannelAttention {
 public:
  ChannelAttention(int channels, int reduction, Rng& rng)
      : c_(channels), r_(reduction) {
    if (channels % reduction != 0) {
      throw ShapeError("ChannelAttention: channels " + std::to_string(channels) +
                       " not divisible by reduction " + std::to_string(reduction));
    }
    const int mid = channels / reduction;
    fc1_w_ = glorot_conv(rng, Shape{mid, channels, 1, 1});
    fc1_b_ = zero_bias(mid);
    fc2_w_ = glorot_conv(rng, Shape{channels, mid, 1, 1});
    fc2_b_ = zero_bias(channels);
  }

  Tensor attention_map(Tape* tape, const Tensor& x) const {
    Tensor avg = ops::global_avg_pool(tape, x);
    Tensor mx = ops::global_max_pool(tape, x);
    Tensor a = mlp(tape, avg);
    Tensor m = mlp(tape, mx);
    return ops::sigmoid(tape, ops::add(tape, a, m));
  }

  Tensor forward(Tape* tape, const Tensor& x) const {
    return ops::scale_channels(tape, x, attention_map(tape, x));
  }

  void collect_params(const std::string& prefix, ParamList& out) {
    out.push_back({join_name(prefix, "fc1.weight"), fc1_w_});
    out.push_back({join_name(prefix, "fc1.bias"), fc1_b_});
    out.push_back({join_name(prefix, "fc2.weight"), fc2_w_});
    out.push_back({join_name(prefix, "fc2.bias"), fc2_b_});
  }

  Tensor& fc1_weight() { return fc1_w_; }
  Tensor& fc2_weight() { return fc2_w_; }
  Tensor& fc2_bias() { return fc2_b_; }

  std::int64_t param_count() const {
    return fc1_w_.numel() + fc1_b_.numel() + fc2_w_.numel() + fc2_b_.numel();
  }

  std::int64_t flop_count(int h, int w) const {
    const int mid = c_ / r_;
    const std::int64_t px = static_cast<std::int64_t>(h) * w;
    std::int64_t fl = 2 * px * c_;                    // two global pools
    fl += 2 * (mid * (2 * c_ + 1) + c_ * (2 * mid + 1) + mid);  // MLP x2 + relu
    fl += 4 * c_ + c_;                                // add + sigmoid on (C)
    fl += px * c_;                                    // rescale
    return fl;
  }

 private:
  Tensor mlp(Tape* tape, const Tensor& pooled) const {
    Tensor h = ops::pointwise_conv(tape, pooled, fc1_w_, fc1_b_);
    h = ops::relu(tape, h);
    return ops::pointwise_conv(tape, h, fc2_w_, fc2_b_);
  }

  int c_, r_;
  Tensor fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

/// Spatial attention: a 7x7 conv over the channelwise average and max maps,
/// sigmoid-gated back onto the input.
class SpatialAttention {
 public:
  explicit SpatialAttention(Rng& rng) {
    conv_w_ = glorot_conv(rng, Shape{1, 2, 7, 7});
    conv_b_ = zero_bias(1);
  }

  Tensor attention_map(Tape* tape, const Tensor& x) const {
    Tensor stats = ops::concat_channels(
        tape, {ops::channel_mean(tape, x), ops::channel_max(tape, x)});
    Tensor logits = ops::conv2d(tape, stats, conv_w_, conv_b_, 1, 3, 1);
    return ops::sigmoid(tape, logits);
  }

  Tensor forward(Tape* tape, const Tensor& x) const {
    return ops::scale_spatial(tape, x, attention_map(tape, x));
  }

  void collect_params(const std::string& prefix, ParamList& out) {
    out.push_back({join_name(prefix, "conv.weight"), conv_w_});
    out.push_back({join_name(prefix, "conv.bias"), conv_b_});
  }

  Tensor& conv_bias() { return conv_b_; }

  std::int64_t param_count() const {
    return conv_w_.numel() + conv_b_.numel();
  }

  std::int64_t flop_count(int c, int h, int w) const {
    const std::int64_t px = static_cast<std::int64_t>(h) * w;
    std::int64_t fl = 2 * px * c;           // channel mean + max
    fl += px * (2 * 2 * 49 + 1);            // 7x7 conv over 2 maps + bias
    fl += 4 * px;                           // sigmoid
    fl += px * c;                           // rescale
    return fl;
  }

 private:
  Tensor conv_w_, conv_b_;
};

}  // namespace mpcg::nn
