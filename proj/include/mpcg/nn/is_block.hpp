#pragma once

#include <string>

#include "mpcg/core/rng.hpp"
#include "mpcg/core/tape.hpp"
#include "mpcg/core/tensor.hpp"
#include "mpcg/nn/params.hpp"
#include "mpcg/ops/conv.hpp"
#include "mpcg/ops/elementwise.hpp"
#include "mpcg/ops/matmul_norm.hpp"

namespace mpcg::nn {

/// Group count rule used across the network: 8-channel groups, or one group
/// per channel for thin tensors.
inline int norm_groups(int channels) {
  if (channels < 8) return channels;
  if (channels % 8 != 0) {
    throw ShapeError("norm_groups: channels " + std::to_string(channels) +
                     " not divisible by 8");
  }
  return 8;
}

/// Information-summary block: an inverted bottleneck
///   pointwise (C -> E*C)  ->  depthwise 3x3  ->  pointwise (E*C -> C_out)
/// with group-norm + GELU after the first two stages. The norm layers carry
/// no affine parameters. Setting `linear` drops norm+activation entirely,
/// leaving the literal composition of the three convolutions.
class ISBlock {
 public:
  ISBlock(int c_in, int expansion, int c_out, Rng& rng, bool linear = false)
      : c_in_(c_in),
        c_out_(c_out),
        expansion_(expansion),
        hidden_(c_in * expansion),
        linear_(linear) {
    if (expansion >= 2 && hidden_ <= std::max(c_in, c_out)) {
      throw ShapeError("ISBlock: hidden width must exceed max(C, C_out)");
    }
    pwc_in_w_ = glorot_conv(rng, Shape{hidden_, c_in_, 1, 1});
    pwc_in_b_ = zero_bias(hidden_);
    dwc_w_ = glorot_conv(rng, Shape{hidden_, 1, 3, 3});
    dwc_b_ = zero_bias(hidden_);
    pwc_out_w_ = glorot_conv(rng, Shape{c_out_, hidden_, 1, 1});
    pwc_out_b_ = zero_bias(c_out_);
    if (!linear_) norm_groups(hidden_);  // validate divisibility up front
  }

  int in_channels() const { return c_in_; }
  int out_channels() const { return c_out_; }
  int hidden_width() const { return hidden_; }

  Tensor forward(Tape* tape, const Tensor& x) const {
    if (x.c() != c_in_) {
      throw ShapeError("ISBlock: input has " + std::to_string(x.c()) +
                       " channels, block expects " + std::to_string(c_in_));
    }
    Tensor h = ops::pointwise_conv(tape, x, pwc_in_w_, pwc_in_b_);
    if (!linear_) {
      h = ops::gelu(tape, ops::group_norm(tape, h, norm_groups(hidden_)));
    }
    h = ops::depthwise_conv2d(tape, h, dwc_w_, 1, dwc_b_);
    if (!linear_) {
      h = ops::gelu(tape, ops::group_norm(tape, h, norm_groups(hidden_)));
    }
    return ops::pointwise_conv(tape, h, pwc_out_w_, pwc_out_b_);
  }

  void collect_params(const std::string& prefix, ParamList& out) {
    out.push_back({join_name(prefix, "pwc_in.weight"), pwc_in_w_});
    out.push_back({join_name(prefix, "pwc_in.bias"), pwc_in_b_});
    out.push_back({join_name(prefix, "dwc.weight"), dwc_w_});
    out.push_back({join_name(prefix, "dwc.bias"), dwc_b_});
    out.push_back({join_name(prefix, "pwc_out.weight"), pwc_out_w_});
    out.push_back({join_name(prefix, "pwc_out.bias"), pwc_out_b_});
  }

  std::int64_t param_count() const {
    return pwc_in_w_.numel() + pwc_in_b_.numel() + dwc_w_.numel() +
           dwc_b_.numel() + pwc_out_w_.numel() + pwc_out_b_.numel();
  }

  /// Analytic forward cost at spatial extent (h, w); MAC = 2 FLOPs.
  std::int64_t flop_count(int h, int w) const {
    const std::int64_t px = static_cast<std::int64_t>(h) * w;
    std::int64_t fl = 0;
    fl += px * hidden_ * (2 * c_in_ + 1);        // pwc_in + bias
    fl += px * hidden_ * (2 * 9 + 1);            // dwc 3x3 + bias
    fl += px * c_out_ * (2 * hidden_ + 1);       // pwc_out + bias
    if (!linear_) fl += 2 * (6 + 8) * px * hidden_;  // norm (6) + gelu (8)
    return fl;
  }

 private:
  int c_in_, c_out_, expansion_, hidden_;
  bool linear_;
  Tensor pwc_in_w_, pwc_in_b_;
  Tensor dwc_w_, dwc_b_;
  Tensor pwc_out_w_, pwc_out_b_;
};

}  // namespace mpcg::nn
