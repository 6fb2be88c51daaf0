#pragma once

#include <cmath>
#include <string>

#include "mpcg/core/rng.hpp"
#include "mpcg/nn/is_block.hpp"
#include "mpcg/ops/conv.hpp"
#include "mpcg/ops/matmul_norm.hpp"
#include "mpcg/ops/pool_resize.hpp"
#include "mpcg/ops/shape_ops.hpp"

namespace mpcg::nn {

/// Non-overlapping-window multi-head scaled dot-product cross-attention.
/// q/k/v are (N,C,H,W) with matching shapes; spatial extents are zero-padded
/// to multiples of `win` and the output is cropped back.
inline Tensor windowed_cross_attention(Tape* tape, const Tensor& q,
                                       const Tensor& k, const Tensor& v,
                                       int win, int heads) {
  mpcg::detail::check_same_shape(q, k, "windowed_cross_attention");
  mpcg::detail::check_same_shape(q, v, "windowed_cross_attention");
  if (q.c() % heads != 0) {
    throw ShapeError("windowed_cross_attention: channels " +
                     std::to_string(q.c()) + " not divisible by heads " +
                     std::to_string(heads));
  }
  const int H = q.h(), W = q.w();
  const int Hp = (H + win - 1) / win * win;
  const int Wp = (W + win - 1) / win * win;
  if (win > Hp || win > Wp) {
    throw ShapeError("windowed_cross_attention: window " + std::to_string(win) +
                     " larger than padded extent " + std::to_string(Hp) + "x" +
                     std::to_string(Wp));
  }
  Tensor qp = ops::pad_spatial(tape, q, Hp - H, Wp - W);
  Tensor kp = ops::pad_spatial(tape, k, Hp - H, Wp - W);
  Tensor vp = ops::pad_spatial(tape, v, Hp - H, Wp - W);

  Tensor qw = ops::window_partition(tape, qp, win, heads);
  Tensor kw = ops::window_partition(tape, kp, win, heads);
  Tensor vw = ops::window_partition(tape, vp, win, heads);

  const int dh = q.c() / heads;
  const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor scores = ops::scale_shift(
      tape, ops::matmul_batched(tape, qw, kw, false, true), scale, 0.0f);
  Tensor probs = ops::softmax_lastdim(tape, scores);
  Tensor ctx = ops::matmul_batched(tape, probs, vw);

  Tensor merged = ops::window_merge(tape, ctx, win, heads, q.n(), q.c(), Hp, Wp);
  return ops::crop_spatial(tape, merged, H, W);
}

/// Windows cross-attention decoder block. The query comes from the shallow
/// skip feature; key/value come from the deeper decoder feature, which is
/// upsampled x2 and pointwise-projected to the shallow channel width first.
/// An IS block with a residual connection around the attention step forms
/// the feed-forward stage.
class WCADBlock {
 public:
  WCADBlock(int shallow_channels, int deep_channels, int c_out, int window,
            int heads, int expansion, Rng& rng, bool linear_is = false)
      : c_(shallow_channels),
        c_deep_(deep_channels),
        window_(window),
        heads_(heads),
        align_w_(glorot_conv(rng, Shape{shallow_channels, deep_channels, 1, 1})),
        align_b_(zero_bias(shallow_channels)),
        wq_(glorot_conv(rng, Shape{shallow_channels, shallow_channels, 1, 1})),
        wk_(glorot_conv(rng, Shape{shallow_channels, shallow_channels, 1, 1})),
        wv_(glorot_conv(rng, Shape{shallow_channels, shallow_channels, 1, 1})),
        ffn_(shallow_channels, expansion, c_out, rng, linear_is) {
    if (shallow_channels % heads != 0) {
      throw ShapeError("WCADBlock: channels " + std::to_string(shallow_channels) +
                       " not divisible by heads " + std::to_string(heads));
    }
  }

  int out_channels() const { return ffn_.out_channels(); }
  int window() const { return window_; }
  int heads() const { return heads_; }
  Tensor& value_weight() { return wv_; }
  Tensor& align_weight() { return align_w_; }
  Tensor& align_bias() { return align_b_; }
  ISBlock& ffn() { return ffn_; }

  /// deep must sit exactly one stage lower: spatial extents half of shallow.
  Tensor forward(Tape* tape, const Tensor& shallow, const Tensor& deep) const {
    if (shallow.c() != c_) {
      throw ShapeError("WCADBlock: shallow input has " +
                       std::to_string(shallow.c()) + " channels, expected " +
                       std::to_string(c_));
    }
    if (deep.c() != c_deep_) {
      throw ShapeError("WCADBlock: deep input has " + std::to_string(deep.c()) +
                       " channels, expected " + std::to_string(c_deep_));
    }
    if (deep.h() * 2 != shallow.h() || deep.w() * 2 != shallow.w()) {
      throw ShapeError("WCADBlock: deep extent " + deep.shape().str() +
                       " must be exactly half of shallow " +
                       shallow.shape().str());
    }
    Tensor up = ops::bilinear_upsample(tape, deep, 2);
    Tensor aligned = ops::pointwise_conv(tape, up, align_w_, align_b_);
    Tensor q = ops::pointwise_conv(tape, shallow, wq_);
    Tensor k = ops::pointwise_conv(tape, aligned, wk_);
    Tensor v = ops::pointwise_conv(tape, aligned, wv_);
    Tensor attn = windowed_cross_attention(tape, q, k, v, window_, heads_);
    return ffn_.forward(tape, ops::add(tape, shallow, attn));
  }

  void collect_params(const std::string& prefix, ParamList& out) {
    out.push_back({join_name(prefix, "align.weight"), align_w_});
    out.push_back({join_name(prefix, "align.bias"), align_b_});
    out.push_back({join_name(prefix, "wq.weight"), wq_});
    out.push_back({join_name(prefix, "wk.weight"), wk_});
    out.push_back({join_name(prefix, "wv.weight"), wv_});
    ffn_.collect_params(join_name(prefix, "ffn"), out);
  }

  std::int64_t param_count() const {
    return align_w_.numel() + align_b_.numel() + wq_.numel() + wk_.numel() +
           wv_.numel() + ffn_.param_count();
  }

  std::int64_t flop_count(int shallow_h, int shallow_w) const {
    const std::int64_t px = static_cast<std::int64_t>(shallow_h) * shallow_w;
    const std::int64_t dpx = px / 4;
    std::int64_t fl = 8 * dpx * c_deep_ * 4;            // upsample x2
    fl += px * c_ * (2 * c_deep_ + 1);                  // align projection
    fl += 3 * px * c_ * 2 * c_;                         // q/k/v projections
    // attention: two batched matmuls over win^2 tokens plus softmax
    const int Hp = (shallow_h + window_ - 1) / window_ * window_;
    const int Wp = (shallow_w + window_ - 1) / window_ * window_;
    const std::int64_t tokens = static_cast<std::int64_t>(window_) * window_;
    const std::int64_t windows =
        (static_cast<std::int64_t>(Hp) / window_) * (Wp / window_);
    const int dh = c_ / heads_;
    fl += 2 * 2 * windows * heads_ * tokens * tokens * dh;  // QK^T and PV
    fl += windows * heads_ * tokens * tokens * 4;           // softmax
    fl += px * c_;                                          // residual add
    fl += ffn_.flop_count(shallow_h, shallow_w);
    return fl;
  }

 private:
  int c_, c_deep_, window_, heads_;
  Tensor align_w_, align_b_;
  Tensor wq_, wk_, wv_;
  ISBlock ffn_;
};

}  // namespace mpcg::nn
