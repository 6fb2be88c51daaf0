#pragma once

#include <array>
#include <string>
#include <vector>

#include "mpcg/core/rng.hpp"
#include "mpcg/nn/attention_blocks.hpp"
#include "mpcg/nn/gates.hpp"
#include "mpcg/nn/is_block.hpp"
#include "mpcg/ops/conv.hpp"
#include "mpcg/ops/shape_ops.hpp"

namespace mpcg::nn {

/// Decoder feature aggregation.
///
/// Concatenates the deep decoder features (already upsampled to one working
/// resolution by the caller), projects them to 3*C_b channels, splits into
/// three branches refined by channel attention / 3x3 conv / spatial
/// attention, couples the branches through a 3x3 gate set with a skip
/// connection, and fuses the result with an IS block.
class DFABlock {
 public:
  static constexpr int kBranches = 3;

  DFABlock(std::vector<int> input_channels, int branch_channels, int c_out,
           int ca_reduction, int expansion, Rng& rng, bool use_gates = true,
           bool linear_is = false)
      : in_channels_(std::move(input_channels)),
        cb_(branch_channels),
        use_gates_(use_gates),
        gates_(kBranches),
        chatt_(branch_channels, ca_reduction, rng),
        spatt_(rng),
        fuse_(3 * branch_channels, expansion, c_out, rng, linear_is) {
    if (in_channels_.size() < 2) {
      throw ShapeError("DFABlock: needs at least two input feature maps");
    }
    int total = 0;
    for (int c : in_channels_) total += c;
    agg_w_ = glorot_conv(rng, Shape{3 * branch_channels, total, 1, 1});
    agg_b_ = zero_bias(3 * branch_channels);
    conv_w_ = glorot_conv(rng, Shape{branch_channels, branch_channels, 3, 3});
    conv_b_ = zero_bias(branch_channels);
  }

  int out_channels() const { return fuse_.out_channels(); }
  int branch_channels() const { return cb_; }
  size_t input_count() const { return in_channels_.size(); }
  GateSet& gates() { return gates_; }
  bool use_gates() const { return use_gates_; }
  ChannelAttention& channel_attention() { return chatt_; }
  SpatialAttention& spatial_attention() { return spatt_; }
  ISBlock& fuse() { return fuse_; }

  /// The three refined branch maps (D^{o_1}, D^{o_2}, D^{o_3}).
  std::vector<Tensor> branch_outputs(Tape* tape,
                                     const std::vector<Tensor>& inputs) const {
    check_inputs(inputs);
    Tensor agg = ops::pointwise_conv(tape, ops::concat_channels(tape, inputs),
                                     agg_w_, agg_b_);
    auto parts = ops::split_channels(tape, agg, kBranches);
    return {chatt_.forward(tape, parts[0]),
            ops::conv2d(tape, parts[1], conv_w_, conv_b_, 1, 1, 1),
            spatt_.forward(tape, parts[2])};
  }

  Tensor forward(Tape* tape, const std::vector<Tensor>& inputs) {
    std::vector<Tensor> branch = branch_outputs(tape, inputs);
    std::vector<Tensor> fused;
    fused.reserve(kBranches);
    for (int m = 0; m < kBranches; ++m) {
      Tensor coupled = use_gates_ ? gated_product(tape, branch, gates_, m)
                                  : product_all_open(tape, branch, m);
      fused.push_back(ops::add(tape, coupled, branch[static_cast<size_t>(m)]));
    }
    return fuse_.forward(tape, ops::concat_channels(tape, fused));
  }

  void collect_params(const std::string& prefix, ParamList& out) {
    out.push_back({join_name(prefix, "agg.weight"), agg_w_});
    out.push_back({join_name(prefix, "agg.bias"), agg_b_});
    chatt_.collect_params(join_name(prefix, "chatt"), out);
    out.push_back({join_name(prefix, "conv.weight"), conv_w_});
    out.push_back({join_name(prefix, "conv.bias"), conv_b_});
    spatt_.collect_params(join_name(prefix, "spatt"), out);
    if (use_gates_) gates_.collect_params(join_name(prefix, "gates"), out);
    fuse_.collect_params(join_name(prefix, "fuse"), out);
  }

  std::int64_t param_count() const {
    std::int64_t total = agg_w_.numel() + agg_b_.numel() + conv_w_.numel() +
                         conv_b_.numel() + chatt_.param_count() +
                         spatt_.param_count() + fuse_.param_count();
    if (use_gates_) total += gates_.logits().numel();
    return total;
  }

  std::int64_t flop_count(int h, int w) const {
    const std::int64_t px = static_cast<std::int64_t>(h) * w;
    int total = 0;
    for (int c : in_channels_) total += c;
    std::int64_t fl = px * 3 * cb_ * (2 * total + 1);     // aggregation pwc
    fl += chatt_.flop_count(h, w);
    fl += px * cb_ * (2 * cb_ * 9 + 1);                   // 3x3 conv branch
    fl += spatt_.flop_count(cb_, h, w);
    fl += kBranches * 3 * px * cb_;                       // coupling + skip
    fl += fuse_.flop_count(h, w);
    return fl;
  }

 private:
  void check_inputs(const std::vector<Tensor>& inputs) const {
    if (inputs.size() != in_channels_.size()) {
      throw ShapeError("DFABlock: expected " +
                       std::to_string(in_channels_.size()) + " inputs, got " +
                       std::to_string(inputs.size()));
    }
    for (size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i].c() != in_channels_[i]) {
        throw ShapeError("DFABlock: input " + std::to_string(i) + " has " +
                         std::to_string(inputs[i].c()) + " channels, expected " +
                         std::to_string(in_channels_[i]));
      }
      if (inputs[i].h() != inputs[0].h() || inputs[i].w() != inputs[0].w()) {
        throw ShapeError(
            "DFABlock: input " + std::to_string(i) + " spatial extent " +
            inputs[i].shape().str() +
            " differs from input 0 " + inputs[0].shape().str() +
            "; caller must upsample all inputs to the working resolution");
      }
    }
  }

  std::vector<int> in_channels_;
  int cb_;
  bool use_gates_;
  GateSet gates_;
  Tensor agg_w_, agg_b_;
  ChannelAttention chatt_;
  Tensor conv_w_, conv_b_;
  SpatialAttention spatt_;
  ISBlock fuse_;
};

}  // namespace mpcg::nn
