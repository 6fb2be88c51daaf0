#pragma once

#include <string>
#include <vector>

#include "mpcg/core/rng.hpp"
#include "mpcg/nn/gates.hpp"
#include "mpcg/nn/is_block.hpp"
#include "mpcg/ops/conv.hpp"
#include "mpcg/ops/pool_resize.hpp"
#include "mpcg/ops/shape_ops.hpp"

namespace mpcg::nn {

/// Coupling-gated multiscale feature extraction.
///
/// Four resolution-preserving branches (maxpool 3x3, depthwise 3/5/7) feed a
/// 4x4 gate set; each branch's gated product is concatenated and fused by an
/// IS block (4C -> C_out).
class CGMFEBlock {
 public:
  static constexpr int kBranches = 4;

  CGMFEBlock(int channels, int c_out, int expansion, Rng& rng,
             bool use_gates = true, bool linear_is = false)
      : c_(channels),
        use_gates_(use_gates),
        gates_(kBranches),
        dw3_(glorot_conv(rng, Shape{channels, 1, 3, 3})),
        dw5_(glorot_conv(rng, Shape{channels, 1, 5, 5})),
        dw7_(glorot_conv(rng, Shape{channels, 1, 7, 7})),
        fuse_(4 * channels, expansion, c_out, rng, linear_is) {}

  int in_channels() const { return c_; }
  int out_channels() const { return fuse_.out_channels(); }
  GateSet& gates() { return gates_; }
  const GateSet& gates() const { return gates_; }
  bool use_gates() const { return use_gates_; }
  Tensor& dw3() { return dw3_; }
  ISBlock& fuse() { return fuse_; }

  /// Branch order is fixed: (maxpool3, dwc3, dwc5, dwc7).
  std::vector<Tensor> branch_outputs(Tape* tape, const Tensor& x) const {
    return {ops::maxpool2d(tape, x, 3, 1, 1),
            ops::depthwise_conv2d(tape, x, dw3_),
            ops::depthwise_conv2d(tape, x, dw5_),
            ops::depthwise_conv2d(tape, x, dw7_)};
  }

  Tensor forward(Tape* tape, const Tensor& x) {
    if (x.c() != c_) {
      throw ShapeError("CGMFEBlock: input has " + std::to_string(x.c()) +
                       " channels, block expects " + std::to_string(c_));
    }
    std::vector<Tensor> branches = branch_outputs(tape, x);
    std::vector<Tensor> fused;
    fused.reserve(kBranches);
    for (int i = 0; i < kBranches; ++i) {
      fused.push_back(use_gates_ ? gated_product(tape, branches, gates_, i)
                                 : product_all_open(tape, branches, i));
    }
    return fuse_.forward(tape, ops::concat_channels(tape, fused));
  }

  void collect_params(const std::string& prefix, ParamList& out) {
    out.push_back({join_name(prefix, "dw3.weight"), dw3_});
    out.push_back({join_name(prefix, "dw5.weight"), dw5_});
    out.push_back({join_name(prefix, "dw7.weight"), dw7_});
    if (use_gates_) gates_.collect_params(join_name(prefix, "gates"), out);
    fuse_.collect_params(join_name(prefix, "fuse"), out);
  }

  std::int64_t param_count() const {
    std::int64_t total = dw3_.numel() + dw5_.numel() + dw7_.numel() +
                         fuse_.param_count();
    if (use_gates_) total += gates_.logits().numel();
    return total;
  }

  std::int64_t flop_count(int h, int w) const {
    const std::int64_t px = static_cast<std::int64_t>(h) * w;
    std::int64_t fl = px * c_ * 9;                       // maxpool compares
    fl += px * c_ * 2 * (9 + 25 + 49);                   // depthwise branches
    fl += 3 * px * c_ * kBranches;                       // gated products (bound)
    fl += fuse_.flop_count(h, w);
    return fl;
  }

 private:
  int c_;
  bool use_gates_;
  GateSet gates_;
  Tensor dw3_, dw5_, dw7_;
  ISBlock fuse_;
};

}  // namespace mpcg::nn
