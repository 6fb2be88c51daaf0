#pragma once

#include <array>
#include <string>

#include "mpcg/core/rng.hpp"
#include "mpcg/nn/is_block.hpp"
#include "mpcg/nn/params.hpp"
#include "mpcg/ops/conv.hpp"
#include "mpcg/ops/elementwise.hpp"
#include "mpcg/ops/matmul_norm.hpp"

namespace mpcg::nn {

/// Stage widths and strides of a pluggable 4-stage encoder. Strides are
/// fixed at (4, 8, 16, 32) relative to the input; widths must increase.
struct EncoderSpec {
  std::array<int, 4> widths{16, 32, 64, 128};

  void validate() const {
    for (int s = 1; s < 4; ++s) {
      if (widths[static_cast<size_t>(s)] <= widths[static_cast<size_t>(s) - 1]) {
        throw ShapeError("EncoderSpec: stage widths must strictly increase");
      }
    }
  }
  static constexpr std::array<int, 4> strides{4, 8, 16, 32};
};

/// Toy convolutional backbone: stage 1 opens with a stride-4 stem, each later
/// stage with a stride-2 entry conv, followed by two 3x3 convs, all with
/// group-norm + GELU.
class ToyEncoder {
 public:
  ToyEncoder(const EncoderSpec& spec, Rng& rng) : spec_(spec) {
    spec_.validate();
    int cin = 3;
    for (int s = 0; s < 4; ++s) {
      const int cout = spec_.widths[static_cast<size_t>(s)];
      Stage& st = stages_[static_cast<size_t>(s)];
      st.cin = cin;
      st.cout = cout;
      st.stride = s == 0 ? 4 : 2;
      st.entry_w = glorot_conv(rng, Shape{cout, cin, 3, 3});
      st.entry_b = zero_bias(cout);
      st.c1_w = glorot_conv(rng, Shape{cout, cout, 3, 3});
      st.c1_b = zero_bias(cout);
      st.c2_w = glorot_conv(rng, Shape{cout, cout, 3, 3});
      st.c2_b = zero_bias(cout);
      norm_groups(cout);  // validate divisibility up front
      cin = cout;
    }
  }

  const EncoderSpec& spec() const { return spec_; }

  /// Output of stage s (0-based) given the previous stage's output (or the
  /// input image for s = 0).
  Tensor stage_forward(Tape* tape, int s, const Tensor& prev) const {
    const Stage& st = stages_[static_cast<size_t>(s)];
    auto act = [&](const Tensor& t) {
      return ops::gelu(tape, ops::group_norm(tape, t, norm_groups(st.cout)));
    };
    Tensor h = act(ops::conv2d(tape, prev, st.entry_w, st.entry_b, st.stride, 1, 1));
    h = act(ops::conv2d(tape, h, st.c1_w, st.c1_b, 1, 1, 1));
    return act(ops::conv2d(tape, h, st.c2_w, st.c2_b, 1, 1, 1));
  }

  void collect_params(const std::string& prefix, ParamList& out) {
    for (int s = 0; s < 4; ++s) {
      Stage& st = stages_[static_cast<size_t>(s)];
      const std::string p = join_name(prefix, "stage" + std::to_string(s + 1));
      out.push_back({join_name(p, "entry.weight"), st.entry_w});
      out.push_back({join_name(p, "entry.bias"), st.entry_b});
      out.push_back({join_name(p, "conv1.weight"), st.c1_w});
      out.push_back({join_name(p, "conv1.bias"), st.c1_b});
      out.push_back({join_name(p, "conv2.weight"), st.c2_w});
      out.push_back({join_name(p, "conv2.bias"), st.c2_b});
    }
  }

  std::int64_t param_count() const {
    std::int64_t total = 0;
    for (const auto& st : stages_) {
      total += st.entry_w.numel() + st.entry_b.numel() + st.c1_w.numel() +
               st.c1_b.numel() + st.c2_w.numel() + st.c2_b.numel();
    }
    return total;
  }

  std::int64_t flop_count(int h, int w) const {
    std::int64_t fl = 0;
    for (int s = 0; s < 4; ++s) {
      const Stage& st = stages_[static_cast<size_t>(s)];
      const int oh = h / EncoderSpec::strides[static_cast<size_t>(s)];
      const int ow = w / EncoderSpec::strides[static_cast<size_t>(s)];
      const std::int64_t px = static_cast<std::int64_t>(oh) * ow;
      fl += px * st.cout * (2 * st.cin * 9 + 1);
      fl += 2 * px * st.cout * (2 * st.cout * 9 + 1);
      fl += 3 * (6 + 8) * px * st.cout;  // norm + gelu per conv
    }
    return fl;
  }

 private:
  struct Stage {
    int cin = 0, cout = 0, stride = 1;
    Tensor entry_w, entry_b, c1_w, c1_b, c2_w, c2_b;
  };

  EncoderSpec spec_;
  std::array<Stage, 4> stages_;
};

}  // namespace mpcg::nn
