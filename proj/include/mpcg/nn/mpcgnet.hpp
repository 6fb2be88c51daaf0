#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mpcg/core/rng.hpp"
#include "mpcg/nn/cgmfe.hpp"
#include "mpcg/nn/dfa.hpp"
#include "mpcg/nn/encoder.hpp"
#include "mpcg/nn/wcad.hpp"
#include "mpcg/ops.hpp"

namespace mpcg::nn {

/// Module-removal switches. Each bypass preserves tensor shapes so the rest
/// of the graph is untouched:
///   no_cgmfe: CGMFE -> pointwise projection of the (interacted) encoder map
///   no_wcad:  WCAD  -> upsample + concat + pointwise
///   no_dfa:   DFA   -> pointwise over the concatenated inputs
///   no_gates: every gate forced open, no logit parameters
struct Ablation {
  bool no_cgmfe = false;
  bool no_wcad = false;
  bool no_dfa = false;
  bool no_gates = false;
};

struct NetConfig {
  EncoderSpec encoder{};
  int decoder_width = 32;
  int expansion = 4;
  int window = 4;
  int heads = 4;
  int ca_reduction = 8;
  bool linear_is = false;
  Ablation ablation{};
};

/// Per-stage / per-decoder-position feature bundle from one forward pass.
struct StageFeatures {
  std::array<Tensor, 4> enc;    // enc_1..enc_4
  std::array<Tensor, 4> cgmfe;  // cgmfe_1..cgmfe_4
  std::array<Tensor, 3> wcad;   // wcad_3, wcad_2, wcad_1 (deep to shallow)
  std::array<Tensor, 3> dfa;    // dfa_1 (deepest) .. dfa_3 (top)
};

/// The full coupling-gated segmentation network: 4-stage encoder, per-stage
/// CGMFE with inter-stage multiplicative interaction, 3 WCAD decoders,
/// 3 progressive DFA aggregators, and 4 deep-supervision heads.
class MPCGNet {
 public:
  MPCGNet(const NetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.encoder.validate();
    Rng rng(mix_seed(seed, 0x6de7));
    const auto& cw = cfg_.encoder.widths;
    const int dec = cfg_.decoder_width;
    const bool gates = !cfg_.ablation.no_gates;

    encoder_ = std::make_unique<ToyEncoder>(cfg_.encoder, rng);

    for (int s = 0; s < 4; ++s) {
      const int c = cw[static_cast<size_t>(s)];
      if (cfg_.ablation.no_cgmfe) {
        cgmfe_bypass_w_[static_cast<size_t>(s)] = glorot_conv(rng, Shape{c, c, 1, 1});
        cgmfe_bypass_b_[static_cast<size_t>(s)] = zero_bias(c);
      } else {
        cgmfe_[static_cast<size_t>(s)] = std::make_unique<CGMFEBlock>(
            c, c, cfg_.expansion, rng, gates, cfg_.linear_is);
      }
    }

    // interaction projections between stage s-1's CGMFE and stage s's encoder
    for (int s = 1; s < 4; ++s) {
      const int cin = cw[static_cast<size_t>(s) - 1];
      const int cout = cw[static_cast<size_t>(s)];
      inter_pw_w_[static_cast<size_t>(s) - 1] = glorot_conv(rng, Shape{cout, cin, 1, 1});
      inter_pw_b_[static_cast<size_t>(s) - 1] = zero_bias(cout);
      inter_dw_w_[static_cast<size_t>(s) - 1] = glorot_conv(rng, Shape{cout, 1, 3, 3});
    }

    // decoder: wcad_3 (stage3 queries, stage4 kv), then 2, then 1
    const std::array<int, 3> shallow_c = {cw[2], cw[1], cw[0]};
    const std::array<int, 3> deep_c = {cw[3], dec, dec};
    for (int k = 0; k < 3; ++k) {
      if (cfg_.ablation.no_wcad) {
        wcad_bypass_w_[static_cast<size_t>(k)] = glorot_conv(
            rng, Shape{dec, shallow_c[static_cast<size_t>(k)] +
                                deep_c[static_cast<size_t>(k)], 1, 1});
        wcad_bypass_b_[static_cast<size_t>(k)] = zero_bias(dec);
      } else {
        wcad_[static_cast<size_t>(k)] = std::make_unique<WCADBlock>(
            shallow_c[static_cast<size_t>(k)], deep_c[static_cast<size_t>(k)],
            dec, cfg_.window, cfg_.heads, cfg_.expansion, rng, cfg_.linear_is);
      }
    }

    for (int i = 0; i < 3; ++i) {
      std::vector<int> in_ch = {cw[3]};
      for (int j = 0; j <= i; ++j) in_ch.push_back(dec);
      if (cfg_.ablation.no_dfa) {
        int total = 0;
        for (int c : in_ch) total += c;
        dfa_bypass_w_[static_cast<size_t>(i)] = glorot_conv(rng, Shape{dec, total, 1, 1});
        dfa_bypass_b_[static_cast<size_t>(i)] = zero_bias(dec);
      } else {
        dfa_[static_cast<size_t>(i)] = std::make_unique<DFABlock>(
            in_ch, dec, dec, cfg_.ca_reduction, cfg_.expansion, rng, gates,
            cfg_.linear_is);
      }
    }

    head_c4_w_ = glorot_conv(rng, Shape{1, cw[3], 1, 1});
    head_c4_b_ = zero_bias(1);
    for (int i = 0; i < 3; ++i) {
      head_dfa_w_[static_cast<size_t>(i)] = glorot_conv(rng, Shape{1, dec, 1, 1});
      head_dfa_b_[static_cast<size_t>(i)] = zero_bias(1);
    }

    build_param_list();
  }

  const NetConfig& config() const { return cfg_; }
  ToyEncoder& encoder() { return *encoder_; }

  /// enc_s (x) proj(cgmfe_{s-1}) + enc_s, where proj is a pointwise channel
  /// alignment followed by a stride-2 depthwise downsampling. `s` is the
  /// 1-based stage index of enc (2..4).
  Tensor encoder_interaction(Tape* tape, int s, const Tensor& enc,
                             const Tensor& cgmfe_prev) const {
    if (s < 2 || s > 4) {
      throw ShapeError("encoder_interaction: stage must be in 2..4");
    }
    if (cgmfe_prev.h() != 2 * enc.h() || cgmfe_prev.w() != 2 * enc.w()) {
      throw ShapeError(
          "encoder_interaction: previous-stage map " + cgmfe_prev.shape().str() +
          " must be exactly twice the resolution of the encoder map " +
          enc.shape().str());
    }
    const size_t k = static_cast<size_t>(s) - 2;
    Tensor proj = ops::pointwise_conv(tape, cgmfe_prev, inter_pw_w_[k], inter_pw_b_[k]);
    proj = ops::depthwise_conv2d(tape, proj, inter_dw_w_[k], /*stride=*/2);
    return ops::add(tape, ops::mul(tape, enc, proj), enc);
  }

  /// Full forward pass. In training mode returns 4 full-resolution logit
  /// maps [head(cgmfe_4), head(dfa_1), head(dfa_2), head(dfa_3)]; in
  /// inference mode only the top DFA head. `features`, when non-null,
  /// receives the intermediate maps.
  std::vector<Tensor> forward(Tape* tape, const Tensor& image, bool train_mode,
                              StageFeatures* features = nullptr) {
    if (image.c() != 3) {
      throw ShapeError("MPCGNet: input must have 3 channels, got " +
                       image.shape().str());
    }
    if (image.h() % 32 != 0 || image.w() % 32 != 0) {
      throw ShapeError("MPCGNet: input extent " + image.shape().str() +
                       " must be divisible by 32");
    }
    const int H = image.h(), W = image.w();

    std::array<Tensor, 4> enc, cg;
    Tensor prev = image;
    for (int s = 0; s < 4; ++s) {
      enc[static_cast<size_t>(s)] = encoder_->stage_forward(tape, s, prev);
      prev = enc[static_cast<size_t>(s)];
      Tensor cg_in = s == 0 ? enc[0]
                            : encoder_interaction(tape, s + 1,
                                                  enc[static_cast<size_t>(s)],
                                                  cg[static_cast<size_t>(s) - 1]);
      cg[static_cast<size_t>(s)] = cgmfe_forward(tape, s, cg_in);
      // resolution ladder: stage s+1 sits at input / 2^(s+2)
      const int want_h = H >> (s + 2), want_w = W >> (s + 2);
      if (cg[static_cast<size_t>(s)].h() != want_h ||
          cg[static_cast<size_t>(s)].w() != want_w) {
        throw ShapeError("MPCGNet: stage " + std::to_string(s + 1) +
                         " resolution " + cg[static_cast<size_t>(s)].shape().str() +
                         " violates the expected ladder");
      }
    }

    Tensor w3 = wcad_forward(tape, 0, cg[2], cg[3]);
    Tensor d1 = dfa_forward(tape, 0,
                            {ops::bilinear_upsample(tape, cg[3], 2), w3});
    Tensor w2 = wcad_forward(tape, 1, cg[1], d1);
    Tensor d2 = dfa_forward(tape, 1,
                            {ops::bilinear_upsample(tape, cg[3], 4),
                             ops::bilinear_upsample(tape, w3, 2), w2});
    Tensor w1 = wcad_forward(tape, 2, cg[0], d2);
    Tensor d3 = dfa_forward(tape, 2,
                            {ops::bilinear_upsample(tape, cg[3], 8),
                             ops::bilinear_upsample(tape, w3, 4),
                             ops::bilinear_upsample(tape, w2, 2), w1});

    if (features != nullptr) {
      features->enc = enc;
      features->cgmfe = cg;
      features->wcad = {w3, w2, w1};
      features->dfa = {d1, d2, d3};
    }

    auto head = [&](const Tensor& src, const Tensor& hw, const Tensor& hb,
                    int factor) {
      Tensor logits = ops::pointwise_conv(tape, src, hw, hb);
      return ops::bilinear_upsample(tape, logits, factor);
    };

    std::vector<Tensor> out;
    if (train_mode) {
      out.push_back(head(cg[3], head_c4_w_, head_c4_b_, 32));
      out.push_back(head(d1, head_dfa_w_[0], head_dfa_b_[0], 16));
      out.push_back(head(d2, head_dfa_w_[1], head_dfa_b_[1], 8));
    }
    out.push_back(head(d3, head_dfa_w_[2], head_dfa_b_[2], 4));
    return out;
  }

  ParamList& params() { return params_; }

  void zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  /// Registry-walk parameter count.
  std::int64_t param_count() const { return nn::count_params(params_); }

  /// Structural parameter count, independent of the registry walk.
  std::int64_t param_count_structural() const {
    std::int64_t total = encoder_->param_count();
    for (int s = 0; s < 4; ++s) {
      total += cgmfe_[static_cast<size_t>(s)]
                   ? cgmfe_[static_cast<size_t>(s)]->param_count()
                   : cgmfe_bypass_w_[static_cast<size_t>(s)].numel() +
                         cgmfe_bypass_b_[static_cast<size_t>(s)].numel();
    }
    for (int k = 0; k < 3; ++k) {
      total += inter_pw_w_[static_cast<size_t>(k)].numel() +
               inter_pw_b_[static_cast<size_t>(k)].numel() +
               inter_dw_w_[static_cast<size_t>(k)].numel();
      total += wcad_[static_cast<size_t>(k)]
                   ? wcad_[static_cast<size_t>(k)]->param_count()
                   : wcad_bypass_w_[static_cast<size_t>(k)].numel() +
                         wcad_bypass_b_[static_cast<size_t>(k)].numel();
      total += dfa_[static_cast<size_t>(k)]
                   ? dfa_[static_cast<size_t>(k)]->param_count()
                   : dfa_bypass_w_[static_cast<size_t>(k)].numel() +
                         dfa_bypass_b_[static_cast<size_t>(k)].numel();
    }
    total += head_c4_w_.numel() + head_c4_b_.numel();
    for (int i = 0; i < 3; ++i) {
      total += head_dfa_w_[static_cast<size_t>(i)].numel() +
               head_dfa_b_[static_cast<size_t>(i)].numel();
    }
    return total;
  }

  /// Analytic forward cost for one (1,3,H,W) image; MAC = 2 FLOPs, attention
  /// counted as two batched matmuls plus softmax.
  std::int64_t flop_count(int H, int W) const {
    const auto& cw = cfg_.encoder.widths;
    const int dec = cfg_.decoder_width;
    std::int64_t fl = encoder_->flop_count(H, W);
    const std::array<int, 4> sh = {H / 4, H / 8, H / 16, H / 32};
    const std::array<int, 4> sw = {W / 4, W / 8, W / 16, W / 32};
    for (int s = 0; s < 4; ++s) {
      const std::int64_t px = static_cast<std::int64_t>(sh[static_cast<size_t>(s)]) *
                              sw[static_cast<size_t>(s)];
      const int c = cw[static_cast<size_t>(s)];
      if (cgmfe_[static_cast<size_t>(s)]) {
        fl += cgmfe_[static_cast<size_t>(s)]->flop_count(
            sh[static_cast<size_t>(s)], sw[static_cast<size_t>(s)]);
      } else {
        fl += px * c * (2 * c + 1);
      }
      if (s > 0) {
        const int cp = cw[static_cast<size_t>(s) - 1];
        fl += 4 * px * c * (2 * cp + 1);  // pointwise at the previous resolution
        fl += px * c * (2 * 9 + 0);       // stride-2 depthwise
        fl += 2 * px * c;                 // mul + add
      }
    }
    const std::array<int, 3> wh = {sh[2], sh[1], sh[0]};
    const std::array<int, 3> ww = {sw[2], sw[1], sw[0]};
    const std::array<int, 3> shallow_c = {cw[2], cw[1], cw[0]};
    const std::array<int, 3> deep_c = {cw[3], dec, dec};
    for (int k = 0; k < 3; ++k) {
      const std::int64_t px = static_cast<std::int64_t>(wh[static_cast<size_t>(k)]) *
                              ww[static_cast<size_t>(k)];
      if (wcad_[static_cast<size_t>(k)]) {
        fl += wcad_[static_cast<size_t>(k)]->flop_count(
            wh[static_cast<size_t>(k)], ww[static_cast<size_t>(k)]);
      } else {
        fl += 8 * (px / 4) * deep_c[static_cast<size_t>(k)] * 4;  // upsample
        fl += px * dec * (2 * (shallow_c[static_cast<size_t>(k)] +
                               deep_c[static_cast<size_t>(k)]) + 1);
      }
      // dfa_k runs at the same resolution as wcad_k
      std::int64_t in_total = cw[3];
      fl += 8 * px * cw[3];  // upsample of cgmfe_4 (counted once per level)
      for (int j = 0; j < k; ++j) {
        fl += 8 * px * dec;
        in_total += dec;
      }
      in_total += dec;
      if (dfa_[static_cast<size_t>(k)]) {
        fl += dfa_[static_cast<size_t>(k)]->flop_count(
            wh[static_cast<size_t>(k)], ww[static_cast<size_t>(k)]);
      } else {
        fl += px * dec * (2 * in_total + 1);
      }
    }
    // heads: pointwise to 1 channel + bilinear upsample to full resolution
    const std::int64_t full = static_cast<std::int64_t>(H) * W;
    fl += (static_cast<std::int64_t>(sh[3]) * sw[3]) * (2 * cw[3] + 1) + 8 * full;
    for (int i = 0; i < 3; ++i) {
      fl += (static_cast<std::int64_t>(wh[static_cast<size_t>(i)]) *
             ww[static_cast<size_t>(i)]) * (2 * dec + 1) + 8 * full;
    }
    return fl;
  }

  /// Gate bitstrings for logging: 4 CGMFE sites (16 bits) then 3 DFA sites
  /// (9 bits). Bypassed modules report "-", the no-gates ablation all-ones.
  std::vector<std::string> gate_bits() const {
    std::vector<std::string> out;
    for (int s = 0; s < 4; ++s) {
      if (cfg_.ablation.no_cgmfe) {
        out.emplace_back("-");
      } else if (cfg_.ablation.no_gates) {
        out.emplace_back(16, '1');
      } else {
        out.push_back(cgmfe_[static_cast<size_t>(s)]->gates().bits());
      }
    }
    for (int i = 0; i < 3; ++i) {
      if (cfg_.ablation.no_dfa) {
        out.emplace_back("-");
      } else if (cfg_.ablation.no_gates) {
        out.emplace_back(9, '1');
      } else {
        out.push_back(dfa_[static_cast<size_t>(i)]->gates().bits());
      }
    }
    return out;
  }

  CGMFEBlock& cgmfe_block(int s) { return *cgmfe_[static_cast<size_t>(s)]; }
  DFABlock& dfa_block(int i) { return *dfa_[static_cast<size_t>(i)]; }
  WCADBlock& wcad_block(int k) { return *wcad_[static_cast<size_t>(k)]; }

 private:
  Tensor cgmfe_forward(Tape* tape, int s, const Tensor& x) {
    if (cgmfe_[static_cast<size_t>(s)]) {
      return cgmfe_[static_cast<size_t>(s)]->forward(tape, x);
    }
    return ops::pointwise_conv(tape, x, cgmfe_bypass_w_[static_cast<size_t>(s)],
                               cgmfe_bypass_b_[static_cast<size_t>(s)]);
  }

  Tensor wcad_forward(Tape* tape, int k, const Tensor& shallow,
                      const Tensor& deep) {
    if (wcad_[static_cast<size_t>(k)]) {
      return wcad_[static_cast<size_t>(k)]->forward(tape, shallow, deep);
    }
    Tensor up = ops::bilinear_upsample(tape, deep, 2);
    Tensor cat = ops::concat_channels(tape, {shallow, up});
    return ops::pointwise_conv(tape, cat, wcad_bypass_w_[static_cast<size_t>(k)],
                               wcad_bypass_b_[static_cast<size_t>(k)]);
  }

  Tensor dfa_forward(Tape* tape, int i, const std::vector<Tensor>& inputs) {
    if (dfa_[static_cast<size_t>(i)]) {
      return dfa_[static_cast<size_t>(i)]->forward(tape, inputs);
    }
    Tensor cat = ops::concat_channels(tape, inputs);
    return ops::pointwise_conv(tape, cat, dfa_bypass_w_[static_cast<size_t>(i)],
                               dfa_bypass_b_[static_cast<size_t>(i)]);
  }

  void build_param_list() {
    params_.clear();
    encoder_->collect_params("encoder", params_);
    for (int s = 0; s < 4; ++s) {
      const std::string p = "cgmfe" + std::to_string(s + 1);
      if (cgmfe_[static_cast<size_t>(s)]) {
        cgmfe_[static_cast<size_t>(s)]->collect_params(p, params_);
      } else {
        params_.push_back({p + ".bypass.weight", cgmfe_bypass_w_[static_cast<size_t>(s)]});
        params_.push_back({p + ".bypass.bias", cgmfe_bypass_b_[static_cast<size_t>(s)]});
      }
    }
    for (int s = 2; s <= 4; ++s) {
      const std::string p = "interaction" + std::to_string(s);
      const size_t k = static_cast<size_t>(s) - 2;
      params_.push_back({p + ".pw.weight", inter_pw_w_[k]});
      params_.push_back({p + ".pw.bias", inter_pw_b_[k]});
      params_.push_back({p + ".dw.weight", inter_dw_w_[k]});
    }
    const std::array<int, 3> wcad_ids = {3, 2, 1};
    for (int k = 0; k < 3; ++k) {
      const std::string p = "wcad" + std::to_string(wcad_ids[static_cast<size_t>(k)]);
      if (wcad_[static_cast<size_t>(k)]) {
        wcad_[static_cast<size_t>(k)]->collect_params(p, params_);
      } else {
        params_.push_back({p + ".bypass.weight", wcad_bypass_w_[static_cast<size_t>(k)]});
        params_.push_back({p + ".bypass.bias", wcad_bypass_b_[static_cast<size_t>(k)]});
      }
    }
    for (int i = 0; i < 3; ++i) {
      const std::string p = "dfa" + std::to_string(i + 1);
      if (dfa_[static_cast<size_t>(i)]) {
        dfa_[static_cast<size_t>(i)]->collect_params(p, params_);
      } else {
        params_.push_back({p + ".bypass.weight", dfa_bypass_w_[static_cast<size_t>(i)]});
        params_.push_back({p + ".bypass.bias", dfa_bypass_b_[static_cast<size_t>(i)]});
      }
    }
    params_.push_back({"head_cgmfe4.weight", head_c4_w_});
    params_.push_back({"head_cgmfe4.bias", head_c4_b_});
    for (int i = 0; i < 3; ++i) {
      const std::string p = "head_dfa" + std::to_string(i + 1);
      params_.push_back({p + ".weight", head_dfa_w_[static_cast<size_t>(i)]});
      params_.push_back({p + ".bias", head_dfa_b_[static_cast<size_t>(i)]});
    }
  }

  NetConfig cfg_;
  std::unique_ptr<ToyEncoder> encoder_;
  std::array<std::unique_ptr<CGMFEBlock>, 4> cgmfe_;
  std::array<Tensor, 4> cgmfe_bypass_w_, cgmfe_bypass_b_;
  std::array<Tensor, 3> inter_pw_w_, inter_pw_b_, inter_dw_w_;
  std::array<std::unique_ptr<WCADBlock>, 3> wcad_;
  std::array<Tensor, 3> wcad_bypass_w_, wcad_bypass_b_;
  std::array<std::unique_ptr<DFABlock>, 3> dfa_;
  std::array<Tensor, 3> dfa_bypass_w_, dfa_bypass_b_;
  Tensor head_c4_w_, head_c4_b_;
  std::array<Tensor, 3> head_dfa_w_, head_dfa_b_;
  ParamList params_;
};

}  // namespace mpcg::nn
