#pragma once

#include <string>
#include <vector>

#include "mpcg/nn/mpcgnet.hpp"
#include "mpcg/ops.hpp"

namespace mpcg::nn {

struct GradcheckResult {
  std::string module;
  double err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

namespace detail {

/// Shuffled arithmetic grid over [lo, hi]: guarantees a minimum pairwise gap
/// of (hi-lo)/numel so max-selection argmaxes stay put under probe steps.
inline Tensor spread_input(Shape s, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  Tensor t(s);
  const std::int64_t n = t.numel();
  std::vector<std::int64_t> perm(static_cast<size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
  for (std::int64_t i = n - 1; i > 0; --i) {
    const std::int64_t j = rng.uniform_int(0, static_cast<int>(i));
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
  }
  for (std::int64_t i = 0; i < n; ++i) {
    t.data()[i] = static_cast<float>(
        lo + (hi - lo) *
                 (static_cast<double>(perm[static_cast<size_t>(i)]) + 0.5) /
                 static_cast<double>(n));
  }
  return t;
}

inline Tensor uniform_input(Shape s, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  Tensor t(s);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    t.data()[i] = static_cast<float>(rng.uniform(lo, hi));
  }
  return t;
}

/// Saturated random gate pattern (+-12) so the straight-through backward
/// coincides with the hard forward to ~6e-6 and admits finite differencing.
inline void saturate(GateSet& g, std::uint64_t seed) {
  Rng rng(seed);
  for (int j = 0; j < g.k(); ++j) {
    for (int i = 0; i < g.k(); ++i) {
      g.set_logit(j, i, rng.bernoulli(0.5) ? 12.0f : -12.0f);
    }
  }
}

}  // namespace detail

inline std::vector<std::string> gradcheck_module_names() {
  return {"is",    "cgmfe", "wcad", "dfa",
          "chatt", "spatt", "encoder-interaction", "net"};
}

/// Finite-difference check of one named module at a seeded configuration.
/// Tolerance is 1e-2 per block and 2e-2 for the full reduced-width network.
inline GradcheckResult gradcheck_module(const std::string& name,
                                        std::uint64_t seed) {
  GradcheckResult result;
  result.module = name;
  result.tol = name == "net" ? 2e-2 : 1e-2;
  Rng rng(mix_seed(seed, 0x6c0de));
  FdOptions opt;
  opt.seed = mix_seed(seed, 0xd135);

  if (name == "is") {
    ISBlock block(8, 4, 8, rng);
    Tensor x = detail::uniform_input(Shape{1, 8, 16, 16}, seed + 1, -1.2, 1.2);
    result.err = finite_diff_check(
        [&](Tape* t, const Tensor& in) { return block.forward(t, in); }, x, opt);
  } else if (name == "cgmfe") {
    CGMFEBlock block(8, 8, 4, rng);
    detail::saturate(block.gates(), seed + 2);
    Tensor x = detail::spread_input(Shape{1, 8, 12, 12}, seed + 1, -1.2, 1.2);
    opt.h = 5e-4;  // below half the spread-grid gap: maxpool argmax is stable
    result.err = finite_diff_check(
        [&](Tape* t, const Tensor& in) { return block.forward(t, in); }, x, opt);
  } else if (name == "wcad") {
    WCADBlock block(16, 32, 16, 4, 4, 4, rng);
    Tensor shallow = detail::uniform_input(Shape{1, 16, 16, 16}, seed + 1, -1.2, 1.2);
    Tensor deep = detail::uniform_input(Shape{1, 32, 8, 8}, seed + 3, -1.2, 1.2);
    result.err = finite_diff_check(
        [&](Tape* t, const Tensor& in) { return block.forward(t, in, deep); },
        shallow, opt);
  } else if (name == "dfa") {
    DFABlock block({16, 8, 8}, 8, 8, 8, 4, rng);
    detail::saturate(block.gates(), seed + 2);
    Tensor x = detail::uniform_input(Shape{1, 16, 16, 16}, seed + 1, -1.2, 1.2);
    Tensor l2 = detail::uniform_input(Shape{1, 8, 16, 16}, seed + 3, -1.2, 1.2);
    Tensor l3 = detail::uniform_input(Shape{1, 8, 16, 16}, seed + 4, -1.2, 1.2);
    opt.h = 1e-3;  // channel/spatial max selections inside the branches
    result.err = finite_diff_check(
        [&](Tape* t, const Tensor& in) { return block.forward(t, {in, l2, l3}); },
        x, opt);
  } else if (name == "chatt") {
    ChannelAttention block(16, 8, rng);
    Tensor x = detail::spread_input(Shape{1, 16, 8, 8}, seed + 1, -1.2, 1.2);
    opt.h = 5e-4;
    result.err = finite_diff_check(
        [&](Tape* t, const Tensor& in) { return block.forward(t, in); }, x, opt);
  } else if (name == "spatt") {
    SpatialAttention block(rng);
    Tensor x = detail::spread_input(Shape{1, 8, 8, 8}, seed + 1, -1.2, 1.2);
    opt.h = 5e-4;
    result.err = finite_diff_check(
        [&](Tape* t, const Tensor& in) { return block.forward(t, in); }, x, opt);
  } else if (name == "encoder-interaction") {
    NetConfig cfg;
    cfg.encoder.widths = {8, 16, 24, 32};
    cfg.decoder_width = 8;
    MPCGNet net(cfg, mix_seed(seed, 0xe0));
    Tensor enc = detail::uniform_input(Shape{1, 16, 8, 8}, seed + 1, -1.2, 1.2);
    Tensor prev = detail::uniform_input(Shape{1, 8, 16, 16}, seed + 3, -1.2, 1.2);
    opt.h = 1e-3;
    result.err = finite_diff_check(
        [&](Tape* t, const Tensor& in) {
          return net.encoder_interaction(t, 2, in, prev);
        },
        enc, opt);
  } else if (name == "net") {
    NetConfig cfg;
    cfg.encoder.widths = {8, 16, 24, 32};
    cfg.decoder_width = 8;
    MPCGNet net(cfg, 13);
    Rng gr(mix_seed(seed, 0x9a7e));
    for (int s = 0; s < 4; ++s) {
      detail::saturate(net.cgmfe_block(s).gates(), gr.next_u64());
    }
    for (int d = 0; d < 3; ++d) {
      detail::saturate(net.dfa_block(d).gates(), gr.next_u64());
    }
    Tensor img = detail::spread_input(Shape{1, 3, 32, 32}, seed + 1, 0.05, 0.95);
    opt.h = 2e-4;
    opt.directions = 6;
    result.err = finite_diff_check(
        [&](Tape* t, const Tensor& in) {
          auto heads = net.forward(t, in, true);
          return ops::concat_channels(t, heads);
        },
        img, opt);
  } else {
    throw UsageError("gradcheck: unknown module '" + name + "'");
  }
  result.pass = result.err < result.tol;
  return result;
}

}  // namespace mpcg::nn
