#include <catch2/catch_amalgamated.hpp>

#include "mpcg/nn/attention_blocks.hpp"
#include "mpcg/nn/cgmfe.hpp"
#include "mpcg/nn/dfa.hpp"
#include "mpcg/nn/is_block.hpp"
#include "mpcg/nn/wcad.hpp"
#include "mpcg/ops.hpp"
#include "oracles/conv_oracle.hpp"
#include "test_support.hpp"

using namespace mpcg;
using testutil::bitwise_equal;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

void saturate_gates(nn::GateSet& g, std::uint64_t seed) {
  Rng rng(seed);
  for (int j = 0; j < g.k(); ++j) {
    for (int i = 0; i < g.k(); ++i) {
      g.set_logit(j, i, rng.bernoulli(0.5) ? 12.0f : -12.0f);
    }
  }
}

}  // namespace

TEST_CASE("IS block shape and expansion arithmetic") {
  Rng rng(1);
  nn::ISBlock is(8, 4, 8, rng);
  REQUIRE(is.hidden_width() == 32);
  Tensor x = random_tensor(Shape{1, 8, 6, 6}, 2);
  Tensor y = is.forward(nullptr, x);
  REQUIRE(y.shape() == Shape{1, 8, 6, 6});
  REQUIRE_THROWS_AS(is.forward(nullptr, random_tensor(Shape{1, 4, 6, 6}, 3)),
                    ShapeError);
}

TEST_CASE("IS block maps zero input to zero output with zero biases") {
  Rng rng(4);
  nn::ISBlock is(8, 4, 16, rng);  // biases initialize to zero
  Tensor x = Tensor::zeros(Shape{1, 8, 5, 5});
  Tensor y = is.forward(nullptr, x);
  for (std::int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.data()[i] == 0.0f);
}

TEST_CASE("IS block parameter count matches the layer arithmetic") {
  Rng rng(5);
  nn::ISBlock is(8, 4, 8, rng);
  REQUIRE(is.param_count() == (8 * 32 + 32) + (9 * 32 + 32) + (32 * 8 + 8));
  REQUIRE(is.param_count() == 872);
}

TEST_CASE("IS block gradient check") {
  Rng rng(6);
  nn::ISBlock is(8, 4, 8, rng);
  Tensor x = random_tensor(Shape{1, 8, 16, 16}, 7);
  const double err = finite_diff_check(
      [&](Tape* t, const Tensor& in) { return is.forward(t, in); }, x);
  REQUIRE(err < 1e-2);
}

TEST_CASE("linear IS block is literally the three convolutions") {
  Rng rng(8);
  nn::ISBlock is(4, 4, 4, rng, /*linear=*/true);
  Tensor x = random_tensor(Shape{1, 4, 5, 5}, 9);
  // a purely linear block scales additively: f(2x) = 2 f(x) when biases are 0
  Tensor y1 = is.forward(nullptr, x);
  Tensor y2 = is.forward(nullptr, ops::scale_shift(nullptr, x, 2.0f, 0.0f));
  REQUIRE(max_abs_diff(ops::scale_shift(nullptr, y1, 2.0f, 0.0f), y2) < 1e-4);
}

TEST_CASE("CGMFE branch maps keep the input shape and fixed order") {
  Rng rng(10);
  nn::CGMFEBlock block(8, 8, 4, rng);
  Tensor x = random_tensor(Shape{2, 8, 8, 8}, 11);
  auto branches = block.branch_outputs(nullptr, x);
  REQUIRE(branches.size() == 4);
  for (const auto& b : branches) REQUIRE(b.shape() == x.shape());
  // branch 0 is maxpool: constant input gives the same constant back
  Tensor c = Tensor::full(Shape{1, 8, 6, 6}, 2.5f);
  auto cb = block.branch_outputs(nullptr, c);
  REQUIRE(bitwise_equal(cb[0], c));
}

TEST_CASE("CGMFE forward composes from its verified sub-ops") {
  Rng rng(12);
  nn::CGMFEBlock block(4, 4, 4, rng);  // gates fresh: all closed
  Tensor x = random_tensor(Shape{1, 4, 6, 6}, 13);
  // with closed gates the fused maps are exactly the raw branch maps, so the
  // block must equal IS(concat(branches))
  auto branches = block.branch_outputs(nullptr, x);
  Tensor want = block.fuse().forward(nullptr, ops::concat_channels(nullptr, branches));
  Tensor got = block.forward(nullptr, x);
  REQUIRE(bitwise_equal(got, want));
}

TEST_CASE("CGMFE closed gate isolates a perturbed branch in forward") {
  Rng rng(14);
  nn::CGMFEBlock block(4, 4, 4, rng);
  Tensor x = random_tensor(Shape{1, 4, 6, 6}, 15);
  auto branches = block.branch_outputs(nullptr, x);
  Tensor c0 = nn::gated_product(nullptr, branches, block.gates(), 0);
  branches[1] = random_tensor(Shape{1, 4, 6, 6}, 16, -9.0, 9.0);
  Tensor c0_after = nn::gated_product(nullptr, branches, block.gates(), 0);
  REQUIRE(bitwise_equal(c0, c0_after));
}

TEST_CASE("CGMFE gradient check with frozen (saturated) gates") {
  Rng rng(17);
  nn::CGMFEBlock block(8, 8, 4, rng);
  saturate_gates(block.gates(), 18);
  // the maxpool branch sees the raw input: a spread grid keeps its argmax
  // stable under the probe step
  Tensor x = testutil::spread_tensor(Shape{1, 8, 12, 12}, 19);
  FdOptions opt;
  opt.h = 5e-4;  // half of the grid's minimum pairwise gap
  REQUIRE(testutil::min_pair_gap(x) > 2 * opt.h);
  const double err = finite_diff_check(
      [&](Tape* t, const Tensor& in) { return block.forward(t, in); }, x, opt);
  REQUIRE(err < 1e-2);
}

TEST_CASE("channel attention saturated bias forces an identity map") {
  Rng rng(20);
  nn::ChannelAttention ca(16, 8, rng);
  for (int c = 0; c < 16; ++c) ca.fc2_bias().at(0, c, 0, 0) = 30.0f;
  Tensor x = random_tensor(Shape{1, 16, 5, 5}, 21);
  Tensor y = ca.forward(nullptr, x);
  REQUIRE(bitwise_equal(y, x));  // sigmoid(30) rounds to 1.0f exactly
}

TEST_CASE("channel attention favours the dominant channel") {
  // A pass-through MLP (reduction 1, identity weights, zero bias) makes the
  // attention logit equal avg_c + max_c, so a channel that dominates both
  // statistics must receive the largest weight.
  Rng rng(22);
  nn::ChannelAttention ca(8, 1, rng);
  Tensor& w1 = ca.fc1_weight();
  Tensor& w2 = ca.fc2_weight();
  for (std::int64_t i = 0; i < w1.numel(); ++i) w1.data()[i] = 0.0f;
  for (std::int64_t i = 0; i < w2.numel(); ++i) w2.data()[i] = 0.0f;
  for (int c = 0; c < 8; ++c) {
    w1.at(c, c, 0, 0) = 1.0f;
    w2.at(c, c, 0, 0) = 1.0f;
  }
  Tensor x = random_tensor(Shape{1, 8, 6, 6}, 23, 0.0, 0.2);
  for (int i = 0; i < 36; ++i) x.at(0, 3, i / 6, i % 6) = 0.5f + 0.001f * i;
  Tensor map = ca.attention_map(nullptr, x);
  for (int c = 0; c < 8; ++c) {
    if (c == 3) continue;
    REQUIRE(map.at(0, 3, 0, 0) > map.at(0, c, 0, 0));
  }
}

TEST_CASE("spatial attention map lies in (0,1) and rescales the input") {
  Rng rng(25);
  nn::SpatialAttention sa(rng);
  Tensor x = random_tensor(Shape{2, 4, 6, 6}, 26, -2.0, 2.0);
  Tensor m = sa.attention_map(nullptr, x);
  REQUIRE(m.shape() == Shape{2, 1, 6, 6});
  for (std::int64_t i = 0; i < m.numel(); ++i) {
    REQUIRE(m.data()[i] > 0.0f);
    REQUIRE(m.data()[i] < 1.0f);
  }
  Tensor y = sa.forward(nullptr, x);
  REQUIRE(y.at(0, 1, 2, 2) ==
          Catch::Approx(x.at(0, 1, 2, 2) * m.at(0, 0, 2, 2)).margin(1e-6));
}

TEST_CASE("attention blocks pass gradient checks") {
  Rng rng(27);
  nn::ChannelAttention ca(16, 8, rng);
  nn::SpatialAttention sa(rng);
  Tensor x = random_tensor(Shape{1, 16, 8, 8}, 28);
  FdOptions opt;
  opt.h = 1e-3;  // channel/spatial max inside: keep probes off tie boundaries
  const double err_ca = finite_diff_check(
      [&](Tape* t, const Tensor& in) { return ca.forward(t, in); }, x, opt);
  REQUIRE(err_ca < 1e-2);
  Tensor x2 = random_tensor(Shape{1, 8, 8, 8}, 229);  // seed clear of channel-max ties at this h
  const double err_sa = finite_diff_check(
      [&](Tape* t, const Tensor& in) { return sa.forward(t, in); }, x2, opt);
  REQUIRE(err_sa < 1e-2);
}

TEST_CASE("windowed attention with constant K,V returns that constant") {
  Tensor q = random_tensor(Shape{1, 4, 8, 8}, 30);
  Tensor k = Tensor::full(Shape{1, 4, 8, 8}, 0.3f);
  Tensor v(Shape{1, 4, 8, 8});
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < 64; ++i) v.at(0, c, i / 8, i % 8) = 0.1f * c;
  }
  Tensor y = nn::windowed_cross_attention(nullptr, q, k, v, 4, 2);
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < 64; ++i) {
      REQUIRE(y.at(0, c, i / 8, i % 8) == Catch::Approx(0.1f * c).margin(1e-6));
    }
  }
}

TEST_CASE("windowed attention matches the nested-loop reference") {
  struct Case {
    Shape s;
    int win, heads;
  };
  const Case cases[] = {
      {Shape{1, 4, 8, 8}, 4, 2},  {Shape{2, 8, 6, 6}, 4, 4},
      {Shape{1, 6, 5, 7}, 4, 2},  {Shape{1, 8, 12, 12}, 4, 4},
      {Shape{2, 4, 9, 5}, 2, 2},
  };
  int seed = 900;
  for (const auto& c : cases) {
    Tensor q = random_tensor(c.s, seed++);
    Tensor k = random_tensor(c.s, seed++);
    Tensor v = random_tensor(c.s, seed++);
    Tensor got = nn::windowed_cross_attention(nullptr, q, k, v, c.win, c.heads);
    Tensor want = oracle::window_attention_ref(q, k, v, c.win, c.heads);
    REQUIRE(max_abs_diff(got, want) < 1e-5);
  }
}

TEST_CASE("WCAD degenerate 1x1 window with one head reduces to IS(shallow+V)") {
  Rng rng(31);
  nn::WCADBlock block(4, 8, 4, /*window=*/1, /*heads=*/1, 4, rng);
  Tensor shallow = random_tensor(Shape{1, 4, 6, 6}, 32);
  Tensor deep = random_tensor(Shape{1, 8, 3, 3}, 33);
  Tensor got = block.forward(nullptr, shallow, deep);
  // softmax over a single element is 1, so attention output is V exactly
  Tensor aligned = ops::pointwise_conv(
      nullptr, ops::bilinear_upsample(nullptr, deep, 2), block.align_weight(),
      block.align_bias());
  Tensor v = ops::pointwise_conv(nullptr, aligned, block.value_weight());
  Tensor want = block.ffn().forward(nullptr, ops::add(nullptr, shallow, v));
  REQUIRE(max_abs_diff(got, want) < 1e-6);
}

TEST_CASE("WCAD rejects a non-factor-2 resolution relation") {
  Rng rng(34);
  nn::WCADBlock block(4, 8, 4, 4, 2, 4, rng);
  Tensor shallow = random_tensor(Shape{1, 4, 6, 6}, 35);
  REQUIRE_THROWS_AS(
      block.forward(nullptr, shallow, random_tensor(Shape{1, 8, 2, 2}, 36)),
      ShapeError);
  REQUIRE_THROWS_AS(
      block.forward(nullptr, shallow, random_tensor(Shape{1, 8, 6, 6}, 37)),
      ShapeError);
}

TEST_CASE("WCAD gradient check at the contract shapes") {
  Rng rng(38);
  nn::WCADBlock block(16, 32, 16, 4, 4, 4, rng);
  Tensor shallow = random_tensor(Shape{1, 16, 16, 16}, 39);
  Tensor deep = random_tensor(Shape{1, 32, 8, 8}, 40);
  const double err = finite_diff_check(
      [&](Tape* t, const Tensor& in) { return block.forward(t, in, deep); },
      shallow);
  REQUIRE(err < 1e-2);
  const double err_deep = finite_diff_check(
      [&](Tape* t, const Tensor& in) { return block.forward(t, shallow, in); },
      deep);
  REQUIRE(err_deep < 1e-2);
}

TEST_CASE("WCAD batch permutation equivariance") {
  Rng rng(41);
  nn::WCADBlock block(8, 8, 8, 4, 2, 4, rng);
  Tensor shallow = random_tensor(Shape{2, 8, 8, 8}, 42);
  Tensor deep = random_tensor(Shape{2, 8, 4, 4}, 43);
  Tensor y = block.forward(nullptr, shallow, deep);

  auto swap_batch = [](const Tensor& t) {
    Tensor s(t.shape());
    const std::int64_t item = t.numel() / t.n();
    for (std::int64_t i = 0; i < item; ++i) {
      s.data()[i] = t.data()[item + i];
      s.data()[item + i] = t.data()[i];
    }
    return s;
  };
  Tensor y_swapped =
      block.forward(nullptr, swap_batch(shallow), swap_batch(deep));
  REQUIRE(bitwise_equal(y_swapped, swap_batch(y)));
}

TEST_CASE("DFA with closed gates doubles each branch through the skip") {
  Rng rng(44);
  nn::DFABlock block({8, 4}, 4, 4, 4, 4, rng);
  std::vector<Tensor> inputs = {random_tensor(Shape{1, 8, 6, 6}, 45),
                                random_tensor(Shape{1, 4, 6, 6}, 46)};
  auto branch = block.branch_outputs(nullptr, inputs);
  REQUIRE(branch.size() == 3);
  for (const auto& b : branch) REQUIRE(b.shape() == Shape{1, 4, 6, 6});
  // closed gates: gated product degenerates to the branch, plus skip = 2x
  std::vector<Tensor> doubled;
  for (const auto& b : branch) {
    doubled.push_back(ops::scale_shift(nullptr, b, 2.0f, 0.0f));
  }
  Tensor want =
      block.fuse().forward(nullptr, ops::concat_channels(nullptr, doubled));
  Tensor got = block.forward(nullptr, inputs);
  REQUIRE(testutil::max_abs_diff(got, want) < 1e-6);
}

TEST_CASE("DFA mismatched input resolutions are the caller's bug") {
  Rng rng(47);
  nn::DFABlock block({8, 4}, 4, 4, 4, 4, rng);
  std::vector<Tensor> inputs = {random_tensor(Shape{1, 8, 6, 6}, 48),
                                random_tensor(Shape{1, 4, 3, 3}, 49)};
  REQUIRE_THROWS_AS(block.forward(nullptr, inputs), ShapeError);
}

TEST_CASE("DFA identical inputs aggregate through a plain pointwise map") {
  Rng rng(50);
  nn::DFABlock block({4, 4}, 4, 4, 4, 4, rng);
  Tensor l = random_tensor(Shape{1, 4, 6, 6}, 51);
  std::vector<Tensor> inputs = {l, l};
  auto branch = block.branch_outputs(nullptr, inputs);
  // D_in = PWC(concat(L, L)) verified against direct computation
  std::vector<Tensor> fused;
  for (const auto& b : branch) {
    fused.push_back(ops::scale_shift(nullptr, b, 2.0f, 0.0f));
  }
  Tensor want =
      block.fuse().forward(nullptr, ops::concat_channels(nullptr, fused));
  Tensor got = block.forward(nullptr, inputs);
  REQUIRE(testutil::max_abs_diff(got, want) < 1e-6);
}

TEST_CASE("DFA gradient check with saturated gates, logits get gradient") {
  Rng rng(52);
  nn::DFABlock block({16, 8, 8}, 8, 8, 8, 4, rng);
  saturate_gates(block.gates(), 53);
  std::vector<Tensor> fixed = {random_tensor(Shape{1, 8, 16, 16}, 55),
                               random_tensor(Shape{1, 8, 16, 16}, 56)};
  Tensor x = random_tensor(Shape{1, 16, 16, 16}, 54);
  FdOptions opt;
  opt.h = 1e-3;  // channel/spatial max selections inside the branches
  const double err = finite_diff_check(
      [&](Tape* t, const Tensor& in) {
        return block.forward(t, {in, fixed[0], fixed[1]});
      },
      x, opt);
  REQUIRE(err < 1e-2);

  // gate logits receive nonzero gradient on a generic batch (fresh gates)
  Rng rng2(57);
  nn::DFABlock fresh({16, 8, 8}, 8, 8, 8, 4, rng2);
  Tape tape;
  Tensor y = fresh.forward(&tape, {x, fixed[0], fixed[1]});
  Tensor loss = ops::sum_all(&tape, y);
  backward(tape, loss);
  bool any = false;
  for (float v : fresh.gates().logits().grad_vec()) any = any || v != 0.0f;
  REQUIRE(any);
}

TEST_CASE("blocks process batch items independently") {
  Rng rng(58);
  nn::CGMFEBlock block(8, 8, 4, rng);
  Tensor a = random_tensor(Shape{1, 8, 8, 8}, 59);
  Tensor b = random_tensor(Shape{1, 8, 8, 8}, 60);
  Tensor batch(Shape{2, 8, 8, 8});
  std::copy(a.data(), a.data() + a.numel(), batch.data());
  std::copy(b.data(), b.data() + b.numel(), batch.data() + a.numel());
  Tensor y_batch = block.forward(nullptr, batch);
  Tensor ya = block.forward(nullptr, a);
  Tensor yb = block.forward(nullptr, b);
  for (std::int64_t i = 0; i < ya.numel(); ++i) {
    REQUIRE(std::abs(y_batch.data()[i] - ya.data()[i]) < 1e-5);
    REQUIRE(std::abs(y_batch.data()[ya.numel() + i] - yb.data()[i]) < 1e-5);
  }
}
