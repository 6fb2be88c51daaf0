#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <fstream>

#include "mpcg/nn/checkpoint.hpp"
#include "mpcg/nn/mpcgnet.hpp"
#include "mpcg/ops.hpp"
#include "test_support.hpp"

using namespace mpcg;
using nn::Ablation;
using nn::MPCGNet;
using nn::NetConfig;
using testutil::bitwise_equal;
using testutil::random_tensor;

namespace {

NetConfig reduced_config() {
  NetConfig cfg;
  cfg.encoder.widths = {8, 16, 24, 32};
  cfg.decoder_width = 8;
  return cfg;
}

void saturate_all_gates(MPCGNet& net, std::uint64_t seed) {
  Rng rng(seed);
  for (int s = 0; s < 4; ++s) {
    auto& g = net.cgmfe_block(s).gates();
    for (int j = 0; j < 4; ++j) {
      for (int i = 0; i < 4; ++i) {
        g.set_logit(j, i, rng.bernoulli(0.5) ? 12.0f : -12.0f);
      }
    }
  }
  for (int d = 0; d < 3; ++d) {
    auto& g = net.dfa_block(d).gates();
    for (int j = 0; j < 3; ++j) {
      for (int i = 0; i < 3; ++i) {
        g.set_logit(j, i, rng.bernoulli(0.5) ? 12.0f : -12.0f);
      }
    }
  }
}

}  // namespace

TEST_CASE("encoder interaction basics") {
  MPCGNet net(reduced_config(), 1);
  Tensor enc = random_tensor(Shape{1, 16, 8, 8}, 2);
  Tensor prev = random_tensor(Shape{1, 8, 16, 16}, 3);

  SECTION("zero projection weights leave the skip path") {
    MPCGNet z(reduced_config(), 4);
    for (auto& p : z.params()) {
      if (p.name.rfind("interaction2.", 0) == 0) {
        for (std::int64_t i = 0; i < p.tensor.numel(); ++i) {
          p.tensor.data()[i] = 0.0f;
        }
      }
    }
    Tensor y = z.encoder_interaction(nullptr, 2, enc, prev);
    REQUIRE(bitwise_equal(y, enc));
  }

  SECTION("all-ones projection doubles the encoder map") {
    MPCGNet z(reduced_config(), 5);
    for (auto& p : z.params()) {
      if (p.name.rfind("interaction2.", 0) == 0) {
        for (std::int64_t i = 0; i < p.tensor.numel(); ++i) {
          p.tensor.data()[i] = 0.0f;
        }
      }
      if (p.name == "interaction2.pw.bias") {
        for (std::int64_t i = 0; i < p.tensor.numel(); ++i) {
          p.tensor.data()[i] = 1.0f;
        }
      }
      if (p.name == "interaction2.dw.weight") {
        Tensor& w = p.tensor;
        for (int c = 0; c < w.n(); ++c) w.at(c, 0, 1, 1) = 1.0f;
      }
    }
    Tensor y = z.encoder_interaction(nullptr, 2, enc, prev);
    Tensor want = ops::scale_shift(nullptr, enc, 2.0f, 0.0f);
    REQUIRE(testutil::max_abs_diff(y, want) < 1e-6);
  }

  SECTION("resolution relation is enforced") {
    REQUIRE_THROWS_AS(
        net.encoder_interaction(nullptr, 2, enc,
                                random_tensor(Shape{1, 8, 8, 8}, 6)),
        ShapeError);
  }

  SECTION("gradient check") {
    FdOptions opt;
    opt.h = 1e-3;
    const double err = finite_diff_check(
        [&](Tape* t, const Tensor& in) {
          return net.encoder_interaction(t, 2, in, prev);
        },
        enc, opt);
    REQUIRE(err < 1e-2);
  }
}

TEST_CASE("forward produces the contract shapes in both modes") {
  MPCGNet net(reduced_config(), 7);
  Tensor img = random_tensor(Shape{1, 3, 64, 64}, 8, 0.0, 1.0);
  auto train_out = net.forward(nullptr, img, true);
  REQUIRE(train_out.size() == 4);
  for (const auto& m : train_out) REQUIRE(m.shape() == Shape{1, 1, 64, 64});

  auto infer_out = net.forward(nullptr, img, false);
  REQUIRE(infer_out.size() == 1);
  // deep-supervision consistency: the inference map is the 4th training head
  REQUIRE(bitwise_equal(infer_out[0], train_out[3]));
}

TEST_CASE("forward rejects sizes not divisible by 32") {
  MPCGNet net(reduced_config(), 9);
  Tensor img = random_tensor(Shape{1, 3, 48, 64}, 10);
  try {
    net.forward(nullptr, img, true);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    REQUIRE(std::string(e.what()).find("32") != std::string::npos);
  }
}

TEST_CASE("stage features expose the resolution ladder and DFA arities") {
  MPCGNet net(reduced_config(), 11);
  Tensor img = random_tensor(Shape{1, 3, 64, 64}, 12, 0.0, 1.0);
  nn::StageFeatures feats;
  net.forward(nullptr, img, false, &feats);
  for (int s = 0; s < 4; ++s) {
    REQUIRE(feats.cgmfe[s].h() == 64 >> (s + 2));
    REQUIRE(feats.cgmfe[s].w() == 64 >> (s + 2));
  }
  REQUIRE(net.dfa_block(0).input_count() == 2);
  REQUIRE(net.dfa_block(1).input_count() == 3);
  REQUIRE(net.dfa_block(2).input_count() == 4);
  REQUIRE(feats.wcad[0].h() == 4);
  REQUIRE(feats.wcad[1].h() == 8);
  REQUIRE(feats.wcad[2].h() == 16);
}

TEST_CASE("whole-network gradient check on the reduced config") {
  NetConfig cfg = reduced_config();
  MPCGNet net(cfg, 13);
  saturate_all_gates(net, 14);
  // seed chosen clear of interior argmax ties; the acceptance suite runs the
  // full 3-seed sweep
  Tensor img = testutil::spread_tensor(Shape{1, 3, 32, 32}, 16, 0.05, 0.95);
  FdOptions opt;
  opt.h = 2e-4;
  opt.directions = 6;
  opt.seed = 16 * 3 + 1;
  const double err = finite_diff_check(
      [&](Tape* t, const Tensor& in) {
        auto heads = net.forward(t, in, true);
        return ops::concat_channels(t, heads);
      },
      img, opt);
  INFO("whole-net err " << err);
  REQUIRE(err < 2e-2);
}

TEST_CASE("parameter counting: registry and structural walks agree") {
  MPCGNet net(reduced_config(), 16);
  REQUIRE(net.param_count() == net.param_count_structural());
  REQUIRE(net.param_count() > 0);

  MPCGNet net2(reduced_config(), 16);
  REQUIRE(net2.param_count() == net.param_count());
  for (size_t i = 0; i < net.params().size(); ++i) {
    REQUIRE(bitwise_equal(net.params()[i].tensor, net2.params()[i].tensor));
  }
}

TEST_CASE("pointwise head parameter arithmetic") {
  // a single pointwise conv 4 -> 8 with bias: 4*8 + 8 = 40 parameters
  Rng rng(17);
  Tensor w = nn::glorot_conv(rng, Shape{8, 4, 1, 1});
  Tensor b = nn::zero_bias(8);
  REQUIRE(w.numel() + b.numel() == 40);
}

TEST_CASE("ablated variants keep the forward contract") {
  Tensor img = random_tensor(Shape{1, 3, 64, 64}, 18, 0.0, 1.0);
  for (int which = 0; which < 4; ++which) {
    NetConfig cfg = reduced_config();
    cfg.ablation.no_cgmfe = which == 0;
    cfg.ablation.no_wcad = which == 1;
    cfg.ablation.no_dfa = which == 2;
    cfg.ablation.no_gates = which == 3;
    MPCGNet net(cfg, 19);
    auto out = net.forward(nullptr, img, true);
    REQUIRE(out.size() == 4);
    for (const auto& m : out) REQUIRE(m.shape() == Shape{1, 1, 64, 64});
    REQUIRE(net.param_count() == net.param_count_structural());
  }
}

TEST_CASE("no-gates ablation reports all-ones gate bits") {
  NetConfig cfg = reduced_config();
  cfg.ablation.no_gates = true;
  MPCGNet net(cfg, 20);
  auto bits = net.gate_bits();
  REQUIRE(bits.size() == 7);
  REQUIRE(bits[0] == std::string(16, '1'));
  REQUIRE(bits[6] == std::string(9, '1'));
  for (const auto& p : net.params()) {
    REQUIRE(p.name.find("gates.logits") == std::string::npos);
  }
}

TEST_CASE("fresh model has every gate closed") {
  MPCGNet net(reduced_config(), 21);
  auto bits = net.gate_bits();
  REQUIRE(bits.size() == 7);
  for (int i = 0; i < 4; ++i) REQUIRE(bits[i] == std::string(16, '0'));
  for (int i = 4; i < 7; ++i) REQUIRE(bits[i] == std::string(9, '0'));
}

TEST_CASE("checkpoint round trip is bit exact") {
  const std::string path = "/tmp/mpcg_test_ckpt.bin";
  MPCGNet net(reduced_config(), 22);
  nn::save_checkpoint(path, net.params());

  MPCGNet other(reduced_config(), 23);  // different init
  bool differs = false;
  for (size_t i = 0; i < net.params().size(); ++i) {
    differs = differs || !bitwise_equal(net.params()[i].tensor,
                                        other.params()[i].tensor);
  }
  REQUIRE(differs);

  auto records = nn::load_checkpoint(path);
  nn::apply_checkpoint(records, other.params());
  for (size_t i = 0; i < net.params().size(); ++i) {
    REQUIRE(bitwise_equal(net.params()[i].tensor, other.params()[i].tensor));
  }

  const std::string path2 = "/tmp/mpcg_test_ckpt2.bin";
  nn::save_checkpoint(path2, other.params());
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)),
                 std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)),
                 std::istreambuf_iterator<char>());
  REQUIRE(b1 == b2);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("checkpoint config inference recovers widths and ablations") {
  const std::string path = "/tmp/mpcg_test_ckpt3.bin";
  for (int which = -1; which < 4; ++which) {
    NetConfig cfg = reduced_config();
    if (which == 0) cfg.ablation.no_cgmfe = true;
    if (which == 1) cfg.ablation.no_wcad = true;
    if (which == 2) cfg.ablation.no_dfa = true;
    if (which == 3) cfg.ablation.no_gates = true;
    MPCGNet net(cfg, 24);
    nn::save_checkpoint(path, net.params());
    NetConfig got = nn::infer_config(nn::load_checkpoint(path));
    REQUIRE(got.encoder.widths == cfg.encoder.widths);
    REQUIRE(got.decoder_width == cfg.decoder_width);
    REQUIRE(got.ablation.no_cgmfe == cfg.ablation.no_cgmfe);
    REQUIRE(got.ablation.no_wcad == cfg.ablation.no_wcad);
    REQUIRE(got.ablation.no_dfa == cfg.ablation.no_dfa);
    REQUIRE(got.ablation.no_gates == cfg.ablation.no_gates);
    MPCGNet rebuilt(got, 25);
    auto records = nn::load_checkpoint(path);
    nn::apply_checkpoint(records, rebuilt.params());
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint loader rejects malformed files") {
  const std::string path = "/tmp/mpcg_test_bad.bin";
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE";
  }
  REQUIRE_THROWS_AS(nn::load_checkpoint(path), DataError);
  {
    std::ofstream os(path, std::ios::binary);
    os << "MPCG";  // truncated right after the magic
  }
  REQUIRE_THROWS_AS(nn::load_checkpoint(path), DataError);
  std::remove(path.c_str());
}

TEST_CASE("count_flops is positive, deterministic, and scales with input") {
  MPCGNet net(reduced_config(), 26);
  const std::int64_t f64 = net.flop_count(64, 64);
  const std::int64_t f128 = net.flop_count(128, 128);
  REQUIRE(f64 > 0);
  REQUIRE(f64 == net.flop_count(64, 64));
  REQUIRE(f128 > 3 * f64);
}
