#include <catch2/catch_amalgamated.hpp>
#include <sstream>

#include "mpcg/metrics.hpp"
#include "oracles/metrics_oracle.hpp"
#include "test_support.hpp"

using namespace mpcg;
namespace mt = mpcg::metrics;
using testutil::random_tensor;

namespace {

Tensor plane_from(const std::vector<float>& v, int h, int w) {
  return Tensor::from(Shape{1, 1, h, w}, std::vector<float>(v));
}

oracle::Plane to_plane(const Tensor& t) {
  oracle::Plane p;
  p.h = t.h();
  p.w = t.w();
  p.v.assign(t.data(), t.data() + t.numel());
  return p;
}

/// Random soft prediction plus a blob-like binary mask.
struct Pair {
  Tensor pred, gt;
};

Pair random_pair(int h, int w, std::uint64_t seed, bool allow_degenerate) {
  Rng rng(seed);
  Tensor pred(Shape{1, 1, h, w});
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    pred.data()[i] = static_cast<float>(rng.uniform());
  }
  Tensor gt(Shape{1, 1, h, w});
  const int mode = allow_degenerate ? rng.uniform_int(0, 5) : rng.uniform_int(0, 3);
  if (mode == 4) {
    // empty
  } else if (mode == 5) {
    for (std::int64_t i = 0; i < gt.numel(); ++i) gt.data()[i] = 1.0f;
  } else {
    const double cy = rng.uniform(0, h), cx = rng.uniform(0, w);
    const double r = rng.uniform(1.0, h / 2.0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double d = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        gt.at(0, 0, y, x) = d <= r * r ? 1.0f : 0.0f;
      }
    }
  }
  return {pred, gt};
}

}  // namespace

TEST_CASE("dice and iou fundamentals") {
  Tensor gt = plane_from({1, 1, 0, 0, 1, 1, 0, 0, 0}, 3, 3);
  SECTION("perfect prediction") {
    auto [d, i] = mt::dice_iou(gt, gt);
    REQUIRE(d == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(i == Catch::Approx(1.0).margin(1e-9));
  }
  SECTION("disjoint masks are eps-limited zeros") {
    Tensor pred = plane_from({0, 0, 1, 0, 0, 0, 0, 0, 1}, 3, 3);
    auto [d, i] = mt::dice_iou(pred, gt);
    REQUIRE(d < 1e-8);
    REQUIRE(i < 1e-8);
  }
  SECTION("hand-counted 4x4 case: dice 4/7, iou 2/5") {
    // |pred ∩ gt| = 2, |pred| = 3, |gt| = 4
    Tensor pred = plane_from({1, 1, 0, 0,
                              0, 0, 0, 0,
                              0, 0, 1, 0,
                              0, 0, 0, 0}, 4, 4);
    Tensor gt4 = plane_from({1, 1, 0, 0,
                             1, 1, 0, 0,
                             0, 0, 0, 0,
                             0, 0, 0, 0}, 4, 4);
    auto [d, i] = mt::dice_iou(pred, gt4);
    REQUIRE(d == Catch::Approx(4.0 / 7.0).margin(1e-6));
    REQUIRE(i == Catch::Approx(2.0 / 5.0).margin(1e-6));
  }
  SECTION("binarization invariance within the threshold bands") {
    Tensor p1 = plane_from({0.6f, 0.9f, 0.2f, 0.0f, 0.51f, 1.0f, 0.5f, 0.3f, 0.1f}, 3, 3);
    Tensor p2 = plane_from({0.99f, 0.51f, 0.5f, 0.49f, 0.7f, 0.6f, 0.2f, 0.0f, 0.45f}, 3, 3);
    auto [d1, i1] = mt::dice_iou(p1, gt);
    auto [d2, i2] = mt::dice_iou(p2, gt);
    REQUIRE(d1 == d2);  // same binarized mask
    REQUIRE(i1 == i2);
  }
}

TEST_CASE("mae fundamentals") {
  Tensor gt = plane_from({1, 0, 0, 1}, 2, 2);
  REQUIRE(mt::mae(gt, gt) == 0.0);
  Tensor inv = plane_from({0, 1, 1, 0}, 2, 2);
  REQUIRE(mt::mae(inv, gt) == 1.0);
  Tensor half = Tensor::full(Shape{1, 1, 2, 2}, 0.5f);
  REQUIRE(mt::mae(half, gt) == Catch::Approx(0.5).margin(1e-9));
}

TEST_CASE("weighted F-measure anchors") {
  // interior blob, clear of the image border so the smoothing kernel sees a
  // constant neighborhood
  Tensor gt(Shape{1, 1, 12, 12});
  for (int y = 4; y < 8; ++y) {
    for (int x = 4; x < 8; ++x) gt.at(0, 0, y, x) = 1.0f;
  }
  SECTION("perfect prediction scores 1") {
    REQUIRE(mt::weighted_fmeasure(gt, gt) == Catch::Approx(1.0).margin(1e-6));
  }
  SECTION("inverted prediction scores ~0") {
    Tensor inv(gt.shape());
    for (std::int64_t i = 0; i < gt.numel(); ++i) {
      inv.data()[i] = 1.0f - gt.data()[i];
    }
    REQUIRE(mt::weighted_fmeasure(inv, gt) < 1e-6);
  }
  SECTION("empty ground truth conventions") {
    Tensor empty(gt.shape());
    Tensor zeros(gt.shape());
    REQUIRE(mt::weighted_fmeasure(zeros, empty) == 1.0);
    Tensor some(gt.shape());
    some.at(0, 0, 3, 3) = 0.25f;
    REQUIRE(mt::weighted_fmeasure(some, empty) == 0.0);
  }
}

TEST_CASE("structure measure anchors") {
  Tensor gt(Shape{1, 1, 8, 8});
  for (int y = 2; y < 6; ++y) {
    for (int x = 3; x < 7; ++x) gt.at(0, 0, y, x) = 1.0f;
  }
  REQUIRE(mt::s_measure(gt, gt) == Catch::Approx(1.0).margin(1e-6));

  Tensor empty(gt.shape());
  Tensor zeros(gt.shape());
  REQUIRE(mt::s_measure(zeros, empty) == Catch::Approx(1.0).margin(1e-9));
  Tensor full = Tensor::ones(gt.shape());
  REQUIRE(mt::s_measure(full, full) == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("e-measure anchors") {
  Tensor gt(Shape{1, 1, 8, 8});
  for (int y = 1; y < 4; ++y) {
    for (int x = 2; x < 7; ++x) gt.at(0, 0, y, x) = 1.0f;
  }
  REQUIRE(mt::e_measure(gt, gt) == Catch::Approx(1.0).margin(1e-4));

  // hand case: 2x2 checker, inverted prediction binarizes to the complement,
  // alignment is -1 everywhere, enhanced map 0
  Tensor checker = plane_from({1, 0, 0, 1}, 2, 2);
  Tensor inv = plane_from({0, 1, 1, 0}, 2, 2);
  const double e = mt::e_measure(inv, checker);
  REQUIRE(e == Catch::Approx(0.0).margin(1e-9));
  REQUIRE(e < 0.5);

  Tensor empty(Shape{1, 1, 4, 4});
  Tensor zeros(Shape{1, 1, 4, 4});
  REQUIRE(mt::e_measure(zeros, empty) == 1.0);
}

TEST_CASE("transcription oracles agree on seeded 8x8 cases") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto [pred, gt] = random_pair(8, 8, mix_seed(424242, seed), seed >= 16);
    const auto pp = to_plane(pred);
    const auto gp = to_plane(gt);
    INFO("seed " << seed);
    REQUIRE(mt::weighted_fmeasure(pred, gt) ==
            Catch::Approx(oracle::wfb_ref(pp, gp)).margin(1e-6));
    REQUIRE(mt::s_measure(pred, gt) ==
            Catch::Approx(oracle::smeasure_ref(pp, gp)).margin(1e-6));
    REQUIRE(mt::e_measure(pred, gt) ==
            Catch::Approx(oracle::emeasure_ref(pp, gp)).margin(1e-6));
  }
}

TEST_CASE("all six measures stay in [0,1] on random inputs") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    auto [pred, gt] = random_pair(8, 8, mix_seed(11, seed), true);
    auto [d, i] = mt::dice_iou(pred, gt);
    const double f = mt::weighted_fmeasure(pred, gt);
    const double s = mt::s_measure(pred, gt);
    const double e = mt::e_measure(pred, gt);
    const double m = mt::mae(pred, gt);
    for (double v : {d, i, f, s, e, m}) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
  }
}

TEST_CASE("replacing the prediction with the ground truth never degrades") {
  for (std::uint64_t gs = 0; gs < 4; ++gs) {
    auto [unused, gt] = random_pair(8, 8, mix_seed(77, gs), gs == 3);
    auto [d0, i0] = mt::dice_iou(gt, gt);
    const double f0 = mt::weighted_fmeasure(gt, gt);
    const double s0 = mt::s_measure(gt, gt);
    const double e0 = mt::e_measure(gt, gt);
    const double m0 = mt::mae(gt, gt);
    for (std::uint64_t ps = 0; ps < 25; ++ps) {
      auto [pred, unused2] = random_pair(8, 8, mix_seed(99, gs * 100 + ps), false);
      auto [d, i] = mt::dice_iou(pred, gt);
      REQUIRE(d0 >= d - 1e-12);
      REQUIRE(i0 >= i - 1e-12);
      REQUIRE(f0 >= mt::weighted_fmeasure(pred, gt) - 1e-12);
      REQUIRE(s0 >= mt::s_measure(pred, gt) - 1e-12);
      REQUIRE(e0 >= mt::e_measure(pred, gt) - 1e-12);
      REQUIRE(m0 <= mt::mae(pred, gt) + 1e-12);
    }
  }
}

TEST_CASE("dice and iou satisfy dice = 2*iou/(1+iou)") {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    auto [pred, gt] = random_pair(6, 6, mix_seed(31337, seed), false);
    auto [d, i] = mt::dice_iou(pred, gt);
    ++checked;
    REQUIRE(d == Catch::Approx(2.0 * i / (1.0 + i)).margin(1e-6));
  }
  REQUIRE(checked == 1000);
}

TEST_CASE("dataset evaluation aggregates arithmetically") {
  Tensor gt = plane_from({1, 0, 0, 1}, 2, 2);
  SECTION("single perfect image") {
    auto r = mt::evaluate_dataset({gt}, {gt});
    REQUIRE(r.mean_dice == Catch::Approx(1.0).margin(1e-8));
    REQUIRE(r.mean_iou == Catch::Approx(1.0).margin(1e-8));
    REQUIRE(r.mean_fbw == Catch::Approx(1.0).margin(1e-6));
    REQUIRE(r.mean_smeasure == Catch::Approx(1.0).margin(1e-6));
    REQUIRE(r.mean_emeasure == Catch::Approx(1.0).margin(1e-6));
    REQUIRE(r.mean_mae == 0.0);
  }
  SECTION("dice 1 and dice 0 average to 0.5") {
    Tensor inv = plane_from({0, 1, 1, 0}, 2, 2);
    auto r = mt::evaluate_dataset({gt, inv}, {gt, gt});
    REQUIRE(r.mean_dice == Catch::Approx(0.5).margin(1e-8));
  }
  SECTION("count mismatch is an error") {
    REQUIRE_THROWS_AS(mt::evaluate_dataset({gt, gt}, {gt}), ShapeError);
  }
}

TEST_CASE("oracle-pinned regression fixture of 4 seeded images") {
  std::vector<Tensor> preds, gts;
  std::vector<oracle::Plane> pp, gp;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    auto [pred, gt] = random_pair(8, 8, mix_seed(2024, seed), false);
    preds.push_back(pred);
    gts.push_back(gt);
    pp.push_back(to_plane(pred));
    gp.push_back(to_plane(gt));
  }
  auto r = mt::evaluate_dataset(preds, gts);
  double f = 0.0, s = 0.0, e = 0.0;
  for (int i = 0; i < 4; ++i) {
    f += oracle::wfb_ref(pp[i], gp[i]);
    s += oracle::smeasure_ref(pp[i], gp[i]);
    e += oracle::emeasure_ref(pp[i], gp[i]);
  }
  REQUIRE(r.mean_fbw == Catch::Approx(f / 4.0).margin(1e-6));
  REQUIRE(r.mean_smeasure == Catch::Approx(s / 4.0).margin(1e-6));
  REQUIRE(r.mean_emeasure == Catch::Approx(e / 4.0).margin(1e-6));
}

TEST_CASE("CSV export layout") {
  Tensor gt = plane_from({1, 0, 0, 1}, 2, 2);
  auto r = mt::evaluate_dataset({gt, gt}, {gt, gt}, {}, {"00000", "00001"});
  std::ostringstream os;
  mt::write_csv(os, r);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  REQUIRE(line == "image,dice,iou,fbw,smeasure,emeasure,mae");
  std::getline(is, line);
  REQUIRE(line.rfind("00000,", 0) == 0);
  std::getline(is, line);
  REQUIRE(line.rfind("00001,", 0) == 0);
  std::getline(is, line);
  REQUIRE(line.rfind("MEAN,", 0) == 0);
  // 6-decimal fixed formatting
  REQUIRE(line.find("1.000000") != std::string::npos);
}
