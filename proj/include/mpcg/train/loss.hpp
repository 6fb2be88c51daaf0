#pragma once

#include <cmath>
#include <vector>

#include "mpcg/core/tape.hpp"
#include "mpcg/core/tensor.hpp"
#include "mpcg/ops/elementwise.hpp"

namespace mpcg::train {

struct SegLossBreakdown {
  double bce = 0.0;
  double dice = 0.0;
};

/// Segmentation loss: mean binary cross-entropy with logits plus soft-Dice,
///   L = mean_i [ max(z,0) - z y + log(1 + exp(-|z|)) ]
///     + mean_n [ 1 - (2 sum(p y) + eps) / (sum(p) + sum(y) + eps) ]
/// with p = sigmoid(z), Dice taken per batch item. Fused forward/backward in
/// float64.
inline Tensor seg_loss(Tape* tape, const Tensor& logits, const Tensor& mask,
                       SegLossBreakdown* breakdown = nullptr,
                       double eps = 1e-8) {
  mpcg::detail::check_same_shape(logits, mask, "seg_loss");
  for (std::int64_t i = 0; i < mask.numel(); ++i) {
    const float v = mask.data()[i];
    if (v != 0.0f && v != 1.0f) {
      throw ShapeError("seg_loss: mask values must be exactly 0 or 1");
    }
  }
  const int N = logits.n();
  const std::int64_t per_item = logits.numel() / N;
  const std::int64_t total = logits.numel();

  double bce = 0.0;
  std::vector<double> inter(static_cast<size_t>(N), 0.0);
  std::vector<double> sums(static_cast<size_t>(N), 0.0);
  for (int n = 0; n < N; ++n) {
    for (std::int64_t i = 0; i < per_item; ++i) {
      const std::int64_t e = n * per_item + i;
      const double z = logits.data()[e];
      const double y = mask.data()[e];
      bce += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
      const double p = ops::detail::sigmoid_d(z);
      inter[static_cast<size_t>(n)] += p * y;
      sums[static_cast<size_t>(n)] += p + y;
    }
  }
  bce /= static_cast<double>(total);
  double dice = 0.0;
  for (int n = 0; n < N; ++n) {
    dice += 1.0 - (2.0 * inter[static_cast<size_t>(n)] + eps) /
                      (sums[static_cast<size_t>(n)] + eps);
  }
  dice /= static_cast<double>(N);
  if (breakdown != nullptr) {
    breakdown->bce = bce;
    breakdown->dice = dice;
  }

  Tensor loss = Tensor::scalar(static_cast<float>(bce + dice));
  mpcg::detail::check_finite(loss, "seg_loss");

  if (tape != nullptr) {
    loss.mark_tracked();
    Tensor zc = logits, yc = mask, lc = loss;
    auto inter_p = std::make_shared<std::vector<double>>(std::move(inter));
    auto sums_p = std::make_shared<std::vector<double>>(std::move(sums));
    tape->record([=]() mutable {
      if (!lc.grad_allocated() || !zc.needs_grad()) return;
      const double g = lc.grad_vec()[0];
      if (g == 0.0) return;
      float* gz = zc.grad_data();
      for (int n = 0; n < N; ++n) {
        const double a = 2.0 * (*inter_p)[static_cast<size_t>(n)] + eps;
        const double b = (*sums_p)[static_cast<size_t>(n)] + eps;
        for (std::int64_t i = 0; i < per_item; ++i) {
          const std::int64_t e = n * per_item + i;
          const double z = zc.data()[e];
          const double y = yc.data()[e];
          const double p = ops::detail::sigmoid_d(z);
          const double dbce = (p - y) / static_cast<double>(total);
          // d dice_n / dp = -(2 y b - a) / b^2, then the sigmoid chain
          const double ddice = -(2.0 * y * b - a) / (b * b) * p * (1.0 - p) /
                               static_cast<double>(N);
          gz[e] += static_cast<float>(g * (dbce + ddice));
        }
      }
    });
  }
  return loss;
}

}  // namespace mpcg::train
