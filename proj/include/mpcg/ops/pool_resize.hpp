#pragma once

#include <limits>
#include <memory>
#include <vector>

#include "mpcg/core/parallel.hpp"
#include "mpcg/core/tape.hpp"
#include "mpcg/core/tensor.hpp"
#include "mpcg/ops/conv.hpp"

namespace mpcg::ops {

/// Max pooling. Padding cells are ignored (-inf), never selected. Backward
/// routes each output gradient to the argmax input; ties go to the first
/// element in row-major window order.
inline Tensor maxpool2d(Tape* tape, const Tensor& x, int k, int stride,
                        int padding) {
  if (k < 1) throw ShapeError("maxpool2d: kernel must be >= 1");
  if (stride < 1) throw ShapeError("maxpool2d: stride must be >= 1");
  if (padding < 0 || padding >= k) {
    throw ShapeError("maxpool2d: padding must satisfy 0 <= p < k");
  }
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const int OH = detail::conv_out_extent(H, padding, k, stride);
  const int OW = detail::conv_out_extent(W, padding, k, stride);
  if (OH < 1 || OW < 1) {
    throw ShapeError("maxpool2d: empty output for input " + x.shape().str());
  }

  Tensor out(Shape{N, C, OH, OW});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<size_t>(out.numel()));
  const float* xd = x.data();
  float* od = out.data();

  parallel_for(static_cast<std::int64_t>(N) * C, [&](std::int64_t plane) {
    const float* xp = xd + plane * H * W;
    float* op = od + plane * OH * OW;
    std::int64_t* ap = argmax->data() + plane * OH * OW;
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        std::int64_t best_idx = -1;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= W) continue;
            const float v = xp[iy * W + ix];
            if (v > best) {
              best = v;
              best_idx = iy * W + ix;
            }
          }
        }
        op[oy * OW + ox] = best;
        ap[oy * OW + ox] = plane * H * W + best_idx;
      }
    }
  });
  mpcg::detail::check_finite(out, "maxpool2d");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated() || !xc.needs_grad()) return;
      const float* gy = oc.grad_vec().data();
      float* gx = xc.grad_data();
      const std::int64_t count = oc.numel();
      for (std::int64_t i = 0; i < count; ++i) {
        gx[(*argmax)[i]] += gy[i];
      }
    });
  }
  return out;
}

namespace detail {

struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<float> w0, w1;
};

/// align_corners=false sampling grid for an integer upscale factor.
inline LerpAxis make_lerp_axis(int in, int factor) {
  LerpAxis a;
  const int out = in * factor;
  a.i0.resize(out);
  a.i1.resize(out);
  a.w0.resize(out);
  a.w1.resize(out);
  for (int o = 0; o < out; ++o) {
    const double src = (o + 0.5) / factor - 0.5;
    double f = std::floor(src);
    double t = src - f;
    int lo = static_cast<int>(f);
    int hi = lo + 1;
    if (lo < 0) lo = 0;
    if (hi > in - 1) hi = in - 1;
    if (lo > in - 1) lo = in - 1;
    a.i0[o] = lo;
    a.i1[o] = hi;
    a.w0[o] = static_cast<float>(1.0 - t);
    a.w1[o] = static_cast<float>(t);
  }
  return a;
}

}  // namespace detail

/// Bilinear upsampling by an integer factor (align_corners=false).
inline Tensor bilinear_upsample(Tape* tape, const Tensor& x, int factor) {
  if (factor == 1) {
    // Identity path still participates in the graph.
    if (tape == nullptr) return x;
    Tensor out = x.clone_values();
    out.mark_tracked();
    Tensor xc = x, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated() || !xc.needs_grad()) return;
      const float* gy = oc.grad_vec().data();
      float* gx = xc.grad_data();
      for (std::int64_t i = 0; i < oc.numel(); ++i) gx[i] += gy[i];
    });
    return out;
  }
  if (factor != 2 && factor != 4 && factor != 8 && factor != 16 &&
      factor != 32) {
    throw ShapeError("bilinear_upsample: factor must be one of {1,2,4,8,16,32}");
  }
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const int OH = H * factor, OW = W * factor;
  const auto ay = detail::make_lerp_axis(H, factor);
  const auto ax = detail::make_lerp_axis(W, factor);

  Tensor out(Shape{N, C, OH, OW});
  const float* xd = x.data();
  float* od = out.data();
  parallel_for(static_cast<std::int64_t>(N) * C, [&](std::int64_t plane) {
    const float* xp = xd + plane * H * W;
    float* op = od + plane * OH * OW;
    for (int oy = 0; oy < OH; ++oy) {
      const float* r0 = xp + static_cast<std::int64_t>(ay.i0[oy]) * W;
      const float* r1 = xp + static_cast<std::int64_t>(ay.i1[oy]) * W;
      const float wy0 = ay.w0[oy], wy1 = ay.w1[oy];
      for (int ox = 0; ox < OW; ++ox) {
        const float top = ax.w0[ox] * r0[ax.i0[ox]] + ax.w1[ox] * r0[ax.i1[ox]];
        const float bot = ax.w0[ox] * r1[ax.i0[ox]] + ax.w1[ox] * r1[ax.i1[ox]];
        op[oy * OW + ox] = wy0 * top + wy1 * bot;
      }
    }
  });
  mpcg::detail::check_finite(out, "bilinear_upsample");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, oc = out;
    auto ayp = std::make_shared<detail::LerpAxis>(ay);
    auto axp = std::make_shared<detail::LerpAxis>(ax);
    tape->record([=]() mutable {
      if (!oc.grad_allocated() || !xc.needs_grad()) return;
      const float* gy = oc.grad_vec().data();
      float* gx = xc.grad_data();
      parallel_for(static_cast<std::int64_t>(N) * C, [&](std::int64_t plane) {
        const float* gp = gy + plane * OH * OW;
        float* gxp = gx + plane * H * W;
        for (int oy = 0; oy < OH; ++oy) {
          for (int ox = 0; ox < OW; ++ox) {
            const float g = gp[oy * OW + ox];
            if (g == 0.0f) continue;
            gxp[ayp->i0[oy] * W + axp->i0[ox]] += ayp->w0[oy] * axp->w0[ox] * g;
            gxp[ayp->i0[oy] * W + axp->i1[ox]] += ayp->w0[oy] * axp->w1[ox] * g;
            gxp[ayp->i1[oy] * W + axp->i0[ox]] += ayp->w1[oy] * axp->w0[ox] * g;
            gxp[ayp->i1[oy] * W + axp->i1[ox]] += ayp->w1[oy] * axp->w1[ox] * g;
          }
        }
      });
    });
  }
  return out;
}

/// Global average pool to (N,C,1,1); float64 accumulation.
inline Tensor global_avg_pool(Tape* tape, const Tensor& x) {
  const int N = x.n(), C = x.c();
  const std::int64_t px = static_cast<std::int64_t>(x.h()) * x.w();
  Tensor out(Shape{N, C, 1, 1});
  const float* xd = x.data();
  float* od = out.data();
  for (std::int64_t plane = 0; plane < static_cast<std::int64_t>(N) * C;
       ++plane) {
    double s = 0.0;
    const float* xp = xd + plane * px;
    for (std::int64_t i = 0; i < px; ++i) s += xp[i];
    od[plane] = static_cast<float>(s / static_cast<double>(px));
  }
  mpcg::detail::check_finite(out, "global_avg_pool");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated() || !xc.needs_grad()) return;
      const float* gy = oc.grad_vec().data();
      float* gx = xc.grad_data();
      const float inv = 1.0f / static_cast<float>(px);
      for (std::int64_t plane = 0; plane < static_cast<std::int64_t>(N) * C;
           ++plane) {
        const float g = gy[plane] * inv;
        float* gp = gx + plane * px;
        for (std::int64_t i = 0; i < px; ++i) gp[i] += g;
      }
    });
  }
  return out;
}

/// Global max pool to (N,C,1,1); backward routes to the first max.
inline Tensor global_max_pool(Tape* tape, const Tensor& x) {
  const int N = x.n(), C = x.c();
  const std::int64_t px = static_cast<std::int64_t>(x.h()) * x.w();
  Tensor out(Shape{N, C, 1, 1});
  auto argmax =
      std::make_shared<std::vector<std::int64_t>>(static_cast<size_t>(N) * C);
  const float* xd = x.data();
  float* od = out.data();
  for (std::int64_t plane = 0; plane < static_cast<std::int64_t>(N) * C;
       ++plane) {
    const float* xp = xd + plane * px;
    float best = xp[0];
    std::int64_t bi = 0;
    for (std::int64_t i = 1; i < px; ++i) {
      if (xp[i] > best) {
        best = xp[i];
        bi = i;
      }
    }
    od[plane] = best;
    (*argmax)[plane] = plane * px + bi;
  }
  mpcg::detail::check_finite(out, "global_max_pool");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated() || !xc.needs_grad()) return;
      const float* gy = oc.grad_vec().data();
      float* gx = xc.grad_data();
      for (std::int64_t plane = 0; plane < static_cast<std::int64_t>(N) * C;
           ++plane) {
        gx[(*argmax)[plane]] += gy[plane];
      }
    });
  }
  return out;
}

/// Per-pixel mean over the channel axis -> (N,1,H,W).
inline Tensor channel_mean(Tape* tape, const Tensor& x) {
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
  Tensor out(Shape{N, 1, H, W});
  const float* xd = x.data();
  float* od = out.data();
  const std::int64_t px = static_cast<std::int64_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    for (std::int64_t i = 0; i < px; ++i) {
      double s = 0.0;
      for (int c = 0; c < C; ++c) {
        s += xd[(static_cast<std::int64_t>(n) * C + c) * px + i];
      }
      od[n * px + i] = static_cast<float>(s / C);
    }
  }
  mpcg::detail::check_finite(out, "channel_mean");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated() || !xc.needs_grad()) return;
      const float* gy = oc.grad_vec().data();
      float* gx = xc.grad_data();
      const float inv = 1.0f / static_cast<float>(C);
      for (int n = 0; n < N; ++n) {
        for (std::int64_t i = 0; i < px; ++i) {
          const float g = gy[n * px + i] * inv;
          for (int c = 0; c < C; ++c) {
            gx[(static_cast<std::int64_t>(n) * C + c) * px + i] += g;
          }
        }
      }
    });
  }
  return out;
}

/// Per-pixel max over the channel axis -> (N,1,H,W); first max wins ties.
inline Tensor channel_max(Tape* tape, const Tensor& x) {
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
  Tensor out(Shape{N, 1, H, W});
  const std::int64_t px = static_cast<std::int64_t>(H) * W;
  auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(N) * px);
  const float* xd = x.data();
  float* od = out.data();
  for (int n = 0; n < N; ++n) {
    for (std::int64_t i = 0; i < px; ++i) {
      float best = xd[static_cast<std::int64_t>(n) * C * px + i];
      int bc = 0;
      for (int c = 1; c < C; ++c) {
        const float v = xd[(static_cast<std::int64_t>(n) * C + c) * px + i];
        if (v > best) {
          best = v;
          bc = c;
        }
      }
      od[n * px + i] = best;
      (*argmax)[n * px + i] = bc;
    }
  }
  mpcg::detail::check_finite(out, "channel_max");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated() || !xc.needs_grad()) return;
      const float* gy = oc.grad_vec().data();
      float* gx = xc.grad_data();
      for (int n = 0; n < N; ++n) {
        for (std::int64_t i = 0; i < px; ++i) {
          const int bc = (*argmax)[n * px + i];
          gx[(static_cast<std::int64_t>(n) * C + bc) * px + i] += gy[n * px + i];
        }
      }
    });
  }
  return out;
}

}  // namespace mpcg::ops
