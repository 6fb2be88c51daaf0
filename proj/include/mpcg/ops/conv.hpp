#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mpcg/core/parallel.hpp"
#include "mpcg/core/tape.hpp"
#include "mpcg/core/tensor.hpp"

namespace mpcg::ops {

namespace detail {

inline int conv_out_extent(int in, int pad, int k, int stride) {
  return (in + 2 * pad - k) / stride + 1;
}

// Valid output range [lo, hi) along one axis for a kernel tap at offset k:
// indices where o*stride - pad + k lands inside [0, in).
inline std::pair<int, int> tap_range(int out, int in, int stride, int pad,
                                     int k) {
  const int shift = k - pad;  // i = o*stride + shift
  int lo = 0;
  if (shift < 0) lo = (-shift + stride - 1) / stride;
  int hi = out;
  const int max_i = in - 1 - shift;
  if (max_i < 0) return {0, 0};
  hi = std::min(hi, max_i / stride + 1);
  return {lo, std::max(lo, hi)};
}

inline void conv_check(const Tensor& x, const Tensor& w,
                       const std::optional<Tensor>& bias, int stride, int pad,
                       int groups) {
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (pad < 0) throw ShapeError("conv2d: padding must be >= 0");
  if (groups < 1) throw ShapeError("conv2d: groups must be >= 1");
  const int cin = x.c();
  const int cout = w.n();
  if (cin % groups != 0) {
    throw ShapeError("conv2d: input channels " + std::to_string(cin) +
                     " not divisible by groups " + std::to_string(groups));
  }
  if (cout % groups != 0) {
    throw ShapeError("conv2d: output channels " + std::to_string(cout) +
                     " not divisible by groups " + std::to_string(groups));
  }
  if (w.c() != cin / groups) {
    throw ShapeError("conv2d: weight channel extent " + std::to_string(w.c()) +
                     " does not match input channels/groups " +
                     std::to_string(cin / groups));
  }
  if (w.h() % 2 == 0 || w.w() % 2 == 0) {
    throw ShapeError("conv2d: kernel extents must be odd, got " +
                     std::to_string(w.h()) + "x" + std::to_string(w.w()));
  }
  if (bias && (bias->numel() != cout)) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias->numel()) +
                     " elements, expected output channels " +
                     std::to_string(cout));
  }
  const int oh = conv_out_extent(x.h(), pad, w.h(), stride);
  const int ow = conv_out_extent(x.w(), pad, w.w(), stride);
  if (oh < 1 || ow < 1) {
    throw ShapeError("conv2d: output spatial extent would be empty for input " +
                     x.shape().str() + " kernel " + std::to_string(w.h()) +
                     "x" + std::to_string(w.w()));
  }
}

}  // namespace detail

/// 2-D cross-correlation (no kernel flip), float32 storage with float64
/// accumulation. Weight layout (Cout, Cin/groups, kh, kw).
inline Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& w,
                     const std::optional<Tensor>& bias, int stride, int padding,
                     int groups) {
  detail::conv_check(x, w, bias, stride, padding, groups);
  const int N = x.n(), Cin = x.c(), H = x.h(), W = x.w();
  const int Cout = w.n(), Cig = w.c(), KH = w.h(), KW = w.w();
  const int Cog = Cout / groups;
  const int OH = detail::conv_out_extent(H, padding, KH, stride);
  const int OW = detail::conv_out_extent(W, padding, KW, stride);

  Tensor out(Shape{N, Cout, OH, OW});
  const float* xd = x.data();
  const float* wd = w.data();
  float* od = out.data();
  const float* bd = bias ? bias->data() : nullptr;

  parallel_for(static_cast<std::int64_t>(N) * Cout, [&](std::int64_t job) {
    const int n = static_cast<int>(job / Cout);
    const int co = static_cast<int>(job % Cout);
    const int g = co / Cog;
    std::vector<double> acc(static_cast<size_t>(OH) * OW, 0.0);
    for (int cig = 0; cig < Cig; ++cig) {
      const int ci = g * Cig + cig;
      const float* xplane = xd + (static_cast<std::int64_t>(n) * Cin + ci) * H * W;
      const float* wplane =
          wd + (static_cast<std::int64_t>(co) * Cig + cig) * KH * KW;
      for (int kh = 0; kh < KH; ++kh) {
        const auto [oy_lo, oy_hi] = detail::tap_range(OH, H, stride, padding, kh);
        for (int kw = 0; kw < KW; ++kw) {
          const double wv = wplane[kh * KW + kw];
          if (wv == 0.0) continue;
          const auto [ox_lo, ox_hi] = detail::tap_range(OW, W, stride, padding, kw);
          for (int oy = oy_lo; oy < oy_hi; ++oy) {
            const int iy = oy * stride - padding + kh;
            double* arow = acc.data() + static_cast<size_t>(oy) * OW;
            const float* xrow =
                xplane + static_cast<std::int64_t>(iy) * W - padding + kw;
            if (stride == 1) {
              for (int ox = ox_lo; ox < ox_hi; ++ox) arow[ox] += wv * xrow[ox];
            } else {
              for (int ox = ox_lo; ox < ox_hi; ++ox) {
                arow[ox] += wv * xrow[static_cast<std::int64_t>(ox) * stride];
              }
            }
          }
        }
      }
    }
    const double b = bd ? bd[co] : 0.0;
    float* oplane = od + (static_cast<std::int64_t>(n) * Cout + co) * OH * OW;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(OH) * OW; ++i) {
      oplane[i] = static_cast<float>(acc[i] + b);
    }
  });
  mpcg::detail::check_finite(out, "conv2d");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, wc = w, oc = out;
    std::optional<Tensor> bc = bias;
    tape->record([=]() mutable {
      if (!oc.grad_allocated()) return;
      const float* gy = oc.grad_vec().data();
      // d/dx
      if (xc.needs_grad()) {
        float* gx = xc.grad_data();
        parallel_for(N, [&](std::int64_t n) {
          std::vector<double> acc(static_cast<size_t>(Cin) * H * W, 0.0);
          for (int co = 0; co < Cout; ++co) {
            const int g = co / Cog;
            const float* gyp =
                gy + (static_cast<std::int64_t>(n) * Cout + co) * OH * OW;
            for (int cig = 0; cig < Cig; ++cig) {
              const int ci = g * Cig + cig;
              double* aplane = acc.data() + static_cast<size_t>(ci) * H * W;
              const float* wplane =
                  wc.data() + (static_cast<std::int64_t>(co) * Cig + cig) * KH * KW;
              for (int kh = 0; kh < KH; ++kh) {
                const auto [oy_lo, oy_hi] =
                    detail::tap_range(OH, H, stride, padding, kh);
                for (int kw = 0; kw < KW; ++kw) {
                  const double wv = wplane[kh * KW + kw];
                  if (wv == 0.0) continue;
                  const auto [ox_lo, ox_hi] =
                      detail::tap_range(OW, W, stride, padding, kw);
                  for (int oy = oy_lo; oy < oy_hi; ++oy) {
                    const int iy = oy * stride - padding + kh;
                    const float* gyrow = gyp + static_cast<std::int64_t>(oy) * OW;
                    double* arow = aplane + static_cast<std::int64_t>(iy) * W -
                                   padding + kw;
                    if (stride == 1) {
                      for (int ox = ox_lo; ox < ox_hi; ++ox) {
                        arow[ox] += wv * gyrow[ox];
                      }
                    } else {
                      for (int ox = ox_lo; ox < ox_hi; ++ox) {
                        arow[static_cast<std::int64_t>(ox) * stride] +=
                            wv * gyrow[ox];
                      }
                    }
                  }
                }
              }
            }
          }
          float* gxp = gx + static_cast<std::int64_t>(n) * Cin * H * W;
          for (std::int64_t i = 0; i < static_cast<std::int64_t>(Cin) * H * W; ++i) {
            gxp[i] += static_cast<float>(acc[i]);
          }
        });
      }
      // d/dw
      if (wc.needs_grad()) {
        float* gw = wc.grad_data();
        parallel_for(Cout, [&](std::int64_t co64) {
          const int co = static_cast<int>(co64);
          const int g = co / Cog;
          std::vector<double> acc(static_cast<size_t>(Cig) * KH * KW, 0.0);
          for (int n = 0; n < N; ++n) {
            const float* gyp =
                gy + (static_cast<std::int64_t>(n) * Cout + co) * OH * OW;
            for (int cig = 0; cig < Cig; ++cig) {
              const int ci = g * Cig + cig;
              const float* xplane =
                  xc.data() + (static_cast<std::int64_t>(n) * Cin + ci) * H * W;
              for (int kh = 0; kh < KH; ++kh) {
                const auto [oy_lo, oy_hi] =
                    detail::tap_range(OH, H, stride, padding, kh);
                for (int kw = 0; kw < KW; ++kw) {
                  const auto [ox_lo, ox_hi] =
                      detail::tap_range(OW, W, stride, padding, kw);
                  double s = 0.0;
                  for (int oy = oy_lo; oy < oy_hi; ++oy) {
                    const int iy = oy * stride - padding + kh;
                    const float* gyrow = gyp + static_cast<std::int64_t>(oy) * OW;
                    const float* xrow = xplane +
                                        static_cast<std::int64_t>(iy) * W -
                                        padding + kw;
                    if (stride == 1) {
                      for (int ox = ox_lo; ox < ox_hi; ++ox) {
                        s += static_cast<double>(gyrow[ox]) * xrow[ox];
                      }
                    } else {
                      for (int ox = ox_lo; ox < ox_hi; ++ox) {
                        s += static_cast<double>(gyrow[ox]) *
                             xrow[static_cast<std::int64_t>(ox) * stride];
                      }
                    }
                  }
                  acc[(static_cast<size_t>(cig) * KH + kh) * KW + kw] += s;
                }
              }
            }
          }
          float* gwp = gw + static_cast<std::int64_t>(co) * Cig * KH * KW;
          for (std::int64_t i = 0; i < static_cast<std::int64_t>(Cig) * KH * KW; ++i) {
            gwp[i] += static_cast<float>(acc[i]);
          }
        });
      }
      // d/dbias
      if (bc && bc->needs_grad()) {
        float* gb = bc->grad_data();
        for (int co = 0; co < Cout; ++co) {
          double s = 0.0;
          for (int n = 0; n < N; ++n) {
            const float* gyp =
                gy + (static_cast<std::int64_t>(n) * Cout + co) * OH * OW;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(OH) * OW; ++i) {
              s += gyp[i];
            }
          }
          gb[co] += static_cast<float>(s);
        }
      }
    });
  }
  return out;
}

/// Depthwise convolution: groups = C, one kxk kernel per channel, same
/// padding (k/2) so spatial extent is preserved at stride 1.
inline Tensor depthwise_conv2d(Tape* tape, const Tensor& x, const Tensor& w,
                               int stride = 1,
                               const std::optional<Tensor>& bias = {}) {
  if (w.n() != x.c() || w.c() != 1) {
    throw ShapeError("depthwise_conv2d: weight must be (C,1,k,k) with C = input channels " +
                     std::to_string(x.c()) + ", got " + w.shape().str());
  }
  return conv2d(tape, x, w, bias, stride, w.h() / 2, x.c());
}

/// 1x1 convolution: per-pixel linear map over channels.
inline Tensor pointwise_conv(Tape* tape, const Tensor& x, const Tensor& w,
                             const std::optional<Tensor>& bias = {}) {
  if (w.h() != 1 || w.w() != 1) {
    throw ShapeError("pointwise_conv: weight must be (Cout,Cin,1,1), got " +
                     w.shape().str());
  }
  return conv2d(tape, x, w, bias, 1, 0, 1);
}

}  // namespace mpcg::ops
