#pragma once

// Independent nested-loop reference implementations used to pin expected
// values for the tensor kernels. Kept dumb on purpose: direct definitions,
// no shared code with the library paths they check.

#include <cmath>
#include <limits>
#include <vector>

#include "mpcg/core/tensor.hpp"

namespace oracle {

using mpcg::Shape;
using mpcg::Tensor;

/// Direct cross-correlation, one output element at a time.
inline Tensor conv2d_ref(const Tensor& x, const Tensor& w,
                         const std::vector<float>& bias, int stride, int pad,
                         int groups) {
  const int N = x.n(), Cin = x.c(), H = x.h(), W = x.w();
  const int Cout = w.n(), Cig = w.c(), KH = w.h(), KW = w.w();
  const int Cog = Cout / groups;
  const int OH = (H + 2 * pad - KH) / stride + 1;
  const int OW = (W + 2 * pad - KW) / stride + 1;
  Tensor out(Shape{N, Cout, OH, OW});
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Cout; ++co) {
      const int g = co / Cog;
      for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(co)];
          for (int cig = 0; cig < Cig; ++cig) {
            const int ci = g * Cig + cig;
            for (int ky = 0; ky < KH; ++ky) {
              for (int kx = 0; kx < KW; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += static_cast<double>(x.at(n, ci, iy, ix)) *
                       w.at(co, cig, ky, kx);
              }
            }
          }
          out.at(n, co, oy, ox) = static_cast<float>(acc);
        }
      }
    }
  }
  return out;
}

/// Per-pixel matrix multiply over channels (1x1 convolution reference).
inline Tensor pointwise_ref(const Tensor& x, const Tensor& w,
                            const std::vector<float>& bias) {
  const int N = x.n(), Cin = x.c(), H = x.h(), W = x.w();
  const int Cout = w.n();
  Tensor out(Shape{N, Cout, H, W});
  for (int n = 0; n < N; ++n) {
    for (int y = 0; y < H; ++y) {
      for (int xw = 0; xw < W; ++xw) {
        for (int co = 0; co < Cout; ++co) {
          double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(co)];
          for (int ci = 0; ci < Cin; ++ci) {
            acc += static_cast<double>(x.at(n, ci, y, xw)) * w.at(co, ci, 0, 0);
          }
          out.at(n, co, y, xw) = static_cast<float>(acc);
        }
      }
    }
  }
  return out;
}

/// Sliding-window max with -inf padding.
inline Tensor maxpool_ref(const Tensor& x, int k, int stride, int pad) {
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const int OH = (H + 2 * pad - k) / stride + 1;
  const int OW = (W + 2 * pad - k) / stride + 1;
  Tensor out(Shape{N, C, OH, OW});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
          float best = -std::numeric_limits<float>::infinity();
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * stride - pad + ky;
              const int ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              best = std::max(best, x.at(n, c, iy, ix));
            }
          }
          out.at(n, c, oy, ox) = best;
        }
      }
    }
  }
  return out;
}

/// Windowed multi-head cross-attention computed pixel by pixel in float64.
/// q,k,v are (N,C,H,W); spatial extents are zero-padded up to multiples of
/// `win`, attention runs per window per head, and the result is cropped back.
inline Tensor window_attention_ref(const Tensor& q, const Tensor& k,
                                   const Tensor& v, int win, int heads) {
  const int N = q.n(), C = q.c(), H = q.h(), W = q.w();
  const int dh = C / heads;
  const int Hp = (H + win - 1) / win * win;
  const int Wp = (W + win - 1) / win * win;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto padded_at = [&](const Tensor& t, int n, int c, int y, int x) -> double {
    if (y >= t.h() || x >= t.w()) return 0.0;
    return t.at(n, c, y, x);
  };
  Tensor out(Shape{N, C, H, W});
  for (int n = 0; n < N; ++n) {
    for (int wy = 0; wy < Hp / win; ++wy) {
      for (int wx = 0; wx < Wp / win; ++wx) {
        for (int head = 0; head < heads; ++head) {
          for (int ty = 0; ty < win; ++ty) {
            for (int tx = 0; tx < win; ++tx) {
              const int qy = wy * win + ty, qx = wx * win + tx;
              // scores of this query against every key in the window
              std::vector<double> scores(static_cast<size_t>(win) * win);
              double mx = -std::numeric_limits<double>::infinity();
              for (int sy = 0; sy < win; ++sy) {
                for (int sx = 0; sx < win; ++sx) {
                  double dot = 0.0;
                  for (int d = 0; d < dh; ++d) {
                    const int c = head * dh + d;
                    dot += padded_at(q, n, c, qy, qx) *
                           padded_at(k, n, c, wy * win + sy, wx * win + sx);
                  }
                  scores[static_cast<size_t>(sy) * win + sx] = dot * scale;
                  mx = std::max(mx, dot * scale);
                }
              }
              double denom = 0.0;
              for (auto& s : scores) {
                s = std::exp(s - mx);
                denom += s;
              }
              for (int d = 0; d < dh; ++d) {
                const int c = head * dh + d;
                double acc = 0.0;
                for (int sy = 0; sy < win; ++sy) {
                  for (int sx = 0; sx < win; ++sx) {
                    acc += scores[static_cast<size_t>(sy) * win + sx] / denom *
                           padded_at(v, n, c, wy * win + sy, wx * win + sx);
                  }
                }
                if (qy < H && qx < W) {
                  out.at(n, c, qy, qx) = static_cast<float>(acc);
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

}  // namespace oracle
