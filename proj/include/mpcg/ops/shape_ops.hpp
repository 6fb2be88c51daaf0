#pragma once

#include <cstring>
#include <vector>

#include "mpcg/core/tape.hpp"
#include "mpcg/core/tensor.hpp"

namespace mpcg::ops {

/// Concatenates along the channel axis; N,H,W must match.
inline Tensor concat_channels(Tape* tape, const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: empty input list");
  const int N = xs[0].n(), H = xs[0].h(), W = xs[0].w();
  int C = 0;
  for (const auto& x : xs) {
    if (x.n() != N || x.h() != H || x.w() != W) {
      throw ShapeError("concat_channels: mismatched N/H/W, " +
                       xs[0].shape().str() + " vs " + x.shape().str());
    }
    C += x.c();
  }
  Tensor out(Shape{N, C, H, W});
  const std::int64_t px = static_cast<std::int64_t>(H) * W;
  float* od = out.data();
  for (int n = 0; n < N; ++n) {
    std::int64_t coff = 0;
    for (const auto& x : xs) {
      const std::int64_t bytes = static_cast<std::int64_t>(x.c()) * px;
      std::memcpy(od + (static_cast<std::int64_t>(n) * C) * px + coff * px,
                  x.data() + static_cast<std::int64_t>(n) * x.c() * px,
                  static_cast<size_t>(bytes) * sizeof(float));
      coff += x.c();
    }
  }

  if (tape != nullptr) {
    out.mark_tracked();
    std::vector<Tensor> xc = xs;
    Tensor oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated()) return;
      const float* gy = oc.grad_vec().data();
      for (int n = 0; n < N; ++n) {
        std::int64_t coff = 0;
        for (auto& x : xc) {
          if (x.needs_grad()) {
            float* gx = x.grad_data() + static_cast<std::int64_t>(n) * x.c() * px;
            const float* gyp =
                gy + (static_cast<std::int64_t>(n) * C + coff) * px;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(x.c()) * px;
                 ++i) {
              gx[i] += gyp[i];
            }
          }
          coff += x.c();
        }
      }
    });
  }
  return out;
}

/// Splits the channel axis into `parts` equal slices; split(concat(..)) is
/// an exact (bitwise) round trip.
inline std::vector<Tensor> split_channels(Tape* tape, const Tensor& x,
                                          int parts) {
  if (parts < 1) throw ShapeError("split_channels: parts must be >= 1");
  if (x.c() % parts != 0) {
    throw ShapeError("split_channels: channels " + std::to_string(x.c()) +
                     " not divisible by parts " + std::to_string(parts));
  }
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const int Cp = C / parts;
  const std::int64_t px = static_cast<std::int64_t>(H) * W;
  std::vector<Tensor> out;
  out.reserve(parts);
  for (int p = 0; p < parts; ++p) {
    Tensor t(Shape{N, Cp, H, W});
    for (int n = 0; n < N; ++n) {
      std::memcpy(t.data() + static_cast<std::int64_t>(n) * Cp * px,
                  x.data() + (static_cast<std::int64_t>(n) * C + p * Cp) * px,
                  static_cast<size_t>(Cp * px) * sizeof(float));
    }
    out.push_back(t);
  }

  if (tape != nullptr) {
    for (auto& t : out) t.mark_tracked();
    Tensor xc = x;
    std::vector<Tensor> oc = out;
    tape->record([=]() mutable {
      if (!xc.needs_grad()) return;
      bool any = false;
      for (const auto& t : oc) any = any || t.grad_allocated();
      if (!any) return;
      float* gx = xc.grad_data();
      for (int p = 0; p < parts; ++p) {
        if (!oc[p].grad_allocated()) continue;
        const float* gt = oc[p].grad_vec().data();
        for (int n = 0; n < N; ++n) {
          float* gxp = gx + (static_cast<std::int64_t>(n) * C + p * Cp) * px;
          const float* gtp = gt + static_cast<std::int64_t>(n) * Cp * px;
          for (std::int64_t i = 0; i < Cp * px; ++i) gxp[i] += gtp[i];
        }
      }
    });
  }
  return out;
}

/// Zero-pads the bottom/right spatial edges.
inline Tensor pad_spatial(Tape* tape, const Tensor& x, int pad_bottom,
                          int pad_right) {
  if (pad_bottom < 0 || pad_right < 0) {
    throw ShapeError("pad_spatial: negative padding");
  }
  if (pad_bottom == 0 && pad_right == 0 && tape == nullptr) return x;
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const int OH = H + pad_bottom, OW = W + pad_right;
  Tensor out(Shape{N, C, OH, OW});
  for (std::int64_t plane = 0; plane < static_cast<std::int64_t>(N) * C;
       ++plane) {
    for (int y = 0; y < H; ++y) {
      std::memcpy(out.data() + (plane * OH + y) * OW,
                  x.data() + (plane * H + y) * W,
                  static_cast<size_t>(W) * sizeof(float));
    }
  }

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated() || !xc.needs_grad()) return;
      const float* gy = oc.grad_vec().data();
      float* gx = xc.grad_data();
      for (std::int64_t plane = 0; plane < static_cast<std::int64_t>(N) * C;
           ++plane) {
        for (int y = 0; y < H; ++y) {
          const float* gyr = gy + (plane * OH + y) * OW;
          float* gxr = gx + (plane * H + y) * W;
          for (int xw = 0; xw < W; ++xw) gxr[xw] += gyr[xw];
        }
      }
    });
  }
  return out;
}

/// Top-left crop to (h, w).
inline Tensor crop_spatial(Tape* tape, const Tensor& x, int h, int w) {
  if (h < 1 || w < 1 || h > x.h() || w > x.w()) {
    throw ShapeError("crop_spatial: target " + std::to_string(h) + "x" +
                     std::to_string(w) + " out of range for " +
                     x.shape().str());
  }
  if (h == x.h() && w == x.w() && tape == nullptr) return x;
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
  Tensor out(Shape{N, C, h, w});
  for (std::int64_t plane = 0; plane < static_cast<std::int64_t>(N) * C;
       ++plane) {
    for (int y = 0; y < h; ++y) {
      std::memcpy(out.data() + (plane * h + y) * w,
                  x.data() + (plane * H + y) * W,
                  static_cast<size_t>(w) * sizeof(float));
    }
  }

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated() || !xc.needs_grad()) return;
      const float* gy = oc.grad_vec().data();
      float* gx = xc.grad_data();
      for (std::int64_t plane = 0; plane < static_cast<std::int64_t>(N) * C;
           ++plane) {
        for (int y = 0; y < h; ++y) {
          const float* gyr = gy + (plane * h + y) * w;
          float* gxr = gx + (plane * H + y) * W;
          for (int xw = 0; xw < w; ++xw) gxr[xw] += gyr[xw];
        }
      }
    });
  }
  return out;
}

namespace detail {

// out[b', head, t, d] layout for window attention:
//   b' = (n * nWy + wy) * nWx + wx, t = ty * win + tx, channel = head * dh + d.
struct WindowGeom {
  int N, C, H, W, win, heads, dh, nwy, nwx;
};

inline std::int64_t window_src_index(const WindowGeom& g, std::int64_t bp,
                                     int head, int t, int d) {
  const int wx = static_cast<int>(bp % g.nwx);
  const int wy = static_cast<int>((bp / g.nwx) % g.nwy);
  const int n = static_cast<int>(bp / (static_cast<std::int64_t>(g.nwx) * g.nwy));
  const int ty = t / g.win, tx = t % g.win;
  const int c = head * g.dh + d;
  const int y = wy * g.win + ty;
  const int x = wx * g.win + tx;
  return ((static_cast<std::int64_t>(n) * g.C + c) * g.H + y) * g.W + x;
}

}  // namespace detail

/// Rearranges (N,C,H,W) into non-overlapping win x win windows with per-head
/// channel slices: output (N*numWindows, heads, win*win, C/heads). H and W
/// must be multiples of win (pad first).
inline Tensor window_partition(Tape* tape, const Tensor& x, int win,
                               int heads) {
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
  if (win < 1) throw ShapeError("window_partition: window must be >= 1");
  if (H % win != 0 || W % win != 0) {
    throw ShapeError("window_partition: spatial extents " + x.shape().str() +
                     " not multiples of window " + std::to_string(win));
  }
  if (heads < 1 || C % heads != 0) {
    throw ShapeError("window_partition: channels " + std::to_string(C) +
                     " not divisible by heads " + std::to_string(heads));
  }
  detail::WindowGeom g{N, C, H, W, win, heads, C / heads, H / win, W / win};
  const std::int64_t B = static_cast<std::int64_t>(N) * g.nwy * g.nwx;
  const int T = win * win;
  Tensor out(Shape{static_cast<int>(B), heads, T, g.dh});
  const float* xd = x.data();
  float* od = out.data();
  std::int64_t o = 0;
  for (std::int64_t bp = 0; bp < B; ++bp) {
    for (int head = 0; head < heads; ++head) {
      for (int t = 0; t < T; ++t) {
        for (int d = 0; d < g.dh; ++d) {
          od[o++] = xd[detail::window_src_index(g, bp, head, t, d)];
        }
      }
    }
  }

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated() || !xc.needs_grad()) return;
      const float* gy = oc.grad_vec().data();
      float* gx = xc.grad_data();
      std::int64_t o = 0;
      for (std::int64_t bp = 0; bp < B; ++bp) {
        for (int head = 0; head < heads; ++head) {
          for (int t = 0; t < T; ++t) {
            for (int d = 0; d < g.dh; ++d) {
              gx[detail::window_src_index(g, bp, head, t, d)] += gy[o++];
            }
          }
        }
      }
    });
  }
  return out;
}

/// Inverse of window_partition back to (N,C,H,W).
inline Tensor window_merge(Tape* tape, const Tensor& x, int win, int heads,
                           int N, int C, int H, int W) {
  detail::WindowGeom g{N, C, H, W, win, heads, C / heads, H / win, W / win};
  const std::int64_t B = static_cast<std::int64_t>(N) * g.nwy * g.nwx;
  const int T = win * win;
  if (x.n() != B || x.c() != heads || x.h() != T || x.w() != g.dh) {
    throw ShapeError("window_merge: input " + x.shape().str() +
                     " does not match target geometry");
  }
  Tensor out(Shape{N, C, H, W});
  const float* xd = x.data();
  float* od = out.data();
  std::int64_t o = 0;
  for (std::int64_t bp = 0; bp < B; ++bp) {
    for (int head = 0; head < heads; ++head) {
      for (int t = 0; t < T; ++t) {
        for (int d = 0; d < g.dh; ++d) {
          od[detail::window_src_index(g, bp, head, t, d)] = xd[o++];
        }
      }
    }
  }

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated() || !xc.needs_grad()) return;
      const float* gy = oc.grad_vec().data();
      float* gx = xc.grad_data();
      std::int64_t o = 0;
      for (std::int64_t bp = 0; bp < B; ++bp) {
        for (int head = 0; head < heads; ++head) {
          for (int t = 0; t < T; ++t) {
            for (int d = 0; d < g.dh; ++d) {
              gx[o++] += gy[detail::window_src_index(g, bp, head, t, d)];
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace mpcg::ops
