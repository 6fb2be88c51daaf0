#pragma once

#include <cmath>

#include "mpcg/core/tape.hpp"
#include "mpcg/core/tensor.hpp"

namespace mpcg::ops {

namespace detail {

// Shapes must match exactly; the only permitted broadcast is a true scalar.
inline bool scalar_broadcast(const Tensor& a, const Tensor& b) {
  return b.numel() == 1 && a.numel() != 1;
}

inline void check_binary(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return;
  if (scalar_broadcast(a, b) || scalar_broadcast(b, a)) return;
  throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() +
                   " vs " + b.shape().str() +
                   " (only scalar broadcast is allowed)");
}

}  // namespace detail

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  detail::check_binary(a, b, "add");
  const bool bs = detail::scalar_broadcast(a, b);
  const bool as = detail::scalar_broadcast(b, a);
  const Tensor& big = as ? b : a;
  Tensor out(big.shape());
  const std::int64_t count = out.numel();
  const float* ad = a.data();
  const float* bd = b.data();
  float* od = out.data();
  for (std::int64_t i = 0; i < count; ++i) {
    od[i] = (as ? ad[0] : ad[i]) + (bs ? bd[0] : bd[i]);
  }
  mpcg::detail::check_finite(out, "add");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor ac = a, bc = b, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated()) return;
      const float* gy = oc.grad_vec().data();
      const std::int64_t n = oc.numel();
      if (ac.needs_grad()) {
        float* ga = ac.grad_data();
        if (as) {
          double s = 0.0;
          for (std::int64_t i = 0; i < n; ++i) s += gy[i];
          ga[0] += static_cast<float>(s);
        } else {
          for (std::int64_t i = 0; i < n; ++i) ga[i] += gy[i];
        }
      }
      if (bc.needs_grad()) {
        float* gb = bc.grad_data();
        if (bs) {
          double s = 0.0;
          for (std::int64_t i = 0; i < n; ++i) s += gy[i];
          gb[0] += static_cast<float>(s);
        } else {
          for (std::int64_t i = 0; i < n; ++i) gb[i] += gy[i];
        }
      }
    });
  }
  return out;
}

inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  detail::check_binary(a, b, "mul");
  const bool bs = detail::scalar_broadcast(a, b);
  const bool as = detail::scalar_broadcast(b, a);
  const Tensor& big = as ? b : a;
  Tensor out(big.shape());
  const std::int64_t count = out.numel();
  const float* ad = a.data();
  const float* bd = b.data();
  float* od = out.data();
  for (std::int64_t i = 0; i < count; ++i) {
    od[i] = (as ? ad[0] : ad[i]) * (bs ? bd[0] : bd[i]);
  }
  mpcg::detail::check_finite(out, "mul");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor ac = a, bc = b, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated()) return;
      const float* gy = oc.grad_vec().data();
      const std::int64_t n = oc.numel();
      if (ac.needs_grad()) {
        float* ga = ac.grad_data();
        if (as) {
          double s = 0.0;
          for (std::int64_t i = 0; i < n; ++i) {
            s += static_cast<double>(gy[i]) * bc.data()[i];
          }
          ga[0] += static_cast<float>(s);
        } else {
          for (std::int64_t i = 0; i < n; ++i) {
            ga[i] += gy[i] * (bs ? bc.data()[0] : bc.data()[i]);
          }
        }
      }
      if (bc.needs_grad()) {
        float* gb = bc.grad_data();
        if (bs) {
          double s = 0.0;
          for (std::int64_t i = 0; i < n; ++i) {
            s += static_cast<double>(gy[i]) * ac.data()[i];
          }
          gb[0] += static_cast<float>(s);
        } else {
          for (std::int64_t i = 0; i < n; ++i) {
            gb[i] += gy[i] * (as ? ac.data()[0] : ac.data()[i]);
          }
        }
      }
    });
  }
  return out;
}

/// a*x + b with scalar constants (not parameters).
inline Tensor scale_shift(Tape* tape, const Tensor& x, float a, float b) {
  Tensor out(x.shape());
  const std::int64_t count = out.numel();
  const float* xd = x.data();
  float* od = out.data();
  for (std::int64_t i = 0; i < count; ++i) od[i] = a * xd[i] + b;
  mpcg::detail::check_finite(out, "scale_shift");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated() || !xc.needs_grad()) return;
      const float* gy = oc.grad_vec().data();
      float* gx = xc.grad_data();
      for (std::int64_t i = 0; i < oc.numel(); ++i) gx[i] += a * gy[i];
    });
  }
  return out;
}

namespace detail {

inline double sigmoid_d(double v) {
  if (v >= 0.0) {
    return 1.0 / (1.0 + std::exp(-v));
  }
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace detail

inline Tensor sigmoid(Tape* tape, const Tensor& x) {
  Tensor out(x.shape());
  const std::int64_t count = out.numel();
  const float* xd = x.data();
  float* od = out.data();
  for (std::int64_t i = 0; i < count; ++i) {
    od[i] = static_cast<float>(detail::sigmoid_d(xd[i]));
  }
  mpcg::detail::check_finite(out, "sigmoid");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated() || !xc.needs_grad()) return;
      const float* gy = oc.grad_vec().data();
      const float* y = oc.data();
      float* gx = xc.grad_data();
      for (std::int64_t i = 0; i < oc.numel(); ++i) {
        gx[i] += gy[i] * y[i] * (1.0f - y[i]);
      }
    });
  }
  return out;
}

inline Tensor relu(Tape* tape, const Tensor& x) {
  Tensor out(x.shape());
  const std::int64_t count = out.numel();
  const float* xd = x.data();
  float* od = out.data();
  for (std::int64_t i = 0; i < count; ++i) od[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
  mpcg::detail::check_finite(out, "relu");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated() || !xc.needs_grad()) return;
      const float* gy = oc.grad_vec().data();
      const float* xv = xc.data();
      float* gx = xc.grad_data();
      for (std::int64_t i = 0; i < oc.numel(); ++i) {
        if (xv[i] > 0.0f) gx[i] += gy[i];
      }
    });
  }
  return out;
}

/// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
inline Tensor gelu(Tape* tape, const Tensor& x) {
  Tensor out(x.shape());
  const std::int64_t count = out.numel();
  const float* xd = x.data();
  float* od = out.data();
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  for (std::int64_t i = 0; i < count; ++i) {
    const double v = xd[i];
    od[i] = static_cast<float>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  mpcg::detail::check_finite(out, "gelu");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated() || !xc.needs_grad()) return;
      const float* gy = oc.grad_vec().data();
      const float* xv = xc.data();
      float* gx = xc.grad_data();
      constexpr double kInvSqrt2Pi = 0.39894228040143267794;
      for (std::int64_t i = 0; i < oc.numel(); ++i) {
        const double v = xv[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        gx[i] += gy[i] * static_cast<float>(cdf + v * pdf);
      }
    });
  }
  return out;
}

/// Selection form of the binary-gate exponent: gate 0 returns an all-ones
/// tensor, gate 1 returns x unchanged. Defined as a selection, never as a
/// real-valued power, so negative inputs are legal.
inline Tensor power_select(Tape* tape, const Tensor& x, int gate) {
  if (gate != 0 && gate != 1) {
    throw ShapeError("power_select: gate must be 0 or 1");
  }
  Tensor out = gate == 1 ? x.clone_values() : Tensor::ones(x.shape());

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, oc = out;
    tape->record([=]() mutable {
      if (gate == 0) return;  // constant ones: no gradient to x
      if (!oc.grad_allocated() || !xc.needs_grad()) return;
      const float* gy = oc.grad_vec().data();
      float* gx = xc.grad_data();
      for (std::int64_t i = 0; i < oc.numel(); ++i) gx[i] += gy[i];
    });
  }
  return out;
}

/// Sum of all elements to a (1,1,1,1) scalar; float64 accumulation.
inline Tensor sum_all(Tape* tape, const Tensor& x) {
  double s = 0.0;
  const float* xd = x.data();
  for (std::int64_t i = 0; i < x.numel(); ++i) s += xd[i];
  Tensor out = Tensor::scalar(static_cast<float>(s));
  mpcg::detail::check_finite(out, "sum_all");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated() || !xc.needs_grad()) return;
      const float g = oc.grad_vec()[0];
      if (g == 0.0f) return;
      float* gx = xc.grad_data();
      for (std::int64_t i = 0; i < xc.numel(); ++i) gx[i] += g;
    });
  }
  return out;
}

/// x (N,C,H,W) scaled per channel by s (N,C,1,1).
inline Tensor scale_channels(Tape* tape, const Tensor& x, const Tensor& s) {
  if (s.n() != x.n() || s.c() != x.c() || s.h() != 1 || s.w() != 1) {
    throw ShapeError("scale_channels: scale must be (N,C,1,1) matching x, got " +
                     s.shape().str() + " for x " + x.shape().str());
  }
  const int N = x.n(), C = x.c();
  const std::int64_t px = static_cast<std::int64_t>(x.h()) * x.w();
  Tensor out(x.shape());
  const float* xd = x.data();
  const float* sd = s.data();
  float* od = out.data();
  for (std::int64_t plane = 0; plane < static_cast<std::int64_t>(N) * C;
       ++plane) {
    const float sv = sd[plane];
    const float* xp = xd + plane * px;
    float* op = od + plane * px;
    for (std::int64_t i = 0; i < px; ++i) op[i] = xp[i] * sv;
  }
  mpcg::detail::check_finite(out, "scale_channels");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, sc = s, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated()) return;
      const float* gy = oc.grad_vec().data();
      if (xc.needs_grad()) {
        float* gx = xc.grad_data();
        for (std::int64_t plane = 0; plane < static_cast<std::int64_t>(N) * C;
             ++plane) {
          const float sv = sc.data()[plane];
          for (std::int64_t i = 0; i < px; ++i) {
            gx[plane * px + i] += gy[plane * px + i] * sv;
          }
        }
      }
      if (sc.needs_grad()) {
        float* gs = sc.grad_data();
        for (std::int64_t plane = 0; plane < static_cast<std::int64_t>(N) * C;
             ++plane) {
          double acc = 0.0;
          for (std::int64_t i = 0; i < px; ++i) {
            acc += static_cast<double>(gy[plane * px + i]) *
                   xc.data()[plane * px + i];
          }
          gs[plane] += static_cast<float>(acc);
        }
      }
    });
  }
  return out;
}

/// x (N,C,H,W) scaled per pixel by m (N,1,H,W).
inline Tensor scale_spatial(Tape* tape, const Tensor& x, const Tensor& m) {
  if (m.n() != x.n() || m.c() != 1 || m.h() != x.h() || m.w() != x.w()) {
    throw ShapeError("scale_spatial: map must be (N,1,H,W) matching x, got " +
                     m.shape().str() + " for x " + x.shape().str());
  }
  const int N = x.n(), C = x.c();
  const std::int64_t px = static_cast<std::int64_t>(x.h()) * x.w();
  Tensor out(x.shape());
  const float* xd = x.data();
  const float* md = m.data();
  float* od = out.data();
  for (int n = 0; n < N; ++n) {
    const float* mp = md + static_cast<std::int64_t>(n) * px;
    for (int c = 0; c < C; ++c) {
      const std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * px;
      for (std::int64_t i = 0; i < px; ++i) od[base + i] = xd[base + i] * mp[i];
    }
  }
  mpcg::detail::check_finite(out, "scale_spatial");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, mc = m, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated()) return;
      const float* gy = oc.grad_vec().data();
      if (xc.needs_grad()) {
        float* gx = xc.grad_data();
        for (int n = 0; n < N; ++n) {
          const float* mp = mc.data() + static_cast<std::int64_t>(n) * px;
          for (int c = 0; c < C; ++c) {
            const std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * px;
            for (std::int64_t i = 0; i < px; ++i) {
              gx[base + i] += gy[base + i] * mp[i];
            }
          }
        }
      }
      if (mc.needs_grad()) {
        float* gm = mc.grad_data();
        for (int n = 0; n < N; ++n) {
          for (std::int64_t i = 0; i < px; ++i) {
            double acc = 0.0;
            for (int c = 0; c < C; ++c) {
              const std::int64_t base =
                  (static_cast<std::int64_t>(n) * C + c) * px;
              acc += static_cast<double>(gy[base + i]) * xc.data()[base + i];
            }
            gm[static_cast<std::int64_t>(n) * px + i] += static_cast<float>(acc);
          }
        }
      }
    });
  }
  return out;
}

}  // namespace mpcg::ops
