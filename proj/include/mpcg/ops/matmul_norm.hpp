#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "mpcg/core/parallel.hpp"
#include "mpcg/core/tape.hpp"
#include "mpcg/core/tensor.hpp"

namespace mpcg::ops {

/// Softmax over the last (W) axis, max-subtracted, float64 sums.
inline Tensor softmax_lastdim(Tape* tape, const Tensor& x) {
  const std::int64_t rows = x.numel() / x.w();
  const int L = x.w();
  if (L < 1) throw ShapeError("softmax_lastdim: empty axis");
  Tensor out(x.shape());
  const float* xd = x.data();
  float* od = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* xr = xd + r * L;
    float* orow = od + r * L;
    float m = xr[0];
    for (int i = 1; i < L; ++i) m = std::max(m, xr[i]);
    double sum = 0.0;
    for (int i = 0; i < L; ++i) {
      const double e = std::exp(static_cast<double>(xr[i]) - m);
      orow[i] = static_cast<float>(e);
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int i = 0; i < L; ++i) {
      orow[i] = static_cast<float>(orow[i] * inv);
    }
  }
  mpcg::detail::check_finite(out, "softmax_lastdim");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated() || !xc.needs_grad()) return;
      const float* gy = oc.grad_vec().data();
      const float* y = oc.data();
      float* gx = xc.grad_data();
      for (std::int64_t r = 0; r < rows; ++r) {
        const float* gyr = gy + r * L;
        const float* yr = y + r * L;
        float* gxr = gx + r * L;
        double dot = 0.0;
        for (int i = 0; i < L; ++i) {
          dot += static_cast<double>(gyr[i]) * yr[i];
        }
        for (int i = 0; i < L; ++i) {
          gxr[i] += static_cast<float>(yr[i] * (gyr[i] - dot));
        }
      }
    });
  }
  return out;
}

namespace detail {

// C(M,P) = opA(A) * opB(B) for one batch plane, float64 accumulation.
inline void mm_plane(const float* A, const float* B, float* C, int M, int K,
                     int P, bool ta, bool tb) {
  for (int i = 0; i < M; ++i) {
    for (int j = 0; j < P; ++j) {
      double acc = 0.0;
      for (int k = 0; k < K; ++k) {
        const float av = ta ? A[k * M + i] : A[i * K + k];
        const float bv = tb ? B[j * K + k] : B[k * P + j];
        acc += static_cast<double>(av) * bv;
      }
      C[i * P + j] = static_cast<float>(acc);
    }
  }
}

// C += opA(A) * opB(B), used by matmul backward.
inline void mm_plane_acc(const float* A, const float* B, float* C, int M,
                         int K, int P, bool ta, bool tb) {
  for (int i = 0; i < M; ++i) {
    for (int j = 0; j < P; ++j) {
      double acc = 0.0;
      for (int k = 0; k < K; ++k) {
        const float av = ta ? A[k * M + i] : A[i * K + k];
        const float bv = tb ? B[j * K + k] : B[k * P + j];
        acc += static_cast<double>(av) * bv;
      }
      C[i * P + j] += static_cast<float>(acc);
    }
  }
}

}  // namespace detail

/// Batched matrix multiply over the last two axes: (B1,B2,M,K) x (B1,B2,K,P)
/// -> (B1,B2,M,P), with optional transposition of either operand's last two
/// axes.
inline Tensor matmul_batched(Tape* tape, const Tensor& a, const Tensor& b,
                             bool transpose_a = false,
                             bool transpose_b = false) {
  if (a.n() != b.n() || a.c() != b.c()) {
    throw ShapeError("matmul_batched: batch extents differ, " +
                     a.shape().str() + " vs " + b.shape().str());
  }
  const int M = transpose_a ? a.w() : a.h();
  const int K = transpose_a ? a.h() : a.w();
  const int Kb = transpose_b ? b.w() : b.h();
  const int P = transpose_b ? b.h() : b.w();
  if (K != Kb) {
    throw ShapeError("matmul_batched: inner extents differ (" +
                     std::to_string(K) + " vs " + std::to_string(Kb) + ") for " +
                     a.shape().str() + " x " + b.shape().str());
  }
  const std::int64_t batch = static_cast<std::int64_t>(a.n()) * a.c();
  Tensor out(Shape{a.n(), a.c(), M, P});
  const float* ad = a.data();
  const float* bd = b.data();
  float* od = out.data();
  const std::int64_t asz = static_cast<std::int64_t>(a.h()) * a.w();
  const std::int64_t bsz = static_cast<std::int64_t>(b.h()) * b.w();
  const std::int64_t osz = static_cast<std::int64_t>(M) * P;
  parallel_for(batch, [&](std::int64_t bi) {
    detail::mm_plane(ad + bi * asz, bd + bi * bsz, od + bi * osz, M, K, P,
                     transpose_a, transpose_b);
  });
  mpcg::detail::check_finite(out, "matmul_batched");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor ac = a, bc = b, oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated()) return;
      const float* gy = oc.grad_vec().data();
      // With G = dL/dC and C = opA(A)·opB(B):
      //   ta=0: dA = G·opB(B)^T            ta=1: dA = opB(B)·G^T
      //   tb=0: dB = opA(A)^T·G            tb=1: dB = G^T·opA(A)
      if (ac.needs_grad()) {
        float* ga = ac.grad_data();
        for (std::int64_t bi = 0; bi < batch; ++bi) {
          const float* gplane = gy + bi * osz;
          const float* bplane = bc.data() + bi * bsz;
          float* gaplane = ga + bi * asz;
          if (!transpose_a) {
            // (M,K) = (M,P) x opB(B)(K,P)^T
            detail::mm_plane_acc(gplane, bplane, gaplane, M, P, K, false,
                                 !transpose_b);
          } else {
            // (K,M) = opB(B)(K,P) x (M,P)^T
            detail::mm_plane_acc(bplane, gplane, gaplane, K, P, M, transpose_b,
                                 true);
          }
        }
      }
      if (bc.needs_grad()) {
        float* gb = bc.grad_data();
        for (std::int64_t bi = 0; bi < batch; ++bi) {
          const float* gplane = gy + bi * osz;
          const float* aplane = ac.data() + bi * asz;
          float* gbplane = gb + bi * bsz;
          if (!transpose_b) {
            // (K,P) = opA(A)(M,K)^T x (M,P)
            detail::mm_plane_acc(aplane, gplane, gbplane, K, M, P, !transpose_a,
                                 false);
          } else {
            // (P,K) = (M,P)^T x opA(A)(M,K)
            detail::mm_plane_acc(gplane, aplane, gbplane, P, M, K, true,
                                 transpose_a);
          }
        }
      }
    });
  }
  return out;
}

/// Group normalization over (channels/groups, H, W) slices per item.
/// Affine scale/shift are optional (1,C,1,1) parameters.
inline Tensor group_norm(Tape* tape, const Tensor& x, int groups,
                         double eps = 1e-5,
                         const std::optional<Tensor>& gamma = {},
                         const std::optional<Tensor>& beta = {}) {
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
  if (groups < 1 || C % groups != 0) {
    throw ShapeError("group_norm: channels " + std::to_string(C) +
                     " not divisible by groups " + std::to_string(groups));
  }
  if (gamma && (gamma->c() != C || gamma->n() != 1 || gamma->h() != 1 ||
                gamma->w() != 1)) {
    throw ShapeError("group_norm: gamma must be (1,C,1,1)");
  }
  if (beta && (beta->c() != C || beta->n() != 1 || beta->h() != 1 ||
               beta->w() != 1)) {
    throw ShapeError("group_norm: beta must be (1,C,1,1)");
  }
  const int Cg = C / groups;
  const std::int64_t px = static_cast<std::int64_t>(H) * W;
  const std::int64_t gsz = Cg * px;

  Tensor out(x.shape());
  auto xhat = std::make_shared<std::vector<float>>(static_cast<size_t>(x.numel()));
  auto inv_std =
      std::make_shared<std::vector<double>>(static_cast<size_t>(N) * groups);
  const float* xd = x.data();
  float* od = out.data();
  for (int n = 0; n < N; ++n) {
    for (int g = 0; g < groups; ++g) {
      const std::int64_t base = (static_cast<std::int64_t>(n) * C + g * Cg) * px;
      double mean = 0.0;
      for (std::int64_t i = 0; i < gsz; ++i) mean += xd[base + i];
      mean /= static_cast<double>(gsz);
      double var = 0.0;
      for (std::int64_t i = 0; i < gsz; ++i) {
        const double d = xd[base + i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(gsz);
      const double istd = 1.0 / std::sqrt(var + eps);
      (*inv_std)[static_cast<std::int64_t>(n) * groups + g] = istd;
      for (std::int64_t i = 0; i < gsz; ++i) {
        (*xhat)[base + i] = static_cast<float>((xd[base + i] - mean) * istd);
      }
    }
    for (int c = 0; c < C; ++c) {
      const float gm = gamma ? gamma->data()[c] : 1.0f;
      const float bt = beta ? beta->data()[c] : 0.0f;
      const std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * px;
      for (std::int64_t i = 0; i < px; ++i) {
        od[base + i] = gm * (*xhat)[base + i] + bt;
      }
    }
  }
  mpcg::detail::check_finite(out, "group_norm");

  if (tape != nullptr) {
    out.mark_tracked();
    Tensor xc = x, oc = out;
    std::optional<Tensor> gmc = gamma, btc = beta;
    tape->record([=]() mutable {
      if (!oc.grad_allocated()) return;
      const float* gy = oc.grad_vec().data();
      if (gmc && gmc->needs_grad()) {
        float* gg = gmc->grad_data();
        for (int c = 0; c < C; ++c) {
          double s = 0.0;
          for (int n = 0; n < N; ++n) {
            const std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * px;
            for (std::int64_t i = 0; i < px; ++i) {
              s += static_cast<double>(gy[base + i]) * (*xhat)[base + i];
            }
          }
          gg[c] += static_cast<float>(s);
        }
      }
      if (btc && btc->needs_grad()) {
        float* gb = btc->grad_data();
        for (int c = 0; c < C; ++c) {
          double s = 0.0;
          for (int n = 0; n < N; ++n) {
            const std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * px;
            for (std::int64_t i = 0; i < px; ++i) s += gy[base + i];
          }
          gb[c] += static_cast<float>(s);
        }
      }
      if (xc.needs_grad()) {
        float* gx = xc.grad_data();
        for (int n = 0; n < N; ++n) {
          for (int g = 0; g < groups; ++g) {
            const std::int64_t base =
                (static_cast<std::int64_t>(n) * C + g * Cg) * px;
            const double istd =
                (*inv_std)[static_cast<std::int64_t>(n) * groups + g];
            // dL/dxhat_i = gy_i * gamma_c
            double mean_d = 0.0, mean_dx = 0.0;
            for (int cg = 0; cg < Cg; ++cg) {
              const int c = g * Cg + cg;
              const float gm = gmc ? gmc->data()[c] : 1.0f;
              const std::int64_t cb = base + static_cast<std::int64_t>(cg) * px;
              for (std::int64_t i = 0; i < px; ++i) {
                const double dxh = static_cast<double>(gy[cb + i]) * gm;
                mean_d += dxh;
                mean_dx += dxh * (*xhat)[cb + i];
              }
            }
            mean_d /= static_cast<double>(gsz);
            mean_dx /= static_cast<double>(gsz);
            for (int cg = 0; cg < Cg; ++cg) {
              const int c = g * Cg + cg;
              const float gm = gmc ? gmc->data()[c] : 1.0f;
              const std::int64_t cb = base + static_cast<std::int64_t>(cg) * px;
              for (std::int64_t i = 0; i < px; ++i) {
                const double dxh = static_cast<double>(gy[cb + i]) * gm;
                gx[cb + i] += static_cast<float>(
                    istd * (dxh - mean_d - (*xhat)[cb + i] * mean_dx));
              }
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace mpcg::ops
