#pragma once

#include <string>
#include <vector>

#include "mpcg/core/tape.hpp"
#include "mpcg/core/tensor.hpp"
#include "mpcg/nn/params.hpp"
#include "mpcg/ops/elementwise.hpp"

namespace mpcg::nn {

/// Learnable binary coupling gates for one gated fusion site.
///
/// Entry (j, i) of the logit matrix controls whether branch j's feature map
/// multiplies into branch i's fused output. The hard gate value is
/// [sigmoid(logit) > 0.5], which by monotonicity is exactly logit > 0; a
/// logit of 0 (sigmoid = 0.5) is CLOSED, so a fresh gate set with all-zero
/// logits starts fully closed. The diagonal is unused and reported as 0.
class GateSet {
 public:
  explicit GateSet(int k) : k_(k), logits_(Shape{1, 1, k, k}) {
    logits_.set_requires_grad(true);
  }

  int k() const { return k_; }
  Tensor& logits() { return logits_; }
  const Tensor& logits() const { return logits_; }

  float logit(int j, int i) const { return logits_.at(0, 0, j, i); }
  void set_logit(int j, int i, float v) { logits_.at(0, 0, j, i) = v; }

  /// Hard gate from branch j into branch i.
  bool open(int j, int i) const { return j != i && logit(j, i) > 0.0f; }

  /// K*K row-major binary matrix, diagonal 0.
  std::vector<int> gate_matrix() const {
    std::vector<int> m(static_cast<size_t>(k_) * k_, 0);
    for (int j = 0; j < k_; ++j) {
      for (int i = 0; i < k_; ++i) {
        m[static_cast<size_t>(j) * k_ + i] = open(j, i) ? 1 : 0;
      }
    }
    return m;
  }

  /// Row-major bitstring (k*k chars) for the training log.
  std::string bits() const {
    std::string s;
    s.reserve(static_cast<size_t>(k_) * k_);
    for (int v : gate_matrix()) s.push_back(v ? '1' : '0');
    return s;
  }

  void collect_params(const std::string& prefix, ParamList& out) {
    out.push_back({join_name(prefix, "logits"), logits_, /*no_decay=*/true});
  }

 private:
  int k_;
  Tensor logits_;
};

/// Gated multiplicative fusion for branch i:
///
///   forward:  C_i = M_i * prod over open gates j of M_j   (hard gates)
///   backward: straight-through, as if each coupling factor were the soft
///             interpolation F_j = 1 + s_ji * (M_j - 1), s_ji = sigmoid(logit),
///             so gate logits receive gradient and closed gates can learn to
///             open. F matches the hard factor at s = 0 (all-ones) and s = 1
///             (M_j), and is defined for negative activations where a literal
///             real-valued power is not.
inline Tensor gated_product(Tape* tape, const std::vector<Tensor>& branches,
                            GateSet& gates, int index) {
  const int k = gates.k();
  if (static_cast<int>(branches.size()) != k) {
    throw ShapeError("gated_product: expected " + std::to_string(k) +
                     " branches, got " + std::to_string(branches.size()));
  }
  if (index < 0 || index >= k) {
    throw ShapeError("gated_product: branch index out of range");
  }
  for (const auto& b : branches) {
    mpcg::detail::check_same_shape(branches[0], b, "gated_product");
  }

  const Tensor& mi = branches[static_cast<size_t>(index)];
  Tensor out = mi.clone_values();
  for (int j = 0; j < k; ++j) {
    if (!gates.open(j, index)) continue;
    const float* mj = branches[static_cast<size_t>(j)].data();
    float* od = out.data();
    for (std::int64_t e = 0; e < out.numel(); ++e) od[e] *= mj[e];
  }
  mpcg::detail::check_finite(out, "gated_product");

  if (tape != nullptr) {
    out.mark_tracked();
    std::vector<Tensor> bc = branches;
    Tensor logits = gates.logits();
    Tensor oc = out;
    tape->record([=]() mutable {
      if (!oc.grad_allocated()) return;
      const float* gy = oc.grad_vec().data();
      const std::int64_t count = oc.numel();

      // soft sigmoid factors per source branch
      std::vector<double> s(static_cast<size_t>(k), 0.0);
      for (int j = 0; j < k; ++j) {
        if (j == index) continue;
        s[static_cast<size_t>(j)] =
            ops::detail::sigmoid_d(logits.at(0, 0, j, index));
      }

      std::vector<float*> gb(static_cast<size_t>(k), nullptr);
      for (int j = 0; j < k; ++j) {
        if (bc[static_cast<size_t>(j)].needs_grad()) {
          gb[static_cast<size_t>(j)] = bc[static_cast<size_t>(j)].grad_data();
        }
      }
      const bool want_logits = logits.needs_grad();
      std::vector<double> glog(static_cast<size_t>(k), 0.0);

      std::vector<double> f(static_cast<size_t>(k), 1.0);
      for (std::int64_t e = 0; e < count; ++e) {
        const double g = gy[e];
        if (g == 0.0) continue;
        const double mi_v = bc[static_cast<size_t>(index)].data()[e];
        double prod = 1.0;
        for (int j = 0; j < k; ++j) {
          if (j == index) continue;
          const double mj = bc[static_cast<size_t>(j)].data()[e];
          f[static_cast<size_t>(j)] = 1.0 + s[static_cast<size_t>(j)] * (mj - 1.0);
          prod *= f[static_cast<size_t>(j)];
        }
        if (gb[static_cast<size_t>(index)] != nullptr) {
          gb[static_cast<size_t>(index)][e] += static_cast<float>(g * prod);
        }
        for (int j = 0; j < k; ++j) {
          if (j == index) continue;
          // leave-one-out product, computed without division
          double loo = 1.0;
          for (int m = 0; m < k; ++m) {
            if (m == index || m == j) continue;
            loo *= f[static_cast<size_t>(m)];
          }
          const double mj = bc[static_cast<size_t>(j)].data()[e];
          const double common = g * mi_v * loo;
          if (gb[static_cast<size_t>(j)] != nullptr) {
            gb[static_cast<size_t>(j)][e] +=
                static_cast<float>(common * s[static_cast<size_t>(j)]);
          }
          if (want_logits) {
            glog[static_cast<size_t>(j)] +=
                common * (mj - 1.0) * s[static_cast<size_t>(j)] *
                (1.0 - s[static_cast<size_t>(j)]);
          }
        }
      }
      if (want_logits) {
        float* gl = logits.grad_data();
        for (int j = 0; j < k; ++j) {
          if (j == index) continue;
          gl[static_cast<std::int64_t>(j) * k + index] +=
              static_cast<float>(glog[static_cast<size_t>(j)]);
        }
      }
    });
  }
  return out;
}

/// The no-gates ablation: every branch fuses unconditionally with ordinary
/// product gradients and no logit parameters.
inline Tensor product_all_open(Tape* tape, const std::vector<Tensor>& branches,
                               int index) {
  Tensor out = branches[static_cast<size_t>(index)];
  for (int j = 0; j < static_cast<int>(branches.size()); ++j) {
    if (j == index) continue;
    out = ops::mul(tape, out, branches[static_cast<size_t>(j)]);
  }
  return out;
}

}  // namespace mpcg::nn
