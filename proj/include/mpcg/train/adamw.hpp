#pragma once

#include <cmath>
#include <vector>

#include "mpcg/nn/params.hpp"

namespace mpcg::train {

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Closed form of the step schedule: the base rate halves every 50 epochs.
inline double lr_at_epoch(double lr0, int epoch) {
  return lr0 * std::pow(0.5, epoch / 50);
}

/// AdamW with decoupled weight decay: parameters shrink by lr*wd*p before
/// the bias-corrected Adam delta is applied. Moments are kept in float64;
/// parameters stay float32. Entries flagged no_decay (gate logits, norm
/// affine) are exempt from decay.
class AdamW {
 public:
  AdamW(nn::ParamList& params, AdamWConfig cfg)
      : params_(&params), cfg_(cfg) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(static_cast<size_t>(params[i].tensor.numel()), 0.0);
      v_[i].assign(static_cast<size_t>(params[i].tensor.numel()), 0.0);
    }
  }

  int step_count() const { return t_; }

  /// One update from the currently accumulated gradients.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (size_t pi = 0; pi < params_->size(); ++pi) {
      auto& entry = (*params_)[pi];
      float* p = entry.tensor.data();
      const bool has_grad = entry.tensor.grad_allocated();
      const double wd = entry.no_decay ? 0.0 : cfg_.weight_decay;
      for (std::int64_t i = 0; i < entry.tensor.numel(); ++i) {
        double pv = p[i];
        if (wd != 0.0) pv -= lr * wd * pv;
        const double g = has_grad ? entry.tensor.grad_vec()[static_cast<size_t>(i)] : 0.0;
        double& m = m_[pi][static_cast<size_t>(i)];
        double& v = v_[pi][static_cast<size_t>(i)];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        pv -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        p[i] = static_cast<float>(pv);
      }
    }
  }

 private:
  nn::ParamList* params_;
  AdamWConfig cfg_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace mpcg::train
