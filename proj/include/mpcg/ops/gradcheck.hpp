#pragma once

#include <algorithm>
#include <functional>

#include "mpcg/core/rng.hpp"
#include "mpcg/core/tape.hpp"
#include "mpcg/core/tensor.hpp"
#include "mpcg/ops/elementwise.hpp"

namespace mpcg {

struct FdOptions {
  double h = 1e-2;     // central-difference step (float32 evaluation)
  int directions = 12; // random +-1 probe directions
  std::uint64_t seed = 0xf00dULL;
  // A probe is discarded when its FD estimates at h and h/2 disagree: the
  // probe crossed a non-smooth point (argmax tie, relu kink) and the central
  // estimate is not a valid oracle along that direction. A wrong analytic
  // gradient leaves FD self-consistent, so real defects are never masked.
  double consistency_tol = 5e-3;
};

/// Central-difference Jacobian-vector check of the tape gradient.
///
/// `eval` must re-run the computation reading `wrt`'s current storage and
/// return its (tensor) output. The output is scalarized with a fixed random
/// +-1 weighting u: L = <u, f(.)>. The tape gradient g = dL/d(wrt) is compared
/// against (L(wrt + h v) - L(wrt - h v)) / 2h along probe directions v,
/// reporting the worst relative error.
inline double finite_diff_check(const std::function<Tensor(Tape*)>& eval,
                                Tensor wrt, FdOptions opt = {}) {
  Rng rng(opt.seed);
  wrt.set_requires_grad(true);
  wrt.zero_grad();

  Tape tape;
  Tensor y0 = eval(&tape);
  Tensor u(y0.shape());
  for (std::int64_t i = 0; i < u.numel(); ++i) {
    u.data()[i] = rng.bernoulli(0.5) ? 1.0f : -1.0f;
  }
  Tensor loss = ops::sum_all(&tape, ops::mul(&tape, y0, u));
  backward(tape, loss);
  const std::vector<float> analytic = wrt.grad_vec();

  auto weighted = [&](void) -> double {
    Tensor y = eval(nullptr);
    double s = 0.0;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
      s += static_cast<double>(y.data()[i]) * u.data()[i];
    }
    return s;
  };

  const std::int64_t n = wrt.numel();

  // For +-1 probes, E[<g,v>^2] = |g|^2, so |g| is the typical directional
  // derivative. Probes that cancel far below that scale are float-noise
  // dominated; the floor keeps them from false-alarming while any systematic
  // gradient error still shows up against the gradient's own scale.
  double gnorm = 0.0;
  for (float g : analytic) gnorm += static_cast<double>(g) * g;
  const double floor = std::max(1e-6, 0.05 * std::sqrt(gnorm));

  const std::vector<float> saved = wrt.vec();
  auto eval_shifted = [&](const std::vector<float>& v, double h) {
    for (std::int64_t i = 0; i < n; ++i) {
      wrt.data()[i] = saved[static_cast<size_t>(i)] +
                      static_cast<float>(h) * v[static_cast<size_t>(i)];
    }
    const double l = weighted();
    wrt.vec() = saved;
    return l;
  };

  double worst = 0.0;
  double worst_any = 0.0;
  int valid = 0;
  const int budget = opt.directions * 3;
  for (int probe = 0; probe < budget && valid < opt.directions; ++probe) {
    std::vector<float> v(static_cast<size_t>(n));
    for (auto& e : v) e = rng.bernoulli(0.5) ? 1.0f : -1.0f;

    const double fd_full =
        (eval_shifted(v, opt.h) - eval_shifted(v, -opt.h)) / (2.0 * opt.h);
    const double fd_half =
        (eval_shifted(v, opt.h / 2.0) - eval_shifted(v, -opt.h / 2.0)) / opt.h;

    double an = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      an += static_cast<double>(analytic[static_cast<size_t>(i)]) *
            v[static_cast<size_t>(i)];
    }
    const double denom = std::max({std::abs(fd_half), std::abs(an), floor});
    const double err = std::abs(fd_half - an) / denom;
    worst_any = std::max(worst_any, err);
    if (std::abs(fd_full - fd_half) / denom > opt.consistency_tol) {
      continue;  // FD itself is unreliable along this direction
    }
    ++valid;
    worst = std::max(worst, err);
  }
  // if nearly every probe crossed a kink, refuse to hide that
  return valid >= std::min(3, opt.directions) ? worst : worst_any;
}

/// Convenience wrapper: checks d f(x) / d x for a tensor -> tensor function.
inline double finite_diff_check(
    const std::function<Tensor(Tape*, const Tensor&)>& f, const Tensor& x,
    FdOptions opt = {}) {
  Tensor probe = x.clone_values();
  return finite_diff_check(
      [&f, probe](Tape* tape) { return f(tape, probe); }, probe, opt);
}

}  // namespace mpcg
