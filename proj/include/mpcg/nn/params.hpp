#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mpcg/core/rng.hpp"
#include "mpcg/core/tensor.hpp"

namespace mpcg::nn {

/// One learnable tensor with its checkpoint name. no_decay exempts the
/// parameter from weight decay (gate logits, norm affine).
struct ParamEntry {
  std::string name;
  Tensor tensor;
  bool no_decay = false;
};

using ParamList = std::vector<ParamEntry>;

inline std::string join_name(const std::string& prefix,
                             const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

/// Glorot-uniform initialization for a conv weight (Cout, Cin/g, kh, kw).
inline Tensor glorot_conv(Rng& rng, Shape s) {
  Tensor t(s);
  const double fan_in = static_cast<double>(s.c) * s.h * s.w;
  const double fan_out = static_cast<double>(s.n) * s.h * s.w;
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    t.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
  }
  t.set_requires_grad(true);
  return t;
}

inline Tensor zero_bias(int c) {
  Tensor t(Shape{1, c, 1, 1});
  t.set_requires_grad(true);
  return t;
}

inline std::int64_t count_params(const ParamList& params) {
  std::int64_t total = 0;
  for (const auto& p : params) total += p.tensor.numel();
  return total;
}

}  // namespace mpcg::nn
