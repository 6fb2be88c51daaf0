#pragma once

// Tensor operation set: convolutions, pooling/resampling, shape moves,
// elementwise math, batched matmul, normalization, gradient checking.

#include "mpcg/ops/conv.hpp"
#include "mpcg/ops/elementwise.hpp"
#include "mpcg/ops/gradcheck.hpp"
#include "mpcg/ops/matmul_norm.hpp"
#include "mpcg/ops/pool_resize.hpp"
#include "mpcg/ops/shape_ops.hpp"
