#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mpcg/core/errors.hpp"
#include "mpcg/core/tensor.hpp"

namespace mpcg {

/// Ordered record of executed differentiable operations. backward() replays
/// the record in exact reverse execution order; node callbacks accumulate
/// (add into) input gradients, never overwrite.
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  void run_backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
};

/// Seeds d(loss)/d(loss) = 1 and propagates gradients back through the tape.
/// The loss must be a scalar produced on this tape.
inline void backward(Tape& tape, Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     loss.shape().str());
  }
  loss.grad_vec()[0] += 1.0f;
  tape.run_backward();
}

}  // namespace mpcg
