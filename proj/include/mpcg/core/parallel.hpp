#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace mpcg {

/// Intra-op worker cap, read once from MPCG_THREADS (default 1).
inline int max_threads() {
  static const int cached = [] {
    const char* env = std::getenv("MPCG_THREADS");
    if (env == nullptr) return 1;
    const int v = std::atoi(env);
    return v >= 1 ? v : 1;
  }();
  return cached;
}

/// Runs body(i) for i in [0, count). Each index is processed by exactly one
/// worker with the same per-index serial arithmetic, so results are bitwise
/// identical for every thread count. Callers must keep per-index work disjoint.
template <typename Body>
void parallel_for(std::int64_t count, const Body& body) {
  const int threads = max_threads();
  if (threads <= 1 || count <= 1) {
    for (std::int64_t i = 0; i < count; ++i) body(i);
    return;
  }
  const int workers = static_cast<int>(std::min<std::int64_t>(threads, count));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      for (std::int64_t i = t; i < count; i += workers) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace mpcg
