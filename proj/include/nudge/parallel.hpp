#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace nudge {

// Thread cap: NUDGE_ENGINE_THREADS env var, else hardware concurrency.
inline unsigned thread_limit() {
  static unsigned cached = [] {
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("NUDGE_ENGINE_THREADS")) {
      long v = std::strtol(env, nullptr, 10);
      if (v >= 1) return std::min<unsigned>(static_cast<unsigned>(v), 256u);
    }
    return hw;
  }();
  return cached;
}

// Runs fn(i) for i in [0, n). Each index must write only its own slots, so
// results do not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  unsigned nt = std::min<std::size_t>(thread_limit(), n);
  if (nt <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(nt);
  std::size_t chunk = (n + nt - 1) / nt;
  for (unsigned t = 0; t < nt; ++t) {
    std::size_t lo = t * chunk;
    std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& w : workers) w.join();
}

}  // namespace nudge
