#pragma once

#include <cstddef>
#include <functional>

namespace fpstain {

/// Process-wide cap on worker threads; 0 restores the hardware default.
void set_max_threads(int threads);
int max_threads();

/// Runs body(i) for i in [0, n). Each index is visited exactly once; callers
/// that reduce results must do so by index afterwards to stay deterministic.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace fpstain
