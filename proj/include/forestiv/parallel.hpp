#pragma once

#include <Eigen/Core>

#include <functional>

namespace forestiv {

// Process-wide cap on worker threads (0 = hardware concurrency).
void set_max_threads(int n);
int max_threads();

// Runs fn(0..n-1), splitting indices over at most max_threads() workers.
// Tasks must be independent and write only to their own slots; results are
// then identical for any thread count.
void parallel_for(Eigen::Index n, const std::function<void(Eigen::Index)>& fn);

}  // namespace forestiv
