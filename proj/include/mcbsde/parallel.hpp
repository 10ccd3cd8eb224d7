#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mcbsde {

/// Runs body(i) for i in [0, n). Each index owns its output slot, so results
/// are identical for any thread count; reductions stay with the caller, which
/// sums slots in index order.
template <class Body>
void parallel_for(int n, Body&& body) {
  if (n <= 0) return;
  unsigned hw = std::thread::hardware_concurrency();
  int n_threads = std::max(1, std::min<int>(hw == 0 ? 1 : static_cast<int>(hw), n));
  if (n_threads == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    try {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n) return;
        body(i);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mu);
      if (!error) error = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

} // namespace mcbsde
