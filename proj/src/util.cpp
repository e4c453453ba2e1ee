#include "fnat/util.hpp"

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace fnat {

void parallel_chunks(int64_t n, int workers,
                     const std::function<void(int chunk, int64_t lo, int64_t hi)>& fn) {
  if (n <= 0) return;
  workers = std::max(1, workers);
  const int64_t chunk_size = (n + workers - 1) / workers;
  if (workers == 1 || chunk_size >= n) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
  for (int c = 0; c < workers; ++c) {
    const int64_t lo = static_cast<int64_t>(c) * chunk_size;
    const int64_t hi = std::min(n, lo + chunk_size);
    if (lo >= hi) break;
    threads.emplace_back([c, lo, hi, &fn, &errors] {
      try {
        fn(c, lo, hi);
      } catch (...) {
        errors[static_cast<size_t>(c)] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace fnat
