#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace qfbsde {

// Global worker count. Results never depend on it: work is split into blocks
// of a fixed size and every reduction walks the blocks in index order.
int thread_count();
void set_thread_count(int n);

inline constexpr std::size_t kBlockSize = 8192;

inline std::size_t block_count(std::size_t n) {
  return (n + kBlockSize - 1) / kBlockSize;
}

// Runs fn(block_index, begin, end) over [0, n) split into fixed-size blocks.
// Blocks may run concurrently; fn must only write block-local state.
inline void for_blocks(std::size_t n,
                       const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  const std::size_t nblocks = block_count(n);
  if (nblocks == 0) return;
  const int workers = std::min<int>(thread_count(), static_cast<int>(nblocks));
  if (workers <= 1) {
    for (std::size_t b = 0; b < nblocks; ++b)
      fn(b, b * kBlockSize, std::min(n, (b + 1) * kBlockSize));
    return;
  }
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= nblocks) return;
      fn(b, b * kBlockSize, std::min(n, (b + 1) * kBlockSize));
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers) - 1);
  for (int i = 1; i < workers; ++i) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
}

}  // namespace qfbsde
