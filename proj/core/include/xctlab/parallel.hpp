#pragma once

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

namespace xct {

/// Runs fn(begin, end) over contiguous chunks of [0, n) on up to
/// hardware_concurrency threads. Callers must write disjoint outputs per
/// index so the result is independent of the split.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn, std::int64_t min_chunk = 1) {
  const auto hw = static_cast<std::int64_t>(std::max(1u, std::thread::hardware_concurrency()));
  const std::int64_t workers = std::clamp<std::int64_t>(n / std::max<std::int64_t>(1, min_chunk), 1, hw);
  if (workers <= 1) {
    fn(std::int64_t{0}, n);
    return;
  }
  std::vector<std::jthread> threads;
  threads.reserve(static_cast<std::size_t>(workers));
  for (std::int64_t w = 0; w < workers; ++w) {
    const std::int64_t begin = n * w / workers;
    const std::int64_t end = n * (w + 1) / workers;
    threads.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
}

}  // namespace xct
