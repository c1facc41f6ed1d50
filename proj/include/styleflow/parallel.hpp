// Copyright 2026 The styleflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace styleflow {

namespace detail {
inline std::atomic<unsigned>& worker_override() {
  static std::atomic<unsigned> value{0};
  return value;
}
}  // namespace detail

// Number of threads used by parallel_for. 0 restores the default, which is
// STYLEFLOW_THREADS from the environment or the hardware concurrency.
inline void set_worker_count(unsigned n) { detail::worker_override() = n; }

inline unsigned worker_count() {
  if (unsigned n = detail::worker_override().load(); n > 0) return n;
  if (const char* env = std::getenv("STYLEFLOW_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(lo, hi) over fixed chunks [lo, hi) of [begin, end). Chunk bounds
// depend only on `grain`, so per-chunk results are independent of the
// number of threads.
template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, std::size_t grain,
                  Fn&& fn) {
  if (end <= begin) return;
  grain = std::max<std::size_t>(grain, 1);
  const std::size_t chunks = (end - begin + grain - 1) / grain;
  const unsigned threads =
      static_cast<unsigned>(std::min<std::size_t>(worker_count(), chunks));
  auto run_chunk = [&](std::size_t k) {
    const std::size_t lo = begin + k * grain;
    fn(lo, std::min(end, lo + grain));
  };
  if (threads <= 1) {
    for (std::size_t k = 0; k < chunks; ++k) run_chunk(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t k = next++; k < chunks; k = next++) {
      try {
        run_chunk(k);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = chunks;
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(threads - 1);
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace styleflow
