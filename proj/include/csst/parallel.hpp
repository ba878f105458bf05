#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace csst {

/// Runs fn(begin, end) over fixed-size chunks of [0, n) on up to `threads`
/// workers. Chunk boundaries do not depend on the thread count, so results
/// written per index are identical for any number of workers. The first
/// exception thrown by a worker is rethrown here.
inline void parallel_chunks(std::size_t n, std::size_t chunk, std::size_t threads,
                            const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  chunk = std::max<std::size_t>(chunk, 1);
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, n_chunks);
  auto run = [&](std::size_t w, std::exception_ptr& err) {
    try {
      for (std::size_t c = w; c < n_chunks; c += workers) fn(c * chunk, std::min(n, (c + 1) * chunk));
    } catch (...) {
      err = std::current_exception();
    }
  };
  std::vector<std::exception_ptr> errors(workers);
  if (workers == 1) {
    run(0, errors[0]);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w, std::ref(errors[w]));
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace csst
