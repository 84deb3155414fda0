#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>

#include <malloc.h>
#include <vector>

#include "nethira/model.hpp"

namespace nethira::detail {

inline constexpr std::size_t kReduceChunk = 8;

/// Keeps freed tape buffers in the heap instead of returning them to the
/// kernel after every sample.
inline void configure_allocator() {
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
  });
}

/// Runs fn(i, grads) for i in [0, n) with per-sample gradient buffers and adds
/// them into `total` in index order, so the result does not depend on the
/// thread count or scheduling.
template <typename Fn>
void for_each_sample(const Model& model, std::size_t n, Gradients& total, Fn&& fn) {
  configure_allocator();
  std::vector<Gradients> slots(std::min(n, kReduceChunk), model.zero_gradients());
  std::vector<std::exception_ptr> errors(slots.size());
  for (std::size_t base = 0; base < n; base += kReduceChunk) {
    const std::size_t count = std::min(kReduceChunk, n - base);
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < count; ++i) {
      try {
        slots[i].set_zero();
        fn(base + i, slots[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
    for (std::size_t i = 0; i < count; ++i) {
      if (errors[i]) std::rethrow_exception(errors[i]);
      total.add(slots[i]);
    }
  }
}

/// Same ordering guarantees for gradient-free work.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  configure_allocator();
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace nethira::detail
