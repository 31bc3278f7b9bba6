#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace lmb {

/// Upper bound on worker threads used by the library; 0 means hardware concurrency (the default).
void set_thread_count(std::size_t threads);
std::size_t thread_count();

/// Runs body(i) for i in [0, count). Work is split into contiguous blocks; the
/// first exception thrown by any worker is rethrown on the caller.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

/// SplitMix64-based derivation of independent stream seeds from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace lmb
