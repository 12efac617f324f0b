#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>

namespace fiberlearn {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent child streams.
std::uint64_t splitmix64(std::uint64_t x);

/// Generator for work item `index` under `master_seed`; depends only on the pair.
Rng child_rng(std::uint64_t master_seed, std::uint64_t index);

/// Runs fn(begin, end) over contiguous chunks of [0, count) on up to `threads`
/// workers. threads <= 1 runs inline on the caller. Exceptions are rethrown on
/// the calling thread (first one wins).
void parallel_for(std::size_t count, int threads,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace fiberlearn
