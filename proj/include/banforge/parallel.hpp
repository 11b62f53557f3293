#pragma once

#include <cstddef>
#include <functional>

namespace banforge {

// Number of worker threads used by parallel_for. Resolved once: the
// BAN_FORGE_THREADS environment variable if set, otherwise the hardware
// concurrency. set_thread_budget overrides both.
std::size_t thread_budget();
void set_thread_budget(std::size_t threads);

// Splits [0, n) into contiguous chunks, one per worker. Each index is
// processed by exactly one thread and every thread runs a fixed-order loop
// over its chunk, so results are bit-identical for any thread count provided
// the body writes only to locations owned by its index.
void parallel_for(std::size_t n, const std::function<void(std::size_t begin, std::size_t end)>& body);

} // namespace banforge
