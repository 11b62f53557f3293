#include "banforge/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace banforge {

namespace {

std::atomic<std::size_t> g_thread_budget{0};

std::size_t resolve_budget() {
    if (const char* env = std::getenv("BAN_FORGE_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v >= 1) return static_cast<std::size_t>(v);
    }
    std::size_t hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

} // namespace

std::size_t thread_budget() {
    std::size_t v = g_thread_budget.load(std::memory_order_relaxed);
    if (v == 0) {
        v = resolve_budget();
        g_thread_budget.store(v, std::memory_order_relaxed);
    }
    return v;
}

void set_thread_budget(std::size_t threads) {
    g_thread_budget.store(threads ? threads : 1, std::memory_order_relaxed);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    const std::size_t workers = std::min(thread_budget(), n);
    if (workers <= 1 || n < 2) {
        if (n) body(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&body, begin, end] { body(begin, end); });
    }
    for (auto& t : pool) t.join();
}

} // namespace banforge
