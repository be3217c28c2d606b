#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace permagg {

/// Worker count used by parallel_for. Overridable through the PERMAGG_THREADS
/// environment variable; the override changes scheduling only, never results.
inline int worker_count() {
    if (const char* env = std::getenv("PERMAGG_THREADS")) {
        try {
            int v = std::stoi(env);
            if (v >= 1) return v;
        } catch (...) {
            // fall through to the hardware default on unparsable input
        }
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Runs body(i) for i in [0, n_tasks). Tasks must be independent and write
/// only to their own output slots; the dispatch order is unspecified but the
/// caller's reduction over slots stays deterministic.
template <class Body>
void parallel_for(int n_tasks, Body&& body) {
    int workers = std::min(worker_count(), n_tasks);
    if (workers <= 1) {
        for (int i = 0; i < n_tasks; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto run = [&]() {
        for (;;) {
            int i = next.fetch_add(1);
            if (i >= n_tasks) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace permagg
