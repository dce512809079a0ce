#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace screener {

// Process-wide worker count for parallel_for; 0 means hardware concurrency.
// Results never depend on this value: tasks write to index-addressed slots
// and all reductions happen afterwards in index order.
inline int& thread_count() {
    static int count = 1;
    return count;
}

inline void set_thread_count(int n) { thread_count() = n; }

inline int effective_threads(std::size_t n_tasks) {
    int n = thread_count();
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(n), n_tasks));
}

template <typename Fn>
void parallel_for(std::size_t n_tasks, Fn&& fn) {
    const int workers = effective_threads(n_tasks);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n_tasks; ++i) fn(i);
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers));
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (int w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            // Strided assignment: worker w handles tasks w, w+workers, ...
            for (std::size_t i = static_cast<std::size_t>(w); i < n_tasks;
                 i += static_cast<std::size_t>(workers)) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace screener
