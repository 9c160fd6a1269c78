#pragma once

#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>

namespace oema {

// Counting semaphore with a runtime-configured limit.
class Semaphore {
public:
    explicit Semaphore(int count) : count_(count) {}

    void acquire() {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [this] { return count_ > 0; });
        --count_;
    }

    void release() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            ++count_;
        }
        cv_.notify_one();
    }

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    int count_;
};

class SemaphoreGuard {
public:
    explicit SemaphoreGuard(Semaphore& s) : s_(s) { s_.acquire(); }
    ~SemaphoreGuard() { s_.release(); }
    SemaphoreGuard(const SemaphoreGuard&) = delete;
    SemaphoreGuard& operator=(const SemaphoreGuard&) = delete;

private:
    Semaphore& s_;
};

// Runs fn(0..n-1) on up to `workers` threads. Results are whatever fn
// writes into caller-owned slots, so assembly order is the caller's index
// order regardless of completion order. The first exception is rethrown
// after all workers join.
void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn);

}  // namespace oema
