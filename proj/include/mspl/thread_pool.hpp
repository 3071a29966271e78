#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "mspl/common.hpp"

namespace mspl {

// Persistent worker pool for row-partitioned kernels. Work is split into one
// statically-sized chunk per thread, so results are bit-identical for any
// thread count (each output row is always reduced serially by one thread).
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  int threads() const { return n_threads_; }

  void set_threads(int n) {
    MSPL_CHECK(n >= 1 && n <= 64, "thread count must be in [1,64], got ", n);
    if (n == n_threads_) {
      return;
    }
    stop_workers();
    n_threads_ = n;
    start_workers();
  }

  // Runs fn(chunk) for chunk in [0, threads()); chunk 0 on the caller.
  void run(const std::function<void(int)>& fn) {
    if (n_threads_ == 1) {
      fn(0);
      return;
    }
    {
      std::unique_lock<std::mutex> lock(mu_);
      job_ = &fn;
      pending_.store(n_threads_ - 1, std::memory_order_relaxed);
      ++generation_;
    }
    cv_.notify_all();
    fn(0);
    std::unique_lock<std::mutex> lock(mu_);
    done_cv_.wait(lock, [&] { return pending_.load(std::memory_order_acquire) == 0; });
    job_ = nullptr;
  }

  ~ThreadPool() { stop_workers(); }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

 private:
  ThreadPool() = default;

  void start_workers() {
    stopping_ = false;
    for (int i = 1; i < n_threads_; ++i) {
      workers_.emplace_back([this, i] { worker_loop(i); });
    }
  }

  void stop_workers() {
    {
      std::unique_lock<std::mutex> lock(mu_);
      stopping_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& w : workers_) {
      w.join();
    }
    workers_.clear();
  }

  void worker_loop(int chunk) {
    uint64_t seen = 0;
    for (;;) {
      const std::function<void(int)>* job = nullptr;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return generation_ != seen; });
        seen = generation_;
        if (stopping_) {
          return;
        }
        job = job_;
      }
      if (job != nullptr) {
        (*job)(chunk);
        if (pending_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
          std::unique_lock<std::mutex> lock(mu_);
          done_cv_.notify_one();
        }
      }
    }
  }

  int n_threads_ = 1;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(int)>* job_ = nullptr;
  std::atomic<int> pending_{0};
  uint64_t generation_ = 0;
  bool stopping_ = false;
};

// Static row partition: [begin, end) for the given chunk.
inline std::pair<int, int> chunk_range(int n_rows, int n_chunks, int chunk) {
  const int64_t lo = int64_t(n_rows) * chunk / n_chunks;
  const int64_t hi = int64_t(n_rows) * (chunk + 1) / n_chunks;
  return {int(lo), int(hi)};
}

}  // namespace mspl
