// Copyright 2026 The CiwaGAN Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace ciwagan {

/// Number of worker threads: CIWA_THREADS when set, else hardware concurrency.
inline std::size_t thread_budget() {
  static const std::size_t n = [] {
    std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("CIWA_THREADS")) {
      try {
        long v = std::stol(env);
        if (v >= 1) return static_cast<std::size_t>(v);
      } catch (...) {
      }
    }
    return hw;
  }();
  return n;
}

namespace detail {

// Fixed pool of workers. Each parallel_for call partitions [0, n) into
// contiguous chunks; callers only write disjoint outputs per index, so
// results do not depend on scheduling.
class ThreadPool {
 public:
  explicit ThreadPool(std::size_t workers) {
    for (std::size_t i = 0; i < workers; ++i) {
      threads_.emplace_back([this, i] { run(i); });
    }
  }
  ~ThreadPool() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  std::size_t size() const { return threads_.size(); }

  void run_chunks(std::size_t chunks, const std::function<void(std::size_t)>& fn) {
    std::unique_lock lock(mu_);
    job_ = &fn;
    chunks_ = chunks;
    next_ = 0;
    pending_ = chunks;
    error_ = nullptr;
    ++generation_;
    cv_.notify_all();
    lock.unlock();
    work();
    lock.lock();
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    job_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void work() {
    for (;;) {
      std::size_t idx;
      const std::function<void(std::size_t)>* job;
      {
        std::lock_guard lock(mu_);
        if (job_ == nullptr || next_ >= chunks_) return;
        idx = next_++;
        job = job_;
      }
      try {
        (*job)(idx);
      } catch (...) {
        std::lock_guard lock(mu_);
        if (!error_) error_ = std::current_exception();
      }
      std::lock_guard lock(mu_);
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }

  void run(std::size_t) {
    std::size_t seen = 0;
    for (;;) {
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
      }
      work();
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::size_t)>* job_ = nullptr;
  std::size_t chunks_ = 0;
  std::size_t next_ = 0;
  std::size_t pending_ = 0;
  std::size_t generation_ = 0;
  std::exception_ptr error_;
  bool stop_ = false;
};

inline ThreadPool* pool() {
  static ThreadPool* p = thread_budget() > 1 ? new ThreadPool(thread_budget() - 1) : nullptr;
  return p;
}

inline std::mutex& pool_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace detail

/// Calls fn(i) for every i in [0, n). fn must only write state owned by i.
/// Nested calls and calls made while the pool is busy run serially.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_grain = 1) {
  auto* p = detail::pool();
  std::unique_lock lock(detail::pool_mutex(), std::try_to_lock);
  if (p == nullptr || n < 2 * min_grain || !lock.owns_lock()) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = p->size() + 1;
  const std::size_t chunks = std::min(n / min_grain, workers * 4);
  const std::function<void(std::size_t)> job = [&](std::size_t c) {
    const std::size_t begin = n * c / chunks;
    const std::size_t end = n * (c + 1) / chunks;
    for (std::size_t i = begin; i < end; ++i) fn(i);
  };
  p->run_chunks(chunks, job);
}

}  // namespace ciwagan
