/*
Copyright 2026 The OptFuse Authors. All rights reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#pragma once

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <queue>
#include <thread>
#include <vector>

namespace optfuse {

// Drains a dynamically growing set of ready tasks with a fixed number of
// workers. Tasks are plain indices; the smallest ready index runs first, so
// with one worker the execution order is fully determined by the numbering.
//
// `body(task)` runs the task and returns the tasks it made ready. It is
// called concurrently from different workers; the caller synchronizes any
// shared bookkeeping it does inside.
class TaskPool {
 public:
  using TaskId = std::size_t;
  using Body = std::function<std::vector<TaskId>(TaskId)>;

  explicit TaskPool(std::size_t workers) : workers_(workers == 0 ? 1 : workers) {}

  std::size_t workers() const { return workers_; }

  void run(const std::vector<TaskId>& initial, const Body& body) {
    std::priority_queue<TaskId, std::vector<TaskId>, std::greater<>> ready(initial.begin(),
                                                                          initial.end());
    if (workers_ == 1) {
      while (!ready.empty()) {
        const TaskId t = ready.top();
        ready.pop();
        for (auto next : body(t)) ready.push(next);
      }
      return;
    }

    std::mutex mutex;
    std::condition_variable cv;
    std::size_t active = 0;
    std::exception_ptr error;

    auto worker = [&] {
      std::unique_lock lock(mutex);
      for (;;) {
        cv.wait(lock, [&] { return !ready.empty() || active == 0 || error; });
        if (error || (ready.empty() && active == 0)) break;
        const TaskId t = ready.top();
        ready.pop();
        ++active;
        lock.unlock();
        std::vector<TaskId> next;
        std::exception_ptr failure;
        try {
          next = body(t);
        } catch (...) {
          failure = std::current_exception();
        }
        lock.lock();
        --active;
        if (failure && !error) error = failure;
        for (auto n : next) ready.push(n);
        cv.notify_all();
      }
      cv.notify_all();
    };

    std::vector<std::thread> threads;
    threads.reserve(workers_);
    for (std::size_t i = 0; i < workers_; ++i) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
    if (error) std::rethrow_exception(error);
  }

 private:
  std::size_t workers_;
};

}  // namespace optfuse
