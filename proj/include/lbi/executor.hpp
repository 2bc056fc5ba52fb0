#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace lbi {

// Fixed-size worker pool. Tasks must write to disjoint locations; under that
// contract results are identical for any worker count.
class ThreadPool {
 public:
  explicit ThreadPool(int workers);
  ~ThreadPool();

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  std::future<void> submit(std::function<void()> fn);
  int workers() const { return static_cast<int>(threads_.size()); }

 private:
  void worker_loop();

  std::vector<std::thread> threads_;
  std::deque<std::packaged_task<void()>> queue_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool stop_ = false;
};

// Runs a batch of independent tasks and waits for all of them.
class Executor {
 public:
  virtual ~Executor() = default;
  virtual void run_all(std::vector<std::function<void()>>& tasks) = 0;
  virtual int workers() const = 0;
};

class SerialExecutor final : public Executor {
 public:
  void run_all(std::vector<std::function<void()>>& tasks) override;
  int workers() const override { return 1; }
};

class PooledExecutor final : public Executor {
 public:
  explicit PooledExecutor(int workers);
  void run_all(std::vector<std::function<void()>>& tasks) override;
  int workers() const override { return pool_.workers(); }
  ThreadPool& pool() { return pool_; }

 private:
  ThreadPool pool_;
};

std::unique_ptr<Executor> make_executor(int workers);

}  // namespace lbi
