#include "lbi/executor.hpp"

#include "lbi/errors.hpp"

namespace lbi {

ThreadPool::ThreadPool(int workers) {
  if (workers < 1) throw ArgumentError("thread pool needs at least one worker");
  threads_.reserve(static_cast<size_t>(workers));
  for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { worker_loop(); });
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) t.join();
}

std::future<void> ThreadPool::submit(std::function<void()> fn) {
  std::packaged_task<void()> task(std::move(fn));
  std::future<void> fut = task.get_future();
  {
    std::lock_guard<std::mutex> lock(mu_);
    queue_.push_back(std::move(task));
  }
  cv_.notify_one();
  return fut;
}

void ThreadPool::worker_loop() {
  for (;;) {
    std::packaged_task<void()> task;
    {
      std::unique_lock<std::mutex> lock(mu_);
      cv_.wait(lock, [this] { return stop_ || !queue_.empty(); });
      if (queue_.empty()) return;
      task = std::move(queue_.front());
      queue_.pop_front();
    }
    task();
  }
}

void SerialExecutor::run_all(std::vector<std::function<void()>>& tasks) {
  for (auto& t : tasks) t();
}

PooledExecutor::PooledExecutor(int workers) : pool_(workers) {}

void PooledExecutor::run_all(std::vector<std::function<void()>>& tasks) {
  std::vector<std::future<void>> futs;
  futs.reserve(tasks.size());
  for (auto& t : tasks) futs.push_back(pool_.submit(std::move(t)));
  for (auto& f : futs) f.get();  // rethrows task exceptions
}

std::unique_ptr<Executor> make_executor(int workers) {
  if (workers <= 1) return std::make_unique<SerialExecutor>();
  return std::make_unique<PooledExecutor>(workers);
}

}  // namespace lbi
