#include "cirtf/threading.hpp"

#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace cirtf {

int thread_count() {
  static int cached = [] {
    if (const char* env = std::getenv("CIRTF_THREADS")) {
      int n = std::atoi(env);
      if (n >= 1) return std::min(n, 16);
    }
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    return static_cast<int>(std::min(hw, 16u));
  }();
  return cached;
}

namespace {

// Fixed pool; task indices are dispensed under the mutex so a straggler from
// a finished batch can never pick up work from the next one. Tasks are chunk
// sized (many samples each), so the per-task lock is not a bottleneck.
class Pool {
 public:
  Pool() {
    int workers = thread_count() - 1;  // calling thread participates
    for (int i = 0; i < workers; ++i) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void run(int n, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    if (threads_.empty()) {
      for (int i = 0; i < n; ++i) fn(i);
      return;
    }
    uint64_t gen;
    {
      std::lock_guard<std::mutex> lk(mu_);
      fn_ = &fn;
      total_ = n;
      next_ = 0;
      pending_ = n;
      gen = ++generation_;
    }
    cv_.notify_all();
    drain(gen);
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [this] { return pending_ == 0; });
    fn_ = nullptr;
    if (first_error_) {
      auto err = first_error_;
      first_error_ = nullptr;
      std::rethrow_exception(err);
    }
  }

 private:
  void worker_loop() {
    uint64_t seen = 0;
    while (true) {
      uint64_t gen;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = gen = generation_;
      }
      drain(gen);
    }
  }

  void drain(uint64_t gen) {
    while (true) {
      const std::function<void(int)>* fn = nullptr;
      int i = 0;
      {
        std::lock_guard<std::mutex> lk(mu_);
        if (generation_ != gen || next_ >= total_) return;
        i = next_++;
        fn = fn_;
      }
      try {
        (*fn)(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(mu_);
        if (!first_error_) first_error_ = std::current_exception();
      }
      std::lock_guard<std::mutex> lk(mu_);
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(int)>* fn_ = nullptr;
  int next_ = 0;
  int total_ = 0;
  int pending_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
  std::exception_ptr first_error_;
};

}  // namespace

void parallel_for(int n, const std::function<void(int)>& fn) {
  static Pool pool;
  pool.run(n, fn);
}

}  // namespace cirtf
