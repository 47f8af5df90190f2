#include "wfuse/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace wfuse {

namespace {

// Persistent workers; the calling thread runs chunk 0.
class Pool {
 public:
  explicit Pool(int threads) {
    for (int i = 1; i < threads; ++i) workers_.emplace_back([this, i] { loop(i); });
  }

  ~Pool() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  void run(const std::function<void(int)>& job) {
    {
      std::lock_guard lock(mu_);
      job_ = &job;
      pending_ = static_cast<int>(workers_.size());
      ++generation_;
      error_ = nullptr;
    }
    cv_.notify_all();
    try {
      job(0);
    } catch (...) {
      std::lock_guard lock(mu_);
      if (!error_) error_ = std::current_exception();
    }
    std::unique_lock lock(mu_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    job_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void loop(int index) {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(int)>* job;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        job = job_;
      }
      try {
        (*job)(index);
      } catch (...) {
        std::lock_guard lock(mu_);
        if (!error_) error_ = std::current_exception();
      }
      {
        std::lock_guard lock(mu_);
        if (--pending_ == 0) done_cv_.notify_one();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(int)>* job_ = nullptr;
  std::uint64_t generation_ = 0;
  int pending_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

std::mutex g_pool_mu;
std::unique_ptr<Pool> g_pool;
int g_threads = 1;
thread_local bool g_inside = false;

}  // namespace

void set_num_threads(int n) {
  std::lock_guard lock(g_pool_mu);
  n = std::max(1, n);
  if (n == g_threads) return;
  g_pool.reset();
  g_threads = n;
  if (n > 1) g_pool = std::make_unique<Pool>(n);
}

int num_threads() { return g_threads; }

void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  grain = std::max<std::size_t>(grain, 1);
  const std::size_t max_chunks = (n + grain - 1) / grain;
  const std::size_t chunks = std::min<std::size_t>(max_chunks, static_cast<std::size_t>(g_threads));
  if (chunks <= 1 || !g_pool || g_inside) {
    fn(0, n);
    return;
  }
  const std::size_t per = (n + chunks - 1) / chunks;
  g_pool->run([&](int index) {
    g_inside = true;
    struct Reset {
      ~Reset() { g_inside = false; }
    } reset;
    const std::size_t begin = static_cast<std::size_t>(index) * per;
    if (begin >= n || static_cast<std::size_t>(index) >= chunks) return;
    fn(begin, std::min(n, begin + per));
  });
}

}  // namespace wfuse
