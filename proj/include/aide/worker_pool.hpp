#pragma once

// Bounded worker pool with ordered emission: `work` runs concurrently, but
// `emit` fires strictly in submission order, one call at a time. Output is
// therefore a pure function of the input sequence, independent of worker
// count and scheduling. Capacity bounds in-flight items so memory stays
// constant while streaming arbitrarily large inputs.

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <utility>
#include <vector>

namespace aide {

template <typename Item, typename Result>
class OrderedPool {
 public:
  using WorkFn = std::function<Result(Item&&)>;
  using EmitFn = std::function<void(Result&&)>;

  OrderedPool(std::size_t workers, std::size_t capacity, WorkFn work, EmitFn emit)
      : work_(std::move(work)),
        emit_(std::move(emit)),
        capacity_(capacity < 1 ? 1 : capacity) {
    if (workers < 1) workers = 1;
    threads_.reserve(workers);
    for (std::size_t i = 0; i < workers; ++i)
      threads_.emplace_back([this] { worker_loop(); });
  }

  OrderedPool(const OrderedPool&) = delete;
  OrderedPool& operator=(const OrderedPool&) = delete;

  ~OrderedPool() {
    try {
      close();
    } catch (...) {
      // close() already surfaced the failure to a previous caller, or the
      // pool is being unwound during another exception.
    }
  }

  // Blocks while the pool is at capacity. Rethrows the first failure from
  // work or emit.
  void submit(Item item) {
    std::unique_lock lk(mu_);
    cv_space_.wait(lk, [&] { return failure_ || in_flight_ < capacity_; });
    throw_if_failed(lk);
    queue_.emplace_back(next_serial_++, std::move(item));
    ++in_flight_;
    cv_work_.notify_one();
  }

  // Drains everything, joins the workers, rethrows any stored failure.
  void close() {
    {
      std::unique_lock lk(mu_);
      closing_ = true;
      cv_work_.notify_all();
      cv_space_.wait(lk, [&] { return failure_ || in_flight_ == 0; });
    }
    for (auto& t : threads_)
      if (t.joinable()) t.join();
    std::unique_lock lk(mu_);
    throw_if_failed(lk);
  }

 private:
  void worker_loop() {
    for (;;) {
      std::unique_lock lk(mu_);
      cv_work_.wait(lk, [&] { return failure_ || closing_ || !queue_.empty(); });
      if (failure_) return;
      if (queue_.empty()) {
        if (closing_) return;
        continue;
      }
      auto [serial, item] = std::move(queue_.front());
      queue_.pop_front();
      lk.unlock();

      std::optional<Result> result;
      try {
        result.emplace(work_(std::move(item)));
      } catch (...) {
        fail(std::current_exception());
        return;
      }

      lk.lock();
      done_.emplace(serial, std::move(*result));
      // Whoever completes the next-in-order item drains the ready prefix.
      // emit_ runs under the lock: ordered and single-threaded by
      // construction.
      while (!failure_) {
        auto it = done_.find(next_emit_);
        if (it == done_.end()) break;
        Result out = std::move(it->second);
        done_.erase(it);
        try {
          emit_(std::move(out));
        } catch (...) {
          fail_locked(std::current_exception());
          return;
        }
        ++next_emit_;
        --in_flight_;
        cv_space_.notify_all();
      }
    }
  }

  void fail(std::exception_ptr ep) {
    std::unique_lock lk(mu_);
    fail_locked(std::move(ep));
  }

  void fail_locked(std::exception_ptr ep) {
    if (!failure_) failure_ = std::move(ep);
    cv_work_.notify_all();
    cv_space_.notify_all();
  }

  void throw_if_failed(std::unique_lock<std::mutex>& lk) {
    if (!failure_) return;
    auto ep = failure_;
    lk.unlock();
    std::rethrow_exception(ep);
  }

  WorkFn work_;
  EmitFn emit_;
  const std::size_t capacity_;

  std::mutex mu_;
  std::condition_variable cv_work_;
  std::condition_variable cv_space_;
  std::deque<std::pair<std::uint64_t, Item>> queue_;
  std::map<std::uint64_t, Result> done_;
  std::uint64_t next_serial_ = 0;
  std::uint64_t next_emit_ = 0;
  std::size_t in_flight_ = 0;
  bool closing_ = false;
  std::exception_ptr failure_;
  std::vector<std::thread> threads_;
};

}  // namespace aide
