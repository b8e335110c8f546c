#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <set>
#include <thread>
#include <utility>

#include "bas/error.hpp"
#include "bas/time.hpp"

namespace bas {

/// Time source for the scheduler. Threads that will sleep on the clock are
/// announced with `enter` before they start and `leave` when they finish, so
/// a simulated clock knows when everyone is blocked.
class Clock {
 public:
  virtual ~Clock() = default;
  /// Time since the clock was created.
  virtual Seconds now() = 0;
  virtual void sleep_for(Seconds d) = 0;
  virtual void enter(int n = 1) { (void)n; }
  virtual void leave() {}
};

class SteadyClock : public Clock {
 public:
  SteadyClock() : start_(std::chrono::steady_clock::now()) {}
  Seconds now() override { return std::chrono::steady_clock::now() - start_; }
  void sleep_for(Seconds d) override {
    if (d.count() > 0.0) std::this_thread::sleep_for(d);
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline Clock& steady_clock() {
  static SteadyClock c;
  return c;
}

/// Discrete-event clock. Time only moves when every announced participant is
/// asleep; the sleeper with the earliest wake time (ties: earliest call)
/// then resumes with `now` set to its wake time. Threads that never call
/// `enter` may still read `now` but must not sleep.
class VirtualClock : public Clock {
 public:
  Seconds now() override {
    std::lock_guard lock(mu_);
    return now_;
  }

  void enter(int n = 1) override {
    std::lock_guard lock(mu_);
    running_ += n;
  }

  void leave() override {
    std::lock_guard lock(mu_);
    if (running_ <= 0) throw Error("VirtualClock: leave without enter");
    --running_;
    cv_.notify_all();
  }

  void sleep_for(Seconds d) override {
    std::unique_lock lock(mu_);
    if (running_ <= 0) {
      // Unannounced caller with nobody else around: just advance.
      now_ += std::max(d, Seconds{0});
      return;
    }
    const Key key{now_ + std::max(d, Seconds{0}), seq_++};
    sleepers_.insert(key);
    --running_;
    cv_.notify_all();
    cv_.wait(lock, [&] { return running_ == 0 && *sleepers_.begin() == key; });
    sleepers_.erase(sleepers_.begin());
    now_ = key.first;
    ++running_;
    cv_.notify_all();
  }

 private:
  using Key = std::pair<Seconds, std::uint64_t>;
  std::mutex mu_;
  std::condition_variable cv_;
  Seconds now_{0};
  int running_ = 0;
  std::uint64_t seq_ = 0;
  std::set<Key> sleepers_;
};

/// Balances Clock::enter/leave for one thread.
class ClockParticipant {
 public:
  explicit ClockParticipant(Clock& c) : c_(c) {}
  ~ClockParticipant() { c_.leave(); }
  ClockParticipant(const ClockParticipant&) = delete;
  ClockParticipant& operator=(const ClockParticipant&) = delete;

 private:
  Clock& c_;
};

}  // namespace bas
