#pragma once

#include <chrono>

namespace hatpic {

/// Time source for fixed-rate loops. Times are seconds since the clock's epoch.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() const = 0;
  virtual void sleep_until(double t) = 0;
};

/// Advances instantly to whatever time is requested.
class SimClock final : public Clock {
 public:
  double now() const override { return now_; }
  void sleep_until(double t) override {
    if (t > now_) now_ = t;
  }

 private:
  double now_ = 0.0;
};

/// Wall-clock pacing on std::chrono::steady_clock.
class RealClock final : public Clock {
 public:
  RealClock() : epoch_(std::chrono::steady_clock::now()) {}

  double now() const override {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_).count();
  }

  void sleep_until(double t) override;

 private:
  std::chrono::steady_clock::time_point epoch_;
};

}  // namespace hatpic
