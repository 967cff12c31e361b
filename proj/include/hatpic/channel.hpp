// Small inter-task plumbing: a bounded drop-oldest queue and a latest-value
// mailbox. Critical sections are O(1); neither side ever waits on the other
// for longer than a push or a pop.

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <vector>

namespace hatpic {

template <typename T>
class DropOldestQueue {
 public:
  explicit DropOldestQueue(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

  /// Returns false when an old element had to be evicted.
  bool push(T value) {
    std::lock_guard lock(mu_);
    bool kept_all = true;
    if (items_.size() == capacity_) {
      items_.pop_front();
      ++dropped_;
      kept_all = false;
    }
    items_.push_back(std::move(value));
    return kept_all;
  }

  std::optional<T> pop() {
    std::lock_guard lock(mu_);
    if (items_.empty()) return std::nullopt;
    T v = std::move(items_.front());
    items_.pop_front();
    return v;
  }

  /// Moves everything currently queued into `out`.
  std::size_t drain(std::vector<T>& out) {
    std::lock_guard lock(mu_);
    const std::size_t n = items_.size();
    for (auto& v : items_) out.push_back(std::move(v));
    items_.clear();
    return n;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return items_.size();
  }

  std::uint64_t dropped() const {
    std::lock_guard lock(mu_);
    return dropped_;
  }

 private:
  mutable std::mutex mu_;
  std::deque<T> items_;
  std::size_t capacity_;
  std::uint64_t dropped_ = 0;
};

/// Holds only the most recent value. Readers see a version number so they can
/// tell a fresh post from a re-read of the same value.
template <typename T>
class Mailbox {
 public:
  struct Snapshot {
    T value;
    std::uint64_t version = 0;
  };

  void post(T value) {
    std::lock_guard lock(mu_);
    value_ = std::move(value);
    ++version_;
  }

  std::optional<Snapshot> read() const {
    std::lock_guard lock(mu_);
    if (version_ == 0) return std::nullopt;
    return Snapshot{value_, version_};
  }

  /// Returns the value only if it was posted after `seen`; updates `seen`.
  std::optional<T> take_newer(std::uint64_t& seen) const {
    std::lock_guard lock(mu_);
    if (version_ == seen) return std::nullopt;
    seen = version_;
    return value_;
  }

 private:
  mutable std::mutex mu_;
  T value_{};
  std::uint64_t version_ = 0;
};

}  // namespace hatpic
