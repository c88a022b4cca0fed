#pragma once

#include <cstddef>
#include <deque>
#include <mutex>
#include <vector>

namespace scopeloop {

/// Rolling window over the last K per-frame latencies, in milliseconds.
class LatencyWindow {
 public:
  explicit LatencyWindow(std::size_t capacity = 10) : capacity_(capacity == 0 ? 1 : capacity) {}

  void add(double ms);
  [[nodiscard]] std::vector<double> samples() const;
  [[nodiscard]] std::size_t capacity() const noexcept { return capacity_; }
  [[nodiscard]] double mean() const;
  /// Sample standard deviation (n - 1 denominator); 0 with fewer than two samples.
  [[nodiscard]] double stddev() const;

 private:
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::deque<double> values_;
};

struct SummaryStats {
  double mean = 0;
  double stddev = 0;
  double min = 0;
  double max = 0;
  std::size_t count = 0;
};

[[nodiscard]] SummaryStats summarize(const std::vector<double>& values);

}  // namespace scopeloop
