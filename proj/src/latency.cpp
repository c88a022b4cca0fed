#include "scopeloop/latency.hpp"

#include <algorithm>
#include <cmath>

namespace scopeloop {

void LatencyWindow::add(double ms) {
  std::lock_guard lock(mutex_);
  values_.push_back(ms);
  while (values_.size() > capacity_) values_.pop_front();
}

std::vector<double> LatencyWindow::samples() const {
  std::lock_guard lock(mutex_);
  return {values_.begin(), values_.end()};
}

double LatencyWindow::mean() const { return summarize(samples()).mean; }
double LatencyWindow::stddev() const { return summarize(samples()).stddev; }

SummaryStats summarize(const std::vector<double>& values) {
  SummaryStats s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  s.min = *lo;
  s.max = *hi;
  return s;
}

}  // namespace scopeloop
