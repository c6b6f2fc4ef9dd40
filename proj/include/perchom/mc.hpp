#pragma once

// Monte Carlo harness: a worker pool that maps a function over sample indices
// and commits each result into its sample-indexed slot, so aggregates reduced
// after the join (in index order) are bit-identical for any worker count.
// Also the shared summary statistics, bootstrap resampling, CSV cell
// formatting, and the byte-identity check used by the determinism test.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include "perchom/rng.hpp"

namespace perchom {

// Worker count: an explicit request wins, then PERCHOM_WORKERS, then hardware
// concurrency. A malformed environment value is a configuration error.
inline int resolve_workers(int requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("PERCHOM_WORKERS")) {
    char* end = nullptr;
    const long w = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || w <= 0 || w > 4096)
      throw std::invalid_argument("PERCHOM_WORKERS must be a positive integer");
    return int(w);
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc ? int(hc) : 1;
}

// Evaluate fn(i) for i in [0, n) on a pool and return results indexed by i.
// Dispatch order is irrelevant to the output: slot i always holds fn(i), and
// fn must derive any randomness from i (per-sample streams), not from shared
// mutable state. If several samples throw, the lowest index wins.
template <typename Fn>
auto map_samples(int64_t n, Fn&& fn, int workers = 0)
    -> std::vector<std::decay_t<decltype(fn(int64_t(0)))>> {
  using R = std::decay_t<decltype(fn(int64_t(0)))>;
  std::vector<R> out(size_t(std::max<int64_t>(n, 0)));
  if (n <= 0) return out;

  const int nw = int(std::min<int64_t>(resolve_workers(workers), n));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
  std::atomic<int64_t> next{0};
  auto body = [&] {
    for (;;) {
      const int64_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) return;
      try {
        out[size_t(i)] = fn(i);
      } catch (...) {
        errors[size_t(i)] = std::current_exception();
      }
    }
  };

  if (nw == 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(size_t(nw));
    for (int t = 0; t < nw; ++t) pool.emplace_back(body);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// Mean / spread of a sample, reduced strictly in index order.
struct SampleStats {
  int64_t n = 0;
  double mean = 0;
  double sd = 0;
  double se = 0;
  double min = 0;
  double max = 0;
};

inline SampleStats summarize(const std::vector<double>& xs) {
  SampleStats s;
  s.n = int64_t(xs.size());
  if (s.n == 0) return s;
  s.min = s.max = xs[0];
  double sum = 0;
  for (double x : xs) {
    sum += x;
    s.min = std::min(s.min, x);
    s.max = std::max(s.max, x);
  }
  s.mean = sum / double(s.n);
  if (s.n > 1) {
    double ss = 0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / double(s.n - 1));
    s.se = s.sd / std::sqrt(double(s.n));
  }
  return s;
}

// Percentile bootstrap interval for stat(sample). Resample indices come from
// the given stream, so the interval is a pure function of (data, stream, B).
template <typename Stat>
std::pair<double, double> bootstrap_ci(const std::vector<double>& xs,
                                       Stat&& stat, int B, Stream s,
                                       double alpha = 0.05) {
  const int64_t n = int64_t(xs.size());
  if (n == 0 || B <= 0) return {0, 0};
  std::vector<double> reps(static_cast<size_t>(B));
  std::vector<double> draw(static_cast<size_t>(n));
  for (int b = 0; b < B; ++b) {
    for (int64_t i = 0; i < n; ++i) {
      const int64_t j = std::min<int64_t>(int64_t(s.unit() * double(n)), n - 1);
      draw[size_t(i)] = xs[size_t(j)];
    }
    reps[size_t(b)] = stat(draw);
  }
  std::sort(reps.begin(), reps.end());
  auto pick = [&](double q) {
    const int64_t k = std::clamp<int64_t>(int64_t(q * double(B - 1) + 0.5), 0, B - 1);
    return reps[size_t(k)];
  };
  return {pick(alpha / 2), pick(1 - alpha / 2)};
}

// Least-squares slope of y against x (used for log-log rate fits).
inline double fit_slope(const std::vector<double>& x,
                        const std::vector<double>& y) {
  const int64_t n = int64_t(x.size());
  if (n < 2 || y.size() != x.size())
    throw std::invalid_argument("slope fit needs two matched samples");
  double mx = 0, my = 0;
  for (int64_t i = 0; i < n; ++i) {
    mx += x[size_t(i)];
    my += y[size_t(i)];
  }
  mx /= double(n);
  my /= double(n);
  double sxx = 0, sxy = 0;
  for (int64_t i = 0; i < n; ++i) {
    sxx += (x[size_t(i)] - mx) * (x[size_t(i)] - mx);
    sxy += (x[size_t(i)] - mx) * (y[size_t(i)] - my);
  }
  if (sxx == 0) throw std::invalid_argument("slope fit needs distinct x");
  return sxy / sxx;
}

// Shortest-round-trip decimal formatting shared by every CSV writer.
inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

template <typename T>
void csv_cell(std::string& out, const T& v) {
  if constexpr (std::is_floating_point_v<T>)
    out += g17(v);
  else if constexpr (std::is_integral_v<T>)
    out += std::to_string(v);
  else
    out += v;
}

}  // namespace detail

// One comma-separated line; doubles via g17, integers exact, strings as-is.
template <typename... Ts>
void csv_row(std::ostream& os, const Ts&... cells) {
  std::string line;
  int k = 0;
  ((k++ ? (line += ',', detail::csv_cell(line, cells))
        : detail::csv_cell(line, cells)),
   ...);
  line += '\n';
  os << line;
}

inline bool files_byte_identical(const std::string& a, const std::string& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  std::string ca((std::istreambuf_iterator<char>(fa)),
                 std::istreambuf_iterator<char>());
  std::string cb((std::istreambuf_iterator<char>(fb)),
                 std::istreambuf_iterator<char>());
  return ca == cb;
}

}  // namespace perchom
