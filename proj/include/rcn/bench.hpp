#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rcn/conv.hpp"

// The convolution-timing sweep: one forward convolution per segmentation
// rate k over a (batch, base/k, base/k, base/k, k^3) input — constant
// multiply-accumulate work, shifting operand shape from a long thin patch
// matrix (small k) toward a tall thin one (large k) — and the U-shape check
// applied to the measured times.

namespace rcn {

inline const std::vector<std::int64_t> kDefaultBenchRates = {1, 2, 3, 4, 6, 8, 9, 12, 18, 24, 36};

template <typename T = float>
std::vector<BenchRecord> bench_conv_sweep(const std::vector<std::int64_t>& ks = kDefaultBenchRates,
                                          std::int64_t base = 72, std::int64_t batch = 4, std::int64_t filters = 8,
                                          std::int64_t reps = 500, int threads = 1, std::uint64_t seed = 0x5EED) {
  if (ks.empty()) throw ArgumentError("benchmark sweep needs at least one rate");
  for (std::int64_t k : ks)
    if (k < 1 || base % k != 0) throw ArgumentError("rate " + std::to_string(k) + " does not divide the base extent " + std::to_string(base));

  // The sweep only makes sense as a constant-work family; verify before
  // spending any timing budget.
  std::vector<Shape> inputs, weights;
  std::int64_t macs0 = -1;
  for (std::int64_t k : ks) {
    const std::int64_t side = base / k, ch = k * k * k;
    inputs.push_back(Shape{batch, side, side, side, ch});
    weights.push_back(Shape{ch, 3, 3, 3, filters});
    const std::int64_t macs = gemm_shape(inputs.back(), weights.back()).macs();
    if (macs0 < 0) macs0 = macs;
    if (macs != macs0)
      throw ArgumentError("rate " + std::to_string(k) + " changes the sweep work: " + std::to_string(macs) + " vs " + std::to_string(macs0) + " multiply-accumulates");
  }

  std::vector<BenchRecord> records;
  for (std::size_t i = 0; i < ks.size(); ++i)
    records.push_back(timed_conv<T>(inputs[i], weights[i], reps, threads, seed, ks[i]));
  return records;
}

struct UShapeVerdict {
  bool pass = false;
  std::int64_t argmin_k = 0;
  double min_ms = 0;
  double first_ms = 0;  // time at the smallest rate
  double last_ms = 0;   // time at the largest rate
  std::string detail;
};

// Passes iff the fastest rate is strictly interior, beats the smallest rate
// by at least 10%, and the largest rate is slower than the minimum.
inline UShapeVerdict check_ushape(const std::vector<BenchRecord>& records) {
  if (records.size() < 3) throw ArgumentError("U-shape check needs at least 3 records");
  for (std::size_t i = 1; i < records.size(); ++i)
    if (records[i].k <= records[i - 1].k) throw ArgumentError("U-shape check needs records sorted by increasing k");

  UShapeVerdict v;
  std::size_t argmin = 0;
  for (std::size_t i = 1; i < records.size(); ++i)
    if (records[i].mean_ms < records[argmin].mean_ms) argmin = i;

  v.argmin_k = records[argmin].k;
  v.min_ms = records[argmin].mean_ms;
  v.first_ms = records.front().mean_ms;
  v.last_ms = records.back().mean_ms;

  const bool interior = argmin != 0 && argmin + 1 != records.size();
  const bool fast_enough = v.min_ms < 0.9 * v.first_ms;
  const bool rises_again = v.last_ms > v.min_ms;
  v.pass = interior && fast_enough && rises_again;

  char buf[256];
  std::snprintf(buf, sizeof buf, "argmin k=%lld (%.3f ms); k=%lld -> %.3f ms, k=%lld -> %.3f ms; interior=%d min<0.9*first=%d last>min=%d",
                static_cast<long long>(v.argmin_k), v.min_ms, static_cast<long long>(records.front().k), v.first_ms,
                static_cast<long long>(records.back().k), v.last_ms, interior, fast_enough, rises_again);
  v.detail = buf;
  return v;
}

}  // namespace rcn
