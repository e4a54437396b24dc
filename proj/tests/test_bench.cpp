#include "rcn/bench.hpp"

#include <gtest/gtest.h>

#include <cstdint>
#include <vector>

#include "rcn/errors.hpp"

namespace rcn {
namespace {

BenchRecord record(std::int64_t k, double mean_ms) {
  BenchRecord r;
  r.k = k;
  r.mean_ms = mean_ms;
  return r;
}

TEST(BenchSweep, ShiftsShapeAtConstantWork) {
  // base 8 keeps the timed part trivial; the structural claims are the point.
  const auto recs = bench_conv_sweep<float>({1, 2, 4}, /*base=*/8, /*batch=*/1, /*filters=*/2, /*reps=*/2);
  ASSERT_EQ(recs.size(), 3u);

  EXPECT_EQ(recs[0].k, 1);
  EXPECT_EQ(recs[0].gemm.m, 2);
  EXPECT_EQ(recs[0].gemm.k, 27);  // 1 channel * 3^3
  EXPECT_EQ(recs[0].gemm.n, 512);

  EXPECT_EQ(recs[1].k, 2);
  EXPECT_EQ(recs[1].gemm.k, 8 * 27);
  EXPECT_EQ(recs[1].gemm.n, 64);

  EXPECT_EQ(recs[2].k, 4);
  EXPECT_EQ(recs[2].gemm.k, 64 * 27);
  EXPECT_EQ(recs[2].gemm.n, 8);

  for (const auto& r : recs) {
    EXPECT_EQ(r.gemm.macs(), recs[0].gemm.macs());
    EXPECT_EQ(r.flop_count, r.gemm.macs());
    EXPECT_EQ(r.reps, 2);
    EXPECT_GT(r.mean_ms, 0.0);
    EXPECT_NEAR(r.mean_ms, r.total_ms / 2.0, 1e-12);
  }
}

TEST(BenchSweep, FullRateFamilyIsConstantWork) {
  // Every default rate divides the base extent, and the implied GEMM family
  // does the same multiply-accumulate count at every point of the sweep.
  const std::int64_t base = 72, batch = 4, filters = 8;
  std::int64_t macs0 = -1;
  for (std::int64_t k : kDefaultBenchRates) {
    ASSERT_EQ(base % k, 0) << "rate " << k;
    const std::int64_t side = base / k, ch = k * k * k;
    const GemmShape gs = gemm_shape(Shape{batch, side, side, side, ch}, Shape{ch, 3, 3, 3, filters});
    EXPECT_EQ(gs.m, filters);
    EXPECT_EQ(gs.k, 27 * ch);
    EXPECT_EQ(gs.n, batch * side * side * side);
    if (macs0 < 0) macs0 = gs.macs();
    EXPECT_EQ(gs.macs(), macs0) << "rate " << k;
  }
  EXPECT_EQ(macs0, 8 * 27 * 4 * 72 * 72 * 72);
}

TEST(BenchSweep, RejectsBadRateFamilies) {
  EXPECT_THROW(bench_conv_sweep<float>({}, 8, 1, 2, 1), ArgumentError);
  EXPECT_THROW(bench_conv_sweep<float>({1, 3}, 8, 1, 2, 1), ArgumentError);  // 3 does not divide 8
  EXPECT_THROW(bench_conv_sweep<float>({0}, 8, 1, 2, 1), ArgumentError);
}

TEST(CheckUshape, AcceptsAnInteriorDip) {
  const std::vector<BenchRecord> recs = {record(1, 10.0), record(2, 5.0), record(4, 8.0)};
  const UShapeVerdict v = check_ushape(recs);
  EXPECT_TRUE(v.pass);
  EXPECT_EQ(v.argmin_k, 2);
  EXPECT_EQ(v.min_ms, 5.0);
  EXPECT_EQ(v.first_ms, 10.0);
  EXPECT_EQ(v.last_ms, 8.0);
  EXPECT_NE(v.detail.find("argmin k=2"), std::string::npos);
}

TEST(CheckUshape, RejectsBoundaryMinima) {
  EXPECT_FALSE(check_ushape({record(1, 5.0), record(2, 6.0), record(4, 7.0)}).pass);  // monotone up
  EXPECT_FALSE(check_ushape({record(1, 7.0), record(2, 6.0), record(4, 5.0)}).pass);  // monotone down
}

TEST(CheckUshape, RequiresATenPercentDip) {
  // Strictly below 0.9x the first point: 9.0 exactly is not enough.
  EXPECT_FALSE(check_ushape({record(1, 10.0), record(2, 9.0), record(4, 11.0)}).pass);
  EXPECT_TRUE(check_ushape({record(1, 10.0), record(2, 8.99), record(4, 11.0)}).pass);
}

TEST(CheckUshape, RequiresTheTailToRiseAgain) {
  EXPECT_FALSE(check_ushape({record(1, 10.0), record(2, 5.0), record(4, 5.0)}).pass);
}

TEST(CheckUshape, ValidatesItsInput) {
  EXPECT_THROW(check_ushape({record(1, 1.0), record(2, 2.0)}), ArgumentError);
  EXPECT_THROW(check_ushape({record(1, 1.0), record(3, 2.0), record(2, 3.0)}), ArgumentError);
  EXPECT_THROW(check_ushape({record(1, 1.0), record(1, 2.0), record(2, 3.0)}), ArgumentError);
}

TEST(BenchCsv, HeaderAndRowLineUp) {
  EXPECT_STREQ(bench_csv_header(), "k,m,kdim,n,reps,threads,total_ms,mean_ms,std_ms");
  BenchRecord r;
  r.k = 3;
  r.gemm = {8, 216, 64};
  r.reps = 50;
  r.threads = 2;
  r.total_ms = 12.5;
  r.mean_ms = 0.25;
  r.std_ms = 0.01;
  EXPECT_EQ(bench_csv_row(r), "3,8,216,64,50,2,12.500000,0.250000,0.010000");
}

TEST(TimedConv, ReportsAConsistentRecord) {
  const Shape in{1, 4, 4, 4, 2}, w{2, 3, 3, 3, 3};
  const BenchRecord r = timed_conv<float>(in, w, 3, 1, 0x5EED, 9);
  EXPECT_EQ(r.k, 9);
  EXPECT_EQ(r.reps, 3);
  EXPECT_EQ(r.threads, 1);
  const GemmShape gs = gemm_shape(in, w);
  EXPECT_EQ(r.gemm.m, gs.m);
  EXPECT_EQ(r.gemm.k, gs.k);
  EXPECT_EQ(r.gemm.n, gs.n);
  EXPECT_EQ(r.flop_count, gs.macs());
  EXPECT_GT(r.mean_ms, 0.0);
  EXPECT_GE(r.std_ms, 0.0);
  EXPECT_THROW(timed_conv<float>(in, w, 0), ArgumentError);
}

}  // namespace
}  // namespace rcn
