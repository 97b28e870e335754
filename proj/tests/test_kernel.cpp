#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "dprm/kernel.hpp"

using namespace dprm;

namespace {

// C(2t, t) / 4^t through lgamma, independent of the recursive products.
double central_1d(int t) {
  return std::exp(std::lgamma(2.0 * t + 1) - 2 * std::lgamma(t + 1.0) - 2.0 * t * std::numbers::ln2);
}

}  // namespace

TEST(Kernel, OneAndTwoSteps) {
  const auto k = build_kernel_table(4);
  EXPECT_EQ(k(1, {1, 0}), 0.25);
  EXPECT_EQ(k(1, {0, -1}), 0.25);
  EXPECT_EQ(k(1, {0, 0}), 0.0);
  // Two steps: 16 equally likely step pairs, 4 of which return.
  int returns = 0;
  const Site<2> steps[4] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  for (const auto& a : steps)
    for (const auto& b : steps) returns += (a + b == Site<2>{0, 0});
  EXPECT_EQ(k(2, {0, 0}), returns / 16.0);
  EXPECT_EQ(k(2, {1, 1}), 2.0 / 16.0);
  EXPECT_EQ(k(2, {2, 0}), 1.0 / 16.0);
}

TEST(Kernel, ConservationParitySymmetry) {
  const KernelTable<2> k(60);
  for (int t = 0; t <= 60; ++t) {
    double s = 0;
    for (double p : k.slice(t)) s += p;
    EXPECT_NEAR(s, 1.0, 1e-12) << "t = " << t;
    for (int a = -t; a <= t; ++a)
      for (int b = -t; b <= t; ++b) {
        const double p = k(t, {a, b});
        if ((t + a + b) % 2 != 0 || std::abs(a) + std::abs(b) > t) {
          ASSERT_EQ(p, 0.0);
          continue;
        }
        ASSERT_EQ(p, k(t, {b, a}));
        ASSERT_EQ(p, k(t, {-a, b}));
        ASSERT_EQ(p, k(t, {a, -b}));
      }
  }
}

TEST(Kernel, OtherDimensions) {
  const KernelTable<1> k1(30);
  const KernelTable<3> k3(12);
  for (int t = 0; t <= 30; ++t) {
    double s = 0;
    for (double p : k1.slice(t)) s += p;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  for (int t = 1; t <= 15; ++t) EXPECT_NEAR(k1(2 * t, {0}), central_1d(t), 1e-14);
  for (int t = 0; t <= 12; ++t) {
    double s = 0;
    for (double p : k3.slice(t)) s += p;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_NEAR(k3(1, {0, 0, 1}), 1.0 / 6.0, 1e-16);
  EXPECT_NEAR(k3(2, {0, 0, 0}), 1.0 / 6.0, 1e-16);
}

TEST(Kernel, ChapmanKolmogorov) {
  const KernelTable<2> k(40);
  for (int s : {1, 3, 7, 12})
    for (int t : {2, 5, 11, 20})
      for (Site<2> x : {Site<2>{0, 0}, Site<2>{3, -2}, Site<2>{1, 0}, Site<2>{-5, 6}, Site<2>{10, 1}}) {
        if (s + t > 40) continue;
        double conv = 0;
        for (int a = -s; a <= s; ++a)
          for (int b = -s; b <= s; ++b) conv += k(s, {a, b}) * k(t, x - Site<2>{a, b});
        EXPECT_NEAR(k(s + t, x), conv, 1e-12) << s << " " << t;
      }
}

TEST(Kernel, BudgetRefusal) {
  try {
    KernelTable<2> k(100, 1000);
    FAIL() << "expected a resource error";
  } catch (const ResourceError& e) {
    EXPECT_EQ(e.required(), static_cast<double>(KernelTable<2>::required_entries(100)));
    EXPECT_EQ(e.budget(), 1000.0);
  }
  EXPECT_THROW(KernelTable<2>(-1), std::invalid_argument);
  const KernelTable<2> k(5);
  EXPECT_THROW(k(6, {0, 0}), std::out_of_range);
}

TEST(Kernel, Rho) {
  EXPECT_EQ(rho(1), 0.0);
  EXPECT_EQ(rho(4), 2.0);
  EXPECT_NEAR(rho(100), 10.0 * std::log(100.0), 1e-12);
  EXPECT_NEAR(rho(100), 46.0517, 1e-4);
  EXPECT_THROW(rho(0), std::domain_error);
  EXPECT_THROW(rho(-3), std::domain_error);
  EXPECT_EQ(rho_floor(1), 0);
  EXPECT_EQ(rho_floor(4), 2);
  EXPECT_EQ(rho_floor(100), 46);
}

TEST(MeanLocalTime, SmallValues) {
  const auto k = build_kernel_table(40);
  EXPECT_EQ(mean_local_time(k, 1), 0.25);
  EXPECT_EQ(mean_local_time(k, 0), 0.0);
  EXPECT_THROW(mean_local_time(k, 21), std::out_of_range);
  for (int n = 1; n <= 20; ++n) {
    double ref = 0;
    for (int t = 1; t <= n; ++t) ref += central_1d(t) * central_1d(t);
    EXPECT_NEAR(mean_local_time(k, n), ref, 1e-13);
    EXPECT_NEAR(mean_local_time_squares(k, n), ref, 1e-13);
  }
}

TEST(MeanLocalTime, BothFormsAgreeUpTo500) {
  const auto s = mean_local_time_series<2>(500);
  for (int n = 1; n <= 500; ++n) {
    ASSERT_NEAR(s.via_return[n - 1], s.via_squares[n - 1], 1e-12) << n;
    ASSERT_NEAR(s.via_return[n - 1], planar_mean_local_time(n), 1e-12) << n;
    if (n > 1) {
      ASSERT_GE(s.via_return[n - 1], s.via_return[n - 2]);
    }
  }
}

TEST(MeanLocalTime, OtherDimensionsSeries) {
  const auto s1 = mean_local_time_series<1>(200);
  const auto s3 = mean_local_time_series<3>(20);
  for (int n = 1; n <= 200; ++n) ASSERT_NEAR(s1.via_return[n - 1], s1.via_squares[n - 1], 1e-12);
  for (int n = 1; n <= 20; ++n) ASSERT_NEAR(s3.via_return[n - 1], s3.via_squares[n - 1], 1e-12);
}

TEST(MeanLocalTime, LogarithmicGrowth) {
  double prev = 10;
  for (long N : {1000L, 10000L, 100000L}) {
    const double r = std::numbers::pi * planar_mean_local_time(N) / std::log(static_cast<double>(N));
    EXPECT_LT(r, prev);
    EXPECT_GT(r, 1.0);
    prev = r;
  }
  EXPECT_GE(prev, 0.9);
  EXPECT_LE(prev, 1.3);
}

TEST(RestrictedLocalTime, Basics) {
  const auto k = build_kernel_table(40);
  EXPECT_EQ(restricted_local_time(k, 1), 0.0);
  EXPECT_EQ(planar_restricted_local_time(1), 0.0);
  double prev = 0;
  for (int u = 1; u <= 40; ++u) {
    const double a = restricted_local_time(k, u);
    EXPECT_NEAR(a, planar_restricted_local_time(u), 1e-13) << u;
    EXPECT_LE(a, mean_local_time_squares(k, u) + 1e-15);
    EXPECT_GE(a, prev);
    prev = a;
  }
  EXPECT_THROW(restricted_local_time(k, 41), std::out_of_range);
}

TEST(RestrictedLocalTime, DeficitBoundedUpTo1e4) {
  const auto deficit = planar_local_time_deficit(10000);
  double sup = 0, prev_hat = 0;
  for (int u = 1; u <= 10000; ++u) {
    const double d = deficit[u - 1];
    ASSERT_GE(d, 0.0);
    sup = std::max(sup, d);
    const double hat = planar_mean_local_time(u) - d;
    ASSERT_GE(hat, prev_hat - 1e-12);
    prev_hat = hat;
    if (u <= 1000 && u % 97 == 0) {
      ASSERT_NEAR(hat, planar_restricted_local_time(u), 1e-11);
    }
  }
  RecordProperty("sup_deficit", std::to_string(sup));
  EXPECT_TRUE(std::isfinite(sup));
  EXPECT_LT(sup, 1.0);
  // The deficit saturates: mass outside the window decays fast.
  EXPECT_NEAR(deficit[9999], deficit[4999], 1e-6);
}

TEST(LocalClt, SmallScan) {
  const auto all = local_clt_constant<2>(200);
  EXPECT_EQ(all.constant, 1.0);
  EXPECT_EQ(all.t_at, 0);
  EXPECT_EQ(all.violations, 0);
  const auto pos = local_clt_constant<2>(200, 1);
  EXPECT_DOUBLE_EQ(pos.constant, 0.75);
  EXPECT_EQ(pos.t_at, 2);
  EXPECT_EQ(pos.x_at, (Site<2>{0, 0}));
  double prev = 2;
  for (int t_min = 0; t_min <= 50; t_min += 5) {
    const double c = local_clt_constant<2>(100, t_min).constant;
    EXPECT_LE(c, prev);
    prev = c;
  }
  EXPECT_GT(prev, 2 / std::numbers::pi - 0.01);
}

TEST(LocalClt, TableAndStreamingAgree) {
  const KernelTable<2> k(60);
  for (int t_min : {0, 1, 9}) {
    const auto a = local_clt_constant<2>(60, t_min);
    const auto b = local_clt_constant(k, 60, t_min);
    EXPECT_EQ(a.constant, b.constant);
    EXPECT_EQ(a.t_at, b.t_at);
    EXPECT_EQ(a.points, b.points);
  }
  EXPECT_GT(local_clt_constant<2>(20, 0, 0.5).violations, 0);
}

TEST(Planar, RowMatchesBinomial) {
  for (int t : {0, 1, 2, 7, 30}) {
    const auto row = walk1d_row(t);
    double s = 0;
    for (int k = -t; k <= t; ++k) {
      const double p = row[k + t];
      s += p;
      if ((t + k) % 2 != 0) {
        EXPECT_EQ(p, 0.0);
      } else {
        const int r = (t + k) / 2;
        const double ref = std::exp(std::lgamma(t + 1.0) - std::lgamma(r + 1.0) - std::lgamma(t - r + 1.0) -
                                    t * std::numbers::ln2);
        EXPECT_NEAR(p, ref, 1e-14);
      }
    }
    EXPECT_NEAR(s, 1.0, 1e-13);
  }
}
