#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "dprm/cgcm.hpp"
#include "dprm/oracle.hpp"

using namespace dprm;

namespace {

// omega'(n, x) = omega(n + a, x + b), written out independently of ShiftedField.
struct Translate {
  static constexpr int dimension = 2;
  const EnvironmentField<2>* f;
  int a;
  Site<2> b;
  const DisorderLaw& law() const { return f->law(); }
  bool covers(int n, const Site<2>& x) const { return f->covers(n + a, {x[0] + b[0], x[1] + b[1]}); }
  double value(int n, const Site<2>& x) const { return f->value(n + a, {x[0] + b[0], x[1] + b[1]}); }
};

std::vector<CoarseGrainPlan> tiny_plans() {
  std::vector<CoarseGrainPlan> out;
  for (int q : {1, 2})
    for (int u : {1, 2, 3}) out.push_back(CoarseGrainPlan::manual(4, q, u));
  out.push_back(CoarseGrainPlan::manual(4, 1, 2, 2));
  return out;
}

// A path that stays near the origin: oscillates between (0,0) and (1,0).
std::vector<Site<2>> lazy_path(int T) {
  std::vector<Site<2>> S(static_cast<std::size_t>(T) + 1);
  for (int t = 0; t <= T; ++t) S[static_cast<std::size_t>(t)] = {t % 2, 0};
  return S;
}

struct Mc {
  double s = 0, s2 = 0;
  long n = 0;
  void add(double v) {
    s += v;
    s2 += v * v;
    ++n;
  }
  double mean() const { return s / n; }
  double se() const { return std::sqrt((s2 / n - mean() * mean()) / (n - 1)); }
};

}  // namespace

TEST(Plan, AsymptoticFormulas) {
  const auto p = CoarseGrainPlan::formula(16, 0.05);
  EXPECT_EQ(p.q, 1);
  EXPECT_EQ(p.u, static_cast<int>(std::floor(std::pow(16.0, 1 - 0.0025))));
  const auto big = CoarseGrainPlan::formula(1 << 20, 0.05);
  const double ll = std::log(std::log(double(1 << 20)));
  EXPECT_EQ(big.q, static_cast<int>(std::lround(ll * ll)));
  EXPECT_FALSE(CoarseGrainPlan::formula(16, 0.05).warnings().empty());
}

TEST(Plan, Validation) {
  EXPECT_THROW(CoarseGrainPlan::manual(9, 1, 1), ConfigError);
  EXPECT_THROW(CoarseGrainPlan::manual(4, 0, 1), ConfigError);
  EXPECT_THROW(CoarseGrainPlan::manual(4, 1, 5), ConfigError);
  EXPECT_THROW(CoarseGrainPlan::manual(4, 1, 1, 0), ConfigError);
  EXPECT_THROW(CoarseGrainPlan::manual(4, 1, 1, 1, 0.1), ConfigError);
  EXPECT_THROW(CoarseGrainPlan::manual(4, 1, 1, 1, 0.05, 0.0), ConfigError);
  EXPECT_THROW(CoarseGrainPlan::path_statistics(7, 1, 1), ConfigError);
  EXPECT_THROW(CoarseGrainPlan::path_statistics(12, 1, 4).width(), ConfigError);
  EXPECT_NO_THROW(CoarseGrainPlan::path_statistics(12, 1, 4));
}

TEST(Plan, GeometryAndWarnings) {
  const auto p = CoarseGrainPlan::manual(16, 1, 4, 2);
  EXPECT_EQ(p.width(), 4);
  EXPECT_EQ(p.enlarged_cardinality(), 17L * 17);
  EXPECT_DOUBLE_EQ(p.nominal_cardinality(), 4.0 * 4 * 16);
  EXPECT_TRUE(p.warnings().empty());
  const auto bad = CoarseGrainPlan::manual(16, 3, 4);
  ASSERT_EQ(bad.warnings().size(), 1u);
  EXPECT_NE(bad.warnings()[0].find("exceeds"), std::string::npos);
  EXPECT_TRUE(p.compar_warning(1.0, 1.07).empty());
  EXPECT_FALSE(p.compar_warning(1.0, 2.0).empty());
  EXPECT_NE(p.hash(), bad.hash());
  EXPECT_EQ(p.hash(), CoarseGrainPlan::manual(16, 1, 4, 2).hash());
}

TEST(Interlacements, CountIsBinomial) {
  for (int q = 0; q <= 20; ++q)
    for (int r = 0; r <= q; ++r) {
      const auto v = interlacements(q, r);
      const double c = binomial(q + 1, q - r + 1);
      ASSERT_EQ(static_cast<double>(v.size()), c) << q << " " << r;
      ASSERT_LE(c, std::pow(2.0, q));
      for (const auto& s : v) {
        ASSERT_EQ(static_cast<int>(s.size()), q - r + 1);
        ASSERT_TRUE(std::is_sorted(s.begin(), s.end()));
        ASSERT_GE(s.front(), 0);
        ASSERT_LE(s.back(), r);
      }
    }
}

TEST(XStatistic, ContractionMatchesTupleEnumeration) {
  for (const auto& plan : tiny_plans()) {
    const BlockStatistics<2> bs(plan);
    const TupleOracle oracle(plan);
    EXPECT_NEAR(bs.D_u(), oracle.D_u(), 1e-15);
    EXPECT_NEAR(bs.Dhat_u(), oracle.Dhat_u(), 1e-15);
    EXPECT_NEAR(bs.normalization(), oracle.norm(), 1e-15);
    EXPECT_NEAR(bs.x_second_moment_exact(), oracle.x_second_moment(), 1e-12);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      EnvironmentField<2> f(DisorderLaw::gaussian(), seed, plan.ell, plan.enlarged_radius());
      EXPECT_NEAR(bs.x_statistic(f), oracle.x_statistic(f), 1e-12) << plan.config_block();
    }
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto S = sample_walk<2>(seed, plan.ell);
      EXPECT_NEAR(bs.tilted_mean_x(S, DisorderLaw::gaussian(), 0.7), oracle.tilted_mean_x(S, DisorderLaw::gaussian(), 0.7),
                  1e-12);
    }
  }
}

TEST(XStatistic, HandCase) {
  // l = 4, q = 1, u = 2: the window keeps only g = 2, dx = 0 with p = 1/4, and
  // D(2) = 1/4 + 9/64, so X = (1/5) sum_{t=1,2} sum_{|x|<=2} omega(t,x) omega(t+2,x) / 4.
  const BlockStatistics<2> bs(CoarseGrainPlan::manual(4, 1, 2));
  EXPECT_DOUBLE_EQ(bs.D_u(), 25.0 / 64);
  EXPECT_DOUBLE_EQ(bs.normalization(), 0.2);
  EXPECT_NEAR(bs.x_second_moment_exact(), 0.125, 1e-15);
  EnvironmentField<2> f(DisorderLaw::rademacher(), 4, 4, 2);
  double s = 0;
  for (int t = 1; t <= 2; ++t)
    for_each_site<2>(2, [&](const Site<2>& x) { s += f.value(t, x) * f.value(t + 2, x) / 4; });
  EXPECT_NEAR(bs.x_statistic(f), 0.2 * s, 1e-15);
}

TEST(XStatistic, UnitRangeIsDegenerate) {
  // rho(1) = 0 removes every one-step displacement.
  const BlockStatistics<2> bs(CoarseGrainPlan::manual(4, 1, 1));
  EXPECT_EQ(bs.x_second_moment_exact(), 0.0);
  EnvironmentField<2> f(DisorderLaw::gaussian(), 1, 4, 2);
  EXPECT_EQ(bs.x_statistic(f), 0.0);
}

TEST(XStatistic, SecondMomentAtMostOne) {
  for (int ell : {4, 16, 36})
    for (int q : {1, 2, 3})
      for (int u : {2, ell / 2, ell}) {
        const BlockStatistics<2> bs(CoarseGrainPlan::manual(ell, q, u));
        const double v = bs.x_second_moment_exact();
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0) << ell << " " << q << " " << u;
      }
}

TEST(XStatistic, SampledMoments) {
  const auto plan = CoarseGrainPlan::manual(16, 2, 4);
  const BlockStatistics<2> bs(plan);
  Mc m, m2;
  for (int i = 0; i < 10000; ++i) {
    EnvironmentField<2> f(DisorderLaw::gaussian(), derive_seed(8, i), plan.ell, plan.enlarged_radius());
    const double x = bs.x_statistic(f);
    m.add(x);
    m2.add(x * x);
  }
  EXPECT_LE(std::abs(m.mean()), 3 * m.se());
  EXPECT_LE(std::abs(m2.mean() - bs.x_second_moment_exact()), 3 * m2.se());
}

TEST(XStatistic, TranslationEquivariance) {
  const auto plan = CoarseGrainPlan::manual(16, 2, 4);
  const BlockStatistics<2> bs(plan);
  EnvironmentField<2> f(DisorderLaw::gaussian(), 99, 64, 40);
  for (int i : {1, 2, 4})
    for (Site<2> y : {Site<2>{0, 0}, Site<2>{1, -2}, Site<2>{-3, 5}}) {
      const Translate t{&f, (i - 1) * plan.ell, {y[0] * 4, y[1] * 4}};
      const double a = bs.x_statistic(f, i, y), b = bs.x_statistic(t);
      EXPECT_EQ(std::bit_cast<std::uint64_t>(a), std::bit_cast<std::uint64_t>(b));
    }
  EXPECT_THROW(bs.x_statistic(f, 5, Site<2>{0, 0}), std::out_of_range);
}

TEST(TiltedMean, PathOutsideCellIsZero) {
  const BlockStatistics<2> bs(CoarseGrainPlan::manual(4, 1, 2));
  std::vector<Site<2>> S(5, Site<2>{7, 7});
  S[0] = {0, 0};
  EXPECT_EQ(bs.tilted_mean_x(S, DisorderLaw::gaussian(), 1.0), 0.0);
  EXPECT_THROW(bs.tilted_mean_x(std::vector<Site<2>>(3), DisorderLaw::gaussian(), 1.0), std::invalid_argument);
}

TEST(TiltedMean, MatchesTiltedSampling) {
  const auto plan = CoarseGrainPlan::manual(16, 1, 4);
  const BlockStatistics<2> bs(plan);
  const double beta = 0.8;
  for (std::uint64_t p = 1; p <= 2; ++p) {
    const auto S = sample_walk<2>(p, plan.ell);
    Mc m;
    for (int i = 0; i < 10000; ++i) {
      TiltedField<2> f(EnvironmentField<2>(DisorderLaw::gaussian(), derive_seed(p, i), plan.ell, plan.enlarged_radius()), beta, S);
      m.add(bs.x_statistic(f));
    }
    EXPECT_LE(std::abs(m.mean() - bs.tilted_mean_x(S, DisorderLaw::gaussian(), beta)), 3 * m.se());
  }
}

TEST(TiltedVariance, ClosedFormOnTinyInstances) {
  // Gaussian: on-path coordinates are N(beta, 1), so Var^S(X) is a closed form
  // over the tuple list; compare it with sampling and with (1 + eps^3)^q.
  const double eps = 0.05;
  for (int q : {1, 2}) {
    const auto plan = CoarseGrainPlan::manual(4, q, 2, 1, eps);
    const TupleOracle oracle(plan);
    const BlockStatistics<2> bs(plan);
    const auto S = lazy_path(plan.ell);
    const double beta = 0.3;
    const auto tm = oracle.tilted_moments(&S, DisorderLaw::gaussian(), beta);
    EXPECT_NEAR(tm.mean, bs.tilted_mean_x(S, DisorderLaw::gaussian(), beta), 1e-12);
    const auto untilted = oracle.tilted_moments(nullptr, DisorderLaw::gaussian(), beta);
    EXPECT_NEAR(untilted.mean, 0.0, 1e-15);
    EXPECT_NEAR(untilted.second, bs.x_second_moment_exact(), 1e-12);
    Mc m2;
    Mc m;
    for (int i = 0; i < 20000; ++i) {
      TiltedField<2> f(EnvironmentField<2>(DisorderLaw::gaussian(), derive_seed(60 + q, i), plan.ell, plan.enlarged_radius()), beta, S);
      const double x = bs.x_statistic(f);
      m.add(x);
      m2.add(x * x);
    }
    EXPECT_LE(std::abs(m2.mean() - tm.second), 3 * m2.se());
    RecordProperty("var_q" + std::to_string(q), std::to_string(tm.variance()));
    EXPECT_LE(tm.variance(), std::pow(1 + eps * eps * eps, q));
  }
}

TEST(PathStatistics, MatchTupleEnumeration) {
  for (int ell : {4, 6, 8})
    for (int q : {1, 2})
      for (int u : {1, 2, 3}) {
        const auto plan = CoarseGrainPlan::path_statistics(ell, q, u);
        if (!plan.jprime_fits()) continue;
        const BlockStatistics<2> bs(plan);
        const TupleOracle oracle(plan);
        for (std::uint64_t seed = 1; seed <= 4; ++seed) {
          const auto S = sample_walk<2>(seed, ell);
          EXPECT_NEAR(bs.w_statistic(S), oracle.w_statistic(S), 1e-12);
          for (int j = 1; j <= ell / 2; ++j) EXPECT_NEAR(bs.y_statistic(S, j), oracle.y_statistic(S, j), 1e-12);
        }
      }
}

TEST(PathStatistics, JPrimeConstraint) {
  const BlockStatistics<2> bs(CoarseGrainPlan::path_statistics(8, 2, 3));
  EXPECT_THROW(bs.w_statistic(sample_walk<2>(1, 20)), ConfigError);
  EXPECT_THROW(bs.y_statistic(sample_walk<2>(1, 20), 1), ConfigError);
}

TEST(WStatistic, NonnegativeAndMean) {
  const auto plan = CoarseGrainPlan::path_statistics(64, 2, 8);
  const BlockStatistics<2> bs(plan);
  Mc m;
  for (int i = 0; i < 10000; ++i) {
    const double w = bs.w_statistic(sample_walk<2>(derive_seed(3, i), plan.ell));
    ASSERT_GE(w, 0.0);
    m.add(w);
  }
  EXPECT_NEAR(bs.w_expectation(), 0.5 * std::pow(bs.Dhat_u() / bs.D_u(), 2), 1e-15);
  EXPECT_LE(std::abs(m.mean() - bs.w_expectation()), 3 * m.se());
  EXPECT_LE(m.mean(), 0.5 + 3 * m.se());
}

TEST(YStatistic, CovarianceVanishesForSeparatedIndices) {
  const BlockStatistics<2> bs(CoarseGrainPlan::path_statistics(12, 1, 4));
  const auto far = y_covariance_check(bs, 1, 5, 0, 0);
  EXPECT_TRUE(far.exact);
  EXPECT_NEAR(far.covariance, 0.0, 1e-12);
  const auto near = y_covariance_check(bs, 1, 3, 0, 0);
  EXPECT_GT(std::abs(near.covariance), 1e-6);
  const auto same = y_covariance_check(bs, 2, 2, 0, 0);
  EXPECT_GT(same.covariance, 0.0);
  EXPECT_LE(same.max_abs_y, same.envelope + 1.0);
  const BlockStatistics<2> bs2(CoarseGrainPlan::path_statistics(12, 2, 2));
  EXPECT_NEAR(y_covariance_check(bs2, 1, 5, 0, 0).covariance, 0.0, 1e-12);
  EXPECT_NEAR(y_covariance_check(bs2, 2, 6, 0, 0).covariance, 0.0, 1e-12);
}

TEST(YStatistic, MonteCarloBeyondEnumeration) {
  const BlockStatistics<2> bs(CoarseGrainPlan::path_statistics(16, 1, 4));
  const auto r = y_covariance_check(bs, 1, 8, 20000, 5);
  EXPECT_FALSE(r.exact);
  EXPECT_LE(std::abs(r.covariance), 3 * r.stderr_);
}

TEST(Penalty, Values) {
  const BlockStatistics<2> bs(CoarseGrainPlan::manual(4, 1, 2, 1, 0.05, 2.0));
  EXPECT_NEAR(bs.threshold(), std::exp(4.0), 1e-12);
  EXPECT_EQ(bs.penalty_of(0.0), 1.0);
  EXPECT_EQ(bs.penalty_of(54.0), 1.0);
  EXPECT_EQ(bs.penalty_of(55.0), std::exp(-2.0));
  EnvironmentField<2> f(DisorderLaw::gaussian(), 1, 4, 2);
  EXPECT_EQ(bs.g_penalty(f, 1, Site<2>{0, 0}), 1.0);
}

TEST(Penalty, InverseMeanBound) {
  const auto plan = CoarseGrainPlan::manual(16, 2, 4);
  const BlockStatistics<2> bs(plan);
  Mc gi;
  long tail = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    EnvironmentField<2> f(DisorderLaw::gaussian(), derive_seed(17, i), plan.ell, plan.enlarged_radius());
    const double x = bs.x_statistic(f);
    tail += x >= bs.threshold();
    gi.add(1.0 / bs.penalty_of(x));
  }
  const double p = static_cast<double>(tail) / n;
  EXPECT_LE(gi.mean(), 1 + (std::exp(plan.K) - 1) * p + 1e-12);
  if (p <= std::exp(-2 * plan.K * plan.K)) {
    EXPECT_LE(gi.mean(), 2.0);
  }
}

TEST(FractionalMoment, UnitPenaltyIsJensen) {
  const auto plan = CoarseGrainPlan::manual(4, 1, 2, 1, 0.05, 50.0);
  const BlockStatistics<2> bs(plan);
  const CoarseTrajectory<2> Y{4, {{0, 0}, {1, 0}}};
  const auto r = fractional_moment_pipeline(DisorderLaw::gaussian(), 1.0, bs, Y, 3000, 4, false);
  EXPECT_EQ(r.mean_g_inv, 1.0);
  EXPECT_EQ(r.tail_frequency, 0.0);
  EXPECT_TRUE(r.cs_holds);
  EXPECT_LE(r.cs_lhs, r.cs_rhs + 3 * r.cs_slack_se);
}

TEST(FractionalMoment, AggregateDirection) {
  const auto plan = CoarseGrainPlan::manual(4, 1, 2);
  const BlockStatistics<2> bs(plan);
  const CoarseTrajectory<2> Y{4, {{0, 0}}};
  const auto r = fractional_moment_pipeline(DisorderLaw::gaussian(), 1.0, bs, Y, 4000, 6, true);
  EXPECT_TRUE(r.cs_holds);
  EXPECT_GE(r.sum_sqrt_terms + 3 * std::hypot(r.sum_sqrt_terms_se, r.mean_sqrt_zhat_se), r.mean_sqrt_zhat);
  EXPECT_DOUBLE_EQ(r.two_pow_minus_m, 0.5);
  EXPECT_THROW(fractional_moment_pipeline(DisorderLaw::gaussian(), 1.0, bs, CoarseTrajectory<2>{16, {{0, 0}}}, 1, 1),
               std::invalid_argument);
}

TEST(FractionalMoment, SlackStandardErrorAgainstDirectVariance) {
  // With c and g deterministic the delta method reduces to 2 E[A] sd(A) / sqrt(n - 1).
  EXPECT_NEAR(cauchy_schwarz_slack_se(101, 0.5, 1, 1, 0.04, 0, 0, 0, 0, 0), 2 * 0.5 * 0.2 / 10, 1e-15);
}
