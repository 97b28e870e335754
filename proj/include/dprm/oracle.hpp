#pragma once

// Brute-force oracles: path and pair enumeration, tuple enumeration for the
// X/W/Y statistics, binomial and kernel scans.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "dprm/cgcm.hpp"
#include "dprm/disorder.hpp"
#include "dprm/kernel.hpp"
#include "dprm/lattice.hpp"
#include "dprm/partition.hpp"

namespace dprm {

struct ScanReport {
  std::string grid;
  double extremum = -std::numeric_limits<double>::infinity();
  std::vector<double> location;
  long violations = 0;
  long points = 0;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const {
    return {{"grid", grid}, {"extremum", extremum}, {"location", location},
            {"violations", violations}, {"points", points}, {"extra", extra}};
  }
};

/// Z_hat_N summed over all (2d)^N nearest-neighbour paths.
template <Environment F>
double enumerate_paths_partition(const F& field, double beta, int N) {
  constexpr int D = F::dimension;
  if (N < 0 || N > 8) throw std::invalid_argument("enumerate_paths_partition: N must lie in [0, 8]");
  const double lambda = log_mgf(field.law(), beta);
  const auto steps = unit_steps<D>();
  const double w = 1.0 / (2.0 * D);
  std::function<double(int, Site<D>, double)> rec = [&](int n, Site<D> x, double energy) -> double {
    if (n == N) return std::exp(energy);
    double s = 0.0;
    for (const auto& e : steps) {
      const Site<D> y = x + e;
      s += w * rec(n + 1, y, energy + beta * field.value(n + 1, y) - lambda);
    }
    return s;
  };
  return rec(0, origin<D>(), 0.0);
}

/// E2[e^{gamma L_N}] by enumerating all (2d)^{2N} path pairs and counting collisions.
template <int D = 2>
double enumerate_pair_second_moment(const DisorderLaw& law, double beta, int N) {
  if (N < 0 || N > 6) throw std::invalid_argument("enumerate_pair_second_moment: N must lie in [0, 6]");
  const double gamma = pinning_reward(law, beta);
  const auto steps = unit_steps<D>();
  std::vector<long> count(static_cast<std::size_t>(N) + 1, 0);
  std::function<void(int, Site<D>, Site<D>, int)> rec = [&](int n, Site<D> a, Site<D> b, int L) {
    if (n == N) {
      ++count[static_cast<std::size_t>(L)];
      return;
    }
    for (const auto& e1 : steps)
      for (const auto& e2 : steps) {
        const Site<D> a2 = a + e1, b2 = b + e2;
        rec(n + 1, a2, b2, L + (a2 == b2 ? 1 : 0));
      }
  };
  rec(0, origin<D>(), origin<D>(), 0);
  const double total = std::pow(2.0 * D, 2.0 * N);
  double s = 0.0;
  for (int L = 0; L <= N; ++L) s += static_cast<double>(count[static_cast<std::size_t>(L)]) / total * std::exp(gamma * L);
  return s;
}

namespace detail {

/// log n! for n <= nmax with compensated summation.
inline std::vector<double> log_factorials(int nmax) {
  std::vector<double> lf(static_cast<std::size_t>(nmax) + 1, 0.0);
  double s = 0.0, c = 0.0;
  for (int i = 1; i <= nmax; ++i) {
    const double y = std::log(static_cast<double>(i)) - c;
    const double t = s + y;
    c = (t - s) - y;
    s = t;
    lf[static_cast<std::size_t>(i)] = s;
  }
  return lf;
}

inline double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

}  // namespace detail

/// log of the second-line Stirling factor at real j.
inline double stirling_second_line_log(double t, double n, double k, double j) {
  using detail::xlogy;
  return xlogy(j, n / j) + xlogy(n - j, n / (n - j)) + xlogy(k - j, (t - n) / (k - j)) +
         xlogy(t - n - k + j, (t - n) / (t - n - k + j)) + xlogy(k, k / t) + xlogy(t - k, (t - k) / t);
}

/// Scans C(n,j) C(t-n,k-j) / C(t,k) * sqrt(min(n, t-n)) over 2 <= t <= T,
/// 1 <= n <= t-1 and (k, j) in the region
///   t(1/4+s) <= k <= t(3/4-s), n(1/4+s) <= j <= n(3/4-s),
///   (t-n)(1/4+s) <= k-j <= (t-n)(3/4-s),
/// with s = `shrink` (0 gives the full region). Violations count points where
/// the second-line factor exceeds 1 + 1e-12.
inline ScanReport binomial_ratio_scan(int T, double shrink = 0.0) {
  if (T > 200) throw std::invalid_argument("binomial_ratio_scan: T must be <= 200");
  if (!(shrink >= 0 && shrink < 0.25)) throw std::invalid_argument("binomial_ratio_scan: shrink must lie in [0, 1/4)");
  const auto lf = detail::log_factorials(std::max(T, 1));
  auto lc = [&](int n, int k) {
    return lf[static_cast<std::size_t>(n)] - lf[static_cast<std::size_t>(k)] - lf[static_cast<std::size_t>(n - k)];
  };
  const double lo = 0.25 + shrink, hi = 0.75 - shrink;
  ScanReport r;
  std::ostringstream g;
  g << "t in [2," << T << "], n in [1,t-1], region fractions [" << lo << "," << hi << "]";
  r.grid = g.str();
  double second_max = -std::numeric_limits<double>::infinity();
  std::vector<double> second_loc;
  double worst_at_optimum = 0.0;
  long empty_cells = 0;
  for (int t = 2; t <= T; ++t)
    for (int n = 1; n <= t - 1; ++n) {
      bool any = false;
      for (int k = static_cast<int>(std::ceil(lo * t - 1e-12)); k <= static_cast<int>(std::floor(hi * t + 1e-12)); ++k) {
        worst_at_optimum =
            std::max(worst_at_optimum, std::abs(std::expm1(stirling_second_line_log(t, n, k, static_cast<double>(k) * n / t))));
        for (int j = static_cast<int>(std::ceil(lo * n - 1e-12)); j <= static_cast<int>(std::floor(hi * n + 1e-12)); ++j) {
          const int kj = k - j;
          if (kj < (t - n) * lo - 1e-12 || kj > (t - n) * hi + 1e-12) continue;
          any = true;
          ++r.points;
          const double ratio = std::exp(lc(n, j) + lc(t - n, kj) - lc(t, k)) * std::sqrt(std::min(n, t - n));
          if (ratio > r.extremum) {
            r.extremum = ratio;
            r.location = {double(t), double(n), double(k), double(j)};
          }
          const double f = std::exp(stirling_second_line_log(t, n, k, j));
          if (f > second_max) {
            second_max = f;
            second_loc = {double(t), double(n), double(k), double(j)};
          }
          if (f > 1.0 + 1e-12) ++r.violations;
        }
      }
      if (!any) ++empty_cells;
    }
  r.extra = {{"second_line_max", second_max},
             {"second_line_location", second_loc},
             {"max_deviation_at_j_eq_kn_over_t", worst_at_optimum},
             {"empty_cells", empty_cells},
             {"c2_estimate", r.extremum}};
  return r;
}

/// p(t, x) = p1(t, x1 - x2) p1(t, x1 + x2) for all t <= T and x.
inline ScanReport reduction_to_1d_check(int T) {
  if (T > 50) throw std::invalid_argument("reduction_to_1d_check: T must be <= 50");
  const KernelTable<2> p2(T);
  const KernelTable<1> p1(T);
  ScanReport r;
  r.grid = "t in [0," + std::to_string(T) + "], x in [-t,t]^2";
  r.extremum = 0.0;
  for (int t = 0; t <= T; ++t)
    for_each_site<2>(t, [&](const Site<2>& x) {
      const double lhs = p2(t, x);
      const double rhs = p1(t, Site<1>{x[0] - x[1]}) * p1(t, Site<1>{x[0] + x[1]});
      const double d = std::abs(lhs - rhs);
      ++r.points;
      if (d > r.extremum) {
        r.extremum = d;
        r.location = {double(t), double(x[0]), double(x[1])};
      }
      if (d > 1e-12) ++r.violations;
    });
  return r;
}

/// max over t_min <= t <= T of (1 + t) max_x p(t, x) via the rotated 1d walks:
/// the planar maximum is p1(t, t mod 2)^2.
inline LocalCltScan<2> planar_local_clt_constant(int T, int t_min = 0, double bound = 1.0) {
  LocalCltScan<2> r;
  r.constant = -1.0;
  double c = 1.0;  // C(2s, s) / 4^s
  for (int t = 0; t <= T; ++t) {
    const int s = t / 2;
    if (t >= 2 && t % 2 == 0) c *= (2.0 * s - 1.0) / (2.0 * s);
    const double center = (t % 2 == 0) ? c : c * (2.0 * s + 1.0) / (2.0 * s + 2.0);
    if (t < t_min) continue;
    const double v = center * center * (1.0 + t);
    ++r.points;
    if (v > bound + 1e-12) ++r.violations;
    if (v > r.constant) {
      r.constant = v;
      r.t_at = t;
      r.x_at = (t % 2 == 0) ? Site<2>{0, 0} : Site<2>{1, 0};
    }
  }
  return r;
}

/// Frequency of {log Z_hat_N <= -(beta v + lambda) N} against 8 N^3 e^{-c0 v}.
/// Bounded laws carry c0 = infinity: e^{-c0 v} reads as 1{v <= max|omega|}.
/// Gaussian (c0 = infinity without a bound) is skipped.
inline ScanReport desperate_tail_check(const DisorderLaw& law, double beta, int N, const std::vector<double>& v_grid,
                                       long samples, std::uint64_t seed) {
  ScanReport r;
  r.grid = "v in {";
  for (std::size_t i = 0; i < v_grid.size(); ++i) r.grid += (i ? "," : "") + std::to_string(v_grid[i]);
  r.grid += "}, N = " + std::to_string(N) + ", law " + law.name();
  if (!law.bounded()) {
    r.extra = {{"skipped", true}, {"notice", "gaussian law has no finite tail rate c0; check skipped"}};
    return r;
  }
  if (N < 1 || N > 64) throw std::invalid_argument("desperate_tail_check: N must lie in [1, 64]");
  const double lambda = log_mgf(law, beta);
  std::vector<double> logz(static_cast<std::size_t>(samples));
  for (long i = 0; i < samples; ++i) {
    EnvironmentField<2> f(law, derive_seed(seed, static_cast<std::uint64_t>(i)), N, N);
    logz[static_cast<std::size_t>(i)] = log_partition(f, beta, N).log_zhat;
  }
  nlohmann::json rows = nlohmann::json::array();
  long vacuous = 0;
  for (double v : v_grid) {
    const double thr = -(beta * v + lambda) * N;
    long hit = 0;
    for (double lz : logz) hit += lz <= thr ? 1 : 0;
    const double freq = samples ? static_cast<double>(hit) / samples : 0.0;
    const double se = samples ? std::sqrt(freq * (1 - freq) / samples) : 0.0;
    const double bound = v <= law.max_abs() ? 8.0 * N * N * N : 0.0;
    const bool vac = bound >= 1.0;
    vacuous += vac;
    ++r.points;
    const double excess = freq - bound;
    if (excess > r.extremum) {
      r.extremum = excess;
      r.location = {v};
    }
    if (freq > bound + 3 * se) ++r.violations;
    rows.push_back({{"v", v}, {"frequency", freq}, {"stderr", se}, {"bound", bound}, {"vacuous", vac}});
  }
  r.extra = {{"rows", rows}, {"vacuous", vacuous}, {"samples", samples}};
  return r;
}

// ---------------------------------------------------------------------------
// Tuple enumeration for the X / W / Y statistics, independent of the
// contraction code: tuples are listed explicitly and P is rebuilt from a
// stored kernel table and the real-valued window rho.

/// Increasing (q+1)-tuples with t_0 in [t0_lo, t0_hi], gaps in [1, u] and
/// t_q <= t_max.
inline std::vector<std::vector<int>> enumerate_time_tuples(int q, int u, int t0_lo, int t0_hi, int t_max) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  std::function<void()> rec = [&]() {
    if (static_cast<int>(cur.size()) == q + 1) {
      out.push_back(cur);
      return;
    }
    const int last = cur.back();
    for (int g = 1; g <= u && last + g <= t_max; ++g) {
      cur.push_back(last + g);
      rec();
      cur.pop_back();
    }
  };
  for (int t0 = std::max(1, t0_lo); t0 <= std::min(t0_hi, t_max); ++t0) {
    cur = {t0};
    rec();
  }
  return out;
}

/// Explicit list of the terms P(t, x) omega_{t,x} of X with P > 0.
struct XTerm {
  std::vector<int> t;
  std::vector<Site<2>> x;
  double P = 0;
};

class TupleOracle {
 public:
  explicit TupleOracle(const CoarseGrainPlan& plan) : plan_(plan), table_(plan.u) {
    plan.validate();
    Du_ = mean_local_time_series<2>(plan.u).via_return.back();
    double dh = 0.0;
    for (int t = 1; t <= plan.u; ++t) {
      const double r = rho(t);
      for_each_site<2>(t, [&](const Site<2>& z) {
        if (l1_norm<2>(z) <= r) dh += table_(t, z) * table_(t, -z);
      });
    }
    Dhat_ = dh;
  }

  double D_u() const { return Du_; }
  double Dhat_u() const { return Dhat_; }

  double kernel(int g, const Site<2>& dx) const {
    if (l1_norm<2>(dx) > rho(g)) return 0.0;
    return table_(g, dx);
  }

  double P(const std::vector<int>& t, const std::vector<Site<2>>& x) const {
    double p = 1.0;
    for (std::size_t j = 1; j < t.size(); ++j) p *= kernel(t[j] - t[j - 1], x[j] - x[j - 1]);
    return p;
  }

  double norm() const { return 1.0 / (2.0 * plan_.R * plan_.ell * std::pow(Du_, plan_.q / 2.0)); }

  std::vector<XTerm> x_terms() const {
    const int rw = plan_.enlarged_radius();
    std::vector<Site<2>> cell;
    for_each_site<2>(rw, [&](const Site<2>& x) { cell.push_back(x); });
    std::vector<XTerm> out;
    for (const auto& t : enumerate_time_tuples(plan_.q, plan_.u, 1, plan_.ell, plan_.ell)) {
      std::vector<Site<2>> x(t.size());
      std::function<void(std::size_t, double)> rec = [&](std::size_t j, double p) {
        if (p == 0.0) return;
        if (j == t.size()) {
          out.push_back({t, x, p});
          return;
        }
        for (const auto& y : cell) {
          x[j] = y;
          rec(j + 1, j == 0 ? 1.0 : p * kernel(t[j] - t[j - 1], y - x[j - 1]));
        }
      };
      rec(0, 1.0);
    }
    return out;
  }

  template <Environment F>
  double x_statistic(const F& field) const {
    double s = 0.0;
    for (const auto& term : x_terms()) {
      double w = term.P;
      for (std::size_t j = 0; j < term.t.size(); ++j) w *= field.value(term.t[j], term.x[j]);
      s += w;
    }
    return norm() * s;
  }

  double x_second_moment() const {
    double s = 0.0;
    for (const auto& term : x_terms()) s += term.P * term.P;
    return norm() * norm() * s;
  }

  double tilted_mean_x(const std::vector<Site<2>>& S, const DisorderLaw& law, double beta) const {
    const double l1 = cumulants(law, beta).lambda1;
    const int rw = plan_.enlarged_radius();
    double s = 0.0;
    for (const auto& t : enumerate_time_tuples(plan_.q, plan_.u, 1, plan_.ell, plan_.ell)) {
      std::vector<Site<2>> x;
      bool inside = true;
      for (int tk : t) {
        x.push_back(S.at(static_cast<std::size_t>(tk)));
        inside = inside && linf_norm<2>(x.back()) <= rw;
      }
      if (inside) s += P(t, x);
    }
    return std::pow(l1, plan_.q + 1) * norm() * s;
  }

  /// Exact E^S[X] and E^S[X^2] for any law: within one tuple the points are
  /// distinct, so only first and second moments of single coordinates enter.
  struct TiltedMoments {
    double mean = 0;
    double second = 0;
    double variance() const { return second - mean * mean; }
  };
  TiltedMoments tilted_moments(const std::vector<Site<2>>* S, const DisorderLaw& law, double beta) const {
    const auto c = cumulants(law, beta);
    auto on = [&](int t, const Site<2>& x) {
      return S != nullptr && t >= 1 && static_cast<std::size_t>(t) < S->size() && (*S)[static_cast<std::size_t>(t)] == x;
    };
    auto m1 = [&](int t, const Site<2>& x) { return on(t, x) ? c.lambda1 : 0.0; };
    auto m2 = [&](int t, const Site<2>& x) { return on(t, x) ? c.lambda2 + c.lambda1 * c.lambda1 : 1.0; };
    const auto terms = x_terms();
    TiltedMoments r;
    for (const auto& a : terms) {
      double e = a.P;
      for (std::size_t j = 0; j < a.t.size(); ++j) e *= m1(a.t[j], a.x[j]);
      r.mean += e;
    }
    for (const auto& a : terms)
      for (const auto& b : terms) {
        double e = a.P * b.P;
        // points of a, matched against b by time (each tuple has one point per time)
        std::size_t ib = 0;
        std::vector<bool> used(b.t.size(), false);
        for (std::size_t ia = 0; ia < a.t.size() && e != 0.0; ++ia) {
          while (ib < b.t.size() && b.t[ib] < a.t[ia]) ++ib;
          if (ib < b.t.size() && b.t[ib] == a.t[ia] && b.x[ib] == a.x[ia]) {
            e *= m2(a.t[ia], a.x[ia]);
            used[ib] = true;
          } else {
            e *= m1(a.t[ia], a.x[ia]);
          }
        }
        for (std::size_t j = 0; j < b.t.size() && e != 0.0; ++j)
          if (!used[j]) e *= m1(b.t[j], b.x[j]);
        r.second += e;
      }
    r.mean *= norm();
    r.second *= norm() * norm();
    return r;
  }

  double w_statistic(const std::vector<Site<2>>& S) const {
    double s = 0.0;
    const int T = plan_.ell / 2 + plan_.q * plan_.u;
    for (const auto& t : enumerate_time_tuples(plan_.q, plan_.u, 1, plan_.ell / 2, T)) s += P(t, path_points(S, t));
    return s / (plan_.ell * std::pow(Du_, plan_.q));
  }

  double y_statistic(const std::vector<Site<2>>& S, int j) const {
    double s = 0.0;
    for (const auto& t : enumerate_time_tuples(plan_.q, plan_.u, j, j, j + plan_.q * plan_.u)) s += P(t, path_points(S, t));
    return s / std::pow(Du_, plan_.q) - std::pow(Dhat_ / Du_, plan_.q);
  }

 private:
  static std::vector<Site<2>> path_points(const std::vector<Site<2>>& S, const std::vector<int>& t) {
    std::vector<Site<2>> x;
    for (int tk : t) x.push_back(S.at(static_cast<std::size_t>(tk)));
    return x;
  }

  CoarseGrainPlan plan_;
  KernelTable<2> table_;
  double Du_ = 0;
  double Dhat_ = 0;
};

}  // namespace dprm
