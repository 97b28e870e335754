#pragma once

// Simple random walk kernels p(t, x) on Z^D, the mean intersection local time
// D(N), its windowed version, and local-CLT scans.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dprm/errors.hpp"
#include "dprm/lattice.hpp"

namespace dprm {

/// rho(t) = min(t/2, log(t) sqrt(t)), natural logarithm.
inline double rho(long t) {
  if (t <= 0) throw std::domain_error("rho: t must be >= 1, got " + std::to_string(t));
  const double td = static_cast<double>(t);
  return std::min(td / 2.0, std::log(td) * std::sqrt(td));
}

/// Largest integer radius r with r <= rho(t).
inline int rho_floor(long t) { return static_cast<int>(std::floor(rho(t) + 1e-12)); }

/// Streams the slices p(t, .) for t = 0, 1, ..., horizon, keeping two slices.
/// Only the l1 cone |x|_1 <= t with parity of t is ever written.
template <int D>
class KernelSweep {
 public:
  explicit KernelSweep(int horizon)
      : horizon_(horizon), box_(horizon + 1), cur_(box_.size(), 0.0), nxt_(box_.size(), 0.0) {
    if (horizon < 0) throw std::invalid_argument("KernelSweep: negative horizon");
    cur_[box_.index(origin<D>())] = 1.0;
  }

  int time() const { return t_; }
  int horizon() const { return horizon_; }
  const LatticeBox<D>& box() const { return box_; }

  double at(const Site<D>& x) const { return box_.contains(x) ? cur_[box_.index(x)] : 0.0; }
  std::span<const double> values() const { return cur_; }

  void advance() {
    if (t_ >= horizon_) throw std::out_of_range("KernelSweep: past horizon");
    const int t = t_ + 1;
    const double w = 1.0 / (2.0 * D);
    std::array<std::ptrdiff_t, D> st{};
    for (int i = 0; i < D; ++i) st[i] = box_.stride(i);
    const double* old = cur_.data();
    double* out = nxt_.data();
    for_each_row<D>(box_, t, t, [&](const Site<D>& pre, int lo, int hi, std::size_t base) {
      int ps = 0;
      for (int i = 0; i < D - 1; ++i) ps += pre[i];
      if (((lo - (t - ps)) & 1) != 0) ++lo;
      for (int k = lo; k <= hi; k += 2) {
        const std::size_t i0 = base + static_cast<std::size_t>(k);
        double s = 0.0;
        for (int a = 0; a < D; ++a) s += old[i0 - st[a]] + old[i0 + st[a]];
        out[i0] = w * s;
      }
    });
    std::swap(cur_, nxt_);
    t_ = t;
  }

  /// Calls fn(x, p) for every site of the current cone with the right parity.
  template <class Fn>
  void for_each_value(Fn&& fn) const {
    const int t = t_;
    for_each_row<D>(box_, t, t, [&](Site<D> x, int lo, int hi, std::size_t base) {
      int ps = 0;
      for (int i = 0; i < D - 1; ++i) ps += x[i];
      if (((lo - (t - ps)) & 1) != 0) ++lo;
      for (int k = lo; k <= hi; k += 2) {
        x[D - 1] = k;
        fn(static_cast<const Site<D>&>(x), cur_[base + static_cast<std::size_t>(k)]);
      }
    });
  }

 private:
  int horizon_;
  LatticeBox<D> box_;
  std::vector<double> cur_;
  std::vector<double> nxt_;
  int t_ = 0;
};

/// All slices p(t, .) for t <= horizon, slice t stored densely on [-t, t]^D.
template <int D>
class KernelTable {
 public:
  static constexpr std::size_t kDefaultBudget = std::size_t{1} << 26;

  static std::size_t required_entries(int horizon) {
    std::size_t total = 0;
    for (int t = 0; t <= horizon; ++t) {
      std::size_t s = 1;
      for (int i = 0; i < D; ++i) s *= static_cast<std::size_t>(2 * t + 1);
      total += s;
    }
    return total;
  }

  explicit KernelTable(int horizon, std::size_t budget = kDefaultBudget) : horizon_(horizon) {
    if (horizon < 0) throw std::invalid_argument("KernelTable: negative horizon");
    const std::size_t need = required_entries(horizon);
    if (need > budget)
      throw ResourceError("KernelTable of dimension " + std::to_string(D) + " and horizon " +
                              std::to_string(horizon) + " exceeds the memory budget",
                          static_cast<double>(need), static_cast<double>(budget));
    KernelSweep<D> sweep(horizon);
    slices_.reserve(static_cast<std::size_t>(horizon) + 1);
    for (int t = 0; t <= horizon; ++t) {
      if (t > 0) sweep.advance();
      LatticeBox<D> b(t);
      std::vector<double> v(b.size(), 0.0);
      sweep.for_each_value([&](const Site<D>& x, double p) { v[b.index(x)] = p; });
      boxes_.push_back(b);
      slices_.push_back(std::move(v));
    }
  }

  int horizon() const { return horizon_; }

  double operator()(int t, const Site<D>& x) const {
    if (t < 0 || t > horizon_)
      throw std::out_of_range("KernelTable: time " + std::to_string(t) + " beyond horizon " + std::to_string(horizon_));
    const auto& b = boxes_[static_cast<std::size_t>(t)];
    return b.contains(x) ? slices_[static_cast<std::size_t>(t)][b.index(x)] : 0.0;
  }

  const LatticeBox<D>& box(int t) const { return boxes_.at(static_cast<std::size_t>(t)); }
  std::span<const double> slice(int t) const { return slices_.at(static_cast<std::size_t>(t)); }

 private:
  int horizon_;
  std::vector<LatticeBox<D>> boxes_;
  std::vector<std::vector<double>> slices_;
};

inline KernelTable<2> build_kernel_table(int horizon, std::size_t budget = KernelTable<2>::kDefaultBudget) {
  return KernelTable<2>(horizon, budget);
}

/// D(N) = sum_{t=1}^N p(2t, 0).
template <int D>
double mean_local_time(const KernelTable<D>& table, int N) {
  if (N < 0) throw std::invalid_argument("mean_local_time: N < 0");
  if (2 * N > table.horizon())
    throw std::out_of_range("mean_local_time: need horizon >= 2N = " + std::to_string(2 * N));
  double s = 0.0;
  for (int t = 1; t <= N; ++t) s += table(2 * t, origin<D>());
  return s;
}

/// D(N) = sum_{t=1}^N sum_x p(t, x)^2.
template <int D>
double mean_local_time_squares(const KernelTable<D>& table, int N) {
  if (N < 0) throw std::invalid_argument("mean_local_time_squares: N < 0");
  if (N > table.horizon()) throw std::out_of_range("mean_local_time_squares: N beyond horizon");
  double s = 0.0;
  for (int t = 1; t <= N; ++t)
    for (double p : table.slice(t)) s += p * p;
  return s;
}

/// Both forms of D(n) for n = 1..N, streamed (memory O(N^D)).
struct LocalTimeSeries {
  std::vector<double> via_return;   // index n-1 -> sum_{t<=n} p(2t,0)
  std::vector<double> via_squares;  // index n-1 -> sum_{t<=n} sum_x p(t,x)^2
};

template <int D>
LocalTimeSeries mean_local_time_series(int N) {
  LocalTimeSeries out;
  out.via_return.resize(static_cast<std::size_t>(N));
  out.via_squares.resize(static_cast<std::size_t>(N));
  KernelSweep<D> sweep(2 * N);
  std::vector<double> ret(static_cast<std::size_t>(N) + 1, 0.0);
  double sq = 0.0;
  for (int t = 1; t <= 2 * N; ++t) {
    sweep.advance();
    if (t <= N) {
      double s = 0.0;
      sweep.for_each_value([&](const Site<D>&, double p) { s += p * p; });
      sq += s;
      out.via_squares[static_cast<std::size_t>(t - 1)] = sq;
    }
    if (t % 2 == 0) ret[static_cast<std::size_t>(t / 2)] = sweep.at(origin<D>());
  }
  double acc = 0.0;
  for (int n = 1; n <= N; ++n) {
    acc += ret[static_cast<std::size_t>(n)];
    out.via_return[static_cast<std::size_t>(n - 1)] = acc;
  }
  return out;
}

/// D_hat(u) = sum_{t=1}^u sum_{|z|_1 <= rho(t)} p(t, z) p(t, -z).
template <int D>
double restricted_local_time(const KernelTable<D>& table, int u) {
  if (u < 0) throw std::invalid_argument("restricted_local_time: u < 0");
  if (u > table.horizon()) throw std::out_of_range("restricted_local_time: u beyond horizon");
  double s = 0.0;
  for (int t = 1; t <= u; ++t) {
    const double r = rho(t);
    const auto& b = table.box(t);
    const auto sl = table.slice(t);
    for (std::size_t i = 0; i < sl.size(); ++i) {
      if (sl[i] == 0.0) continue;
      const Site<D> z = b.site(i);
      if (l1_norm<D>(z) <= r) s += sl[i] * table(t, -z);
    }
  }
  return s;
}

/// Result of a scan of p(t, x) (1 + t) <= bound.
template <int D>
struct LocalCltScan {
  double constant = 0;  // max of p(t,x)(1+t) over the scanned set
  int t_at = 0;
  Site<D> x_at{};
  long violations = 0;  // points with p(t,x)(1+t) > bound + 1e-12
  long points = 0;
};

/// max over t_min <= t <= T and all x of p(t, x)(1 + t), by streaming DP.
template <int D>
LocalCltScan<D> local_clt_constant(int T, int t_min = 0, double bound = 1.0) {
  LocalCltScan<D> r;
  r.constant = -1.0;
  KernelSweep<D> sweep(T);
  for (int t = 0; t <= T; ++t) {
    if (t > 0) sweep.advance();
    if (t < t_min) continue;
    const double f = 1.0 + t;
    sweep.for_each_value([&](const Site<D>& x, double p) {
      const double v = p * f;
      ++r.points;
      if (v > bound + 1e-12) ++r.violations;
      if (v > r.constant) {
        r.constant = v;
        r.t_at = t;
        r.x_at = x;
      }
    });
  }
  return r;
}

/// Same scan over a stored table.
template <int D>
LocalCltScan<D> local_clt_constant(const KernelTable<D>& table, int T, int t_min = 0, double bound = 1.0) {
  if (T > table.horizon()) throw std::out_of_range("local_clt_constant: T beyond horizon");
  LocalCltScan<D> r;
  r.constant = -1.0;
  for (int t = t_min; t <= T; ++t) {
    const auto& b = table.box(t);
    const auto sl = table.slice(t);
    for (std::size_t i = 0; i < sl.size(); ++i) {
      if (sl[i] == 0.0) continue;
      const double v = sl[i] * (1.0 + t);
      ++r.points;
      if (v > bound + 1e-12) ++r.violations;
      if (v > r.constant) {
        r.constant = v;
        r.t_at = t;
        r.x_at = b.site(i);
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Planar shortcuts. Rotating (x1, x2) -> (x1 - x2, x1 + x2) turns the planar
// walk into two independent walks on Z, so |x|_1 = max(|a|, |b|) and
// p(t, x) = p1(t, a) p1(t, b).

/// p1(t, k) for k = -t..t (index k + t), one-dimensional nearest-neighbour walk.
inline std::vector<double> walk1d_row(int t) {
  if (t < 0) throw std::invalid_argument("walk1d_row: t < 0");
  std::vector<double> row(static_cast<std::size_t>(2 * t + 1), 0.0);
  const int s = t / 2;
  double c = 1.0;  // C(2s, s) / 4^s
  for (int i = 1; i <= s; ++i) c *= (2.0 * i - 1.0) / (2.0 * i);
  int k0 = t % 2;
  double center = (k0 == 0) ? c : c * (2.0 * s + 1.0) / (2.0 * s + 2.0);
  // p1(t, k + 2) = p1(t, k) (t - k) / (t + k + 2)
  double v = center;
  for (int k = k0; k <= t; k += 2) {
    row[static_cast<std::size_t>(k + t)] = v;
    row[static_cast<std::size_t>(-k + t)] = v;
    v *= static_cast<double>(t - k) / static_cast<double>(t + k + 2);
  }
  return row;
}

/// p(2t, 0) for the planar walk, t = 0..N, via p1(2t, 0)^2.
inline std::vector<double> planar_return_probabilities(int N) {
  std::vector<double> out(static_cast<std::size_t>(N) + 1);
  double c = 1.0;
  out[0] = 1.0;
  for (int t = 1; t <= N; ++t) {
    c *= (2.0 * t - 1.0) / (2.0 * t);
    out[static_cast<std::size_t>(t)] = c * c;
  }
  return out;
}

/// D(N) for the planar walk in O(N).
inline double planar_mean_local_time(long N) {
  if (N < 0) throw std::invalid_argument("planar_mean_local_time: N < 0");
  double c = 1.0;
  double s = 0.0;
  for (long t = 1; t <= N; ++t) {
    c *= (2.0 * t - 1.0) / (2.0 * t);
    s += c * c;
  }
  return s;
}

/// D(u) - D_hat(u) for the planar walk, u = 1..U (index u-1).
inline std::vector<double> planar_local_time_deficit(int U) {
  std::vector<double> out(static_cast<std::size_t>(U));
  double acc = 0.0;
  for (int t = 1; t <= U; ++t) {
    const auto row = walk1d_row(t);
    const int r = std::min(t, rho_floor(t));
    double inside = 0.0;
    double outside = 0.0;
    for (int a = -t; a <= t; ++a) {
      const double p = row[static_cast<std::size_t>(a + t)];
      (std::abs(a) <= r ? inside : outside) += p * p;
    }
    // (S_all^2 - S_r^2) = outside * (outside + 2 inside)
    acc += outside * (outside + 2.0 * inside);
    out[static_cast<std::size_t>(t - 1)] = acc;
  }
  return out;
}

/// D_hat(u) for the planar walk.
inline double planar_restricted_local_time(int u) {
  double s = 0.0;
  for (int t = 1; t <= u; ++t) {
    const auto row = walk1d_row(t);
    const int r = std::min(t, rho_floor(t));
    double inside = 0.0;
    for (int a = -r; a <= r; ++a) inside += row[static_cast<std::size_t>(a + t)] * row[static_cast<std::size_t>(a + t)];
    s += inside * inside;
  }
  return s;
}

}  // namespace dprm
