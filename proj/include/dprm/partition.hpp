#pragma once

// Point-to-line partition functions by transfer matrix, forward-backward
// marginals, replica overlaps and the coarse-grained decomposition.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dprm/disorder.hpp"
#include "dprm/errors.hpp"
#include "dprm/lattice.hpp"

namespace dprm {

/// Pairwise (tree) summation; the order is fixed by the input order.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t h = v.size() / 2;
  return pairwise_sum(v.first(h)) + pairwise_sum(v.subspan(h));
}

struct PartitionOptions {
  enum class Rescale { every_slice, never };
  std::optional<int> truncation_radius;
  Rescale rescale = Rescale::every_slice;

  /// Smallest radius accepted for horizon N: ceil(3 sqrt N).
  static int minimal_radius(int N) { return static_cast<int>(std::ceil(3.0 * std::sqrt(static_cast<double>(N)))); }

  static PartitionOptions truncated(int N, double c) {
    PartitionOptions o;
    o.truncation_radius = static_cast<int>(std::ceil(c * std::sqrt(static_cast<double>(N))));
    return o;
  }
};

/// Weights of one time slice. Stored in a dense box with one layer of zero
/// padding; only sites with |x|_1 <= time, |x|_inf <= radius and the parity of
/// `time` carry weight. The true (renormalized) weight is value * 2^scale, with
/// log_normalizer = scale * log 2.
template <int D>
struct PolymerSlice {
  int time = 0;
  int radius = 0;
  LatticeBox<D> box;
  std::vector<double> weights;
  double log_normalizer = 0.0;

  double at(const Site<D>& x) const { return box.contains(x) ? weights[box.index(x)] : 0.0; }

  /// Calls fn(x, weight&) on every admissible site of the slice.
  template <class Fn>
  void for_each(Fn&& fn) {
    visit_sites(time, radius, [&](const Site<D>& x, std::size_t i) { fn(x, weights[i]); });
  }
  template <class Fn>
  void for_each(Fn&& fn) const {
    visit_sites(time, radius, [&](const Site<D>& x, std::size_t i) { fn(x, weights[i]); });
  }

  double total() const {
    std::vector<double> rows;
    for_each_row<D>(box, radius, time, [&](Site<D> pre, int lo, int hi, std::size_t base) {
      double s = 0.0;
      for (int k = first_parity(pre, lo); k <= hi; k += 2) s += weights[base + static_cast<std::size_t>(k)];
      rows.push_back(s);
    });
    return pairwise_sum(rows);
  }

  double max_weight() const {
    double m = 0.0;
    for_each([&](const Site<D>&, double w) { m = std::max(m, w); });
    return m;
  }

  /// log of the total renormalized weight.
  double log_total() const { return std::log(total()) + log_normalizer; }

  int first_parity(const Site<D>& pre, int lo) const {
    int ps = 0;
    for (int i = 0; i < D - 1; ++i) ps += pre[i];
    return (((lo - (time - ps)) & 1) != 0) ? lo + 1 : lo;
  }

 private:
  template <class Fn>
  void visit_sites(int t, int r, Fn&& fn) const {
    for_each_row<D>(box, r, t, [&](Site<D> x, int lo, int hi, std::size_t base) {
      for (int k = first_parity(x, lo); k <= hi; k += 2) {
        x[D - 1] = k;
        fn(static_cast<const Site<D>&>(x), base + static_cast<std::size_t>(k));
      }
    });
  }
};

/// Forward transfer matrix W_n(x) = e^{beta w(n,x) - lambda} (1/2d) sum_{y~x} W_{n-1}(y),
/// W_0 = delta_0. Copyable, so a state can be branched.
template <Environment F>
class TransferMatrix {
 public:
  static constexpr int D = F::dimension;

  TransferMatrix(const F& field, double beta, int horizon, PartitionOptions opt = {})
      : field_(&field), beta_(beta), horizon_(horizon), opt_(opt) {
    if (horizon < 0) throw std::invalid_argument("TransferMatrix: negative horizon");
    lambda_ = log_mgf(field.law(), beta);
    int r = horizon;
    if (opt.truncation_radius) {
      const int need = PartitionOptions::minimal_radius(horizon);
      if (*opt.truncation_radius < need)
        throw std::invalid_argument("truncation radius " + std::to_string(*opt.truncation_radius) +
                                    " is below the mass-loss guard 3*sqrt(N) = " + std::to_string(need));
      r = std::min(r, *opt.truncation_radius);
    }
    Site<D> far{};
    far[0] = r;
    if (!field.covers(horizon, far) || !field.covers(horizon, -far) || (horizon > 0 && !field.covers(1, origin<D>())))
      throw std::out_of_range("TransferMatrix: environment does not cover time " + std::to_string(horizon) +
                              " and radius " + std::to_string(r));
    cur_.radius = r;
    cur_.box = LatticeBox<D>(r + 1);
    cur_.weights.assign(cur_.box.size(), 0.0);
    cur_.weights[cur_.box.index(origin<D>())] = 1.0;
    nxt_ = cur_;
    nxt_.weights[nxt_.box.index(origin<D>())] = 0.0;
    for (int i = 0; i < D; ++i) stride_[i] = cur_.box.stride(i);
  }

  int time() const { return cur_.time; }
  int horizon() const { return horizon_; }
  double beta() const { return beta_; }
  double lambda() const { return lambda_; }
  const PolymerSlice<D>& slice() const { return cur_; }
  PolymerSlice<D>& slice() { return cur_; }

  /// Overlap o_n = sum_x (sum_y mu_{n-1}(y) p(1, x - y))^2 of the last step.
  double last_overlap() const { return overlap_; }

  double log_zhat() const { return cur_.log_total(); }

  void step() {
    if (cur_.time >= horizon_) throw std::out_of_range("TransferMatrix: past horizon");
    const int t = cur_.time + 1;
    const double w = 1.0 / (2.0 * D);
    const double prev_total = cur_.total();
    const double* old = cur_.weights.data();
    double* out = nxt_.weights.data();
    nxt_.time = t;
    std::vector<double> sq_rows;
    for_each_row<D>(nxt_.box, nxt_.radius, t, [&](Site<D> x, int lo, int hi, std::size_t base) {
      double sq = 0.0;
      for (int k = nxt_.first_parity(x, lo); k <= hi; k += 2) {
        const std::size_t i0 = base + static_cast<std::size_t>(k);
        double s = 0.0;
        for (int a = 0; a < D; ++a) s += old[i0 - stride_[a]] + old[i0 + stride_[a]];
        sq += s * s;
        x[D - 1] = k;
        out[i0] = w * s * std::exp(beta_ * field_->value(t, x) - lambda_);
      }
      sq_rows.push_back(sq);
    });
    overlap_ = prev_total > 0 ? pairwise_sum(sq_rows) / ((2.0 * D * prev_total) * (2.0 * D * prev_total)) : 0.0;
    nxt_.log_normalizer = cur_.log_normalizer;
    std::swap(cur_, nxt_);
    if (opt_.rescale == PartitionOptions::Rescale::every_slice) rescale();
  }

  void run_to(int n) {
    while (cur_.time < n) step();
  }

  /// Multiplies the slice by a power of two so that its max lies in [1/2, 1).
  void rescale() {
    const double m = cur_.max_weight();
    if (m <= 0 || !std::isfinite(m)) return;
    int e = 0;
    std::frexp(m, &e);
    if (e == 0) return;
    cur_.for_each([&](const Site<D>&, double& v) { v = std::ldexp(v, -e); });
    cur_.log_normalizer += e * std::numbers::ln2;
  }

 private:
  const F* field_;
  double beta_;
  double lambda_ = 0;
  int horizon_;
  PartitionOptions opt_;
  PolymerSlice<D> cur_;
  PolymerSlice<D> nxt_;
  std::array<std::ptrdiff_t, D> stride_{};
  double overlap_ = 0;
};

template <int D>
struct PartitionResult {
  double log_zhat = 0;
  PolymerSlice<D> slice;
};

/// log Z_hat_N = log Z_N - N lambda(beta).
template <Environment F>
PartitionResult<F::dimension> log_partition(const F& field, double beta, int N, PartitionOptions opt = {}) {
  TransferMatrix<F> tm(field, beta, N, opt);
  tm.run_to(N);
  return {tm.log_zhat(), tm.slice()};
}

/// P_N(S_n = x) for 0 <= n <= N, slice n stored on [-r_n, r_n]^D with r_n = min(n, radius).
template <int D>
class MarginalTable {
 public:
  int horizon() const { return static_cast<int>(slices_.size()) - 1; }
  double log_zhat() const { return log_zhat_; }

  double operator()(int n, const Site<D>& x) const {
    if (n < 0 || n > horizon()) throw std::out_of_range("MarginalTable: time out of range");
    const auto& b = boxes_[static_cast<std::size_t>(n)];
    return b.contains(x) ? slices_[static_cast<std::size_t>(n)][b.index(x)] : 0.0;
  }

  const LatticeBox<D>& box(int n) const { return boxes_.at(static_cast<std::size_t>(n)); }
  std::span<const double> slice(int n) const { return slices_.at(static_cast<std::size_t>(n)); }

  /// sum over n >= 1 and x of marginal(n, x)^2.
  double sum_of_squares() const {
    double s = 0.0;
    for (std::size_t n = 1; n < slices_.size(); ++n)
      for (double v : slices_[n]) s += v * v;
    return s;
  }

  std::vector<LatticeBox<D>> boxes_;
  std::vector<std::vector<double>> slices_;
  double log_zhat_ = 0;
};

/// Forward-backward marginals of the point-to-line polymer measure.
template <Environment F>
MarginalTable<F::dimension> marginals(const F& field, double beta, int N, PartitionOptions opt = {}) {
  constexpr int D = F::dimension;
  TransferMatrix<F> tm(field, beta, N, opt);
  const int R = tm.slice().radius;
  MarginalTable<D> out;
  auto store = [&](const PolymerSlice<D>& s) {
    LatticeBox<D> b(std::min(s.time, R));
    std::vector<double> v(b.size(), 0.0);
    s.for_each([&](const Site<D>& x, double w) { v[b.index(x)] = w; });
    out.boxes_.push_back(b);
    out.slices_.push_back(std::move(v));
  };
  store(tm.slice());
  for (int n = 1; n <= N; ++n) {
    tm.step();
    store(tm.slice());
  }
  out.log_zhat_ = tm.log_zhat();

  // Backward weights B_n(x) = (1/2d) sum_{y~x} e^{beta w(n+1,y) - lambda} B_{n+1}(y), B_N = 1.
  const LatticeBox<D> big(R + 1);
  std::array<std::ptrdiff_t, D> st{};
  for (int i = 0; i < D; ++i) st[i] = big.stride(i);
  std::vector<double> b_next(big.size(), 0.0), b_cur(big.size(), 0.0);
  const double lambda = tm.lambda();
  const double w = 1.0 / (2.0 * D);
  // g(n, y) B_n(y) on the admissible sites of time n.
  auto admissible = [&](int n, auto&& fn) {
    for_each_row<D>(big, std::min(n, R), n, [&](Site<D> x, int lo, int hi, std::size_t base) {
      int ps = 0;
      for (int i = 0; i < D - 1; ++i) ps += x[i];
      if (((lo - (n - ps)) & 1) != 0) ++lo;
      for (int k = lo; k <= hi; k += 2) {
        x[D - 1] = k;
        fn(static_cast<const Site<D>&>(x), base + static_cast<std::size_t>(k));
      }
    });
  };
  auto finish = [&](int n, const std::vector<double>& bw) {
    auto& sl = out.slices_[static_cast<std::size_t>(n)];
    const auto& b = out.boxes_[static_cast<std::size_t>(n)];
    std::vector<double> prod(sl.size(), 0.0);
    for (std::size_t i = 0; i < sl.size(); ++i)
      if (sl[i] != 0.0) prod[i] = sl[i] * bw[big.index(b.site(i))];
    const double tot = pairwise_sum(prod);
    for (std::size_t i = 0; i < sl.size(); ++i) sl[i] = tot > 0 ? prod[i] / tot : 0.0;
  };
  admissible(N, [&](const Site<D>&, std::size_t i) { b_next[i] = 1.0; });
  finish(N, b_next);
  std::vector<double> gb(big.size(), 0.0);
  for (int n = N - 1; n >= 0; --n) {
    std::fill(gb.begin(), gb.end(), 0.0);
    double m = 0.0;
    admissible(n + 1, [&](const Site<D>& y, std::size_t i) {
      gb[i] = std::exp(beta * field.value(n + 1, y) - lambda) * b_next[i];
    });
    std::fill(b_cur.begin(), b_cur.end(), 0.0);
    admissible(n, [&](const Site<D>&, std::size_t i) {
      double s = 0.0;
      for (int a = 0; a < D; ++a) s += gb[i - st[a]] + gb[i + st[a]];
      b_cur[i] = w * s;
      m = std::max(m, b_cur[i]);
    });
    if (m > 0) {
      int e = 0;
      std::frexp(m, &e);
      for (double& v : b_cur) v = std::ldexp(v, -e);
    }
    finish(n, b_cur);
    std::swap(b_cur, b_next);
  }
  return out;
}

struct OverlapSeries {
  std::vector<double> overlaps;  // o_k for k = 1..N (index k-1)
  double mean = 0;               // (1/N) sum_k o_k
  double gap_estimate = 0;       // lambda(beta) * mean
  double log_zhat = 0;
};

template <Environment F>
OverlapSeries overlap_series(const F& field, double beta, int N, PartitionOptions opt = {}) {
  TransferMatrix<F> tm(field, beta, N, opt);
  OverlapSeries out;
  out.overlaps.reserve(static_cast<std::size_t>(N));
  for (int k = 1; k <= N; ++k) {
    tm.step();
    out.overlaps.push_back(tm.last_overlap());
  }
  out.mean = N > 0 ? pairwise_sum(out.overlaps) / N : 0.0;
  out.gap_estimate = tm.lambda() * out.mean;
  out.log_zhat = tm.log_zhat();
  return out;
}

// ---------------------------------------------------------------------------
// Coarse graining: cells Lambda_y = y sqrt(l) + (-sqrt(l)/2, sqrt(l)/2]^D.

/// Integer square root of l, required to be even.
inline int cell_width(int ell) {
  if (ell <= 0) throw ConfigError("cell length must be positive, got " + std::to_string(ell));
  const int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(ell))));
  if (s * s != ell || s % 2 != 0)
    throw ConfigError("cell length " + std::to_string(ell) + " must have an even integer square root");
  return s;
}

/// Label y of the cell containing x.
template <int D>
Site<D> cell_of(const Site<D>& x, int ell) {
  const int s = cell_width(ell);
  const int h = s / 2;
  Site<D> y{};
  for (int i = 0; i < D; ++i) {
    // smallest y with x - y s <= h, i.e. ceil((x - h) / s)
    const int a = x[i] - h;
    y[i] = a >= 0 ? (a + s - 1) / s : -((-a) / s);
  }
  return y;
}

template <int D>
struct CoarseTrajectory {
  int ell = 4;
  std::vector<Site<D>> labels;  // y_1..y_m

  int blocks() const { return static_cast<int>(labels.size()); }
  int horizon() const { return ell * blocks(); }
  void validate() const { cell_width(ell); }
};

namespace detail {
template <int D>
void mask_to_cell(PolymerSlice<D>& s, const Site<D>& y, int ell) {
  s.for_each([&](const Site<D>& x, double& w) {
    if (cell_of<D>(x, ell) != y) w = 0.0;
  });
}
}  // namespace detail

/// Z_Y: the renormalized partition function restricted to E_Y.
template <Environment F>
double coarse_grained_partition(const F& field, double beta, const CoarseTrajectory<F::dimension>& Y) {
  Y.validate();
  TransferMatrix<F> tm(field, beta, Y.horizon());
  for (int i = 1; i <= Y.blocks(); ++i) {
    tm.run_to(i * Y.ell);
    detail::mask_to_cell<F::dimension>(tm.slice(), Y.labels[static_cast<std::size_t>(i - 1)], Y.ell);
  }
  const double tot = tm.slice().total();
  return tot > 0 ? std::exp(std::log(tot) + tm.slice().log_normalizer) : 0.0;
}

template <int D>
struct CoarseTerm {
  std::vector<Site<D>> labels;
  double z = 0;
};

/// All Z_Y with E_Y reachable (Z_Y > 0), by branching the forward DP at each
/// multiple of l. Terms are listed in lexicographic order of Y.
template <Environment F>
std::vector<CoarseTerm<F::dimension>> coarse_grained_partitions(const F& field, double beta, int ell, int m) {
  constexpr int D = F::dimension;
  cell_width(ell);
  if (m < 1) throw std::invalid_argument("coarse_grained_partitions: m must be >= 1");
  std::vector<CoarseTerm<D>> out;
  std::vector<Site<D>> path;
  std::function<void(const TransferMatrix<F>&, int)> rec = [&](const TransferMatrix<F>& tm0, int i) {
    TransferMatrix<F> tm = tm0;
    tm.run_to(i * ell);
    std::vector<Site<D>> cells;
    tm.slice().for_each([&](const Site<D>& x, double w) {
      if (w <= 0) return;
      const Site<D> y = cell_of<D>(x, ell);
      if (std::find(cells.begin(), cells.end(), y) == cells.end()) cells.push_back(y);
    });
    std::sort(cells.begin(), cells.end());
    for (const auto& y : cells) {
      TransferMatrix<F> branch = tm;
      detail::mask_to_cell<D>(branch.slice(), y, ell);
      path.push_back(y);
      if (i == m) {
        const double tot = branch.slice().total();
        out.push_back({path, std::exp(std::log(tot) + branch.slice().log_normalizer)});
      } else {
        rec(branch, i + 1);
      }
      path.pop_back();
    }
  };
  TransferMatrix<F> root(field, beta, ell * m);
  rec(root, 1);
  return out;
}

}  // namespace dprm
