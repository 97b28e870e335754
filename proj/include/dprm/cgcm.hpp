#pragma once

// Coarse-graining plan, the multilinear statistic X, the penalty g and the
// path statistics W and Y.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dprm/disorder.hpp"
#include "dprm/errors.hpp"
#include "dprm/kernel.hpp"
#include "dprm/lattice.hpp"
#include "dprm/partition.hpp"
#include "dprm/rng.hpp"
#include "dprm/walk.hpp"

namespace dprm {

enum class PlanMode { formula, manual };

struct CoarseGrainPlan {
  int ell = 4;
  double eps = 0.05;
  int R = 1;
  double K = 2.0;
  int m = 1;
  int q = 1;
  int u = 1;
  PlanMode mode = PlanMode::manual;
  /// Only the path statistics (W, Y) are used: l need only be even.
  bool path_only = false;

  /// q = max(1, round((log log l)^2)), u = floor(l^{1 - eps^2}).
  static CoarseGrainPlan formula(int ell, double eps, int R = 1, double K = 2.0, int m = 1) {
    CoarseGrainPlan p;
    p.ell = ell;
    p.eps = eps;
    p.R = R;
    p.K = K;
    p.m = m;
    p.mode = PlanMode::formula;
    if (ell < 3) throw ConfigError("formula plan needs l >= 3 so that log log l is defined");
    const double ll = std::log(std::log(static_cast<double>(ell)));
    p.q = std::max(1, static_cast<int>(std::lround(ll * ll)));
    p.u = std::max(1, static_cast<int>(std::floor(std::pow(static_cast<double>(ell), 1.0 - eps * eps) + 1e-9)));
    p.validate();
    return p;
  }

  static CoarseGrainPlan manual(int ell, int q, int u, int R = 1, double eps = 0.05, double K = 2.0, int m = 1) {
    CoarseGrainPlan p;
    p.ell = ell;
    p.q = q;
    p.u = u;
    p.R = R;
    p.eps = eps;
    p.K = K;
    p.m = m;
    p.mode = PlanMode::manual;
    p.validate();
    return p;
  }

  /// Plan for W and Y alone; the cell geometry is never built.
  static CoarseGrainPlan path_statistics(int ell, int q, int u) {
    CoarseGrainPlan p;
    p.ell = ell;
    p.q = q;
    p.u = u;
    p.path_only = true;
    p.validate();
    return p;
  }

  int width() const {
    if (path_only) throw ConfigError("path-only plan has no cell geometry");
    return cell_width(ell);
  }
  int enlarged_radius() const { return R * width(); }

  /// |closed box [-R sqrt(l), R sqrt(l)]^D|.
  template <int D = 2>
  long enlarged_cardinality() const {
    long c = 1;
    for (int i = 0; i < D; ++i) c *= 2L * enlarged_radius() + 1;
    return c;
  }

  /// (2R)^D l^{D/2}; 4 R^2 l in the plane.
  template <int D = 2>
  double nominal_cardinality() const {
    return std::pow(2.0 * R, D) * std::pow(static_cast<double>(ell), D / 2.0);
  }

  bool jprime_fits() const { return ell / 2 + q * u <= ell; }

  void validate() const {
    if (path_only) {
      if (ell < 2 || ell % 2 != 0) throw ConfigError("path-only plan: l must be even and >= 2");
    } else {
      cell_width(ell);
    }
    if (!(eps > 0 && eps < 0.1)) throw ConfigError("plan: eps must lie in (0, 1/10)");
    if (R < 1) throw ConfigError("plan: R must be >= 1");
    if (!(K > 0)) throw ConfigError("plan: K must be > 0");
    if (m < 1) throw ConfigError("plan: m must be >= 1");
    if (q < 1) throw ConfigError("plan: q must be >= 1");
    if (u < 1 || u > ell) throw ConfigError("plan: u must lie in [1, l]");
  }

  std::vector<std::string> warnings() const {
    std::vector<std::string> w;
    if (!jprime_fits())
      w.push_back("l/2 + q*u = " + std::to_string(ell / 2 + q * u) + " exceeds l = " + std::to_string(ell) +
                  "; J' is not contained in J and W/Y need a longer path");
    if (mode == PlanMode::formula) {
      const double ll = std::log(std::log(static_cast<double>(ell)));
      if (ll * ll < 0.5) w.push_back("formula gives q < 1 at this l; clamped to 1");
    }
    return w;
  }

  /// Empty when (1 + eps) <= beta^2 D(u) <= (1 + 2 eps).
  std::string compar_warning(double beta, double Du) const {
    const double v = beta * beta * Du;
    if (v >= 1 + eps && v <= 1 + 2 * eps) return {};
    std::ostringstream os;
    os << "beta^2 D(u) = " << v << " outside [" << 1 + eps << ", " << 1 + 2 * eps << "]";
    return os.str();
  }

  std::string config_block() const {
    std::ostringstream os;
    os.precision(17);
    os << "ell = " << ell << "\neps = " << eps << "\nR = " << R << "\nK = " << K << "\nm = " << m << "\nq = " << q
       << "\nu = " << u << "\nmode = " << (mode == PlanMode::formula ? "formula" : "manual")
       << "\npath_only = " << (path_only ? "true" : "false") << "\n";
    return os.str();
  }

  std::uint64_t hash() const {
    std::uint64_t k = 0x706c616eULL;
    for (char c : config_block()) k = absorb(k, c);
    return k;
  }
};

/// Nondecreasing sequences 0 <= m_0 <= ... <= m_{q-r} <= r.
inline std::vector<std::vector<int>> interlacements(int q, int r) {
  if (r < 0 || r > q) throw std::invalid_argument("interlacements: need 0 <= r <= q");
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<std::size_t>(q - r + 1), 0);
  while (true) {
    out.push_back(cur);
    int i = q - r;
    while (i >= 0 && cur[static_cast<std::size_t>(i)] == r) --i;
    if (i < 0) break;
    const int v = cur[static_cast<std::size_t>(i)] + 1;
    for (std::size_t j = static_cast<std::size_t>(i); j < cur.size(); ++j) cur[j] = v;
  }
  return out;
}

inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  return std::round(std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0)));
}

/// Windowed kernel k(g, dx) = p(g, dx) 1{|dx|_1 <= rho(g)} for 1 <= g <= u.
template <int D>
class WindowKernel {
 public:
  struct Entry {
    Site<D> dx;
    double p;
  };

  explicit WindowKernel(int u) : u_(u), entries_(static_cast<std::size_t>(u) + 1) {
    KernelSweep<D> sweep(u);
    for (int g = 1; g <= u; ++g) {
      sweep.advance();
      const int r = rho_floor(g);
      radius_ = std::max(radius_, r);
      boxes_.emplace_back(std::max(r, 0));
      std::vector<double> dense(boxes_.back().size(), 0.0);
      sweep.for_each_value([&](const Site<D>& x, double p) {
        if (p > 0 && l1_norm<D>(x) <= r) {
          entries_[static_cast<std::size_t>(g)].push_back({x, p});
          dense[boxes_.back().index(x)] = p;
        }
      });
      dense_.push_back(std::move(dense));
    }
  }

  int u() const { return u_; }
  int radius() const { return radius_; }
  const std::vector<Entry>& at(int g) const { return entries_.at(static_cast<std::size_t>(g)); }

  double operator()(int g, const Site<D>& dx) const {
    if (g < 1 || g > u_) return 0.0;
    const auto& b = boxes_[static_cast<std::size_t>(g - 1)];
    return b.contains(dx) ? dense_[static_cast<std::size_t>(g - 1)][b.index(dx)] : 0.0;
  }

 private:
  int u_;
  int radius_ = 0;
  std::vector<std::vector<Entry>> entries_;
  std::vector<LatticeBox<D>> boxes_;
  std::vector<std::vector<double>> dense_;
};

/// Kernel-side constants and the statistics of one plan.
template <int D = 2>
class BlockStatistics {
 public:
  explicit BlockStatistics(const CoarseGrainPlan& plan, std::size_t budget = std::size_t{1} << 26)
      : plan_(plan), window_(plan.u) {
    plan.validate();
    if constexpr (D == 2) {
      Du_ = planar_mean_local_time(plan.u);
      Dhat_ = planar_restricted_local_time(plan.u);
    } else {
      Du_ = mean_local_time_series<D>(plan.u).via_return.back();
      KernelTable<D> t(plan.u);
      Dhat_ = restricted_local_time(t, plan.u);
    }
    if (!(Du_ > 0)) throw std::invalid_argument("plan: D(u) must be positive");
    if (plan.path_only) return;
    rw_ = plan.enlarged_radius();
    work_box_ = LatticeBox<D>(rw_ + window_.radius() + 1);
    const double need = static_cast<double>(plan.ell + 1) * static_cast<double>(work_box_.size());
    if (need > static_cast<double>(budget))
      throw ResourceError("X contraction layer for l = " + std::to_string(plan.ell), need, static_cast<double>(budget));
    norm_ = 1.0 / (std::sqrt(plan.nominal_cardinality<D>() * plan.ell) * std::pow(Du_, plan.q / 2.0));
  }

  const CoarseGrainPlan& plan() const { return plan_; }
  const WindowKernel<D>& window() const { return window_; }
  double D_u() const { return Du_; }
  double Dhat_u() const { return Dhat_; }
  /// 1 / (2 R l D(u)^{q/2}) in the plane.
  double normalization() const { return norm_; }

  bool in_enlarged_cell(const Site<D>& x) const { return linf_norm<D>(x) <= rw_; }

  /// X(omega) on the block [1, l] x Lambda~_0 of `field`.
  template <Environment F>
  double x_statistic(const F& field) const {
    static_assert(F::dimension == D);
    require_geometry();
    const auto w = block_values(field);
    return norm_ * contract(w, false);
  }

  /// X^{(i,y)} = X evaluated on theta^{(i-1) l, sqrt(l) y} omega.
  template <Environment F>
  double x_statistic(const F& field, int i, const Site<D>& y) const {
    ShiftedField<F> s(field, (i - 1) * plan_.ell, scaled(y, plan_.width()));
    return x_statistic(s);
  }

  /// E[X^2] = norm^2 sum over tuples of P(t, x)^2.
  double x_second_moment_exact() const {
    require_geometry();
    std::vector<double> ones((static_cast<std::size_t>(plan_.ell) + 1) * work_box_.size(), 0.0);
    for (int t = 1; t <= plan_.ell; ++t)
      for_each_enlarged([&](const Site<D>& x) { ones[slot(t, x)] = 1.0; });
    return norm_ * norm_ * contract(ones, true);
  }

  /// Sum over t in J (or J') of P(t, S^(t)) by DP along the path.
  /// t0 ranges over [t0_lo, t0_hi]; all t_k <= t_max; with `in_cell` every
  /// S_{t_k} must lie in Lambda~_0.
  double path_tuple_sum(const std::vector<Site<D>>& S, int t0_lo, int t0_hi, int t_max, bool in_cell) const {
    if (static_cast<int>(S.size()) - 1 < t_max)
      throw std::invalid_argument("path of length " + std::to_string(S.size() - 1) + " shorter than " +
                                  std::to_string(t_max));
    const int q = plan_.q, u = plan_.u;
    std::vector<double> a(static_cast<std::size_t>(t_max) + 1, 0.0), b(a.size(), 0.0);
    auto ind = [&](int t) { return !in_cell || in_enlarged_cell(S[static_cast<std::size_t>(t)]); };
    for (int t = std::max(1, t0_lo); t <= std::min(t0_hi, t_max); ++t) a[static_cast<std::size_t>(t)] = ind(t) ? 1.0 : 0.0;
    for (int j = 1; j <= q; ++j) {
      std::fill(b.begin(), b.end(), 0.0);
      for (int t = 2; t <= t_max; ++t) {
        if (!ind(t)) continue;
        double s = 0.0;
        for (int g = 1; g <= std::min(u, t - 1); ++g) {
          const double prev = a[static_cast<std::size_t>(t - g)];
          if (prev == 0.0) continue;
          s += window_(g, S[static_cast<std::size_t>(t)] - S[static_cast<std::size_t>(t - g)]) * prev;
        }
        b[static_cast<std::size_t>(t)] = s;
      }
      std::swap(a, b);
    }
    double tot = 0.0;
    for (double v : a) tot += v;
    return tot;
  }

  /// E^S[X] = lambda'(beta)^{q+1} norm sum_{t in J} P(t, S^(t)) 1{S_{t_k} in Lambda~_0}.
  double tilted_mean_x(const std::vector<Site<D>>& S, const DisorderLaw& law, double beta) const {
    require_geometry();
    const double l1 = cumulants(law, beta).lambda1;
    return std::pow(l1, plan_.q + 1) * norm_ * path_tuple_sum(S, 1, plan_.ell, plan_.ell, true);
  }

  int jprime_length() const { return plan_.ell / 2 + plan_.q * plan_.u; }

  void require_jprime() const {
    if (!plan_.jprime_fits())
      throw ConfigError("J' statistics need l/2 + q*u <= l, got " + std::to_string(jprime_length()) +
                                  " > " + std::to_string(plan_.ell));
  }

  /// W_l = (1 / (l D(u)^q)) sum_{t in J'} P(t, S^(t)).
  double w_statistic(const std::vector<Site<D>>& S) const {
    require_jprime();
    const int T = jprime_length();
    return path_tuple_sum(S, 1, plan_.ell / 2, T, false) / (plan_.ell * std::pow(Du_, plan_.q));
  }

  /// E[W_l] = (1/2) (D^(u) / D(u))^q.
  double w_expectation() const { return 0.5 * std::pow(Dhat_ / Du_, plan_.q); }

  /// Y_j = D(u)^{-q} sum_{t in J'(j)} P(t, S^(t)) - (D^(u)/D(u))^q.
  double y_statistic(const std::vector<Site<D>>& S, int j) const {
    require_jprime();
    if (j < 1 || j > plan_.ell / 2) throw std::invalid_argument("y_statistic: j must lie in [1, l/2]");
    const int T = j + plan_.q * plan_.u;
    return path_tuple_sum(S, j, j, T, false) / std::pow(Du_, plan_.q) - std::pow(Dhat_ / Du_, plan_.q);
  }

  /// Deterministic envelope (sum_{g<=u} max_x p(g,x))^q / D(u)^q on |Y_j| + 1,
  /// together with the local-CLT version (c1 log-sum)^q / D(u)^q.
  struct YEnvelope {
    double exact = 0;
    double clt = 0;  // (sum_{i<=u} c1/(1+i))^q / D(u)^q with c1 = 0.75
  };
  YEnvelope y_envelope() const {
    YEnvelope e;
    double s = 0.0, c = 0.0;
    for (int g = 1; g <= plan_.u; ++g) {
      double m = 0.0;
      for (const auto& en : window_.at(g)) m = std::max(m, en.p);
      s += m;
      c += 0.75 / (1.0 + g);
    }
    e.exact = std::max(1.0, std::pow(s, plan_.q) / std::pow(Du_, plan_.q));
    e.clt = std::max(1.0, std::pow(c, plan_.q) / std::pow(Du_, plan_.q));
    return e;
  }

  /// exp(-K 1{X^{(i,y)} >= e^{K^2}}).
  template <Environment F>
  double g_penalty(const F& field, int i, const Site<D>& y) const {
    return penalty_of(x_statistic(field, i, y));
  }

  double threshold() const { return std::exp(plan_.K * plan_.K); }
  double penalty_of(double x) const { return x >= threshold() ? std::exp(-plan_.K) : 1.0; }

  /// omega on [1, l] x Lambda~_0 laid out on the padded work box.
  template <Environment F>
  std::vector<double> block_values(const F& field) const {
    std::vector<double> w((static_cast<std::size_t>(plan_.ell) + 1) * work_box_.size(), 0.0);
    for (int t = 1; t <= plan_.ell; ++t)
      for_each_enlarged([&](const Site<D>& x) {
        if (!field.covers(t, x)) throw std::out_of_range("X statistic: block outside the environment box");
        w[slot(t, x)] = field.value(t, x);
      });
    return w;
  }

 private:
  void require_geometry() const {
    if (plan_.path_only) throw std::invalid_argument("X statistics need a plan with cell geometry");
  }

  template <class Fn>
  void for_each_enlarged(Fn&& fn) const {
    for_each_site<D>(rw_, fn);
  }

  std::size_t slot(int t, const Site<D>& x) const {
    return static_cast<std::size_t>(t) * work_box_.size() + work_box_.index(x);
  }

  // A_0(t,x) = w(t,x); A_j(t,x) = w(t,x) sum_{g,dx} k(g,dx) A_{j-1}(t-g, x-dx).
  // Returns sum_{t,x} A_q(t,x). With `squared`, k is replaced by k^2.
  double contract(const std::vector<double>& w, bool squared) const {
    const std::size_t S = work_box_.size();
    std::vector<double> a = w, b(w.size(), 0.0);
    std::vector<std::vector<std::pair<std::ptrdiff_t, double>>> kern(static_cast<std::size_t>(plan_.u) + 1);
    for (int g = 1; g <= plan_.u; ++g)
      for (const auto& e : window_.at(g))
        kern[static_cast<std::size_t>(g)].emplace_back(work_box_.offset(e.dx), squared ? e.p * e.p : e.p);
    for (int j = 1; j <= plan_.q; ++j) {
      std::fill(b.begin(), b.end(), 0.0);
      for (int t = 2; t <= plan_.ell; ++t) {
        for_each_enlarged([&](const Site<D>& x) {
          const std::size_t i = slot(t, x);
          if (w[i] == 0.0) return;
          double s = 0.0;
          for (int g = 1; g <= std::min(plan_.u, t - 1); ++g) {
            const std::size_t base = i - static_cast<std::size_t>(g) * S;
            for (const auto& [off, p] : kern[static_cast<std::size_t>(g)]) s += p * a[base - off];
          }
          b[i] = w[i] * s;
        });
      }
      std::swap(a, b);
    }
    double tot = 0.0;
    for (int t = 1; t <= plan_.ell; ++t) for_each_enlarged([&](const Site<D>& x) { tot += a[slot(t, x)]; });
    return tot;
  }

  CoarseGrainPlan plan_;
  WindowKernel<D> window_;
  double Du_ = 0;
  double Dhat_ = 0;
  double norm_ = 0;
  int rw_ = 0;
  LatticeBox<D> work_box_;
};

/// E[Y_{j1} Y_{j2}] by exhaustive enumeration of walk increments (l <= 12),
/// or by Monte Carlo over `samples` walks otherwise.
struct YCovarianceReport {
  int j1 = 0, j2 = 0;
  bool exact = false;
  double covariance = 0;
  double stderr_ = 0;
  long paths = 0;
  double max_abs_y = 0;
  double envelope = 0;      // exact deterministic envelope
  double clt_envelope = 0;  // local-CLT envelope with c1 = 0.75
};

template <int D>
YCovarianceReport y_covariance_check(const BlockStatistics<D>& bs, int j1, int j2, long samples, std::uint64_t seed) {
  const auto& plan = bs.plan();
  bs.require_jprime();
  if (j1 < 1 || j2 < 1 || j1 > plan.ell / 2 || j2 > plan.ell / 2)
    throw std::invalid_argument("y_covariance_check: j1, j2 must lie in [1, l/2]");
  YCovarianceReport r;
  r.j1 = j1;
  r.j2 = j2;
  const auto env = bs.y_envelope();
  r.envelope = env.exact;
  r.clt_envelope = env.clt;
  const int T = std::max(j1, j2) + plan.q * plan.u;
  const auto steps = unit_steps<D>();
  if (plan.ell <= 12) {
    r.exact = true;
    // Y_j depends on increments j+1..j+qu only; enumerate increments from lo+1 to T.
    const int lo = std::min(j1, j2);
    const int k = T - lo;
    long count = 1;
    for (int i = 0; i < k; ++i) count *= 2 * D;
    std::vector<Site<D>> S(static_cast<std::size_t>(T) + 1);
    double acc = 0.0;
    std::vector<int> digit(static_cast<std::size_t>(k), 0);
    for (long c = 0; c < count; ++c) {
      long v = c;
      for (int i = 0; i < k; ++i) {
        digit[static_cast<std::size_t>(i)] = static_cast<int>(v % (2 * D));
        v /= 2 * D;
      }
      for (int t = 1; t <= lo; ++t) S[static_cast<std::size_t>(t)] = S[0];
      for (int i = 0; i < k; ++i)
        S[static_cast<std::size_t>(lo + i + 1)] = S[static_cast<std::size_t>(lo + i)] + steps[static_cast<std::size_t>(digit[static_cast<std::size_t>(i)])];
      const double y1 = bs.y_statistic(S, j1), y2 = bs.y_statistic(S, j2);
      r.max_abs_y = std::max({r.max_abs_y, std::abs(y1), std::abs(y2)});
      acc += y1 * y2;
    }
    r.paths = count;
    r.covariance = acc / static_cast<double>(count);
    return r;
  }
  double s = 0, s2 = 0;
  for (long i = 0; i < samples; ++i) {
    const auto S = sample_walk<D>(derive_seed(seed, static_cast<std::uint64_t>(i)), T);
    const double y1 = bs.y_statistic(S, j1), y2 = bs.y_statistic(S, j2);
    r.max_abs_y = std::max({r.max_abs_y, std::abs(y1), std::abs(y2)});
    s += y1 * y2;
    s2 += (y1 * y2) * (y1 * y2);
  }
  r.paths = samples;
  if (samples > 0) {
    r.covariance = s / samples;
    if (samples > 1) r.stderr_ = std::sqrt(std::max(0.0, s2 / samples - r.covariance * r.covariance) / (samples - 1));
  }
  return r;
}

/// Monte Carlo estimates along the change-of-measure chain for one coarse
/// trajectory Y, plus the fractional-moment aggregate over reachable Y.
struct FractionalMomentReport {
  long samples = 0;
  double mean_sqrt_zy = 0, se_sqrt_zy = 0;
  double mean_g_inv = 0, se_g_inv = 0;
  double mean_g_zy = 0, se_g_zy = 0;
  double tail_frequency = 0;   // empirical P(X^{(i,y)} >= e^{K^2}) per block
  double cs_lhs = 0;           // (E sqrt Z_Y)^2
  double cs_rhs = 0;           // E[g^-1] E[g Z_Y]
  double cs_slack_se = 0;      // delta-method stderr of lhs - rhs
  bool cs_holds = false;       // lhs <= rhs + 3 se
  double sum_sqrt_terms = 0;   // sum over reachable Y of E sqrt Z_Y
  double sum_sqrt_terms_se = 0;
  double mean_sqrt_zhat = 0;   // E sqrt Z_hat_{m l}
  double mean_sqrt_zhat_se = 0;
  double two_pow_minus_m = 0;
};

namespace detail {
struct Moments {
  double s = 0, s2 = 0;
  long n = 0;
  void add(double v) {
    s += v;
    s2 += v * v;
    ++n;
  }
  double mean() const { return n ? s / n : 0.0; }
  double se() const { return n > 1 ? std::sqrt(std::max(0.0, s2 / n - mean() * mean()) / (n - 1)) : 0.0; }
};
}  // namespace detail

/// One disorder sample of the change-of-measure chain.
struct FractionalSample {
  double sqrt_zy = 0;    // sqrt(Z_Y)
  double g_inv = 0;      // 1 / g_Y
  double g_zy = 0;       // g_Y Z_Y
  int tail_hits = 0;     // blocks with X^{(i,y)} >= e^{K^2}
  double sum_sqrt_terms = 0;  // sum over reachable Y' of sqrt(Z_Y')
  double sqrt_zhat = 0;
};

template <int D = 2>
int fractional_field_radius(const BlockStatistics<D>& bs, const CoarseTrajectory<D>& Y) {
  int reach = 0;
  for (const auto& y : Y.labels) reach = std::max(reach, linf_norm<D>(y));
  return std::max(Y.horizon(), (reach + bs.plan().R + 1) * bs.plan().width() + Y.horizon());
}

template <int D = 2>
FractionalSample fractional_moment_sample(const DisorderLaw& law, double beta, const BlockStatistics<D>& bs,
                                          const CoarseTrajectory<D>& Y, std::uint64_t field_seed, bool aggregate) {
  const int N = Y.horizon();
  EnvironmentField<D> f(law, field_seed, N, fractional_field_radius(bs, Y));
  FractionalSample out;
  const double zy = coarse_grained_partition(f, beta, Y);
  double g = 1.0;
  Site<D> prev{};
  for (int b = 1; b <= Y.blocks(); ++b) {
    const double x = bs.x_statistic(f, b, prev);
    if (x >= bs.threshold()) ++out.tail_hits;
    g *= bs.penalty_of(x);
    prev = Y.labels[static_cast<std::size_t>(b - 1)];
  }
  out.sqrt_zy = std::sqrt(zy);
  out.g_inv = 1.0 / g;
  out.g_zy = g * zy;
  if (aggregate) {
    for (const auto& term : coarse_grained_partitions(f, beta, bs.plan().ell, Y.blocks()))
      out.sum_sqrt_terms += std::sqrt(term.z);
    out.sqrt_zhat = std::exp(0.5 * log_partition(f, beta, N).log_zhat);
  }
  return out;
}

/// Var of A^2 - C G by the delta method, from first and second moments.
inline double cauchy_schwarz_slack_se(double n, double ma, double mc, double mg, double vaa, double vcc, double vgg,
                                      double vac, double vag, double vcg) {
  if (n < 2) return 0.0;
  const double da = 2 * ma, dc = -mg, dg = -mc;
  const double var =
      da * da * vaa + dc * dc * vcc + dg * dg * vgg + 2 * da * dc * vac + 2 * da * dg * vag + 2 * dc * dg * vcg;
  return std::sqrt(std::max(0.0, var) / (n - 1));
}

template <int D = 2>
FractionalMomentReport fractional_moment_pipeline(const DisorderLaw& law, double beta, const BlockStatistics<D>& bs,
                                                  const CoarseTrajectory<D>& Y, long samples, std::uint64_t seed,
                                                  bool aggregate = true) {
  const auto& plan = bs.plan();
  Y.validate();
  if (Y.ell != plan.ell) throw std::invalid_argument("fractional_moment_pipeline: trajectory and plan disagree on l");
  FractionalMomentReport r;
  r.samples = samples;
  r.two_pow_minus_m = std::pow(2.0, -Y.blocks());
  detail::Moments sq, gi, gz, tail, agg, sz;
  double cross_sq_gi = 0, cross_sq_gz = 0, cross_gi_gz = 0;
  for (long i = 0; i < samples; ++i) {
    const auto s = fractional_moment_sample(law, beta, bs, Y, derive_seed(seed, static_cast<std::uint64_t>(i)), aggregate);
    const double a = s.sqrt_zy, c = s.g_inv, d = s.g_zy;
    sq.add(a);
    gi.add(c);
    gz.add(d);
    tail.add(static_cast<double>(s.tail_hits) / Y.blocks());
    cross_sq_gi += a * c;
    cross_sq_gz += a * d;
    cross_gi_gz += c * d;
    if (aggregate) {
      agg.add(s.sum_sqrt_terms);
      sz.add(s.sqrt_zhat);
    }
  }
  r.mean_sqrt_zy = sq.mean();
  r.se_sqrt_zy = sq.se();
  r.mean_g_inv = gi.mean();
  r.se_g_inv = gi.se();
  r.mean_g_zy = gz.mean();
  r.se_g_zy = gz.se();
  r.tail_frequency = tail.mean();
  r.cs_lhs = r.mean_sqrt_zy * r.mean_sqrt_zy;
  r.cs_rhs = r.mean_g_inv * r.mean_g_zy;
  if (samples > 1) {
    const double n = static_cast<double>(samples);
    const double ma = sq.mean(), mc = gi.mean(), mg = gz.mean();
    r.cs_slack_se = cauchy_schwarz_slack_se(n, ma, mc, mg, sq.s2 / n - ma * ma, gi.s2 / n - mc * mc,
                                            gz.s2 / n - mg * mg, cross_sq_gi / n - ma * mc,
                                            cross_sq_gz / n - ma * mg, cross_gi_gz / n - mc * mg);
  }
  r.cs_holds = r.cs_lhs <= r.cs_rhs + 3.0 * r.cs_slack_se;
  r.sum_sqrt_terms = agg.mean();
  r.sum_sqrt_terms_se = agg.se();
  r.mean_sqrt_zhat = sz.mean();
  r.mean_sqrt_zhat_se = sz.se();
  return r;
}

}  // namespace dprm
