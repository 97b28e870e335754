#pragma once

// Annealed two-replica quantities through the difference walk V = S1 - S2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "dprm/disorder.hpp"
#include "dprm/errors.hpp"
#include "dprm/lattice.hpp"
#include "dprm/partition.hpp"

namespace dprm {

/// Law of e - e' for independent uniform unit steps e, e' (the difference
/// walk's step law). Sorted by displacement.
template <int D>
std::vector<std::pair<Site<D>, double>> difference_step_law() {
  std::vector<std::pair<Site<D>, double>> law;
  const auto steps = unit_steps<D>();
  const double w = 1.0 / (4.0 * D * D);
  for (const auto& a : steps)
    for (const auto& b : steps) {
      const Site<D> v = a - b;
      auto it = std::find_if(law.begin(), law.end(), [&](const auto& e) { return e.first == v; });
      if (it == law.end())
        law.emplace_back(v, w);
      else
        it->second += w;
    }
  std::sort(law.begin(), law.end());
  return law;
}

/// Intersection local time moments E2[e^{u L_N}] and E2[L_N e^{u L_N}].
struct PinningMoments {
  int N = 0;
  double u = 0;
  double log_moment = 0;   // log E2[e^{u L_N}]
  double moment = 0;       // E2[e^{u L_N}] (inf if it overflows)
  double weighted = 0;     // E2[L_N e^{u L_N}]
  double mean_local_time = 0;  // weighted / moment: L_N under the pinning measure
};

inline constexpr double kDefaultReplicaCap = 1e7;

template <int D>
double replica_cost(int N) {
  return static_cast<double>(N) * std::pow(4.0 * N + 3.0, D);
}

/// Largest N whose two-replica DP fits under `cap`.
template <int D>
long replica_max_N(double cap) {
  long n = 0;
  while (replica_cost<D>(static_cast<int>(n + 1)) <= cap) ++n;
  return n;
}

/// Exact DP on V_n carrying (value, L-weighted value) per site.
template <int D = 2>
PinningMoments two_replica_moments(double u, int N, double cap = kDefaultReplicaCap) {
  if (N < 0) throw std::invalid_argument("two_replica_moments: N < 0");
  if (!std::isfinite(u)) throw std::invalid_argument("two_replica_moments: u must be finite");
  if (replica_cost<D>(N) > cap)
    throw ResourceError("two-replica DP at N = " + std::to_string(N), replica_cost<D>(N), cap);
  const auto law = difference_step_law<D>();
  const int R = 2 * N;
  const LatticeBox<D> box(R + 2);
  std::vector<std::pair<std::ptrdiff_t, double>> kern;
  for (const auto& [v, p] : law) kern.emplace_back(box.offset(v), p);
  std::vector<double> f(box.size(), 0.0), g(box.size(), 0.0), f2(box.size(), 0.0), g2(box.size(), 0.0);
  const std::size_t o = box.index(origin<D>());
  f[o] = 1.0;
  const double eu = std::exp(u);
  double log_scale = 0.0;
  for (int n = 1; n <= N; ++n) {
    const int r = 2 * n;
    double m = 0.0;
    for_each_row<D>(box, r, r, [&](Site<D> x, int lo, int hi, std::size_t base) {
      int ps = 0;
      for (int i = 0; i < D - 1; ++i) ps += x[i];
      if (((lo - ps) & 1) != 0) ++lo;
      for (int k = lo; k <= hi; k += 2) {
        const std::size_t i0 = base + static_cast<std::size_t>(k);
        double a = 0.0, b = 0.0;
        for (const auto& [off, p] : kern) {
          a += p * f[i0 - off];
          b += p * g[i0 - off];
        }
        f2[i0] = a;
        g2[i0] = b;
      }
    });
    f2[o] *= eu;
    g2[o] = g2[o] * eu + f2[o];
    for_each_row<D>(box, r, r, [&](Site<D>, int lo, int hi, std::size_t base) {
      for (int k = lo; k <= hi; ++k) m = std::max(m, f2[base + static_cast<std::size_t>(k)]);
    });
    std::swap(f, f2);
    std::swap(g, g2);
    if (m > 0) {
      int e = 0;
      std::frexp(m, &e);
      if (e != 0) {
        for (auto& v : f) v = std::ldexp(v, -e);
        for (auto& v : g) v = std::ldexp(v, -e);
        log_scale += e * std::numbers::ln2;
      }
    }
  }
  double sf = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    sf += f[i];
    sg += g[i];
  }
  PinningMoments out;
  out.N = N;
  out.u = u;
  out.log_moment = std::log(sf) + log_scale;
  out.moment = std::exp(out.log_moment);
  out.mean_local_time = sg / sf;
  out.weighted = out.mean_local_time * out.moment;
  return out;
}

/// E2[exp(u L_N)], the homogeneous pinning partition function.
template <int D = 2>
double two_replica_exponential_moment(double u, int N, double cap = kDefaultReplicaCap) {
  return two_replica_moments<D>(u, N, cap).moment;
}

/// E2[L_N exp(u L_N)].
template <int D = 2>
double two_replica_weighted_local_time(double u, int N, double cap = kDefaultReplicaCap) {
  return two_replica_moments<D>(u, N, cap).weighted;
}

/// E[Z_hat_N^2] = E2[exp(gamma(beta) L_N)].
template <int D = 2>
double second_moment(const DisorderLaw& law, double beta, int N, double cap = kDefaultReplicaCap) {
  return two_replica_exponential_moment<D>(pinning_reward(law, beta), N, cap);
}

/// N_{beta,eps} = ceil(exp((1 - eps) pi / beta^2)).
inline long choose_scale_N(double beta, double eps, double cap) {
  if (!(beta > 0) || !std::isfinite(beta)) throw std::invalid_argument("choose_scale_N: beta must be > 0");
  if (!(eps >= 0 && eps < 1)) throw std::invalid_argument("choose_scale_N: eps must lie in [0, 1)");
  const double expo = (1.0 - eps) * std::numbers::pi / (beta * beta);
  const double required = std::exp(expo);
  if (!(required <= cap))
    throw UnreachableScaleError("N_{beta,eps} at beta = " + std::to_string(beta) + ", eps = " + std::to_string(eps),
                                std::ceil(required), cap);
  return static_cast<long>(std::ceil(required));
}

/// beta^2 sum_{n>=1, x} P_N(S_n = x)^2 = |grad log Z_hat_N|^2.
template <Environment F>
double gradient_norm_sq(const F& field, double beta, int N, PartitionOptions opt = {}) {
  if (beta == 0.0) return 0.0;
  return beta * beta * marginals(field, beta, N, opt).sum_of_squares();
}

struct SecondMomentReport {
  double beta = 0;
  double eps = 0;
  long N = 0;
  double second_moment = 0;
  double bound = 0;          // 10 / eps
  bool within_bound = false;
  double pz_lower = 0;       // 1 / (4 E[Z_hat^2])
  long samples = 0;
  double mc_frequency = 0;   // empirical P(Z_hat >= 1/2)
  double mc_stderr = 0;
};

/// Second moment at N_{beta,eps}, the 10/eps bound and the Paley-Zygmund
/// comparison against sampled Z_hat.
inline SecondMomentReport second_moment_bound_check(const DisorderLaw& law, double beta, double eps, long samples,
                                                    std::uint64_t master_seed, double cap = kDefaultReplicaCap) {
  SecondMomentReport r;
  r.beta = beta;
  r.eps = eps;
  r.N = choose_scale_N(beta, eps, static_cast<double>(replica_max_N<2>(cap)));
  const int N = static_cast<int>(r.N);
  r.second_moment = second_moment<2>(law, beta, N, cap);
  r.bound = 10.0 / eps;
  r.within_bound = r.second_moment <= r.bound;
  r.pz_lower = 1.0 / (4.0 * r.second_moment);
  r.samples = samples;
  long hits = 0;
  for (long i = 0; i < samples; ++i) {
    EnvironmentField<2> f(law, derive_seed(master_seed, static_cast<std::uint64_t>(i)), N, N);
    if (log_partition(f, beta, N).log_zhat >= -std::numbers::ln2) ++hits;
  }
  if (samples > 0) {
    r.mc_frequency = static_cast<double>(hits) / samples;
    r.mc_stderr = std::sqrt(r.mc_frequency * (1 - r.mc_frequency) / samples);
  }
  return r;
}

/// Markov step of the key statement: with G = 4 beta^2 E2[L e^{gamma L}]
/// bounding E[|grad|^2; Z_hat >= 1/2], the choice M^2 = 80 G / eps gives
/// P(Z_hat >= 1/2, |grad|^2 <= M^2) >= P(Z_hat >= 1/2) - eps/80.
struct KeyStatementReport {
  double beta = 0, eps = 0;
  long N = 0;
  double gradient_bound = 0;  // G
  double M2 = 0;
  double target = 0;          // eps / 80
  long samples = 0;
  double frequency = 0;       // empirical P(Z_hat >= 1/2, |grad|^2 <= M^2)
  double stderr_ = 0;
  double frequency_z = 0;     // empirical P(Z_hat >= 1/2)
  double mean_grad_on_event = 0;  // empirical E[|grad|^2; Z_hat >= 1/2]
  double mean_grad_on_event_stderr = 0;
};

inline KeyStatementReport key_statement_check(const DisorderLaw& law, double beta, double eps, long samples,
                                              std::uint64_t master_seed, double cap = kDefaultReplicaCap) {
  KeyStatementReport r;
  r.beta = beta;
  r.eps = eps;
  r.N = choose_scale_N(beta, eps, static_cast<double>(replica_max_N<2>(cap)));
  const int N = static_cast<int>(r.N);
  const double gamma = pinning_reward(law, beta);
  r.gradient_bound = 4.0 * beta * beta * two_replica_weighted_local_time<2>(gamma, N, cap);
  r.M2 = 80.0 * r.gradient_bound / eps;
  r.target = eps / 80.0;
  r.samples = samples;
  long hits = 0, hz = 0;
  double s = 0, s2 = 0;
  for (long i = 0; i < samples; ++i) {
    EnvironmentField<2> f(law, derive_seed(master_seed, static_cast<std::uint64_t>(i)), N, N);
    const auto mt = marginals(f, beta, N);
    const double g2 = beta * beta * mt.sum_of_squares();
    const bool z = mt.log_zhat() >= -std::numbers::ln2;
    const double v = z ? g2 : 0.0;
    s += v;
    s2 += v * v;
    if (z) ++hz;
    if (z && g2 <= r.M2) ++hits;
  }
  if (samples > 0) {
    r.frequency = static_cast<double>(hits) / samples;
    r.stderr_ = std::sqrt(r.frequency * (1 - r.frequency) / samples);
    r.frequency_z = static_cast<double>(hz) / samples;
    r.mean_grad_on_event = s / samples;
    r.mean_grad_on_event_stderr = samples > 1 ? std::sqrt((s2 / samples - (s / samples) * (s / samples)) / (samples - 1)) : 0;
  }
  return r;
}

}  // namespace dprm
