#pragma once

// Environment laws, their cumulant generating functions, and seed-addressed
// disorder fields (plain, exponentially tilted along a path, shifted, and
// perturbed at a single coordinate).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <concepts>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "dprm/lattice.hpp"
#include "dprm/rng.hpp"

namespace dprm {

enum class LawKind { gaussian, rademacher, shifted_bernoulli };

/// A centered, unit-variance law for a single environment variable.
///
/// `shifted_bernoulli(p)` is (B - p) / sqrt(p (1 - p)) with B ~ Bernoulli(p).
/// All three laws have an everywhere-finite log-moment generating function;
/// `moment_radius` optionally restricts the admissible |beta| further.
struct DisorderLaw {
  LawKind kind = LawKind::gaussian;
  double p = 0.5;
  double moment_radius = std::numeric_limits<double>::infinity();

  static DisorderLaw gaussian() { return {LawKind::gaussian, 0.5}; }
  static DisorderLaw rademacher() { return {LawKind::rademacher, 0.5}; }
  static DisorderLaw shifted_bernoulli(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("shifted_bernoulli: p must lie in (0,1)");
    return {LawKind::shifted_bernoulli, p};
  }

  /// Parses "gaussian", "rademacher", or "bernoulli:<p>".
  static DisorderLaw parse(std::string_view s) {
    if (s == "gaussian" || s == "standard-gaussian") return gaussian();
    if (s == "rademacher") return rademacher();
    for (std::string_view prefix : {"bernoulli:", "shifted-bernoulli:"}) {
      if (s.starts_with(prefix)) {
        const std::string rest(s.substr(prefix.size()));
        std::size_t used = 0;
        double p = 0;
        try {
          p = std::stod(rest, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used == 0 || used != rest.size())
          throw std::invalid_argument("bad Bernoulli parameter in law '" + std::string(s) + "'");
        return shifted_bernoulli(p);
      }
    }
    throw std::invalid_argument("unknown disorder law '" + std::string(s) +
                                "' (expected gaussian, rademacher or bernoulli:<p>)");
  }

  std::string name() const {
    switch (kind) {
      case LawKind::gaussian: return "gaussian";
      case LawKind::rademacher: return "rademacher";
      case LawKind::shifted_bernoulli: {
        char buf[48];
        std::snprintf(buf, sizeof buf, "bernoulli:%.17g", p);
        return buf;
      }
    }
    return "?";
  }

  /// Two atoms (high, low) of a two-point law.
  double atom_high() const { return kind == LawKind::rademacher ? 1.0 : (1.0 - p) / std::sqrt(p * (1.0 - p)); }
  double atom_low() const { return kind == LawKind::rademacher ? -1.0 : -p / std::sqrt(p * (1.0 - p)); }
  double prob_high() const { return kind == LawKind::rademacher ? 0.5 : p; }

  /// ess sup |omega|; infinite for the Gaussian.
  double max_abs() const {
    if (kind == LawKind::gaussian) return std::numeric_limits<double>::infinity();
    return std::max(std::abs(atom_high()), std::abs(atom_low()));
  }

  /// Rate c0 in P(|omega| >= v) <= 2 exp(-c0 v). Recorded as infinite for the
  /// supported laws (Gaussian tails are lighter than exponential; the
  /// two-point laws are bounded).
  double tail_rate() const { return std::numeric_limits<double>::infinity(); }

  bool bounded() const { return kind != LawKind::gaussian; }

  friend bool operator==(const DisorderLaw&, const DisorderLaw&) = default;
};

/// lambda(beta), lambda'(beta), lambda''(beta).
struct CumulantTriple {
  double lambda = 0;
  double lambda1 = 0;
  double lambda2 = 0;
};

inline void check_beta(const DisorderLaw& law, double beta) {
  if (!std::isfinite(beta)) throw std::domain_error("beta must be finite");
  if (std::abs(beta) > law.moment_radius)
    throw std::domain_error("beta = " + std::to_string(beta) + " outside the finite-moment region of " +
                            law.name());
}

namespace detail {

// Two-point law with atoms a > b, P(a) = p. Stable in the tilt.
inline CumulantTriple two_point_cumulants(double a, double b, double p, double beta) {
  const double c = beta * (a - b);
  // tilted probability of the high atom
  double pi, qi, lam;
  if (c >= 0) {
    const double r = (1.0 - p) / p * std::exp(-c);
    pi = 1.0 / (1.0 + r);
    qi = r / (1.0 + r);
    lam = beta * a + std::log(p) + std::log1p(r);
  } else {
    const double r = p / (1.0 - p) * std::exp(c);
    pi = r / (1.0 + r);
    qi = 1.0 / (1.0 + r);
    lam = beta * b + std::log(1.0 - p) + std::log1p(r);
  }
  const double mean = b + pi * (a - b);
  const double var = pi * qi * (a - b) * (a - b);
  return {lam, mean, var};
}

inline double tilted_high_probability(double a, double b, double p, double beta) {
  const double c = beta * (a - b);
  if (c >= 0) return 1.0 / (1.0 + (1.0 - p) / p * std::exp(-c));
  const double r = p / (1.0 - p) * std::exp(c);
  return r / (1.0 + r);
}

}  // namespace detail

inline CumulantTriple cumulants(const DisorderLaw& law, double beta) {
  check_beta(law, beta);
  switch (law.kind) {
    case LawKind::gaussian: return {0.5 * beta * beta, beta, 1.0};
    case LawKind::rademacher: {
      const double a = std::abs(beta);
      const double lc = a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
      const double th = std::tanh(beta);
      const double ch = std::cosh(beta);
      return {lc, th, 1.0 / (ch * ch)};
    }
    case LawKind::shifted_bernoulli:
      return detail::two_point_cumulants(law.atom_high(), law.atom_low(), law.p, beta);
  }
  return {};
}

inline double log_mgf(const DisorderLaw& law, double beta) { return cumulants(law, beta).lambda; }

/// gamma(beta) = lambda(2 beta) - 2 lambda(beta), the two-replica pinning reward.
inline double pinning_reward(const DisorderLaw& law, double beta) {
  return log_mgf(law, 2.0 * beta) - 2.0 * log_mgf(law, beta);
}

/// Draws omega from its law given the coordinate key.
inline double sample_from_key(const DisorderLaw& law, std::uint64_t key) {
  const double u1 = uniform_at(key, 0);
  switch (law.kind) {
    case LawKind::gaussian: {
      const double u2 = uniform_at(key, 1);
      return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
    case LawKind::rademacher: return u1 < 0.5 ? 1.0 : -1.0;
    case LawKind::shifted_bernoulli: return u1 < law.p ? law.atom_high() : law.atom_low();
  }
  return 0.0;
}

/// Draws from the law exponentially tilted by exp(beta omega - lambda(beta)),
/// consuming the same uniforms as `sample_from_key`.
inline double tilted_sample_from_key(const DisorderLaw& law, double beta, std::uint64_t key) {
  const double u1 = uniform_at(key, 0);
  switch (law.kind) {
    case LawKind::gaussian: {
      const double u2 = uniform_at(key, 1);
      return beta + std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
    case LawKind::rademacher:
    case LawKind::shifted_bernoulli: {
      const double pi = detail::tilted_high_probability(law.atom_high(), law.atom_low(), law.prob_high(), beta);
      return u1 < pi ? law.atom_high() : law.atom_low();
    }
  }
  return 0.0;
}

/// Anything that hands out environment values on Z x Z^D.
template <class F>
concept Environment = requires(const F& f, int n, const Site<F::dimension>& x) {
  { f.value(n, x) } -> std::convertible_to<double>;
  { f.covers(n, x) } -> std::convertible_to<bool>;
  { f.law() } -> std::convertible_to<const DisorderLaw&>;
};

/// Seed-addressed i.i.d. field on the box {0..horizon} x [-radius, radius]^D.
/// The value at (n, x) is a pure function of (seed, n, x).
template <int D>
class EnvironmentField {
 public:
  static constexpr int dimension = D;

  EnvironmentField(DisorderLaw law, std::uint64_t seed, int horizon, int radius,
                   std::optional<double> truncation = std::nullopt)
      : law_(law), seed_(seed), horizon_(horizon), radius_(radius), truncation_(truncation) {
    if (horizon < 0 || radius < 0) throw std::invalid_argument("EnvironmentField: negative extent");
    if (truncation && !(*truncation > 0)) throw std::invalid_argument("EnvironmentField: truncation must be > 0");
  }

  const DisorderLaw& law() const { return law_; }
  std::uint64_t seed() const { return seed_; }
  int horizon() const { return horizon_; }
  int radius() const { return radius_; }
  std::optional<double> truncation() const { return truncation_; }

  bool covers(int n, const Site<D>& x) const {
    return n >= 0 && n <= horizon_ && linf_norm<D>(x) <= radius_;
  }

  std::uint64_t key(int n, const Site<D>& x) const {
    std::uint64_t k = absorb(mix64(seed_ + kGolden), n);
    for (int v : x) k = absorb(k, v);
    return k;
  }

  /// Unchecked access.
  double value(int n, const Site<D>& x) const { return truncate(sample_from_key(law_, key(n, x))); }

  double omega_at(int n, const Site<D>& x) const {
    if (!covers(n, x))
      throw std::out_of_range("omega_at: (" + std::to_string(n) + ", " + to_string<D>(x) +
                              ") outside the field box");
    return value(n, x);
  }

  double truncate(double w) const {
    if (truncation_ && std::abs(w) > *truncation_) return 0.0;
    return w;
  }

 private:
  DisorderLaw law_;
  std::uint64_t seed_;
  int horizon_;
  int radius_;
  std::optional<double> truncation_;
};

/// The field under P^S: coordinates (n, S_n) follow the beta-tilted law, all
/// others are untouched. Uses the same uniforms as the base field.
template <int D>
class TiltedField {
 public:
  static constexpr int dimension = D;

  TiltedField(EnvironmentField<D> base, double beta, std::vector<Site<D>> path)
      : base_(std::move(base)), beta_(beta), path_(std::move(path)) {
    check_beta(base_.law(), beta);
    if (path_.empty()) throw std::invalid_argument("TiltedField: empty path");
  }

  const DisorderLaw& law() const { return base_.law(); }
  bool covers(int n, const Site<D>& x) const { return base_.covers(n, x); }
  const std::vector<Site<D>>& path() const { return path_; }

  bool on_path(int n, const Site<D>& x) const {
    return n >= 1 && static_cast<std::size_t>(n) < path_.size() && path_[static_cast<std::size_t>(n)] == x;
  }

  double value(int n, const Site<D>& x) const {
    if (on_path(n, x)) return base_.truncate(tilted_sample_from_key(base_.law(), beta_, base_.key(n, x)));
    return base_.value(n, x);
  }

  double omega_at(int n, const Site<D>& x) const {
    if (!covers(n, x)) throw std::out_of_range("tilted omega_at: outside the field box");
    return value(n, x);
  }

 private:
  EnvironmentField<D> base_;
  double beta_;
  std::vector<Site<D>> path_;
};

/// Tilted value at one coordinate without building a view.
template <int D>
double tilted_omega_at(const EnvironmentField<D>& field, double beta, std::span<const Site<D>> path, int n,
                       const Site<D>& x) {
  check_beta(field.law(), beta);
  if (!field.covers(n, x)) throw std::out_of_range("tilted_omega_at: outside the field box");
  if (n < 0 || static_cast<std::size_t>(n) >= path.size())
    throw std::out_of_range("tilted_omega_at: path shorter than the requested time");
  if (n >= 1 && path[static_cast<std::size_t>(n)] == x)
    return field.truncate(tilted_sample_from_key(field.law(), beta, field.key(n, x)));
  return field.value(n, x);
}

/// (theta^{a,b} omega)_{t,x} = omega_{t+a, x+b}.
template <Environment F>
class ShiftedField {
 public:
  static constexpr int dimension = F::dimension;
  using SiteT = Site<dimension>;

  ShiftedField(const F& base, int time_shift, SiteT space_shift)
      : base_(&base), time_shift_(time_shift), space_shift_(space_shift) {}

  const DisorderLaw& law() const { return base_->law(); }
  bool covers(int n, const SiteT& x) const { return base_->covers(n + time_shift_, x + space_shift_); }
  double value(int n, const SiteT& x) const { return base_->value(n + time_shift_, x + space_shift_); }

 private:
  const F* base_;
  int time_shift_;
  SiteT space_shift_;
};

/// Base field with `delta` added at one coordinate (finite-difference probes).
template <Environment F>
class PerturbedField {
 public:
  static constexpr int dimension = F::dimension;
  using SiteT = Site<dimension>;

  PerturbedField(const F& base, int n, SiteT x, double delta) : base_(&base), n_(n), x_(x), delta_(delta) {}

  const DisorderLaw& law() const { return base_->law(); }
  bool covers(int n, const SiteT& x) const { return base_->covers(n, x); }
  double value(int n, const SiteT& x) const {
    const double w = base_->value(n, x);
    return (n == n_ && x == x_) ? w + delta_ : w;
  }

 private:
  const F* base_;
  int n_;
  SiteT x_;
  double delta_;
};

/// Evaluates the field on times [t_begin, t_end] over the cube of `radius`
/// around `center`, row-major per time slice. Work is split over `workers`
/// threads by time slice; the result does not depend on the split.
template <Environment F>
std::vector<double> materialize(const F& field, int t_begin, int t_end, Site<F::dimension> center, int radius,
                                int workers = 1) {
  constexpr int D = F::dimension;
  if (t_end < t_begin) return {};
  const LatticeBox<D> box(radius);
  const auto slices = static_cast<std::size_t>(t_end - t_begin + 1);
  std::vector<double> out(slices * box.size());
  auto fill = [&](std::size_t first, std::size_t stride) {
    for (std::size_t s = first; s < slices; s += stride) {
      const int n = t_begin + static_cast<int>(s);
      double* row = out.data() + s * box.size();
      std::size_t i = 0;
      for_each_site<D>(radius, [&](const Site<D>& x) { row[i++] = field.value(n, x + center); });
    }
  };
  workers = std::max(1, workers);
  if (workers == 1) {
    fill(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(fill, static_cast<std::size_t>(w), static_cast<std::size_t>(workers));
  }
  return out;
}

}  // namespace dprm
