#pragma once

// Integer lattice sites and dense boxes on Z^D.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

namespace dprm {

template <int D>
using Site = std::array<int, D>;

template <int D>
constexpr Site<D> origin() {
  Site<D> x{};
  return x;
}

template <int D>
constexpr int l1_norm(const Site<D>& x) {
  int s = 0;
  for (int v : x) s += v < 0 ? -v : v;
  return s;
}

template <int D>
constexpr int linf_norm(const Site<D>& x) {
  int s = 0;
  for (int v : x) s = std::max(s, v < 0 ? -v : v);
  return s;
}

// Operators take std::array<int, N> directly so that N deduces.
template <std::size_t N>
constexpr std::array<int, N> operator+(std::array<int, N> a, const std::array<int, N>& b) {
  for (std::size_t i = 0; i < N; ++i) a[i] += b[i];
  return a;
}

template <std::size_t N>
constexpr std::array<int, N> operator-(std::array<int, N> a, const std::array<int, N>& b) {
  for (std::size_t i = 0; i < N; ++i) a[i] -= b[i];
  return a;
}

template <std::size_t N>
constexpr std::array<int, N> operator-(std::array<int, N> a) {
  for (auto& v : a) v = -v;
  return a;
}

template <std::size_t N>
constexpr std::array<int, N> scaled(std::array<int, N> a, int k) {
  for (auto& v : a) v *= k;
  return a;
}

/// Nearest-neighbour steps +-e_i, in a fixed order.
template <int D>
std::vector<Site<D>> unit_steps() {
  std::vector<Site<D>> steps;
  steps.reserve(2 * D);
  for (int i = 0; i < D; ++i) {
    for (int s : {1, -1}) {
      Site<D> e{};
      e[i] = s;
      steps.push_back(e);
    }
  }
  return steps;
}

template <int D>
std::string to_string(const Site<D>& x) {
  std::string s = "(";
  for (int i = 0; i < D; ++i) {
    if (i) s += ",";
    s += std::to_string(x[i]);
  }
  return s + ")";
}

/// Dense cube [-radius, radius]^D stored row-major, last coordinate fastest.
template <int D>
class LatticeBox {
 public:
  LatticeBox() : LatticeBox(0) {}

  explicit LatticeBox(int radius) : radius_(radius), side_(2 * radius + 1) {
    if (radius < 0) throw std::invalid_argument("LatticeBox: negative radius");
    std::ptrdiff_t s = 1;
    for (int i = D - 1; i >= 0; --i) {
      stride_[i] = s;
      s *= side_;
    }
    size_ = static_cast<std::size_t>(s);
  }

  int radius() const { return radius_; }
  int side() const { return side_; }
  std::size_t size() const { return size_; }
  std::ptrdiff_t stride(int axis) const { return stride_[axis]; }

  bool contains(const Site<D>& x) const {
    for (int v : x)
      if (v < -radius_ || v > radius_) return false;
    return true;
  }

  std::size_t index(const Site<D>& x) const {
    std::ptrdiff_t idx = 0;
    for (int i = 0; i < D; ++i) idx += (x[i] + radius_) * stride_[i];
    return static_cast<std::size_t>(idx);
  }

  Site<D> site(std::size_t idx) const {
    Site<D> x{};
    auto r = static_cast<std::ptrdiff_t>(idx);
    for (int i = 0; i < D; ++i) {
      x[i] = static_cast<int>(r / stride_[i]) - radius_;
      r %= stride_[i];
    }
    return x;
  }

  /// Linear offset of a displacement, valid whenever both ends are inside.
  std::ptrdiff_t offset(const Site<D>& dx) const {
    std::ptrdiff_t o = 0;
    for (int i = 0; i < D; ++i) o += dx[i] * stride_[i];
    return o;
  }

 private:
  int radius_;
  int side_;
  std::array<std::ptrdiff_t, D> stride_{};
  std::size_t size_ = 0;
};

/// Visits the rows (fixed leading D-1 coordinates) of the region
/// {|x|_inf <= radius, |x|_1 <= l1_limit} inside `box`. For each row calls
/// fn(prefix, lo, hi, base) where the row is x_{D-1} in [lo, hi] and `base`
/// is the linear index of the site with last coordinate 0.
template <int D, class Fn>
void for_each_row(const LatticeBox<D>& box, int radius, int l1_limit, Fn&& fn) {
  if (radius < 0 || l1_limit < 0) return;
  Site<D> x{};
  if constexpr (D == 1) {
    const int hi = std::min(radius, l1_limit);
    fn(x, -hi, hi, box.index(x));
  } else {
    for (int i = 0; i < D - 1; ++i) x[i] = -radius;
    while (true) {
      int pre = 0;
      for (int i = 0; i < D - 1; ++i) pre += std::abs(x[i]);
      if (pre <= l1_limit) {
        const int hi = std::min(radius, l1_limit - pre);
        x[D - 1] = 0;
        fn(x, -hi, hi, box.index(x));
      }
      int axis = D - 2;
      while (axis >= 0 && x[axis] == radius) {
        x[axis] = -radius;
        --axis;
      }
      if (axis < 0) break;
      ++x[axis];
    }
  }
}

/// Visits every site of the cube [-radius, radius]^D in row-major order.
template <int D, class Fn>
void for_each_site(int radius, Fn&& fn) {
  Site<D> x{};
  for (auto& v : x) v = -radius;
  while (true) {
    fn(static_cast<const Site<D>&>(x));
    int axis = D - 1;
    while (axis >= 0 && x[axis] == radius) {
      x[axis] = -radius;
      --axis;
    }
    if (axis < 0) break;
    ++x[axis];
  }
}

}  // namespace dprm
