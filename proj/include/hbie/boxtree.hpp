#pragma once

// Linear octree over a point cloud: Morton-sorted points, relevant boxes per
// level, neighbor and cousin lists.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "hbie/common.hpp"

namespace hbie {

namespace morton {

inline std::uint64_t spread(std::uint64_t v) {
  v &= 0x1fffff;
  v = (v | v << 32) & 0x1f00000000ffffULL;
  v = (v | v << 16) & 0x1f0000ff0000ffULL;
  v = (v | v << 8) & 0x100f00f00f00f00fULL;
  v = (v | v << 4) & 0x10c30c30c30c30c3ULL;
  v = (v | v << 2) & 0x1249249249249249ULL;
  return v;
}

inline std::uint64_t compact(std::uint64_t v) {
  v &= 0x1249249249249249ULL;
  v = (v ^ (v >> 2)) & 0x10c30c30c30c30c3ULL;
  v = (v ^ (v >> 4)) & 0x100f00f00f00f00fULL;
  v = (v ^ (v >> 8)) & 0x1f0000ff0000ffULL;
  v = (v ^ (v >> 16)) & 0x1f00000000ffffULL;
  v = (v ^ (v >> 32)) & 0x1fffff;
  return v;
}

inline std::uint64_t encode(std::uint32_t x, std::uint32_t y, std::uint32_t z) {
  return spread(x) | spread(y) << 1 | spread(z) << 2;
}

inline std::array<std::uint32_t, 3> decode(std::uint64_t k) {
  return {static_cast<std::uint32_t>(compact(k)), static_cast<std::uint32_t>(compact(k >> 1)),
          static_cast<std::uint32_t>(compact(k >> 2))};
}

}  // namespace morton

struct BoxLevel {
  double H = 0;
  std::vector<std::uint64_t> key;  // sorted
  std::vector<std::uint32_t> first, last;  // half-open ranges into the sorted points
  std::vector<std::uint32_t> parent;
  std::vector<std::uint32_t> child_first, child_last;  // ranges into the next level
  std::vector<std::uint32_t> nbr_offset, nbr;  // includes the box itself
  std::vector<std::uint32_t> cousin_offset, cousin;

  std::size_t size() const { return key.size(); }
  std::span<const std::uint32_t> neighbors(std::size_t b) const {
    return {nbr.data() + nbr_offset[b], nbr.data() + nbr_offset[b + 1]};
  }
  std::span<const std::uint32_t> cousins(std::size_t b) const {
    return {cousin.data() + cousin_offset[b], cousin.data() + cousin_offset[b + 1]};
  }
  /// Index of the box with the given key, or -1.
  long find(std::uint64_t k) const {
    auto it = std::lower_bound(key.begin(), key.end(), k);
    return (it != key.end() && *it == k) ? static_cast<long>(it - key.begin()) : -1;
  }
};

class BoxTree {
 public:
  int depth() const { return static_cast<int>(levels_.size()); }
  /// Level d in 1..depth().
  const BoxLevel& level(int d) const { return levels_[d - 1]; }
  double side(int d) const { return levels_[d - 1].H; }
  Vec3 origin() const { return origin_; }

  Vec3 center(int d, std::size_t b) const {
    const auto c = morton::decode(levels_[d - 1].key[b]);
    const double H = side(d);
    return origin_ + Vec3{(c[0] + 0.5) * H, (c[1] + 0.5) * H, (c[2] + 0.5) * H};
  }

  std::size_t num_points() const { return order_.size(); }
  /// Sorted position -> original point index.
  const std::vector<std::uint32_t>& order() const { return order_; }
  /// Original point index -> sorted position.
  const std::vector<std::uint32_t>& rank() const { return rank_; }
  /// Points in sorted order.
  const std::vector<Vec3>& sorted_points() const { return sorted_; }

  /// Level-depth() box containing original point i.
  std::uint32_t leaf_of(std::size_t i) const { return leaf_of_sorted_[rank_[i]]; }

  /// Whether original points i and j lie in neighboring (or equal) finest boxes.
  bool leaf_neighbors(std::size_t i, std::size_t j) const {
    const BoxLevel& L = levels_.back();
    const auto a = morton::decode(L.key[leaf_of(i)]), b = morton::decode(L.key[leaf_of(j)]);
    for (int k = 0; k < 3; ++k)
      if (std::abs(static_cast<long>(a[k]) - static_cast<long>(b[k])) > 1) return false;
    return true;
  }

  friend BoxTree build_box_tree(std::span<const Vec3> points, double kappa_max, int forced_depth);

 private:
  Vec3 origin_;
  std::vector<BoxLevel> levels_;
  std::vector<std::uint32_t> order_, rank_, leaf_of_sorted_;
  std::vector<Vec3> sorted_;
};

/// Depth is the smallest D with H_D <= λ/4 for λ = 2π/κ_max, unless forced_depth > 0.
inline BoxTree build_box_tree(std::span<const Vec3> points, double kappa_max, int forced_depth = 0) {
  if (points.empty()) throw std::invalid_argument("build_box_tree: empty point set");
  Vec3 lo = points[0], hi = points[0];
  for (const auto& p : points)
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], p[k]);
      hi[k] = std::max(hi[k], p[k]);
    }
  double extent = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
  if (!(extent > 0)) extent = 1e-12 * std::max(1.0, norm(lo));
  const double H1 = 1.01 * extent;
  const Vec3 mid = 0.5 * (lo + hi);

  int D = 1;
  if (forced_depth > 0) {
    D = forced_depth;
  } else if (kappa_max > 0) {
    const double target = 0.25 * two_pi / kappa_max;
    while (H1 / std::ldexp(1.0, D - 1) > target) ++D;
  }
  if (D > 21) throw std::invalid_argument("build_box_tree: depth exceeds 21 levels");

  BoxTree t;
  t.origin_ = mid - Vec3{0.5 * H1, 0.5 * H1, 0.5 * H1};
  const std::uint32_t n_side = 1u << (D - 1);
  const double HD = H1 / n_side;
  const std::size_t N = points.size();
  std::vector<std::uint64_t> pkey(N);
  for (std::size_t i = 0; i < N; ++i) {
    std::uint32_t c[3];
    for (int k = 0; k < 3; ++k) {
      const double f = std::floor((points[i][k] - t.origin_[k]) / HD);
      c[k] = static_cast<std::uint32_t>(std::clamp(f, 0.0, static_cast<double>(n_side - 1)));
    }
    pkey[i] = morton::encode(c[0], c[1], c[2]);
  }
  t.order_.resize(N);
  std::iota(t.order_.begin(), t.order_.end(), 0u);
  std::stable_sort(t.order_.begin(), t.order_.end(), [&](auto a, auto b) { return pkey[a] < pkey[b]; });
  t.rank_.resize(N);
  t.sorted_.resize(N);
  for (std::size_t s = 0; s < N; ++s) {
    t.rank_[t.order_[s]] = static_cast<std::uint32_t>(s);
    t.sorted_[s] = points[t.order_[s]];
  }

  t.levels_.resize(D);
  for (int d = 1; d <= D; ++d) {
    BoxLevel& L = t.levels_[d - 1];
    L.H = H1 / std::ldexp(1.0, d - 1);
    const int shift = 3 * (D - d);
    for (std::size_t s = 0; s < N; ++s) {
      const std::uint64_t k = pkey[t.order_[s]] >> shift;
      if (L.key.empty() || L.key.back() != k) {
        if (!L.key.empty()) L.last.push_back(static_cast<std::uint32_t>(s));
        L.key.push_back(k);
        L.first.push_back(static_cast<std::uint32_t>(s));
      }
    }
    L.last.push_back(static_cast<std::uint32_t>(N));
  }
  t.leaf_of_sorted_.resize(N);
  {
    const BoxLevel& L = t.levels_.back();
    for (std::size_t b = 0; b < L.size(); ++b)
      for (std::uint32_t s = L.first[b]; s < L.last[b]; ++s) t.leaf_of_sorted_[s] = static_cast<std::uint32_t>(b);
  }

  for (int d = 1; d <= D; ++d) {
    BoxLevel& L = t.levels_[d - 1];
    const std::size_t nb = L.size();
    L.parent.assign(nb, 0);
    L.child_first.assign(nb, 0);
    L.child_last.assign(nb, 0);
    if (d > 1) {
      const BoxLevel& P = t.levels_[d - 2];
      for (std::size_t b = 0; b < nb; ++b) L.parent[b] = static_cast<std::uint32_t>(P.find(L.key[b] >> 3));
    }
    if (d < D) {
      const BoxLevel& C = t.levels_[d];
      std::size_t c = 0;
      for (std::size_t b = 0; b < nb; ++b) {
        L.child_first[b] = static_cast<std::uint32_t>(c);
        while (c < C.size() && (C.key[c] >> 3) == L.key[b]) ++c;
        L.child_last[b] = static_cast<std::uint32_t>(c);
      }
    }
    const long side = 1L << (d - 1);
    L.nbr_offset.assign(1, 0);
    for (std::size_t b = 0; b < nb; ++b) {
      const auto c = morton::decode(L.key[b]);
      for (int dx = -1; dx <= 1; ++dx)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dz = -1; dz <= 1; ++dz) {
            const long x = c[0] + dx, y = c[1] + dy, z = c[2] + dz;
            if (x < 0 || y < 0 || z < 0 || x >= side || y >= side || z >= side) continue;
            const long j = L.find(morton::encode(x, y, z));
            if (j >= 0) L.nbr.push_back(static_cast<std::uint32_t>(j));
          }
      std::sort(L.nbr.begin() + L.nbr_offset.back(), L.nbr.end());
      L.nbr_offset.push_back(static_cast<std::uint32_t>(L.nbr.size()));
    }
  }
  for (int d = 1; d <= D; ++d) {
    BoxLevel& L = t.levels_[d - 1];
    L.cousin_offset.assign(1, 0);
    for (std::size_t b = 0; b < L.size(); ++b) {
      if (d > 1) {
        const BoxLevel& P = t.levels_[d - 2];
        const auto c = morton::decode(L.key[b]);
        for (std::uint32_t pn : P.neighbors(L.parent[b]))
          for (std::uint32_t j = P.child_first[pn]; j < P.child_last[pn]; ++j) {
            const auto cj = morton::decode(L.key[j]);
            bool nb = true;
            for (int k = 0; k < 3; ++k)
              if (std::abs(static_cast<long>(cj[k]) - static_cast<long>(c[k])) > 1) nb = false;
            if (!nb) L.cousin.push_back(j);
          }
        std::sort(L.cousin.begin() + L.cousin_offset.back(), L.cousin.end());
      }
      L.cousin_offset.push_back(static_cast<std::uint32_t>(L.cousin.size()));
    }
  }
  return t;
}

}  // namespace hbie
