#pragma once

// Point-set containers, perturbation norms, norm-ball projections, point-set
// distances (Chamfer, Hausdorff, EMD) and brute-force k-nearest-neighbours.
//
// Coordinates are stored in single precision. Every reduction (norms,
// distance sums) accumulates in double.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pcadv/assignment.hpp"
#include "pcadv/error.hpp"

namespace pcadv {

using Point = std::array<float, 3>;
static_assert(sizeof(Point) == 3 * sizeof(float));

namespace detail {

inline bool all_finite(std::span<const Point> pts) {
  for (const auto& p : pts)
    for (float c : p)
      if (!std::isfinite(c)) return false;
  return true;
}

inline double sq_dist(const Point& a, const Point& b) {
  const double dx = double(a[0]) - b[0], dy = double(a[1]) - b[1], dz = double(a[2]) - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// Largest float not exceeding `eps`.
inline float float_floor(double eps) {
  float e = static_cast<float>(eps);
  if (double(e) > eps) e = std::nextafter(e, 0.0f);
  return e;
}

}  // namespace detail

/// A set of N >= 1 points with finite coordinates.
class PointCloud {
 public:
  explicit PointCloud(std::vector<Point> points) : points_(std::move(points)) {
    if (points_.empty()) throw InvalidInput("point cloud must contain at least one point");
    if (!detail::all_finite(points_)) throw InvalidInput("point cloud contains non-finite coordinates");
  }

  /// Builds from an interleaved xyz buffer (size must be a multiple of 3).
  static PointCloud from_flat(std::span<const float> xyz) {
    if (xyz.size() % 3 != 0) throw InvalidInput("flat buffer size is not a multiple of 3");
    std::vector<Point> pts(xyz.size() / 3);
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]};
    return PointCloud(std::move(pts));
  }

  std::size_t size() const noexcept { return points_.size(); }
  const Point& operator[](std::size_t i) const { return points_[i]; }
  std::span<const Point> points() const noexcept { return points_; }
  auto begin() const noexcept { return points_.begin(); }
  auto end() const noexcept { return points_.end(); }

  std::vector<float> flat() const {
    std::vector<float> out(3 * size());
    for (std::size_t i = 0; i < size(); ++i)
      for (int d = 0; d < 3; ++d) out[3 * i + d] = points_[i][d];
    return out;
  }

  friend bool operator==(const PointCloud&, const PointCloud&) = default;

 private:
  std::vector<Point> points_;
};

/// Additive per-point offsets for a cloud of the same size.
class Perturbation {
 public:
  explicit Perturbation(std::vector<Point> deltas) : deltas_(std::move(deltas)) {
    if (!detail::all_finite(deltas_)) throw InvalidInput("perturbation contains non-finite entries");
  }
  static Perturbation zeros(std::size_t n) { return Perturbation(std::vector<Point>(n, Point{0, 0, 0})); }

  std::size_t size() const noexcept { return deltas_.size(); }
  const Point& operator[](std::size_t i) const { return deltas_[i]; }
  Point& operator[](std::size_t i) { return deltas_[i]; }
  std::span<const Point> deltas() const noexcept { return deltas_; }
  std::span<Point> deltas() noexcept { return deltas_; }

  /// View of the 3N coordinates.
  std::span<float> coords() noexcept {
    if (deltas_.empty()) return {};
    return {deltas_.data()->data(), 3 * deltas_.size()};
  }
  std::span<const float> coords() const noexcept {
    if (deltas_.empty()) return {};
    return {deltas_.data()->data(), 3 * deltas_.size()};
  }

  friend bool operator==(const Perturbation&, const Perturbation&) = default;

 private:
  std::vector<Point> deltas_;
};

/// x + d.
inline PointCloud perturb(const PointCloud& x, const Perturbation& d) {
  if (x.size() != d.size()) throw InvalidInput("perturbation size does not match cloud size");
  std::vector<Point> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    for (int k = 0; k < 3; ++k) out[i][k] = x[i][k] + d[i][k];
  return PointCloud(std::move(out));
}

// ---------------------------------------------------------------------------
// Norms and projections

/// Largest absolute coordinate over all offsets.
inline double norm_linf(const Perturbation& d) {
  float m = 0.0f;
  for (const auto& p : d.deltas())
    for (float c : p) m = std::max(m, std::fabs(c));
  return m;
}

/// Frobenius norm of the N x 3 offset matrix.
inline double norm_l2(const Perturbation& d) {
  double s = 0.0;
  for (const auto& p : d.deltas())
    for (float c : p) s += double(c) * c;
  return std::sqrt(s);
}

/// Element-wise saturation to [-eps, eps].
inline Perturbation project_linf(Perturbation d, double eps) {
  if (!(eps >= 0.0)) throw InvalidArgument("project_linf: eps must be non-negative");
  const float e = detail::float_floor(eps);
  for (auto& c : d.coords()) c = std::clamp(c, -e, e);
  return d;
}

/// Rescales onto the l2 ball of radius eps: d * eps / max(||d||_F, eps).
/// The rounded result is guaranteed to satisfy norm_l2 <= eps.
inline Perturbation project_l2(Perturbation d, double eps) {
  if (!(eps >= 0.0)) throw InvalidArgument("project_l2: eps must be non-negative");
  const double n = norm_l2(d);
  if (n <= eps) return d;
  const std::vector<float> orig(d.coords().begin(), d.coords().end());
  double scale = eps / n;
  for (int attempt = 0; attempt < 64; ++attempt) {
    auto c = d.coords();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = static_cast<float>(orig[i] * scale);
    if (norm_l2(d) <= eps) return d;
    scale *= 1.0 - 0x1.0p-23;
  }
  for (auto& c : d.coords()) c = 0.0f;
  return d;
}

// ---------------------------------------------------------------------------
// Point-set distances

enum class ChamferMode { directed, symmetric };

/// Directed: mean over points of `b` of the squared distance to the nearest
/// point of `a`. Symmetric: directed(a, b) + directed(b, a).
inline double chamfer(const PointCloud& a, const PointCloud& b, ChamferMode mode = ChamferMode::directed) {
  auto directed = [](const PointCloud& from, const PointCloud& to) {
    double sum = 0.0;
    for (const auto& q : to) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& p : from) best = std::min(best, detail::sq_dist(p, q));
      sum += best;
    }
    return sum / static_cast<double>(to.size());
  };
  if (mode == ChamferMode::directed) return directed(a, b);
  return directed(a, b) + directed(b, a);
}

/// Max over points of `b` of the squared distance to the nearest point of `a`.
inline double hausdorff(const PointCloud& a, const PointCloud& b) {
  double worst = 0.0;
  for (const auto& q : b) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : a) best = std::min(best, detail::sq_dist(p, q));
    worst = std::max(worst, best);
  }
  return worst;
}

inline constexpr std::size_t kExactEmdCap = 128;

enum class EmdMode { exact, greedy };

/// Bijection between equal-size clouds: a[i] <-> b[match[i]].
inline std::vector<std::size_t> emd_matching(const PointCloud& a, const PointCloud& b,
                                             EmdMode mode = EmdMode::exact) {
  if (a.size() != b.size())
    throw InvalidInput("emd: clouds must have equal size (" + std::to_string(a.size()) + " vs " +
                       std::to_string(b.size()) + ")");
  const std::size_t n = a.size();
  if (mode == EmdMode::exact) {
    if (n > kExactEmdCap)
      throw InvalidArgument("emd: exact solver is capped at " + std::to_string(kExactEmdCap) +
                            " points; use EmdMode::greedy for larger clouds");
    std::vector<double> cost(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = std::sqrt(detail::sq_dist(a[i], b[j]));
    return solve_assignment(cost, n);
  }
  // Greedy: each point of `a` in order takes its nearest unmatched point of `b`.
  std::vector<std::size_t> match(n);
  std::vector<char> taken(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (taken[j]) continue;
      const double d = detail::sq_dist(a[i], b[j]);
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    taken[arg] = 1;
    match[i] = arg;
  }
  return match;
}

/// Sum of un-squared distances under the optimal bijection (greedy mode
/// returns an upper bound).
inline double emd(const PointCloud& a, const PointCloud& b, EmdMode mode = EmdMode::exact) {
  const auto match = emd_matching(a, b, mode);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += std::sqrt(detail::sq_dist(a[i], b[match[i]]));
  return sum;
}

// ---------------------------------------------------------------------------
// k-nearest neighbours

/// Row-major N x k table of neighbour indices.
struct NeighborTable {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> indices;

  std::span<const std::uint32_t> row(std::size_t i) const { return {indices.data() + i * k, k}; }
};

/// The k nearest other points of every point, nearest first; equal distances
/// resolve to the lower index.
inline NeighborTable knn_indices(std::span<const Point> pts, std::size_t k) {
  const std::size_t n = pts.size();
  if (k < 1 || k >= n)
    throw InvalidArgument("knn_indices: need 1 <= k < N (k=" + std::to_string(k) + ", N=" + std::to_string(n) + ")");
  NeighborTable table{n, k, std::vector<std::uint32_t>(n * k)};
  std::vector<std::pair<double, std::uint32_t>> cand(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) cand[c++] = {detail::sq_dist(pts[i], pts[j]), static_cast<std::uint32_t>(j)};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t r = 0; r < k; ++r) table.indices[i * k + r] = cand[r].second;
  }
  return table;
}

inline NeighborTable knn_indices(const PointCloud& x, std::size_t k) { return knn_indices(x.points(), k); }

}  // namespace pcadv

namespace pcadv {

/// Directed Chamfer between interleaved xyz buffers (mean over `b` of the
/// squared distance to the nearest point of `a`) with gradients. Gradients
/// are accumulated into `grad_a` / `grad_b` when non-null. Nearest-point
/// ties resolve to the lower index.
inline double chamfer_directed_with_grad(std::span<const float> a, std::span<const float> b, float* grad_a,
                                         float* grad_b, float scale = 1.0f) {
  const std::size_t na = a.size() / 3, nb = b.size() / 3;
  if (na == 0 || nb == 0) throw InvalidInput("chamfer: empty cloud");
  std::vector<float> ax(na), ay(na), az(na), d2(na);
  for (std::size_t i = 0; i < na; ++i) ax[i] = a[3 * i], ay[i] = a[3 * i + 1], az[i] = a[3 * i + 2];
  double sum = 0.0;
  const float w = scale * 2.0f / static_cast<float>(nb);
  for (std::size_t j = 0; j < nb; ++j) {
    const float qx = b[3 * j], qy = b[3 * j + 1], qz = b[3 * j + 2];
    for (std::size_t i = 0; i < na; ++i) {
      const float dx = ax[i] - qx, dy = ay[i] - qy, dz = az[i] - qz;
      d2[i] = dx * dx + dy * dy + dz * dz;
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < na; ++i)
      if (d2[i] < d2[best]) best = i;
    sum += d2[best];
    const float gx = w * (qx - ax[best]), gy = w * (qy - ay[best]), gz = w * (qz - az[best]);
    if (grad_b) grad_b[3 * j] += gx, grad_b[3 * j + 1] += gy, grad_b[3 * j + 2] += gz;
    if (grad_a) grad_a[3 * best] -= gx, grad_a[3 * best + 1] -= gy, grad_a[3 * best + 2] -= gz;
  }
  return sum / static_cast<double>(nb);
}

}  // namespace pcadv
