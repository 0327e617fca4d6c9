#pragma once

// Synthetic parametric-shape dataset (8 classes), unit-sphere normalisation
// and the "PCDS" dataset file format.
//
//   magic "PCDS" | u32 version (=1) | u32 n_samples | u32 n_points | u32 n_classes
//   per sample: u32 label | n_points x 3 little-endian f32

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "pcadv/binary_io.hpp"
#include "pcadv/geometry.hpp"
#include "pcadv/rng.hpp"

namespace pcadv {

enum class ShapeClass : std::uint32_t {
  sphere = 0,
  cube = 1,
  cylinder = 2,
  cone = 3,
  torus = 4,
  disk = 5,
  pyramid = 6,
  helix = 7,
};

inline constexpr std::size_t kShapeClassCount = 8;

inline constexpr std::array<std::string_view, kShapeClassCount> kShapeNames = {
    "sphere", "cube", "cylinder", "cone", "torus", "disk", "pyramid", "helix"};

/// Canonical-frame dimensions of the generated surfaces.
namespace shape_dims {
inline constexpr double kCylinderRadius = 0.6;
inline constexpr double kCylinderHalfHeight = 1.0;
inline constexpr double kConeRadius = 0.8;
inline constexpr double kConeHeight = 2.0;  // apex at z=+1, base at z=-1
inline constexpr double kTorusMajor = 1.0;  // R = 2r
inline constexpr double kTorusMinor = 0.5;
inline constexpr double kHelixRadius = 0.8;
inline constexpr double kHelixPitch = 0.15;  // z advance per radian
inline constexpr double kHelixTurns = 2.0;
inline constexpr double kHelixTube = 0.15;
}  // namespace shape_dims

namespace detail {

using P3 = std::array<double, 3>;

inline P3 sample_triangle(const P3& a, const P3& b, const P3& c, Rng& rng) {
  const double s = std::sqrt(rng.uniform()), t = rng.uniform();
  P3 p;
  for (int k = 0; k < 3; ++k) p[k] = (1 - s) * a[k] + s * (1 - t) * b[k] + s * t * c[k];
  return p;
}

inline double triangle_area(const P3& a, const P3& b, const P3& c) {
  const P3 u{b[0] - a[0], b[1] - a[1], b[2] - a[2]}, v{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
  const P3 x{u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
  return 0.5 * std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
}

inline P3 sample_surface_point(ShapeClass cls, Rng& rng) {
  using namespace shape_dims;
  constexpr double pi = std::numbers::pi;
  switch (cls) {
    case ShapeClass::sphere: {
      P3 p;
      double n2;
      do {
        p = {rng.normal(), rng.normal(), rng.normal()};
        n2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
      } while (n2 < 1e-12);
      const double n = std::sqrt(n2);
      return {p[0] / n, p[1] / n, p[2] / n};
    }
    case ShapeClass::cube: {
      const auto face = rng.below(6);
      const double u = rng.uniform(-1, 1), v = rng.uniform(-1, 1);
      const double s = face % 2 == 0 ? 1.0 : -1.0;
      switch (face / 2) {
        case 0: return {s, u, v};
        case 1: return {u, s, v};
        default: return {u, v, s};
      }
    }
    case ShapeClass::cylinder: {
      const double r = kCylinderRadius, h = kCylinderHalfHeight;
      const double lateral = 2 * pi * r * 2 * h, cap = pi * r * r;
      const double pick = rng.uniform() * (lateral + 2 * cap);
      if (pick < lateral) {
        const double a = rng.uniform(0, 2 * pi);
        return {r * std::cos(a), r * std::sin(a), rng.uniform(-h, h)};
      }
      const double a = rng.uniform(0, 2 * pi), rr = r * std::sqrt(rng.uniform());
      return {rr * std::cos(a), rr * std::sin(a), pick < lateral + cap ? h : -h};
    }
    case ShapeClass::cone: {
      const double r = kConeRadius, h = kConeHeight;
      const double lateral = pi * r * std::sqrt(r * r + h * h), base = pi * r * r;
      const double a = rng.uniform(0, 2 * pi);
      if (rng.uniform() * (lateral + base) < lateral) {
        const double t = std::sqrt(rng.uniform());  // fraction of the way from apex to base
        return {r * t * std::cos(a), r * t * std::sin(a), 1.0 - h * t};
      }
      const double rr = r * std::sqrt(rng.uniform());
      return {rr * std::cos(a), rr * std::sin(a), 1.0 - h};
    }
    case ShapeClass::torus: {
      const double R = kTorusMajor, r = kTorusMinor;
      const double u = rng.uniform(0, 2 * pi);
      double v;
      do {
        v = rng.uniform(0, 2 * pi);
      } while (rng.uniform() * (R + r) > R + r * std::cos(v));
      const double rho = R + r * std::cos(v);
      return {rho * std::cos(u), rho * std::sin(u), r * std::sin(v)};
    }
    case ShapeClass::disk: {
      const double a = rng.uniform(0, 2 * pi), rr = std::sqrt(rng.uniform());
      return {rr * std::cos(a), rr * std::sin(a), 0.0};
    }
    case ShapeClass::pyramid: {
      const P3 apex{0, 0, 1}, c0{-1, -1, -1}, c1{1, -1, -1}, c2{1, 1, -1}, c3{-1, 1, -1};
      const std::array<std::array<P3, 3>, 6> tris = {{{c0, c1, c2},
                                                      {c0, c2, c3},
                                                      {c0, c1, apex},
                                                      {c1, c2, apex},
                                                      {c2, c3, apex},
                                                      {c3, c0, apex}}};
      std::array<double, 6> area;
      double total = 0;
      for (std::size_t i = 0; i < tris.size(); ++i) total += area[i] = triangle_area(tris[i][0], tris[i][1], tris[i][2]);
      double pick = rng.uniform() * total;
      std::size_t i = 0;
      while (i + 1 < tris.size() && pick >= area[i]) pick -= area[i++];
      return sample_triangle(tris[i][0], tris[i][1], tris[i][2], rng);
    }
    case ShapeClass::helix: {
      const double a = kHelixRadius, b = kHelixPitch, rho = kHelixTube;
      const double speed = std::sqrt(a * a + b * b), curvature = a / (speed * speed);
      const double tmax = kHelixTurns * pi;
      double t, th;
      // Surface element of a tube is proportional to (1 - curvature * rho * cos th).
      do {
        t = rng.uniform(-tmax, tmax);
        th = rng.uniform(0, 2 * pi);
      } while (rng.uniform() * (1 + curvature * rho) > 1 - curvature * rho * std::cos(th));
      const P3 c{a * std::cos(t), a * std::sin(t), b * t};
      const P3 tan{-a * std::sin(t) / speed, a * std::cos(t) / speed, b / speed};
      const P3 nrm{-std::cos(t), -std::sin(t), 0};
      const P3 bin{tan[1] * nrm[2] - tan[2] * nrm[1], tan[2] * nrm[0] - tan[0] * nrm[2],
                   tan[0] * nrm[1] - tan[1] * nrm[0]};
      P3 p;
      for (int k = 0; k < 3; ++k) p[k] = c[k] + rho * (std::cos(th) * nrm[k] + std::sin(th) * bin[k]);
      return p;
    }
  }
  throw InvalidArgument("unknown shape class");
}

inline bool centrally_symmetric(ShapeClass cls) {
  return cls == ShapeClass::sphere || cls == ShapeClass::cube || cls == ShapeClass::cylinder ||
         cls == ShapeClass::torus || cls == ShapeClass::disk;
}

}  // namespace detail

inline ShapeClass shape_class(std::uint32_t class_id) {
  if (class_id >= kShapeClassCount)
    throw InvalidArgument("unknown shape class " + std::to_string(class_id) + " (expected 0..7)");
  return static_cast<ShapeClass>(class_id);
}

/// Area-uniform samples on the class surface in its canonical frame (before
/// rotation, jitter and normalisation). Shapes symmetric under x -> -x are
/// sampled in antipodal pairs so their sample centroid is the shape centre.
inline std::vector<Point> sample_surface(ShapeClass cls, std::size_t n_points, Rng& rng) {
  std::vector<Point> pts;
  pts.reserve(n_points);
  const bool paired = detail::centrally_symmetric(cls);
  while (pts.size() < n_points) {
    const auto p = detail::sample_surface_point(cls, rng);
    pts.push_back({float(p[0]), float(p[1]), float(p[2])});
    if (paired && pts.size() < n_points) pts.push_back({float(-p[0]), float(-p[1]), float(-p[2])});
  }
  return pts;
}

/// Centroid to the origin, farthest point at distance 1.
inline PointCloud normalize(const PointCloud& x) {
  double c[3] = {0, 0, 0};
  for (const auto& p : x)
    for (int k = 0; k < 3; ++k) c[k] += p[k];
  for (double& v : c) v /= static_cast<double>(x.size());
  double max_d2 = 0;
  for (const auto& p : x) {
    double d2 = 0;
    for (int k = 0; k < 3; ++k) d2 += (p[k] - c[k]) * (p[k] - c[k]);
    max_d2 = std::max(max_d2, d2);
  }
  if (!(max_d2 > 1e-24)) throw InvalidInput("cannot normalize a degenerate cloud (all points identical)");
  const double inv = 1.0 / std::sqrt(max_d2);
  std::vector<Point> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    for (int k = 0; k < 3; ++k) out[i][k] = static_cast<float>((x[i][k] - c[k]) * inv);
  return PointCloud(std::move(out));
}

/// Surface sample of a class, randomly rotated about z, jittered by isotropic
/// Gaussian noise of scale `noise_sigma`, then normalised.
inline PointCloud generate_shape(std::uint32_t class_id, std::size_t n_points, std::uint64_t seed,
                                 double noise_sigma) {
  const ShapeClass cls = shape_class(class_id);
  if (n_points < 2) throw InvalidArgument("generate_shape needs at least 2 points");
  Rng rng(seed);
  auto pts = sample_surface(cls, n_points, rng);
  const double angle = rng.uniform(0, 2 * std::numbers::pi);
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (auto& p : pts) {
    const double x = ca * p[0] - sa * p[1], y = sa * p[0] + ca * p[1];
    p = {float(x), float(y), p[2]};
  }
  if (noise_sigma > 0)
    for (auto& p : pts)
      for (auto& c : p) c = static_cast<float>(c + noise_sigma * rng.normal());
  return normalize(PointCloud(std::move(pts)));
}

// ---------------------------------------------------------------------------

enum class Split { train, test };

struct Sample {
  PointCloud cloud;
  std::uint32_t label;
};

struct LabeledDataset {
  std::vector<Sample> samples;
  std::size_t n_classes = 0;
  std::size_t n_points = 0;
  Split split = Split::train;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  void validate() const {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].label >= n_classes)
        throw InvalidInput("sample " + std::to_string(i) + " has label " + std::to_string(samples[i].label) +
                           " >= n_classes " + std::to_string(n_classes));
      if (samples[i].cloud.size() != n_points)
        throw InvalidInput("sample " + std::to_string(i) + " has " + std::to_string(samples[i].cloud.size()) +
                           " points, expected " + std::to_string(n_points));
    }
  }
};

struct DatasetSpec {
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 50;
  std::size_t n_points = 256;
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;
};

/// Seed of the i-th generated sample of a class in a split. Train and test
/// draw from disjoint halves of the seed space (top bit).
inline std::uint64_t sample_seed(std::uint64_t base, Split split, std::uint32_t class_id, std::size_t index) {
  const std::uint64_t h = SeedHasher(base).add(std::uint64_t{class_id}).add(std::uint64_t{index}).value();
  return (h >> 1) | (split == Split::test ? (1ULL << 63) : 0ULL);
}

/// Generates train_per_class / test_per_class samples of each of the 8 classes. Samples are
/// interleaved by class (0,1,...,7,0,1,...) so any prefix is balanced.
inline LabeledDataset make_dataset(const DatasetSpec& spec, Split split) {
  LabeledDataset d{{}, kShapeClassCount, spec.n_points, split};
  const std::size_t per_class = split == Split::train ? spec.train_per_class : spec.test_per_class;
  d.samples.reserve(per_class * kShapeClassCount);
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::uint32_t c = 0; c < kShapeClassCount; ++c)
      d.samples.push_back(
          {generate_shape(c, spec.n_points, sample_seed(spec.seed, split, c, i), spec.noise_sigma), c});
  return d;
}

inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const LabeledDataset& d, const std::string& path) {
  d.validate();
  io::ByteWriter w;
  w.bytes("PCDS");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(d.samples.size()));
  w.u32(static_cast<std::uint32_t>(d.n_points));
  w.u32(static_cast<std::uint32_t>(d.n_classes));
  for (const auto& s : d.samples) {
    w.u32(s.label);
    for (const auto& p : s.cloud)
      for (float c : p) w.f32(c);
  }
  w.write_file(path);
}

inline LabeledDataset parse_dataset(io::ByteReader& r, Split split = Split::test) {
  if (r.bytes(4, "magic") != "PCDS") throw ParseError("bad magic: expected 'PCDS'", 0);
  if (const auto v = r.u32("version"); v != kDatasetVersion)
    throw ParseError("unsupported dataset version " + std::to_string(v), 4);
  LabeledDataset d;
  d.split = split;
  const auto n_samples = r.u32("sample count");
  d.n_points = r.u32("point count");
  d.n_classes = r.u32("class count");
  if (d.n_points == 0) throw ParseError("dataset declares zero points per sample", 12);
  d.samples.reserve(n_samples);
  for (std::uint32_t i = 0; i < n_samples; ++i) {
    const std::size_t start = r.offset();
    const std::size_t need = 4 + 12 * d.n_points;
    if (r.remaining() < need)
      throw ParseError("truncated sample " + std::to_string(i) + ": needs " + std::to_string(need) +
                           " bytes, " + std::to_string(r.remaining()) + " remain",
                       start);
    const auto label = r.u32("label");
    if (label >= d.n_classes)
      throw ParseError("sample " + std::to_string(i) + " label " + std::to_string(label) + " out of range", start);
    std::vector<Point> pts(d.n_points);
    for (auto& p : pts)
      for (auto& c : p) c = r.f32("coordinates");
    if (!detail::all_finite(pts)) throw ParseError("sample " + std::to_string(i) + " has non-finite coordinates", start);
    d.samples.push_back({PointCloud(std::move(pts)), label});
  }
  return d;
}

inline LabeledDataset load_dataset(const std::string& path, Split split = Split::test) {
  auto r = io::ByteReader::from_file(path);
  return parse_dataset(r, split);
}

}  // namespace pcadv
