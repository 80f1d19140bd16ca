#include <cmath>
#include <numbers>
#include <random>

#include "ape/errors.hpp"
#include "ape/pointcloud.hpp"

namespace ape {

namespace {

constexpr std::array<const char*, 5> kNames = {"sphere", "box", "cylinder", "flange4", "flange8"};

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Point3 sample_sphere(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    Point3 p{normal(rng), normal(rng), normal(rng)};
    const double r = distance(p, Point3{});
    if (r > 1e-12) return {p[0] / r, p[1] / r, p[2] / r};
  }
}

Point3 sample_box(Rng& rng) {
  const int face = std::uniform_int_distribution<int>(0, 5)(rng);
  const double u = uniform(rng, -1.0, 1.0), v = uniform(rng, -1.0, 1.0);
  const double s = face % 2 == 0 ? 1.0 : -1.0;
  switch (face / 2) {
    case 0: return {s, u, v};
    case 1: return {u, s, v};
    default: return {u, v, s};
  }
}

// Radius 1, height 2; lateral surface carries 2/3 of the area.
Point3 sample_cylinder(Rng& rng) {
  const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  if (uniform(rng, 0.0, 1.0) < 2.0 / 3.0) return {std::cos(theta), std::sin(theta), uniform(rng, -1.0, 1.0)};
  const double r = std::sqrt(uniform(rng, 0.0, 1.0));
  const double z = uniform(rng, 0.0, 1.0) < 0.5 ? 1.0 : -1.0;
  return {r * std::cos(theta), r * std::sin(theta), z};
}

bool on_flange(double x, double y, const std::vector<Point3>& holes) {
  const double r = std::hypot(x, y);
  if (r < FlangeGeometry::inner_radius || r > FlangeGeometry::outer_radius) return false;
  for (const auto& h : holes)
    if (std::hypot(x - h[0], y - h[1]) < FlangeGeometry::hole_radius) return false;
  return true;
}

Point3 sample_flange(Rng& rng, const std::vector<Point3>& holes) {
  for (;;) {
    const double x = uniform(rng, -1.0, 1.0), y = uniform(rng, -1.0, 1.0);
    if (on_flange(x, y, holes)) return {x, y, 0.0};
  }
}

}  // namespace

std::string to_string(ShapeClass c) { return kNames[static_cast<std::size_t>(c)]; }

std::vector<std::string> shape_class_names() { return {kNames.begin(), kNames.end()}; }

ShapeClass parse_shape_class(const std::string& name) {
  for (std::size_t i = 0; i < kNames.size(); ++i)
    if (name == kNames[i]) return static_cast<ShapeClass>(i);
  std::string valid;
  for (const char* n : kNames) valid += (valid.empty() ? "" : ", ") + std::string(n);
  throw ConfigError("unknown shape class '" + name + "' (valid: " + valid + ")");
}

std::size_t flange_hole_count(ShapeClass c) {
  switch (c) {
    case ShapeClass::flange4: return 4;
    case ShapeClass::flange8: return 8;
    default: return 0;
  }
}

std::vector<Point3> flange_hole_centers(std::size_t holes) {
  std::vector<Point3> centers;
  for (std::size_t h = 0; h < holes; ++h) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(h) / static_cast<double>(holes);
    centers.push_back({FlangeGeometry::hole_ring_radius * std::cos(a), FlangeGeometry::hole_ring_radius * std::sin(a), 0.0});
  }
  return centers;
}

PointCloud make_shape(ShapeClass shape, std::size_t n, std::uint64_t seed) {
  if (n < 32) throw PreconditionError("make_shape needs n >= 32, got " + std::to_string(n));
  Rng rng(seed);
  const auto holes = flange_hole_centers(flange_hole_count(shape));
  auto sample = [&]() -> Point3 {
    switch (shape) {
      case ShapeClass::sphere: return sample_sphere(rng);
      case ShapeClass::box: return sample_box(rng);
      case ShapeClass::cylinder: return sample_cylinder(rng);
      case ShapeClass::flange4:
      case ShapeClass::flange8: return sample_flange(rng, holes);
    }
    throw ConfigError("unknown shape class");
  };

  // Every shape is centrally symmetric; sampling antipodal pairs keeps the
  // sample centroid on the shape center.
  std::vector<Point3> pts;
  pts.reserve(n);
  while (pts.size() + 1 < n) {
    const Point3 p = sample();
    pts.push_back(p);
    pts.push_back({-p[0], -p[1], -p[2]});
  }
  if (pts.size() < n) pts.push_back(sample());
  return normalize_unit_sphere(PointCloud(std::move(pts)));
}

}  // namespace ape
