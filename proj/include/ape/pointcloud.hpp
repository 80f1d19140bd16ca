#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ape {

using Point3 = std::array<double, 3>;

// A point cloud as seen by the classifiers. Dropping a point never removes it:
// the point is shifted onto the core (the centroid of the cloud as loaded) and
// its alive flag is cleared, so networks always receive n points.
//
// Values are immutable; drop() and mark_explained() return modified copies.
class PointCloud {
 public:
  explicit PointCloud(std::vector<Point3> points, std::optional<std::size_t> label = std::nullopt);

  std::size_t size() const noexcept { return points_.size(); }
  std::span<const Point3> points() const noexcept { return points_; }
  const Point3& point(std::size_t i) const { return points_.at(i); }
  const Point3& core() const noexcept { return core_; }

  std::optional<std::size_t> label() const noexcept { return label_; }
  PointCloud with_label(std::optional<std::size_t> label) const;

  bool alive(std::size_t i) const { return alive_.at(i) != 0; }
  bool explained(std::size_t i) const { return explained_.at(i) != 0; }
  std::size_t alive_count() const;
  std::size_t unexplained_alive_count() const;

  // Shift the given points to the core. Throws IndexError for out-of-range or
  // already-dropped indices.
  PointCloud drop(std::span<const std::size_t> indices) const;
  PointCloud mark_explained(std::span<const std::size_t> indices) const;

  // Row-major n×3 coordinates.
  std::vector<double> flat() const;

 private:
  std::vector<Point3> points_;
  Point3 core_{};
  std::optional<std::size_t> label_;
  std::vector<std::uint8_t> alive_;
  std::vector<std::uint8_t> explained_;
};

// Per-point relevance aligned to a PointCloud: every value in [0,1], max 1
// unless all zero.
class Heatmap {
 public:
  Heatmap() = default;
  // Validates the codomain; throws ContractError when violated.
  explicit Heatmap(std::vector<double> values);
  // Min-max normalizes raw scores.
  static Heatmap from_raw(std::span<const double> raw);

  std::size_t size() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  bool all_zero() const;

  friend bool operator==(const Heatmap&, const Heatmap&) = default;

 private:
  std::vector<double> values_;
};

// Centroid of the cloud as originally loaded (the drop core).
Point3 centroid(const PointCloud& cloud);
PointCloud drop_points(const PointCloud& cloud, std::span<const std::size_t> indices);

// (v - min) / (max - min); all zeros when max == min.
std::vector<double> minmax_normalize(std::span<const double> values);

// Centers on the centroid and scales the farthest point to norm 1.
PointCloud normalize_unit_sphere(const PointCloud& cloud);

double distance(const Point3& a, const Point3& b);

// ---- synthetic shapes -----------------------------------------------------

enum class ShapeClass { sphere, box, cylinder, flange4, flange8 };

std::string to_string(ShapeClass c);
// Throws ConfigError listing the valid class names.
ShapeClass parse_shape_class(const std::string& name);
std::vector<std::string> shape_class_names();

// Flange geometry: flat annulus with circular holes at equal angular spacing.
struct FlangeGeometry {
  static constexpr double inner_radius = 0.3;
  static constexpr double outer_radius = 1.0;
  static constexpr double hole_radius = 0.12;
  static constexpr double hole_ring_radius = 0.65;
};

std::size_t flange_hole_count(ShapeClass c);
// Hole centers in the z=0 plane of the unnormalized flange frame.
std::vector<Point3> flange_hole_centers(std::size_t holes);

// Uniform surface sample of n points, normalized to the unit sphere.
// Deterministic in (shape, n, seed).
PointCloud make_shape(ShapeClass shape, std::size_t n, std::uint64_t seed);

// ---- file IO --------------------------------------------------------------

enum class CloudFormat { xyz, csv };

CloudFormat format_from_path(const std::filesystem::path& path);
PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format);
PointCloud load_cloud(const std::filesystem::path& path);
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format);
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path);

struct Rgb {
  std::uint8_t r, g, b;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// Blue (0) to red (1) through (128,0,128).
Rgb heat_color(double value);

// ASCII PLY with per-vertex x,y,z (float) and red,green,blue (uchar).
void export_heatmap_ply(const PointCloud& cloud, const Heatmap& heatmap, const std::filesystem::path& path);

}  // namespace ape
