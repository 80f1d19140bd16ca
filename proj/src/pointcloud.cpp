#include "ape/pointcloud.hpp"

#include <algorithm>
#include <cmath>

#include "ape/errors.hpp"

namespace ape {

PointCloud::PointCloud(std::vector<Point3> points, std::optional<std::size_t> label)
    : points_(std::move(points)), label_(label) {
  if (points_.empty()) throw PreconditionError("point cloud needs at least one point");
  Point3 sum{};
  for (const auto& p : points_) {
    for (int d = 0; d < 3; ++d) {
      if (!std::isfinite(p[d])) throw PreconditionError("point cloud coordinates must be finite");
      sum[d] += p[d];
    }
  }
  for (double& s : sum) s /= static_cast<double>(points_.size());
  core_ = sum;
  alive_.assign(points_.size(), 1);
  explained_.assign(points_.size(), 0);
}

PointCloud PointCloud::with_label(std::optional<std::size_t> label) const {
  PointCloud out = *this;
  out.label_ = label;
  return out;
}

std::size_t PointCloud::alive_count() const {
  return static_cast<std::size_t>(std::count(alive_.begin(), alive_.end(), 1));
}

std::size_t PointCloud::unexplained_alive_count() const {
  std::size_t count = 0;
  for (std::size_t i = 0; i < size(); ++i) count += alive_[i] && !explained_[i];
  return count;
}

PointCloud PointCloud::drop(std::span<const std::size_t> indices) const {
  PointCloud out = *this;
  for (std::size_t i : indices) {
    if (i >= size()) throw IndexError("drop index " + std::to_string(i) + " out of range for " + std::to_string(size()));
    if (!out.alive_[i]) throw IndexError("point " + std::to_string(i) + " is already dropped");
    out.points_[i] = core_;
    out.alive_[i] = 0;
  }
  return out;
}

PointCloud PointCloud::mark_explained(std::span<const std::size_t> indices) const {
  PointCloud out = *this;
  for (std::size_t i : indices) {
    if (i >= size()) throw IndexError("explained index " + std::to_string(i) + " out of range");
    out.explained_[i] = 1;
  }
  return out;
}

std::vector<double> PointCloud::flat() const {
  std::vector<double> out;
  out.reserve(points_.size() * 3);
  for (const auto& p : points_) out.insert(out.end(), p.begin(), p.end());
  return out;
}

Heatmap::Heatmap(std::vector<double> values) : values_(std::move(values)) {
  double mx = 0.0;
  for (double v : values_) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("heatmap value outside [0,1]");
    mx = std::max(mx, v);
  }
  if (mx != 0.0 && mx != 1.0) throw ContractError("heatmap must have max 1 unless all zero");
}

Heatmap Heatmap::from_raw(std::span<const double> raw) { return Heatmap(minmax_normalize(raw)); }

bool Heatmap::all_zero() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
}

Point3 centroid(const PointCloud& cloud) { return cloud.core(); }

PointCloud drop_points(const PointCloud& cloud, std::span<const std::size_t> indices) {
  return cloud.drop(indices);
}

std::vector<double> minmax_normalize(std::span<const double> values) {
  std::vector<double> out(values.size(), 0.0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = std::clamp((values[i] - *lo) / range, 0.0, 1.0);
  return out;
}

double distance(const Point3& a, const Point3& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  const Point3 c = cloud.core();
  std::vector<Point3> pts(cloud.points().begin(), cloud.points().end());
  double radius = 0.0;
  for (auto& p : pts) {
    for (int d = 0; d < 3; ++d) p[d] -= c[d];
    radius = std::max(radius, distance(p, Point3{}));
  }
  if (radius > 0.0)
    for (auto& p : pts)
      for (double& v : p) v /= radius;
  return PointCloud(std::move(pts), cloud.label());
}

}  // namespace ape
