#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ape/errors.hpp"
#include "ape/pointcloud.hpp"
#include "text.hpp"

namespace ape {

namespace {

bool parse_triple(std::string_view line, char sep, Point3& out) {
  std::string buf(line);
  if (sep == ',') {
    for (char& c : buf)
      if (c == ',') c = ' ';
  }
  std::istringstream in(buf);
  in.imbue(std::locale::classic());
  std::string tok[3];
  if (!(in >> tok[0] >> tok[1] >> tok[2])) return false;
  std::string extra;
  if (in >> extra) return false;
  for (int d = 0; d < 3; ++d) {
    const char* first = tok[d].data();
    const char* last = first + tok[d].size();
    auto [ptr, ec] = std::from_chars(first, last, out[d]);
    if (ec != std::errc{} || ptr != last || !std::isfinite(out[d])) return false;
  }
  return true;
}

}  // namespace

CloudFormat format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? CloudFormat::csv : CloudFormat::xyz;
}

PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open point cloud '" + path.string() + "'");
  const char sep = format == CloudFormat::csv ? ',' : ' ';
  std::vector<Point3> pts;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = detail::trim(raw);
    if (line.empty()) continue;
    if (format == CloudFormat::csv && pts.empty() && line == "x,y,z") continue;
    Point3 p{};
    if (!parse_triple(line, sep, p)) throw ParseError("expected three reals in '" + std::string(line) + "'", line_no);
    pts.push_back(p);
  }
  if (pts.empty()) throw PreconditionError("point cloud file '" + path.string() + "' has no points");
  return PointCloud(std::move(pts));
}

PointCloud load_cloud(const std::filesystem::path& path) { return load_cloud(path, format_from_path(path)); }

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write point cloud '" + path.string() + "'");
  const char* sep = format == CloudFormat::csv ? "," : " ";
  if (format == CloudFormat::csv) out << "x,y,z\n";
  for (const auto& p : cloud.points())
    out << detail::format_real(p[0]) << sep << detail::format_real(p[1]) << sep << detail::format_real(p[2]) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  save_cloud(cloud, path, format_from_path(path));
}

Rgb heat_color(double value) {
  const double v = std::clamp(value, 0.0, 1.0);
  return Rgb{static_cast<std::uint8_t>(std::lround(255.0 * v)), 0,
             static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - v)))};
}

void export_heatmap_ply(const PointCloud& cloud, const Heatmap& heatmap, const std::filesystem::path& path) {
  if (heatmap.size() != cloud.size()) {
    throw ContractError("heatmap has " + std::to_string(heatmap.size()) + " values for " +
                        std::to_string(cloud.size()) + " points");
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.point(i);
    const Rgb c = heat_color(heatmap[i]);
    out << detail::format_real(static_cast<float>(p[0])) << ' ' << detail::format_real(static_cast<float>(p[1])) << ' '
        << detail::format_real(static_cast<float>(p[2])) << ' ' << int(c.r) << ' ' << int(c.g) << ' ' << int(c.b)
        << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace ape
