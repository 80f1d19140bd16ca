#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ape/pointcloud.hpp"

namespace ape::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    const auto base = std::filesystem::temp_directory_path();
    for (;;) {
      path_ = base / ("ape_test_" + std::to_string(rd()));
      if (std::filesystem::create_directory(path_)) break;
    }
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

struct Ply {
  std::size_t vertex_count = 0;
  std::vector<Point3> points;
  std::vector<Rgb> colors;
};

// Strict reader for the ASCII layout written by export_heatmap_ply. Throws
// std::runtime_error on any deviation.
inline Ply parse_ply(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::vector<std::string> expected = {"ply",
                                             "format ascii 1.0",
                                             "",
                                             "property float x",
                                             "property float y",
                                             "property float z",
                                             "property uchar red",
                                             "property uchar green",
                                             "property uchar blue",
                                             "end_header"};
  Ply ply;
  std::string line;
  for (const auto& want : expected) {
    if (!std::getline(in, line)) throw std::runtime_error("truncated header");
    if (want.empty()) {
      std::istringstream ls(line);
      std::string element, vertex;
      if (!(ls >> element >> vertex >> ply.vertex_count) || element != "element" || vertex != "vertex") {
        throw std::runtime_error("bad element line: " + line);
      }
    } else if (line != want) {
      throw std::runtime_error("expected '" + want + "', got '" + line + "'");
    }
  }
  for (std::size_t i = 0; i < ply.vertex_count; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error("missing vertex row");
    std::istringstream ls(line);
    Point3 p{};
    int r = -1, g = -1, b = -1;
    if (!(ls >> p[0] >> p[1] >> p[2] >> r >> g >> b)) throw std::runtime_error("bad vertex row: " + line);
    for (int c : {r, g, b})
      if (c < 0 || c > 255) throw std::runtime_error("color out of range: " + line);
    ply.points.push_back(p);
    ply.colors.push_back(Rgb{static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)});
  }
  while (std::getline(in, line))
    if (!line.empty()) throw std::runtime_error("trailing content after vertices");
  return ply;
}

}  // namespace ape::test
