#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ape/pointcloud.hpp"

namespace ape {

enum class Split { train, test };

// Labeled clouds with a fixed train/test assignment.
struct LabeledDataset {
  std::vector<std::string> class_names;
  std::vector<PointCloud> clouds;  // every cloud carries its label
  std::vector<Split> splits;       // aligned with clouds
  std::vector<std::string> names;  // file stem per cloud, e.g. flange8_0007
  std::uint64_t seed = 0;
  std::size_t points_per_cloud = 0;

  std::size_t num_classes() const { return class_names.size(); }
  std::vector<PointCloud> subset(Split split) const;
  std::vector<std::string> subset_names(Split split) const;
  // Throws ConfigError when labels or splits are inconsistent.
  void validate() const;
};

struct DatasetSpec {
  std::vector<ShapeClass> classes;
  std::size_t per_class = 100;
  std::size_t points = 256;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
};

// Per-cloud seeds are derived from (seed, class position, index), so adding
// classes never perturbs the clouds of existing ones.
std::uint64_t cloud_seed(std::uint64_t seed, std::size_t class_index, std::size_t cloud_index);

LabeledDataset generate_dataset(const DatasetSpec& spec);

// Writes one .xyz file per cloud plus manifest.json; returns the manifest path.
std::filesystem::path write_dataset(const LabeledDataset& data, const std::filesystem::path& dir);
LabeledDataset load_dataset(const std::filesystem::path& manifest);

}  // namespace ape
