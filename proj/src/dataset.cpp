#include "ape/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "ape/errors.hpp"
#include "json.hpp"

namespace ape {

namespace {

constexpr int kManifestVersion = 1;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

std::string cloud_name(const std::string& class_name, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_%04zu", index);
  return class_name + buf;
}

}  // namespace

std::vector<PointCloud> LabeledDataset::subset(Split split) const {
  std::vector<PointCloud> out;
  for (std::size_t i = 0; i < clouds.size(); ++i)
    if (splits[i] == split) out.push_back(clouds[i]);
  return out;
}

std::vector<std::string> LabeledDataset::subset_names(Split split) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < clouds.size(); ++i)
    if (splits[i] == split) out.push_back(names[i]);
  return out;
}

void LabeledDataset::validate() const {
  if (clouds.size() != splits.size()) throw ConfigError("dataset split list does not match cloud count");
  if (names.size() != clouds.size()) throw ConfigError("dataset name list does not match cloud count");
  for (const auto& c : clouds) {
    if (!c.label() || *c.label() >= class_names.size()) throw ConfigError("dataset cloud has an invalid label");
  }
}

std::uint64_t cloud_seed(std::uint64_t seed, std::size_t class_index, std::size_t cloud_index) {
  return splitmix64(splitmix64(splitmix64(seed) ^ class_index) ^ cloud_index);
}

LabeledDataset generate_dataset(const DatasetSpec& spec) {
  if (spec.classes.empty()) throw ConfigError("dataset needs at least one class");
  if (spec.per_class == 0) throw ConfigError("per_class must be positive");
  if (!(spec.test_fraction >= 0.0 && spec.test_fraction < 1.0)) throw ConfigError("test_fraction must lie in [0,1)");

  LabeledDataset data;
  data.seed = spec.seed;
  data.points_per_cloud = spec.points;
  const auto n_test = static_cast<std::size_t>(std::lround(spec.test_fraction * static_cast<double>(spec.per_class)));
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    data.class_names.push_back(to_string(spec.classes[c]));
    std::vector<std::size_t> order(spec.per_class);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(cloud_seed(spec.seed, c, spec.per_class));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Split> splits(spec.per_class, Split::train);
    for (std::size_t k = 0; k < n_test; ++k) splits[order[k]] = Split::test;
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      data.clouds.push_back(make_shape(spec.classes[c], spec.points, cloud_seed(spec.seed, c, i)).with_label(c));
      data.splits.push_back(splits[i]);
      data.names.push_back(cloud_name(data.class_names.back(), i));
    }
  }
  return data;
}

std::filesystem::path write_dataset(const LabeledDataset& data, const std::filesystem::path& dir) {
  data.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  nlohmann::ordered_json files = nlohmann::ordered_json::object();
  for (const auto& name : data.class_names) files[name] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < data.clouds.size(); ++i) {
    const std::string file = data.names[i] + ".xyz";
    save_cloud(data.clouds[i], dir / file, CloudFormat::xyz);
    files[data.class_names[*data.clouds[i].label()]].push_back({{"path", file}, {"split", split_name(data.splits[i])}});
  }

  nlohmann::ordered_json manifest = {
      {"format", "ape-dataset"},
      {"version", kManifestVersion},
      {"seed", data.seed},
      {"points_per_cloud", data.points_per_cloud},
      {"classes", data.class_names},
      {"files", files},
  };
  const auto path = dir / "manifest.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << manifest.dump(2) << '\n';
  return path;
}

LabeledDataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest '" + manifest_path.string() + "'");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest '" + manifest_path.string() + "' is not valid JSON: " + e.what());
  }
  if (manifest.value("version", 0) != kManifestVersion) {
    throw LoadError("unsupported manifest version in '" + manifest_path.string() + "'");
  }
  LabeledDataset data;
  try {
    data.seed = manifest.at("seed").get<std::uint64_t>();
    data.points_per_cloud = manifest.value("points_per_cloud", std::size_t{0});
    data.class_names = manifest.at("classes").get<std::vector<std::string>>();
    const auto base = manifest_path.parent_path();
    for (std::size_t c = 0; c < data.class_names.size(); ++c) {
      for (const auto& entry : manifest.at("files").at(data.class_names[c])) {
        const std::filesystem::path file = entry.at("path").get<std::string>();
        data.clouds.push_back(load_cloud(base / file).with_label(c));
        data.names.push_back(file.stem().string());
        const auto split = entry.at("split").get<std::string>();
        if (split != "train" && split != "test") throw ConfigError("unknown split '" + split + "'");
        data.splits.push_back(split == "train" ? Split::train : Split::test);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed manifest '" + manifest_path.string() + "': " + e.what());
  }
  data.validate();
  return data;
}

}  // namespace ape
