#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "ape/errors.hpp"
#include "ape/networks.hpp"
#include "json.hpp"

namespace ape {

namespace {

std::string layer_name(const Network& net, std::size_t l) {
  if (net.kind() == NetworkKind::variable && l + 1 == net.feature_layer_count()) return "offset";
  if (l < net.feature_layer_count()) return "mlp" + std::to_string(l + 1);
  return "fc" + std::to_string(l - net.feature_layer_count() + 1);
}

void write_le(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

double read_le(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw LoadError("checkpoint parameter block is truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_model(const Network& net, const std::filesystem::path& path) {
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    params.push_back({{"name", layer_name(net, l) + ".weight"}, {"shape", {layers[l].in, layers[l].out}}});
    params.push_back({{"name", layer_name(net, l) + ".bias"}, {"shape", {layers[l].out}}});
  }
  nlohmann::ordered_json header = {
      {"format", "ape-checkpoint"},
      {"version", kCheckpointVersion},
      {"architecture", to_string(net.kind())},
      {"num_classes", net.num_classes()},
      {"feature_count", net.feature_count()},
      {"class_names", net.class_names},
      {"dtype", "float64-le"},
      {"parameters", params},
  };
  if (const auto* v = dynamic_cast<const VariableNet*>(&net)) {
    header["grouping"] = {{"ratio", v->grouping().ratio}, {"neighbors", v->grouping().neighbors}};
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out << header.dump() << '\n';
  for (const auto& l : layers) {
    for (double w : l.weight) write_le(out, w);
    for (double b : l.bias) write_le(out, b);
  }
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

std::unique_ptr<Network> load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw LoadError("checkpoint '" + path.string() + "' has no header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw LoadError("checkpoint '" + path.string() + "' header is not JSON");
  }
  if (header.value("format", "") != "ape-checkpoint") throw LoadError("not a checkpoint file: " + path.string());
  const int version = header.value("version", -1);
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }

  std::unique_ptr<Network> net;
  try {
    const auto classes = header.at("num_classes").get<std::size_t>();
    const auto features = header.at("feature_count").get<std::size_t>();
    const auto kind = parse_network_kind(header.at("architecture").get<std::string>());
    if (kind == NetworkKind::fixed) {
      net = std::make_unique<FixedNet>(classes, features);
    } else {
      GroupingConfig g;
      g.ratio = header.at("grouping").at("ratio").get<std::size_t>();
      g.neighbors = header.at("grouping").at("neighbors").get<std::size_t>();
      net = std::make_unique<VariableNet>(classes, g, features);
    }
    net->class_names = header.value("class_names", std::vector<std::string>{});
    const auto& manifest = header.at("parameters");
    auto& layers = net->layers();
    if (manifest.size() != 2 * layers.size()) throw LoadError("checkpoint parameter manifest has the wrong length");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto ws = manifest[2 * l].at("shape").get<std::vector<std::size_t>>();
      const auto bs = manifest[2 * l + 1].at("shape").get<std::vector<std::size_t>>();
      if (ws != std::vector<std::size_t>{layers[l].in, layers[l].out} || bs != std::vector<std::size_t>{layers[l].out}) {
        throw LoadError("checkpoint shape mismatch in layer " + layer_name(*net, l));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed checkpoint header: " + std::string(e.what()));
  } catch (const ConfigError& e) {
    throw LoadError("invalid checkpoint architecture: " + std::string(e.what()));
  }

  for (auto& l : net->layers()) {
    for (double& w : l.weight) w = read_le(in);
    for (double& b : l.bias) b = read_le(in);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw LoadError("checkpoint has trailing bytes");
  return net;
}

}  // namespace ape
