#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ape/eval.hpp"
#include "ape/explain.hpp"
#include "ape/networks.hpp"

namespace ape::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kToolVersion = "1.0.0";

// Bad invocation: reported with exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct GenerateOptions {
  std::string classes = "flange4,flange8";  // comma separated
  std::size_t per_class = 100;
  std::size_t points = 256;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  std::filesystem::path out;
};

struct TrainOptions {
  std::filesystem::path manifest;
  std::string net = "fixed";
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  std::string optimizer = "adam";
  std::uint64_t seed = 0;
  std::filesystem::path out;
};

struct ApeOptions {
  std::size_t lambda = 4;
  std::optional<std::size_t> low_drop;
  std::string weights;  // comma separated, empty means all 1
  std::optional<std::size_t> target;
};

struct ExplainOptions {
  std::filesystem::path model;
  std::filesystem::path cloud;     // either a single cloud ...
  std::filesystem::path manifest;  // ... or a dataset split
  std::string split = "test";
  std::optional<std::size_t> limit;
  std::string method = "ape";
  ApeOptions ape;
  bool export_ply = false;
  std::uint64_t seed = 0;
  std::filesystem::path out;
};

struct EvaluateOptions {
  std::vector<std::filesystem::path> models;
  std::filesystem::path manifest;
  std::string split = "test";
  std::optional<std::size_t> limit;
  std::string methods = "ape,gradients,pcsn";  // "random" adds the control
  std::size_t steps = 11;
  ApeOptions ape;
  std::uint64_t seed = 0;
  std::filesystem::path out;
};

// Each command writes config.json next to its outputs.
std::filesystem::path cmd_generate(const GenerateOptions& opt);
std::vector<EpochMetrics> cmd_train(const TrainOptions& opt, std::ostream& log);
// Returns the heatmap CSV paths in cloud order.
std::vector<std::filesystem::path> cmd_explain(const ExplainOptions& opt);
ComparisonTable cmd_evaluate(const EvaluateOptions& opt, std::ostream& log);

ApeConfig to_ape_config(const ApeOptions& opt);
std::vector<std::string> split_list(const std::string& csv);

// Full command line including the program name. JSON --config values are
// applied first and explicit flags override them.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ape::cli
