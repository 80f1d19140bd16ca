#include "ape/cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "ape/dataset.hpp"
#include "ape/errors.hpp"
#include "json.hpp"

namespace ape::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

void require_file(const fs::path& path, const char* what) {
  if (path.empty()) throw UsageError(std::string(what) + " path is required");
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " '" + path.string() + "' does not exist");
}

void prepare_out_dir(const fs::path& dir) {
  if (dir.empty()) throw UsageError("--out is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
}

void write_json(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_config(const fs::path& dir, const std::string& command, ordered_json params) {
  ordered_json cfg = {
      {"command", command},
      {"tool_version", kToolVersion},
      {"checkpoint_version", kCheckpointVersion},
      {"parameters", std::move(params)},
  };
  write_json(dir / "config.json", cfg);
}

ordered_json optional_json(const std::optional<std::size_t>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

ordered_json ape_json(const ApeOptions& a) {
  return {{"lambda", a.lambda}, {"low_drop", optional_json(a.low_drop)}, {"weights", a.weights},
          {"target", optional_json(a.target)}};
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw UsageError("unknown split '" + s + "' (valid: train, test)");
}

std::vector<double> parse_weights(const std::string& csv) {
  std::vector<double> out;
  for (const auto& tok : split_list(csv)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError("merge weight '" + tok + "' is not a number");
    }
  }
  return out;
}

struct Clouds {
  std::vector<PointCloud> clouds;
  std::vector<std::string> names;
};

Clouds select_clouds(const LabeledDataset& data, const std::string& split, const std::optional<std::size_t>& limit) {
  const Split s = parse_split(split);
  Clouds c{data.subset(s), data.subset_names(s)};
  if (limit && *limit < c.clouds.size()) {
    c.clouds.erase(c.clouds.begin() + static_cast<std::ptrdiff_t>(*limit), c.clouds.end());
    c.names.resize(*limit);
  }
  if (c.clouds.empty()) throw UsageError("the " + split + " split selects no clouds");
  return c;
}

void check_target(const Network& net, const ApeOptions& a) {
  if (a.target && *a.target >= net.num_classes()) {
    throw UsageError("target class " + std::to_string(*a.target) + " out of range for " +
                     std::to_string(net.num_classes()) + " classes");
  }
}

}  // namespace

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream in(csv);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok.erase(0, tok.find_first_not_of(" \t"));
    tok.erase(tok.find_last_not_of(" \t") + 1);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

ApeConfig to_ape_config(const ApeOptions& opt) {
  ApeConfig cfg;
  cfg.lambda = opt.lambda;
  cfg.low_drop_count = opt.low_drop;
  cfg.weights = parse_weights(opt.weights);
  cfg.target = opt.target;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

// ---- commands -------------------------------------------------------------

fs::path cmd_generate(const GenerateOptions& opt) {
  DatasetSpec spec;
  for (const auto& name : split_list(opt.classes)) spec.classes.push_back(parse_shape_class(name));
  if (spec.classes.empty()) throw UsageError("--classes names no class");
  if (opt.per_class == 0) throw UsageError("--per-class must be positive");
  if (opt.points < 32) throw UsageError("--points must be at least 32");
  spec.per_class = opt.per_class;
  spec.points = opt.points;
  spec.seed = opt.seed;
  spec.test_fraction = opt.test_fraction;

  auto data = generate_dataset(spec);
  prepare_out_dir(opt.out);
  auto manifest = write_dataset(data, opt.out);
  write_config(opt.out, "generate",
               {{"classes", opt.classes},
                {"per_class", opt.per_class},
                {"points", opt.points},
                {"test_fraction", opt.test_fraction},
                {"seed", opt.seed},
                {"out", opt.out.string()}});
  return manifest;
}

std::vector<EpochMetrics> cmd_train(const TrainOptions& opt, std::ostream& log) {
  require_file(opt.manifest, "manifest");
  const auto kind = parse_network_kind(opt.net);
  TrainConfig cfg;
  cfg.epochs = opt.epochs;
  cfg.batch_size = opt.batch_size;
  cfg.step = opt.lr;
  cfg.seed = opt.seed;
  cfg.optimizer = parse_optimizer(opt.optimizer);
  cfg.validate();

  const auto data = load_dataset(opt.manifest);
  auto net = make_network(kind, data.num_classes(), opt.seed);
  net->class_names = data.class_names;
  prepare_out_dir(opt.out);

  const auto start = std::chrono::steady_clock::now();
  auto history = train(*net, data, cfg);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& m : history) {
    log << "epoch " << m.epoch << " loss " << m.loss << " train " << m.train_accuracy << " test " << m.test_accuracy
        << '\n';
  }
  log << "trained in " << seconds << " s\n";

  save_model(*net, opt.out / "model.ckpt");
  ordered_json epochs = ordered_json::array();
  for (const auto& m : history) {
    epochs.push_back({{"epoch", m.epoch},
                      {"loss", m.loss},
                      {"train_accuracy", m.train_accuracy},
                      {"test_accuracy", m.test_accuracy}});
  }
  write_json(opt.out / "metrics.json", {{"network", opt.net},
                                         {"seed", opt.seed},
                                         {"final_test_accuracy", history.back().test_accuracy},
                                         {"epochs", epochs}});
  write_config(opt.out, "train",
               {{"manifest", opt.manifest.string()},
                {"net", opt.net},
                {"epochs", opt.epochs},
                {"batch_size", opt.batch_size},
                {"lr", opt.lr},
                {"optimizer", opt.optimizer},
                {"seed", opt.seed},
                {"out", opt.out.string()}});
  return history;
}

std::vector<fs::path> cmd_explain(const ExplainOptions& opt) {
  require_file(opt.model, "model");
  const auto method = parse_explain_method(opt.method);
  const auto cfg = to_ape_config(opt.ape);
  if (opt.cloud.empty() == opt.manifest.empty()) throw UsageError("give exactly one of --cloud and --manifest");

  Clouds input;
  if (!opt.cloud.empty()) {
    require_file(opt.cloud, "cloud");
    input.clouds.push_back(load_cloud(opt.cloud));
    input.names.push_back(opt.cloud.stem().string());
  } else {
    require_file(opt.manifest, "manifest");
    input = select_clouds(load_dataset(opt.manifest), opt.split, opt.limit);
  }
  const auto net = load_model(opt.model);
  check_target(*net, opt.ape);
  prepare_out_dir(opt.out);

  std::vector<fs::path> written;
  for (std::size_t i = 0; i < input.clouds.size(); ++i) {
    const auto& cloud = input.clouds[i];
    const auto e = explain(*net, cloud, method, cfg);
    const std::string stem = input.names[i] + "_" + to_string(method);
    save_heatmap_csv(cloud, e.heatmap, opt.out / (stem + ".csv"));
    if (opt.export_ply) export_heatmap_ply(cloud, e.heatmap, opt.out / (stem + ".ply"));

    ordered_json meta = {
        {"cloud", input.names[i]},
        {"method", to_string(method)},
        {"network", to_string(net->kind())},
        {"predicted_class", e.predicted},
        {"target_class", e.target},
        {"target_policy", opt.ape.target ? "fixed" : "predicted"},
    };
    if (cloud.label()) meta["true_class"] = *cloud.label();
    if (method == ExplainMethod::ape) {
      meta["lambda"] = cfg.lambda;
      meta["low_drop_count"] = cfg.drop_count(cloud.size());
      meta["weights"] = cfg.weights.empty() ? std::vector<double>(cfg.lambda, 1.0) : cfg.weights;
      meta["m"] = e.inner_iterations.empty() ? 0 : e.inner_iterations.front();
      meta["inner_iterations"] = e.inner_iterations;
      meta["never_dropped"] = e.never_dropped;
    }
    meta["warnings"] = e.warnings;
    write_json(opt.out / (stem + ".json"), meta);
    written.push_back(opt.out / (stem + ".csv"));
  }

  write_config(opt.out, "explain",
               {{"model", opt.model.string()},
                {"cloud", opt.cloud.string()},
                {"manifest", opt.manifest.string()},
                {"split", opt.split},
                {"limit", optional_json(opt.limit)},
                {"method", opt.method},
                {"ape", ape_json(opt.ape)},
                {"export_ply", opt.export_ply},
                {"seed", opt.seed},
                {"out", opt.out.string()}});
  return written;
}

ComparisonTable cmd_evaluate(const EvaluateOptions& opt, std::ostream& log) {
  if (opt.models.empty()) throw UsageError("at least one --model is required");
  for (const auto& m : opt.models) require_file(m, "model");
  require_file(opt.manifest, "manifest");
  if (opt.steps < 2) throw UsageError("--steps must be at least 2, got " + std::to_string(opt.steps));
  const auto method_names = split_list(opt.methods);
  if (method_names.empty()) throw UsageError("--methods names no method");
  for (const auto& m : method_names)
    if (m != "random") parse_explain_method(m);
  const auto cfg = to_ape_config(opt.ape);

  const auto input = select_clouds(load_dataset(opt.manifest), opt.split, opt.limit);
  std::vector<std::unique_ptr<Network>> nets;
  std::vector<std::string> columns;
  for (const auto& path : opt.models) {
    nets.push_back(load_model(path));
    check_target(*nets.back(), opt.ape);
    std::string name = to_string(nets.back()->kind());
    if (std::find(columns.begin(), columns.end(), name) != columns.end()) name = path.stem().string();
    columns.push_back(name);
  }
  prepare_out_dir(opt.out);

  ComparisonTable table;
  for (std::size_t k = 0; k < nets.size(); ++k) {
    std::vector<MethodHeatmaps> heatmaps;
    for (const auto& m : method_names) {
      MethodHeatmaps mh{m, {}};
      for (std::size_t i = 0; i < input.clouds.size(); ++i) {
        if (m == "random") {
          mh.heatmaps.push_back(random_heatmap(input.clouds[i].size(), opt.seed + i));
        } else {
          mh.heatmaps.push_back(explain(*nets[k], input.clouds[i], parse_explain_method(m), cfg).heatmap);
        }
      }
      heatmaps.push_back(std::move(mh));
    }
    table.merge(compare_methods(*nets[k], columns[k], input.clouds, heatmaps, opt.steps));
    log << "evaluated " << columns[k] << " on " << input.clouds.size() << " clouds\n";
  }

  write_json(opt.out / "report.json", report_json(table));
  std::ofstream md(opt.out / "report.md");
  if (!md) throw IoError("cannot write report.md");
  md << report_markdown(table);

  std::vector<std::string> model_paths;
  for (const auto& m : opt.models) model_paths.push_back(m.string());
  write_config(opt.out, "evaluate",
               {{"models", model_paths},
                {"manifest", opt.manifest.string()},
                {"split", opt.split},
                {"limit", optional_json(opt.limit)},
                {"methods", opt.methods},
                {"steps", opt.steps},
                {"ape", ape_json(opt.ape)},
                {"seed", opt.seed},
                {"out", opt.out.string()}});
  return table;
}

// ---- command line ---------------------------------------------------------

namespace {

struct Parsed {
  GenerateOptions gen;
  TrainOptions train;
  ExplainOptions explain;
  EvaluateOptions evaluate;
  std::size_t low_drop = 0, target = 0, limit = 0;
  std::vector<std::string> models;
};

void add_common(CLI::App* sub, std::uint64_t& seed, fs::path& out) {
  sub->add_option("--seed", seed, "Random seed");
  sub->add_option("--out", out, "Output directory")->required();
  sub->add_option("--config", "JSON file with default flag values (flags override it)");
}

void add_ape(CLI::App* sub, ApeOptions& a, Parsed& p) {
  sub->add_option("--lambda", a.lambda, "Outer iterations");
  sub->add_option("--low-drop", p.low_drop, "Low-relevance points dropped per outer iteration");
  sub->add_option("--weights", a.weights, "Comma separated merge weights");
  sub->add_option("--target", p.target, "Explain this class instead of the predicted one");
}

void finish_ape(CLI::App* sub, ApeOptions& a, const Parsed& p) {
  if (sub->count("--low-drop")) a.low_drop = p.low_drop;
  if (sub->count("--target")) a.target = p.target;
}

void build(CLI::App& app, Parsed& p) {
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  auto* gen = app.add_subcommand("generate", "Write a synthetic labeled dataset");
  gen->add_option("--classes", p.gen.classes, "Comma separated shape classes: " + [] {
    std::string s;
    for (const auto& n : shape_class_names()) s += (s.empty() ? "" : ", ") + n;
    return s;
  }());
  gen->add_option("--per-class", p.gen.per_class, "Clouds per class");
  gen->add_option("--points", p.gen.points, "Points per cloud");
  gen->add_option("--test-fraction", p.gen.test_fraction, "Fraction of each class held out");
  add_common(gen, p.gen.seed, p.gen.out);

  auto* tr = app.add_subcommand("train", "Train a classifier");
  tr->add_option("--manifest", p.train.manifest, "Dataset manifest")->required();
  tr->add_option("--net", p.train.net, "fixed or variable");
  tr->add_option("--epochs", p.train.epochs);
  tr->add_option("--batch-size", p.train.batch_size);
  tr->add_option("--lr", p.train.lr, "Step size");
  tr->add_option("--optimizer", p.train.optimizer, "adam or sgd");
  add_common(tr, p.train.seed, p.train.out);

  auto* ex = app.add_subcommand("explain", "Compute heatmaps");
  ex->add_option("--model", p.explain.model, "Checkpoint")->required();
  ex->add_option("--cloud", p.explain.cloud, "Single .xyz or .csv cloud");
  ex->add_option("--manifest", p.explain.manifest, "Dataset manifest");
  ex->add_option("--split", p.explain.split, "train or test");
  ex->add_option("--limit", p.limit, "Use only the first N clouds of the split");
  ex->add_option("--method", p.explain.method, "ape, gradients or pcsn");
  add_ape(ex, p.explain.ape, p);
  ex->add_flag("--export-ply", p.explain.export_ply, "Also write a colored PLY per cloud");
  add_common(ex, p.explain.seed, p.explain.out);

  auto* ev = app.add_subcommand("evaluate", "Point dropping curves and AUC table");
  ev->add_option("--model", p.models, "Checkpoint, repeat for more network columns")->required();
  ev->add_option("--manifest", p.evaluate.manifest, "Dataset manifest")->required();
  ev->add_option("--split", p.evaluate.split, "train or test");
  ev->add_option("--limit", p.limit, "Use only the first N clouds of the split");
  ev->add_option("--methods", p.evaluate.methods, "Comma separated: ape, gradients, pcsn, random");
  ev->add_option("--steps", p.evaluate.steps, "Fractions in the drop grid");
  add_ape(ev, p.evaluate.ape, p);
  add_common(ev, p.evaluate.seed, p.evaluate.out);
}

std::string subcommand_of(const std::vector<std::string>& args) {
  for (std::size_t i = 1; i < args.size(); ++i)
    if (!args[i].starts_with("-")) return args[i];
  return {};
}

std::optional<std::string> config_path(const std::vector<std::string>& args) {
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].starts_with("--config=")) return args[i].substr(9);
  }
  return std::nullopt;
}

bool given(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == flag || a.starts_with(flag + "="); });
}

std::string scalar_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

// Expands a JSON config into flags inserted ahead of the explicit ones.
std::vector<std::string> apply_config(const std::vector<std::string>& args) {
  const auto path = config_path(args);
  if (!path) return args;
  std::ifstream in(*path);
  if (!in) throw UsageError("config file '" + *path + "' does not exist");
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config file '" + *path + "' is not valid JSON: " + e.what());
  }
  if (!cfg.is_object()) throw UsageError("config file must hold a JSON object");

  std::vector<std::string> injected;
  for (const auto& [key, value] : cfg.items()) {
    if (key == "config") continue;
    const std::string flag = "--" + key;
    if (given(args, flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) injected.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& v : value) {
        injected.push_back(flag);
        injected.push_back(scalar_text(v));
      }
    } else if (!value.is_null()) {
      injected.push_back(flag);
      injected.push_back(scalar_text(value));
    }
  }
  const auto sub = subcommand_of(args);
  auto pos = std::find(args.begin() + 1, args.end(), sub);
  if (pos == args.end()) return args;
  std::vector<std::string> out(args.begin(), pos + 1);
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), pos + 1, args.end());
  return out;
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Accumulated piecewise explanations for point cloud classifiers", "ape"};
  Parsed p;
  build(app, p);
  try {
    const auto args = apply_config(raw_args);
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::CallForVersion&) {
      out << kToolVersion << '\n';
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << '\n';
      return kExitUsage;
    }

    if (auto* sub = app.get_subcommand("generate"); sub->parsed()) {
      const auto manifest = cmd_generate(p.gen);
      out << "wrote " << manifest.string() << '\n';
    } else if (auto* sub = app.get_subcommand("train"); sub->parsed()) {
      const auto history = cmd_train(p.train, out);
      out << "final test accuracy " << history.back().test_accuracy << '\n';
    } else if (auto* sub = app.get_subcommand("explain"); sub->parsed()) {
      finish_ape(sub, p.explain.ape, p);
      if (sub->count("--limit")) p.explain.limit = p.limit;
      const auto files = cmd_explain(p.explain);
      out << "wrote " << files.size() << " heatmaps to " << p.explain.out.string() << '\n';
    } else if (auto* sub = app.get_subcommand("evaluate"); sub->parsed()) {
      finish_ape(sub, p.evaluate.ape, p);
      if (sub->count("--limit")) p.evaluate.limit = p.limit;
      p.evaluate.models.assign(p.models.begin(), p.models.end());
      const auto table = cmd_evaluate(p.evaluate, out);
      out << report_markdown(table);
    }
    return kExitOk;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace ape::cli
