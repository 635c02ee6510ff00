#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "cfr/error.hpp"
#include "cfr/pipeline.hpp"
#include "cfr/tensor_file.hpp"

#ifndef CFR_VERSION
#define CFR_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;

namespace cfr::cli {
namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;

  // gen
  SyntheticSpec spec;
  std::string out;

  // train
  std::string data;
  ModelConfig model;
  TrainOptions training;
  std::uint64_t split_seed = 3;

  // uncertainty / explain / analyze
  std::string model_dir, scores_dir, maps_dir;
  double ridge = kDefaultRidge;
  std::size_t target_class = kNaturalLabel;
  std::string provider = "lrp";
  double epsilon = 1e-6;
  std::size_t threads = 1;
  bool pgm = false;
  std::string thresholds = "10,30,50,100";
  std::size_t bins = 10;
  std::string index;
  bool rank = false;

  // report
  std::string summary;
};

std::string trim(std::string s) {
  s.erase(0, s.find_first_not_of(" \t"));
  s.erase(s.find_last_not_of(" \t\r") + 1);
  return s;
}

std::vector<std::pair<std::string, std::string>> read_config(const std::string& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const Error& e) {
    throw UsageError(std::string("cannot read config: ") + e.what());
  }
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    while (!key.empty() && key[0] == '-') key.erase(0, 1);
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

bool truthy(const std::string& v) { return v == "1" || v == "true" || v == "yes" || v == "on"; }

std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string cell;
  while (std::getline(in, cell, ',')) {
    cell = trim(cell);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (cell.empty() || used != cell.size()) throw ParameterError("bad threshold '" + cell + "'");
    out.push_back(v);
  }
  return out;
}

// Model dims of a loaded dataset.
ModelConfig model_for_data(const Dataset& data, ModelConfig base) {
  if (data.samples.empty()) throw InputError("dataset is empty");
  const Tensor& img = data.samples.front().image;
  base.channels = img.dim(0);
  base.image_size = img.dim(1);
  return base;
}

void check_model_matches(const Dataset& data, const ModelConfig& model) {
  const Tensor& img = data.samples.front().image;
  if (img.dim(0) != model.channels || img.dim(1) != model.image_size || img.dim(2) != model.image_size) {
    throw DimensionError("model expects " + std::to_string(model.channels) + "×" + std::to_string(model.image_size) +
                         "² images");
  }
}

void write_report(const fs::path& dir, const CFRReport& report) {
  const std::string csv = report_csv(report);
  const std::string summary = report_summary_json(report);
  fs::create_directories(dir);
  write_text(dir / "report.csv", csv);
  write_text(dir / "summary.json", summary);
}

std::string explain_meta(const Options& o) {
  return "target_class = " + std::to_string(o.target_class) + "\nprovider = " + o.provider +
         "\nepsilon = " + format_number(o.epsilon) + "\n";
}

int run_gen(const Options& o, std::ostream& out) {
  o.spec.validate();
  const Dataset data = generate_synthetic(o.spec);
  save_dataset(o.out, data, o.spec);
  std::size_t natural = 0;
  for (const auto& s : data.samples) natural += s.label == kNaturalLabel;
  out << "wrote " << data.samples.size() << " images (" << natural << " natural) to " << o.out << "\n";
  return 0;
}

int run_train(const Options& o, std::ostream& out) {
  const Dataset data = load_dataset(o.data);
  RunConfig cfg;
  cfg.model = model_for_data(data, o.model);
  cfg.model.validate();
  if (cfg.model.num_classes != 2) throw ParameterError("the naturalness task has exactly 2 classes");
  if (o.training.batch_size == 0) throw ParameterError("batch size must be at least 1");
  cfg.training = o.training;
  cfg.split_seed = o.split_seed;
  const TrainedModel trained = train_stage(data, cfg);
  save_model(o.out, cfg.model, trained);
  out << "trained " << trained.losses.size() << " steps, final loss " << format_number(trained.losses.back())
      << ", test accuracy " << format_number(trained.test_accuracy) << "\n";
  return 0;
}

int run_uncertainty(const Options& o, std::ostream& out) {
  if (!(o.ridge >= 0.0)) throw ParameterError("ridge lambda must be non-negative");
  const Dataset data = load_dataset(o.data);
  const LoadedModel m = load_model(o.model_dir);
  check_model_matches(data, m.config);
  const ScoredDataset scored = uncertainty_stage(data, m.params, m.config, m.split, o.ridge);
  save_scores(o.out, scored);
  out << "scored " << scored.scores.size() << " samples\n";
  return 0;
}

int run_explain(const Options& o, std::ostream& out) {
  if (!(o.epsilon > 0.0)) throw ParameterError("epsilon must be positive");
  if (o.threads == 0) throw ParameterError("threads must be at least 1");
  const Dataset data = load_dataset(o.data);
  const LoadedModel m = load_model(o.model_dir);
  check_model_matches(data, m.config);
  if (o.target_class >= m.config.num_classes) throw ParameterError("target class out of range");
  ExplainOptions opts;
  opts.target_class = o.target_class;
  opts.provider = o.provider == "attention" ? RelevanceProvider::attention : RelevanceProvider::lrp;
  opts.epsilon = o.epsilon;
  const auto maps = explain_stage(data, m.params, m.config, opts, o.threads);
  save_maps(o.out, maps, o.pgm);
  write_text(fs::path(o.out) / "explain.txt", explain_meta(o));
  out << "wrote " << maps.size() << " relevance maps to " << o.out << "\n";
  return 0;
}

int run_analyze(const Options& o, std::ostream& out) {
  RunConfig cfg;
  cfg.thresholds = parse_thresholds(o.thresholds);
  cfg.ece_bins = o.bins;
  cfg.correlation_mode = o.rank ? CorrelationMode::ranks : CorrelationMode::values;
  cfg.target_class = o.target_class;
  const fs::path meta = fs::path(o.maps_dir) / "explain.txt";
  if (fs::exists(meta)) {
    std::istringstream in(read_text(meta));
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos && trim(line.substr(0, eq)) == "target_class") {
        cfg.target_class = std::stoul(trim(line.substr(eq + 1)));
      }
    }
  }
  if (!o.index.empty()) cfg.external_index = parse_external_index(read_text(o.index), fs::path(o.index).stem().string());
  cfg.validate();

  const Dataset data = load_dataset(o.data);
  const ScoredDataset scored = load_scores(o.scores_dir);
  const auto maps = load_maps(o.maps_dir);
  std::vector<LabelRaster> rasters;
  for (const auto& s : data.samples) rasters.push_back(s.raster);
  const CFRReport report = analyze_stage({&scored, &maps, &rasters, &data.classes}, cfg);
  write_report(o.out, report);
  out << "wrote " << report.thresholds.size() << " threshold blocks to " << o.out << "\n";
  return 0;
}

int run_report(const Options& o, std::ostream& out) {
  fs::path path = o.summary;
  if (fs::is_directory(path)) path /= "summary.json";
  out << report_digest(read_text(path));
  return 0;
}

struct Command {
  CLI::App* app;
  std::function<int(const Options&, std::ostream&)> run;
};

std::vector<Command> build(CLI::App& app, Options& o) {
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", CFR_VERSION);
  app.add_option("--config", o.config, "key = value file; command-line flags win");
  app.require_subcommand(1);

  std::vector<Command> cmds;

  auto* gen = app.add_subcommand("gen", "Generate the synthetic planted-texture dataset");
  gen->add_option("--out", o.out, "Dataset directory")->required();
  gen->add_option("--num-images", o.spec.num_images)->capture_default_str();
  gen->add_option("--image-size", o.spec.image_size)->capture_default_str();
  gen->add_option("--channels", o.spec.channels)->capture_default_str();
  gen->add_option("--land-classes", o.spec.num_land_classes)->capture_default_str();
  gen->add_option("--planted-class", o.spec.planted_class_id)->capture_default_str();
  gen->add_option("--amplitude", o.spec.texture_amplitude)->capture_default_str();
  gen->add_option("--noise", o.spec.noise_sigma)->capture_default_str();
  gen->add_option("--seed", o.spec.seed)->capture_default_str();
  cmds.push_back({gen, run_gen});

  auto* train = app.add_subcommand("train", "Train the transformer on a dataset (80/10/10 split)");
  train->add_option("--data", o.data, "Dataset directory")->required();
  train->add_option("--out", o.out, "Model directory")->required();
  train->add_option("--patch-size", o.model.patch_size)->capture_default_str();
  train->add_option("--blocks", o.model.num_blocks)->capture_default_str();
  train->add_option("--heads", o.model.num_heads)->capture_default_str();
  train->add_option("--embed-dim", o.model.embed_dim)->capture_default_str();
  train->add_option("--mlp-dim", o.model.mlp_dim)->capture_default_str();
  train->add_option("--model-seed", o.model.seed)->capture_default_str();
  train->add_option("--epochs", o.training.epochs)->capture_default_str();
  train->add_option("--batch-size", o.training.batch_size)->capture_default_str();
  train->add_option("--lr", o.training.learning_rate)->capture_default_str();
  train->add_option("--train-seed", o.training.seed)->capture_default_str();
  train->add_option("--split-seed", o.split_seed)->capture_default_str();
  cmds.push_back({train, run_train});

  auto* unc = app.add_subcommand("uncertainty", "Fit the Gaussian discriminant and score every sample");
  unc->add_option("--data", o.data, "Dataset directory")->required();
  unc->add_option("--model", o.model_dir, "Model directory")->required();
  unc->add_option("--out", o.out, "Scores directory")->required();
  unc->add_option("--ridge", o.ridge, "Covariance ridge, relative to mean variance")->capture_default_str();
  cmds.push_back({unc, run_uncertainty});

  auto* exp = app.add_subcommand("explain", "Compute relevance maps for every sample");
  exp->add_option("--data", o.data, "Dataset directory")->required();
  exp->add_option("--model", o.model_dir, "Model directory")->required();
  exp->add_option("--out", o.out, "Maps directory")->required();
  exp->add_option("--target-class", o.target_class)->capture_default_str();
  exp->add_option("--provider", o.provider, "lrp | attention")
      ->check(CLI::IsMember({"lrp", "attention"}))
      ->capture_default_str();
  exp->add_option("--epsilon", o.epsilon)->capture_default_str();
  exp->add_option("--threads", o.threads, "Worker threads; output order is fixed")->capture_default_str();
  exp->add_flag("--pgm", o.pgm, "Also write min-max scaled PGM previews");
  cmds.push_back({exp, run_explain});

  auto* ana = app.add_subcommand("analyze", "Partition by confidence and aggregate relevance per land-cover class");
  ana->add_option("--data", o.data, "Dataset directory")->required();
  ana->add_option("--scores", o.scores_dir, "Scores directory")->required();
  ana->add_option("--maps", o.maps_dir, "Maps directory")->required();
  ana->add_option("--out", o.out, "Report directory")->required();
  ana->add_option("--thresholds", o.thresholds, "Comma-separated percentages")->capture_default_str();
  ana->add_option("--bins", o.bins, "Calibration bins")->capture_default_str();
  ana->add_option("--target-class", o.target_class, "Used when the maps carry no explain.txt");
  ana->add_option("--index", o.index, "Per-class external index file (id,value lines)");
  ana->add_flag("--rank", o.rank, "Correlate average ranks instead of raw values");
  cmds.push_back({ana, run_analyze});

  auto* rep = app.add_subcommand("report", "Print a digest of an analysis summary");
  rep->add_option("--summary", o.summary, "summary.json or the report directory")->required();
  cmds.push_back({rep, run_report});
  return cmds;
}

// Config values are spliced in right after the subcommand, ahead of the user's flags;
// with take-last semantics the flags win.
std::vector<std::string> apply_config(const std::vector<std::string>& args, const std::vector<Command>& cmds) {
  std::string config;
  std::size_t sub_at = args.size();
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else if (std::any_of(cmds.begin(), cmds.end(), [&](const Command& c) { return c.app->get_name() == args[i]; })) {
      sub_at = i;
      break;
    }
  }
  if (config.empty() || sub_at == args.size()) return args;

  const CLI::App* sub = nullptr;
  for (const auto& c : cmds) {
    if (c.app->get_name() == args[sub_at]) sub = c.app;
  }
  std::vector<std::string> injected;
  for (const auto& [key, value] : read_config(config)) {
    const CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (!opt) {
      const bool known = std::any_of(cmds.begin(), cmds.end(),
                                     [&](const Command& c) { return c.app->get_option_no_throw("--" + key); });
      if (!known) throw UsageError("config key '" + key + "' matches no option");
      continue;  // belongs to another stage
    }
    if (opt->get_type_size_max() == 0) {
      if (truthy(value)) injected.push_back("--" + key);
    } else {
      injected.push_back("--" + key + "=" + value);
    }
  }
  std::vector<std::string> out(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(sub_at + 1));
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + static_cast<std::ptrdiff_t>(sub_at + 1), args.end());
  return out;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Confidence-filtered relevance analysis", "cfr"};
  Options o;
  const auto cmds = build(app, o);

  try {
    std::vector<std::string> argv = apply_config(args, cmds);
    std::reverse(argv.begin(), argv.end());
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << CFR_VERSION << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    if (!args.empty()) err << "cfr: " << e.what() << "\n";
    err << app.help();
    return 2;
  } catch (const UsageError& e) {
    err << "cfr: " << e.what() << "\n";
    return 2;
  }

  for (const auto& c : cmds) {
    if (!c.app->parsed()) continue;
    const std::string stage = c.app->get_name();
    try {
      return c.run(o, out);
    } catch (const std::exception& e) {
      err << "cfr: [" << stage << "] " << e.what() << "\n";
      return 1;
    }
  }
  err << app.help();
  return 2;
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace cfr::cli
