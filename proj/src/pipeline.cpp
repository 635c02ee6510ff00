#include "cfr/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <exception>
#include <map>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cfr/error.hpp"
#include "cfr/tensor_file.hpp"

namespace cfr {

namespace {

template <class F>
auto run_stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::string index_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& what) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(what + ": expected 'key = value', got '" + line + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

std::uint64_t get_uint(const std::map<std::string, std::string>& kv, const std::string& key, const std::string& what) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw FormatError(what + ": missing key '" + key + "'");
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw FormatError(what + ": bad value for '" + key + "'");
  }
}

Tensor index_tensor(const std::vector<std::size_t>& idx) {
  // A zero-length split cannot be stored (extents are positive), so keep a count prefix.
  std::vector<double> v;
  v.push_back(static_cast<double>(idx.size()));
  for (auto i : idx) v.push_back(static_cast<double>(i));
  return Tensor::vector(std::move(v));
}

std::vector<std::size_t> indices_from(const Tensor& t) {
  const auto n = static_cast<std::size_t>(t[0]);
  if (t.size() != n + 1) throw CorruptionError("split index list has the wrong length");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<std::size_t>(t[i + 1]));
  return out;
}

const char* mode_name(CorrelationMode m) { return m == CorrelationMode::ranks ? "ranks" : "values"; }

}  // namespace

// ---------------------------------------------------------------- config

void RunConfig::validate() const {
  data.validate();
  model.validate();
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ParameterError(msg);
  };
  need(model.channels == data.channels && model.image_size == data.image_size,
       "model channels/image_size must match the dataset");
  need(model.num_classes == 2, "the naturalness task has exactly 2 classes");
  need(target_class < model.num_classes, "target class out of range");
  need(!thresholds.empty(), "at least one threshold is required");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    need(thresholds[i] > 0.0 && thresholds[i] <= 100.0, "thresholds must lie in (0, 100]");
    need(i == 0 || thresholds[i] > thresholds[i - 1], "thresholds must be strictly increasing");
  }
  need(ece_bins >= 1, "ece bins must be at least 1");
  need(lrp_epsilon > 0.0, "lrp epsilon must be positive");
  need(ridge_lambda >= 0.0, "ridge lambda must be non-negative");
  need(threads >= 1, "threads must be at least 1");
  need(training.batch_size >= 1, "batch size must be at least 1");
}

ModelConfig model_config_for(const SyntheticSpec& spec, ModelConfig base) {
  base.channels = spec.channels;
  base.image_size = spec.image_size;
  return base;
}

// ---------------------------------------------------------------- stages

TrainedModel train_stage(const Dataset& data, const RunConfig& config) {
  TrainedModel out;
  out.split = split(data.samples.size(), 0.8, 0.1, 0.1, config.split_seed);
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  for (auto i : out.split.train) {
    images.push_back(data.samples[i].image);
    labels.push_back(data.samples[i].label);
  }
  auto result = train(images, labels, config.model, config.training);
  out.params = std::move(result.params);
  out.losses = std::move(result.losses);

  std::size_t correct = 0;
  for (auto i : out.split.test) {
    const auto fwd = forward(data.samples[i].image, out.params, config.model);
    const auto& l = fwd.logits;
    const std::size_t pred =
        static_cast<std::size_t>(std::max_element(l.data().begin(), l.data().end()) - l.data().begin());
    correct += pred == data.samples[i].label;
  }
  out.test_accuracy = out.split.test.empty() ? 0.0
                                             : static_cast<double>(correct) / static_cast<double>(out.split.test.size());
  return out;
}

ScoredDataset uncertainty_stage(const Dataset& data, const ModelParams& params, const ModelConfig& model,
                                const SplitIndices& split_idx, double ridge_lambda) {
  const std::size_t N = data.samples.size(), d = model.embed_dim, K = model.num_classes;
  ScoredDataset out;
  out.probabilities = Tensor({N, K});
  out.split_of.assign(N, "");
  for (auto i : split_idx.train) out.split_of.at(i) = "train";
  for (auto i : split_idx.val) out.split_of.at(i) = "val";
  for (auto i : split_idx.test) out.split_of.at(i) = "test";

  Tensor embeddings({N, d});
  for (std::size_t i = 0; i < N; ++i) {
    const auto fwd = forward(data.samples[i].image, params, model);
    for (std::size_t j = 0; j < d; ++j) embeddings(i, j) = fwd.cache.cls_embedding[j];
    const Tensor p = softmax(fwd.logits);
    for (std::size_t k = 0; k < K; ++k) out.probabilities(i, k) = p[k];
    out.labels.push_back(data.samples[i].label);
    out.predicted.push_back(
        static_cast<std::size_t>(std::max_element(p.data().begin(), p.data().end()) - p.data().begin()));
  }

  Tensor train_emb({split_idx.train.size(), d});
  std::vector<std::size_t> train_labels;
  for (std::size_t r = 0; r < split_idx.train.size(); ++r) {
    const std::size_t i = split_idx.train[r];
    for (std::size_t j = 0; j < d; ++j) train_emb(r, j) = embeddings(i, j);
    train_labels.push_back(data.samples[i].label);
  }
  out.discriminant = fit(train_emb, train_labels, K, ridge_lambda);
  for (std::size_t i = 0; i < N; ++i) out.scores.push_back(uncertainty(out.discriminant, embeddings.row(i), i));
  return out;
}

std::vector<RelevanceMap> explain_stage(const Dataset& data, const ModelParams& params, const ModelConfig& model,
                                        const ExplainOptions& options, std::size_t threads) {
  const std::size_t N = data.samples.size();
  std::vector<RelevanceMap> maps(N);
  threads = std::max<std::size_t>(1, std::min(threads, N));
  std::vector<std::exception_ptr> errors(threads);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < N; i += threads) maps[i] = explain(data.samples[i].image, params, model, options).map;
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return maps;
}

CFRReport analyze_stage(const AnalysisInputs& in, const RunConfig& config) {
  if (!in.scored || !in.maps || !in.rasters || !in.classes) throw InputError("analyze: missing inputs");
  const ScoredDataset& scored = *in.scored;
  const std::size_t N = scored.scores.size();
  if (in.maps->size() != N || in.rasters->size() != N) {
    throw InputError("analyze: scores, maps and rasters cover different sample counts");
  }

  CFRReport report;
  report.num_samples = N;
  report.target_class = config.target_class;
  report.classes = *in.classes;
  report.ece_bins = config.ece_bins;
  report.correlation_mode = config.correlation_mode;
  if (config.external_index) report.index_name = config.external_index->name;

  // Calibration on the held-out test rows.
  std::vector<std::size_t> test_rows;
  for (std::size_t i = 0; i < N; ++i) {
    if (scored.split_of[i] == "test") test_rows.push_back(i);
  }
  if (test_rows.empty()) throw InputError("analyze: no test samples to calibrate on");
  const std::size_t K = scored.probabilities.dim(1);
  Tensor test_probs({test_rows.size(), K});
  std::vector<std::size_t> test_labels;
  std::size_t correct = 0;
  for (std::size_t r = 0; r < test_rows.size(); ++r) {
    for (std::size_t k = 0; k < K; ++k) test_probs(r, k) = scored.probabilities(test_rows[r], k);
    test_labels.push_back(scored.labels[test_rows[r]]);
    correct += scored.predicted[test_rows[r]] == scored.labels[test_rows[r]];
  }
  report.ece = ece(test_probs, test_labels, config.ece_bins);
  report.test_accuracy = static_cast<double>(correct) / static_cast<double>(test_rows.size());

  const auto ranked = rank_by_confidence(scored.scores);
  const auto subsets = partition(ranked, config.thresholds);

  std::map<std::size_t, ClassAggregates> per_image;
  for (auto id : subsets.back().sample_ids) {
    check_raster_classes((*in.rasters)[id], *in.classes);
    per_image.emplace(id, aggregate_by_class((*in.maps)[id], (*in.rasters)[id]));
  }

  for (const auto& subset : subsets) {
    ThresholdResult tr;
    tr.threshold = subset.threshold;
    tr.sample_ids = subset.sample_ids;
    tr.profile = profile(subset, per_image);
    try {
      tr.entropy = relevance_entropy(tr.profile);
    } catch (const DegenerateDistributionError&) {
    }
    if (config.external_index) {
      try {
        tr.pearson = pearson(tr.profile, *config.external_index, config.correlation_mode);
      } catch (const UndefinedCorrelationError&) {
      }
    }
    report.thresholds.push_back(std::move(tr));
  }
  return report;
}

CFRReport run_pipeline(const RunConfig& config) {
  run_stage("config", [&] {
    config.validate();
    return 0;
  });
  const Dataset data = run_stage("gen", [&] { return generate_synthetic(config.data); });
  const TrainedModel trained = run_stage("train", [&] { return train_stage(data, config); });
  const ScoredDataset scored = run_stage("uncertainty", [&] {
    return uncertainty_stage(data, trained.params, config.model, trained.split, config.ridge_lambda);
  });
  const std::vector<RelevanceMap> maps = run_stage("explain", [&] {
    ExplainOptions opts{config.target_class, config.provider, config.lrp_epsilon};
    return explain_stage(data, trained.params, config.model, opts, config.threads);
  });
  return run_stage("analyze", [&] {
    std::vector<LabelRaster> rasters;
    for (const auto& s : data.samples) rasters.push_back(s.raster);
    return analyze_stage({&scored, &maps, &rasters, &data.classes}, config);
  });
}

// ---------------------------------------------------------------- report rendering

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string report_csv(const CFRReport& report) {
  std::string out = "threshold,class_id,class_name,mean_relevance,total_pixels\n";
  for (const auto& tr : report.thresholds) {
    for (const auto& [cls, r] : tr.profile.classes) {
      const auto it = report.classes.find(cls);
      const std::string name = it == report.classes.end() ? "class_" + std::to_string(cls) : it->second;
      out += format_number(tr.threshold) + "," + std::to_string(cls) + "," + name + "," +
             format_number(r.mean_relevance) + "," + std::to_string(r.total_pixels) + "\n";
    }
  }
  return out;
}

std::string report_summary_json(const CFRReport& report) {
  nlohmann::ordered_json j;
  j["num_samples"] = report.num_samples;
  j["target_class"] = report.target_class;
  j["test_accuracy"] = report.test_accuracy;
  j["ece"] = report.ece;
  j["ece_bins"] = report.ece_bins;
  if (!report.index_name.empty()) {
    j["external_index"] = report.index_name;
    j["correlation_mode"] = mode_name(report.correlation_mode);
  }
  nlohmann::ordered_json classes = nlohmann::ordered_json::object();
  for (const auto& [id, name] : report.classes) classes[std::to_string(id)] = name;
  j["classes"] = classes;
  nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
  for (const auto& tr : report.thresholds) {
    nlohmann::ordered_json b;
    b["threshold"] = tr.threshold;
    b["subset_size"] = tr.sample_ids.size();
    b["entropy"] = tr.entropy ? nlohmann::ordered_json(*tr.entropy) : nlohmann::ordered_json(nullptr);
    if (!report.index_name.empty()) {
      b["pearson"] = tr.pearson ? nlohmann::ordered_json(*tr.pearson) : nlohmann::ordered_json(nullptr);
    }
    nlohmann::ordered_json means = nlohmann::ordered_json::object();
    for (const auto& [cls, r] : tr.profile.classes) means[std::to_string(cls)] = r.mean_relevance;
    b["mean_relevance"] = means;
    b["sample_ids"] = tr.sample_ids;
    blocks.push_back(b);
  }
  j["thresholds"] = blocks;
  return j.dump(2) + "\n";
}

std::string report_digest(const std::string& summary_json) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(summary_json);
  } catch (const std::exception& e) {
    throw FormatError(std::string("summary is not valid JSON: ") + e.what());
  }
  std::ostringstream out;
  char line[256];
  try {
    out << "CFR report: " << j.at("num_samples").get<std::size_t>() << " samples, target class "
        << j.at("target_class").get<std::size_t>() << "\n";
    std::snprintf(line, sizeof line, "test accuracy %.4f, ECE %.4f (%zu bins)\n", j.at("test_accuracy").get<double>(),
                  j.at("ece").get<double>(), j.at("ece_bins").get<std::size_t>());
    out << line;
    const auto& classes = j.at("classes");
    const bool has_index = j.contains("external_index");
    if (has_index) {
      out << "external index: " << j["external_index"].get<std::string>() << " ("
          << j.at("correlation_mode").get<std::string>() << ")\n";
    }
    out << "\n";
    for (const auto& b : j.at("thresholds")) {
      std::snprintf(line, sizeof line, "top %g%%: %zu samples", b.at("threshold").get<double>(),
                    b.at("subset_size").get<std::size_t>());
      out << line;
      if (!b.at("entropy").is_null()) {
        std::snprintf(line, sizeof line, ", entropy %.4f nats", b["entropy"].get<double>());
        out << line;
      }
      if (has_index && !b.at("pearson").is_null()) {
        std::snprintf(line, sizeof line, ", pearson %.4f", b["pearson"].get<double>());
        out << line;
      }
      out << "\n";
      std::string top_name;
      double top = -1.0;
      for (const auto& [id, v] : b.at("mean_relevance").items()) {
        const std::string name = classes.contains(id) ? classes[id].get<std::string>() : id;
        std::snprintf(line, sizeof line, "  %-12s %.6g\n", name.c_str(), v.get<double>());
        out << line;
        if (v.get<double>() > top) {
          top = v.get<double>();
          top_name = name;
        }
      }
      if (!top_name.empty()) out << "  most relevant: " << top_name << "\n";
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("summary is missing fields: ") + e.what());
  }
  return out.str();
}

// ---------------------------------------------------------------- artifacts

void save_dataset(const std::filesystem::path& dir, const Dataset& data, const SyntheticSpec& spec) {
  if (data.samples.empty()) throw InputError("dataset is empty");
  const auto& first = data.samples.front().image.dims();
  std::vector<std::size_t> dims = {data.samples.size()};
  dims.insert(dims.end(), first.begin(), first.end());
  Tensor images(dims);
  Tensor labels({data.samples.size()});
  const std::size_t stride = data.samples.front().image.size();
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& img = data.samples[i].image;
    if (img.dims() != first) throw DimensionError("dataset images differ in shape");
    std::copy(img.data().begin(), img.data().end(), images.data().begin() + static_cast<std::ptrdiff_t>(i * stride));
    labels[i] = static_cast<double>(data.samples[i].label);
  }
  for (const auto& s : data.samples) check_raster_classes(s.raster, data.classes);

  std::filesystem::create_directories(dir / "rasters");
  std::vector<NamedTensor> entries = {{"images", std::move(images)}, {"labels", std::move(labels)}};
  write_tensors(dir / "images.cfrt", entries);
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    write_raster(dir / "rasters" / (index_name(i) + ".lbl"), data.samples[i].raster);
  }
  write_text(dir / "classes.txt", encode_manifest(data.classes));
  std::ostringstream s;
  s << "num_images = " << spec.num_images << "\n"
    << "image_size = " << spec.image_size << "\n"
    << "channels = " << spec.channels << "\n"
    << "num_land_classes = " << spec.num_land_classes << "\n"
    << "planted_class_id = " << spec.planted_class_id << "\n"
    << "texture_amplitude = " << format_number(spec.texture_amplitude) << "\n"
    << "noise_sigma = " << format_number(spec.noise_sigma) << "\n"
    << "seed = " << spec.seed << "\n";
  write_text(dir / "spec.txt", s.str());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto entries = read_tensors(dir / "images.cfrt");
  const Tensor& images = find_tensor(entries, "images");
  const Tensor& labels = find_tensor(entries, "labels");
  if (images.rank() != 4 || labels.rank() != 1 || labels.size() != images.dim(0)) {
    throw FormatError("images.cfrt: expected images N×C×S×S and labels N");
  }
  Dataset ds;
  ds.classes = parse_manifest(read_text(dir / "classes.txt"));
  const std::size_t N = images.dim(0), stride = images.size() / N;
  for (std::size_t i = 0; i < N; ++i) {
    Sample s;
    s.image = Tensor({images.dim(1), images.dim(2), images.dim(3)},
                     std::vector<double>(images.data().begin() + static_cast<std::ptrdiff_t>(i * stride),
                                         images.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * stride)));
    s.label = static_cast<std::size_t>(labels[i]);
    if (s.label > kNaturalLabel) throw FormatError("images.cfrt: label out of range");
    s.raster = read_raster(dir / "rasters" / (index_name(i) + ".lbl"));
    if (s.raster.width != images.dim(3) || s.raster.height != images.dim(2)) {
      throw DimensionError("raster " + index_name(i) + " does not match its image");
    }
    check_raster_classes(s.raster, ds.classes);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::string model_config_text(const ModelConfig& c) {
  std::ostringstream s;
  s << "channels = " << c.channels << "\n"
    << "image_size = " << c.image_size << "\n"
    << "patch_size = " << c.patch_size << "\n"
    << "num_blocks = " << c.num_blocks << "\n"
    << "num_heads = " << c.num_heads << "\n"
    << "embed_dim = " << c.embed_dim << "\n"
    << "mlp_dim = " << c.mlp_dim << "\n"
    << "num_classes = " << c.num_classes << "\n"
    << "seed = " << c.seed << "\n";
  return s.str();
}

ModelConfig parse_model_config(const std::string& text) {
  const auto kv = parse_key_values(text, "model.txt");
  ModelConfig c;
  c.channels = get_uint(kv, "channels", "model.txt");
  c.image_size = get_uint(kv, "image_size", "model.txt");
  c.patch_size = get_uint(kv, "patch_size", "model.txt");
  c.num_blocks = get_uint(kv, "num_blocks", "model.txt");
  c.num_heads = get_uint(kv, "num_heads", "model.txt");
  c.embed_dim = get_uint(kv, "embed_dim", "model.txt");
  c.mlp_dim = get_uint(kv, "mlp_dim", "model.txt");
  c.num_classes = get_uint(kv, "num_classes", "model.txt");
  c.seed = get_uint(kv, "seed", "model.txt");
  c.validate();
  return c;
}

void save_model(const std::filesystem::path& dir, const ModelConfig& model, const TrainedModel& trained) {
  check_params(trained.params, model);
  const auto named = to_named_tensors(trained.params);
  std::string manifest;
  for (const auto& nt : named) {
    manifest += nt.name;
    for (std::size_t k = 0; k < nt.tensor.rank(); ++k) manifest += (k ? "x" : " ") + std::to_string(nt.tensor.dim(k));
    manifest += "\n";
  }
  std::string log = "step,loss\n";
  for (std::size_t i = 0; i < trained.losses.size(); ++i) {
    log += std::to_string(i) + "," + format_number(trained.losses[i]) + "\n";
  }
  std::vector<NamedTensor> split_entries = {{"train", index_tensor(trained.split.train)},
                                            {"val", index_tensor(trained.split.val)},
                                            {"test", index_tensor(trained.split.test)}};

  std::filesystem::create_directories(dir);
  write_tensors(dir / "params.cfrt", named);
  write_text(dir / "params.manifest", manifest);
  write_text(dir / "model.txt", model_config_text(model));
  write_tensors(dir / "split.cfrt", split_entries);
  write_text(dir / "train_log.csv", log);
}

LoadedModel load_model(const std::filesystem::path& dir) {
  LoadedModel m;
  m.config = parse_model_config(read_text(dir / "model.txt"));
  m.params = from_named_tensors(read_tensors(dir / "params.cfrt"), m.config);
  const auto split_entries = read_tensors(dir / "split.cfrt");
  m.split.train = indices_from(find_tensor(split_entries, "train"));
  m.split.val = indices_from(find_tensor(split_entries, "val"));
  m.split.test = indices_from(find_tensor(split_entries, "test"));
  return m;
}

void save_scores(const std::filesystem::path& dir, const ScoredDataset& scored) {
  const GaussianDiscriminant& gd = scored.discriminant;
  std::vector<NamedTensor> entries = {{"class_means", gd.class_means},
                                      {"shared_covariance", gd.shared_covariance},
                                      {"cholesky_factor", gd.cholesky_factor},
                                      {"ridge_lambda", Tensor::vector({gd.ridge_lambda})}};
  const std::string meta = std::to_string(gd.embed_dim) + " " + std::to_string(gd.num_classes) + " " +
                           format_number(gd.ridge_lambda) + "\n";
  const std::size_t K = scored.probabilities.dim(1);
  std::string csv = "sample_id,split,label,predicted,u,nearest_class";
  for (std::size_t k = 0; k < K; ++k) csv += ",p_" + std::to_string(k);
  csv += "\n";
  for (std::size_t i = 0; i < scored.scores.size(); ++i) {
    const auto& s = scored.scores[i];
    csv += std::to_string(s.sample_id) + "," + scored.split_of[i] + "," + std::to_string(scored.labels[i]) + "," +
           std::to_string(scored.predicted[i]) + "," + format_number(s.u) + "," + std::to_string(s.nearest_class);
    for (std::size_t k = 0; k < K; ++k) csv += "," + format_number(scored.probabilities(i, k));
    csv += "\n";
  }
  std::filesystem::create_directories(dir);
  write_tensors(dir / "ddu.cfrt", entries);
  write_text(dir / "ddu.txt", meta);
  write_text(dir / "scores.csv", csv);
}

ScoredDataset load_scores(const std::filesystem::path& dir) {
  ScoredDataset out;
  const auto entries = read_tensors(dir / "ddu.cfrt");
  out.discriminant.class_means = find_tensor(entries, "class_means");
  out.discriminant.shared_covariance = find_tensor(entries, "shared_covariance");
  out.discriminant.cholesky_factor = find_tensor(entries, "cholesky_factor");
  out.discriminant.ridge_lambda = find_tensor(entries, "ridge_lambda")[0];
  out.discriminant.num_classes = out.discriminant.class_means.dim(0);
  out.discriminant.embed_dim = out.discriminant.class_means.dim(1);

  std::istringstream in(read_text(dir / "scores.csv"));
  std::string line;
  if (!std::getline(in, line)) throw FormatError("scores.csv is empty");
  const std::size_t K = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) - 5;
  std::vector<std::vector<double>> probs;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 6 + K) throw FormatError("scores.csv line " + std::to_string(lineno) + ": wrong field count");
    try {
      UncertaintyScore s{std::stoull(f[0]), std::stod(f[4]), std::stoull(f[5])};
      if (s.sample_id != out.scores.size()) throw FormatError("sample ids must be consecutive");
      out.scores.push_back(s);
      out.split_of.push_back(f[1]);
      out.labels.push_back(std::stoull(f[2]));
      out.predicted.push_back(std::stoull(f[3]));
      std::vector<double> p;
      for (std::size_t k = 0; k < K; ++k) p.push_back(std::stod(f[6 + k]));
      probs.push_back(std::move(p));
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception&) {
      throw FormatError("scores.csv line " + std::to_string(lineno) + ": bad number");
    }
  }
  if (out.scores.empty()) throw FormatError("scores.csv has no rows");
  out.probabilities = Tensor({probs.size(), K});
  for (std::size_t i = 0; i < probs.size(); ++i)
    for (std::size_t k = 0; k < K; ++k) out.probabilities(i, k) = probs[i][k];
  return out;
}

void save_maps(const std::filesystem::path& dir, const std::vector<RelevanceMap>& maps, bool pgm) {
  std::vector<NamedTensor> entries;
  for (std::size_t i = 0; i < maps.size(); ++i) entries.push_back({"map_" + index_name(i), maps[i].values});
  const auto bytes = encode_tensors(entries);
  std::filesystem::create_directories(dir);
  write_bytes(dir / "maps.cfrt", bytes);
  if (pgm) {
    std::filesystem::create_directories(dir / "pgm");
    for (std::size_t i = 0; i < maps.size(); ++i) write_pgm(dir / "pgm" / (index_name(i) + ".pgm"), maps[i]);
  }
}

std::vector<RelevanceMap> load_maps(const std::filesystem::path& dir) {
  const auto entries = read_tensors(dir / "maps.cfrt");
  std::vector<RelevanceMap> maps;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Tensor& t = find_tensor(entries, "map_" + index_name(i));
    if (t.rank() != 2) throw FormatError("relevance map " + index_name(i) + " is not 2-D");
    RelevanceMap m;
    m.height = t.dim(0);
    m.width = t.dim(1);
    m.values = t;
    maps.push_back(std::move(m));
  }
  return maps;
}

}  // namespace cfr
