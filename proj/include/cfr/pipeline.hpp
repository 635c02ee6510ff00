#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cfr/analysis.hpp"
#include "cfr/dataset.hpp"
#include "cfr/ddu.hpp"
#include "cfr/model.hpp"
#include "cfr/rollout.hpp"

namespace cfr {

/// Everything a run depends on. Seeds live in data.seed, model.seed,
/// training.seed and split_seed.
struct RunConfig {
  SyntheticSpec data;
  ModelConfig model;
  TrainOptions training;
  std::uint64_t split_seed = 3;
  double ridge_lambda = kDefaultRidge;
  std::vector<double> thresholds = {10, 30, 50, 100};
  std::size_t ece_bins = 10;
  std::size_t target_class = kNaturalLabel;
  double lrp_epsilon = 1e-6;
  RelevanceProvider provider = RelevanceProvider::lrp;
  std::optional<ExternalIndex> external_index;
  CorrelationMode correlation_mode = CorrelationMode::values;
  std::size_t threads = 1;

  /// Throws ParameterError on inconsistent settings.
  void validate() const;
};

/// Model config matching a synthetic spec (channels and image size copied over).
ModelConfig model_config_for(const SyntheticSpec& spec, ModelConfig base = {});

struct TrainedModel {
  ModelParams params;
  SplitIndices split;
  std::vector<double> losses;
  double test_accuracy = 0.0;
};

/// Splits 80/10/10 with split_seed and trains on the train part.
TrainedModel train_stage(const Dataset& data, const RunConfig& config);

/// Per-sample model outputs plus the fitted uncertainty model.
struct ScoredDataset {
  GaussianDiscriminant discriminant;
  std::vector<UncertaintyScore> scores;  // indexed by sample id
  Tensor probabilities;                  // N × num_classes
  std::vector<std::size_t> labels;
  std::vector<std::size_t> predicted;
  std::vector<std::string> split_of;  // "train" | "val" | "test"
};

/// Embeds every sample, fits the discriminant on the training embeddings
/// (true labels), and scores every sample.
ScoredDataset uncertainty_stage(const Dataset& data, const ModelParams& params, const ModelConfig& model,
                                const SplitIndices& split, double ridge_lambda);

/// Raw relevance maps for every sample, computed on `threads` workers and
/// returned in sample order.
std::vector<RelevanceMap> explain_stage(const Dataset& data, const ModelParams& params, const ModelConfig& model,
                                        const ExplainOptions& options, std::size_t threads);

struct ThresholdResult {
  double threshold = 100.0;
  std::vector<std::size_t> sample_ids;
  ClassRelevanceProfile profile;
  std::optional<double> entropy;  // absent when every class mean is zero
  std::optional<double> pearson;
};

struct CFRReport {
  std::size_t num_samples = 0;
  std::size_t target_class = kNaturalLabel;
  ClassManifest classes;
  double ece = 0.0;
  std::size_t ece_bins = 10;
  double test_accuracy = 0.0;
  std::string index_name;
  CorrelationMode correlation_mode = CorrelationMode::values;
  std::vector<ThresholdResult> thresholds;
};

struct AnalysisInputs {
  const ScoredDataset* scored = nullptr;
  const std::vector<RelevanceMap>* maps = nullptr;
  const std::vector<LabelRaster>* rasters = nullptr;
  const ClassManifest* classes = nullptr;
};

CFRReport analyze_stage(const AnalysisInputs& inputs, const RunConfig& config);

/// Generate → train → fit uncertainty → partition → explain → aggregate → analyze,
/// all in memory. Stage failures surface as StageError.
CFRReport run_pipeline(const RunConfig& config);

// ---------------------------------------------------------------- artifacts

/// Shortest round-trip decimal form of a double.
std::string format_number(double v);

/// Rendered report files. CSV columns: threshold,class_id,class_name,mean_relevance,total_pixels.
std::string report_csv(const CFRReport& report);
std::string report_summary_json(const CFRReport& report);
/// Human-readable digest of a summary document.
std::string report_digest(const std::string& summary_json);

void save_dataset(const std::filesystem::path& dir, const Dataset& data, const SyntheticSpec& spec);
Dataset load_dataset(const std::filesystem::path& dir);

/// params.cfrt, params.manifest (name and shape per line), model.txt, split.cfrt, train_log.csv.
void save_model(const std::filesystem::path& dir, const ModelConfig& model, const TrainedModel& trained);
struct LoadedModel {
  ModelConfig config;
  ModelParams params;
  SplitIndices split;
};
LoadedModel load_model(const std::filesystem::path& dir);

/// ddu.cfrt (class_means, shared_covariance, cholesky_factor, ridge_lambda), ddu.txt ("d K lambda")
/// and scores.csv.
void save_scores(const std::filesystem::path& dir, const ScoredDataset& scored);
ScoredDataset load_scores(const std::filesystem::path& dir);

/// maps.cfrt with one "map_NNNNN" entry per sample; optional PGM previews under pgm/.
void save_maps(const std::filesystem::path& dir, const std::vector<RelevanceMap>& maps, bool pgm);
std::vector<RelevanceMap> load_maps(const std::filesystem::path& dir);

std::string model_config_text(const ModelConfig& config);
ModelConfig parse_model_config(const std::string& text);

}  // namespace cfr
