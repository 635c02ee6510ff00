#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cfr/dataset.hpp"
#include "cfr/ddu.hpp"
#include "cfr/rollout.hpp"
#include "cfr/tensor.hpp"

namespace cfr {

/// The ceil(threshold/100 · N) most confident samples, in rank order.
struct ConfidenceSubset {
  double threshold = 100.0;
  std::vector<std::size_t> sample_ids;
};

/// Number of members of a `threshold`-percent subset of n samples.
std::size_t subset_size(double threshold, std::size_t n);

/// Nested subsets for strictly increasing thresholds in (0, 100].
std::vector<ConfidenceSubset> partition(std::span<const UncertaintyScore> ranked, std::span<const double> thresholds);

struct ClassAggregate {
  ExactSum relevance;
  std::uint64_t pixels = 0;

  double sum() const { return relevance.value(); }
};

/// Keyed by land-cover id; only ids present in the raster appear.
using ClassAggregates = std::map<LandClassId, ClassAggregate>;

ClassAggregates aggregate_by_class(const RelevanceMap& map, const LabelRaster& raster);

struct ClassRelevance {
  double total_relevance = 0.0;
  std::uint64_t total_pixels = 0;
  double mean_relevance = 0.0;
};

struct ClassRelevanceProfile {
  double threshold = 100.0;
  /// Covered classes only (total_pixels > 0), ascending id.
  std::map<LandClassId, ClassRelevance> classes;
};

/// Pixel-weighted means: per class, relevance summed over all members divided by
/// their pixel count. Throws InputError naming the first member without aggregates.
ClassRelevanceProfile profile(const ConfidenceSubset& subset, const std::map<std::size_t, ClassAggregates>& per_image);

/// Shannon entropy (nats) of mean relevance normalized over covered classes.
double relevance_entropy(const ClassRelevanceProfile& p);

struct ExternalIndex {
  std::string name;
  std::map<LandClassId, double> values;
};

/// Parses lines "id,value"; '#' starts a comment, and "# name: X" sets the name.
ExternalIndex parse_external_index(const std::string& text, std::string default_name = "index");

enum class CorrelationMode {
  values,  // raw mean relevance against raw index values
  ranks,   // both sides replaced by average ranks first (Spearman-style)
};

double pearson(std::span<const double> x, std::span<const double> y);
/// Over classes covered by the profile and present in the index.
double pearson(const ClassRelevanceProfile& p, const ExternalIndex& index,
               CorrelationMode mode = CorrelationMode::values);

/// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(std::span<const double> values);

}  // namespace cfr
