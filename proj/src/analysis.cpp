#include "cfr/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cfr/error.hpp"

namespace cfr {

std::size_t subset_size(double threshold, std::size_t n) {
  if (!(threshold > 0.0 && threshold <= 100.0)) throw InputError("threshold must lie in (0, 100]");
  // Multiply before dividing so integer percentages are exact.
  const double exact = threshold * static_cast<double>(n) / 100.0;
  const double k = std::ceil(exact - 1e-9 * std::max(1.0, exact));
  return std::min(n, static_cast<std::size_t>(std::max(k, 0.0)));
}

std::vector<ConfidenceSubset> partition(std::span<const UncertaintyScore> ranked, std::span<const double> thresholds) {
  if (ranked.empty()) throw InputError("partition: no scores");
  if (thresholds.empty()) throw InputError("partition: no thresholds");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0.0 && thresholds[i] <= 100.0)) throw InputError("partition: thresholds must lie in (0, 100]");
    if (i > 0 && !(thresholds[i] > thresholds[i - 1])) {
      throw InputError("partition: thresholds must be strictly increasing");
    }
  }
  for (std::size_t i = 1; i < ranked.size(); ++i) {
    const auto& a = ranked[i - 1];
    const auto& b = ranked[i];
    if (a.u > b.u || (a.u == b.u && a.sample_id >= b.sample_id)) {
      throw InputError("partition: scores are not in confidence order");
    }
  }
  std::vector<ConfidenceSubset> out;
  for (double t : thresholds) {
    ConfidenceSubset s{t, {}};
    const std::size_t k = subset_size(t, ranked.size());
    for (std::size_t i = 0; i < k; ++i) s.sample_ids.push_back(ranked[i].sample_id);
    out.push_back(std::move(s));
  }
  return out;
}

ClassAggregates aggregate_by_class(const RelevanceMap& map, const LabelRaster& raster) {
  if (map.width != raster.width || map.height != raster.height ||
      map.values.size() != static_cast<std::size_t>(raster.width) * raster.height) {
    throw DimensionError("aggregate_by_class: map and raster dimensions differ");
  }
  ClassAggregates out;
  const auto values = map.values.data();
  for (std::size_t i = 0; i < raster.ids.size(); ++i) {
    ClassAggregate& agg = out[raster.ids[i]];
    agg.relevance.add(values[i]);
    ++agg.pixels;
  }
  return out;
}

ClassRelevanceProfile profile(const ConfidenceSubset& subset, const std::map<std::size_t, ClassAggregates>& per_image) {
  std::map<LandClassId, ClassAggregate> merged;
  for (auto id : subset.sample_ids) {
    const auto it = per_image.find(id);
    if (it == per_image.end()) throw InputError("profile: no aggregate for sample " + std::to_string(id));
    for (const auto& [cls, agg] : it->second) {
      ClassAggregate& m = merged[cls];
      m.relevance.add(agg.relevance);
      m.pixels += agg.pixels;
    }
  }
  ClassRelevanceProfile p;
  p.threshold = subset.threshold;
  for (const auto& [cls, agg] : merged) {
    if (agg.pixels == 0) continue;
    ClassRelevance r;
    r.total_relevance = agg.sum();
    r.total_pixels = agg.pixels;
    r.mean_relevance = r.total_relevance / static_cast<double>(r.total_pixels);
    p.classes.emplace(cls, r);
  }
  return p;
}

double relevance_entropy(const ClassRelevanceProfile& p) {
  ExactSum total;
  for (const auto& [cls, r] : p.classes) {
    if (r.mean_relevance < 0.0) throw InputError("relevance_entropy: negative mean relevance");
    total.add(r.mean_relevance);
  }
  const double z = total.value();
  if (!(z > 0.0)) throw DegenerateDistributionError("relevance_entropy: every class mean is zero");
  double h = 0.0;
  for (const auto& [cls, r] : p.classes) {
    const double q = r.mean_relevance / z;
    if (q > 0.0) h -= q * std::log(q);
  }
  return std::max(h, 0.0);
}

ExternalIndex parse_external_index(const std::string& text, std::string default_name) {
  ExternalIndex idx;
  idx.name = std::move(default_name);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string tag = "# name:";
      if (line.rfind(tag, 0) == 0) {
        std::string name = line.substr(tag.size());
        name.erase(0, name.find_first_not_of(' '));
        idx.name = name;
      }
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("index line " + std::to_string(lineno) + ": expected 'id,value'");
    try {
      const unsigned long id = std::stoul(line.substr(0, comma));
      const double v = std::stod(line.substr(comma + 1));
      if (id > 0xffff || !std::isfinite(v)) throw std::out_of_range("range");
      if (!idx.values.emplace(static_cast<LandClassId>(id), v).second) throw std::invalid_argument("dup");
    } catch (const std::exception&) {
      throw FormatError("index line " + std::to_string(lineno) + ": bad id or value");
    }
  }
  if (idx.values.size() < 2) throw InputError("external index needs at least 2 classes");
  return idx;
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("pearson: inputs differ in length");
  if (x.size() < 2) throw InputError("pearson: need at least 2 pairs");
  const double n = static_cast<double>(x.size());
  const double mx = exact_sum(x) / n, my = exact_sum(y) / n;
  ExactSum sxy, sxx, syy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy.add(dx * dy);
    sxx.add(dx * dx);
    syy.add(dy * dy);
  }
  const double vx = sxx.value(), vy = syy.value();
  if (!(vx > 0.0) || !(vy > 0.0)) throw UndefinedCorrelationError("pearson: zero variance");
  return std::clamp(sxy.value() / std::sqrt(vx * vy), -1.0, 1.0);
}

double pearson(const ClassRelevanceProfile& p, const ExternalIndex& index, CorrelationMode mode) {
  std::vector<double> x, y;
  for (const auto& [cls, r] : p.classes) {
    const auto it = index.values.find(cls);
    if (it == index.values.end()) continue;
    x.push_back(r.mean_relevance);
    y.push_back(it->second);
  }
  if (x.size() < 2) throw InputError("pearson: fewer than 2 classes shared by profile and index");
  if (mode == CorrelationMode::ranks) {
    x = average_ranks(x);
    y = average_ranks(y);
  }
  return pearson(x, y);
}

}  // namespace cfr
