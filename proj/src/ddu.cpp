#include "cfr/ddu.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cfr/error.hpp"

namespace cfr {

PooledStatistics pooled_statistics(const Tensor& embeddings, std::span<const std::size_t> labels,
                                   std::size_t num_classes) {
  if (embeddings.rank() != 2) throw DimensionError("fit: embeddings must be an N×d matrix");
  const std::size_t N = embeddings.dim(0), d = embeddings.dim(1);
  if (labels.size() != N) throw DimensionError("fit: label count differs from embedding rows");
  if (num_classes == 0) throw ParameterError("fit: num_classes must be positive");

  std::vector<std::size_t> counts(num_classes, 0);
  for (auto l : labels) {
    if (l >= num_classes) throw IndexError("fit: label " + std::to_string(l) + " out of range");
    ++counts[l];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] < 2) {
      throw InsufficientDataError("fit: class " + std::to_string(c) + " has " + std::to_string(counts[c]) +
                                  " samples, need at least 2");
    }
  }

  PooledStatistics out{Tensor({num_classes, d}), Tensor({d, d})};
  std::vector<ExactSum> sums(num_classes * d);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < d; ++j) sums[labels[i] * d + j].add(embeddings(i, j));
  for (std::size_t c = 0; c < num_classes; ++c)
    for (std::size_t j = 0; j < d; ++j) {
      out.class_means(c, j) = sums[c * d + j].value() / static_cast<double>(counts[c]);
    }

  std::vector<ExactSum> scatter(d * d);
  std::vector<double> dev(d);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < d; ++j) dev[j] = embeddings(i, j) - out.class_means(labels[i], j);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b <= a; ++b) scatter[a * d + b].add(dev[a] * dev[b]);
  }
  const double denom = static_cast<double>(N - num_classes);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b <= a; ++b) {
      const double v = scatter[a * d + b].value() / denom;
      out.covariance(a, b) = v;
      out.covariance(b, a) = v;
    }
  return out;
}

GaussianDiscriminant make_discriminant(Tensor class_means, Tensor covariance, double ridge_lambda) {
  if (class_means.rank() != 2 || covariance.rank() != 2 || covariance.dim(0) != covariance.dim(1) ||
      covariance.dim(0) != class_means.dim(1)) {
    throw DimensionError("discriminant: means must be K×d and covariance d×d");
  }
  GaussianDiscriminant gd;
  gd.num_classes = class_means.dim(0);
  gd.embed_dim = class_means.dim(1);
  gd.ridge_lambda = ridge_lambda;
  gd.class_means = std::move(class_means);
  gd.shared_covariance = std::move(covariance);
  gd.cholesky_factor = cholesky_spd(gd.shared_covariance);
  return gd;
}

GaussianDiscriminant fit(const Tensor& embeddings, std::span<const std::size_t> labels, std::size_t num_classes,
                         double ridge_lambda) {
  if (!(ridge_lambda >= 0.0)) throw ParameterError("fit: ridge lambda must be non-negative");
  PooledStatistics stats = pooled_statistics(embeddings, labels, num_classes);
  const std::size_t d = stats.covariance.dim(0);
  double trace = 0.0;
  for (std::size_t j = 0; j < d; ++j) trace += stats.covariance(j, j);
  const double ridge = trace > 0.0 ? ridge_lambda * trace / static_cast<double>(d) : ridge_lambda;
  for (std::size_t j = 0; j < d; ++j) stats.covariance(j, j) += ridge;
  try {
    return make_discriminant(std::move(stats.class_means), std::move(stats.covariance), ridge_lambda);
  } catch (const NotPositiveDefiniteError& e) {
    throw NotPositiveDefiniteError(std::string(e.what()) + "; increase the ridge lambda (currently " +
                                   std::to_string(ridge_lambda) + ")");
  }
}

double mahalanobis(const GaussianDiscriminant& gd, std::span<const double> z, std::size_t c) {
  if (c >= gd.num_classes) throw IndexError("mahalanobis: class " + std::to_string(c) + " out of range");
  if (z.size() != gd.embed_dim) throw DimensionError("mahalanobis: embedding dimension mismatch");
  Tensor diff({gd.embed_dim});
  for (std::size_t j = 0; j < gd.embed_dim; ++j) diff[j] = z[j] - gd.class_means(c, j);
  // (z−μ)ᵀ(LLᵀ)⁻¹(z−μ) = ‖L⁻¹(z−μ)‖²
  const Tensor w = solve_lower(gd.cholesky_factor, diff);
  double sq = 0.0;
  for (double v : w.data()) sq += v * v;
  return std::sqrt(sq);
}

UncertaintyScore uncertainty(const GaussianDiscriminant& gd, std::span<const double> z, std::size_t sample_id) {
  UncertaintyScore best{sample_id, 0.0, 0};
  for (std::size_t c = 0; c < gd.num_classes; ++c) {
    const double dist = mahalanobis(gd, z, c);
    if (c == 0 || dist < best.u) {
      best.u = dist;
      best.nearest_class = c;
    }
  }
  return best;
}

std::vector<UncertaintyScore> rank_by_confidence(std::vector<UncertaintyScore> scores) {
  std::sort(scores.begin(), scores.end(), [](const UncertaintyScore& a, const UncertaintyScore& b) {
    if (a.u != b.u) return a.u < b.u;
    return a.sample_id < b.sample_id;
  });
  return scores;
}

double ece(const Tensor& probabilities, std::span<const std::size_t> labels, std::size_t num_bins) {
  if (num_bins == 0) throw ParameterError("ece: num_bins must be at least 1");
  if (probabilities.rank() != 2) throw InputError("ece: probabilities must be an N×K matrix");
  const std::size_t N = probabilities.dim(0), K = probabilities.dim(1);
  if (labels.size() != N) throw InputError("ece: label count differs from probability rows");
  if (N == 0) throw InputError("ece: no predictions");

  std::vector<std::size_t> count(num_bins, 0);
  std::vector<ExactSum> conf(num_bins), correct(num_bins);
  for (std::size_t i = 0; i < N; ++i) {
    auto row = probabilities.row(i);
    double total = 0.0;
    for (double p : row) {
      if (!(p >= 0.0 && p <= 1.0)) throw InputError("ece: row " + std::to_string(i) + " has a value outside [0,1]");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) throw InputError("ece: row " + std::to_string(i) + " does not sum to 1");
    if (labels[i] >= K) throw InputError("ece: label out of range in row " + std::to_string(i));
    const std::size_t pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    const double p = row[pred];
    // Bin b covers (b/M, (b+1)/M].
    const double scaled = std::ceil(p * static_cast<double>(num_bins));
    std::size_t bin = scaled <= 1.0 ? 0 : static_cast<std::size_t>(scaled) - 1;
    bin = std::min(bin, num_bins - 1);
    ++count[bin];
    conf[bin].add(p);
    correct[bin].add(pred == labels[i] ? 1.0 : 0.0);
  }
  double out = 0.0;
  for (std::size_t b = 0; b < num_bins; ++b) {
    if (count[b] == 0) continue;
    const double n = static_cast<double>(count[b]);
    out += (n / static_cast<double>(N)) * std::abs(correct[b].value() / n - conf[b].value() / n);
  }
  return out;
}

}  // namespace cfr
