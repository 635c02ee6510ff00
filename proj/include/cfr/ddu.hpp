#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cfr/tensor.hpp"

namespace cfr {

/// Class-conditional Gaussians sharing one covariance, fitted on embeddings.
struct GaussianDiscriminant {
  Tensor class_means;        // K × d
  Tensor shared_covariance;  // d × d, ridge included
  Tensor cholesky_factor;    // d × d lower triangular
  double ridge_lambda = 0.0;
  std::size_t embed_dim = 0;
  std::size_t num_classes = 0;
};

struct UncertaintyScore {
  std::size_t sample_id = 0;
  double u = 0.0;  // minimum Mahalanobis distance; lower means more confident
  std::size_t nearest_class = 0;

  friend bool operator==(const UncertaintyScore&, const UncertaintyScore&) = default;
};

inline constexpr double kDefaultRidge = 1e-3;

/// Per-class means (K × d) and pooled within-class covariance
///   Σ = 1/(N−K) · Σ_c Σ_{i∈c} (z_i − μ_c)(z_i − μ_c)ᵀ
/// without ridge. All sums are exact, so the result does not depend on row order.
/// Throws InsufficientDataError when a class has fewer than 2 samples.
struct PooledStatistics {
  Tensor class_means;
  Tensor covariance;
};
PooledStatistics pooled_statistics(const Tensor& embeddings, std::span<const std::size_t> labels,
                                   std::size_t num_classes);

/// Pooled statistics plus the ridge Σ + λ·(trace(Σ)/d)·I (or λ·I when the trace is 0),
/// then a Cholesky factorization. Throws NotPositiveDefiniteError if that fails.
GaussianDiscriminant fit(const Tensor& embeddings, std::span<const std::size_t> labels, std::size_t num_classes,
                         double ridge_lambda = kDefaultRidge);

/// Assembles a model from explicit parameters (factorizes the covariance).
GaussianDiscriminant make_discriminant(Tensor class_means, Tensor covariance, double ridge_lambda);

/// sqrt((z−μ_c)ᵀ Σ⁻¹ (z−μ_c)) via the cached Cholesky factor.
double mahalanobis(const GaussianDiscriminant& gd, std::span<const double> z, std::size_t c);

/// Minimum distance over classes; ties go to the lowest class index.
UncertaintyScore uncertainty(const GaussianDiscriminant& gd, std::span<const double> z, std::size_t sample_id = 0);

/// Ascending u, ties by ascending sample_id.
std::vector<UncertaintyScore> rank_by_confidence(std::vector<UncertaintyScore> scores);

/// Expected calibration error with `num_bins` equal-width bins over (0, 1],
/// binning on the max probability of each row.
double ece(const Tensor& probabilities, std::span<const std::size_t> labels, std::size_t num_bins);

}  // namespace cfr
