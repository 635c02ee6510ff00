#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cfr/ddu.hpp"
#include "cfr/error.hpp"
#include "oracles.hpp"

using cfr::Tensor;

namespace {

std::vector<double> row_of(const Tensor& t, std::size_t i) { return {t.row(i).begin(), t.row(i).end()}; }

Tensor probs(std::initializer_list<std::initializer_list<double>> rows) { return Tensor::matrix(rows); }

}  // namespace

TEST_CASE("pooled covariance hand case") {
  // Classes at (0,0) and (4,0), each with samples offset ±(0,1).
  const Tensor z = Tensor::matrix({{0, 1}, {0, -1}, {4, 1}, {4, -1}});
  const std::vector<std::size_t> labels = {0, 0, 1, 1};
  const auto stats = cfr::pooled_statistics(z, labels, 2);
  CHECK(stats.class_means == Tensor::matrix({{0, 0}, {4, 0}}));
  // Scatter [[0,0],[0,4]] over N−K = 2.
  CHECK(stats.covariance == Tensor::matrix({{0, 0}, {0, 2}}));
  CHECK_THROWS_AS(cfr::fit(z, labels, 2, 0.0), cfr::NotPositiveDefiniteError);
  try {
    cfr::fit(z, labels, 2, 0.0);
  } catch (const cfr::NotPositiveDefiniteError& e) {
    CHECK(std::string(e.what()).find("ridge") != std::string::npos);
  }
  // Ridge λ·trace/d = 0.5·2/2 = 0.5 on the diagonal.
  const auto gd = cfr::fit(z, labels, 2, 0.5);
  CHECK(gd.shared_covariance == Tensor::matrix({{0.5, 0}, {0, 2.5}}));
}

TEST_CASE("degenerate clusters fall back to a plain ridge") {
  const Tensor z = Tensor::matrix({{1, 2, 3}, {1, 2, 3}, {-1, 0, 5}, {-1, 0, 5}});
  const std::vector<std::size_t> labels = {0, 0, 1, 1};
  CHECK_THROWS_AS(cfr::fit(z, labels, 2, 0.0), cfr::NotPositiveDefiniteError);
  const auto gd = cfr::fit(z, labels, 2, 1e-3);
  CHECK(gd.shared_covariance == Tensor::matrix({{1e-3, 0, 0}, {0, 1e-3, 0}, {0, 0, 1e-3}}));
  CHECK(gd.cholesky_factor(1, 1) == doctest::Approx(std::sqrt(1e-3)));
}

TEST_CASE("fit input errors") {
  const Tensor z = Tensor::matrix({{0, 1}, {0, -1}, {4, 1}});
  CHECK_THROWS_AS(cfr::fit(z, std::vector<std::size_t>{0, 0, 1}, 2), cfr::InsufficientDataError);
  CHECK_THROWS_AS(cfr::fit(z, std::vector<std::size_t>{0, 0}, 2), cfr::DimensionError);
  CHECK_THROWS_AS(cfr::fit(z, std::vector<std::size_t>{0, 0, 5}, 2), cfr::IndexError);
  CHECK_THROWS_AS(cfr::fit(z, std::vector<std::size_t>{0, 0, 1}, 2, -1.0), cfr::ParameterError);
}

TEST_CASE("fit recovers known Gaussian clusters") {
  const std::size_t d = 6, K = 3, N = 600;
  std::mt19937_64 rng(41);
  std::normal_distribution<double> n01(0.0, 1.0);
  // Shared covariance C·Cᵀ with a fixed mixing matrix C.
  oracle::Mat mix(d, std::vector<double>(d));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) mix[i][j] = (i == j ? 1.0 : 0.0) + 0.3 * n01(rng);
  oracle::Mat mu(K, std::vector<double>(d));
  for (auto& m : mu)
    for (auto& v : m) v = 5.0 * n01(rng);
  auto draw = [&](std::size_t c) {
    std::vector<double> e(d), z(d);
    for (auto& v : e) v = n01(rng);
    for (std::size_t i = 0; i < d; ++i) {
      z[i] = mu[c][i];
      for (std::size_t j = 0; j < d; ++j) z[i] += mix[i][j] * e[j];
    }
    return z;
  };
  Tensor emb({N, d});
  std::vector<std::size_t> labels(N);
  for (std::size_t i = 0; i < N; ++i) {
    labels[i] = i % K;
    const auto z = draw(labels[i]);
    std::copy(z.begin(), z.end(), emb.row(i).begin());
  }
  const auto gd = cfr::fit(emb, labels, K);
  CHECK(cfr::is_symmetric(gd.shared_covariance, 1e-9));
  CHECK(cfr::max_abs_diff(cfr::matmul(gd.cholesky_factor, cfr::transpose(gd.cholesky_factor)),
                          gd.shared_covariance) < 1e-9);
  for (std::size_t c = 0; c < K; ++c)
    for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(gd.class_means(c, j) - mu[c][j]) < 0.2);

  // Held-out distances follow a chi distribution with d degrees of freedom.
  const double chi_mean = std::sqrt(2.0) * std::tgamma((d + 1) / 2.0) / std::tgamma(d / 2.0);
  for (std::size_t c = 0; c < K; ++c) {
    std::vector<double> dist;
    for (int i = 0; i < 200; ++i) {
      const auto z = draw(c);
      dist.push_back(cfr::mahalanobis(gd, z, c));
    }
    std::nth_element(dist.begin(), dist.begin() + 100, dist.end());
    const double median = dist[100];
    CHECK(median > 0.5 * chi_mean);
    CHECK(median < 2.0 * chi_mean);
    // Tighter: the χ₆ median is about 2.27.
    CHECK(std::abs(median - 2.27) < 0.4);
  }
}

TEST_CASE("fit does not depend on row order") {
  std::mt19937_64 rng(42);
  const Tensor emb = oracle::random_tensor({40, 4}, rng);
  std::vector<std::size_t> labels(40);
  for (std::size_t i = 0; i < 40; ++i) labels[i] = i % 2;
  std::vector<std::size_t> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor e2({40, 4});
  std::vector<std::size_t> l2(40);
  for (std::size_t i = 0; i < 40; ++i) {
    std::copy(emb.row(perm[i]).begin(), emb.row(perm[i]).end(), e2.row(i).begin());
    l2[i] = labels[perm[i]];
  }
  const auto a = cfr::fit(emb, labels, 2), b = cfr::fit(e2, l2, 2);
  CHECK(a.class_means == b.class_means);
  CHECK(a.shared_covariance == b.shared_covariance);
  CHECK(a.cholesky_factor == b.cholesky_factor);
}

TEST_CASE("mahalanobis") {
  const auto id = cfr::make_discriminant(Tensor::matrix({{1, 1}, {0, 0}}), Tensor::identity(2), 0.0);
  CHECK(cfr::mahalanobis(id, std::vector<double>{4, 5}, 0) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(cfr::mahalanobis(id, std::vector<double>{1, 1}, 0) == 0.0);
  CHECK_THROWS_AS(cfr::mahalanobis(id, std::vector<double>{1, 1}, 2), cfr::IndexError);
  CHECK_THROWS_AS(cfr::mahalanobis(id, std::vector<double>{1, 1, 1}, 0), cfr::DimensionError);

  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cov = oracle::random_spd(5, rng);
    const Tensor means = oracle::random_tensor({3, 5}, rng, -3, 3);
    const auto gd = cfr::make_discriminant(means, oracle::from_mat(cov), 0.0);
    const Tensor z = oracle::random_tensor({5}, rng, -5, 5);
    const std::vector<double> zv(z.data().begin(), z.data().end());
    for (std::size_t c = 0; c < 3; ++c) {
      const double want = oracle::mahalanobis(cov, zv, row_of(means, c));
      CHECK(std::abs(cfr::mahalanobis(gd, zv, c) - want) < 1e-10);
    }
  }
}

TEST_CASE("uncertainty is the minimum distance with lowest-class ties") {
  const auto gd = cfr::make_discriminant(Tensor::matrix({{-1, 0}, {1, 0}, {5, 5}}), Tensor::identity(2), 0.0);
  auto s = cfr::uncertainty(gd, std::vector<double>{1, 0}, 9);
  CHECK(s.u == 0.0);
  CHECK(s.nearest_class == 1);
  CHECK(s.sample_id == 9);
  s = cfr::uncertainty(gd, std::vector<double>{0, 3}, 0);
  CHECK(s.nearest_class == 0);
  CHECK(s.u == doctest::Approx(std::sqrt(10.0)));

  std::mt19937_64 rng(44);
  const auto cov = oracle::random_spd(4, rng);
  const auto g2 = cfr::make_discriminant(oracle::random_tensor({4, 4}, rng, -2, 2), oracle::from_mat(cov), 0.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor z = oracle::random_tensor({4}, rng, -4, 4);
    const auto u = cfr::uncertainty(g2, z.data());
    CHECK(u.u >= 0.0);
    for (std::size_t c = 0; c < 4; ++c) CHECK(u.u <= cfr::mahalanobis(g2, z.data(), c));
    CHECK(u.u == cfr::mahalanobis(g2, z.data(), u.nearest_class));
  }
}

TEST_CASE("confidence ranking") {
  using S = cfr::UncertaintyScore;
  const std::vector<S> in = {{0, 3.0, 0}, {1, 1.0, 0}, {2, 2.0, 1}};
  const auto out = cfr::rank_by_confidence(in);
  CHECK(out[0].sample_id == 1);
  CHECK(out[1].sample_id == 2);
  CHECK(out[2].sample_id == 0);

  const std::vector<S> ties = {{5, 1.0, 0}, {2, 1.0, 0}, {7, 1.0, 1}, {0, 1.0, 0}};
  const auto t = cfr::rank_by_confidence(ties);
  CHECK(t[0].sample_id == 0);
  CHECK(t[1].sample_id == 2);
  CHECK(t[2].sample_id == 5);
  CHECK(t[3].sample_id == 7);

  std::vector<S> rev(ties.rbegin(), ties.rend());
  CHECK(cfr::rank_by_confidence(rev) == t);
}

TEST_CASE("expected calibration error") {
  const std::vector<std::size_t> right = {0, 1};
  CHECK(cfr::ece(probs({{1, 0}, {0, 1}}), right, 10) == 0.0);
  CHECK(cfr::ece(probs({{0, 1}, {1, 0}}), right, 10) == 1.0);

  // Confidences 0.6, 0.6, 0.9, 0.9 with correctness 1, 0, 1, 1.
  const Tensor p = probs({{0.6, 0.4}, {0.6, 0.4}, {0.1, 0.9}, {0.1, 0.9}});
  const std::vector<std::size_t> labels = {0, 1, 1, 1};
  CHECK(cfr::ece(p, labels, 10) == doctest::Approx(0.1).epsilon(1e-12));
  // One bin: |0.75 − 0.75| = 0.
  CHECK(cfr::ece(p, labels, 1) == doctest::Approx(0.0));

  // A confidence of exactly 0.5 belongs to the bin (0.4, 0.5].
  const Tensor edge = probs({{0.5, 0.5}, {0.55, 0.45}});
  const std::vector<std::size_t> e_labels = {0, 1};
  // bins: 0.5 → bin 4 (acc 1), 0.55 → bin 5 (acc 0): 0.5·0.5 + 0.5·0.55
  CHECK(cfr::ece(edge, e_labels, 10) == doctest::Approx(0.525));

  CHECK_THROWS_AS(cfr::ece(probs({{0.6, 0.6}}), std::vector<std::size_t>{0}, 10), cfr::InputError);
  CHECK_THROWS_AS(cfr::ece(probs({{1.2, -0.2}}), std::vector<std::size_t>{0}, 10), cfr::InputError);
  CHECK_THROWS_AS(cfr::ece(p, labels, 0), cfr::ParameterError);
  CHECK_THROWS_AS(cfr::ece(p, std::vector<std::size_t>{0}, 10), cfr::InputError);

  std::mt19937_64 rng(45);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor r({30, 3});
    std::vector<std::size_t> l(30);
    for (std::size_t i = 0; i < 30; ++i) {
      double tot = 0.0;
      for (std::size_t k = 0; k < 3; ++k) tot += r(i, k) = std::uniform_real_distribution<double>(0.01, 1)(rng);
      for (std::size_t k = 0; k < 3; ++k) r(i, k) /= tot;
      l[i] = rng() % 3;
    }
    const double e = cfr::ece(r, l, 15);
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);
  }
}
