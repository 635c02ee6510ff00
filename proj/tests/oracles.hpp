#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls into the library's numerics.

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <vector>

#include "cfr/tensor.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const cfr::Tensor& t) {
  Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t(i, j);
  return m;
}

inline cfr::Tensor from_mat(const Mat& m) {
  cfr::Tensor t({m.size(), m[0].size()});
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[0].size(); ++j) t(i, j) = m[i][j];
  return t;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      long double acc = 0.0L;
      for (std::size_t k = 0; k < b.size(); ++k) acc += static_cast<long double>(a[i][k]) * b[k][j];
      c[i][j] = static_cast<double>(acc);
    }
  return c;
}

// Gauss-Jordan elimination with partial pivoting in long double.
inline Mat inverse(const Mat& a) {
  const std::size_t n = a.size();
  std::vector<std::vector<long double>> m(n, std::vector<long double>(2 * n, 0.0L));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) m[i][j] = a[i][j];
    m[i][n + i] = 1.0L;
  }
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(m[r][col]) > std::fabs(m[piv][col])) piv = r;
    if (m[piv][col] == 0.0L) throw std::runtime_error("oracle: singular matrix");
    std::swap(m[piv], m[col]);
    const long double p = m[col][col];
    for (auto& v : m[col]) v /= p;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const long double f = m[r][col];
      if (f == 0.0L) continue;
      for (std::size_t j = 0; j < 2 * n; ++j) m[r][j] -= f * m[col][j];
    }
  }
  Mat inv(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) inv[i][j] = static_cast<double>(m[i][n + j]);
  return inv;
}

// Mahalanobis distance through an explicit inverse.
inline double mahalanobis(const Mat& cov, const std::vector<double>& z, const std::vector<double>& mu) {
  const Mat inv = inverse(cov);
  long double q = 0.0L;
  for (std::size_t i = 0; i < z.size(); ++i)
    for (std::size_t j = 0; j < z.size(); ++j) q += (z[i] - mu[i]) * static_cast<long double>(inv[i][j]) * (z[j] - mu[j]);
  return std::sqrt(static_cast<double>(q));
}

// Random SPD matrix B·Bᵀ + shift·I.
inline Mat random_spd(std::size_t d, std::mt19937_64& rng, double shift = 0.5) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Mat b(d, std::vector<double>(d));
  for (auto& row : b)
    for (auto& v : row) v = n01(rng);
  Mat s(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t k = 0; k < d; ++k) s[i][j] += b[i][k] * b[j][k];
      if (i == j) s[i][j] += shift;
    }
  // Exact symmetry.
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j) s[i][j] = s[j][i];
  return s;
}

inline cfr::Tensor random_tensor(std::vector<std::size_t> dims, std::mt19937_64& rng, double lo = -1.0,
                                 double hi = 1.0) {
  cfr::Tensor t(std::move(dims));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

}  // namespace oracle
