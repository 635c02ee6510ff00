#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace cfr {

/// Dense row-major array of doubles.
///
/// A default-constructed Tensor is empty (no dims, no data) and acts as a
/// placeholder; every other Tensor has at least one dimension and every extent
/// is positive, so product(dims) == size().
class Tensor {
 public:
  Tensor() = default;
  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::size_t> dims);
  Tensor(std::vector<std::size_t> dims, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> dims) { return Tensor(std::move(dims)); }
  static Tensor filled(std::vector<std::size_t> dims, double value);
  static Tensor identity(std::size_t n);
  /// Builds a rows×cols matrix from nested initializer lists (tests, small literals).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor vector(std::vector<double> values);

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return dims_.empty(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double operator()(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }

  /// Row i of a rank-2 tensor, or the i-th slab along axis 0 for higher ranks.
  std::span<const double> row(std::size_t i) const;
  std::span<double> row(std::size_t i);

  /// Same data, new shape (product must match).
  Tensor reshaped(std::vector<std::size_t> dims) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> dims_;
  std::vector<double> data_;
};

/// Accumulates doubles exactly (Shewchuk partials) and rounds once on value().
/// The result is the correctly rounded sum, independent of insertion order.
class ExactSum {
 public:
  void add(double x);
  void add(const ExactSum& other);
  ExactSum& operator+=(double x) {
    add(x);
    return *this;
  }
  double value() const;

 private:
  std::vector<double> partials_;
};

double exact_sum(std::span<const double> values);

/// Matrix product; each entry accumulates over the inner index in ascending order.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Row-wise softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& x);
/// Lower-triangular L with L·Lᵀ = s. Throws NotPositiveDefiniteError on a non-positive pivot.
Tensor cholesky_spd(const Tensor& s);
/// Solves (L·Lᵀ)·x = b by forward then backward substitution.
Tensor solve_spd(const Tensor& l, const Tensor& b);
/// Forward substitution only: returns y with L·y = b.
Tensor solve_lower(const Tensor& l, const Tensor& b);

double max_abs_diff(const Tensor& a, const Tensor& b);
bool is_symmetric(const Tensor& s, double tol);

/// FNV-1a over dims and the bit patterns of the values.
std::uint64_t fingerprint(const Tensor& t, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace cfr
