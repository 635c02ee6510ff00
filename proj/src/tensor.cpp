#include "cfr/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <utility>

#include "cfr/error.hpp"

namespace cfr {

namespace {

std::size_t product(const std::vector<std::size_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const std::vector<std::size_t>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

void check_dims(const std::vector<std::size_t>& dims) {
  if (dims.empty()) throw DimensionError("tensor needs at least one dimension");
  for (auto d : dims) {
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(dims));
  }
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_string(t.dims()));
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  check_dims(dims_);
  data_.assign(product(dims_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  check_dims(dims_);
  if (product(dims_) != data_.size()) {
    throw DimensionError("shape " + shape_string(dims_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::filled(std::vector<std::size_t> dims, double value) {
  Tensor t(std::move(dims));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= dims_.size()) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for " + shape_string(dims_));
  }
  return dims_[axis];
}

std::span<const double> Tensor::row(std::size_t i) const {
  const std::size_t stride = data_.size() / dims_[0];
  return std::span<const double>(data_).subspan(i * stride, stride);
}

std::span<double> Tensor::row(std::size_t i) {
  const std::size_t stride = data_.size() / dims_[0];
  return std::span<double>(data_).subspan(i * stride, stride);
}

Tensor Tensor::reshaped(std::vector<std::size_t> dims) const { return Tensor(std::move(dims), data_); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void ExactSum::add(double x) {
  std::size_t used = 0;
  for (std::size_t k = 0; k < partials_.size(); ++k) {
    double y = partials_[k];
    if (std::abs(x) < std::abs(y)) std::swap(x, y);
    const double hi = x + y;
    const double lo = y - (hi - x);
    if (lo != 0.0) partials_[used++] = lo;
    x = hi;
  }
  partials_.resize(used);
  partials_.push_back(x);
}

void ExactSum::add(const ExactSum& other) {
  for (double p : other.partials_) add(p);
}

double ExactSum::value() const {
  // Round-half-even correction of the top two partials, as in Python's fsum.
  std::size_t n = partials_.size();
  if (n == 0) return 0.0;
  double hi = partials_[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials_[--n];
    hi = x + y;
    lo = y - (hi - x);
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) || (lo > 0.0 && partials_[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

double exact_sum(std::span<const double> values) {
  ExactSum s;
  for (double v : values) s.add(v);
  return s.value();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ (" + shape_string(a.dims()) + " * " +
                         shape_string(b.dims()) + ")");
  }
  Tensor c({m, n});
  // i-k-j order still adds a(i,p)*b(p,j) into c(i,j) for p = 0,1,...,k-1 in sequence.
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      const double* brow = b.row(p).data();
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t(j, i) = a(i, j);
  return t;
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows");
  Tensor y = x;
  const std::size_t n = x.dim(1);
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    auto r = y.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      r[j] = std::exp(r[j] - mx);
      total += r[j];
    }
    for (std::size_t j = 0; j < n; ++j) r[j] /= total;
  }
  return y;
}

Tensor cholesky_spd(const Tensor& s) {
  require_matrix(s, "cholesky_spd");
  const std::size_t d = s.dim(0);
  if (s.dim(1) != d) throw DimensionError("cholesky_spd: matrix is not square");
  if (!is_symmetric(s, 1e-9)) throw InputError("cholesky_spd: matrix is not symmetric within 1e-9");
  Tensor l({d, d});
  for (std::size_t j = 0; j < d; ++j) {
    double diag = s(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0)) {
      throw NotPositiveDefiniteError("cholesky_spd: non-positive pivot " + std::to_string(diag) +
                                     " at column " + std::to_string(j));
    }
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < d; ++i) {
      double v = s(i, j);
      for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / ljj;
    }
  }
  return l;
}

Tensor solve_lower(const Tensor& l, const Tensor& b) {
  require_matrix(l, "solve_lower");
  const std::size_t d = l.dim(0);
  if (l.dim(1) != d || b.size() != d) throw DimensionError("solve_lower: shape mismatch");
  Tensor y({d});
  for (std::size_t i = 0; i < d; ++i) {
    if (l(i, i) == 0.0) throw SingularError("solve: zero diagonal at row " + std::to_string(i));
    double v = b[i];
    for (std::size_t k = 0; k < i; ++k) v -= l(i, k) * y[k];
    y[i] = v / l(i, i);
  }
  return y;
}

Tensor solve_spd(const Tensor& l, const Tensor& b) {
  Tensor y = solve_lower(l, b);
  const std::size_t d = l.dim(0);
  Tensor x({d});
  for (std::size_t ii = d; ii-- > 0;) {
    double v = y[ii];
    for (std::size_t k = ii + 1; k < d; ++k) v -= l(k, ii) * x[k];
    x[ii] = v / l(ii, ii);
  }
  return x;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) throw DimensionError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool is_symmetric(const Tensor& s, double tol) {
  if (s.rank() != 2 || s.dim(0) != s.dim(1)) return false;
  for (std::size_t i = 0; i < s.dim(0); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(s(i, j) - s(j, i)) > tol) return false;
  return true;
}

std::uint64_t fingerprint(const Tensor& t, std::uint64_t h) {
  constexpr std::uint64_t prime = 0x100000001b3ULL;
  auto mix = [&](std::uint64_t word) {
    for (int byte = 0; byte < 8; ++byte) {
      h ^= (word >> (8 * byte)) & 0xffU;
      h *= prime;
    }
  };
  mix(t.rank());
  for (auto d : t.dims()) mix(d);
  for (double v : t.data()) mix(std::bit_cast<std::uint64_t>(v));
  return h;
}

}  // namespace cfr
