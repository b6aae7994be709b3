#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace sheafalign {

/// Dense row-major real matrix. Plain value type; differentiation lives in
/// autodiff.hpp and wraps these.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);
  Tensor(std::initializer_list<std::initializer_list<double>> rows);

  static Tensor identity(std::size_t n);
  static Tensor column(std::span<const double> values);
  static Tensor row(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t k) { return data_[k]; }
  double operator[](std::size_t k) const { return data_[k]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<const double> row_view(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }
  std::span<double> row_view(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols_, cols_);
  }

  bool same_shape(const Tensor& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  /// The single entry of a 1x1 tensor.
  double item() const;

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor& operator+=(Tensor& a, const Tensor& b);

/// Rows of `a` selected by `indices`, in the given order.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices);

/// Each row divided by its euclidean norm. Throws DegenerateEmbeddingError
/// for rows with norm below `kMinRowNorm`.
Tensor normalize_rows(const Tensor& a);
Tensor rowwise_cosine_similarity(const Tensor& a, const Tensor& b);
Tensor logsumexp_rows(const Tensor& x);

double sum(const Tensor& a);
double squared_norm(const Tensor& a);
double max_abs(const Tensor& a);
/// max |a - b| over entries.
double max_abs_diff(const Tensor& a, const Tensor& b);

inline constexpr double kMinRowNorm = 1e-12;

}  // namespace sheafalign
