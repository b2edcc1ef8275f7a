#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace jacreg {

/// Storage with Eigen's maximum alignment so vectorized kernels see the same
/// layout on every run.
using AlignedDoubles = std::vector<double, Eigen::aligned_allocator<double>>;

using EigenRowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EigenMatrixMap = Eigen::Map<EigenRowMatrix>;
using ConstEigenMatrixMap = Eigen::Map<const EigenRowMatrix>;
using EigenVectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstEigenVectorMap = Eigen::Map<const Eigen::VectorXd>;

/// Dense vector of 64-bit floats.
class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t len, double fill = 0.0) : data_(len, fill) {}
  Vector(std::initializer_list<double> values) : data_(values) {}
  explicit Vector(const std::vector<double>& values) : data_(values.begin(), values.end()) {}
  explicit Vector(std::span<const double> values) : data_(values.begin(), values.end()) {}

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  std::vector<double> values() const { return {data_.begin(), data_.end()}; }

  EigenVectorMap map() { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }
  ConstEigenVectorMap map() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }

  bool operator==(const Vector&) const = default;

 private:
  AlignedDoubles data_;
};

/// Dense row-major matrix of 64-bit floats.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  /// Builds from nested rows; all rows must have equal length.
  Matrix(std::initializer_list<std::initializer_list<double>> rows);
  Matrix(std::size_t rows, std::size_t cols, const std::vector<double>& data);

  static Matrix identity(std::size_t n);
  static Matrix from_eigen(const EigenRowMatrix& m);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  std::vector<double> values() const { return {data_.begin(), data_.end()}; }

  EigenMatrixMap map() {
    return {data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
  }
  ConstEigenMatrixMap map() const {
    return {data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
  }

  Matrix transpose() const;
  double frobenius_sq() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  AlignedDoubles data_;
};

/// "RxC" shape string used in error messages.
std::string shape_string(const Matrix& m);

/// Standard product a·b. Throws DimensionError naming both shapes when
/// a.cols != b.rows and NumericError if the result is not finite.
Matrix matmul(const Matrix& a, const Matrix& b);

/// a·x for a column vector x.
Vector matvec(const Matrix& a, const Vector& x);

bool all_finite(std::span<const double> values);

double dot(std::span<const double> a, std::span<const double> b);

}  // namespace jacreg
