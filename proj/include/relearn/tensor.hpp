// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace relearn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with explicit shape metadata.
///
/// A Tensor is a plain value: copies are deep and comparisons are bitwise on
/// the payload. Gradient bookkeeping lives on the autodiff tape, not here.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool is_scalar() const noexcept { return data_.size() == 1 && shape_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double item() const;

  /// Same payload, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  /// Rows [begin, end) along axis 0.
  Tensor rows(std::size_t begin, std::size_t end) const;
  /// Gathers the listed rows along axis 0.
  Tensor gather_rows(std::span<const std::size_t> indices) const;
  std::size_t row_size() const;

  bool all_finite() const noexcept;
  double abs_max() const noexcept;
  double sum() const noexcept;

  void fill(double v);

  /// Bitwise equality of shape and payload.
  bool operator==(const Tensor& other) const noexcept;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Concatenates tensors of identical trailing shape along axis 0.
Tensor concat_rows(std::span<const Tensor> parts);

}  // namespace relearn
