#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "graspinf/error.hpp"

namespace graspinf::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Batched tensors carry the batch as the
/// leading dimension; layers reason about the per-sample tail.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Leading dimension, i.e. the batch size for batched tensors.
  std::size_t batch() const { return shape_.at(0); }
  /// Number of elements per leading-dimension slice.
  std::size_t sample_size() const { return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0]; }
  Shape sample_shape() const { return Shape(shape_.begin() + 1, shape_.end()); }

  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> sample(std::size_t n) { return std::span<double>(data_).subspan(n * sample_size(), sample_size()); }
  std::span<const double> sample(std::size_t n) const {
    return std::span<const double>(data_).subspan(n * sample_size(), sample_size());
  }

  void fill(double value);
  /// Same data, new shape with identical element count.
  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Throws NonFiniteActivation naming `where` if any entry is NaN or infinite.
void ensure_finite(const Tensor& t, const std::string& where);

/// Stack per-sample vectors into a {n, dim} tensor.
Tensor stack_rows(std::span<const std::vector<double>> rows);

}  // namespace graspinf::nn
