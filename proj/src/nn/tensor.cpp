#include "graspinf/nn/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace graspinf::nn {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != element_count(shape_)) {
    throw Error(Errc::ShapeMismatch, "data length " + std::to_string(data_.size()) + " does not match shape " +
                                         shape_string(shape_));
  }
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != data_.size()) {
    throw Error(Errc::ShapeMismatch, "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void ensure_finite(const Tensor& t, const std::string& where) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw Error(Errc::NonFiniteActivation, "non-finite value in " + where);
  }
}

Tensor stack_rows(std::span<const std::vector<double>> rows) {
  if (rows.empty()) throw Error(Errc::ShapeMismatch, "cannot stack zero rows");
  const std::size_t dim = rows.front().size();
  Tensor out({rows.size(), dim});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != dim) throw Error(Errc::ShapeMismatch, "ragged rows in stack_rows");
    std::copy(rows[i].begin(), rows[i].end(), out.sample(i).begin());
  }
  return out;
}

}  // namespace graspinf::nn
