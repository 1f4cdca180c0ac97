#include "l2tkt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "l2tkt/error.hpp"

namespace l2tkt {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != element_count(shape_)) {
    throw ShapeError("tensor data has " + std::to_string(data_.size()) +
                     " elements but shape " + to_string(shape_) + " needs " +
                     std::to_string(element_count(shape_)));
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::initializer_list<double> values) {
  return Tensor(Shape{rows, cols}, std::vector<double>(values));
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() on tensor of shape " + to_string(shape_));
  }
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " +
                     to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

std::size_t Tensor::row_size() const {
  if (shape_.empty()) throw ShapeError("row access on a rank-0 tensor");
  return shape_[0] == 0 ? 0 : data_.size() / shape_[0];
}

Tensor Tensor::gather_rows(std::span<const std::size_t> rows) const {
  const std::size_t stride = row_size();
  Shape out_shape = shape_;
  out_shape[0] = rows.size();
  std::vector<double> out(rows.size() * stride);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= shape_[0]) {
      throw ShapeError("row " + std::to_string(rows[r]) + " out of range for " +
                       to_string(shape_));
    }
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(rows[r] * stride),
                stride, out.begin() + static_cast<std::ptrdiff_t>(r * stride));
  }
  return Tensor(std::move(out_shape), std::move(out));
}

}  // namespace l2tkt
