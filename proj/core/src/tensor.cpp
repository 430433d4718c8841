#include "lisa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "lisa/errors.hpp"

namespace lisa {

namespace {

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) {
      throw ShapeError("negative dimension in shape " + shape_string(shape));
    }
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

int Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str());
  }
  return shape_[axis];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
  if (element_count(shape) != size()) {
    throw ShapeError("cannot reshape " + shape_str() + " to " + shape_string(shape));
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!same_shape(other)) {
    throw ShapeError("cannot add " + other.shape_str() + " to " + shape_str());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

std::string Tensor::shape_str() const { return shape_string(shape_); }

Tensor batch_slice(const Tensor& batch, int n) {
  if (batch.rank() < 1 || n < 0 || n >= batch.dim(0)) {
    throw ShapeError("batch index " + std::to_string(n) + " out of range for " +
                     batch.shape_str());
  }
  std::vector<int> inner(batch.shape().begin() + 1, batch.shape().end());
  Tensor out(inner);
  std::memcpy(out.data(), batch.data() + n * out.size(), out.size() * sizeof(double));
  return out;
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("cannot stack an empty list");
  std::vector<int> shape = items.front().shape();
  shape.insert(shape.begin(), static_cast<int>(items.size()));
  Tensor out(shape);
  const std::size_t stride = items.front().size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!items[i].same_shape(items.front())) {
      throw ShapeError("stack: " + items[i].shape_str() + " vs " + items.front().shape_str());
    }
    std::memcpy(out.data() + i * stride, items[i].data(), stride * sizeof(double));
  }
  return out;
}

}  // namespace lisa
