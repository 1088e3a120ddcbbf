// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#include "gks/tensor.hpp"

#include <cmath>
#include <string>

#include "gks/error.hpp"

namespace gks {

std::size_t Tensor::check_shape(const std::vector<std::size_t>& shape) {
  if (shape.size() > 4) {
    throw ShapeError("tensor rank " + std::to_string(shape.size()) +
                     " exceeds the supported maximum of 4");
  }
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimension of zero is not allowed");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(check_shape(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (check_shape(shape_) != data_.size()) {
    throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.data_.assign(1, v);
  return t;
}

Tensor Tensor::zeros_like(const Tensor& other) {
  Tensor t;
  t.shape_ = other.shape_;
  t.data_.assign(other.data_.size(), 0.0);
  return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  Tensor t(std::move(shape));
  t.data_.assign(t.data_.size(), v);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) +
                     " out of range for shape " + shape_string(shape_));
  }
  return shape_[axis];
}

namespace {
[[noreturn]] void bad_index(const std::vector<std::size_t>& shape,
                            std::size_t rank_used) {
  throw ShapeError("indexed with " + std::to_string(rank_used) +
                   " subscripts into tensor of shape " + shape_string(shape));
}
}  // namespace

double& Tensor::at(std::size_t i0) {
  if (shape_.size() != 1 || i0 >= shape_[0]) bad_index(shape_, 1);
  return data_[i0];
}
double& Tensor::at(std::size_t i0, std::size_t i1) {
  if (shape_.size() != 2 || i0 >= shape_[0] || i1 >= shape_[1])
    bad_index(shape_, 2);
  return data_[i0 * shape_[1] + i1];
}
double& Tensor::at(std::size_t i0, std::size_t i1, std::size_t i2) {
  if (shape_.size() != 3 || i0 >= shape_[0] || i1 >= shape_[1] ||
      i2 >= shape_[2])
    bad_index(shape_, 3);
  return data_[(i0 * shape_[1] + i1) * shape_[2] + i2];
}
double& Tensor::at(std::size_t i0, std::size_t i1, std::size_t i2,
                   std::size_t i3) {
  if (shape_.size() != 4 || i0 >= shape_[0] || i1 >= shape_[1] ||
      i2 >= shape_[2] || i3 >= shape_[3])
    bad_index(shape_, 4);
  return data_[((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3];
}
double Tensor::at(std::size_t i0) const {
  return const_cast<Tensor*>(this)->at(i0);
}
double Tensor::at(std::size_t i0, std::size_t i1) const {
  return const_cast<Tensor*>(this)->at(i0, i1);
}
double Tensor::at(std::size_t i0, std::size_t i1, std::size_t i2) const {
  return const_cast<Tensor*>(this)->at(i0, i1, i2);
}
double Tensor::at(std::size_t i0, std::size_t i1, std::size_t i2,
                  std::size_t i3) const {
  return const_cast<Tensor*>(this)->at(i0, i1, i2, i3);
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() requires a single-element tensor, got shape " +
                     shape_string(shape_));
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  s += "]";
  return s;
}

}  // namespace gks
