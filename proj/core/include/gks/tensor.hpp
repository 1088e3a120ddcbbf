// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace gks {

// Dense row-major tensor of doubles, rank 0..4. Rank-0 tensors hold one
// scalar. All model state, activations, and gradients use this type.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);
  Tensor(std::initializer_list<std::size_t> shape)
      : Tensor(std::vector<std::size_t>(shape)) {}

  static Tensor scalar(double v);
  static Tensor zeros_like(const Tensor& other);
  static Tensor full(std::vector<std::size_t> shape, double v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty() && shape_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i0);
  double& at(std::size_t i0, std::size_t i1);
  double& at(std::size_t i0, std::size_t i1, std::size_t i2);
  double& at(std::size_t i0, std::size_t i1, std::size_t i2, std::size_t i3);
  double at(std::size_t i0) const;
  double at(std::size_t i0, std::size_t i1) const;
  double at(std::size_t i0, std::size_t i1, std::size_t i2) const;
  double at(std::size_t i0, std::size_t i1, std::size_t i2,
            std::size_t i3) const;

  // Scalar access for rank-0 (or single-element) tensors.
  double item() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  // Total elements implied by a shape; validates rank <= 4.
  static std::size_t check_shape(const std::vector<std::size_t>& shape);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Human-readable shape such as "[2, 3, 4]" for diagnostics.
std::string shape_string(const std::vector<std::size_t>& shape);

}  // namespace gks
