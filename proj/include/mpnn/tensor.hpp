#pragma once

#include <cstdint>
#include <vector>

#include "mpnn/common.hpp"

namespace mpnn {

// Dense double tensor. Feature maps and probability maps are stored
// channels-first ({C,H,W}); conv weights as {Cout,Cin,k,k}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    std::int64_t n = 1;
    for (int d : shape_) {
      MPNN_CHECK(d > 0, "tensor dimension must be positive, got ", d);
      n *= d;
    }
    data_.assign(static_cast<std::size_t>(n), 0.0);
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;

  // exact elementwise equality (bit-level for normal values)
  bool equals(const Tensor& o) const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace mpnn
