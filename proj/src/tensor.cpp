#include "mpnn/tensor.hpp"

#include <cmath>
#include <cstring>

namespace mpnn {

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::equals(const Tensor& o) const {
  if (shape_ != o.shape_) return false;
  if (data_.empty()) return o.data_.empty();
  return std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(double)) == 0;
}

}  // namespace mpnn
