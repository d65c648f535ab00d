#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace fact::nn {

// Dense row-major tensor, up to 5 axes: (batch, channels, [z,] y, x).
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s, double fill = 0.0) : shape(std::move(s)) {
    if (shape.empty() || shape.size() > 5)
      throw std::invalid_argument("Tensor: rank must be 1..5");
    for (int64_t d : shape)
      if (d < 1) throw std::invalid_argument("Tensor: dims must be >= 1");
    data.assign(static_cast<size_t>(numel_of(shape)), fill);
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // Spatial dims (everything after batch and channel axes).
  int spatial_rank() const { return rank() - 2; }
};

// Seeded Gaussian init, mean/std per the network initialization convention.
Tensor init_gaussian(const std::vector<int64_t>& shape, double mean, double stddev,
                     uint64_t seed);

}  // namespace fact::nn
