#pragma once

#include <cmath>
#include <random>

#include "xlrc/tensor.hpp"

namespace xlrc::detail {

inline Tensor uniform_tensor(Shape shape, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

inline Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Weight for a fan_in → fan_out dense map, uniform(±1/sqrt(fan_in)).
inline Tensor dense_weight(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  return uniform_tensor({fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

inline Tensor zeros_param(std::size_t n) { return Tensor::zeros({n}, true); }
inline Tensor ones_param(std::size_t n) { return Tensor::full({n}, 1.0, true); }

}  // namespace xlrc::detail
