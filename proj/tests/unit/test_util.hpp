#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "xlrc/tensor.hpp"

namespace xlrc::testing {

inline Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double limit = 1.0,
                            bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = dist(rng);
  return Tensor::from({rows, cols}, std::move(v), requires_grad);
}

inline Tensor random_vector(std::size_t n, std::mt19937_64& rng, double limit = 1.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return Tensor::from({n}, std::move(v), requires_grad);
}

// Plain triple loop.
inline std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a.values()[i * k + t] * b.values()[t * n + j];
      out[i * n + j] = s;
    }
  return out;
}

// Central differences on every entry of every input; compares against backward().
inline void expect_gradients_match(const std::function<Tensor()>& loss_fn, std::vector<Tensor> inputs,
                                   double step = 1e-4, double tolerance = 1e-4, double floor = 1e-6) {
  for (Tensor& t : inputs) t.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (Tensor& t : inputs) {
    analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                       : std::vector<double>(t.numel(), 0.0));
  }
  NoGradGuard guard;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss_fn().item();
      values[i] = saved - step;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2 * step);
      const double a = analytic[k][i];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      if (scale <= floor) continue;
      EXPECT_LT(std::abs(a - numeric) / scale, tolerance)
          << "input " << k << " entry " << i << " analytic " << a << " numeric " << numeric;
    }
  }
  for (Tensor& t : inputs) t.zero_grad();
}

inline double row_sum(const Tensor& m, std::size_t row) {
  double s = 0.0;
  for (std::size_t j = 0; j < m.cols(); ++j) s += m.at(row, j);
  return s;
}

}  // namespace xlrc::testing
