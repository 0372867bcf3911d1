#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "nlab/errors.hpp"

namespace nlab {

// Dense row-major tensor of doubles. Rank is dynamic; hot loops index the
// flat buffer directly.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> v;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> values)
      : shape(std::move(s)), v(std::move(values)) {
    if (numel_of(shape) != v.size())
      throw ConfigError("tensor shape does not match value count");
  }

  static Tensor zeros(std::vector<std::size_t> s) {
    const std::size_t n = numel_of(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  std::size_t numel() const { return v.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double& at2(std::size_t i, std::size_t j) { return v[i * shape[1] + j]; }
  double at2(std::size_t i, std::size_t j) const { return v[i * shape[1] + j]; }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

// Per-class probability vector; helpers live here because both the network
// and the training strategies deal in them.
using ProbVector = std::vector<double>;

inline bool is_prob_vector(const ProbVector& p, double tol = 1e-6) {
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) return false;
    sum += x;
  }
  return std::fabs(sum - 1.0) <= tol;
}

inline ProbVector one_hot(int cls, int num_classes) {
  ProbVector p(static_cast<std::size_t>(num_classes), 0.0);
  p[static_cast<std::size_t>(cls)] = 1.0;
  return p;
}

}  // namespace nlab
