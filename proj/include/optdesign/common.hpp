#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace optdesign {

using Point = Eigen::VectorXd;
/// Row-per-point storage for designs, candidate lists and atoms.
using PointSet = Eigen::MatrixXd;
using Rng = std::mt19937_64;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// Cholesky-type factorization of an information matrix broke down.
class SingularMatrixError : public Error {
 public:
  SingularMatrixError(const std::string& what, double smallest_pivot)
      : Error(what), smallest_pivot_(smallest_pivot) {}
  double smallest_pivot() const { return smallest_pivot_; }

 private:
  double smallest_pivot_;
};

class SingularGramianError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class InstanceTooLarge : public Error {
 public:
  using Error::Error;
};

/// Internal invariant check; violations are programming errors, not input errors.
inline void ensure(bool condition, const char* message) {
  if (!condition) throw std::logic_error(message);
}

inline PointSet as_row(const Point& x) { return x.transpose(); }

/// Running sums of nonnegative weights, for repeated categorical draws.
std::vector<double> cumulative_weights(const Eigen::Ref<const Eigen::VectorXd>& weights);
/// Index i with probability weights[i] / total, by inversion of the cumulative sums.
int draw_categorical(const std::vector<double>& cumulative, Rng& rng);

}  // namespace optdesign
