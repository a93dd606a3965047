#pragma once

#include "optdesign/common.hpp"

namespace optdesign {

enum class Criterion { A, D, LogD };

/// LDL^T factorization of a symmetric matrix that must be positive definite.
class SpdFactor {
 public:
  explicit SpdFactor(const Eigen::MatrixXd& m);

  double log_det() const;
  Eigen::MatrixXd inverse() const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const { return ldlt_.solve(rhs); }
  double smallest_pivot() const { return ldlt_.vectorD().minCoeff(); }

 private:
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;
};

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

/// Tr(M^-1), det(M^-1) or -log det(M).
double criterion(const Eigen::MatrixXd& m, Criterion which);

/// Monotone log-scale objective used for comparing designs:
/// log Tr(M^-1) for A, -log det(M) for D and LogD.
double log_criterion(const Eigen::MatrixXd& m, Criterion which);

struct SymmetricRoots {
  Eigen::MatrixXd sqrt;
  Eigen::MatrixXd inv_sqrt;
  Eigen::VectorXd eigenvalues;
};

/// Symmetric square root and inverse square root; throws SingularGramianError
/// when the smallest eigenvalue is at most `relative_floor` times the largest.
SymmetricRoots symmetric_roots(const Eigen::MatrixXd& g, double relative_floor = 1e-10);

}  // namespace optdesign
