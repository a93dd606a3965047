#include "optdesign/linalg.hpp"

#include <cmath>
#include <sstream>

namespace optdesign {

SpdFactor::SpdFactor(const Eigen::MatrixXd& m) : ldlt_(symmetrize(m)) {
  const double pivot = ldlt_.vectorD().size() ? ldlt_.vectorD().minCoeff() : 0.0;
  const double scale = ldlt_.vectorD().size() ? ldlt_.vectorD().cwiseAbs().maxCoeff() : 0.0;
  // Pivots at round-off level relative to the largest one count as zero.
  if (ldlt_.info() != Eigen::Success || !(pivot > 1e-14 * scale) || !std::isfinite(pivot)) {
    std::ostringstream msg;
    msg << "singular information matrix (smallest pivot " << pivot << ")";
    throw SingularMatrixError(msg.str(), pivot);
  }
}

double SpdFactor::log_det() const { return ldlt_.vectorD().array().log().sum(); }

Eigen::MatrixXd SpdFactor::inverse() const {
  const auto n = ldlt_.rows();
  return symmetrize(ldlt_.solve(Eigen::MatrixXd::Identity(n, n)));
}

double criterion(const Eigen::MatrixXd& m, Criterion which) {
  SpdFactor f(m);
  switch (which) {
    case Criterion::A:
      return f.inverse().trace();
    case Criterion::D:
      return std::exp(-f.log_det());
    case Criterion::LogD:
      return -f.log_det();
  }
  return 0.0;
}

double log_criterion(const Eigen::MatrixXd& m, Criterion which) {
  SpdFactor f(m);
  if (which == Criterion::A) return std::log(f.inverse().trace());
  return -f.log_det();
}

SymmetricRoots symmetric_roots(const Eigen::MatrixXd& g, double relative_floor) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(g));
  if (es.info() != Eigen::Success) throw SingularGramianError("eigendecomposition failed");
  const Eigen::VectorXd ev = es.eigenvalues();
  const double largest = ev.cwiseAbs().maxCoeff();
  if (!(ev.minCoeff() > relative_floor * largest)) {
    std::ostringstream msg;
    msg << "singular Gramian: smallest eigenvalue " << ev.minCoeff() << " vs largest " << largest;
    throw SingularGramianError(msg.str());
  }
  const Eigen::MatrixXd& v = es.eigenvectors();
  SymmetricRoots out;
  out.eigenvalues = ev;
  out.sqrt = symmetrize(v * ev.cwiseSqrt().asDiagonal() * v.transpose());
  out.inv_sqrt = symmetrize(v * ev.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose());
  return out;
}

}  // namespace optdesign
